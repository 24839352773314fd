//! Raw-dataset adapters. Each adapter reads that dataset's native annotation
//! layout (documented below per adapter), remaps the native skeleton to the
//! canonical 16 joints in world space, thins frames by motion, applies the
//! dataset's world-to-camera convention, projects to 2D, filters invalid
//! samples, and emits an archive.
//!
//! Remapping happens before projection on purpose: synthesized joints
//! (midpoints) must be averaged in 3D, because the projection of a midpoint
//! is not the midpoint of projections.

use super::archive::{ArchiveError, DatasetArchive};
use super::{build_archive, filter_invalid, sample_frames, CanonicalSample, FilterReport, Split};
use crate::geometry::{
    project, world_to_cam_3dpw, world_to_cam_gpa, world_to_cam_h36m, CameraIntrinsics,
};
use crate::skeleton::{
    canonical_16, remap, remap_3dpw, remap_gpa, remap_h36m, remap_surreal, JointRemap, BONES_16,
};
use nalgebra::{Matrix3, Matrix4, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use thiserror::Error;

/// Mean canonical bone length window for the translation-unit sanity guard
/// (mm). Distinct from the per-bone validity window in `filter_invalid`.
pub const MEAN_BONE_MIN_MM: f64 = 50.0;
pub const MEAN_BONE_MAX_MM: f64 = 600.0;

/// Subjects whose data lands in the train split.
pub const H36M_TRAIN_SUBJECTS: [u32; 5] = [1, 5, 6, 7, 8];
/// Subjects whose data lands in the test split.
pub const H36M_TEST_SUBJECTS: [u32; 2] = [9, 11];

#[derive(Debug, Error)]
pub enum AdaptError {
    #[error("cannot load {path}: {reason}")]
    Load { path: PathBuf, reason: String },
    #[error("cannot parse {path}: {reason}")]
    Parse { path: PathBuf, reason: String },
    #[error("sample {id}: mean bone length {mean_mm:.1} mm outside [{MEAN_BONE_MIN_MM}, {MEAN_BONE_MAX_MM}] mm; check translation units")]
    BoneSanity { id: String, mean_mm: f64 },
    #[error("raw tree under {root} produced no samples")]
    NoSamples { root: PathBuf },
    #[error(transparent)]
    Archive(#[from] ArchiveError),
}

/// JSON cannot represent non-finite floats: exporters write them as null.
/// Joint coordinates map null back to NaN so corrupt frames are counted and
/// dropped by the validity filter instead of failing the whole parse.
/// Camera parameters stay strict; a null there is a malformed file.
mod nan_tolerant {
    use serde::{Deserialize, Deserializer};

    fn row(r: [Option<f64>; 3]) -> [f64; 3] {
        [
            r[0].unwrap_or(f64::NAN),
            r[1].unwrap_or(f64::NAN),
            r[2].unwrap_or(f64::NAN),
        ]
    }

    pub fn rows<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<[f64; 3]>, D::Error> {
        Ok(Vec::<[Option<f64>; 3]>::deserialize(d)?
            .into_iter()
            .map(row)
            .collect())
    }

    pub fn frames<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Vec<[f64; 3]>>, D::Error> {
        Ok(Vec::<Vec<[Option<f64>; 3]>>::deserialize(d)?
            .into_iter()
            .map(|f| f.into_iter().map(row).collect())
            .collect())
    }
}

/// Pinhole intrinsics as they appear in raw annotation files.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PinholeJson {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: f64,
    pub height: f64,
}

impl From<PinholeJson> for CameraIntrinsics {
    fn from(p: PinholeJson) -> Self {
        CameraIntrinsics {
            fx: p.fx,
            fy: p.fy,
            cx: p.cx,
            cy: p.cy,
            width: p.width,
            height: p.height,
        }
    }
}

// -------------------------------------------------------------------------
// h36m raw layout:
//   <root>/cameras.json
//     {"cameras": {"S1": {"cam0": {rotation: [[3x3]], center_mm: [3],
//                                  fx, fy, cx, cy, width, height}, ...}, ...}}
//   <root>/poses/S<n>/<action>.json
//     {"subject": "S1", "action": "...", "joints_world_mm": [T][38][3]}
// Convention: X_cam = R * (X_world - center).
// -------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
pub struct H36mCamerasFile {
    pub cameras: BTreeMap<String, BTreeMap<String, H36mCameraJson>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct H36mCameraJson {
    pub rotation: [[f64; 3]; 3],
    pub center_mm: [f64; 3],
    #[serde(flatten)]
    pub pinhole: PinholeJson,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct H36mPosesFile {
    pub subject: String,
    pub action: String,
    #[serde(deserialize_with = "nan_tolerant::frames")]
    pub joints_world_mm: Vec<Vec<[f64; 3]>>,
}

// -------------------------------------------------------------------------
// gpa raw layout: a single <root>/annotations.json
//   {"annotations": [{sequence, frame, split, joints_world_mm: [34][3],
//                     camera: {rvec: [3], t_cm: [3], fx..height}}, ...]}
// Convention: X_cam = R(rvec)^T * X_world + 10 * t_cm.
// -------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
pub struct GpaAnnotationsFile {
    pub annotations: Vec<GpaRecordJson>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GpaRecordJson {
    pub sequence: String,
    pub frame: usize,
    pub split: String,
    #[serde(deserialize_with = "nan_tolerant::rows")]
    pub joints_world_mm: Vec<[f64; 3]>,
    pub camera: GpaCameraJson,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GpaCameraJson {
    pub rvec: [f64; 3],
    pub t_cm: [f64; 3],
    #[serde(flatten)]
    pub pinhole: PinholeJson,
}

// -------------------------------------------------------------------------
// 3dpw raw layout: one file per sequence under <root>/sequences/
//   {"sequence", "split", "intrinsics": {fx..height},
//    "frames": [{"frame", "extrinsic": [4][4],
//                "subjects": [{"subject", "joints_world_mm": [24][3]}]}]}
// Convention: X_cam = (E * [X_world; 1]).xyz, applied per frame record.
// -------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
pub struct ThreeDpwSequenceFile {
    pub sequence: String,
    pub split: String,
    pub intrinsics: PinholeJson,
    pub frames: Vec<ThreeDpwFrameJson>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ThreeDpwFrameJson {
    pub frame: usize,
    pub extrinsic: [[f64; 4]; 4],
    pub subjects: Vec<ThreeDpwSubjectJson>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ThreeDpwSubjectJson {
    pub subject: String,
    #[serde(deserialize_with = "nan_tolerant::rows")]
    pub joints_world_mm: Vec<[f64; 3]>,
}

// -------------------------------------------------------------------------
// surreal raw layout: one file per rendered batch under <root>/batches/
//   {"batch", "split", "camera": {fx..height},
//    "frames": [{"frame", "joints_cam_mm": [24][3]}]}
// Joints are already camera-space; no extrinsic transform is applied.
// -------------------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
pub struct SurrealBatchFile {
    pub batch: String,
    pub split: String,
    pub camera: PinholeJson,
    pub frames: Vec<SurrealFrameJson>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SurrealFrameJson {
    pub frame: usize,
    #[serde(deserialize_with = "nan_tolerant::rows")]
    pub joints_cam_mm: Vec<[f64; 3]>,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, AdaptError> {
    let text = std::fs::read_to_string(path).map_err(|e| AdaptError::Load {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    serde_json::from_str(&text).map_err(|e| AdaptError::Parse {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

fn vecs(rows: &[[f64; 3]]) -> Vec<Vector3<f64>> {
    rows.iter()
        .map(|r| Vector3::new(r[0], r[1], r[2]))
        .collect()
}

/// All-NaN canonical pose standing in for frames whose source joints are
/// unusable; `filter_invalid` counts and drops it under "non-finite".
fn poison_pose() -> Vec<Vector3<f64>> {
    vec![Vector3::new(f64::NAN, f64::NAN, f64::NAN); 16]
}

/// Remap one source frame to canonical-16, tolerating bad rows: any
/// non-finite or wrong-cardinality frame becomes a poison pose instead of
/// aborting the whole adaptation.
fn canonicalize_frame(src: &[Vector3<f64>], table: &JointRemap) -> Vec<Vector3<f64>> {
    match remap(src, table, canonical_16()) {
        Ok(pose) => pose,
        Err(_) => poison_pose(),
    }
}

fn frame_is_finite(pose: &[Vector3<f64>]) -> bool {
    pose.iter().all(|p| p.iter().all(|c| c.is_finite()))
}

/// Motion-thin a sequence, keeping non-finite frames unconditionally so the
/// validity filter can count them. Thinning compares only finite frames.
fn thin_sequence(frames: &[Vec<Vector3<f64>>], threshold_mm: f64) -> Vec<usize> {
    let finite_idx: Vec<usize> = (0..frames.len())
        .filter(|&i| frame_is_finite(&frames[i]))
        .collect();
    let finite_frames: Vec<Vec<Vector3<f64>>> =
        finite_idx.iter().map(|&i| frames[i].clone()).collect();
    let kept_local = sample_frames(&finite_frames, threshold_mm);
    let mut kept: Vec<usize> = kept_local.iter().map(|&k| finite_idx[k]).collect();
    kept.extend((0..frames.len()).filter(|&i| !frame_is_finite(&frames[i])));
    kept.sort_unstable();
    kept
}

/// Projection for samples that may be behind the camera: those keep finite
/// placeholder keypoints and are dropped (and counted) by `filter_invalid`.
fn project_or_placeholder(
    joints_cam: &[Vector3<f64>],
    intr: &CameraIntrinsics,
) -> Vec<Vector2<f64>> {
    if frame_is_finite(joints_cam) {
        project(joints_cam, intr).unwrap_or_else(|_| vec![Vector2::zeros(); joints_cam.len()])
    } else {
        vec![Vector2::zeros(); joints_cam.len()]
    }
}

fn mean_bone_mm(joints: &[Vector3<f64>]) -> f64 {
    BONES_16
        .iter()
        .map(|&(a, b)| (joints[a] - joints[b]).norm())
        .sum::<f64>()
        / BONES_16.len() as f64
}

fn parse_split(s: &str, path: &Path) -> Result<Split, AdaptError> {
    match s {
        "train" => Ok(Split::Train),
        "test" => Ok(Split::Test),
        other => Err(AdaptError::Parse {
            path: path.to_path_buf(),
            reason: format!("unknown split {other:?} (expected \"train\" or \"test\")"),
        }),
    }
}

fn sorted_dir(path: &Path) -> Result<Vec<PathBuf>, AdaptError> {
    let mut entries: Vec<PathBuf> = std::fs::read_dir(path)
        .map_err(|e| AdaptError::Load {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .collect();
    entries.sort();
    Ok(entries)
}

fn finish(
    dataset: &str,
    root: &Path,
    samples: Vec<CanonicalSample>,
) -> Result<(DatasetArchive, FilterReport), AdaptError> {
    let (kept, report) = filter_invalid(samples);
    if report.dropped() > 0 {
        log::info!(
            "{dataset}: dropped {}/{} samples ({:.2}%): {} non-finite, {} behind camera, {} bone-length",
            report.dropped(),
            report.input_count,
            report.dropped_fraction() * 100.0,
            report.non_finite,
            report.behind_camera,
            report.bone_length
        );
    }
    if kept.is_empty() {
        return Err(AdaptError::NoSamples {
            root: root.to_path_buf(),
        });
    }
    Ok((build_archive(dataset, &kept)?, report))
}

/// Adapt an h36m raw tree. Subjects 1/5/6/7/8 go to train, 9/11 to test,
/// anything else is dropped. Each subject's cameras each produce a sample
/// stream from the same (motion-thinned) world sequence.
pub fn adapt_h36m(
    raw_root: &Path,
    threshold_mm: f64,
) -> Result<(DatasetArchive, FilterReport), AdaptError> {
    let cameras: H36mCamerasFile = read_json(&raw_root.join("cameras.json"))?;
    let poses_dir = raw_root.join("poses");
    let mut samples = Vec::new();
    for subject_dir in sorted_dir(&poses_dir)? {
        let subject_name = subject_dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        let number: u32 = match subject_name.strip_prefix('S').and_then(|n| n.parse().ok()) {
            Some(n) => n,
            None => continue,
        };
        let split = if H36M_TRAIN_SUBJECTS.contains(&number) {
            Split::Train
        } else if H36M_TEST_SUBJECTS.contains(&number) {
            Split::Test
        } else {
            continue; // subject outside the protocol is dropped entirely
        };
        let subject_cams = cameras
            .cameras
            .get(&subject_name)
            .ok_or_else(|| AdaptError::Load {
                path: raw_root.join("cameras.json"),
                reason: format!("no camera block for subject {subject_name}"),
            })?;
        for action_path in sorted_dir(&subject_dir)? {
            let poses: H36mPosesFile = read_json(&action_path)?;
            let world: Vec<Vec<Vector3<f64>>> = poses
                .joints_world_mm
                .iter()
                .map(|f| canonicalize_frame(&vecs(f), remap_h36m()))
                .collect();
            let kept = thin_sequence(&world, threshold_mm);
            for (cam_name, cam) in subject_cams {
                let r = Matrix3::from_fn(|i, j| cam.rotation[i][j]);
                let center = Vector3::from(cam.center_mm);
                let intr: CameraIntrinsics = cam.pinhole.into();
                for &k in &kept {
                    let joints_cam: Vec<Vector3<f64>> = world[k]
                        .iter()
                        .map(|x| world_to_cam_h36m(*x, &r, center))
                        .collect();
                    let keypoints_2d = project_or_placeholder(&joints_cam, &intr);
                    samples.push(CanonicalSample {
                        subject_id: subject_name.clone(),
                        action_id: poses.action.clone(),
                        sequence_id: cam_name.clone(),
                        frame_index: k,
                        split,
                        joints_3d_cam: joints_cam,
                        keypoints_2d,
                        camera: intr,
                    });
                }
            }
        }
    }
    finish("h36m", raw_root, samples)
}

/// Adapt a gpa raw tree (single annotations.json). The centimetre camera
/// translation is converted to mm by the transform; a mean-bone-length guard
/// aborts with a descriptive error if the result is implausible.
pub fn adapt_gpa(
    raw_root: &Path,
    threshold_mm: f64,
) -> Result<(DatasetArchive, FilterReport), AdaptError> {
    let path = raw_root.join("annotations.json");
    let file: GpaAnnotationsFile = read_json(&path)?;
    // group records by sequence, ordered by frame, for motion thinning
    let mut sequences: BTreeMap<String, Vec<&GpaRecordJson>> = BTreeMap::new();
    for rec in &file.annotations {
        sequences.entry(rec.sequence.clone()).or_default().push(rec);
    }
    let mut samples = Vec::new();
    for (sequence, mut records) in sequences {
        records.sort_by_key(|r| r.frame);
        let world: Vec<Vec<Vector3<f64>>> = records
            .iter()
            .map(|r| canonicalize_frame(&vecs(&r.joints_world_mm), remap_gpa()))
            .collect();
        for &k in &thin_sequence(&world, threshold_mm) {
            let rec = records[k];
            let split = parse_split(&rec.split, &path)?;
            let rvec = Vector3::from(rec.camera.rvec);
            let t_cm = Vector3::from(rec.camera.t_cm);
            let joints_cam: Vec<Vector3<f64>> = world[k]
                .iter()
                .map(|x| world_to_cam_gpa(*x, rvec, t_cm))
                .collect();
            let id = format!("{sequence}/{}", rec.frame);
            if frame_is_finite(&joints_cam) {
                let mean = mean_bone_mm(&joints_cam);
                if !(MEAN_BONE_MIN_MM..=MEAN_BONE_MAX_MM).contains(&mean) {
                    return Err(AdaptError::BoneSanity { id, mean_mm: mean });
                }
            }
            let intr: CameraIntrinsics = rec.camera.pinhole.into();
            let keypoints_2d = project_or_placeholder(&joints_cam, &intr);
            samples.push(CanonicalSample {
                subject_id: sequence.clone(),
                action_id: "-".into(),
                sequence_id: "cam".into(),
                frame_index: rec.frame,
                split,
                joints_3d_cam: joints_cam,
                keypoints_2d,
                camera: intr,
            });
        }
    }
    finish("gpa", raw_root, samples)
}

/// Adapt a 3dpw raw tree (one file per sequence). Every subject in a
/// sequence becomes an independent sample stream; each frame record's own
/// extrinsic is applied, so moving cameras are handled per frame.
pub fn adapt_3dpw(
    raw_root: &Path,
    threshold_mm: f64,
) -> Result<(DatasetArchive, FilterReport), AdaptError> {
    let mut samples = Vec::new();
    for seq_path in sorted_dir(&raw_root.join("sequences"))? {
        let file: ThreeDpwSequenceFile = read_json(&seq_path)?;
        let split = parse_split(&file.split, &seq_path)?;
        let intr: CameraIntrinsics = file.intrinsics.into();
        // collect per-subject streams: (frame index into file.frames, pose)
        type SubjectFrames = Vec<(usize, Vec<Vector3<f64>>)>;
        let mut streams: BTreeMap<String, SubjectFrames> = BTreeMap::new();
        for (fi, frame) in file.frames.iter().enumerate() {
            for subj in &frame.subjects {
                streams.entry(subj.subject.clone()).or_default().push((
                    fi,
                    canonicalize_frame(&vecs(&subj.joints_world_mm), remap_3dpw()),
                ));
            }
        }
        for (subject, stream) in streams {
            let world: Vec<Vec<Vector3<f64>>> = stream.iter().map(|(_, p)| p.clone()).collect();
            for &k in &thin_sequence(&world, threshold_mm) {
                let (fi, pose) = &stream[k];
                let frame = &file.frames[*fi];
                let e = Matrix4::from_fn(|i, j| frame.extrinsic[i][j]);
                let joints_cam: Vec<Vector3<f64>> =
                    pose.iter().map(|x| world_to_cam_3dpw(*x, &e)).collect();
                let keypoints_2d = project_or_placeholder(&joints_cam, &intr);
                samples.push(CanonicalSample {
                    subject_id: subject.clone(),
                    action_id: file.sequence.clone(),
                    sequence_id: "cam".into(),
                    frame_index: frame.frame,
                    split,
                    joints_3d_cam: joints_cam,
                    keypoints_2d,
                    camera: intr,
                });
            }
        }
    }
    finish("3dpw", raw_root, samples)
}

/// Adapt a surreal raw tree (one file per batch). Joints arrive already in
/// camera space, so adaptation is remap + thin + project + filter.
pub fn adapt_surreal(
    raw_root: &Path,
    threshold_mm: f64,
) -> Result<(DatasetArchive, FilterReport), AdaptError> {
    let mut samples = Vec::new();
    for batch_path in sorted_dir(&raw_root.join("batches"))? {
        let file: SurrealBatchFile = read_json(&batch_path)?;
        let split = parse_split(&file.split, &batch_path)?;
        let intr: CameraIntrinsics = file.camera.into();
        let cam_poses: Vec<Vec<Vector3<f64>>> = file
            .frames
            .iter()
            .map(|f| canonicalize_frame(&vecs(&f.joints_cam_mm), remap_surreal()))
            .collect();
        for &k in &thin_sequence(&cam_poses, threshold_mm) {
            let joints_cam = cam_poses[k].clone();
            let keypoints_2d = project_or_placeholder(&joints_cam, &intr);
            samples.push(CanonicalSample {
                subject_id: file.batch.clone(),
                action_id: "-".into(),
                sequence_id: "cam".into(),
                frame_index: file.frames[k].frame,
                split,
                joints_3d_cam: joints_cam,
                keypoints_2d,
                camera: intr,
            });
        }
    }
    finish("surreal", raw_root, samples)
}
