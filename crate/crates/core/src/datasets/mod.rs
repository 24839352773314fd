//! Dataset adapters, the cached archive container, motion-based frame
//! sampling, validity filtering, and the synthetic fixture generator.

pub mod adapt;
pub mod archive;
pub mod synth;

use crate::geometry::{subject_viewpoint, CameraIntrinsics, GeometryError, Viewpoint};
use crate::skeleton::BONES_16;
use archive::{
    tensor_from_cameras, tensor_from_points2, tensor_from_poses3, ArchiveError, DatasetArchive,
    Manifest, SplitRanges, FORMAT_VERSION, TENSOR_CAMERA, TENSOR_JOINTS_3D_CAM,
    TENSOR_KEYPOINTS_2D,
};
use nalgebra::{Vector2, Vector3};
use std::collections::BTreeMap;

/// Bone lengths outside this window mark a sample invalid (mm).
pub const BONE_MIN_MM: f64 = 10.0;
pub const BONE_MAX_MM: f64 = 1000.0;

/// Default motion threshold for frame thinning (mm).
pub const DEFAULT_SAMPLE_FRAMES_MM: f64 = 40.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Test,
}

/// One canonicalized sample: camera-space joints (uncentered, mm), their
/// exact projection, and the camera that produced them.
#[derive(Debug, Clone)]
pub struct CanonicalSample {
    pub subject_id: String,
    pub action_id: String,
    pub sequence_id: String,
    pub frame_index: usize,
    pub split: Split,
    pub joints_3d_cam: Vec<Vector3<f64>>,
    pub keypoints_2d: Vec<Vector2<f64>>,
    pub camera: CameraIntrinsics,
}

impl CanonicalSample {
    /// Stable archive identifier.
    pub fn id(&self) -> String {
        format!(
            "{}/{}/{}/{}",
            self.subject_id, self.action_id, self.sequence_id, self.frame_index
        )
    }

    /// Subject-relative camera direction. Joints are camera-space, so the
    /// camera sits at the origin.
    pub fn viewpoint(&self) -> Result<Viewpoint, GeometryError> {
        subject_viewpoint(&self.joints_3d_cam, Vector3::zeros())
    }
}

/// Keep frame k iff any joint moved more than `threshold_mm` since the last
/// kept frame; the first frame is always kept. Returns kept indices.
pub fn sample_frames(poses: &[Vec<Vector3<f64>>], threshold_mm: f64) -> Vec<usize> {
    assert!(threshold_mm >= 0.0, "threshold must be nonnegative");
    let mut kept = Vec::new();
    let mut last: Option<&Vec<Vector3<f64>>> = None;
    for (k, pose) in poses.iter().enumerate() {
        let moved = match last {
            None => true,
            Some(prev) => {
                let max_disp = pose
                    .iter()
                    .zip(prev)
                    .map(|(a, b)| (a - b).norm())
                    .fold(0.0f64, f64::max);
                max_disp > threshold_mm
            }
        };
        if moved {
            kept.push(k);
            last = Some(pose);
        }
    }
    kept
}

/// Why samples were dropped by [`filter_invalid`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FilterReport {
    pub input_count: usize,
    pub non_finite: usize,
    pub behind_camera: usize,
    pub bone_length: usize,
    pub kept: usize,
}

impl FilterReport {
    pub fn dropped(&self) -> usize {
        self.input_count - self.kept
    }

    pub fn dropped_fraction(&self) -> f64 {
        if self.input_count == 0 {
            0.0
        } else {
            self.dropped() as f64 / self.input_count as f64
        }
    }

    /// Fold another report in, e.g. when one ingest covers several trees.
    pub fn absorb(&mut self, other: &FilterReport) {
        self.input_count += other.input_count;
        self.non_finite += other.non_finite;
        self.behind_camera += other.behind_camera;
        self.bone_length += other.bone_length;
        self.kept += other.kept;
    }
}

fn sample_is_finite(s: &CanonicalSample) -> bool {
    s.joints_3d_cam
        .iter()
        .all(|p| p.iter().all(|c| c.is_finite()))
        && s.keypoints_2d
            .iter()
            .all(|p| p.iter().all(|c| c.is_finite()))
}

fn bones_in_range(joints: &[Vector3<f64>]) -> bool {
    BONES_16.iter().all(|&(a, b)| {
        let len = (joints[a] - joints[b]).norm();
        (BONE_MIN_MM..=BONE_MAX_MM).contains(&len)
    })
}

/// Drop samples with non-finite values, any joint behind the camera, or any
/// bone outside the plausible window. Never fails; the report says what went.
pub fn filter_invalid(samples: Vec<CanonicalSample>) -> (Vec<CanonicalSample>, FilterReport) {
    let mut report = FilterReport {
        input_count: samples.len(),
        ..FilterReport::default()
    };
    let kept: Vec<CanonicalSample> = samples
        .into_iter()
        .filter(|s| {
            if !sample_is_finite(s) {
                report.non_finite += 1;
                return false;
            }
            if s.joints_3d_cam.iter().any(|p| p.z <= 0.0) {
                report.behind_camera += 1;
                return false;
            }
            if s.joints_3d_cam.len() == 16 && !bones_in_range(&s.joints_3d_cam) {
                report.bone_length += 1;
                return false;
            }
            true
        })
        .collect();
    report.kept = kept.len();
    (kept, report)
}

/// Assemble canonical samples into an archive: train split first, then test,
/// original order preserved within each split.
pub fn build_archive(
    dataset: &str,
    samples: &[CanonicalSample],
) -> Result<DatasetArchive, ArchiveError> {
    let ordered: Vec<&CanonicalSample> = samples
        .iter()
        .filter(|s| s.split == Split::Train)
        .chain(samples.iter().filter(|s| s.split == Split::Test))
        .collect();
    let train_len = ordered.iter().filter(|s| s.split == Split::Train).count();
    let n = ordered.len();
    if n == 0 {
        return Err(ArchiveError::Corrupt(format!(
            "no samples to archive for {dataset}"
        )));
    }
    for s in &ordered {
        if !sample_is_finite(s) {
            return Err(ArchiveError::Corrupt(format!(
                "sample {} has non-finite coordinates; run filter_invalid first",
                s.id()
            )));
        }
        if s.joints_3d_cam.iter().any(|p| p.z <= 0.0) {
            return Err(ArchiveError::Corrupt(format!(
                "sample {} has joints behind the camera; run filter_invalid first",
                s.id()
            )));
        }
    }

    let poses: Vec<Vec<Vector3<f64>>> = ordered.iter().map(|s| s.joints_3d_cam.clone()).collect();
    let kps: Vec<Vec<Vector2<f64>>> = ordered.iter().map(|s| s.keypoints_2d.clone()).collect();
    let cams: Vec<CameraIntrinsics> = ordered.iter().map(|s| s.camera).collect();
    let joints = poses[0].len();
    let joint_set = match joints {
        16 => "canonical16",
        14 => "canonical14",
        other => {
            return Err(ArchiveError::Corrupt(format!(
                "unsupported joint count {other}"
            )))
        }
    };

    let mut tensors = BTreeMap::new();
    tensors.insert(TENSOR_JOINTS_3D_CAM.to_string(), tensor_from_poses3(&poses));
    tensors.insert(TENSOR_KEYPOINTS_2D.to_string(), tensor_from_points2(&kps));
    tensors.insert(TENSOR_CAMERA.to_string(), tensor_from_cameras(&cams));
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        dataset: dataset.to_string(),
        joint_set: joint_set.to_string(),
        units: "mm".to_string(),
        sample_count: n,
        sample_ids: ordered.iter().map(|s| s.id()).collect(),
        split_ranges: SplitRanges {
            train: [0, train_len],
            test: [train_len, n],
        },
        stats: None,
        tensors: tensors
            .iter()
            .map(|(k, t): (&String, &archive::Tensor)| (k.clone(), t.shape.clone()))
            .collect(),
    };
    Ok(DatasetArchive { manifest, tensors })
}
