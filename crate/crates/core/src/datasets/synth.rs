//! Synthetic data generation: archive-level sample generation with exactly
//! known viewpoints, and raw-layout fixture trees that exercise every
//! adapter without touching licensed data.
//!
//! Poses come from a fixed rest skeleton with per-subject scale: torso
//! joints are rigid (so the subject's body frame is exact), limb bones get
//! random length-preserving rotations. Cameras are placed on the viewpoint
//! sphere in the subject's own frame, which makes the configured
//! elevation/azimuth recoverable from the emitted samples to numerical
//! precision.

use super::adapt::{
    GpaAnnotationsFile, GpaCameraJson, GpaRecordJson, H36mCameraJson, H36mCamerasFile,
    H36mPosesFile, PinholeJson, SurrealBatchFile, SurrealFrameJson, ThreeDpwFrameJson,
    ThreeDpwSequenceFile, ThreeDpwSubjectJson,
};
use super::archive::{ArchiveError, DatasetArchive};
use super::{build_archive, CanonicalSample, Split};
use crate::geometry::{
    look_at_rotation, project, rotation_to_rvec, CameraIntrinsics, GeometryError,
};
use crate::skeleton::BONES_16;
use nalgebra::{Matrix3, Matrix4, Vector3};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("infeasible synthesis spec: {0}")]
    Infeasible(String),
    #[error(transparent)]
    Archive(#[from] ArchiveError),
    #[error("generated geometry is degenerate: {0}")]
    Geometry(#[from] GeometryError),
}

/// Canonical-16 rest skeleton in the subject frame (mm): x is the subject's
/// left, y up, z facing. Hip at the origin; left/right hips symmetric, so
/// their midpoint is exactly the hip.
pub fn rest_pose(scale: f64) -> Vec<Vector3<f64>> {
    [
        [0.0, 0.0, 0.0],       // hip
        [-130.0, 0.0, 0.0],    // right_hip
        [-130.0, -440.0, 0.0], // right_knee
        [-130.0, -875.0, 0.0], // right_ankle
        [130.0, 0.0, 0.0],     // left_hip
        [130.0, -440.0, 0.0],  // left_knee
        [130.0, -875.0, 0.0],  // left_ankle
        [0.0, 230.0, 0.0],     // spine
        [0.0, 480.0, 0.0],     // neck
        [0.0, 660.0, 0.0],     // head
        [180.0, 455.0, 0.0],   // left_shoulder
        [180.0, 175.0, 0.0],   // left_elbow
        [180.0, -75.0, 0.0],   // left_wrist
        [-180.0, 455.0, 0.0],  // right_shoulder
        [-180.0, 175.0, 0.0],  // right_elbow
        [-180.0, -75.0, 0.0],  // right_wrist
    ]
    .iter()
    .map(|p| Vector3::new(p[0], p[1], p[2]) * scale)
    .collect()
}

/// Scalar sampling distribution for rig parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Dist {
    Fixed { value: f64 },
    Gaussian { mean: f64, std: f64 },
    Uniform { lo: f64, hi: f64 },
}

impl Dist {
    fn sample(&self, rng: &mut impl Rng) -> f64 {
        match *self {
            Dist::Fixed { value } => value,
            Dist::Gaussian { mean, std } => {
                let z: f64 = rng.sample(StandardNormal);
                mean + std * z
            }
            Dist::Uniform { lo, hi } => {
                if lo == hi {
                    lo
                } else {
                    rng.gen_range(lo..hi)
                }
            }
        }
    }

    fn validate(&self, what: &str) -> Result<(), SynthError> {
        match *self {
            Dist::Fixed { value } if value.is_finite() => Ok(()),
            Dist::Gaussian { mean, std } if mean.is_finite() && std >= 0.0 => Ok(()),
            Dist::Uniform { lo, hi } if lo <= hi && lo.is_finite() && hi.is_finite() => Ok(()),
            _ => Err(SynthError::Infeasible(format!(
                "bad {what} distribution: {self:?}"
            ))),
        }
    }
}

/// Camera rig: where cameras sit on the viewpoint sphere and what optics
/// they carry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RigSpec {
    pub distance_m: Dist,
    pub elevation_deg: Dist,
    pub azimuth_deg: Dist,
    pub focal_px: Dist,
    pub width: f64,
    pub height: f64,
}

fn default_subjects() -> usize {
    5
}

fn default_wobble() -> f64 {
    25.0
}

fn default_scale() -> [f64; 2] {
    [0.9, 1.1]
}

/// Full description of a synthetic scene. Serializable so it can live in a
/// YAML file next to the data it generated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub name: String,
    pub seed: u64,
    pub train_count: usize,
    pub test_count: usize,
    #[serde(default = "default_subjects")]
    pub subjects: usize,
    /// Max per-bone deflection from the rest pose, degrees, in [0, 60].
    #[serde(default = "default_wobble")]
    pub pose_wobble_deg: f64,
    #[serde(default = "default_scale")]
    pub subject_scale: [f64; 2],
    pub rig: RigSpec,
}

impl SynthSpec {
    /// Rig presets mirroring the four supported capture setups
    /// (distance / focal / image size).
    pub fn preset(dataset: &str, train_count: usize, test_count: usize, seed: u64) -> Option<Self> {
        let rig = match dataset {
            "h36m" => RigSpec {
                distance_m: Dist::Gaussian {
                    mean: 5.2,
                    std: 0.8,
                },
                elevation_deg: Dist::Gaussian {
                    mean: 10.0,
                    std: 5.0,
                },
                azimuth_deg: Dist::Uniform {
                    lo: -180.0,
                    hi: 180.0,
                },
                focal_px: Dist::Gaussian {
                    mean: 1146.8,
                    std: 2.0,
                },
                width: 1000.0,
                height: 1002.0,
            },
            "gpa" => RigSpec {
                distance_m: Dist::Gaussian {
                    mean: 5.1,
                    std: 1.2,
                },
                elevation_deg: Dist::Uniform { lo: -5.0, hi: 45.0 },
                azimuth_deg: Dist::Uniform {
                    lo: -180.0,
                    hi: 180.0,
                },
                focal_px: Dist::Gaussian {
                    mean: 1172.4,
                    std: 121.3,
                },
                width: 1920.0,
                height: 1080.0,
            },
            "3dpw" => RigSpec {
                distance_m: Dist::Gaussian {
                    mean: 3.5,
                    std: 0.7,
                },
                elevation_deg: Dist::Gaussian {
                    mean: 5.0,
                    std: 10.0,
                },
                azimuth_deg: Dist::Uniform {
                    lo: -180.0,
                    hi: 180.0,
                },
                focal_px: Dist::Gaussian {
                    mean: 1962.2,
                    std: 1.5,
                },
                width: 1920.0,
                height: 1080.0,
            },
            "surreal" => RigSpec {
                distance_m: Dist::Gaussian {
                    mean: 8.0,
                    std: 1.0,
                },
                elevation_deg: Dist::Uniform {
                    lo: -45.0,
                    hi: 45.0,
                },
                azimuth_deg: Dist::Uniform {
                    lo: -180.0,
                    hi: 180.0,
                },
                focal_px: Dist::Fixed { value: 600.0 },
                width: 320.0,
                height: 240.0,
            },
            _ => return None,
        };
        Some(SynthSpec {
            name: format!("synth-{dataset}"),
            seed,
            train_count,
            test_count,
            subjects: default_subjects(),
            pose_wobble_deg: default_wobble(),
            subject_scale: default_scale(),
            rig,
        })
    }

    fn validate(&self) -> Result<(), SynthError> {
        if self.train_count + self.test_count == 0 {
            return Err(SynthError::Infeasible("zero samples requested".into()));
        }
        if self.subjects == 0 {
            return Err(SynthError::Infeasible("need at least one subject".into()));
        }
        if !(0.0..=60.0).contains(&self.pose_wobble_deg) {
            return Err(SynthError::Infeasible(format!(
                "pose_wobble_deg {} outside [0, 60]",
                self.pose_wobble_deg
            )));
        }
        let [lo, hi] = self.subject_scale;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return Err(SynthError::Infeasible(format!(
                "subject_scale {:?} must satisfy 0 < lo <= hi",
                self.subject_scale
            )));
        }
        if !(self.rig.width > 0.0 && self.rig.height > 0.0) {
            return Err(SynthError::Infeasible("image dims must be positive".into()));
        }
        self.rig.distance_m.validate("distance_m")?;
        self.rig.elevation_deg.validate("elevation_deg")?;
        self.rig.azimuth_deg.validate("azimuth_deg")?;
        self.rig.focal_px.validate("focal_px")?;
        Ok(())
    }
}

fn random_unit(rng: &mut impl Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::new(
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
        );
        let n = v.norm();
        if n > 1e-6 {
            return v / n;
        }
    }
}

/// Bones whose child joint stays rigid in the subject frame (hips, spine,
/// neck): wobbling these would move the body frame itself.
const RIGID_CHILDREN: [usize; 4] = [1, 4, 7, 8];

/// Random pose: rest skeleton with each non-torso bone rotated by up to
/// `wobble_rad`, preserving bone lengths exactly.
fn gen_pose(rng: &mut impl Rng, rest: &[Vector3<f64>], wobble_rad: f64) -> Vec<Vector3<f64>> {
    let mut pose = vec![Vector3::zeros(); 16];
    pose[0] = rest[0];
    for &(parent, child) in &BONES_16 {
        let bone = rest[child] - rest[parent];
        pose[child] = if RIGID_CHILDREN.contains(&child) || wobble_rad == 0.0 {
            pose[parent] + bone
        } else {
            let angle = rng.gen_range(0.0..=wobble_rad);
            let rot = crate::geometry::rodrigues(random_unit(rng) * angle);
            pose[parent] + rot * bone
        };
    }
    pose
}

/// World-frame ground truth for one generated sample, with the same physical
/// camera expressed in all three extrinsic conventions.
#[derive(Debug, Clone)]
pub struct WorldSample {
    pub joints_world: Vec<Vector3<f64>>,
    /// Rotation + camera-centre parameters: X_cam = R (X - center).
    pub h36m_rotation: Matrix3<f64>,
    pub h36m_center_mm: Vector3<f64>,
    /// Rodrigues + centimetre translation: X_cam = R(rvec)^T X + 10 t.
    pub gpa_rvec: Vector3<f64>,
    pub gpa_t_cm: Vector3<f64>,
    /// Homogeneous extrinsic: X_cam = (E [X; 1]).xyz.
    pub extrinsic: Matrix4<f64>,
    /// Rig parameters this sample was drawn with (degrees / mm).
    pub elevation_deg: f64,
    pub azimuth_deg: f64,
    pub distance_mm: f64,
}

/// Everything `synth_generate` produces: the archive plus full-precision
/// per-sample ground truth for oracle checks.
pub struct SynthOutput {
    pub archive: DatasetArchive,
    pub samples: Vec<CanonicalSample>,
    pub world: Vec<WorldSample>,
}

/// Generate a deterministic synthetic archive. Same spec (including seed)
/// produces byte-identical archives.
pub fn synth_generate(spec: &SynthSpec) -> Result<SynthOutput, SynthError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let scales: Vec<f64> = (0..spec.subjects)
        .map(|_| {
            let [lo, hi] = spec.subject_scale;
            if lo == hi {
                lo
            } else {
                rng.gen_range(lo..hi)
            }
        })
        .collect();
    let rests: Vec<Vec<Vector3<f64>>> = scales.iter().map(|&s| rest_pose(s)).collect();
    let wobble_rad = spec.pose_wobble_deg.to_radians();

    let total = spec.train_count + spec.test_count;
    let mut samples = Vec::with_capacity(total);
    let mut world = Vec::with_capacity(total);
    for i in 0..total {
        let split = if i < spec.train_count {
            Split::Train
        } else {
            Split::Test
        };
        let subject = i % spec.subjects;
        let pose_world = gen_pose(&mut rng, &rests[subject], wobble_rad);

        let distance_mm = (spec.rig.distance_m.sample(&mut rng) * 1000.0).max(2000.0);
        let elevation_deg = spec.rig.elevation_deg.sample(&mut rng);
        let azimuth_deg = spec.rig.azimuth_deg.sample(&mut rng);
        let (e, a) = (elevation_deg.to_radians(), azimuth_deg.to_radians());
        // subject frame == world frame: r = +x, u = +y, f = +z
        let center = Vector3::new(e.cos() * a.sin(), e.sin(), e.cos() * a.cos()) * distance_mm;
        let r_wc = look_at_rotation(center, Vector3::zeros(), Vector3::y(), Vector3::z())?;
        let focal = spec.rig.focal_px.sample(&mut rng).max(10.0);
        let camera = CameraIntrinsics {
            fx: focal,
            fy: focal,
            cx: spec.rig.width / 2.0,
            cy: spec.rig.height / 2.0,
            width: spec.rig.width,
            height: spec.rig.height,
        };

        let joints_3d_cam: Vec<Vector3<f64>> =
            pose_world.iter().map(|x| r_wc * (x - center)).collect();
        let keypoints_2d = project(&joints_3d_cam, &camera)?;

        let mut extrinsic = Matrix4::identity();
        extrinsic.fixed_view_mut::<3, 3>(0, 0).copy_from(&r_wc);
        extrinsic
            .fixed_view_mut::<3, 1>(0, 3)
            .copy_from(&(-(r_wc * center)));

        samples.push(CanonicalSample {
            subject_id: format!("synth{subject}"),
            action_id: "gen".into(),
            sequence_id: "rig".into(),
            frame_index: i,
            split,
            joints_3d_cam,
            keypoints_2d,
            camera,
        });
        world.push(WorldSample {
            joints_world: pose_world,
            h36m_rotation: r_wc,
            h36m_center_mm: center,
            gpa_rvec: rotation_to_rvec(&r_wc.transpose()),
            gpa_t_cm: -(r_wc * center) / 10.0,
            extrinsic,
            elevation_deg,
            azimuth_deg,
            distance_mm,
        });
    }
    let archive = build_archive(&spec.name, &samples)?;
    Ok(SynthOutput {
        archive,
        samples,
        world,
    })
}

// -------------------------------------------------------------------------
// Raw fixture trees for the adapters.
// -------------------------------------------------------------------------

/// How subjects move across a fixture sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MotionPattern {
    /// New pose and a ~65 mm hip drift every frame: thinning keeps all.
    Walk,
    /// One pose repeated: thinning keeps only the first frame.
    Freeze,
}

/// Scatter a canonical-16 pose into the 38-joint h36m source layout.
/// Mapped rows carry the canonical joints; extras get plausible offsets and
/// are dropped by the remap.
pub fn scatter_h36m(c: &[Vector3<f64>]) -> Vec<Vector3<f64>> {
    let v = Vector3::new;
    let mut s = vec![Vector3::zeros(); 38];
    let direct = [
        (0, 0),
        (1, 1),
        (2, 2),
        (3, 3),
        (6, 4),
        (7, 5),
        (8, 6),
        (11, 7),
        (13, 8),
        (14, 9),
        (17, 10),
        (18, 11),
        (19, 12),
        (24, 13),
        (25, 14),
        (26, 15),
    ];
    for (si, ci) in direct {
        s[si] = c[ci];
    }
    s[4] = c[3] + v(0.0, -60.0, 130.0);
    s[5] = s[4] + v(0.0, -15.0, 80.0);
    s[9] = c[6] + v(0.0, -60.0, 130.0);
    s[10] = s[9] + v(0.0, -15.0, 80.0);
    s[12] = (c[7] + c[8]) * 0.5;
    s[15] = c[9] + v(0.0, 120.0, 0.0);
    s[16] = (c[8] + c[10]) * 0.5;
    s[20] = c[12] + v(20.0, -40.0, 30.0);
    s[21] = c[12] + v(10.0, -70.0, 10.0);
    s[22] = s[21] + v(5.0, -60.0, 5.0);
    s[23] = (c[8] + c[13]) * 0.5;
    s[27] = c[15] + v(-20.0, -40.0, 30.0);
    s[28] = c[15] + v(-10.0, -70.0, 10.0);
    s[29] = s[28] + v(-5.0, -60.0, 5.0);
    s[30] = c[9] + v(0.0, 20.0, 70.0);
    s[31] = c[9] + v(35.0, 35.0, 55.0);
    s[32] = c[9] + v(-35.0, 35.0, 55.0);
    s[33] = c[9] + v(75.0, 10.0, 0.0);
    s[34] = c[9] + v(-75.0, 10.0, 0.0);
    s[35] = c[6] + v(0.0, -70.0, -40.0);
    s[36] = c[3] + v(0.0, -70.0, -40.0);
    s[37] = (c[0] + c[7]) * 0.5;
    s
}

/// Scatter a canonical-16 pose into the 34-joint gpa source layout.
pub fn scatter_gpa(c: &[Vector3<f64>]) -> Vec<Vector3<f64>> {
    let v = Vector3::new;
    let mut s = vec![Vector3::zeros(); 34];
    let direct = [
        (0, 0),
        (22, 1),
        (23, 2),
        (24, 3),
        (17, 4),
        (18, 5),
        (19, 6),
        (2, 7),
        (4, 8),
        (5, 9),
        (8, 10),
        (9, 11),
        (10, 12),
        (13, 13),
        (14, 14),
        (15, 15),
    ];
    for (si, ci) in direct {
        s[si] = c[ci];
    }
    s[1] = (c[0] + c[7]) * 0.5;
    s[3] = (c[7] + c[8]) * 0.5;
    s[6] = c[9] + v(0.0, 110.0, 0.0);
    s[7] = (c[8] + c[10]) * 0.5;
    s[12] = (c[8] + c[13]) * 0.5;
    s[11] = c[12] + v(10.0, -70.0, 10.0);
    s[16] = c[15] + v(-10.0, -70.0, 10.0);
    s[20] = c[6] + v(0.0, -60.0, 130.0);
    s[21] = s[20] + v(0.0, -15.0, 80.0);
    s[25] = c[3] + v(0.0, -60.0, 130.0);
    s[26] = s[25] + v(0.0, -15.0, 80.0);
    s[27] = c[12] + v(20.0, -40.0, 30.0);
    s[28] = c[15] + v(-20.0, -40.0, 30.0);
    s[29] = c[12] + v(5.0, -130.0, 15.0);
    s[30] = c[15] + v(-5.0, -130.0, 15.0);
    s[31] = c[9] + v(0.0, 20.0, 70.0);
    s[32] = c[9] + v(35.0, 35.0, 55.0);
    s[33] = c[9] + v(-35.0, 35.0, 55.0);
    s
}

/// Scatter a canonical-16 pose into the 24-joint SMPL layout (3dpw and
/// surreal). The canonical hip is recovered as the midpoint of the two SMPL
/// hips, which holds exactly because the rest pose keeps hips symmetric.
pub fn scatter_smpl(c: &[Vector3<f64>]) -> Vec<Vector3<f64>> {
    let v = Vector3::new;
    let mut s = vec![Vector3::zeros(); 24];
    s[0] = c[0];
    s[1] = c[4];
    s[2] = c[1];
    s[3] = (c[0] + c[7]) * 0.5;
    s[4] = c[5];
    s[5] = c[2];
    s[6] = c[7];
    s[7] = c[6];
    s[8] = c[3];
    s[9] = (c[7] + c[8]) * 0.5;
    s[10] = c[6] + v(0.0, -70.0, 130.0);
    s[11] = c[3] + v(0.0, -70.0, 130.0);
    s[12] = c[8];
    s[13] = (c[8] + c[10]) * 0.5;
    s[14] = (c[8] + c[13]) * 0.5;
    s[15] = c[9];
    s[16] = c[10];
    s[17] = c[13];
    s[18] = c[11];
    s[19] = c[14];
    s[20] = c[12];
    s[21] = c[15];
    s[22] = c[12] + v(10.0, -70.0, 10.0);
    s[23] = c[15] + v(-10.0, -70.0, 10.0);
    s
}

const WALK_STEP_MM: Vector3<f64> = Vector3::new(60.0, 0.0, 25.0);

/// World-frame canonical poses for one fixture sequence.
fn fixture_track(
    rng: &mut impl Rng,
    frames: usize,
    scale: f64,
    start: Vector3<f64>,
    pattern: MotionPattern,
) -> Vec<Vec<Vector3<f64>>> {
    let rest = rest_pose(scale);
    let wobble = 20f64.to_radians();
    let frozen = gen_pose(rng, &rest, wobble);
    (0..frames)
        .map(|t| match pattern {
            MotionPattern::Freeze => frozen.iter().map(|p| p + start).collect(),
            MotionPattern::Walk => {
                let hip = start + WALK_STEP_MM * t as f64;
                gen_pose(rng, &rest, wobble)
                    .iter()
                    .map(|p| p + hip)
                    .collect()
            }
        })
        .collect()
}

struct FixtureCamera {
    center: Vector3<f64>,
    r_wc: Matrix3<f64>,
    pinhole: PinholeJson,
}

fn sample_fixture_camera(rng: &mut impl Rng, target: Vector3<f64>) -> FixtureCamera {
    let d = rng.gen_range(3500.0..6000.0);
    let elev = rng.gen_range(5f64..30.0).to_radians();
    let az = rng.gen_range(-180f64..180.0).to_radians();
    let center =
        target + Vector3::new(elev.cos() * az.sin(), elev.sin(), elev.cos() * az.cos()) * d;
    let r_wc = look_at_rotation(center, target, Vector3::y(), Vector3::z())
        .expect("fixture camera placement is non-degenerate");
    FixtureCamera {
        center,
        r_wc,
        pinhole: PinholeJson {
            fx: 1146.8,
            fy: 1146.8,
            cx: 500.0,
            cy: 501.0,
            width: 1000.0,
            height: 1002.0,
        },
    }
}

fn write_json_file<T: Serialize>(path: &Path, value: &T) -> std::io::Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(
        serde_json::to_string_pretty(value)
            .expect("fixture serialize")
            .as_bytes(),
    )
}

fn rows3(pose: &[Vector3<f64>]) -> Vec<[f64; 3]> {
    pose.iter().map(|p| [p.x, p.y, p.z]).collect()
}

/// Write an h36m raw tree: `(subject number, frames)` pairs, each subject
/// observed by `cameras` cameras across one "Walking" action.
pub fn write_h36m_fixture(
    root: &Path,
    seed: u64,
    subjects: &[(u32, usize)],
    cameras: usize,
    pattern: MotionPattern,
) -> std::io::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut camera_map = std::collections::BTreeMap::new();
    for &(number, frames) in subjects {
        let scale = rng.gen_range(0.9..1.1);
        let mid = WALK_STEP_MM * (frames as f64 / 2.0);
        let mut cams = std::collections::BTreeMap::new();
        for k in 0..cameras {
            let cam = sample_fixture_camera(&mut rng, mid);
            cams.insert(
                format!("cam{k}"),
                H36mCameraJson {
                    rotation: [
                        [cam.r_wc[(0, 0)], cam.r_wc[(0, 1)], cam.r_wc[(0, 2)]],
                        [cam.r_wc[(1, 0)], cam.r_wc[(1, 1)], cam.r_wc[(1, 2)]],
                        [cam.r_wc[(2, 0)], cam.r_wc[(2, 1)], cam.r_wc[(2, 2)]],
                    ],
                    center_mm: [cam.center.x, cam.center.y, cam.center.z],
                    pinhole: cam.pinhole,
                },
            );
        }
        camera_map.insert(format!("S{number}"), cams);

        let track = fixture_track(&mut rng, frames, scale, Vector3::zeros(), pattern);
        let poses = H36mPosesFile {
            subject: format!("S{number}"),
            action: "Walking".into(),
            joints_world_mm: track.iter().map(|c16| rows3(&scatter_h36m(c16))).collect(),
        };
        write_json_file(&root.join(format!("poses/S{number}/Walking.json")), &poses)?;
    }
    write_json_file(
        &root.join("cameras.json"),
        &H36mCamerasFile {
            cameras: camera_map,
        },
    )
}

/// Write a gpa raw tree: `(sequence, split, frames)` triples in one
/// annotations.json, each sequence with its own camera.
pub fn write_gpa_fixture(
    root: &Path,
    seed: u64,
    sequences: &[(&str, &str, usize)],
    pattern: MotionPattern,
) -> std::io::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut annotations = Vec::new();
    for &(sequence, split, frames) in sequences {
        let scale = rng.gen_range(0.9..1.1);
        let mid = WALK_STEP_MM * (frames as f64 / 2.0);
        let cam = sample_fixture_camera(&mut rng, mid);
        // gpa convention stores the transpose as a Rodrigues vector and a
        // centimetre offset
        let rvec = rotation_to_rvec(&cam.r_wc.transpose());
        let t_cm = -(cam.r_wc * cam.center) / 10.0;
        let track = fixture_track(&mut rng, frames, scale, Vector3::zeros(), pattern);
        for (t, c16) in track.iter().enumerate() {
            annotations.push(GpaRecordJson {
                sequence: sequence.to_string(),
                frame: t,
                split: split.to_string(),
                joints_world_mm: rows3(&scatter_gpa(c16)),
                camera: GpaCameraJson {
                    rvec: [rvec.x, rvec.y, rvec.z],
                    t_cm: [t_cm.x, t_cm.y, t_cm.z],
                    pinhole: cam.pinhole,
                },
            });
        }
    }
    write_json_file(
        &root.join("annotations.json"),
        &GpaAnnotationsFile { annotations },
    )
}

/// Write a 3dpw raw tree: `(sequence, split, subject count, frames)` tuples,
/// one file per sequence, camera translating a little every frame so the
/// per-frame extrinsic matters.
pub fn write_3dpw_fixture(
    root: &Path,
    seed: u64,
    sequences: &[(&str, &str, usize, usize)],
    pattern: MotionPattern,
) -> std::io::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for &(sequence, split, n_subjects, frames) in sequences {
        let mid = WALK_STEP_MM * (frames as f64 / 2.0);
        let cam0 = sample_fixture_camera(&mut rng, mid);
        let tracks: Vec<Vec<Vec<Vector3<f64>>>> = (0..n_subjects)
            .map(|j| {
                let scale = rng.gen_range(0.9..1.1);
                let start =
                    Vector3::new(j as f64 * 900.0 - 450.0 * (n_subjects - 1) as f64, 0.0, 0.0);
                fixture_track(&mut rng, frames, scale, start, pattern)
            })
            .collect();
        let mut frame_records = Vec::with_capacity(frames);
        // t is simultaneously the frame id, the camera-path parameter, and
        // the index into every subject track; a range loop reads clearest
        #[allow(clippy::needless_range_loop)]
        for t in 0..frames {
            let center = cam0.center + Vector3::new(8.0, 0.0, 0.0) * t as f64;
            let r_wc = look_at_rotation(center, mid, Vector3::y(), Vector3::z())
                .expect("fixture camera path is non-degenerate");
            let tr = -(r_wc * center);
            let extrinsic = [
                [r_wc[(0, 0)], r_wc[(0, 1)], r_wc[(0, 2)], tr.x],
                [r_wc[(1, 0)], r_wc[(1, 1)], r_wc[(1, 2)], tr.y],
                [r_wc[(2, 0)], r_wc[(2, 1)], r_wc[(2, 2)], tr.z],
                [0.0, 0.0, 0.0, 1.0],
            ];
            frame_records.push(ThreeDpwFrameJson {
                frame: t,
                extrinsic,
                subjects: (0..n_subjects)
                    .map(|j| ThreeDpwSubjectJson {
                        subject: format!("p{j}"),
                        joints_world_mm: rows3(&scatter_smpl(&tracks[j][t])),
                    })
                    .collect(),
            });
        }
        let file = ThreeDpwSequenceFile {
            sequence: sequence.to_string(),
            split: split.to_string(),
            intrinsics: cam0.pinhole,
            frames: frame_records,
        };
        write_json_file(&root.join(format!("sequences/{sequence}.json")), &file)?;
    }
    Ok(())
}

/// Write a surreal raw tree: `(batch, split, frames, corrupted)` tuples, one
/// file per batch, joints already camera-space. Corrupted batches carry NaN
/// joints in every frame.
pub fn write_surreal_fixture(
    root: &Path,
    seed: u64,
    batches: &[(&str, &str, usize, bool)],
    pattern: MotionPattern,
) -> std::io::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for &(batch, split, frames, corrupted) in batches {
        let scale = rng.gen_range(0.9..1.1);
        let mid = WALK_STEP_MM * (frames as f64 / 2.0);
        let cam = sample_fixture_camera(&mut rng, mid);
        let track = fixture_track(&mut rng, frames, scale, Vector3::zeros(), pattern);
        let frame_records: Vec<SurrealFrameJson> = track
            .iter()
            .enumerate()
            .map(|(t, c16)| {
                let smpl_world = scatter_smpl(c16);
                let joints: Vec<[f64; 3]> = if corrupted {
                    vec![[f64::NAN; 3]; 24]
                } else {
                    smpl_world
                        .iter()
                        .map(|x| {
                            let p = cam.r_wc * (x - cam.center);
                            [p.x, p.y, p.z]
                        })
                        .collect()
                };
                SurrealFrameJson {
                    frame: t,
                    joints_cam_mm: joints,
                }
            })
            .collect();
        let file = SurrealBatchFile {
            batch: batch.to_string(),
            split: split.to_string(),
            camera: cam.pinhole,
            frames: frame_records,
        };
        write_json_file(&root.join(format!("batches/{batch}.json")), &file)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::archive::write_archive;
    use crate::geometry::subject_viewpoint;
    use crate::skeleton::{canonical_16, remap, remap_3dpw, remap_gpa, remap_h36m};
    use std::io::Cursor;

    fn tiny_spec(seed: u64) -> SynthSpec {
        let mut spec = SynthSpec::preset("h36m", 30, 20, seed).unwrap();
        spec.name = "tiny".into();
        spec
    }

    #[test]
    fn same_seed_gives_byte_identical_archives() {
        let a = synth_generate(&tiny_spec(42)).unwrap();
        let b = synth_generate(&tiny_spec(42)).unwrap();
        let mut buf_a = Cursor::new(Vec::new());
        let mut buf_b = Cursor::new(Vec::new());
        write_archive(&a.archive, &mut buf_a).unwrap();
        write_archive(&b.archive, &mut buf_b).unwrap();
        assert_eq!(buf_a.into_inner(), buf_b.into_inner());

        let c = synth_generate(&tiny_spec(43)).unwrap();
        let mut buf_c = Cursor::new(Vec::new());
        write_archive(&c.archive, &mut buf_c).unwrap();
        assert_ne!(buf_a2_bytes(&a), buf_c.into_inner());
    }

    fn buf_a2_bytes(out: &SynthOutput) -> Vec<u8> {
        let mut buf = Cursor::new(Vec::new());
        write_archive(&out.archive, &mut buf).unwrap();
        buf.into_inner()
    }

    #[test]
    fn ring_rig_recovers_configured_elevation() {
        let mut spec = tiny_spec(7);
        spec.train_count = 60;
        spec.test_count = 0;
        spec.rig.elevation_deg = Dist::Fixed { value: 10.0 };
        spec.rig.azimuth_deg = Dist::Uniform {
            lo: -180.0,
            hi: 180.0,
        };
        let out = synth_generate(&spec).unwrap();
        for (sample, world) in out.samples.iter().zip(&out.world) {
            let vp = subject_viewpoint(&sample.joints_3d_cam, Vector3::zeros()).unwrap();
            assert!(
                (vp.elevation_deg - 10.0).abs() < 1e-6,
                "elevation {}",
                vp.elevation_deg
            );
            assert!(
                (vp.azimuth_deg - world.azimuth_deg).abs() < 1e-6,
                "azimuth {} vs {}",
                vp.azimuth_deg,
                world.azimuth_deg
            );
        }
    }

    #[test]
    fn distance_distribution_matches_spec_monte_carlo() {
        let mut spec = tiny_spec(11);
        spec.train_count = 10_000;
        spec.test_count = 0;
        let out = synth_generate(&spec).unwrap();
        let mean: f64 =
            out.world.iter().map(|w| w.distance_mm).sum::<f64>() / out.world.len() as f64;
        // 3 sigma of the sample mean: 3 * 800 / sqrt(10000) = 24 mm
        assert!((mean - 5200.0).abs() < 24.0, "mean {mean}");
    }

    #[test]
    fn bone_lengths_constant_per_subject() {
        let out = synth_generate(&tiny_spec(3)).unwrap();
        let mut per_subject: std::collections::BTreeMap<String, Vec<f64>> =
            std::collections::BTreeMap::new();
        for s in &out.samples {
            let lens: Vec<f64> = BONES_16
                .iter()
                .map(|&(a, b)| (s.joints_3d_cam[a] - s.joints_3d_cam[b]).norm())
                .collect();
            match per_subject.get(&s.subject_id) {
                None => {
                    per_subject.insert(s.subject_id.clone(), lens);
                }
                Some(first) => {
                    for (x, y) in first.iter().zip(&lens) {
                        assert!((x - y).abs() < 1e-9, "{}: {x} vs {y}", s.subject_id);
                    }
                }
            }
        }
        assert_eq!(per_subject.len(), 5);
    }

    #[test]
    fn stored_2d_is_exact_projection_of_stored_3d() {
        let out = synth_generate(&tiny_spec(5)).unwrap();
        for s in &out.samples {
            let reproj = project(&s.joints_3d_cam, &s.camera).unwrap();
            for (a, b) in reproj.iter().zip(&s.keypoints_2d) {
                assert!((a - b).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn infeasible_specs_are_rejected() {
        let mut spec = tiny_spec(1);
        spec.pose_wobble_deg = 75.0;
        assert!(matches!(
            synth_generate(&spec),
            Err(SynthError::Infeasible(_))
        ));

        let mut spec = tiny_spec(1);
        spec.train_count = 0;
        spec.test_count = 0;
        assert!(matches!(
            synth_generate(&spec),
            Err(SynthError::Infeasible(_))
        ));

        let mut spec = tiny_spec(1);
        spec.rig.distance_m = Dist::Uniform { lo: 5.0, hi: 3.0 };
        assert!(matches!(
            synth_generate(&spec),
            Err(SynthError::Infeasible(_))
        ));

        let mut spec = tiny_spec(1);
        spec.subject_scale = [0.0, 1.0];
        assert!(matches!(
            synth_generate(&spec),
            Err(SynthError::Infeasible(_))
        ));
    }

    #[test]
    fn spec_serde_roundtrip() {
        let spec = tiny_spec(9);
        let json = serde_json::to_string(&spec).unwrap();
        let back: SynthSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(back, spec);
    }

    /// The scatter functions must be exact right-inverses of the shipped
    /// remap tables on the mapped joints.
    #[test]
    fn scatter_then_remap_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..20 {
            let c16 = gen_pose(&mut rng, &rest_pose(1.0), 0.4);
            let shifted: Vec<Vector3<f64>> = c16
                .iter()
                .map(|p| p + Vector3::new(500.0, -200.0, 4000.0))
                .collect();

            let h = remap(&scatter_h36m(&shifted), remap_h36m(), canonical_16()).unwrap();
            let g = remap(&scatter_gpa(&shifted), remap_gpa(), canonical_16()).unwrap();
            let p = remap(&scatter_smpl(&shifted), remap_3dpw(), canonical_16()).unwrap();
            for j in 0..16 {
                assert!((h[j] - shifted[j]).norm() < 1e-9, "h36m joint {j}");
                assert!((g[j] - shifted[j]).norm() < 1e-9, "gpa joint {j}");
                // smpl hip is reconstructed as the hip midpoint, exact here
                assert!((p[j] - shifted[j]).norm() < 1e-9, "smpl joint {j}");
            }
        }
    }
}
