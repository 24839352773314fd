//! Evaluation orchestration: archives in, metrics and analytics out.
//!
//! A run walks each configured dataset through four stages: load the
//! archive's test split, normalize model inputs, obtain predictions, and
//! score both protocols. Errors carry their stage as a bracketed label.
//!
//! Determinism contract: for a fixed config (including seeds) the report is
//! bit-identical regardless of `num_workers`. Predictions are keyed by
//! sample index rather than arrival order, the noise oracle draws from
//! per-sample RNG streams, and all reductions run over ordered collections.

pub mod config;
pub mod report;

use crate::analytics::{
    bin_viewpoints, export_contour, viewpoint_error_correlation, AnalyticsError, CorrelationResult,
    ViewpointGrid,
};
use crate::datasets::archive::{
    cameras_from_tensor, points2_from_tensor, poses3_from_tensor, read_archive_file, ArchiveError,
    DatasetArchive, TENSOR_CAMERA, TENSOR_JOINTS_3D_CAM, TENSOR_KEYPOINTS_2D,
};
use crate::geometry::{subject_viewpoint, CameraIntrinsics, Viewpoint};
use crate::metrics::{evaluate_protocols, per_joint_report, MetricsError, ProtocolResult};
use crate::normalize::{
    compute_stats, screen_normalize, zscore, zscore_inverse, NormalizeError, ZScoreStats,
};
use crate::runner::{
    load_prediction_file, oracle_with_noise, ModelSession, RunnerError, WireHandshake,
    WIRE_PROTOCOL_VERSION,
};
use crate::skeleton::{canonical_16, hip_center, select_joint_subset, JointSet};
use config::{EvalConfig, ExternalSource, PredictionSource, StatsSource};
use nalgebra::{Vector2, Vector3};
use report::{ResultsBundle, Variant};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;
use std::time::Duration;
use thiserror::Error;

/// Pipelining window per external-model session.
const MAX_IN_FLIGHT: usize = 64;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("[config] {0}")]
    Config(#[from] config::ConfigError),
    #[error("[load] {0}")]
    Load(String),
    #[error("[load] {0}")]
    Archive(#[from] ArchiveError),
    #[error("[normalize] {0}")]
    Normalize(#[from] NormalizeError),
    #[error("[predict] {0}")]
    Predict(#[from] RunnerError),
    #[error("[metric] {0}")]
    Metric(#[from] MetricsError),
    #[error("[internal] {0}")]
    Internal(String),
}

fn internal(e: impl std::fmt::Display) -> HarnessError {
    HarnessError::Internal(e.to_string())
}

/// One evaluated test sample: where the camera sat in the subject's frame
/// and how wrong the prediction was.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: String,
    pub elevation_deg: f64,
    pub azimuth_deg: f64,
    /// Protocol-1 error.
    pub error_mm: f64,
    /// Protocol-2 error; absent when alignment was degenerate.
    pub pa_error_mm: Option<f64>,
}

/// Everything the run produced for one dataset.
#[derive(Debug)]
pub struct DatasetEval {
    pub dataset: String,
    pub result: ProtocolResult,
    /// Per-sample records for samples with a defined viewpoint.
    pub samples: Vec<SampleRecord>,
    /// Train-views vs test-error rank correlation; needs `train_archive`
    /// and enough jointly-populated bins.
    pub correlation: Option<CorrelationResult>,
    /// Contour CSV over the merged train/test viewpoint grid.
    pub contour_csv: Option<String>,
}

#[derive(Debug)]
pub struct EvalReport {
    pub model: String,
    pub variant: Variant,
    pub num_joints: usize,
    pub with_scale: bool,
    /// Row j = (protocol-1, protocol-2) mean error of joint j, averaged
    /// across datasets.
    pub per_joint: Vec<[f64; 2]>,
    pub datasets: Vec<DatasetEval>,
}

impl EvalReport {
    /// Flatten into the on-disk results form for one protocol (1 or 2).
    pub fn bundle(&self, protocol: u8) -> ResultsBundle {
        assert!(protocol == 1 || protocol == 2, "protocol is 1 or 2");
        let pick = |r: &ProtocolResult| {
            if protocol == 1 {
                r.protocol1.mean_mm
            } else {
                r.protocol2.mean_mm
            }
        };
        ResultsBundle {
            model: self.model.clone(),
            variant: self.variant,
            protocol,
            per_dataset: self
                .datasets
                .iter()
                .map(|d| (d.dataset.clone(), pick(&d.result)))
                .collect(),
            per_joint: self
                .per_joint
                .iter()
                .map(|r| r[protocol as usize - 1])
                .collect(),
        }
    }
}

/// Train-archive side of a run: viewpoint histogram and, when the model
/// needs them, normalization statistics.
struct TrainSide {
    grid: ViewpointGrid,
    stats_2d: Option<ZScoreStats>,
    stats_3d: Option<ZScoreStats>,
}

fn needs_normalization(config: &EvalConfig) -> bool {
    config.trained_on_normalized_data
        && matches!(config.prediction_source, PredictionSource::External(_))
}

/// Load an archive and pull out the slice of one split as poses, keypoints
/// and cameras, all still canonical-16.
struct SplitData {
    ids: Vec<String>,
    poses16: Vec<Vec<Vector3<f64>>>,
    keypoints16: Vec<Vec<Vector2<f64>>>,
    cameras: Vec<CameraIntrinsics>,
}

fn load_split(archive: &DatasetArchive, which: &str) -> Result<SplitData, HarnessError> {
    let m = &archive.manifest;
    if m.joint_set != canonical_16().name() {
        return Err(HarnessError::Load(format!(
            "archive {} uses joint set {:?}; evaluation archives must be canonical-16",
            m.dataset, m.joint_set
        )));
    }
    let [s, e] = match which {
        "train" => m.split_ranges.train,
        _ => m.split_ranges.test,
    };
    if e <= s {
        return Err(HarnessError::Load(format!(
            "archive {}: empty {which} split",
            m.dataset
        )));
    }
    let poses = poses3_from_tensor(archive.tensor(TENSOR_JOINTS_3D_CAM)?)?;
    let kps = points2_from_tensor(archive.tensor(TENSOR_KEYPOINTS_2D)?)?;
    let cams = cameras_from_tensor(archive.tensor(TENSOR_CAMERA)?)?;
    if e > poses.len() || poses.len() != kps.len() || poses.len() != cams.len() {
        return Err(HarnessError::Load(format!(
            "archive {}: tensor lengths disagree with split ranges",
            m.dataset
        )));
    }
    if poses.first().map(Vec::len) != Some(16) {
        return Err(HarnessError::Load(format!(
            "archive {}: expected 16-joint poses",
            m.dataset
        )));
    }
    Ok(SplitData {
        ids: m.sample_ids[s..e].to_vec(),
        poses16: poses[s..e].to_vec(),
        keypoints16: kps[s..e].to_vec(),
        cameras: cams[s..e].to_vec(),
    })
}

fn subset3(pose: &[Vector3<f64>], joint_set: &JointSet) -> Vec<Vector3<f64>> {
    if joint_set.len() == 14 {
        select_joint_subset(pose).expect("16-joint input checked at load")
    } else {
        pose.to_vec()
    }
}

fn subset2(kp: &[Vector2<f64>], joint_set: &JointSet) -> Vec<Vector2<f64>> {
    if joint_set.len() == 14 {
        select_joint_subset(kp).expect("16-joint input checked at load")
    } else {
        kp.to_vec()
    }
}

fn load_train_side(
    path: &Path,
    config: &EvalConfig,
    joint_set: &JointSet,
    root: usize,
) -> Result<TrainSide, HarnessError> {
    let archive = read_archive_file(path)?;
    let split = load_split(&archive, "train")?;
    let viewpoints: Vec<Viewpoint> = split
        .poses16
        .iter()
        .filter_map(|p| subject_viewpoint(p, Vector3::zeros()).ok())
        .collect();
    let grid = bin_viewpoints(&viewpoints, None).map_err(internal)?;

    let (stats_2d, stats_3d) =
        if needs_normalization(config) && config.stats_source == StatsSource::TrainDataset {
            let kp: Vec<Vec<Vector2<f64>>> = split
                .keypoints16
                .iter()
                .map(|k| subset2(k, joint_set))
                .collect();
            let gt: Vec<Vec<Vector3<f64>>> = split
                .poses16
                .iter()
                .map(|p| hip_center(&subset3(p, joint_set), root))
                .collect();
            let name = &archive.manifest.dataset;
            (
                Some(compute_stats(
                    kp.iter().map(Vec::as_slice),
                    name,
                    joint_set.name(),
                )?),
                Some(compute_stats(
                    gt.iter().map(Vec::as_slice),
                    name,
                    joint_set.name(),
                )?),
            )
        } else {
            (None, None)
        };
    Ok(TrainSide {
        grid,
        stats_2d,
        stats_3d,
    })
}

/// Split sample ids into their stream (everything before the last `/`).
fn stream_key(id: &str) -> &str {
    match id.rfind('/') {
        Some(i) => &id[..i],
        None => id,
    }
}

/// Assemble per-sample model inputs: a window of `num_frames` consecutive
/// frames from the sample's stream, centred on the sample, replicating the
/// first/last frame past stream edges. Request ids are sample indices.
fn build_windows(
    ids: &[String],
    inputs: &[Vec<Vector2<f64>>],
    num_frames: usize,
) -> Vec<(u64, Vec<Vec<Vector2<f64>>>)> {
    if num_frames == 1 {
        return inputs
            .iter()
            .enumerate()
            .map(|(i, f)| (i as u64, vec![f.clone()]))
            .collect();
    }
    let mut out = Vec::with_capacity(ids.len());
    let left = (num_frames - 1) / 2;
    let mut start = 0;
    for i in 1..=ids.len() {
        if i < ids.len() && stream_key(&ids[i]) == stream_key(&ids[start]) {
            continue;
        }
        let len = i - start;
        for t in 0..len {
            let window: Vec<Vec<Vector2<f64>>> = (0..num_frames)
                .map(|o| {
                    let rel = t as i64 - left as i64 + o as i64;
                    let idx = rel.clamp(0, len as i64 - 1) as usize;
                    inputs[start + idx].clone()
                })
                .collect();
            out.push(((start + t) as u64, window));
        }
        start = i;
    }
    out
}

// the argument list mirrors the per-dataset state split in eval_dataset;
// bundling it into a struct would just rename the same nine things
#[allow(clippy::too_many_arguments)]
fn external_predictions(
    config: &EvalConfig,
    source: &ExternalSource,
    joint_set: &JointSet,
    root: usize,
    ids: &[String],
    keypoints: &[Vec<Vector2<f64>>],
    cameras: &[CameraIntrinsics],
    stats_2d: Option<&ZScoreStats>,
    stats_3d: Option<&ZScoreStats>,
) -> Result<Vec<Vec<Vector3<f64>>>, HarnessError> {
    let inputs: Vec<Vec<Vector2<f64>>> = match stats_2d {
        Some(st) => keypoints
            .iter()
            .map(|kp| zscore(kp, st))
            .collect::<Result<_, _>>()?,
        None => keypoints
            .iter()
            .zip(cameras)
            .map(|(kp, cam)| screen_normalize(kp, cam.width, cam.height))
            .collect(),
    };
    let windows = build_windows(ids, &inputs, config.num_frames);
    let expected = WireHandshake {
        protocol: WIRE_PROTOCOL_VERSION,
        num_joints: joint_set.len(),
        video_mode: config.video_mode,
        num_frames: config.num_frames,
    };
    let timeout = Duration::from_secs_f64(source.timeout_s);

    let workers = config.num_workers.min(windows.len()).max(1);
    let chunk = windows.len().div_ceil(workers);
    type ShardResult = Result<BTreeMap<u64, Vec<Vector3<f64>>>, RunnerError>;
    let shard_results: Vec<ShardResult> = std::thread::scope(|scope| {
        let handles: Vec<_> = windows
            .chunks(chunk)
            .map(|shard| {
                scope.spawn(move || {
                    let mut session = ModelSession::spawn(&source.command, expected, timeout)?;
                    let out = session.infer_all(shard, MAX_IN_FLIGHT)?;
                    session.shutdown()?;
                    Ok(out)
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("prediction worker panicked"))
            .collect()
    });

    let mut merged = BTreeMap::new();
    for r in shard_results {
        merged.append(&mut r?);
    }
    let mut out = Vec::with_capacity(ids.len());
    for i in 0..ids.len() as u64 {
        let pose = merged
            .remove(&i)
            .expect("infer_all yields every request id");
        let pose = match stats_3d {
            Some(st) => zscore_inverse(&pose, st)?,
            None => pose,
        };
        // external outputs are centred here, not trusted to be
        out.push(hip_center(&pose, root));
    }
    Ok(out)
}

fn eval_dataset(
    name: &str,
    path: &Path,
    config: &EvalConfig,
    joint_set: &JointSet,
    root: usize,
    pool: &rayon::ThreadPool,
    train: Option<&TrainSide>,
) -> Result<DatasetEval, HarnessError> {
    // stage: load
    let archive = read_archive_file(path)?;
    let split = load_split(&archive, "test")?;
    let viewpoints: Vec<Option<Viewpoint>> = split
        .poses16
        .iter()
        .map(|p| subject_viewpoint(p, Vector3::zeros()).ok())
        .collect();
    let keypoints: Vec<Vec<Vector2<f64>>> = split
        .keypoints16
        .iter()
        .map(|k| subset2(k, joint_set))
        .collect();
    let gt_centered: Vec<Vec<Vector3<f64>>> = split
        .poses16
        .iter()
        .map(|p| hip_center(&subset3(p, joint_set), root))
        .collect();

    // stage: normalize
    let (own_2d, own_3d);
    let (stats_2d, stats_3d) = if needs_normalization(config) {
        match config.stats_source {
            StatsSource::TrainDataset => {
                let t = train.expect("validated: train_archive accompanies train_dataset");
                (t.stats_2d.as_ref(), t.stats_3d.as_ref())
            }
            StatsSource::TestDataset => {
                own_2d =
                    compute_stats(keypoints.iter().map(Vec::as_slice), name, joint_set.name())?;
                own_3d = compute_stats(
                    gt_centered.iter().map(Vec::as_slice),
                    name,
                    joint_set.name(),
                )?;
                (Some(&own_2d), Some(&own_3d))
            }
        }
    } else {
        (None, None)
    };

    // stage: predict
    let pred: Vec<Vec<Vector3<f64>>> = match &config.prediction_source {
        PredictionSource::File(f) => {
            let file = if f.path.is_dir() {
                f.path.join(format!("{name}.zip"))
            } else {
                f.path.clone()
            };
            load_prediction_file(&file, &split.ids, joint_set)?
        }
        PredictionSource::OracleNoise(o) => {
            pool.install(|| oracle_with_noise(&gt_centered, o.sigma_mm, o.seed, root))
        }
        PredictionSource::External(ext) => external_predictions(
            config,
            ext,
            joint_set,
            root,
            &split.ids,
            &keypoints,
            &split.cameras,
            stats_2d,
            stats_3d,
        )?,
    };

    // stage: metric
    let result = evaluate_protocols(&pred, &gt_centered, config.with_scale)?;

    let mut samples = Vec::with_capacity(split.ids.len());
    for (i, id) in split.ids.iter().enumerate() {
        let (Some(vp), Some(error_mm)) = (viewpoints[i], result.protocol1.per_sample_mm[i]) else {
            continue;
        };
        samples.push(SampleRecord {
            id: id.clone(),
            elevation_deg: vp.elevation_deg,
            azimuth_deg: vp.azimuth_deg,
            error_mm,
            pa_error_mm: result.protocol2.per_sample_mm[i],
        });
    }

    let (correlation, contour_csv) = match train {
        None => (None, None),
        Some(t) => {
            let (corr, contour) =
                viewpoint_analytics(&t.grid, &samples, config.min_train, config.min_test)?;
            if corr.is_none() {
                log::warn!(
                    "dataset {name}: too few jointly-populated viewpoint bins for a correlation"
                );
            }
            (corr, Some(contour))
        }
    };

    Ok(DatasetEval {
        dataset: name.to_string(),
        result,
        samples,
        correlation,
        contour_csv,
    })
}

/// Bin test records against a training grid: the rank correlation (when
/// enough bins qualify) plus the merged-grid contour CSV.
pub fn viewpoint_analytics(
    train_grid: &ViewpointGrid,
    samples: &[SampleRecord],
    min_train: u64,
    min_test: u64,
) -> Result<(Option<CorrelationResult>, String), HarnessError> {
    let vps: Vec<Viewpoint> = samples
        .iter()
        .map(|r| Viewpoint {
            elevation_deg: r.elevation_deg,
            azimuth_deg: r.azimuth_deg,
        })
        .collect();
    let errors: Vec<f64> = samples.iter().map(|r| r.error_mm).collect();
    let test_grid = bin_viewpoints(&vps, Some(&errors)).map_err(internal)?;
    let correlation = match viewpoint_error_correlation(train_grid, &test_grid, min_train, min_test)
    {
        Ok(c) => Some(c),
        Err(AnalyticsError::TooFewBins(_)) => None,
        Err(e) => return Err(internal(e)),
    };
    let mut combined = train_grid.clone();
    combined.merge(&test_grid);
    Ok((correlation, export_contour(&combined)))
}

/// Build the training-side viewpoint grid of an archive (its train split).
pub fn train_grid_from_archive(path: &Path) -> Result<ViewpointGrid, HarnessError> {
    let archive = read_archive_file(path)?;
    let split = load_split(&archive, "train")?;
    let viewpoints: Vec<Viewpoint> = split
        .poses16
        .iter()
        .filter_map(|p| subject_viewpoint(p, Vector3::zeros()).ok())
        .collect();
    bin_viewpoints(&viewpoints, None).map_err(internal)
}

/// Run a full evaluation as described by `config`.
pub fn run_evaluation(config: &EvalConfig) -> Result<EvalReport, HarnessError> {
    config.validate()?;
    let joint_set = config.joint_set();
    let root = joint_set.root_index();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.num_workers)
        .build()
        .map_err(internal)?;

    let train = match &config.train_archive {
        Some(path) => Some(load_train_side(path, config, joint_set, root)?),
        None => None,
    };

    let mut datasets = Vec::with_capacity(config.datasets.len());
    for (name, path) in &config.datasets {
        datasets.push(eval_dataset(
            name,
            path,
            config,
            joint_set,
            root,
            &pool,
            train.as_ref(),
        )?);
    }
    let results: Vec<ProtocolResult> = datasets.iter().map(|d| d.result.clone()).collect();
    let per_joint = per_joint_report(&results)?;
    Ok(EvalReport {
        model: config.model_type.clone(),
        variant: config.variant,
        num_joints: joint_set.len(),
        with_scale: config.with_scale,
        per_joint,
        datasets,
    })
}
