//! Protocol 1 (mean per-joint position error), Protocol 2 (the same after
//! Procrustes alignment), and per-joint error decomposition.
//!
//! Inputs are hip-centered canonical poses; centering is enforced, not
//! silently applied, so pipeline bugs surface as errors here.

use nalgebra::{Matrix3, Vector3};
use thiserror::Error;

/// Root rows must be within this of the origin for a pose to count as
/// hip-centered.
pub const CENTERING_TOL_MM: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("shape mismatch: pred {pred_n}x{pred_j}, gt {gt_n}x{gt_j}")]
    ShapeMismatch {
        pred_n: usize,
        pred_j: usize,
        gt_n: usize,
        gt_j: usize,
    },
    #[error("{which} sample {sample} is not hip-centered (root offset {offset_mm} mm)")]
    NotCentered {
        which: &'static str,
        sample: usize,
        offset_mm: f64,
    },
    #[error("alignment degenerate: {0}")]
    DegenerateAlignment(String),
    #[error("need at least {need} joints for alignment, got {got}")]
    TooFewJoints { need: usize, got: usize },
    #[error("no samples")]
    Empty,
    #[error("joint count mismatch across results: {0} vs {1}")]
    JointSetMismatch(usize, usize),
}

/// Aggregate error statistics for one protocol over a batch of samples.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorStats {
    pub mean_mm: f64,
    /// Mean error per joint, over included samples.
    pub per_joint_mm: Vec<f64>,
    /// Mean error per sample over joints; `None` marks a sample excluded as
    /// alignment-degenerate (never happens for protocol 1).
    pub per_sample_mm: Vec<Option<f64>>,
    /// Samples included in the aggregate.
    pub sample_count: usize,
    /// Samples excluded because alignment was degenerate.
    pub degenerate_count: usize,
}

/// Both protocols over the same batch, as reported by the harness.
#[derive(Debug, Clone)]
pub struct ProtocolResult {
    pub protocol1: ErrorStats,
    pub protocol2: ErrorStats,
}

/// Result of a Procrustes alignment of one pose onto another.
#[derive(Debug, Clone)]
pub struct Alignment {
    pub aligned: Vec<Vector3<f64>>,
    pub rotation: Matrix3<f64>,
    pub scale: f64,
}

fn check_shapes(
    pred: &[Vec<Vector3<f64>>],
    gt: &[Vec<Vector3<f64>>],
) -> Result<(usize, usize), MetricsError> {
    if pred.is_empty() || gt.is_empty() {
        return Err(MetricsError::Empty);
    }
    let j = gt[0].len();
    let same = pred.len() == gt.len()
        && pred.iter().all(|p| p.len() == j)
        && gt.iter().all(|g| g.len() == j);
    if !same {
        return Err(MetricsError::ShapeMismatch {
            pred_n: pred.len(),
            pred_j: pred.first().map_or(0, Vec::len),
            gt_n: gt.len(),
            gt_j: j,
        });
    }
    Ok((gt.len(), j))
}

fn check_centered(poses: &[Vec<Vector3<f64>>], which: &'static str) -> Result<(), MetricsError> {
    for (sample, pose) in poses.iter().enumerate() {
        let offset = pose[0].norm();
        if offset > CENTERING_TOL_MM {
            return Err(MetricsError::NotCentered {
                which,
                sample,
                offset_mm: offset,
            });
        }
    }
    Ok(())
}

fn aggregate(per_sample_joint: Vec<Option<Vec<f64>>>, j: usize) -> ErrorStats {
    let mut per_joint = vec![0.0; j];
    let mut total = 0.0;
    let mut included = 0usize;
    let mut per_sample = Vec::with_capacity(per_sample_joint.len());
    for row in &per_sample_joint {
        match row {
            Some(dists) => {
                let sum: f64 = dists.iter().sum();
                for (acc, d) in per_joint.iter_mut().zip(dists) {
                    *acc += d;
                }
                total += sum;
                included += 1;
                per_sample.push(Some(sum / j as f64));
            }
            None => per_sample.push(None),
        }
    }
    let n = included.max(1) as f64;
    ErrorStats {
        mean_mm: total / (n * j as f64),
        per_joint_mm: per_joint.iter().map(|s| s / n).collect(),
        per_sample_mm: per_sample,
        sample_count: included,
        degenerate_count: per_sample_joint.len() - included,
    }
}

/// Protocol 1: mean Euclidean per-joint error over all samples and joints.
/// Both arrays must be hip-centered (root row at index 0).
pub fn mpjpe(
    pred: &[Vec<Vector3<f64>>],
    gt: &[Vec<Vector3<f64>>],
) -> Result<ErrorStats, MetricsError> {
    let (_, j) = check_shapes(pred, gt)?;
    check_centered(pred, "pred")?;
    check_centered(gt, "gt")?;
    let rows = pred
        .iter()
        .zip(gt)
        .map(|(p, g)| Some(p.iter().zip(g).map(|(a, b)| (a - b).norm()).collect()))
        .collect();
    Ok(aggregate(rows, j))
}

/// Least-squares similarity (or rigid, when `with_scale` is off) alignment
/// of `pred` onto `gt`: returns s*R*(pred - pred_centroid) + gt_centroid.
/// Reflections are corrected by flipping the sign at the smallest singular
/// value, so the rotation always has determinant +1.
pub fn procrustes_align(
    pred: &[Vector3<f64>],
    gt: &[Vector3<f64>],
    with_scale: bool,
) -> Result<Alignment, MetricsError> {
    if pred.len() != gt.len() {
        return Err(MetricsError::ShapeMismatch {
            pred_n: 1,
            pred_j: pred.len(),
            gt_n: 1,
            gt_j: gt.len(),
        });
    }
    if pred.len() < 3 {
        return Err(MetricsError::TooFewJoints {
            need: 3,
            got: pred.len(),
        });
    }
    let n = pred.len() as f64;
    let p_centroid: Vector3<f64> = pred.iter().sum::<Vector3<f64>>() / n;
    let g_centroid: Vector3<f64> = gt.iter().sum::<Vector3<f64>>() / n;

    let mut m = Matrix3::zeros();
    let mut p_sq = 0.0;
    for (p, g) in pred.iter().zip(gt) {
        let pc = p - p_centroid;
        let gc = g - g_centroid;
        m += gc * pc.transpose();
        p_sq += pc.norm_squared();
    }

    let svd = m.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let sv = svd.singular_values;
    let s_max = sv.max();
    // rank < 2 leaves a rotation about the dominant axis unconstrained
    let rank2_floor = s_max * 1e-9;
    if s_max <= 0.0 || sv.iter().filter(|&&s| s > rank2_floor).count() < 2 {
        return Err(MetricsError::DegenerateAlignment(
            "cross-covariance rank < 2 (points coincident or collinear)".into(),
        ));
    }

    let det_sign = (u * v_t).determinant().signum();
    let min_idx = sv.imin();
    let mut d = Vector3::new(1.0, 1.0, 1.0);
    d[min_idx] = det_sign;
    let rotation = u * Matrix3::from_diagonal(&d) * v_t;

    let scale = if with_scale {
        if p_sq <= 0.0 {
            return Err(MetricsError::DegenerateAlignment(
                "pred points are coincident, scale undefined".into(),
            ));
        }
        sv.dot(&d) / p_sq
    } else {
        1.0
    };

    let aligned = pred
        .iter()
        .map(|p| rotation * (p - p_centroid) * scale + g_centroid)
        .collect();
    Ok(Alignment {
        aligned,
        rotation,
        scale,
    })
}

/// Protocol 2: per-sample Procrustes alignment, then the protocol-1
/// aggregation. Degenerate samples are excluded and counted.
pub fn pa_mpjpe(
    pred: &[Vec<Vector3<f64>>],
    gt: &[Vec<Vector3<f64>>],
    with_scale: bool,
) -> Result<ErrorStats, MetricsError> {
    let (_, j) = check_shapes(pred, gt)?;
    check_centered(pred, "pred")?;
    check_centered(gt, "gt")?;
    let rows: Vec<Option<Vec<f64>>> = pred
        .iter()
        .zip(gt)
        .map(|(p, g)| match procrustes_align(p, g, with_scale) {
            Ok(a) => Some(
                a.aligned
                    .iter()
                    .zip(g)
                    .map(|(ap, gp)| (ap - gp).norm())
                    .collect(),
            ),
            Err(MetricsError::DegenerateAlignment(_)) => None,
            // shape errors cannot happen here; treat defensively as degenerate
            Err(_) => None,
        })
        .collect();
    if rows.iter().all(Option::is_none) {
        return Err(MetricsError::DegenerateAlignment(
            "every sample was alignment-degenerate".into(),
        ));
    }
    Ok(aggregate(rows, j))
}

/// Evaluate both protocols over one batch.
pub fn evaluate_protocols(
    pred: &[Vec<Vector3<f64>>],
    gt: &[Vec<Vector3<f64>>],
    with_scale: bool,
) -> Result<ProtocolResult, MetricsError> {
    Ok(ProtocolResult {
        protocol1: mpjpe(pred, gt)?,
        protocol2: pa_mpjpe(pred, gt, with_scale)?,
    })
}

/// Mean per-joint error across a set of evaluation results, for both
/// protocols. Output row j is (protocol-1 mean, protocol-2 mean) for joint j.
pub fn per_joint_report(results: &[ProtocolResult]) -> Result<Vec<[f64; 2]>, MetricsError> {
    let first = results.first().ok_or(MetricsError::Empty)?;
    let j = first.protocol1.per_joint_mm.len();
    let mut out = vec![[0.0; 2]; j];
    for r in results {
        for stats in [&r.protocol1, &r.protocol2] {
            if stats.per_joint_mm.len() != j {
                return Err(MetricsError::JointSetMismatch(j, stats.per_joint_mm.len()));
            }
        }
        for (row, (p1, p2)) in out.iter_mut().zip(
            r.protocol1
                .per_joint_mm
                .iter()
                .zip(&r.protocol2.per_joint_mm),
        ) {
            row[0] += p1;
            row[1] += p2;
        }
    }
    let n = results.len() as f64;
    for row in &mut out {
        row[0] /= n;
        row[1] /= n;
    }
    Ok(out)
}
