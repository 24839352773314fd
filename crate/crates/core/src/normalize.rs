//! Screen-space normalization and z-score standardization, plus the
//! dataset-statistics computation both rely on.

use nalgebra::{SVector, Vector2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Smallest allowed standard deviation; constant coordinates are clamped
/// here instead of producing a division by zero.
pub const STD_FLOOR: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum NormalizeError {
    #[error("need at least 2 samples to compute statistics, got {0}")]
    TooFewSamples(usize),
    #[error("shape mismatch: stats are {stats_joints}x{stats_dims}, input is {joints}x{dims}")]
    ShapeMismatch {
        stats_joints: usize,
        stats_dims: usize,
        joints: usize,
        dims: usize,
    },
    #[error("sample {index} has {got} joints, expected {expected}")]
    RaggedStream {
        index: usize,
        expected: usize,
        got: usize,
    },
}

/// Per-coordinate mean and population standard deviation for one
/// (dataset, joint set) pairing. Rows are joints, columns coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZScoreStats {
    pub dataset: String,
    pub joint_set: String,
    mean: Vec<Vec<f64>>,
    std: Vec<Vec<f64>>,
}

impl ZScoreStats {
    pub fn new(dataset: &str, joint_set: &str, mean: Vec<Vec<f64>>, std: Vec<Vec<f64>>) -> Self {
        assert_eq!(mean.len(), std.len());
        for (m, s) in mean.iter().zip(&std) {
            assert_eq!(m.len(), s.len());
            assert!(s.iter().all(|&x| x > 0.0), "std entries must be positive");
        }
        Self {
            dataset: dataset.to_string(),
            joint_set: joint_set.to_string(),
            mean,
            std,
        }
    }

    pub fn joints(&self) -> usize {
        self.mean.len()
    }

    pub fn dims(&self) -> usize {
        self.mean.first().map_or(0, Vec::len)
    }

    pub fn mean(&self) -> &[Vec<f64>] {
        &self.mean
    }

    pub fn std(&self) -> &[Vec<f64>] {
        &self.std
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("stats serialize")
    }

    pub fn from_json(json: &str) -> Result<Self, serde_json::Error> {
        let stats: Self = serde_json::from_str(json)?;
        Ok(stats)
    }
}

/// Single-pass (Welford) accumulator for per-coordinate mean and population
/// standard deviation.
pub struct StatsAccumulator<const D: usize> {
    count: usize,
    mean: Vec<SVector<f64, D>>,
    m2: Vec<SVector<f64, D>>,
}

impl<const D: usize> StatsAccumulator<D> {
    pub fn new(joints: usize) -> Self {
        Self {
            count: 0,
            mean: vec![SVector::zeros(); joints],
            m2: vec![SVector::zeros(); joints],
        }
    }

    pub fn push(&mut self, sample: &[SVector<f64, D>]) -> Result<(), NormalizeError> {
        if sample.len() != self.mean.len() {
            return Err(NormalizeError::RaggedStream {
                index: self.count,
                expected: self.mean.len(),
                got: sample.len(),
            });
        }
        self.count += 1;
        let n = self.count as f64;
        for (j, x) in sample.iter().enumerate() {
            let delta = x - self.mean[j];
            self.mean[j] += delta / n;
            let delta2 = x - self.mean[j];
            self.m2[j] += delta.component_mul(&delta2);
        }
        Ok(())
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn finish(self, dataset: &str, joint_set: &str) -> Result<ZScoreStats, NormalizeError> {
        if self.count < 2 {
            return Err(NormalizeError::TooFewSamples(self.count));
        }
        let n = self.count as f64;
        let mean = self
            .mean
            .iter()
            .map(|m| m.iter().copied().collect())
            .collect();
        let std = self
            .m2
            .iter()
            .map(|m2| {
                m2.iter()
                    .map(|&s| {
                        let sd = (s / n).sqrt();
                        if sd <= STD_FLOOR {
                            log::warn!(
                                "constant coordinate in {dataset}/{joint_set}; std clamped to {STD_FLOOR}"
                            );
                            STD_FLOOR
                        } else {
                            sd
                        }
                    })
                    .collect()
            })
            .collect();
        Ok(ZScoreStats::new(dataset, joint_set, mean, std))
    }
}

/// Compute z-score statistics over a stream of same-shaped samples.
pub fn compute_stats<'a, const D: usize>(
    samples: impl IntoIterator<Item = &'a [SVector<f64, D>]>,
    dataset: &str,
    joint_set: &str,
) -> Result<ZScoreStats, NormalizeError> {
    let mut iter = samples.into_iter();
    let first = iter.next().ok_or(NormalizeError::TooFewSamples(0))?;
    let mut acc = StatsAccumulator::<D>::new(first.len());
    acc.push(first)?;
    for s in iter {
        acc.push(s)?;
    }
    acc.finish(dataset, joint_set)
}

/// Map pixel coordinates into the unit interval: u/width, v/height.
/// Out-of-frame points land outside (0, 1) and are preserved.
pub fn screen_normalize(uv: &[Vector2<f64>], width: f64, height: f64) -> Vec<Vector2<f64>> {
    assert!(width > 0.0 && height > 0.0, "image dims must be positive");
    uv.iter()
        .map(|p| Vector2::new(p.x / width, p.y / height))
        .collect()
}

fn check_shape<const D: usize>(
    x: &[SVector<f64, D>],
    stats: &ZScoreStats,
) -> Result<(), NormalizeError> {
    if x.len() != stats.joints() || D != stats.dims() {
        return Err(NormalizeError::ShapeMismatch {
            stats_joints: stats.joints(),
            stats_dims: stats.dims(),
            joints: x.len(),
            dims: D,
        });
    }
    Ok(())
}

/// Per-coordinate standardization: (X - mean) / std.
pub fn zscore<const D: usize>(
    x: &[SVector<f64, D>],
    stats: &ZScoreStats,
) -> Result<Vec<SVector<f64, D>>, NormalizeError> {
    check_shape(x, stats)?;
    Ok(x.iter()
        .enumerate()
        .map(|(j, row)| SVector::from_fn(|d, _| (row[d] - stats.mean[j][d]) / stats.std[j][d]))
        .collect())
}

/// Inverse standardization: X' * std + mean.
pub fn zscore_inverse<const D: usize>(
    x: &[SVector<f64, D>],
    stats: &ZScoreStats,
) -> Result<Vec<SVector<f64, D>>, NormalizeError> {
    check_shape(x, stats)?;
    Ok(x.iter()
        .enumerate()
        .map(|(j, row)| SVector::from_fn(|d, _| row[d] * stats.std[j][d] + stats.mean[j][d]))
        .collect())
}
