//! Canonical joint sets, per-dataset joint remapping, and hip-centering.
//!
//! The canonical 16-joint ordering is the crate-wide pose layout; every
//! dataset adapter remaps its native skeleton into it before anything else
//! touches the data. Remap tables are shipped as JSON data files under
//! `data/remaps/` so they can be audited and versioned independently of code.

use nalgebra::SVector;
use serde::Deserialize;
use std::sync::OnceLock;
use thiserror::Error;

/// Canonical 16-joint ordering. Index 0 is always the root (hip).
pub const CANONICAL_16_NAMES: [&str; 16] = [
    "hip",
    "right_hip",
    "right_knee",
    "right_ankle",
    "left_hip",
    "left_knee",
    "left_ankle",
    "spine",
    "neck",
    "head",
    "left_shoulder",
    "left_elbow",
    "left_wrist",
    "right_shoulder",
    "right_elbow",
    "right_wrist",
];

/// Canonical-16 indices kept by the 14-joint subset (spine and head removed).
pub const CANONICAL_14_KEPT: [usize; 14] = [0, 1, 2, 3, 4, 5, 6, 8, 10, 11, 12, 13, 14, 15];

/// Index of the spine joint in the canonical-16 ordering.
pub const SPINE_16: usize = 7;
/// Index of the head joint in the canonical-16 ordering.
pub const HEAD_16: usize = 9;

/// Bone edges (parent, child) of the canonical 16-joint skeleton.
pub const BONES_16: [(usize, usize); 15] = [
    (0, 1),
    (1, 2),
    (2, 3),
    (0, 4),
    (4, 5),
    (5, 6),
    (0, 7),
    (7, 8),
    (8, 9),
    (8, 10),
    (10, 11),
    (11, 12),
    (8, 13),
    (13, 14),
    (14, 15),
];

#[derive(Debug, Error)]
pub enum SkeletonError {
    #[error("remap definition error: {0}")]
    RemapDefinition(String),
    #[error("invalid sample: {0}")]
    InvalidSample(String),
    #[error("wrong joint cardinality: expected {expected}, got {got}")]
    WrongCardinality { expected: usize, got: usize },
}

/// An ordered set of named joints with a designated root.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JointSet {
    name: String,
    joint_names: Vec<String>,
    root_index: usize,
}

impl JointSet {
    pub fn new(name: &str, joint_names: &[&str], root_index: usize) -> Self {
        assert!(root_index < joint_names.len(), "root index out of range");
        let unique: std::collections::BTreeSet<&&str> = joint_names.iter().collect();
        assert_eq!(
            unique.len(),
            joint_names.len(),
            "joint names must be unique"
        );
        Self {
            name: name.to_string(),
            joint_names: joint_names.iter().map(|s| s.to_string()).collect(),
            root_index,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn joint_names(&self) -> &[String] {
        &self.joint_names
    }

    pub fn len(&self) -> usize {
        self.joint_names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.joint_names.is_empty()
    }

    pub fn root_index(&self) -> usize {
        self.root_index
    }
}

/// The canonical 16-joint set (hip root at index 0).
pub fn canonical_16() -> &'static JointSet {
    static SET: OnceLock<JointSet> = OnceLock::new();
    SET.get_or_init(|| JointSet::new("canonical16", &CANONICAL_16_NAMES, 0))
}

/// The canonical 14-joint subset (canonical-16 minus spine and head).
pub fn canonical_14() -> &'static JointSet {
    static SET: OnceLock<JointSet> = OnceLock::new();
    SET.get_or_init(|| {
        let names: Vec<&str> = CANONICAL_14_KEPT
            .iter()
            .map(|&i| CANONICAL_16_NAMES[i])
            .collect();
        JointSet::new("canonical14", &names, 0)
    })
}

/// Look up a joint set by its identifier.
pub fn joint_set_by_name(name: &str) -> Option<&'static JointSet> {
    match name {
        "canonical16" => Some(canonical_16()),
        "canonical14" => Some(canonical_14()),
        _ => None,
    }
}

/// How one canonical joint is produced from source-skeleton joints.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MapRule {
    /// Copy the source joint at this index.
    Source(usize),
    /// Arithmetic midpoint of two source joints.
    Midpoint(usize, usize),
}

/// A remapping from one dataset's native joint layout to a canonical set.
#[derive(Debug, Clone)]
pub struct JointRemap {
    source_dataset: String,
    source_joint_count: usize,
    source_joint_names: Vec<String>,
    mapping: Vec<MapRule>, // indexed by canonical target
}

#[derive(Deserialize)]
struct RemapEntryJson {
    target: usize,
    #[serde(default)]
    source: Option<usize>,
    #[serde(default)]
    midpoint: Option<[usize; 2]>,
}

#[derive(Deserialize)]
struct RemapJson {
    source_dataset: String,
    source_joint_count: usize,
    #[serde(default)]
    source_joint_names: Vec<String>,
    #[serde(default)]
    #[allow(dead_code)]
    provenance: String,
    mapping: Vec<RemapEntryJson>,
}

impl JointRemap {
    /// Parse a remap table from its JSON representation and validate it
    /// against the target joint set.
    pub fn from_json(json: &str, target: &JointSet) -> Result<Self, SkeletonError> {
        let raw: RemapJson = serde_json::from_str(json)
            .map_err(|e| SkeletonError::RemapDefinition(format!("bad remap JSON: {e}")))?;
        let mut mapping = vec![None; target.len()];
        for entry in &raw.mapping {
            if entry.target >= target.len() {
                return Err(SkeletonError::RemapDefinition(format!(
                    "target index {} out of range for {} ({} joints)",
                    entry.target,
                    target.name(),
                    target.len()
                )));
            }
            let rule = match (entry.source, entry.midpoint) {
                (Some(s), None) => MapRule::Source(s),
                (None, Some([a, b])) => MapRule::Midpoint(a, b),
                _ => {
                    return Err(SkeletonError::RemapDefinition(format!(
                        "target {} must give exactly one of `source` or `midpoint`",
                        entry.target
                    )))
                }
            };
            for idx in rule_sources(&rule) {
                if idx >= raw.source_joint_count {
                    return Err(SkeletonError::RemapDefinition(format!(
                        "source index {} out of range for {} ({} joints)",
                        idx, raw.source_dataset, raw.source_joint_count
                    )));
                }
            }
            if mapping[entry.target].replace(rule).is_some() {
                return Err(SkeletonError::RemapDefinition(format!(
                    "target index {} mapped more than once",
                    entry.target
                )));
            }
        }
        let mapping: Vec<MapRule> = mapping
            .into_iter()
            .enumerate()
            .map(|(i, rule)| {
                rule.ok_or_else(|| {
                    SkeletonError::RemapDefinition(format!("target index {i} not mapped"))
                })
            })
            .collect::<Result<_, _>>()?;
        if !raw.source_joint_names.is_empty()
            && raw.source_joint_names.len() != raw.source_joint_count
        {
            return Err(SkeletonError::RemapDefinition(
                "source_joint_names length disagrees with source_joint_count".into(),
            ));
        }
        Ok(Self {
            source_dataset: raw.source_dataset,
            source_joint_count: raw.source_joint_count,
            source_joint_names: raw.source_joint_names,
            mapping,
        })
    }

    /// Build a remap directly from rules (used by tests and the fixture
    /// generator).
    pub fn from_rules(
        source_dataset: &str,
        source_joint_count: usize,
        rules: Vec<MapRule>,
        target: &JointSet,
    ) -> Result<Self, SkeletonError> {
        if rules.len() != target.len() {
            return Err(SkeletonError::RemapDefinition(format!(
                "expected {} rules, got {}",
                target.len(),
                rules.len()
            )));
        }
        for rule in &rules {
            for idx in rule_sources(rule) {
                if idx >= source_joint_count {
                    return Err(SkeletonError::RemapDefinition(format!(
                        "source index {idx} out of range ({source_joint_count} joints)"
                    )));
                }
            }
        }
        Ok(Self {
            source_dataset: source_dataset.to_string(),
            source_joint_count,
            source_joint_names: Vec::new(),
            mapping: rules,
        })
    }

    pub fn source_dataset(&self) -> &str {
        &self.source_dataset
    }

    pub fn source_joint_count(&self) -> usize {
        self.source_joint_count
    }

    pub fn source_joint_names(&self) -> &[String] {
        &self.source_joint_names
    }

    pub fn rules(&self) -> &[MapRule] {
        &self.mapping
    }
}

fn rule_sources(rule: &MapRule) -> Vec<usize> {
    match *rule {
        MapRule::Source(s) => vec![s],
        MapRule::Midpoint(a, b) => vec![a, b],
    }
}

/// Shipped remap table: H36M 38-joint layout to canonical-16.
pub fn remap_h36m() -> &'static JointRemap {
    static R: OnceLock<JointRemap> = OnceLock::new();
    R.get_or_init(|| {
        JointRemap::from_json(
            include_str!("../data/remaps/h36m38_to_canonical16.json"),
            canonical_16(),
        )
        .expect("shipped h36m remap table is valid")
    })
}

/// Shipped remap table: GPA 34-joint layout to canonical-16.
pub fn remap_gpa() -> &'static JointRemap {
    static R: OnceLock<JointRemap> = OnceLock::new();
    R.get_or_init(|| {
        JointRemap::from_json(
            include_str!("../data/remaps/gpa34_to_canonical16.json"),
            canonical_16(),
        )
        .expect("shipped gpa remap table is valid")
    })
}

/// Shipped remap table: 3DPW 24-joint SMPL layout to canonical-16.
pub fn remap_3dpw() -> &'static JointRemap {
    static R: OnceLock<JointRemap> = OnceLock::new();
    R.get_or_init(|| {
        JointRemap::from_json(
            include_str!("../data/remaps/threedpw24_to_canonical16.json"),
            canonical_16(),
        )
        .expect("shipped 3dpw remap table is valid")
    })
}

/// Shipped remap table: SURREAL 24-joint SMPL layout to canonical-16.
pub fn remap_surreal() -> &'static JointRemap {
    static R: OnceLock<JointRemap> = OnceLock::new();
    R.get_or_init(|| {
        JointRemap::from_json(
            include_str!("../data/remaps/surreal24_to_canonical16.json"),
            canonical_16(),
        )
        .expect("shipped surreal remap table is valid")
    })
}

/// Remap a source-layout joint array into canonical order. Works for both
/// 2D and 3D rows; synthesized joints are arithmetic midpoints.
pub fn remap<const D: usize>(
    source_joints: &[SVector<f64, D>],
    remap: &JointRemap,
    target: &JointSet,
) -> Result<Vec<SVector<f64, D>>, SkeletonError> {
    if source_joints.len() != remap.source_joint_count {
        return Err(SkeletonError::WrongCardinality {
            expected: remap.source_joint_count,
            got: source_joints.len(),
        });
    }
    if remap.mapping.len() != target.len() {
        return Err(SkeletonError::RemapDefinition(format!(
            "remap for {} has {} targets, joint set {} has {}",
            remap.source_dataset,
            remap.mapping.len(),
            target.name(),
            target.len()
        )));
    }
    for (i, row) in source_joints.iter().enumerate() {
        if !row.iter().all(|c| c.is_finite()) {
            return Err(SkeletonError::InvalidSample(format!(
                "non-finite coordinate in source joint {i}"
            )));
        }
    }
    Ok(remap
        .mapping
        .iter()
        .map(|rule| match *rule {
            MapRule::Source(s) => source_joints[s],
            MapRule::Midpoint(a, b) => (source_joints[a] + source_joints[b]) * 0.5,
        })
        .collect())
}

/// Translate a pose so the root joint sits exactly at the origin.
pub fn hip_center(
    joints: &[nalgebra::Vector3<f64>],
    root_index: usize,
) -> Vec<nalgebra::Vector3<f64>> {
    let root = joints[root_index];
    joints.iter().map(|j| j - root).collect()
}

/// Reduce a canonical-16 pose to the canonical-14 subset.
pub fn select_joint_subset<const D: usize>(
    joints: &[SVector<f64, D>],
) -> Result<Vec<SVector<f64, D>>, SkeletonError> {
    if joints.len() != 16 {
        return Err(SkeletonError::WrongCardinality {
            expected: 16,
            got: joints.len(),
        });
    }
    Ok(CANONICAL_14_KEPT.iter().map(|&i| joints[i]).collect())
}
