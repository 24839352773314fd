//! Leaderboard assembly and report rendering (markdown, CSV, JSON).
//!
//! Rows are sorted by decreasing average error so the worst generalizers
//! come first; ties break by model name. Output is byte-deterministic for a
//! fixed input.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("leaderboard needs at least one row")]
    Empty,
    #[error("mixed protocols in one leaderboard: {0} and {1}")]
    MixedProtocols(u8, u8),
    #[error("row {0} has no per-dataset values")]
    NoDatasets(String),
    #[error("baseline error must be positive, got {0}")]
    NonpositiveBaseline(f64),
    #[error("baseline model {0:?} is not among the rows")]
    MissingBaseline(String),
}

/// How a model variant was obtained; rendered as a marker next to the name.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Optimized,
    #[default]
    Unoptimized,
    Retrained,
    Reported,
}

impl Variant {
    pub fn marker(self) -> &'static str {
        match self {
            Variant::Optimized => "\u{2020}",   // dagger
            Variant::Unoptimized => "\u{22c4}", // diamond
            Variant::Retrained => "\u{2022}",   // bullet
            Variant::Reported => "\u{2021}",    // double dagger
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Optimized => "optimized",
            Variant::Unoptimized => "unoptimized",
            Variant::Retrained => "retrained",
            Variant::Reported => "reported",
        }
    }
}

/// One evaluation outcome as written to disk: a model's per-dataset mean
/// errors under one protocol, plus its per-joint profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultsBundle {
    pub model: String,
    pub variant: Variant,
    /// 1 = raw joint error, 2 = Procrustes-aligned.
    pub protocol: u8,
    pub per_dataset: BTreeMap<String, f64>,
    pub per_joint: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeaderboardRow {
    pub model: String,
    pub variant: Variant,
    pub per_dataset: BTreeMap<String, f64>,
    pub average_mm: f64,
}

impl LeaderboardRow {
    fn label(&self) -> String {
        format!("{} {}", self.model, self.variant.marker())
    }
}

/// Average each bundle's present per-dataset errors and sort rows by
/// decreasing average, ties by model name ascending.
pub fn build_leaderboard(bundles: &[ResultsBundle]) -> Result<Vec<LeaderboardRow>, ReportError> {
    let first = bundles.first().ok_or(ReportError::Empty)?;
    if let Some(other) = bundles.iter().find(|b| b.protocol != first.protocol) {
        return Err(ReportError::MixedProtocols(first.protocol, other.protocol));
    }
    let mut rows = Vec::with_capacity(bundles.len());
    for b in bundles {
        if b.per_dataset.is_empty() {
            return Err(ReportError::NoDatasets(b.model.clone()));
        }
        let average_mm = b.per_dataset.values().sum::<f64>() / b.per_dataset.len() as f64;
        rows.push(LeaderboardRow {
            model: b.model.clone(),
            variant: b.variant,
            per_dataset: b.per_dataset.clone(),
            average_mm,
        });
    }
    rows.sort_by(|a, b| {
        b.average_mm
            .partial_cmp(&a.average_mm)
            .expect("finite averages")
            .then_with(|| a.model.cmp(&b.model))
    });
    Ok(rows)
}

/// Signed percentage change relative to a baseline error: positive means the
/// error went down (improvement), negative means it went up.
pub fn percent_improvement(baseline_mm: f64, value_mm: f64) -> Result<f64, ReportError> {
    if !(baseline_mm.is_finite() && baseline_mm > 0.0) {
        return Err(ReportError::NonpositiveBaseline(baseline_mm));
    }
    Ok(100.0 * (baseline_mm - value_mm) / baseline_mm)
}

/// Display rounding: half away from zero (f64::round semantics) at the
/// given number of decimals.
pub fn round_display(x: f64, decimals: u32) -> f64 {
    let f = 10f64.powi(decimals as i32);
    (x * f).round() / f
}

/// Column order: the four capture datasets in their customary order first,
/// then anything else alphabetically.
pub fn dataset_columns(rows: &[LeaderboardRow]) -> Vec<String> {
    fn priority(name: &str) -> usize {
        match name {
            "h36m" => 0,
            "gpa" => 1,
            "3dpw" => 2,
            "surreal" => 3,
            _ => 4,
        }
    }
    let mut names: Vec<String> = rows
        .iter()
        .flat_map(|r| r.per_dataset.keys().cloned())
        .collect();
    names.sort_by(|a, b| priority(a).cmp(&priority(b)).then_with(|| a.cmp(b)));
    names.dedup();
    names
}

fn annotate(cell: f64, base: f64) -> String {
    let pct = percent_improvement(base, cell).expect("baseline validated positive");
    let arrow = if pct >= 0.0 { "\u{2193}" } else { "\u{2191}" };
    format!("{cell:.2} ({arrow} {:.1}%)", round_display(pct.abs(), 1))
}

/// Markdown leaderboard table. With `baseline` set, every non-baseline cell
/// (and the average) is annotated with its percentage change relative to
/// the baseline row, arrows marking improvement (down) vs degradation (up).
pub fn render_markdown(
    rows: &[LeaderboardRow],
    baseline: Option<&str>,
) -> Result<String, ReportError> {
    let cols = dataset_columns(rows);
    let base_row = match baseline {
        Some(name) => {
            let row = rows
                .iter()
                .find(|r| r.model == name)
                .ok_or_else(|| ReportError::MissingBaseline(name.to_string()))?;
            for &v in row.per_dataset.values() {
                if !(v.is_finite() && v > 0.0) {
                    return Err(ReportError::NonpositiveBaseline(v));
                }
            }
            Some(row.clone())
        }
        None => None,
    };

    let mut out = String::new();
    out.push_str("| Model |");
    for c in &cols {
        let _ = write!(out, " {c} |");
    }
    out.push_str(" Average |\n|---|");
    for _ in &cols {
        out.push_str("---:|");
    }
    out.push_str("---:|\n");
    for row in rows {
        let _ = write!(out, "| {} |", row.label());
        for c in &cols {
            match row.per_dataset.get(c) {
                None => out.push_str(" |"),
                Some(&v) => match &base_row {
                    Some(b) if b.model != row.model => match b.per_dataset.get(c) {
                        Some(&base) => {
                            let _ = write!(out, " {} |", annotate(v, base));
                        }
                        None => {
                            let _ = write!(out, " {v:.2} |");
                        }
                    },
                    _ => {
                        let _ = write!(out, " {v:.2} |");
                    }
                },
            }
        }
        match &base_row {
            Some(b) if b.model != row.model => {
                let _ = writeln!(out, " {} |", annotate(row.average_mm, b.average_mm));
            }
            _ => {
                let _ = writeln!(out, " {:.2} |", row.average_mm);
            }
        }
    }
    Ok(out)
}

/// CSV leaderboard: full precision (9 decimals) so values survive format
/// round trips; missing dataset cells stay empty.
pub fn render_csv(rows: &[LeaderboardRow]) -> String {
    let cols = dataset_columns(rows);
    let mut out = String::from("model,variant");
    for c in &cols {
        let _ = write!(out, ",{c}");
    }
    out.push_str(",average_mm\n");
    for row in rows {
        let _ = write!(out, "{},{}", row.model, row.variant.name());
        for c in &cols {
            match row.per_dataset.get(c) {
                Some(v) => {
                    let _ = write!(out, ",{v:.9}");
                }
                None => out.push(','),
            }
        }
        let _ = writeln!(out, ",{:.9}", row.average_mm);
    }
    out
}

pub fn render_json(rows: &[LeaderboardRow]) -> String {
    let mut s = serde_json::to_string_pretty(rows).expect("rows serialize");
    s.push('\n');
    s
}
