//! Column-level utility metrics comparing a synthetic column with its real
//! counterpart. Every score lies in `[0, 1]` and equals 1 for an identical
//! column.

use std::collections::{BTreeMap, HashSet};
use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use crate::dataset::{median, min_max, AttributeKind, Column, Dataset};

#[derive(Debug, Error, PartialEq)]
pub enum UtilityError {
    #[error("real column is empty")]
    EmptyReal,
    #[error("synthetic column is empty")]
    EmptySynthetic,
    #[error("column kinds differ: real is {real}, synthetic is {synthetic}")]
    KindMismatch {
        real: AttributeKind,
        synthetic: AttributeKind,
    },
    #[error("variant `{0}` does not share the original schema")]
    SchemaMismatch(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub enum Metric {
    BoundaryAdherence,
    CategoryCoverage,
    RangeCoverage,
    StatisticSimilarity,
    AttributeCoverage,
}

impl Metric {
    pub const ALL: [Metric; 5] = [
        Metric::BoundaryAdherence,
        Metric::CategoryCoverage,
        Metric::RangeCoverage,
        Metric::StatisticSimilarity,
        Metric::AttributeCoverage,
    ];

    pub fn applies_to(self, kind: AttributeKind) -> bool {
        match self {
            Metric::BoundaryAdherence | Metric::RangeCoverage | Metric::StatisticSimilarity => {
                kind == AttributeKind::Numerical
            }
            Metric::CategoryCoverage => kind == AttributeKind::Categorical,
            Metric::AttributeCoverage => true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Statistic {
    #[default]
    Median,
}

/// Fraction of synthetic values inside the real `[min, max]`.
pub fn boundary_adherence(real: &[f64], synth: &[f64]) -> Result<f64, UtilityError> {
    let (lo, hi) = min_max(real).ok_or(UtilityError::EmptyReal)?;
    if synth.is_empty() {
        return Err(UtilityError::EmptySynthetic);
    }
    let inside = synth.iter().filter(|&&v| lo <= v && v <= hi).count();
    Ok(inside as f64 / synth.len() as f64)
}

/// Share of real categories that also appear in the synthetic column.
pub fn category_coverage<S: AsRef<str>>(real: &[S], synth: &[S]) -> Result<f64, UtilityError> {
    let real_set: HashSet<&str> = real.iter().map(AsRef::as_ref).collect();
    if real_set.is_empty() {
        return Err(UtilityError::EmptyReal);
    }
    let synth_set: HashSet<&str> = synth.iter().map(AsRef::as_ref).collect();
    let covered = real_set.intersection(&synth_set).count();
    Ok(covered as f64 / real_set.len() as f64)
}

/// One minus the normalized shortfall of the synthetic range at each end of
/// the real range. A constant real column scores 1 if the synthetic column
/// contains that value, else 0.
pub fn range_coverage(real: &[f64], synth: &[f64]) -> Result<f64, UtilityError> {
    let (real_lo, real_hi) = min_max(real).ok_or(UtilityError::EmptyReal)?;
    let (syn_lo, syn_hi) = min_max(synth).ok_or(UtilityError::EmptySynthetic)?;
    let width = real_hi - real_lo;
    if width == 0.0 {
        return Ok(if synth.contains(&real_lo) { 1.0 } else { 0.0 });
    }
    let low_gap = ((syn_lo - real_lo) / width).max(0.0);
    let high_gap = ((real_hi - syn_hi) / width).max(0.0);
    Ok((1.0 - (low_gap + high_gap)).max(0.0))
}

/// One minus the distance between the statistics, normalized by the real
/// range and clipped to `[0, 1]`. A constant real column scores 1 if the
/// statistics are equal, else 0.
pub fn statistic_similarity(
    real: &[f64],
    synth: &[f64],
    stat: Statistic,
) -> Result<f64, UtilityError> {
    let (real_lo, real_hi) = min_max(real).ok_or(UtilityError::EmptyReal)?;
    if synth.is_empty() {
        return Err(UtilityError::EmptySynthetic);
    }
    let (real_stat, syn_stat) = match stat {
        Statistic::Median => (
            median(real).ok_or(UtilityError::EmptyReal)?,
            median(synth).ok_or(UtilityError::EmptySynthetic)?,
        ),
    };
    let width = real_hi - real_lo;
    if width == 0.0 {
        return Ok(if real_stat == syn_stat { 1.0 } else { 0.0 });
    }
    Ok((1.0 - (syn_stat - real_stat).abs() / width).clamp(0.0, 1.0))
}

/// Range coverage for numerical columns, category coverage for categorical.
pub fn attribute_coverage(real: &Column, synth: &Column) -> Result<f64, UtilityError> {
    match (real, synth) {
        (Column::Numerical(r), Column::Numerical(s)) => range_coverage(r, s),
        (Column::Categorical(r), Column::Categorical(s)) => category_coverage::<Arc<str>>(r, s),
        _ => Err(UtilityError::KindMismatch {
            real: real.kind(),
            synthetic: synth.kind(),
        }),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttributeScores {
    pub attribute: String,
    pub kind: AttributeKind,
    pub scores: BTreeMap<Metric, f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricSummary {
    pub mean: f64,
    pub median: f64,
    /// Number of attributes the metric applies to.
    pub attributes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UtilityReport {
    pub attributes: Vec<AttributeScores>,
    /// Over the attributes where each metric is defined, weighted equally.
    pub summary: BTreeMap<Metric, MetricSummary>,
}

impl UtilityReport {
    pub fn score(&self, attribute: &str, metric: Metric) -> Option<f64> {
        self.attributes
            .iter()
            .find(|a| a.attribute == attribute)?
            .scores
            .get(&metric)
            .copied()
    }

    pub fn mean(&self, metric: Metric) -> Option<f64> {
        self.summary.get(&metric).map(|s| s.mean)
    }
}

/// Scores every attribute of `original` against the same attribute of
/// `variant`.
pub fn utility_report(
    original: &Dataset,
    variant: &Dataset,
) -> Result<UtilityReport, UtilityError> {
    if original.schema() != variant.schema() {
        return Err(UtilityError::SchemaMismatch(variant.name().to_string()));
    }
    let mut attributes = Vec::with_capacity(original.schema().len());
    for ((attr, real), synth) in original
        .schema()
        .attributes()
        .iter()
        .zip(original.columns())
        .zip(variant.columns())
    {
        let mut scores = BTreeMap::new();
        match (real, synth) {
            (Column::Numerical(r), Column::Numerical(s)) => {
                scores.insert(Metric::BoundaryAdherence, boundary_adherence(r, s)?);
                let range = range_coverage(r, s)?;
                scores.insert(Metric::RangeCoverage, range);
                scores.insert(
                    Metric::StatisticSimilarity,
                    statistic_similarity(r, s, Statistic::Median)?,
                );
                scores.insert(Metric::AttributeCoverage, range);
            }
            (Column::Categorical(r), Column::Categorical(s)) => {
                let coverage = category_coverage::<Arc<str>>(r, s)?;
                scores.insert(Metric::CategoryCoverage, coverage);
                scores.insert(Metric::AttributeCoverage, coverage);
            }
            _ => {
                return Err(UtilityError::KindMismatch {
                    real: real.kind(),
                    synthetic: synth.kind(),
                })
            }
        }
        attributes.push(AttributeScores {
            attribute: attr.name.clone(),
            kind: attr.kind,
            scores,
        });
    }

    let mut summary = BTreeMap::new();
    for metric in Metric::ALL {
        let values: Vec<f64> = attributes
            .iter()
            .filter_map(|a| a.scores.get(&metric).copied())
            .collect();
        if values.is_empty() {
            continue;
        }
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        summary.insert(
            metric,
            MetricSummary {
                mean,
                median: median(&values).expect("non-empty"),
                attributes: values.len(),
            },
        );
    }
    Ok(UtilityReport {
        attributes,
        summary,
    })
}
