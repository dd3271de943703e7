//! Z-score outlier selection over numerical quasi-identifiers.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{AttributeKind, ColumnStats, Dataset, DatasetError, StdDevConvention};

#[derive(Debug, Error)]
pub enum OutlierError {
    #[error("threshold k must be a positive finite number, got {0}")]
    InvalidThreshold(f64),
    #[error("outlier detection needs at least one attribute")]
    NoAttributes,
    #[error("outlier attribute `{name}` is {kind}, expected numerical")]
    NotNumerical { name: String, kind: AttributeKind },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("cannot write outlier listing: {0}")]
    Io(#[from] std::io::Error),
}

/// How per-attribute flags combine into a record-level flag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CombineRule {
    /// Extreme on at least one attribute.
    #[default]
    Any,
    /// Extreme on every attribute.
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutlierConfig {
    pub k: f64,
    pub attributes: Vec<String>,
    #[serde(default)]
    pub combine: CombineRule,
    #[serde(default)]
    pub stddev: StdDevConvention,
}

impl OutlierConfig {
    pub fn new(k: f64, attributes: Vec<String>, combine: CombineRule) -> Self {
        OutlierConfig {
            k,
            attributes,
            combine,
            stddev: StdDevConvention::Population,
        }
    }

    pub fn validate(&self) -> Result<(), OutlierError> {
        if !(self.k.is_finite() && self.k > 0.0) {
            return Err(OutlierError::InvalidThreshold(self.k));
        }
        if self.attributes.is_empty() {
            return Err(OutlierError::NoAttributes);
        }
        Ok(())
    }
}

/// Standard score. A zero deviation means a constant column, which has no
/// extremes, so the score is 0.
pub fn z_score(x: f64, mean: f64, stddev: f64) -> f64 {
    if stddev == 0.0 {
        0.0
    } else {
        (x - mean) / stddev
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlaggedRecord {
    pub index: usize,
    /// One z value per configured attribute, in configuration order.
    pub z: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OutlierSet {
    pub dataset: String,
    pub attributes: Vec<String>,
    pub k: f64,
    pub combine: CombineRule,
    /// Sorted by record index.
    pub records: Vec<FlaggedRecord>,
}

impl OutlierSet {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn indices(&self) -> Vec<usize> {
        self.records.iter().map(|r| r.index).collect()
    }

    pub fn contains(&self, index: usize) -> bool {
        self.records
            .binary_search_by_key(&index, |r| r.index)
            .is_ok()
    }

    /// Attributes of a flagged record whose |z| exceeds k.
    pub fn triggering<'a>(&'a self, record: &'a FlaggedRecord) -> impl Iterator<Item = &'a str> {
        self.attributes
            .iter()
            .zip(&record.z)
            .filter(|(_, z)| z.abs() > self.k)
            .map(|(a, _)| a.as_str())
    }

    /// One line per record: the ordinal, then z for each attribute, then the
    /// triggering attributes joined by `|`.
    pub fn write_listing<W: Write>(&self, mut out: W) -> Result<(), OutlierError> {
        write!(out, "index")?;
        for a in &self.attributes {
            write!(out, ",z_{a}")?;
        }
        writeln!(out, ",triggered_by")?;
        for rec in &self.records {
            write!(out, "{}", rec.index)?;
            for z in &rec.z {
                write!(out, ",{z:.6}")?;
            }
            let trig: Vec<&str> = self.triggering(rec).collect();
            writeln!(out, ",{}", trig.join("|"))?;
        }
        Ok(())
    }
}

pub fn detect_outliers(ds: &Dataset, cfg: &OutlierConfig) -> Result<OutlierSet, OutlierError> {
    cfg.validate()?;
    let mut columns = Vec::with_capacity(cfg.attributes.len());
    for name in &cfg.attributes {
        let col = ds.column(name)?;
        let values = col.as_numbers().ok_or_else(|| OutlierError::NotNumerical {
            name: name.clone(),
            kind: col.kind(),
        })?;
        let stats = ColumnStats::compute(values, cfg.stddev);
        columns.push((values, stats));
    }

    let mut records = Vec::new();
    let mut z = Vec::with_capacity(columns.len());
    for i in 0..ds.row_count() {
        z.clear();
        // stats is Some whenever row_count > 0
        z.extend(columns.iter().map(|(values, stats)| {
            let s = stats.expect("non-empty column");
            z_score(values[i], s.mean, s.stddev)
        }));
        let extreme = |v: &f64| v.abs() > cfg.k;
        let flagged = match cfg.combine {
            CombineRule::Any => z.iter().any(extreme),
            CombineRule::All => z.iter().all(extreme),
        };
        if flagged {
            records.push(FlaggedRecord {
                index: i,
                z: z.clone(),
            });
        }
    }

    Ok(OutlierSet {
        dataset: ds.name().to_string(),
        attributes: cfg.attributes.clone(),
        k: cfg.k,
        combine: cfg.combine,
        records,
    })
}
