//! Linkage attack engine.
//!
//! Targets (outliers of the original data) are paired with rows of a released
//! variant, every pair is scored on each quasi-identifier, and a pair is a
//! possible match only when every score reaches its threshold. Matches are
//! aggregated per original record; an original with exactly one possible
//! match is a unique match, the highest-risk case.
//!
//! The composable path ([`candidate_pairs`] → [`score_pairs`] →
//! [`filter_matches`]) streams pairs without materializing the cross product.
//! [`link`] fuses the same steps, parallelized over targets; both produce the
//! same [`LinkageResult`].

use std::collections::{BTreeMap, HashMap};
use std::io::Write;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::comparators::{Comparator, ComparatorError};
use crate::dataset::{AttributeKind, Dataset, DatasetError, Schema};
use crate::outliers::{detect_outliers, OutlierConfig, OutlierError};

#[derive(Debug, Error)]
pub enum LinkageError {
    #[error("no quasi-identifiers configured")]
    NoQis,
    #[error("quasi-identifier `{0}` configured twice")]
    DuplicateQi(String),
    #[error("quasi-identifier `{0}` is not configured")]
    UnknownQi(String),
    #[error("quasi-identifier `{name}`: {source}")]
    Comparator {
        name: String,
        #[source]
        source: ComparatorError,
    },
    #[error("quasi-identifier `{name}`: threshold {threshold} outside (0, 1]")]
    InvalidThreshold { name: String, threshold: f64 },
    #[error("quasi-identifier `{name}` is {actual} but its comparator expects {expected}")]
    KindMismatch {
        name: String,
        actual: AttributeKind,
        expected: AttributeKind,
    },
    #[error("blocking attribute `{0}` must be a categorical quasi-identifier with threshold 1")]
    InvalidBlocking(String),
    #[error("variant `{0}` does not share the original schema")]
    SchemaMismatch(String),
    #[error("target index {index} out of range for {rows} rows")]
    TargetOutOfRange { index: usize, rows: usize },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Outliers(#[from] OutlierError),
    #[error("cannot write match pairs: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot write match pairs: {0}")]
    Csv(#[from] csv::Error),
}

/// Comparator and match threshold for one quasi-identifier.
#[derive(Debug, Clone, PartialEq)]
pub struct QiRule {
    pub attribute: String,
    pub comparator: Comparator,
    pub threshold: f64,
}

impl QiRule {
    /// Rule with the comparator's default threshold (0.5 numeric, 1 categorical).
    pub fn new(attribute: impl Into<String>, comparator: Comparator) -> Self {
        QiRule {
            attribute: attribute.into(),
            threshold: comparator.default_threshold(),
            comparator,
        }
    }

    pub fn with_threshold(mut self, threshold: f64) -> Self {
        self.threshold = threshold;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QiConfig {
    rules: Vec<QiRule>,
}

impl QiConfig {
    pub fn new(rules: Vec<QiRule>) -> Result<Self, LinkageError> {
        if rules.is_empty() {
            return Err(LinkageError::NoQis);
        }
        for (i, rule) in rules.iter().enumerate() {
            if rules[..i].iter().any(|r| r.attribute == rule.attribute) {
                return Err(LinkageError::DuplicateQi(rule.attribute.clone()));
            }
            rule.comparator
                .validate()
                .map_err(|source| LinkageError::Comparator {
                    name: rule.attribute.clone(),
                    source,
                })?;
            if !(rule.threshold > 0.0 && rule.threshold <= 1.0) {
                return Err(LinkageError::InvalidThreshold {
                    name: rule.attribute.clone(),
                    threshold: rule.threshold,
                });
            }
        }
        Ok(QiConfig { rules })
    }

    pub fn rules(&self) -> &[QiRule] {
        &self.rules
    }

    pub fn names(&self) -> Vec<String> {
        self.rules.iter().map(|r| r.attribute.clone()).collect()
    }

    pub fn rule(&self, name: &str) -> Option<&QiRule> {
        self.rules.iter().find(|r| r.attribute == name)
    }

    /// Restriction to the named QIs, in the order given.
    pub fn subset<S: AsRef<str>>(&self, names: &[S]) -> Result<QiConfig, LinkageError> {
        let rules = names
            .iter()
            .map(|n| {
                self.rule(n.as_ref())
                    .cloned()
                    .ok_or_else(|| LinkageError::UnknownQi(n.as_ref().to_string()))
            })
            .collect::<Result<Vec<_>, _>>()?;
        QiConfig::new(rules)
    }

    pub fn check_schema(&self, schema: &Schema) -> Result<(), LinkageError> {
        for rule in &self.rules {
            let attr = schema
                .get(&rule.attribute)
                .ok_or_else(|| DatasetError::UnknownAttribute(rule.attribute.clone()))?;
            if attr.kind != rule.comparator.kind() {
                return Err(LinkageError::KindMismatch {
                    name: rule.attribute.clone(),
                    actual: attr.kind,
                    expected: rule.comparator.kind(),
                });
            }
        }
        Ok(())
    }
}

/// Which variant rows an original outlier is compared against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum VariantScope {
    /// Every released row.
    #[default]
    AllRows,
    /// Only the variant's own outliers, selected with the same rule.
    OutliersOnly,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackOptions {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub blocking: Option<String>,
    #[serde(default)]
    pub variant_scope: VariantScope,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoredPair {
    pub original: usize,
    pub synthetic: usize,
    /// One score per QI, in configuration order.
    pub scores: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LinkageResult {
    pub qis: Vec<String>,
    /// Possible matches sorted by (original, synthetic).
    pub pairs: Vec<ScoredPair>,
    /// Every target, including those with no match.
    pub per_original_match_count: BTreeMap<usize, usize>,
    pub unique_match_count: usize,
    pub target_count: usize,
    pub variant_rows: usize,
}

impl LinkageResult {
    pub fn pair_count(&self) -> usize {
        self.pairs.len()
    }

    /// Originals with at least one possible match.
    pub fn distinct_originals(&self) -> usize {
        self.per_original_match_count
            .values()
            .filter(|&&c| c > 0)
            .count()
    }

    pub fn match_set(&self) -> Vec<(usize, usize)> {
        self.pairs
            .iter()
            .map(|p| (p.original, p.synthetic))
            .collect()
    }

    /// Header `original_index,synthetic_index,score_<qi>...`; scores with six
    /// fractional digits.
    pub fn write_pairs_csv<W: Write>(&self, writer: W) -> Result<(), LinkageError> {
        let mut out = csv::Writer::from_writer(writer);
        let mut header = vec!["original_index".to_string(), "synthetic_index".to_string()];
        header.extend(self.qis.iter().map(|q| format!("score_{q}")));
        out.write_record(&header)?;
        for pair in &self.pairs {
            let mut row = vec![pair.original.to_string(), pair.synthetic.to_string()];
            row.extend(pair.scores.iter().map(|s| format!("{s:.6}")));
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }
}

enum QiColumns<'a> {
    Numerical(&'a [f64], &'a [f64]),
    Categorical(&'a [Arc<str>], &'a [Arc<str>]),
}

struct ResolvedQi<'a> {
    comparator: Comparator,
    threshold: f64,
    columns: QiColumns<'a>,
}

impl ResolvedQi<'_> {
    fn score(&self, original: usize, synthetic: usize) -> f64 {
        match &self.columns {
            QiColumns::Numerical(a, b) => {
                self.comparator.compare_numbers(a[original], b[synthetic])
            }
            QiColumns::Categorical(a, b) => {
                self.comparator.compare_strings(&a[original], &b[synthetic])
            }
        }
    }

    /// Score if it reaches the threshold. Categorical comparators at
    /// threshold 1 reduce to string equality.
    fn passing_score(&self, original: usize, synthetic: usize) -> Option<f64> {
        if let QiColumns::Categorical(a, b) = &self.columns {
            if self.threshold >= 1.0 {
                return (a[original] == b[synthetic]).then_some(1.0);
            }
        }
        let s = self.score(original, synthetic);
        (s >= self.threshold).then_some(s)
    }
}

fn resolve<'a>(
    original: &'a Dataset,
    variant: &'a Dataset,
    cfg: &QiConfig,
) -> Result<Vec<ResolvedQi<'a>>, LinkageError> {
    if original.schema() != variant.schema() {
        return Err(LinkageError::SchemaMismatch(variant.name().to_string()));
    }
    cfg.check_schema(original.schema())?;
    cfg.rules()
        .iter()
        .map(|rule| {
            let columns = match rule.comparator.kind() {
                AttributeKind::Numerical => QiColumns::Numerical(
                    original.numeric_column(&rule.attribute)?,
                    variant.numeric_column(&rule.attribute)?,
                ),
                AttributeKind::Categorical => QiColumns::Categorical(
                    original.categorical_column(&rule.attribute)?,
                    variant.categorical_column(&rule.attribute)?,
                ),
            };
            Ok(ResolvedQi {
                comparator: rule.comparator,
                threshold: rule.threshold,
                columns,
            })
        })
        .collect()
}

fn check_targets(targets: &[usize], rows: usize) -> Result<(), LinkageError> {
    match targets.iter().find(|&&t| t >= rows) {
        Some(&index) => Err(LinkageError::TargetOutOfRange { index, rows }),
        None => Ok(()),
    }
}

/// Variant rows grouped by the value of a blocking attribute.
struct BlockIndex<'a> {
    keys: &'a [Arc<str>],
    rows: HashMap<&'a str, Vec<usize>>,
}

impl<'a> BlockIndex<'a> {
    fn build(
        attribute: &str,
        original: &'a Dataset,
        variant: &'a Dataset,
        eligible: &[usize],
        cfg: &QiConfig,
    ) -> Result<Self, LinkageError> {
        let valid = cfg.rule(attribute).is_some_and(|r| {
            r.comparator.kind() == AttributeKind::Categorical && r.threshold >= 1.0
        });
        if !valid {
            return Err(LinkageError::InvalidBlocking(attribute.to_string()));
        }
        let keys = original.categorical_column(attribute)?;
        let variant_keys = variant.categorical_column(attribute)?;
        let mut rows: HashMap<&'a str, Vec<usize>> = HashMap::new();
        for &j in eligible {
            rows.entry(&*variant_keys[j]).or_default().push(j);
        }
        Ok(BlockIndex { keys, rows })
    }

    fn rows_for(&self, target: usize) -> &[usize] {
        self.rows
            .get(&*self.keys[target])
            .map_or(&[], Vec::as_slice)
    }
}

/// Candidate (original, synthetic) pairs. Without blocking this is the full
/// cross product of `targets` and `eligible`; with blocking only pairs that
/// agree exactly on the blocking attribute are produced.
pub struct CandidatePairs<'a> {
    inner: Box<dyn Iterator<Item = (usize, usize)> + Send + 'a>,
}

impl Iterator for CandidatePairs<'_> {
    type Item = (usize, usize);

    fn next(&mut self) -> Option<Self::Item> {
        self.inner.next()
    }
}

pub fn candidate_pairs<'a>(
    original: &'a Dataset,
    targets: &'a [usize],
    variant: &'a Dataset,
    eligible: &'a [usize],
    blocking: Option<&str>,
    cfg: &QiConfig,
) -> Result<CandidatePairs<'a>, LinkageError> {
    check_targets(targets, original.row_count())?;
    check_targets(eligible, variant.row_count())?;
    let inner: Box<dyn Iterator<Item = (usize, usize)> + Send + 'a> = match blocking {
        None => Box::new(
            targets
                .iter()
                .flat_map(move |&t| eligible.iter().map(move |&j| (t, j))),
        ),
        Some(attr) => {
            let index = BlockIndex::build(attr, original, variant, eligible, cfg)?;
            let pairs: Vec<(usize, usize)> = targets
                .iter()
                .flat_map(|&t| index.rows_for(t).iter().map(move |&j| (t, j)))
                .collect();
            Box::new(pairs.into_iter())
        }
    };
    Ok(CandidatePairs { inner })
}

/// Scores every pair on every QI.
pub fn score_pairs<'a, I>(
    pairs: I,
    original: &'a Dataset,
    variant: &'a Dataset,
    cfg: &QiConfig,
) -> Result<impl Iterator<Item = ScoredPair> + 'a, LinkageError>
where
    I: IntoIterator<Item = (usize, usize)>,
    I::IntoIter: 'a,
{
    let qis = resolve(original, variant, cfg)?;
    Ok(pairs.into_iter().map(move |(o, s)| ScoredPair {
        original: o,
        synthetic: s,
        scores: qis.iter().map(|q| q.score(o, s)).collect(),
    }))
}

/// Keeps pairs whose every score reaches its threshold and aggregates the
/// per-original counts. Input order does not matter.
pub fn filter_matches<I>(
    scored: I,
    cfg: &QiConfig,
    targets: &[usize],
    variant_rows: usize,
) -> LinkageResult
where
    I: IntoIterator<Item = ScoredPair>,
{
    let thresholds: Vec<f64> = cfg.rules().iter().map(|r| r.threshold).collect();
    let pairs: Vec<ScoredPair> = scored
        .into_iter()
        .filter(|p| p.scores.iter().zip(&thresholds).all(|(s, t)| s >= t))
        .collect();
    assemble(cfg.names(), pairs, targets, variant_rows)
}

fn assemble(
    qis: Vec<String>,
    mut pairs: Vec<ScoredPair>,
    targets: &[usize],
    variant_rows: usize,
) -> LinkageResult {
    pairs.sort_by_key(|p| (p.original, p.synthetic));
    let mut counts: BTreeMap<usize, usize> = targets.iter().map(|&t| (t, 0)).collect();
    for p in &pairs {
        *counts.entry(p.original).or_insert(0) += 1;
    }
    let unique_match_count = counts.values().filter(|&&c| c == 1).count();
    LinkageResult {
        qis,
        pairs,
        per_original_match_count: counts,
        unique_match_count,
        target_count: targets.len(),
        variant_rows,
    }
}

/// Fused, parallel linkage of `targets` against the `eligible` variant rows.
/// Produces the same result as the streaming composition for any thread
/// count.
pub fn link(
    original: &Dataset,
    targets: &[usize],
    variant: &Dataset,
    eligible: &[usize],
    cfg: &QiConfig,
    blocking: Option<&str>,
) -> Result<LinkageResult, LinkageError> {
    check_targets(targets, original.row_count())?;
    check_targets(eligible, variant.row_count())?;
    let qis = resolve(original, variant, cfg)?;
    let index = blocking
        .map(|attr| BlockIndex::build(attr, original, variant, eligible, cfg))
        .transpose()?;

    let per_target: Vec<Vec<ScoredPair>> = targets
        .par_iter()
        .map(|&t| {
            let rows = match &index {
                Some(ix) => ix.rows_for(t),
                None => eligible,
            };
            rows.iter()
                .filter_map(|&j| {
                    let scores = qis
                        .iter()
                        .map(|q| q.passing_score(t, j))
                        .collect::<Option<Vec<f64>>>()?;
                    Some(ScoredPair {
                        original: t,
                        synthetic: j,
                        scores,
                    })
                })
                .collect()
        })
        .collect();

    let pairs = per_target.into_iter().flatten().collect();
    Ok(assemble(cfg.names(), pairs, targets, eligible.len()))
}

/// Outlier detection on the original followed by linkage against the variant,
/// optionally restricted to a subset of the configured QIs.
pub fn attack(
    original: &Dataset,
    variant: &Dataset,
    outlier_cfg: &OutlierConfig,
    qi_cfg: &QiConfig,
    qi_subset: Option<&[String]>,
    options: &AttackOptions,
) -> Result<LinkageResult, LinkageError> {
    let targets = detect_outliers(original, outlier_cfg)?.indices();
    attack_targets(
        original,
        &targets,
        variant,
        outlier_cfg,
        qi_cfg,
        qi_subset,
        options,
    )
}

/// Like [`attack`], with the original outliers already selected.
pub fn attack_targets(
    original: &Dataset,
    targets: &[usize],
    variant: &Dataset,
    outlier_cfg: &OutlierConfig,
    qi_cfg: &QiConfig,
    qi_subset: Option<&[String]>,
    options: &AttackOptions,
) -> Result<LinkageResult, LinkageError> {
    let cfg = match qi_subset {
        Some(names) => qi_cfg.subset(names)?,
        None => qi_cfg.clone(),
    };
    let eligible: Vec<usize> = match options.variant_scope {
        VariantScope::AllRows => (0..variant.row_count()).collect(),
        VariantScope::OutliersOnly => detect_outliers(variant, outlier_cfg)?.indices(),
    };
    // blocking on a QI outside the active subset would drop valid pairs
    let blocking = options
        .blocking
        .as_deref()
        .filter(|b| cfg.rule(b).is_some() || qi_subset.is_none());
    link(original, targets, variant, &eligible, &cfg, blocking)
}
