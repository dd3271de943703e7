//! JSON report types. Scores and other real-valued results are written with
//! six fractional digits so reports diff cleanly; everything that depends on
//! the clock or the machine lives under `run_meta.execution`.

use std::collections::BTreeMap;

use serde::ser::{SerializeMap, Serializer};
use serde::Serialize;
use serde_json::value::RawValue;

use crate::dp_synth::SynthParams;
use crate::linkage::LinkageResult;
use crate::utility::{Metric, UtilityReport};

/// Real number rendered as a JSON number with exactly six fractional digits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fixed6(pub f64);

impl Serialize for Fixed6 {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        if !self.0.is_finite() {
            return serializer.serialize_none();
        }
        let raw =
            RawValue::from_string(format!("{:.6}", self.0)).map_err(serde::ser::Error::custom)?;
        raw.serialize(serializer)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Execution {
    pub started_at_unix_ms: u128,
    pub wall_time_ms: u128,
    pub threads: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OriginalSummary {
    pub name: String,
    pub rows: usize,
    pub outlier_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunMeta {
    pub tool_version: String,
    pub config_hash: String,
    pub config: serde_json::Value,
    pub original: OriginalSummary,
    pub execution: Execution,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GeneratorMeta {
    External {
        path: String,
        #[serde(skip_serializing_if = "BTreeMap::is_empty")]
        tags: BTreeMap<String, String>,
    },
    DpIndependent {
        epsilon: f64,
        seed: u64,
        n: usize,
        num_bins: usize,
    },
}

impl GeneratorMeta {
    pub fn from_params(p: &SynthParams) -> Self {
        GeneratorMeta::DpIndependent {
            epsilon: p.epsilon,
            seed: p.seed,
            n: p.n,
            num_bins: p.num_bins,
        }
    }

    /// Numeric value of a hyperparameter: `epsilon` for generated variants,
    /// any parseable tag for external ones.
    pub fn axis_value(&self, axis: &str) -> Option<f64> {
        match self {
            GeneratorMeta::DpIndependent { epsilon, .. } if axis == "epsilon" => Some(*epsilon),
            GeneratorMeta::DpIndependent { .. } => None,
            GeneratorMeta::External { tags, .. } => tags.get(axis)?.trim().parse().ok(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricBlock {
    pub mean: Fixed6,
    pub median: Fixed6,
    pub attributes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UtilityBlock {
    pub attributes: BTreeMap<String, BTreeMap<Metric, Fixed6>>,
    pub summary: BTreeMap<Metric, MetricBlock>,
}

impl From<&UtilityReport> for UtilityBlock {
    fn from(r: &UtilityReport) -> Self {
        UtilityBlock {
            attributes: r
                .attributes
                .iter()
                .map(|a| {
                    let scores = a.scores.iter().map(|(m, v)| (*m, Fixed6(*v))).collect();
                    (a.attribute.clone(), scores)
                })
                .collect(),
            summary: r
                .summary
                .iter()
                .map(|(m, s)| {
                    (
                        *m,
                        MetricBlock {
                            mean: Fixed6(s.mean),
                            median: Fixed6(s.median),
                            attributes: s.attributes,
                        },
                    )
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LinkageSummary {
    #[serde(skip)]
    pub subset: String,
    pub qis: Vec<String>,
    pub targets: usize,
    pub variant_rows: usize,
    pub pair_count: usize,
    pub distinct_originals: usize,
    pub unique_match_count: usize,
    /// Originals with at least one possible match.
    pub match_counts: BTreeMap<usize, usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pairs_file: Option<String>,
}

impl LinkageSummary {
    pub fn new(subset: impl Into<String>, r: &LinkageResult) -> Self {
        LinkageSummary {
            subset: subset.into(),
            qis: r.qis.clone(),
            targets: r.target_count,
            variant_rows: r.variant_rows,
            pair_count: r.pair_count(),
            distinct_originals: r.distinct_originals(),
            unique_match_count: r.unique_match_count,
            match_counts: r
                .per_original_match_count
                .iter()
                .filter(|(_, &c)| c > 0)
                .map(|(&i, &c)| (i, c))
                .collect(),
            pairs_file: None,
        }
    }
}

/// Linkage summaries keyed by subset name, kept in ladder order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LinkageBlock(pub Vec<LinkageSummary>);

impl LinkageBlock {
    pub fn get(&self, subset: &str) -> Option<&LinkageSummary> {
        self.0.iter().find(|s| s.subset == subset)
    }
}

impl Serialize for LinkageBlock {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut map = serializer.serialize_map(Some(self.0.len()))?;
        for s in &self.0 {
            map.serialize_entry(&s.subset, s)?;
        }
        map.end()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum VariantStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VariantEntry {
    pub name: String,
    pub status: VariantStatus,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub generator: GeneratorMeta,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rows: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub utility: Option<UtilityBlock>,
    pub linkage: LinkageBlock,
    #[serde(skip)]
    pub utility_means: BTreeMap<Metric, f64>,
}

impl VariantEntry {
    pub fn is_ok(&self) -> bool {
        self.status == VariantStatus::Ok
    }
}

/// One point of a risk/utility tradeoff curve: all runs sharing one value of
/// a hyperparameter, for one QI subset.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurveRow {
    pub axis: String,
    pub value: Fixed6,
    pub subset: String,
    pub runs: usize,
    pub unique_match_mean: Fixed6,
    pub unique_match_std: Fixed6,
    pub unique_match_min: usize,
    pub unique_match_max: usize,
    pub pair_count_mean: Fixed6,
    pub utility_means: BTreeMap<Metric, Fixed6>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditReport {
    pub run_meta: RunMeta,
    pub variants: Vec<VariantEntry>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub tradeoff: Vec<CurveRow>,
}

impl AuditReport {
    pub fn variant(&self, name: &str) -> Option<&VariantEntry> {
        self.variants.iter().find(|v| v.name == name)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// The report without `run_meta.execution`; stable across runs with the
    /// same configuration and seeds.
    pub fn to_deterministic_json(&self) -> String {
        let mut value = serde_json::to_value(self).expect("report serializes");
        if let Some(meta) = value.get_mut("run_meta").and_then(|m| m.as_object_mut()) {
            meta.remove("execution");
        }
        serde_json::to_string_pretty(&value).expect("report serializes")
    }
}

/// Groups successful variants by the numeric value of `axis` and summarizes
/// each group per QI subset. Rows come out sorted by value, then in ladder
/// order.
pub fn tradeoff_rows(variants: &[VariantEntry], axis: &str, ladder: &[String]) -> Vec<CurveRow> {
    let mut groups: Vec<(f64, Vec<&VariantEntry>)> = Vec::new();
    for v in variants.iter().filter(|v| v.is_ok()) {
        let Some(x) = v.generator.axis_value(axis) else {
            continue;
        };
        match groups.iter_mut().find(|(g, _)| *g == x) {
            Some((_, members)) => members.push(v),
            None => groups.push((x, vec![v])),
        }
    }
    groups.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut rows = Vec::new();
    for (value, members) in &groups {
        let runs = members.len();
        let mut utility_means = BTreeMap::new();
        for metric in Metric::ALL {
            let vals: Vec<f64> = members
                .iter()
                .filter_map(|m| m.utility_means.get(&metric).copied())
                .collect();
            if !vals.is_empty() {
                utility_means.insert(metric, Fixed6(vals.iter().sum::<f64>() / vals.len() as f64));
            }
        }
        for subset in ladder {
            let uniques: Vec<usize> = members
                .iter()
                .filter_map(|m| m.linkage.get(subset).map(|s| s.unique_match_count))
                .collect();
            if uniques.is_empty() {
                continue;
            }
            let pairs: Vec<usize> = members
                .iter()
                .filter_map(|m| m.linkage.get(subset).map(|s| s.pair_count))
                .collect();
            let k = uniques.len() as f64;
            let mean = uniques.iter().sum::<usize>() as f64 / k;
            let var = uniques
                .iter()
                .map(|&u| (u as f64 - mean).powi(2))
                .sum::<f64>()
                / k;
            rows.push(CurveRow {
                axis: axis.to_string(),
                value: Fixed6(*value),
                subset: subset.clone(),
                runs,
                unique_match_mean: Fixed6(mean),
                unique_match_std: Fixed6(var.sqrt()),
                unique_match_min: *uniques.iter().min().expect("non-empty"),
                unique_match_max: *uniques.iter().max().expect("non-empty"),
                pair_count_mean: Fixed6(pairs.iter().sum::<usize>() as f64 / pairs.len() as f64),
                utility_means: utility_means.clone(),
            });
        }
    }
    rows
}
