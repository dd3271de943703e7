//! On-disk run configuration (TOML). Parsing is strict: unknown keys are
//! errors.
//!
//! ```toml
//! [paths]
//! original = "data/original.csv"
//! output_dir = "out"
//!
//! [[attribute]]
//! name = "age"
//! kind = "numerical"
//! role = "qi"
//!
//! [outliers]
//! k = 3.0
//! attributes = ["age"]
//!
//! [[qi]]
//! attribute = "age"
//! comparator = "gauss"
//! offset = 5.0
//! scale = 5.0
//! ```

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audit::{AttackSettings, AuditPlan, QiSubset, SweepConfig, VariantSource, VariantSpec};
use crate::comparators::Comparator;
use crate::dataset::{Attribute, AttributeRole, MissingPolicy, Schema, StdDevConvention};
use crate::dp_synth::{SynthParams, DEFAULT_NUM_BINS};
use crate::linkage::{AttackOptions, QiConfig, QiRule};
use crate::outliers::{CombineRule, OutlierConfig};

/// Overrides `paths.output_dir`.
pub const OUTPUT_DIR_ENV: &str = "OUTLIER_AUDIT_OUTPUT_DIR";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("config {path}: {source}")]
    Parse {
        path: String,
        #[source]
        source: toml::de::Error,
    },
    #[error("config: {0}")]
    Invalid(String),
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub original: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    #[serde(default)]
    pub missing: MissingPolicy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComparatorKind {
    Gauss,
    Levenshtein,
    Exact,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QiEntry {
    pub attribute: String,
    pub comparator: ComparatorKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offset: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
}

impl QiEntry {
    fn to_rule(&self) -> Result<QiRule, ConfigError> {
        let comparator = match (self.comparator, self.offset, self.scale) {
            (ComparatorKind::Gauss, Some(offset), Some(scale)) => {
                Comparator::Gauss { offset, scale }
            }
            (ComparatorKind::Gauss, _, _) => {
                return Err(invalid(format!(
                    "qi `{}`: gauss needs offset and scale",
                    self.attribute
                )))
            }
            (_, None, None) => match self.comparator {
                ComparatorKind::Levenshtein => Comparator::Levenshtein,
                _ => Comparator::Exact,
            },
            _ => {
                return Err(invalid(format!(
                    "qi `{}`: offset and scale apply to gauss only",
                    self.attribute
                )))
            }
        };
        let rule = QiRule::new(self.attribute.clone(), comparator);
        Ok(match self.threshold {
            Some(t) => rule.with_threshold(t),
            None => rule,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSection {
    pub epsilon: f64,
    /// Defaults to the original row count.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default = "default_bins")]
    pub num_bins: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_bins() -> usize {
    DEFAULT_NUM_BINS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateEntry {
    pub epsilon: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default = "default_bins")]
    pub num_bins: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariantEntryConfig {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub tags: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generate: Option<GenerateEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LadderEntry {
    pub name: String,
    pub qis: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub grid: Vec<f64>,
    #[serde(default = "one")]
    pub repeats: usize,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default = "default_bins")]
    pub num_bins: usize,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutliersSection {
    #[serde(default = "default_k")]
    pub k: f64,
    pub attributes: Vec<String>,
    #[serde(default)]
    pub combine: CombineRule,
    #[serde(default)]
    pub stddev: StdDevConvention,
}

fn default_k() -> f64 {
    3.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub paths: PathsSection,
    #[serde(default)]
    pub dataset: DatasetSection,
    #[serde(rename = "attribute")]
    pub attributes: Vec<Attribute>,
    pub outliers: OutliersSection,
    #[serde(default, rename = "qi")]
    pub qis: Vec<QiEntry>,
    #[serde(default)]
    pub linkage: AttackOptions,
    #[serde(default, rename = "ladder", skip_serializing_if = "Vec::is_empty")]
    pub ladder: Vec<LadderEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub synth: Option<SynthSection>,
    #[serde(default, rename = "variant", skip_serializing_if = "Vec::is_empty")]
    pub variants: Vec<VariantEntryConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSection>,
}

/// A parsed config and the directory its relative paths resolve against.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedConfig {
    pub config: RunConfig,
    pub base_dir: PathBuf,
}

impl RunConfig {
    pub fn parse(text: &str, origin: &str) -> Result<RunConfig, ConfigError> {
        toml::from_str(text).map_err(|source| ConfigError::Parse {
            path: origin.to_string(),
            source,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes to toml")
    }

    /// The configuration as echoed into reports.
    pub fn echo(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes to json")
    }

    pub fn from_echo(value: &serde_json::Value) -> Result<RunConfig, ConfigError> {
        serde_json::from_value(value.clone()).map_err(|e| invalid(e.to_string()))
    }

    pub fn schema(&self) -> Result<Schema, ConfigError> {
        if self.attributes.is_empty() {
            return Err(invalid("no [[attribute]] entries"));
        }
        Schema::new(self.attributes.clone()).map_err(|e| invalid(e.to_string()))
    }

    pub fn outlier_config(&self) -> Result<OutlierConfig, ConfigError> {
        let o = &self.outliers;
        let cfg = OutlierConfig {
            k: o.k,
            attributes: o.attributes.clone(),
            combine: o.combine,
            stddev: o.stddev,
        };
        cfg.validate().map_err(|e| invalid(e.to_string()))?;
        let schema = self.schema()?;
        for a in &cfg.attributes {
            match schema.get(a) {
                None => return Err(invalid(format!("outlier attribute `{a}` is not declared"))),
                Some(attr) if attr.kind != crate::dataset::AttributeKind::Numerical => {
                    return Err(invalid(format!("outlier attribute `{a}` is not numerical")))
                }
                Some(_) => {}
            }
        }
        Ok(cfg)
    }

    pub fn qi_config(&self) -> Result<QiConfig, ConfigError> {
        if self.qis.is_empty() {
            return Err(invalid("no [[qi]] entries"));
        }
        let rules = self
            .qis
            .iter()
            .map(QiEntry::to_rule)
            .collect::<Result<Vec<_>, _>>()?;
        let cfg = QiConfig::new(rules).map_err(|e| invalid(e.to_string()))?;
        let schema = self.schema()?;
        cfg.check_schema(&schema)
            .map_err(|e| invalid(e.to_string()))?;
        for rule in cfg.rules() {
            if schema.get(&rule.attribute).map(|a| a.role) != Some(AttributeRole::Qi) {
                return Err(invalid(format!(
                    "qi `{}` is not declared with role = \"qi\"",
                    rule.attribute
                )));
            }
        }
        Ok(cfg)
    }

    pub fn attack_settings(&self) -> Result<AttackSettings, ConfigError> {
        let settings = AttackSettings {
            outliers: self.outlier_config()?,
            qi: self.qi_config()?,
            ladder: self
                .ladder
                .iter()
                .map(|l| QiSubset {
                    name: l.name.clone(),
                    qis: l.qis.clone(),
                })
                .collect(),
            options: self.linkage.clone(),
        };
        settings
            .validate(&self.schema()?)
            .map_err(|e| invalid(e.to_string()))?;
        Ok(settings)
    }
}

impl LoadedConfig {
    pub fn load(path: &Path) -> Result<LoadedConfig, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.display().to_string(),
            source,
        })?;
        let config = RunConfig::parse(&text, &path.display().to_string())?;
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(LoadedConfig { config, base_dir })
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// The original dataset path: `--original` if given, else `paths.original`.
    pub fn original_path(&self, flag: Option<&Path>) -> Result<PathBuf, ConfigError> {
        match (flag, &self.config.paths.original) {
            (Some(p), _) => Ok(p.to_path_buf()),
            (None, Some(p)) => Ok(self.resolve(p)),
            (None, None) => Err(invalid(
                "no original dataset: set paths.original or pass --original",
            )),
        }
    }

    /// Output directory precedence: flag, then environment, then config.
    pub fn output_dir(&self, flag: Option<&Path>) -> Option<PathBuf> {
        if let Some(p) = flag {
            return Some(p.to_path_buf());
        }
        if let Some(p) = std::env::var_os(OUTPUT_DIR_ENV).filter(|v| !v.is_empty()) {
            return Some(PathBuf::from(p));
        }
        self.config
            .paths
            .output_dir
            .as_ref()
            .map(|p| self.resolve(p))
    }

    pub fn audit_plan(
        &self,
        original: PathBuf,
        output_dir: Option<PathBuf>,
        original_rows: Option<usize>,
    ) -> Result<AuditPlan, ConfigError> {
        let cfg = &self.config;
        if cfg.variants.is_empty() {
            return Err(invalid("no [[variant]] entries"));
        }
        let mut variants = Vec::with_capacity(cfg.variants.len());
        for v in &cfg.variants {
            let source = match (&v.path, &v.generate) {
                (Some(path), None) => VariantSource::File {
                    path: self.resolve(path),
                    tags: v.tags.clone(),
                },
                (None, Some(g)) => {
                    if !v.tags.is_empty() {
                        return Err(invalid(format!(
                            "variant `{}`: tags apply to file variants only",
                            v.name
                        )));
                    }
                    let n = match (g.n, original_rows) {
                        (Some(n), _) | (None, Some(n)) => n,
                        (None, None) => {
                            return Err(invalid(format!("variant `{}`: n is required", v.name)))
                        }
                    };
                    VariantSource::Generate(SynthParams {
                        epsilon: g.epsilon,
                        n,
                        num_bins: g.num_bins,
                        seed: g.seed,
                    })
                }
                _ => {
                    return Err(invalid(format!(
                        "variant `{}` needs exactly one of path or generate",
                        v.name
                    )))
                }
            };
            variants.push(VariantSpec {
                name: v.name.clone(),
                source,
            });
        }
        let plan = AuditPlan {
            original,
            schema: cfg.schema()?,
            missing: cfg.dataset.missing,
            variants,
            settings: cfg.attack_settings()?,
            output_dir,
            config_echo: cfg.echo(),
        };
        plan.validate().map_err(|e| invalid(e.to_string()))?;
        Ok(plan)
    }

    pub fn sweep_config(&self, output_dir: Option<PathBuf>) -> Result<SweepConfig, ConfigError> {
        let cfg = &self.config;
        let sweep = cfg
            .sweep
            .as_ref()
            .ok_or_else(|| invalid("no [sweep] section"))?;
        if sweep.grid.is_empty() {
            return Err(invalid("sweep.grid is empty"));
        }
        if let Some(bad) = sweep.grid.iter().find(|e| !(e.is_finite() && **e > 0.0)) {
            return Err(invalid(format!(
                "sweep.grid: epsilon {bad} is not positive"
            )));
        }
        if sweep.repeats == 0 || sweep.num_bins == 0 || sweep.n == Some(0) {
            return Err(invalid(
                "sweep.repeats, sweep.n and sweep.num_bins must be at least 1",
            ));
        }
        Ok(SweepConfig {
            settings: cfg.attack_settings()?,
            grid: sweep.grid.clone(),
            repeats: sweep.repeats,
            base_seed: sweep.base_seed,
            n: sweep.n,
            num_bins: sweep.num_bins,
            output_dir,
            config_echo: cfg.echo(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const SAMPLE: &str = r#"
[paths]
original = "orig.csv"

[dataset]
missing = "drop_row"

[[attribute]]
name = "age"
kind = "numerical"
role = "qi"

[[attribute]]
name = "income"
kind = "numerical"
role = "qi"

[[attribute]]
name = "home"
kind = "categorical"
role = "qi"

[[attribute]]
name = "loan"
kind = "numerical"

[outliers]
k = 3.0
attributes = ["age", "income"]
combine = "any"

[[qi]]
attribute = "age"
comparator = "gauss"
offset = 5.0
scale = 5.0

[[qi]]
attribute = "income"
comparator = "gauss"
offset = 1000.0
scale = 1000.0
threshold = 0.5

[[qi]]
attribute = "home"
comparator = "levenshtein"

[linkage]
blocking = "home"

[[ladder]]
name = "numerical"
qis = ["age", "income"]

[[ladder]]
name = "all"
qis = ["age", "income", "home"]

[synth]
epsilon = 1.0
seed = 7

[[variant]]
name = "copy"
path = "orig.csv"
tags = { epochs = "150" }

[[variant]]
name = "dp"
generate = { epsilon = 0.5, seed = 3, n = 10 }

[sweep]
grid = [0.1, 1.0]
repeats = 2
"#;

    #[test]
    fn parses_sample() {
        let cfg = RunConfig::parse(SAMPLE, "sample").unwrap();
        assert_eq!(cfg.attributes.len(), 4);
        assert_eq!(cfg.attributes[3].role, AttributeRole::NonQi);
        assert_eq!(cfg.synth.as_ref().unwrap().num_bins, DEFAULT_NUM_BINS);
        let qi = cfg.qi_config().unwrap();
        assert_eq!(qi.rule("age").unwrap().threshold, 0.5);
        assert_eq!(qi.rule("home").unwrap().threshold, 1.0);
        cfg.attack_settings().unwrap();
    }

    #[test]
    fn echo_round_trips() {
        let cfg = RunConfig::parse(SAMPLE, "sample").unwrap();
        assert_eq!(RunConfig::from_echo(&cfg.echo()).unwrap(), cfg);
        assert_eq!(RunConfig::parse(&cfg.to_toml(), "echo").unwrap(), cfg);
    }

    #[test]
    fn unknown_keys_fail() {
        for (from, to) in [
            ("k = 3.0", "k = 3.0\nkk = 1"),
            ("seed = 7", "seed = 7\nepsilon_per_attribute = 1"),
            ("[dataset]", "[datasets]"),
            ("offset = 5.0", "offset = 5.0\nsigma = 1.0"),
        ] {
            let text = SAMPLE.replacen(from, to, 1);
            assert!(RunConfig::parse(&text, "x").is_err(), "{to}");
        }
    }

    #[test]
    fn semantic_errors() {
        let cases = [
            ("offset = 5.0\n", ""),
            (
                "comparator = \"levenshtein\"",
                "comparator = \"levenshtein\"\noffset = 1.0",
            ),
            (
                "attributes = [\"age\", \"income\"]",
                "attributes = [\"home\"]",
            ),
            ("k = 3.0", "k = -1.0"),
            ("blocking = \"home\"", "blocking = \"age\""),
            ("qis = [\"age\", \"income\"]", "qis = [\"zip\"]"),
        ];
        for (from, to) in cases {
            let cfg = RunConfig::parse(&SAMPLE.replacen(from, to, 1), "x").unwrap();
            assert!(cfg.attack_settings().is_err(), "{to}");
        }
    }

    #[test]
    fn plan_resolution() {
        let loaded = LoadedConfig {
            config: RunConfig::parse(SAMPLE, "x").unwrap(),
            base_dir: PathBuf::from("/cfg"),
        };
        assert_eq!(
            loaded.original_path(None).unwrap(),
            PathBuf::from("/cfg/orig.csv")
        );
        let plan = loaded
            .audit_plan(PathBuf::from("/cfg/orig.csv"), None, Some(100))
            .unwrap();
        assert_eq!(plan.variants.len(), 2);
        match &plan.variants[0].source {
            VariantSource::File { path, tags } => {
                assert_eq!(path, &PathBuf::from("/cfg/orig.csv"));
                assert_eq!(tags["epochs"], "150");
            }
            other => panic!("{other:?}"),
        }
        let sweep = loaded.sweep_config(None).unwrap();
        assert_eq!((sweep.grid.len(), sweep.repeats), (2, 2));
    }

    #[test]
    fn variant_needs_one_source() {
        let text = SAMPLE.replacen("path = \"orig.csv\"", "", 1);
        let loaded = LoadedConfig {
            config: RunConfig::parse(&text, "x").unwrap(),
            base_dir: PathBuf::new(),
        };
        assert!(loaded
            .audit_plan(PathBuf::from("o.csv"), None, Some(1))
            .is_err());
    }
}
