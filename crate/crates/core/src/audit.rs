//! Multi-variant audits: outlier selection on the original data, linkage
//! attacks over a ladder of QI subsets, utility scoring, and epsilon sweeps
//! over the built-in DP generator.
//!
//! Variants are processed in parallel and merged in plan order. A variant
//! that fails to load or score is reported as failed without affecting the
//! others.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dataset::{load_dataset, Dataset, DatasetError, MissingPolicy, Schema};
use crate::dp_synth::{synthesize_with_histograms, SynthError, SynthParams};
use crate::linkage::{attack_targets, AttackOptions, LinkageError, QiConfig};
use crate::outliers::{detect_outliers, OutlierConfig, OutlierError, OutlierSet};
use crate::report::{
    tradeoff_rows, AuditReport, Execution, GeneratorMeta, LinkageBlock, LinkageSummary,
    OriginalSummary, RunMeta, UtilityBlock, VariantEntry, VariantStatus,
};
use crate::utility::{utility_report, UtilityError};

#[derive(Debug, Error)]
pub enum AuditError {
    #[error("invalid plan: {0}")]
    InvalidPlan(String),
    #[error("original dataset: {0}")]
    Original(#[source] DatasetError),
    #[error(transparent)]
    Outliers(#[from] OutlierError),
    #[error(transparent)]
    Linkage(#[from] LinkageError),
    #[error("cannot write {path}: {source}")]
    Output {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Per-variant failure, recorded in the report.
#[derive(Debug, Error)]
enum VariantError {
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Linkage(#[from] LinkageError),
    #[error(transparent)]
    Utility(#[from] UtilityError),
    #[error("cannot write {path}: {source}")]
    Output {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QiSubset {
    pub name: String,
    pub qis: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum VariantSource {
    File {
        path: PathBuf,
        tags: BTreeMap<String, String>,
    },
    Generate(SynthParams),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VariantSpec {
    pub name: String,
    pub source: VariantSource,
}

/// Everything except the original data, shared by plans and sweeps.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackSettings {
    pub outliers: OutlierConfig,
    pub qi: QiConfig,
    /// Empty means one subset with every configured QI.
    pub ladder: Vec<QiSubset>,
    pub options: AttackOptions,
}

impl AttackSettings {
    pub fn effective_ladder(&self) -> Vec<QiSubset> {
        if self.ladder.is_empty() {
            vec![QiSubset {
                name: "all".into(),
                qis: self.qi.names(),
            }]
        } else {
            self.ladder.clone()
        }
    }

    pub fn validate(&self, schema: &Schema) -> Result<(), AuditError> {
        self.outliers.validate()?;
        for a in &self.outliers.attributes {
            let attr = schema.get(a).ok_or_else(|| {
                AuditError::InvalidPlan(format!("outlier attribute `{a}` not in schema"))
            })?;
            if attr.kind != crate::dataset::AttributeKind::Numerical {
                return Err(AuditError::InvalidPlan(format!(
                    "outlier attribute `{a}` is not numerical"
                )));
            }
        }
        schema
            .require_qi()
            .map_err(|e| AuditError::InvalidPlan(e.to_string()))?;
        self.qi.check_schema(schema)?;
        let mut names = HashSet::new();
        for subset in &self.ladder {
            if !names.insert(subset.name.as_str()) {
                return Err(AuditError::InvalidPlan(format!(
                    "duplicate subset `{}`",
                    subset.name
                )));
            }
            self.qi.subset(&subset.qis)?;
        }
        if let Some(b) = &self.options.blocking {
            let ok = self.qi.rule(b).is_some_and(|r| {
                r.comparator.kind() == crate::dataset::AttributeKind::Categorical
                    && r.threshold >= 1.0
            });
            if !ok {
                return Err(LinkageError::InvalidBlocking(b.clone()).into());
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuditPlan {
    pub original: PathBuf,
    pub schema: Schema,
    pub missing: MissingPolicy,
    pub variants: Vec<VariantSpec>,
    pub settings: AttackSettings,
    pub output_dir: Option<PathBuf>,
    /// Effective configuration echoed into the report and hashed.
    pub config_echo: serde_json::Value,
}

impl AuditPlan {
    pub fn validate(&self) -> Result<(), AuditError> {
        if self.variants.is_empty() {
            return Err(AuditError::InvalidPlan("no variants".into()));
        }
        let mut names = HashSet::new();
        for v in &self.variants {
            if !names.insert(v.name.as_str()) {
                return Err(AuditError::InvalidPlan(format!(
                    "duplicate variant `{}`",
                    v.name
                )));
            }
            if let VariantSource::Generate(p) = &v.source {
                p.validate()
                    .map_err(|e| AuditError::InvalidPlan(format!("variant `{}`: {e}", v.name)))?;
            }
        }
        self.settings.validate(&self.schema)
    }
}

pub fn config_hash(config: &serde_json::Value) -> String {
    let canonical = serde_json::to_string(config).expect("json value serializes");
    hex::encode(Sha256::digest(canonical.as_bytes()))
}

struct Context<'a> {
    original: &'a Dataset,
    targets: &'a [usize],
    settings: &'a AttackSettings,
    ladder: &'a [QiSubset],
    missing: MissingPolicy,
    output_dir: Option<&'a Path>,
}

fn write_output(
    path: &Path,
    write: impl FnOnce(fs::File) -> Result<(), VariantError>,
) -> Result<(), VariantError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|source| VariantError::Output {
            path: parent.display().to_string(),
            source,
        })?;
    }
    let file = fs::File::create(path).map_err(|source| VariantError::Output {
        path: path.display().to_string(),
        source,
    })?;
    write(file)
}

fn audit_variant(ctx: &Context<'_>, spec: &VariantSpec) -> VariantEntry {
    let generator = match &spec.source {
        VariantSource::File { path, tags } => GeneratorMeta::External {
            path: path.display().to_string(),
            tags: tags.clone(),
        },
        VariantSource::Generate(p) => GeneratorMeta::from_params(p),
    };
    match audit_variant_inner(ctx, spec) {
        Ok((rows, utility, utility_means, linkage)) => VariantEntry {
            name: spec.name.clone(),
            status: VariantStatus::Ok,
            error: None,
            generator,
            rows: Some(rows),
            utility: Some(utility),
            linkage,
            utility_means,
        },
        Err(e) => {
            log::warn!("variant `{}` failed: {e}", spec.name);
            VariantEntry {
                name: spec.name.clone(),
                status: VariantStatus::Failed,
                error: Some(e.to_string()),
                generator,
                rows: None,
                utility: None,
                linkage: LinkageBlock::default(),
                utility_means: BTreeMap::new(),
            }
        }
    }
}

type VariantOutcome = (
    usize,
    UtilityBlock,
    BTreeMap<crate::utility::Metric, f64>,
    LinkageBlock,
);

fn audit_variant_inner(
    ctx: &Context<'_>,
    spec: &VariantSpec,
) -> Result<VariantOutcome, VariantError> {
    let variant = match &spec.source {
        VariantSource::File { path, .. } => {
            load_dataset(path, ctx.original.schema(), ctx.missing)?.with_name(spec.name.clone())
        }
        VariantSource::Generate(params) => {
            let ds = synthesize_with_histograms(ctx.original, params)?
                .dataset
                .with_name(spec.name.clone());
            if let Some(dir) = ctx.output_dir {
                let path = dir.join("variants").join(format!("{}.csv", spec.name));
                write_output(&path, |f| Ok(ds.write_csv(std::io::BufWriter::new(f))?))?;
            }
            ds
        }
    };
    log::info!(
        "auditing variant `{}` ({} rows)",
        spec.name,
        variant.row_count()
    );

    let utility = utility_report(ctx.original, &variant)?;
    let means = utility.summary.iter().map(|(m, s)| (*m, s.mean)).collect();

    let mut block = Vec::with_capacity(ctx.ladder.len());
    for subset in ctx.ladder {
        let result = attack_targets(
            ctx.original,
            ctx.targets,
            &variant,
            &ctx.settings.outliers,
            &ctx.settings.qi,
            Some(&subset.qis),
            &ctx.settings.options,
        )?;
        let mut summary = LinkageSummary::new(subset.name.clone(), &result);
        if let Some(dir) = ctx.output_dir {
            let rel = format!("matches/{}__{}.csv", spec.name, subset.name);
            write_output(&dir.join(&rel), |f| {
                Ok(result.write_pairs_csv(std::io::BufWriter::new(f))?)
            })?;
            summary.pairs_file = Some(rel);
        }
        block.push(summary);
    }
    Ok((
        variant.row_count(),
        UtilityBlock::from(&utility),
        means,
        LinkageBlock(block),
    ))
}

fn execution(started: SystemTime, clock: Instant) -> Execution {
    Execution {
        started_at_unix_ms: started
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis())
            .unwrap_or_default(),
        wall_time_ms: clock.elapsed().as_millis(),
        threads: rayon::current_num_threads(),
    }
}

fn write_outliers(dir: &Path, outliers: &OutlierSet) -> Result<(), AuditError> {
    let path = dir.join("outliers.csv");
    let io_err = |source| AuditError::Output {
        path: path.display().to_string(),
        source,
    };
    fs::create_dir_all(dir).map_err(io_err)?;
    let file = fs::File::create(&path).map_err(io_err)?;
    outliers.write_listing(std::io::BufWriter::new(file))?;
    Ok(())
}

fn audit_variants(
    original: &Dataset,
    outliers: &OutlierSet,
    settings: &AttackSettings,
    variants: &[VariantSpec],
    missing: MissingPolicy,
    output_dir: Option<&Path>,
) -> Result<Vec<VariantEntry>, AuditError> {
    if let Some(dir) = output_dir {
        write_outliers(dir, outliers)?;
    }
    let targets = outliers.indices();
    let ladder = settings.effective_ladder();
    let ctx = Context {
        original,
        targets: &targets,
        settings,
        ladder: &ladder,
        missing,
        output_dir,
    };
    Ok(variants
        .par_iter()
        .map(|v| audit_variant(&ctx, v))
        .collect())
}

pub fn run_audit(plan: &AuditPlan) -> Result<AuditReport, AuditError> {
    plan.validate()?;
    let original =
        load_dataset(&plan.original, &plan.schema, plan.missing).map_err(AuditError::Original)?;
    run_audit_on(plan, &original)
}

/// [`run_audit`] with the original dataset already in memory.
pub fn run_audit_on(plan: &AuditPlan, original: &Dataset) -> Result<AuditReport, AuditError> {
    let started = SystemTime::now();
    let clock = Instant::now();
    plan.validate()?;
    let outliers = detect_outliers(original, &plan.settings.outliers)?;
    log::info!("{} outliers in `{}`", outliers.len(), original.name());
    let variants = audit_variants(
        original,
        &outliers,
        &plan.settings,
        &plan.variants,
        plan.missing,
        plan.output_dir.as_deref(),
    )?;
    let tradeoff = external_axes(plan)
        .into_iter()
        .flat_map(|axis| {
            let ladder: Vec<String> = plan
                .settings
                .effective_ladder()
                .into_iter()
                .map(|s| s.name)
                .collect();
            tradeoff_rows(&variants, &axis, &ladder)
        })
        .collect();
    Ok(AuditReport {
        run_meta: RunMeta {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: config_hash(&plan.config_echo),
            config: plan.config_echo.clone(),
            original: OriginalSummary {
                name: original.name().to_string(),
                rows: original.row_count(),
                outlier_count: outliers.len(),
            },
            execution: execution(started, clock),
        },
        variants,
        tradeoff,
    })
}

/// Hyperparameter axes present in the plan: numeric tags on external
/// variants, and `epsilon` when several generated variants exist.
fn external_axes(plan: &AuditPlan) -> Vec<String> {
    let mut axes = std::collections::BTreeSet::new();
    let mut generated = 0;
    for v in &plan.variants {
        match &v.source {
            VariantSource::File { tags, .. } => {
                axes.extend(
                    tags.iter()
                        .filter(|(_, val)| val.trim().parse::<f64>().is_ok())
                        .map(|(k, _)| k.clone()),
                );
            }
            VariantSource::Generate(_) => generated += 1,
        }
    }
    if generated > 1 {
        axes.insert("epsilon".to_string());
    }
    axes.into_iter().collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub settings: AttackSettings,
    pub grid: Vec<f64>,
    pub repeats: usize,
    pub base_seed: u64,
    /// Rows per generated variant; defaults to the original row count.
    pub n: Option<usize>,
    pub num_bins: usize,
    pub output_dir: Option<PathBuf>,
    pub config_echo: serde_json::Value,
}

/// The generated variants of a sweep, in order: for each epsilon in grid
/// order, `repeats` runs. Variant `i` uses seed `base_seed + i`.
pub fn sweep_variants(cfg: &SweepConfig, original_rows: usize) -> Vec<VariantSpec> {
    let n = cfg.n.unwrap_or(original_rows);
    let mut out = Vec::with_capacity(cfg.grid.len() * cfg.repeats);
    for &epsilon in &cfg.grid {
        for r in 0..cfg.repeats {
            let index = out.len() as u64;
            out.push(VariantSpec {
                name: format!("dp_eps{epsilon}_r{r}"),
                source: VariantSource::Generate(SynthParams {
                    epsilon,
                    n,
                    num_bins: cfg.num_bins,
                    seed: cfg.base_seed.wrapping_add(index),
                }),
            });
        }
    }
    out
}

pub fn sweep_epsilon(original: &Dataset, cfg: &SweepConfig) -> Result<AuditReport, AuditError> {
    let started = SystemTime::now();
    let clock = Instant::now();
    if cfg.grid.is_empty() {
        return Err(AuditError::InvalidPlan("empty epsilon grid".into()));
    }
    if cfg.repeats == 0 {
        return Err(AuditError::InvalidPlan("repeats must be at least 1".into()));
    }
    if let Some(bad) = cfg.grid.iter().find(|e| !(e.is_finite() && **e > 0.0)) {
        return Err(AuditError::InvalidPlan(format!(
            "epsilon {bad} is not positive"
        )));
    }
    if cfg.n == Some(0) || cfg.num_bins == 0 {
        return Err(AuditError::InvalidPlan(
            "n and num_bins must be at least 1".into(),
        ));
    }
    cfg.settings.validate(original.schema())?;
    let outliers = detect_outliers(original, &cfg.settings.outliers)?;
    let specs = sweep_variants(cfg, original.row_count());
    let variants = audit_variants(
        original,
        &outliers,
        &cfg.settings,
        &specs,
        MissingPolicy::DropRow,
        cfg.output_dir.as_deref(),
    )?;
    let ladder: Vec<String> = cfg
        .settings
        .effective_ladder()
        .into_iter()
        .map(|s| s.name)
        .collect();
    let tradeoff = tradeoff_rows(&variants, "epsilon", &ladder);
    Ok(AuditReport {
        run_meta: RunMeta {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: config_hash(&cfg.config_echo),
            config: cfg.config_echo.clone(),
            original: OriginalSummary {
                name: original.name().to_string(),
                rows: original.row_count(),
                outlier_count: outliers.len(),
            },
            execution: execution(started, clock),
        },
        variants,
        tradeoff,
    })
}
