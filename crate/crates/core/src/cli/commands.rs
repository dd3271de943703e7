use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::config::LoadedConfig;
use super::{CliError, Command, Common};
use crate::audit::{run_audit_on, sweep_epsilon, AuditError};
use crate::dataset::{load_dataset, Dataset, DatasetError};
use crate::dp_synth::{synthesize, SynthError, SynthParams};
use crate::linkage::{attack, LinkageError};
use crate::outliers::{detect_outliers, OutlierError};
use crate::report::{AuditReport, UtilityBlock};
use crate::utility::utility_report;

fn dataset_error(e: DatasetError) -> CliError {
    match e {
        DatasetError::Schema(_)
        | DatasetError::UnknownAttribute(_)
        | DatasetError::WrongKind { .. } => CliError::usage(e),
        _ => CliError::data(e),
    }
}

fn outlier_error(e: OutlierError) -> CliError {
    match e {
        OutlierError::Dataset(d) => dataset_error(d),
        OutlierError::Io(_) => CliError::internal(e),
        _ => CliError::usage(e),
    }
}

fn linkage_error(e: LinkageError) -> CliError {
    match e {
        LinkageError::Dataset(d) => dataset_error(d),
        LinkageError::Outliers(o) => outlier_error(o),
        LinkageError::SchemaMismatch(_) => CliError::data(e),
        LinkageError::TargetOutOfRange { .. } | LinkageError::Io(_) | LinkageError::Csv(_) => {
            CliError::internal(e)
        }
        _ => CliError::usage(e),
    }
}

fn synth_error(e: SynthError) -> CliError {
    match e {
        SynthError::Dataset(d) => dataset_error(d),
        SynthError::EmptyInput => CliError::data(e),
        _ => CliError::usage(e),
    }
}

fn audit_error(e: AuditError) -> CliError {
    match e {
        AuditError::InvalidPlan(_) => CliError::usage(e),
        AuditError::Original(d) => CliError::data(d),
        AuditError::Outliers(o) => outlier_error(o),
        AuditError::Linkage(l) => linkage_error(l),
        AuditError::Output { .. } => CliError::internal(e),
    }
}

fn create_file(path: &Path) -> Result<BufWriter<fs::File>, CliError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)
            .map_err(|e| CliError::internal(format!("cannot create {}: {e}", parent.display())))?;
    }
    fs::File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::internal(format!("cannot create {}: {e}", path.display())))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    let mut f = create_file(path)?;
    f.write_all(text.as_bytes())
        .and_then(|_| f.flush())
        .map_err(|e| CliError::internal(format!("cannot write {}: {e}", path.display())))
}

fn say(stdout: &mut dyn Write, line: &str) -> Result<(), CliError> {
    writeln!(stdout, "{line}").map_err(CliError::internal)
}

struct Loaded {
    config: LoadedConfig,
    original: Dataset,
}

fn load_original(common: &Common) -> Result<Loaded, CliError> {
    let config = LoadedConfig::load(&common.config)?;
    let schema = config.config.schema()?;
    let path = config.original_path(common.original.as_deref())?;
    let original =
        load_dataset(&path, &schema, config.config.dataset.missing).map_err(CliError::data)?;
    log::info!(
        "loaded {} rows from {}",
        original.row_count(),
        path.display()
    );
    Ok(Loaded { config, original })
}

fn load_variant(loaded: &Loaded, path: &Path) -> Result<Dataset, CliError> {
    load_dataset(
        path,
        loaded.original.schema(),
        loaded.config.config.dataset.missing,
    )
    .map_err(CliError::data)
}

fn emit_report(
    report: &AuditReport,
    out: Option<&Path>,
    stdout: &mut dyn Write,
) -> Result<(), CliError> {
    let failed = report.variants.iter().filter(|v| !v.is_ok()).count();
    if failed > 0 {
        log::warn!("{failed} of {} variants failed", report.variants.len());
    }
    match out {
        Some(dir) => {
            let path = dir.join("report.json");
            write_text(&path, &(report.to_json() + "\n"))?;
            for v in &report.variants {
                let uniques: Vec<String> = v
                    .linkage
                    .0
                    .iter()
                    .map(|s| format!("{}={}", s.subset, s.unique_match_count))
                    .collect();
                let status = if v.is_ok() { "ok" } else { "failed" };
                say(
                    stdout,
                    &format!("{}: {status} unique_matches[{}]", v.name, uniques.join(" ")),
                )?;
            }
            say(stdout, &format!("report written to {}", path.display()))
        }
        None => say(stdout, &report.to_json()),
    }
}

pub fn execute(command: &Command, stdout: &mut dyn Write) -> Result<(), CliError> {
    match command {
        Command::Outliers { common, out } => {
            let loaded = load_original(common)?;
            let cfg = loaded.config.config.outlier_config()?;
            let set = detect_outliers(&loaded.original, &cfg).map_err(outlier_error)?;
            if let Some(path) = out {
                let mut f = create_file(path)?;
                set.write_listing(&mut f).map_err(outlier_error)?;
                f.flush().map_err(CliError::internal)?;
            }
            say(stdout, &format!("{} outliers", set.len()))
        }
        Command::Link {
            common,
            variant,
            qis,
            out,
        } => {
            let loaded = load_original(common)?;
            let settings = loaded.config.config.attack_settings()?;
            let variant = load_variant(&loaded, variant)?;
            let result = attack(
                &loaded.original,
                &variant,
                &settings.outliers,
                &settings.qi,
                qis.as_deref(),
                &settings.options,
            )
            .map_err(linkage_error)?;
            if let Some(dir) = out {
                let mut f = create_file(&dir.join("matches.csv"))?;
                result.write_pairs_csv(&mut f).map_err(linkage_error)?;
                f.flush().map_err(CliError::internal)?;
            }
            say(
                stdout,
                &format!(
                    "{} outliers, {} pairs, {} distinct originals, {} unique matches",
                    result.target_count,
                    result.pair_count(),
                    result.distinct_originals(),
                    result.unique_match_count
                ),
            )
        }
        Command::Utility {
            common,
            variant,
            out,
        } => {
            let loaded = load_original(common)?;
            let variant = load_variant(&loaded, variant)?;
            let report = utility_report(&loaded.original, &variant).map_err(CliError::data)?;
            let json = serde_json::to_string_pretty(&UtilityBlock::from(&report))
                .map_err(CliError::internal)?;
            if let Some(path) = out {
                write_text(path, &(json.clone() + "\n"))?;
            }
            say(stdout, &json)
        }
        Command::Synthesize {
            common,
            epsilon,
            seed,
            n,
            num_bins,
            out,
        } => {
            let loaded = load_original(common)?;
            let section = loaded.config.config.synth.as_ref();
            let epsilon = epsilon.or(section.map(|s| s.epsilon)).ok_or_else(|| {
                CliError::usage("no epsilon: pass --epsilon or set synth.epsilon")
            })?;
            let params = SynthParams {
                epsilon,
                n: n.or(section.and_then(|s| s.n))
                    .unwrap_or(loaded.original.row_count()),
                num_bins: num_bins
                    .or(section.map(|s| s.num_bins))
                    .unwrap_or(crate::dp_synth::DEFAULT_NUM_BINS),
                seed: seed.or(section.map(|s| s.seed)).unwrap_or(0),
            };
            let ds = synthesize(
                &loaded.original,
                params.epsilon,
                params.n,
                params.num_bins,
                params.seed,
            )
            .map_err(synth_error)?;
            let mut f = create_file(out)?;
            ds.write_csv(&mut f).map_err(CliError::internal)?;
            f.flush().map_err(CliError::internal)?;
            say(
                stdout,
                &format!("{} rows written to {}", ds.row_count(), out.display()),
            )
        }
        Command::Audit { common, out } => {
            let loaded = load_original(common)?;
            let original_path = loaded.config.original_path(common.original.as_deref())?;
            let out_dir = loaded.config.output_dir(out.as_deref());
            let plan = loaded.config.audit_plan(
                original_path,
                out_dir.clone(),
                Some(loaded.original.row_count()),
            )?;
            let report = run_audit_on(&plan, &loaded.original).map_err(audit_error)?;
            emit_report(&report, out_dir.as_deref(), stdout)
        }
        Command::Sweep { common, out } => {
            let loaded = load_original(common)?;
            let out_dir = loaded.config.output_dir(out.as_deref());
            let cfg = loaded.config.sweep_config(out_dir.clone())?;
            let report = sweep_epsilon(&loaded.original, &cfg).map_err(audit_error)?;
            emit_report(&report, out_dir.as_deref(), stdout)
        }
    }
}
