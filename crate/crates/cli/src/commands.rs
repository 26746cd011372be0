use std::fmt::Write as _;
use std::fs::{self, OpenOptions};
use std::io::Write as _;
use std::path::Path;

use snrscan::scan::{format_float, model_id_for, report_to_string};
use snrscan::selection::{coverage_stats, emit_plan, CoverageStats};
use snrscan::{
    discover_groups, open_checkpoint, read_report, scan as run_pipeline, select as pick,
    write_report, ScanConfig, ScanError, ScanReport, SelectionError,
};

use crate::args::{Format, ReportArgs, ScanArgs, ScanOptions, SelectArgs, LOG_FILE};
use crate::Failure;

fn io_failure(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure::new(Failure::IO, format!("{}: {e}", path.display()))
}

fn ensure_dir(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| io_failure(dir, e))
}

fn scan_config(options: &ScanOptions) -> ScanConfig {
    ScanConfig {
        include: options.include.clone(),
        exclude: options.exclude.clone(),
        default_excludes: !options.no_default_excludes,
        sigma_estimator: options.sigma_estimator,
        batch_size: options.batch_size,
    }
}

/// Scans `model`, writes the report to `report_path` and a line block to
/// the sidecar log next to it.
fn scan_to_report(
    model: &Path,
    options: &ScanOptions,
    report_path: &Path,
    log_dir: &Path,
) -> Result<ScanReport, Failure> {
    let manifest = open_checkpoint(model).map_err(|e| {
        Failure::new(
            Failure::CHECKPOINT,
            format!("cannot read checkpoint {}: {e}", model.display()),
        )
    })?;
    let config = scan_config(options);
    let discovery = discover_groups(&manifest, &config).map_err(|e| match e {
        ScanError::Pattern { .. } => Failure::new(Failure::USAGE, e.to_string()),
        other => Failure::new(Failure::IO, other.to_string()),
    })?;
    if discovery.member_count() == 0 {
        return Err(Failure::new(
            Failure::NOTHING_TO_SCAN,
            format!(
                "no scannable 2-D tensors in {} ({} tensors, {} excluded)",
                model.display(),
                manifest.len(),
                discovery.skipped.len()
            ),
        ));
    }
    log::info!(
        "scanning {} matrices in {} groups (batch size {})",
        discovery.member_count(),
        discovery.groups.len(),
        config.batch_size
    );

    let report = run_pipeline(&model_id_for(model), &manifest, &discovery, &config)
        .map_err(|e| Failure::new(Failure::IO, e.to_string()))?;
    if let Some(parent) = report_path.parent().filter(|p| !p.as_os_str().is_empty()) {
        ensure_dir(parent)?;
    }
    write_report(&report, report_path).map_err(|e| Failure::new(Failure::IO, e.to_string()))?;
    append_log(log_dir, model, report_path, &config, &report)?;
    log::info!("wrote {}", report_path.display());

    if report.scanned.is_empty() {
        return Err(Failure::new(
            Failure::NOTHING_TO_SCAN,
            format!("every candidate tensor in {} was skipped", model.display()),
        ));
    }
    Ok(report)
}

fn append_log(
    dir: &Path,
    model: &Path,
    report_path: &Path,
    config: &ScanConfig,
    report: &ScanReport,
) -> Result<(), Failure> {
    let path = dir.join(LOG_FILE);
    let mut entry = String::new();
    let _ = writeln!(
        entry,
        "[{}] scan",
        chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
    );
    let _ = writeln!(entry, "  model: {}", model.display());
    let _ = writeln!(entry, "  report: {}", report_path.display());
    let _ = writeln!(entry, "  batch_size: {}", config.batch_size);
    let _ = writeln!(entry, "  sigma_estimator: {}", config.sigma_estimator);
    let _ = writeln!(entry, "  scanned: {}", report.scanned.len());
    let _ = writeln!(entry, "  skipped: {}", report.skipped.len());
    for s in &report.skipped {
        let _ = writeln!(entry, "    {}: {}", s.name, s.reason);
    }
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&path)
        .map_err(|e| io_failure(&path, e))?;
    f.write_all(entry.as_bytes())
        .map_err(|e| io_failure(&path, e))
}

pub fn scan(args: &ScanArgs) -> Result<(), Failure> {
    ensure_dir(&args.out.out)?;
    let report = scan_to_report(
        &args.model,
        &args.options,
        &args.out.report_path(),
        &args.out.out,
    )?;
    log::info!(
        "{} matrices scanned, {} skipped",
        report.scanned.len(),
        report.skipped.len()
    );
    Ok(())
}

fn load_report(path: &Path) -> Result<ScanReport, Failure> {
    if !path.exists() {
        return Err(Failure::new(
            Failure::REPORT,
            format!(
                "report {} not found; run `snrscan scan` first or pass --model",
                path.display()
            ),
        ));
    }
    read_report(path).map_err(|e| Failure::new(Failure::REPORT, e.to_string()))
}

pub fn select(args: &SelectArgs) -> Result<(), Failure> {
    ensure_dir(&args.out.out)?;
    let report_path = args.out.report_path();
    let report = match &args.model {
        Some(model) if args.scan || !report_path.exists() => {
            scan_to_report(model, &args.options, &report_path, &args.out.out)?
        }
        _ => load_report(&report_path)?,
    };

    let plan = pick(&report, args.fraction()).map_err(|e| match e {
        SelectionError::FractionOutOfRange(_) => Failure::new(Failure::USAGE, e.to_string()),
        other => Failure::new(
            Failure::REPORT,
            format!("{}: {other}", report_path.display()),
        ),
    })?;
    let plan_path = args.plan_path();
    if let Some(parent) = plan_path.parent().filter(|p| !p.as_os_str().is_empty()) {
        ensure_dir(parent)?;
    }
    emit_plan(&plan, &plan_path).map_err(|e| Failure::new(Failure::IO, e.to_string()))?;
    let stats =
        coverage_stats(&plan, &report).map_err(|e| Failure::new(Failure::REPORT, e.to_string()))?;
    print!("{}", coverage_table(&stats));
    log::info!("wrote {}", plan_path.display());
    Ok(())
}

fn coverage_table(stats: &CoverageStats) -> String {
    let width = stats
        .groups
        .iter()
        .map(|g| g.group_key.len())
        .max()
        .unwrap_or(5)
        .max(5);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<width$}  {:>8}  {:>5}",
        "group", "selected", "total"
    );
    for g in &stats.groups {
        let _ = writeln!(
            out,
            "{:<width$}  {:>8}  {:>5}",
            g.group_key, g.selected, g.total
        );
    }
    let _ = writeln!(
        out,
        "unfrozen: {}/{} matrices, {}/{} parameters ({:.2}%)",
        stats.selected_tensors,
        stats.total_tensors,
        stats.selected_parameters,
        stats.total_parameters,
        100.0 * stats.parameter_fraction
    );
    out
}

pub fn report(args: &ReportArgs) -> Result<(), Failure> {
    let report = load_report(&args.out.report_path())?;
    match args.format {
        Format::Json => print!("{}", report_to_string(&report)),
        Format::Table => print!("{}", report_table(&report)),
    }
    Ok(())
}

fn report_table(report: &ScanReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "model: {}", report.model_id);
    for (key, members) in report.groups() {
        let _ = writeln!(out, "\n{key} ({} matrices)", members.len());
        let _ = writeln!(
            out,
            "  {:>4}  {:>5}  {:>24}  {:>6}  {:>11}  name",
            "rank", "layer", "snr_normalized", "signal", "shape"
        );
        for (rank, e) in members.iter().enumerate() {
            let r = &e.result;
            let layer = e.layer.map_or_else(|| "-".to_string(), |l| l.to_string());
            let _ = writeln!(
                out,
                "  {:>4}  {:>5}  {:>24}  {:>6}  {:>11}  {}",
                rank + 1,
                layer,
                format_float(r.normalized_snr),
                r.signal_count,
                format!("{}x{}", r.rows, r.cols),
                r.tensor_name
            );
        }
    }
    if !report.skipped.is_empty() {
        let _ = writeln!(out, "\nskipped ({})", report.skipped.len());
        for s in &report.skipped {
            let _ = writeln!(out, "  {}: {}", s.name, s.reason);
        }
    }
    out
}
