use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use snrscan::scan::DEFAULT_BATCH_SIZE;
use snrscan::selection::DEFAULT_TOP_FRACTION;
use snrscan::SigmaEstimator;

pub const REPORT_FILE: &str = "snr_report.json";
pub const PLAN_FILE: &str = "unfrozen_parameters.yaml";
pub const LOG_FILE: &str = "snr_report.log";

/// Rank the weight matrices of a transformer checkpoint by spectral
/// signal-to-noise ratio and pick the layers worth training.
#[derive(Debug, Parser)]
#[command(name = "snrscan", version)]
pub struct Cli {
    /// More log output on stderr (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count, conflicts_with = "quiet")]
    pub verbose: u8,
    /// Less log output on stderr (repeatable).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub quiet: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Analyze every 2-D weight matrix and write the SNR report.
    Scan(ScanArgs),
    /// Pick the top fraction of each module group and write the plan.
    Select(SelectArgs),
    /// Print a stored report.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct ScanArgs {
    /// Checkpoint file, shard index file, or directory.
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub out: OutArgs,
    #[command(flatten)]
    pub options: ScanOptions,
}

#[derive(Debug, Args)]
pub struct ScanOptions {
    /// Tensors analyzed concurrently.
    #[arg(long, default_value_t = DEFAULT_BATCH_SIZE, value_parser = parse_batch_size)]
    pub batch_size: usize,
    /// Only consider tensors matching this regex (repeatable).
    #[arg(long = "include", value_name = "PATTERN")]
    pub include: Vec<String>,
    /// Skip tensors matching this regex (repeatable).
    #[arg(long = "exclude", value_name = "PATTERN")]
    pub exclude: Vec<String>,
    /// Also scan embeddings and output heads.
    #[arg(long)]
    pub no_default_excludes: bool,
    /// Noise-scale estimator: marchenko-pastur or gaussian-iqr.
    #[arg(long, default_value_t = SigmaEstimator::default())]
    pub sigma_estimator: SigmaEstimator,
}

#[derive(Debug, Args)]
pub struct OutArgs {
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Report path, instead of <out>/snr_report.json.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

impl OutArgs {
    pub fn report_path(&self) -> PathBuf {
        self.report
            .clone()
            .unwrap_or_else(|| self.out.join(REPORT_FILE))
    }
}

#[derive(Debug, Args)]
pub struct SelectArgs {
    /// Checkpoint to scan when the report is missing or --scan is given.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[command(flatten)]
    pub out: OutArgs,
    /// Fraction of each group to unfreeze, in (0, 1].
    #[arg(short = 'p', long = "top-fraction", value_parser = parse_fraction, conflicts_with = "preset")]
    pub top_fraction: Option<f64>,
    /// Named fraction: top-25, top-45 or top-50.
    #[arg(long, value_parser = parse_preset)]
    pub preset: Option<f64>,
    /// Run the scan first, even when a report already exists.
    #[arg(long, requires = "model")]
    pub scan: bool,
    /// Plan path, instead of <out>/unfrozen_parameters.yaml.
    #[arg(long)]
    pub plan: Option<PathBuf>,
    #[command(flatten)]
    pub options: ScanOptions,
}

impl SelectArgs {
    pub fn fraction(&self) -> f64 {
        self.top_fraction
            .or(self.preset)
            .unwrap_or(DEFAULT_TOP_FRACTION)
    }

    pub fn plan_path(&self) -> PathBuf {
        self.plan
            .clone()
            .unwrap_or_else(|| self.out.out.join(PLAN_FILE))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Table,
    Json,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[command(flatten)]
    pub out: OutArgs,
    #[arg(long, value_enum, default_value_t = Format::Table)]
    pub format: Format,
}

fn parse_fraction(s: &str) -> Result<f64, String> {
    let p: f64 = s.parse().map_err(|_| format!("{s:?} is not a number"))?;
    if p > 0.0 && p <= 1.0 {
        Ok(p)
    } else {
        Err(format!("{p} is outside (0, 1]"))
    }
}

fn parse_preset(s: &str) -> Result<f64, String> {
    snrscan::selection::preset_fraction(s).ok_or_else(|| {
        let names: Vec<&str> = snrscan::selection::PRESETS
            .iter()
            .map(|(n, _)| *n)
            .collect();
        format!("unknown preset {s:?}, expected one of {}", names.join(", "))
    })
}

fn parse_batch_size(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(0) => Err("batch size must be at least 1".into()),
        Ok(n) => Ok(n),
        Err(_) => Err(format!("{s:?} is not a positive integer")),
    }
}
