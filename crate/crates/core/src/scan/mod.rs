//! Whole-checkpoint scan: discover groups, analyze every member in bounded
//! batches, and collect a deterministic report.

mod grouping;
mod report;

use std::cmp::Ordering;
use std::path::Path;

use rayon::prelude::*;

pub use grouping::{
    discover_groups, Discovery, GroupMember, ModuleGroup, DEFAULT_EXCLUDES, REASON_EXCLUDED,
    REASON_EXCLUDED_BY_DEFAULT,
};
pub use report::{format_float, read_report, report_to_string, write_report};

use crate::checkpoint::CheckpointManifest;
use crate::error::ScanError;
use crate::spectral::{analyze_matrix_with, snr_rank_cmp, SigmaEstimator, SnrResult};

pub const DEFAULT_BATCH_SIZE: usize = 8;

/// Scan parameters. Everything except `batch_size` is recorded in the
/// report; the batch size only affects scheduling.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScanConfig {
    pub include: Vec<String>,
    pub exclude: Vec<String>,
    pub default_excludes: bool,
    pub sigma_estimator: SigmaEstimator,
    pub batch_size: usize,
}

impl Default for ScanConfig {
    fn default() -> Self {
        ScanConfig {
            include: Vec::new(),
            exclude: Vec::new(),
            default_excludes: true,
            sigma_estimator: SigmaEstimator::default(),
            batch_size: DEFAULT_BATCH_SIZE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct SkippedTensor {
    pub name: String,
    pub reason: String,
}

impl SkippedTensor {
    pub fn new(name: impl Into<String>, reason: impl Into<String>) -> Self {
        SkippedTensor {
            name: name.into(),
            reason: reason.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScannedEntry {
    pub group_key: String,
    pub layer: Option<usize>,
    pub result: SnrResult,
}

/// Report order: group key, then normalized SNR descending (`+∞` first),
/// then layer index ascending, then name.
pub fn entry_order(a: &ScannedEntry, b: &ScannedEntry) -> Ordering {
    a.group_key
        .cmp(&b.group_key)
        .then_with(|| snr_rank_cmp(a.result.normalized_snr, b.result.normalized_snr))
        .then_with(|| a.layer.cmp(&b.layer))
        .then_with(|| a.result.tensor_name.cmp(&b.result.tensor_name))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanReport {
    pub model_id: String,
    pub config: ScanConfig,
    pub scanned: Vec<ScannedEntry>,
    pub skipped: Vec<SkippedTensor>,
}

impl ScanReport {
    /// Scanned entries grouped by key, each group in report order.
    pub fn groups(&self) -> Vec<(&str, Vec<&ScannedEntry>)> {
        let mut out: Vec<(&str, Vec<&ScannedEntry>)> = Vec::new();
        for e in &self.scanned {
            match out.last_mut() {
                Some((k, v)) if *k == e.group_key => v.push(e),
                _ => out.push((e.group_key.as_str(), vec![e])),
            }
        }
        out
    }

    pub fn find(&self, name: &str) -> Option<&ScannedEntry> {
        self.scanned.iter().find(|e| e.result.tensor_name == name)
    }

    pub(crate) fn sort(&mut self) {
        self.scanned.sort_by(entry_order);
        self.skipped.sort();
    }
}

/// Model identifier recorded in reports: the checkpoint's file stem, or
/// the directory name for sharded checkpoints.
pub fn model_id_for(path: &Path) -> String {
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let trimmed = name
        .strip_suffix(".safetensors.index.json")
        .or_else(|| name.strip_suffix(".safetensors"))
        .unwrap_or(&name);
    trimmed.to_string()
}

/// Analyzes every discovered group member. At most `config.batch_size`
/// tensors are loaded and analyzed at a time; the report does not depend on
/// the batch size or on completion order. Load and analysis failures move
/// the tensor to `skipped` and the scan continues.
pub fn scan(
    model_id: &str,
    manifest: &CheckpointManifest,
    discovery: &Discovery,
    config: &ScanConfig,
) -> Result<ScanReport, ScanError> {
    if config.batch_size == 0 {
        return Err(ScanError::ZeroBatch);
    }
    let jobs: Vec<(&str, &GroupMember)> = discovery
        .groups
        .iter()
        .flat_map(|g| g.members.iter().map(move |m| (g.group_key.as_str(), m)))
        .collect();

    let mut scanned = Vec::with_capacity(jobs.len());
    let mut skipped = discovery.skipped.clone();
    let total = jobs.len();
    for (batch_idx, batch) in jobs.chunks(config.batch_size).enumerate() {
        let results: Vec<Result<ScannedEntry, SkippedTensor>> = batch
            .par_iter()
            .map(|(key, member)| analyze_member(manifest, key, member, config.sigma_estimator))
            .collect();
        for r in results {
            match r {
                Ok(e) => scanned.push(e),
                Err(s) => {
                    log::warn!("skipping {}: {}", s.name, s.reason);
                    skipped.push(s);
                }
            }
        }
        log::info!(
            "scanned {}/{} tensors",
            (batch_idx * config.batch_size + batch.len()).min(total),
            total
        );
    }

    let mut report = ScanReport {
        model_id: model_id.to_string(),
        config: config.clone(),
        scanned,
        skipped,
    };
    report.sort();
    Ok(report)
}

fn analyze_member(
    manifest: &CheckpointManifest,
    key: &str,
    member: &GroupMember,
    estimator: SigmaEstimator,
) -> Result<ScannedEntry, SkippedTensor> {
    let record = manifest
        .load_tensor(&member.name)
        .map_err(|e| SkippedTensor::new(&member.name, format!("load failed: {e}")))?;
    let result = analyze_matrix_with(&record, estimator)
        .map_err(|e| SkippedTensor::new(&member.name, format!("analysis failed: {e}")))?;
    Ok(ScannedEntry {
        group_key: key.to_string(),
        layer: member.layer,
        result,
    })
}
