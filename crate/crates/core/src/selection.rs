//! Top-p% per-group layer selection and the unfrozen-parameter plan file.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use crate::error::SelectionError;
use crate::scan::{entry_order, ScanReport, ScannedEntry};

pub const DEFAULT_TOP_FRACTION: f64 = 0.25;

/// Named fractions: `top-25` keeps the top 25% of each group.
pub const PRESETS: &[(&str, f64)] = &[
    ("top-25", 0.25),
    ("top-45", 0.45),
    ("top-50", 0.50),
];

pub fn preset_fraction(name: &str) -> Option<f64> {
    let name = name.to_ascii_lowercase();
    PRESETS.iter().find(|(n, _)| *n == name).map(|(_, f)| *f)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionPlan {
    pub top_fraction: f64,
    /// Group key → selected tensor names, best first.
    pub selected: BTreeMap<String, Vec<String>>,
    /// Anchored regex per selected tensor, sorted and duplicate-free.
    pub patterns: Vec<String>,
}

impl SelectionPlan {
    pub fn selected_names(&self) -> BTreeSet<&str> {
        self.selected
            .values()
            .flatten()
            .map(String::as_str)
            .collect()
    }

    pub fn selected_count(&self) -> usize {
        self.selected.values().map(Vec::len).sum()
    }
}

/// Members kept from a group of `group_size`: round-half-up of
/// `group_size × top_fraction`, at least 1, at most the group size.
pub fn group_quota(group_size: usize, top_fraction: f64) -> usize {
    if group_size == 0 {
        return 0;
    }
    let n = (group_size as f64 * top_fraction + 0.5).floor() as usize;
    n.clamp(1, group_size)
}

/// Exact-match pattern for a parameter name.
pub fn anchored_pattern(name: &str) -> String {
    format!("^{}$", regex::escape(name))
}

fn check_fraction(top_fraction: f64) -> Result<(), SelectionError> {
    if top_fraction > 0.0 && top_fraction <= 1.0 {
        Ok(())
    } else {
        Err(SelectionError::FractionOutOfRange(top_fraction))
    }
}

pub fn select(report: &ScanReport, top_fraction: f64) -> Result<SelectionPlan, SelectionError> {
    check_fraction(top_fraction)?;
    if report.scanned.is_empty() {
        return Err(SelectionError::EmptyReport);
    }
    let mut by_group: BTreeMap<&str, Vec<&ScannedEntry>> = BTreeMap::new();
    for e in &report.scanned {
        by_group.entry(e.group_key.as_str()).or_default().push(e);
    }
    let mut selected = BTreeMap::new();
    let mut patterns = BTreeSet::new();
    for (key, mut members) in by_group {
        members.sort_by(|a, b| entry_order(a, b));
        let keep = group_quota(members.len(), top_fraction);
        let names: Vec<String> = members[..keep]
            .iter()
            .map(|e| e.result.tensor_name.clone())
            .collect();
        patterns.extend(names.iter().map(|n| anchored_pattern(n)));
        selected.insert(key.to_string(), names);
    }
    Ok(SelectionPlan {
        top_fraction,
        selected,
        patterns: patterns.into_iter().collect(),
    })
}

fn yaml_scalar(s: &str) -> String {
    let plain = !s.is_empty()
        && s.chars()
            .all(|c| c.is_ascii_alphanumeric() || "_.-^$\\/".contains(c));
    if plain {
        s.to_string()
    } else {
        format!("'{}'", s.replace('\'', "''"))
    }
}

/// The plan file contents: a single `unfrozen_parameters` block list.
pub fn plan_to_yaml(plan: &SelectionPlan) -> String {
    if plan.patterns.is_empty() {
        return "unfrozen_parameters: []\n".to_string();
    }
    let mut out = String::from("unfrozen_parameters:\n");
    for p in &plan.patterns {
        out.push_str("- ");
        out.push_str(&yaml_scalar(p));
        out.push('\n');
    }
    out
}

pub fn emit_plan(plan: &SelectionPlan, path: impl AsRef<Path>) -> Result<(), SelectionError> {
    let path = path.as_ref();
    if plan.patterns.is_empty() {
        log::warn!("selection plan is empty; every parameter will stay frozen");
    }
    fs::write(path, plan_to_yaml(plan)).map_err(|source| SelectionError::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GroupCoverage {
    pub group_key: String,
    pub total: usize,
    pub selected: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoverageStats {
    pub total_tensors: usize,
    pub selected_tensors: usize,
    pub total_parameters: u64,
    pub selected_parameters: u64,
    /// Share of scanned parameters that the plan unfreezes.
    pub parameter_fraction: f64,
    pub groups: Vec<GroupCoverage>,
}

pub fn coverage_stats(
    plan: &SelectionPlan,
    report: &ScanReport,
) -> Result<CoverageStats, SelectionError> {
    let mut totals: BTreeMap<&str, usize> = BTreeMap::new();
    let mut total_parameters = 0u64;
    for e in &report.scanned {
        *totals.entry(e.group_key.as_str()).or_default() += 1;
        total_parameters += (e.result.rows * e.result.cols) as u64;
    }

    let mut selected_parameters = 0u64;
    let mut groups = Vec::with_capacity(totals.len());
    for (key, names) in &plan.selected {
        let Some(&total) = totals.get(key.as_str()) else {
            return Err(SelectionError::Mismatch(format!(
                "group {key:?} is not in the report"
            )));
        };
        for n in names {
            let entry = report
                .find(n)
                .filter(|e| &e.group_key == key)
                .ok_or_else(|| {
                    SelectionError::Mismatch(format!("tensor {n:?} is not in group {key:?}"))
                })?;
            selected_parameters += (entry.result.rows * entry.result.cols) as u64;
        }
        groups.push(GroupCoverage {
            group_key: key.clone(),
            total,
            selected: names.len(),
        });
    }
    for (key, total) in &totals {
        if !plan.selected.contains_key(*key) {
            groups.push(GroupCoverage {
                group_key: key.to_string(),
                total: *total,
                selected: 0,
            });
        }
    }
    groups.sort_by(|a, b| a.group_key.cmp(&b.group_key));

    let parameter_fraction = if total_parameters == 0 {
        0.0
    } else {
        selected_parameters as f64 / total_parameters as f64
    };
    Ok(CoverageStats {
        total_tensors: report.scanned.len(),
        selected_tensors: plan.selected_count(),
        total_parameters,
        selected_parameters,
        parameter_fraction,
        groups,
    })
}
