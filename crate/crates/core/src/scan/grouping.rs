use std::collections::{BTreeMap, BTreeSet};

use regex::Regex;

use super::{ScanConfig, SkippedTensor};
use crate::checkpoint::CheckpointManifest;
use crate::error::ScanError;

/// Patterns excluded unless `default_excludes` is turned off: token
/// embeddings and output heads.
pub const DEFAULT_EXCLUDES: &[&str] = &[
    r"(^|\.)(embed_tokens|embeddings|embedding|wte|wpe|embed_in|embed_out)(\.|$)",
    r"(^|\.)lm_head(\.|$)",
];

pub const REASON_EXCLUDED: &str = "excluded";
pub const REASON_EXCLUDED_BY_DEFAULT: &str = "excluded-by-default";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupMember {
    pub name: String,
    pub layer: Option<usize>,
}

/// Same-role matrices across layers, e.g. every `self_attn.q_proj`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModuleGroup {
    pub group_key: String,
    pub members: Vec<GroupMember>,
}

/// Result of sorting a manifest's 2-D tensors into groups and exclusions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Discovery {
    pub groups: Vec<ModuleGroup>,
    pub skipped: Vec<SkippedTensor>,
}

impl Discovery {
    pub fn member_count(&self) -> usize {
        self.groups.iter().map(|g| g.members.len()).sum()
    }
}

/// Pieces of a parameter path around its first all-numeric segment.
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct NameParts {
    pub prefix: String,
    pub layer: Option<usize>,
    /// Segments after the layer index, trailing `weight` removed.
    pub suffix: String,
}

pub(crate) fn split_name(name: &str) -> NameParts {
    let segments: Vec<&str> = name.split('.').collect();
    let numeric = segments
        .iter()
        .position(|s| !s.is_empty() && s.bytes().all(|b| b.is_ascii_digit()));
    let strip_weight = |segs: &[&str]| -> String {
        match segs {
            [rest @ .., "weight"] if !rest.is_empty() => rest.join("."),
            _ => segs.join("."),
        }
    };
    match numeric.and_then(|k| segments[k].parse::<usize>().ok().map(|l| (k, l))) {
        Some((k, layer)) => NameParts {
            prefix: segments[..k].join("."),
            layer: Some(layer),
            suffix: strip_weight(&segments[k + 1..]),
        },
        None => NameParts {
            prefix: String::new(),
            layer: None,
            suffix: strip_weight(&segments),
        },
    }
}

fn compile(patterns: &[String]) -> Result<Vec<Regex>, ScanError> {
    patterns
        .iter()
        .map(|p| {
            Regex::new(p).map_err(|source| ScanError::Pattern {
                pattern: p.clone(),
                source,
            })
        })
        .collect()
}

/// Assigns every 2-D tensor matching the include patterns (all, when
/// empty) to a module group or to the skipped list.
///
/// The group key is the path after the first numeric segment without the
/// trailing `weight`, e.g. `model.layers.3.mlp.down_proj.weight` →
/// `mlp.down_proj`. When one suffix occurs under several prefixes, those
/// groups are keyed `<prefix>.*.<suffix>` instead. Names without a numeric
/// segment form singleton groups keyed by the name.
pub fn discover_groups(
    manifest: &CheckpointManifest,
    config: &ScanConfig,
) -> Result<Discovery, ScanError> {
    let include = compile(&config.include)?;
    let exclude = compile(&config.exclude)?;
    let defaults = if config.default_excludes {
        DEFAULT_EXCLUDES
            .iter()
            .map(|p| Regex::new(p).expect("default pattern compiles"))
            .collect()
    } else {
        Vec::new()
    };

    let mut skipped = Vec::new();
    // (prefix, suffix) → members; singleton names keyed separately
    let mut layered: BTreeMap<(String, String), Vec<GroupMember>> = BTreeMap::new();
    let mut singletons: Vec<String> = Vec::new();

    for (name, entry) in &manifest.tensors {
        if entry.shape.len() != 2 {
            continue;
        }
        if !include.is_empty() && !include.iter().any(|r| r.is_match(name)) {
            continue;
        }
        if exclude.iter().any(|r| r.is_match(name)) {
            skipped.push(SkippedTensor::new(name, REASON_EXCLUDED));
            continue;
        }
        if defaults.iter().any(|r: &Regex| r.is_match(name)) {
            skipped.push(SkippedTensor::new(name, REASON_EXCLUDED_BY_DEFAULT));
            continue;
        }
        let parts = split_name(name);
        match parts.layer {
            Some(layer) => layered
                .entry((parts.prefix, parts.suffix))
                .or_default()
                .push(GroupMember {
                    name: name.clone(),
                    layer: Some(layer),
                }),
            None => singletons.push(name.clone()),
        }
    }

    let mut prefixes_per_suffix: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for (prefix, suffix) in layered.keys() {
        prefixes_per_suffix
            .entry(suffix)
            .or_default()
            .insert(prefix);
    }

    let mut groups: BTreeMap<String, Vec<GroupMember>> = BTreeMap::new();
    for ((prefix, suffix), members) in &layered {
        let key = if prefixes_per_suffix[suffix.as_str()].len() > 1 {
            format!("{prefix}.*.{suffix}")
        } else {
            suffix.clone()
        };
        groups
            .entry(key)
            .or_default()
            .extend(members.iter().cloned());
    }
    for name in singletons {
        let key = split_name(&name).suffix;
        let key = if groups.contains_key(&key) {
            name.clone()
        } else {
            key
        };
        groups
            .entry(key)
            .or_default()
            .push(GroupMember { name, layer: None });
    }

    let groups = groups
        .into_iter()
        .map(|(group_key, mut members)| {
            members.sort_by(|a, b| a.layer.cmp(&b.layer).then_with(|| a.name.cmp(&b.name)));
            ModuleGroup { group_key, members }
        })
        .collect();
    skipped.sort();
    Ok(Discovery { groups, skipped })
}
