//! JSON encoding of scan reports.
//!
//! Keys are emitted in sorted order, floats with 17 significant digits
//! (`%.17g` style) and `+∞` as the string `"inf"`, so equal reports always
//! serialize to equal bytes.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::value::RawValue;

use super::{ScanConfig, ScanReport, ScannedEntry, SkippedTensor, DEFAULT_BATCH_SIZE};
use crate::error::ScanError;
use crate::spectral::{MpBounds, SigmaEstimator, SnrResult};

/// Formats like C's `%.17g`: shortest of fixed/scientific, trailing zeros
/// removed. Infinite values become `inf`/`-inf`, NaN becomes `nan`.
pub fn format_float(v: f64) -> String {
    if v.is_nan() {
        return "nan".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if v == 0.0 {
        return if v.is_sign_negative() {
            "-0".into()
        } else {
            "0".into()
        };
    }
    const P: i32 = 17;
    let sci = format!("{:.*e}", (P - 1) as usize, v.abs());
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    let digits: String = mantissa.chars().filter(|c| c.is_ascii_digit()).collect();
    let sign = if v < 0.0 { "-" } else { "" };

    let body = if (-4..P).contains(&exp) {
        if exp >= 0 {
            let split = exp as usize + 1;
            let (int, frac) = digits.split_at(split);
            join_fraction(int, frac)
        } else {
            let frac = format!("{}{}", "0".repeat((-exp - 1) as usize), digits);
            join_fraction("0", &frac)
        }
    } else {
        let (first, rest) = digits.split_at(1);
        let exp_sign = if exp < 0 { '-' } else { '+' };
        format!(
            "{}e{}{:02}",
            join_fraction(first, rest),
            exp_sign,
            exp.abs()
        )
    };
    format!("{sign}{body}")
}

fn join_fraction(int: &str, frac: &str) -> String {
    let frac = frac.trim_end_matches('0');
    if frac.is_empty() {
        int.to_string()
    } else {
        format!("{int}.{frac}")
    }
}

/// Float field: a JSON number, or `"inf"` for the `+∞` sentinel.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Float(f64);

impl Serialize for Float {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        if self.0.is_finite() {
            let raw =
                RawValue::from_string(format_float(self.0)).map_err(serde::ser::Error::custom)?;
            raw.serialize(s)
        } else {
            s.serialize_str(&format_float(self.0))
        }
    }
}

impl<'de> Deserialize<'de> for Float {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Str(String),
        }
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(Float(v)),
            Repr::Str(s) if s == "inf" => Ok(Float(f64::INFINITY)),
            Repr::Str(s) => Err(D::Error::custom(format!(
                "expected a number or \"inf\", got {s:?}"
            ))),
        }
    }
}

// Field order is alphabetical so the output keys are sorted.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EntryJson {
    beta: Float,
    cols: usize,
    epsilon: Float,
    lambda_minus: Float,
    lambda_plus: Float,
    layer: Option<usize>,
    max_singular_value: Float,
    name: String,
    noise_sum: Float,
    rows: usize,
    sigma: Float,
    signal_count: usize,
    signal_sum: Float,
    snr_normalized: Float,
    snr_raw: Float,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigJson {
    default_excludes: bool,
    exclude: Vec<String>,
    include: Vec<String>,
    sigma_estimator: SigmaEstimator,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SkippedJson {
    name: String,
    reason: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ReportJson {
    config: ConfigJson,
    groups: BTreeMap<String, Vec<EntryJson>>,
    model_id: String,
    skipped: Vec<SkippedJson>,
}

fn to_json(report: &ScanReport) -> ReportJson {
    let mut groups: BTreeMap<String, Vec<EntryJson>> = BTreeMap::new();
    let mut sorted: Vec<&ScannedEntry> = report.scanned.iter().collect();
    sorted.sort_by(|a, b| super::entry_order(a, b));
    for e in sorted {
        let r = &e.result;
        groups
            .entry(e.group_key.clone())
            .or_default()
            .push(EntryJson {
                beta: Float(r.bounds.beta),
                cols: r.cols,
                epsilon: Float(r.bounds.epsilon),
                lambda_minus: Float(r.bounds.lambda_minus),
                lambda_plus: Float(r.bounds.lambda_plus),
                layer: e.layer,
                max_singular_value: Float(r.max_singular_value),
                name: r.tensor_name.clone(),
                noise_sum: Float(r.noise_sum),
                rows: r.rows,
                sigma: Float(r.bounds.sigma_estimate),
                signal_count: r.signal_count,
                signal_sum: Float(r.signal_sum),
                snr_normalized: Float(r.normalized_snr),
                snr_raw: Float(r.raw_snr),
            });
    }
    let mut skipped: Vec<&SkippedTensor> = report.skipped.iter().collect();
    skipped.sort();
    ReportJson {
        config: ConfigJson {
            default_excludes: report.config.default_excludes,
            exclude: report.config.exclude.clone(),
            include: report.config.include.clone(),
            sigma_estimator: report.config.sigma_estimator,
        },
        groups,
        model_id: report.model_id.clone(),
        skipped: skipped
            .into_iter()
            .map(|s| SkippedJson {
                name: s.name.clone(),
                reason: s.reason.clone(),
            })
            .collect(),
    }
}

fn from_json(json: ReportJson) -> Result<ScanReport, String> {
    let mut scanned = Vec::new();
    for (group_key, entries) in json.groups {
        for e in entries {
            if e.rows == 0 || e.cols == 0 || e.signal_count > e.rows.min(e.cols) {
                return Err(format!("entry {:?} has inconsistent dimensions", e.name));
            }
            scanned.push(ScannedEntry {
                group_key: group_key.clone(),
                layer: e.layer,
                result: SnrResult {
                    tensor_name: e.name,
                    rows: e.rows,
                    cols: e.cols,
                    signal_sum: e.signal_sum.0,
                    noise_sum: e.noise_sum.0,
                    raw_snr: e.snr_raw.0,
                    normalized_snr: e.snr_normalized.0,
                    max_singular_value: e.max_singular_value.0,
                    bounds: MpBounds {
                        sigma_estimate: e.sigma.0,
                        beta: e.beta.0,
                        epsilon: e.epsilon.0,
                        lambda_plus: e.lambda_plus.0,
                        lambda_minus: e.lambda_minus.0,
                    },
                    signal_count: e.signal_count,
                },
            });
        }
    }
    let skipped: Vec<SkippedTensor> = json
        .skipped
        .into_iter()
        .map(|s| SkippedTensor::new(s.name, s.reason))
        .collect();

    let mut names = std::collections::BTreeSet::new();
    for n in scanned
        .iter()
        .map(|e| e.result.tensor_name.as_str())
        .chain(skipped.iter().map(|s| s.name.as_str()))
    {
        if !names.insert(n) {
            return Err(format!("tensor {n:?} listed more than once"));
        }
    }

    let mut report = ScanReport {
        model_id: json.model_id,
        config: ScanConfig {
            include: json.config.include,
            exclude: json.config.exclude,
            default_excludes: json.config.default_excludes,
            sigma_estimator: json.config.sigma_estimator,
            batch_size: DEFAULT_BATCH_SIZE,
        },
        scanned,
        skipped,
    };
    report.sort();
    Ok(report)
}

/// The exact text [`write_report`] puts in the file.
pub fn report_to_string(report: &ScanReport) -> String {
    let mut text = serde_json::to_string_pretty(&to_json(report)).expect("report serializes");
    text.push('\n');
    text
}

pub fn write_report(report: &ScanReport, path: impl AsRef<Path>) -> Result<(), ScanError> {
    let path = path.as_ref();
    fs::write(path, report_to_string(report)).map_err(|source| ScanError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Reads a report. The batch size is not stored, so it comes back as the
/// default.
pub fn read_report(path: impl AsRef<Path>) -> Result<ScanReport, ScanError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| ScanError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let malformed = |reason: String| ScanError::MalformedReport {
        path: path.to_path_buf(),
        reason,
    };
    let json: ReportJson = serde_json::from_str(&text).map_err(|e| malformed(e.to_string()))?;
    from_json(json).map_err(malformed)
}
