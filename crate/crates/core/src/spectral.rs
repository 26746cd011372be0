//! Marchenko-Pastur thresholded signal-to-noise ratio of a weight matrix.
//!
//! For an `m × n` matrix with singular values `σ₁ ≥ … ≥ σ_p` (`p = min(m, n)`):
//!
//! * a noise scale `σ̂` is estimated robustly from the interquartile range
//!   of the singular values,
//! * the aspect ratio is `β = min(m,n) / max(m,n)`,
//! * the threshold is `ε = σ̂ (1 + √β)`, the Marchenko-Pastur upper edge
//!   without the `1/√n` normalisation,
//! * `SNR = Σ_{σ_k > ε} σ_k / Σ_{σ_k ≤ ε} σ_k`, reported raw and divided by
//!   `σ₁`.
//!
//! Ties at the threshold count as noise. An all-signal spectrum has SNR
//! `+∞`; an all-zero matrix has SNR 0.

use std::cmp::Ordering;
use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::checkpoint::TensorRecord;
use crate::error::SpectralError;
use crate::linalg;

/// Interquartile range of a standard normal distribution.
pub const GAUSSIAN_IQR: f64 = 1.349;

/// Dense row-major matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, SpectralError> {
        if rows == 0 || cols == 0 {
            return Err(SpectralError::EmptyMatrix { rows, cols });
        }
        if data.len() != rows * cols {
            return Err(SpectralError::ShapeMismatch {
                rows,
                cols,
                len: data.len(),
            });
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn scaled(&self, c: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * c).collect(),
        }
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.set(j, i, self.get(i, j));
            }
        }
        t
    }

    pub fn to_f32(&self) -> Vec<f32> {
        self.data.iter().map(|&v| v as f32).collect()
    }
}

/// Singular values of one matrix, descending.
#[derive(Debug, Clone, PartialEq)]
pub struct SvdResult {
    pub singular_values: Vec<f64>,
    pub rows: usize,
    pub cols: usize,
}

impl SvdResult {
    /// Wraps precomputed singular values after checking the invariants
    /// (length `min(rows, cols)`, finite, non-negative, non-increasing).
    pub fn new(singular_values: Vec<f64>, rows: usize, cols: usize) -> Result<Self, SpectralError> {
        if rows == 0 || cols == 0 {
            return Err(SpectralError::EmptyMatrix { rows, cols });
        }
        if singular_values.len() != rows.min(cols) {
            return Err(SpectralError::InvalidSingularValues(format!(
                "{} values for a {rows}x{cols} matrix",
                singular_values.len()
            )));
        }
        if singular_values.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return Err(SpectralError::InvalidSingularValues(
                "values must be finite and non-negative".into(),
            ));
        }
        if singular_values.windows(2).any(|w| w[0] < w[1]) {
            return Err(SpectralError::InvalidSingularValues(
                "not sorted descending".into(),
            ));
        }
        Ok(SvdResult {
            singular_values,
            rows,
            cols,
        })
    }

    pub fn max(&self) -> f64 {
        self.singular_values[0]
    }

    pub fn total(&self) -> f64 {
        self.singular_values.iter().sum()
    }
}

/// Noise scale and the derived Marchenko-Pastur edges.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MpBounds {
    pub sigma_estimate: f64,
    pub beta: f64,
    pub epsilon: f64,
    pub lambda_plus: f64,
    pub lambda_minus: f64,
}

/// How the noise scale `σ̂` is obtained from the singular values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SigmaEstimator {
    /// `IQR(σ) / c(β)`, where `c(β)` is the interquartile range of the
    /// singular values of an iid unit-variance matrix with aspect ratio β
    /// under the Marchenko-Pastur law. On pure noise `ε` then lands on the
    /// bulk edge.
    #[default]
    MarchenkoPastur,
    /// `IQR(σ) / 1.349`, the normal-consistent scale of the singular values
    /// taken as a sample.
    GaussianIqr,
}

impl SigmaEstimator {
    pub fn as_str(self) -> &'static str {
        match self {
            SigmaEstimator::MarchenkoPastur => "marchenko-pastur",
            SigmaEstimator::GaussianIqr => "gaussian-iqr",
        }
    }
}

impl fmt::Display for SigmaEstimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SigmaEstimator {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "marchenko-pastur" | "mp" => Ok(SigmaEstimator::MarchenkoPastur),
            "gaussian-iqr" | "gaussian" => Ok(SigmaEstimator::GaussianIqr),
            other => Err(format!(
                "unknown sigma estimator {other:?} (expected marchenko-pastur or gaussian-iqr)"
            )),
        }
    }
}

/// Per-matrix analysis result.
#[derive(Debug, Clone, PartialEq)]
pub struct SnrResult {
    pub tensor_name: String,
    pub rows: usize,
    pub cols: usize,
    pub signal_sum: f64,
    pub noise_sum: f64,
    /// `signal_sum / noise_sum`; `f64::INFINITY` when there is no noise mass.
    pub raw_snr: f64,
    /// `raw_snr / σ₁`; infinity propagates.
    pub normalized_snr: f64,
    pub max_singular_value: f64,
    pub bounds: MpBounds,
    pub signal_count: usize,
}

impl SnrResult {
    pub fn noise_count(&self) -> usize {
        self.rows.min(self.cols) - self.signal_count
    }
}

/// Orders SNR values for ranking: larger first, `+∞` before every finite
/// value.
pub fn snr_rank_cmp(a: f64, b: f64) -> Ordering {
    b.total_cmp(&a)
}

pub fn singular_values(matrix: &Matrix) -> Result<SvdResult, SpectralError> {
    let sv = linalg::singular_values_desc(&matrix.data, matrix.rows, matrix.cols)?;
    Ok(SvdResult {
        singular_values: sv,
        rows: matrix.rows,
        cols: matrix.cols,
    })
}

/// Linear-interpolation ("type 7") quantile of ascending-sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty data");
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn iqr_desc(values: &[f64]) -> f64 {
    let mut asc = values.to_vec();
    asc.reverse();
    (quantile_sorted(&asc, 0.75) - quantile_sorted(&asc, 0.25)).max(0.0)
}

/// `IQR(σ) / 1.349`.
pub fn estimate_sigma(svd: &SvdResult) -> f64 {
    iqr_desc(&svd.singular_values) / GAUSSIAN_IQR
}

pub fn estimate_sigma_with(svd: &SvdResult, estimator: SigmaEstimator) -> f64 {
    match estimator {
        SigmaEstimator::GaussianIqr => estimate_sigma(svd),
        SigmaEstimator::MarchenkoPastur => {
            let beta = aspect_ratio(svd.rows, svd.cols);
            iqr_desc(&svd.singular_values) / mp_singular_value_iqr(beta)
        }
    }
}

pub fn aspect_ratio(rows: usize, cols: usize) -> f64 {
    rows.min(cols) as f64 / rows.max(cols) as f64
}

/// Distribution of `√λ` for λ following the Marchenko-Pastur law with ratio
/// `β ∈ (0, 1]` and unit variance, i.e. singular values of `W / √max(m,n)`
/// for iid unit-variance `W`.
///
/// Integration runs in the angle `θ` with `λ = a + (b - a)(1 - cos θ)/2`,
/// which removes the square-root endpoints of the density.
struct MpLaw {
    beta: f64,
    lo: f64,
    hi: f64,
}

impl MpLaw {
    fn new(beta: f64) -> Self {
        let r = beta.sqrt();
        MpLaw {
            beta,
            lo: (1.0 - r) * (1.0 - r),
            hi: (1.0 + r) * (1.0 + r),
        }
    }

    fn lambda(&self, theta: f64) -> f64 {
        self.lo + (self.hi - self.lo) * (1.0 - theta.cos()) / 2.0
    }

    fn density_theta(&self, theta: f64) -> f64 {
        let half = (self.hi - self.lo) / 2.0;
        let s = theta.sin();
        let lambda = self.lambda(theta);
        if lambda <= 0.0 {
            // β = 1 at θ = 0, where sin²θ / λ → 2 / half
            return half / (PI * self.beta);
        }
        half * half * s * s / (2.0 * PI * self.beta * lambda)
    }

    /// CDF at angle `theta` by composite Simpson.
    fn cdf_theta(&self, theta: f64) -> f64 {
        const PANELS: usize = 512;
        let h = theta / PANELS as f64;
        let mut acc = self.density_theta(0.0) + self.density_theta(theta);
        for k in 1..PANELS {
            let w = if k % 2 == 1 { 4.0 } else { 2.0 };
            acc += w * self.density_theta(k as f64 * h);
        }
        acc * h / 3.0
    }

    fn singular_value_quantile(&self, p: f64) -> f64 {
        let (mut a, mut b) = (0.0, PI);
        for _ in 0..80 {
            let mid = 0.5 * (a + b);
            if self.cdf_theta(mid) < p {
                a = mid;
            } else {
                b = mid;
            }
        }
        self.lambda(0.5 * (a + b)).sqrt()
    }
}

/// Interquartile range of the limiting singular-value distribution of an
/// iid unit-variance matrix with aspect ratio `β`, in units of
/// `√max(m, n)`.
pub fn mp_singular_value_iqr(beta: f64) -> f64 {
    assert!(beta > 0.0 && beta <= 1.0, "aspect ratio must be in (0, 1]");
    let law = MpLaw::new(beta);
    law.singular_value_quantile(0.75) - law.singular_value_quantile(0.25)
}

pub fn mp_bounds(sigma: f64, rows: usize, cols: usize) -> MpBounds {
    assert!(rows >= 1 && cols >= 1, "matrix dimensions must be positive");
    assert!(sigma >= 0.0, "sigma must be non-negative");
    let beta = aspect_ratio(rows, cols);
    let r = beta.sqrt();
    MpBounds {
        sigma_estimate: sigma,
        beta,
        epsilon: sigma * (1.0 + r),
        lambda_plus: sigma * sigma * (1.0 + r) * (1.0 + r),
        lambda_minus: sigma * sigma * (1.0 - r) * (1.0 - r),
    }
}

pub fn snr(matrix_name: &str, svd: &SvdResult, bounds: &MpBounds) -> SnrResult {
    let eps = bounds.epsilon;
    let (mut signal_sum, mut noise_sum, mut signal_count) = (0.0, 0.0, 0usize);
    for &s in &svd.singular_values {
        if s > eps {
            signal_sum += s;
            signal_count += 1;
        } else {
            noise_sum += s;
        }
    }
    let raw_snr = if noise_sum > 0.0 {
        signal_sum / noise_sum
    } else if signal_sum > 0.0 {
        f64::INFINITY
    } else {
        0.0
    };
    let max_sv = svd.max();
    let normalized_snr = if max_sv > 0.0 { raw_snr / max_sv } else { 0.0 };
    SnrResult {
        tensor_name: matrix_name.to_string(),
        rows: svd.rows,
        cols: svd.cols,
        signal_sum,
        noise_sum,
        raw_snr,
        normalized_snr,
        max_singular_value: max_sv,
        bounds: *bounds,
        signal_count,
    }
}

/// singular values → σ̂ → bounds → SNR for an in-memory matrix.
pub fn analyze_dense(
    name: &str,
    matrix: &Matrix,
    estimator: SigmaEstimator,
) -> Result<SnrResult, SpectralError> {
    let svd = singular_values(matrix)?;
    let sigma = estimate_sigma_with(&svd, estimator);
    let bounds = mp_bounds(sigma, svd.rows, svd.cols);
    Ok(snr(name, &svd, &bounds))
}

pub fn analyze_matrix(record: &TensorRecord) -> Result<SnrResult, SpectralError> {
    analyze_matrix_with(record, SigmaEstimator::default())
}

pub fn analyze_matrix_with(
    record: &TensorRecord,
    estimator: SigmaEstimator,
) -> Result<SnrResult, SpectralError> {
    let &[rows, cols] = record.shape.as_slice() else {
        return Err(SpectralError::NotMatrix(record.shape.len()));
    };
    if rows < 2 || cols < 2 {
        return Err(SpectralError::TooSmall { rows, cols });
    }
    if record.is_flagged() {
        return Err(SpectralError::FlaggedRecord(record.non_finite));
    }
    let matrix = Matrix::new(
        rows,
        cols,
        record.values.iter().map(|&v| f64::from(v)).collect(),
    )?;
    analyze_dense(&record.name, &matrix, estimator)
}
