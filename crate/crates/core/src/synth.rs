//! Synthetic matrices and mini-checkpoints with known spectral structure,
//! plus the Gram-matrix eigenvalue oracle used to check the SVD.
//!
//! Randomness comes from xoshiro256** seeded through SplitMix64
//! (`seed_from_u64`), with Gaussian deviates from the Box-Muller transform.
//! Both halves of each Box-Muller pair are used, in order. A spiked matrix
//! draws its noise from the stream for `seed`, its left directions from
//! that stream after one `long_jump`, and its right directions after two.

use std::path::Path;

use nalgebra::DMatrix;
use rand::{RngCore, SeedableRng};
use rand_xoshiro::Xoshiro256StarStar;

use crate::checkpoint::{write_fixture, Dtype, TensorRecord};
use crate::error::SynthError;
use crate::spectral::Matrix;

/// Seeded standard-normal generator.
pub struct GaussianStream {
    rng: Xoshiro256StarStar,
    spare: Option<f64>,
}

impl GaussianStream {
    pub fn new(seed: u64) -> Self {
        Self::from_rng(Xoshiro256StarStar::seed_from_u64(seed))
    }

    fn from_rng(rng: Xoshiro256StarStar) -> Self {
        GaussianStream { rng, spare: None }
    }

    /// Stream for `seed` advanced by `jumps` calls of `long_jump` (2^192
    /// steps each), giving non-overlapping sub-streams.
    pub fn jumped(seed: u64, jumps: usize) -> Self {
        let mut rng = Xoshiro256StarStar::seed_from_u64(seed);
        for _ in 0..jumps {
            rng.long_jump();
        }
        Self::from_rng(rng)
    }

    /// Uniform on (0, 1], 53-bit resolution.
    fn uniform_open0(&mut self) -> f64 {
        ((self.rng.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn next_standard(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        let u1 = self.uniform_open0();
        let u2 = self.uniform_open0();
        let r = (-2.0 * u1.ln()).sqrt();
        let t = 2.0 * std::f64::consts::PI * u2;
        self.spare = Some(r * t.sin());
        r * t.cos()
    }
}

/// `rows × cols` matrix of iid N(0, sigma²) entries, filled row-major.
pub fn gen_noise(rows: usize, cols: usize, sigma: f64, seed: u64) -> Result<Matrix, SynthError> {
    if rows == 0 || cols == 0 {
        return Err(SynthError::InvalidParameter(format!(
            "empty shape {rows}x{cols}"
        )));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(SynthError::InvalidParameter(format!(
            "sigma must be positive, got {sigma}"
        )));
    }
    let mut g = GaussianStream::new(seed);
    let data = (0..rows * cols)
        .map(|_| sigma * g.next_standard())
        .collect();
    Ok(Matrix { rows, cols, data })
}

/// Low-rank signal plus iid noise.
#[derive(Debug, Clone, PartialEq)]
pub struct SpikedSpec {
    pub rows: usize,
    pub cols: usize,
    pub noise_sigma: f64,
    pub spikes: Vec<f64>,
    pub seed: u64,
}

/// `k` orthonormal columns of length `n` (returned column-major, `k` slices
/// of length `n`) by modified Gram-Schmidt QR of Gaussian draws, with one
/// re-orthogonalisation pass.
fn orthonormal_columns(n: usize, k: usize, stream: &mut GaussianStream) -> Vec<Vec<f64>> {
    let mut q: Vec<Vec<f64>> = Vec::with_capacity(k);
    while q.len() < k {
        let mut v: Vec<f64> = (0..n).map(|_| stream.next_standard()).collect();
        for _ in 0..2 {
            for prev in &q {
                let r: f64 = prev.iter().zip(&v).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(prev).for_each(|(x, p)| *x -= r * p);
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            v.iter_mut().for_each(|x| *x /= norm);
            q.push(v);
        }
    }
    q
}

/// `Σ aᵢ uᵢ vᵢᵀ + N` with orthonormal `{uᵢ}`, `{vᵢ}`. With no spikes the
/// result is exactly `gen_noise(rows, cols, noise_sigma, seed)`.
pub fn gen_spiked(spec: &SpikedSpec) -> Result<Matrix, SynthError> {
    let SpikedSpec {
        rows,
        cols,
        noise_sigma,
        ref spikes,
        seed,
    } = *spec;
    if spikes.len() > rows.min(cols) {
        return Err(SynthError::TooManySpikes {
            spikes: spikes.len(),
            rows,
            cols,
        });
    }
    if spikes.iter().any(|a| !(*a > 0.0 && a.is_finite())) {
        return Err(SynthError::InvalidParameter(
            "spike amplitudes must be positive".into(),
        ));
    }
    let mut m = gen_noise(rows, cols, noise_sigma, seed)?;
    if spikes.is_empty() {
        return Ok(m);
    }
    let u = orthonormal_columns(rows, spikes.len(), &mut GaussianStream::jumped(seed, 1));
    let v = orthonormal_columns(cols, spikes.len(), &mut GaussianStream::jumped(seed, 2));
    for ((a, ui), vi) in spikes.iter().zip(&u).zip(&v) {
        for (i, &x) in ui.iter().enumerate() {
            let row = &mut m.data[i * cols..(i + 1) * cols];
            for (dst, &y) in row.iter_mut().zip(vi) {
                *dst += a * x * y;
            }
        }
    }
    Ok(m)
}

/// Eigenvalues of the smaller Gram matrix (`WᵀW` for tall `W`, `WWᵀ`
/// otherwise), sorted descending. These are the squared singular values.
pub fn gram_eigen_oracle(matrix: &Matrix) -> Vec<f64> {
    let w = DMatrix::from_row_slice(matrix.rows, matrix.cols, &matrix.data);
    let gram = if matrix.rows >= matrix.cols {
        w.tr_mul(&w)
    } else {
        &w * w.transpose()
    };
    let mut eig: Vec<f64> = gram.symmetric_eigenvalues().iter().copied().collect();
    eig.sort_by(|a, b| b.total_cmp(a));
    eig
}

/// Planted spikes for each layer of a group.
#[derive(Debug, Clone, PartialEq)]
pub enum SpikeSchedule {
    /// Same spikes in every layer.
    Constant(Vec<f64>),
    /// Layer `i` gets `[anchor, step·(i+1)]`; the anchor is omitted when 0.
    /// A fixed anchor keeps `σ₁` constant across layers, so the normalized
    /// SNR orders layers by the ramp spike.
    Ramp { anchor: f64, step: f64 },
    /// Explicit spikes per layer; must have one entry per layer.
    PerLayer(Vec<Vec<f64>>),
}

impl SpikeSchedule {
    fn spikes_for(&self, layer: usize) -> Vec<f64> {
        match self {
            SpikeSchedule::Constant(s) => s.clone(),
            SpikeSchedule::Ramp { anchor, step } => {
                let ramp = step * (layer + 1) as f64;
                if *anchor > 0.0 {
                    vec![*anchor, ramp]
                } else {
                    vec![ramp]
                }
            }
            SpikeSchedule::PerLayer(v) => v[layer].clone(),
        }
    }
}

/// One module group of a synthetic transformer, e.g. `self_attn.q_proj`.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupSpec {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub noise_sigma: f64,
    pub seed: u64,
    /// Every layer reuses `seed`, so all layers share the same noise draw
    /// and spike directions. Otherwise layer `i` uses `seed + i`.
    pub shared_noise: bool,
    pub spikes: SpikeSchedule,
}

impl GroupSpec {
    pub fn new(name: impl Into<String>, rows: usize, cols: usize, spikes: SpikeSchedule) -> Self {
        GroupSpec {
            name: name.into(),
            rows,
            cols,
            noise_sigma: 0.01,
            seed: 0,
            shared_noise: true,
            spikes,
        }
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn noise_sigma(mut self, sigma: f64) -> Self {
        self.noise_sigma = sigma;
        self
    }

    pub fn independent_noise(mut self) -> Self {
        self.shared_noise = false;
        self
    }
}

pub fn layer_tensor_name(layer: usize, group: &str) -> String {
    format!("model.layers.{layer}.{group}.weight")
}

/// Records of a synthetic checkpoint: one 2-D tensor per layer and group,
/// a 1-D norm per layer and a final 1-D norm as decoys.
pub fn mini_checkpoint_records(
    layers: usize,
    groups: &[GroupSpec],
) -> Result<Vec<TensorRecord>, SynthError> {
    if layers == 0 {
        return Err(SynthError::InvalidParameter(
            "layers must be at least 1".into(),
        ));
    }
    let mut out = Vec::new();
    for g in groups {
        if let SpikeSchedule::PerLayer(v) = &g.spikes {
            if v.len() != layers {
                return Err(SynthError::InvalidParameter(format!(
                    "group {} has spikes for {} layers, expected {layers}",
                    g.name,
                    v.len()
                )));
            }
        }
        for layer in 0..layers {
            let seed = if g.shared_noise {
                g.seed
            } else {
                g.seed.wrapping_add(layer as u64)
            };
            let m = gen_spiked(&SpikedSpec {
                rows: g.rows,
                cols: g.cols,
                noise_sigma: g.noise_sigma,
                spikes: g.spikes.spikes_for(layer),
                seed,
            })?;
            out.push(TensorRecord::with_dtype(
                layer_tensor_name(layer, &g.name),
                vec![g.rows, g.cols],
                Dtype::F32,
                m.to_f32(),
            )?);
        }
    }
    let width = groups.first().map_or(8, |g| g.cols);
    for layer in 0..layers {
        out.push(TensorRecord::new(
            format!("model.layers.{layer}.input_layernorm.weight"),
            vec![width],
            vec![1.0; width],
        )?);
    }
    out.push(TensorRecord::new(
        "model.norm.weight",
        vec![width],
        vec![1.0; width],
    )?);
    Ok(out)
}

/// Writes [`mini_checkpoint_records`] to a single container file.
pub fn gen_mini_checkpoint(
    layers: usize,
    groups: &[GroupSpec],
    path: impl AsRef<Path>,
) -> Result<(), SynthError> {
    let records = mini_checkpoint_records(layers, groups)?;
    write_fixture(&records, path)?;
    Ok(())
}
