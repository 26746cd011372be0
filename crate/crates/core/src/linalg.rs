//! Dense singular values without forming U or V.
//!
//! The matrix is reduced to upper bidiagonal form with Householder
//! reflections, and the singular values of the bidiagonal `B` are read off
//! as the non-negative eigenvalues of the Golub-Kahan matrix
//!
//! ```text
//!   T = [ 0  d1                ]
//!       [ d1 0  e1             ]
//!       [    e1 0  d2          ]
//!       [          ...         ]
//! ```
//!
//! whose spectrum is `±σ_i`. `T` is symmetric tridiagonal, so implicit QL
//! with Wilkinson shifts applies. Both stages are backward stable, which
//! gives an absolute error of a few ulps of `σ₁` on every singular value.

use crate::error::SpectralError;

const MAX_QL_ITERATIONS: usize = 60;

/// Singular values of a row-major `rows × cols` matrix, sorted descending.
pub fn singular_values_desc(
    data: &[f64],
    rows: usize,
    cols: usize,
) -> Result<Vec<f64>, SpectralError> {
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
    if let Some(index) = data.iter().position(|v| !v.is_finite()) {
        return Err(SpectralError::NonFinite { index });
    }

    // work on a tall copy (m >= n)
    let (m, n, mut a) = if rows >= cols {
        (rows, cols, data.to_vec())
    } else {
        let mut t = vec![0.0; rows * cols];
        for i in 0..rows {
            for j in 0..cols {
                t[j * rows + i] = data[i * cols + j];
            }
        }
        (cols, rows, t)
    };

    let max_abs = a.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    if max_abs == 0.0 {
        return Ok(vec![0.0; n]);
    }
    // power-of-two scaling is exact
    let scale = 2f64.powi(max_abs.log2().floor() as i32);
    a.iter_mut().for_each(|v| *v /= scale);

    let (d, e) = bidiagonalize(&mut a, m, n);
    let mut sv = bidiagonal_singular_values(&d, &e)?;
    sv.iter_mut().for_each(|s| *s *= scale);
    Ok(sv)
}

/// Householder reflector for `x`: returns `(v, tau, alpha)` with
/// `(I - tau v vᵀ) x = alpha e₁` and `v[0] = 1`.
fn householder(x: &[f64]) -> (Vec<f64>, f64, f64) {
    let x0 = x[0];
    let tail_sq: f64 = x[1..].iter().map(|v| v * v).sum();
    let mut v = x.to_vec();
    v[0] = 1.0;
    if tail_sq == 0.0 {
        return (v, 0.0, x0);
    }
    let norm = (x0 * x0 + tail_sq).sqrt();
    let alpha = if x0 >= 0.0 { -norm } else { norm };
    let v0 = x0 - alpha;
    for vi in v[1..].iter_mut() {
        *vi /= v0;
    }
    let tau = (alpha - x0) / alpha;
    (v, tau, alpha)
}

/// Reduces the tall row-major `m × n` matrix in place; returns the diagonal
/// (length n) and superdiagonal (length n-1) of the bidiagonal factor.
fn bidiagonalize(a: &mut [f64], m: usize, n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut d = vec![0.0; n];
    let mut e = vec![0.0; n.saturating_sub(1)];
    let mut w = vec![0.0; n];

    for k in 0..n {
        // left reflector zeroes A[k+1.., k]
        let col: Vec<f64> = (k..m).map(|i| a[i * n + k]).collect();
        let (v, tau, alpha) = householder(&col);
        d[k] = alpha;
        if tau != 0.0 && k + 1 < n {
            let w = &mut w[k + 1..n];
            w.iter_mut().for_each(|x| *x = 0.0);
            for (vi, i) in v.iter().zip(k..m) {
                let row = &a[i * n + k + 1..i * n + n];
                for (wj, aij) in w.iter_mut().zip(row) {
                    *wj += vi * aij;
                }
            }
            for (vi, i) in v.iter().zip(k..m) {
                let f = tau * vi;
                let row = &mut a[i * n + k + 1..i * n + n];
                for (aij, wj) in row.iter_mut().zip(w.iter()) {
                    *aij -= f * wj;
                }
            }
        }

        // right reflector zeroes A[k, k+2..]
        if k + 1 < n {
            let row: Vec<f64> = a[k * n + k + 1..k * n + n].to_vec();
            let (v, tau, alpha) = householder(&row);
            e[k] = alpha;
            if tau != 0.0 {
                for i in k + 1..m {
                    let r = &mut a[i * n + k + 1..i * n + n];
                    let s: f64 = r.iter().zip(&v).map(|(x, y)| x * y).sum();
                    let f = tau * s;
                    for (x, vj) in r.iter_mut().zip(&v) {
                        *x -= f * vj;
                    }
                }
            }
        }
    }
    (d, e)
}

fn bidiagonal_singular_values(d: &[f64], e: &[f64]) -> Result<Vec<f64>, SpectralError> {
    let n = d.len();
    let size = 2 * n;
    let mut diag = vec![0.0; size];
    // off[i] couples i and i+1; the last slot is scratch for the QL sweep
    let mut off = vec![0.0; size];
    for k in 0..n {
        off[2 * k] = d[k];
        if k + 1 < n {
            off[2 * k + 1] = e[k];
        }
    }
    tridiagonal_eigenvalues(&mut diag, &mut off)?;

    diag.sort_by(|a, b| b.total_cmp(a));
    let mut sv: Vec<f64> = diag[..n].iter().map(|v| v.abs()).collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    Ok(sv)
}

/// Eigenvalues of a symmetric tridiagonal matrix by implicit QL.
///
/// `diag` holds the diagonal and receives the eigenvalues (unsorted);
/// `off[i]` is the (i, i+1) entry and is destroyed.
fn tridiagonal_eigenvalues(diag: &mut [f64], off: &mut [f64]) -> Result<(), SpectralError> {
    let n = diag.len();
    if n == 0 {
        return Ok(());
    }
    let norm = diag
        .iter()
        .chain(off.iter())
        .fold(0.0f64, |acc, v| acc.max(v.abs()));
    let floor = f64::EPSILON * norm;

    for l in 0..n {
        let mut iterations = 0;
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = diag[m].abs() + diag[m + 1].abs();
                if off[m].abs() <= f64::EPSILON * dd || off[m].abs() <= floor {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iterations += 1;
            if iterations > MAX_QL_ITERATIONS {
                return Err(SpectralError::NoConvergence);
            }

            let mut g = (diag[l + 1] - diag[l]) / (2.0 * off[l]);
            let mut r = g.hypot(1.0);
            g = diag[m] - diag[l] + off[l] / (g + r.copysign(g));
            let (mut s, mut c, mut p) = (1.0f64, 1.0f64, 0.0f64);
            let mut underflow = false;
            let mut i = m;
            while i > l {
                i -= 1;
                let f = s * off[i];
                let b = c * off[i];
                r = f.hypot(g);
                off[i + 1] = r;
                if r == 0.0 {
                    diag[i + 1] -= p;
                    off[m] = 0.0;
                    underflow = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = diag[i + 1] - p;
                r = (diag[i] - g) * s + 2.0 * c * b;
                p = s * r;
                diag[i + 1] = g + p;
                g = c * r - b;
            }
            if underflow {
                continue;
            }
            diag[l] -= p;
            off[l] = g;
            off[m] = 0.0;
        }
    }
    Ok(())
}
