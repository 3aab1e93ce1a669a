//! Small dense linear algebra used as an independent reference path for the
//! sparse solvers: a cyclic Jacobi eigensolver, matrix exponentials built on
//! it, and the closed-form solution of the skew-coupled edge-node system.
//!
//! Everything here is O(n^3) or worse and meant for n up to a few dozen.

use crate::error::{Error, Result};
use crate::sparse::SparseMatrix;

pub fn mat_vec(a: &[f64], rows: usize, cols: usize, x: &[f64]) -> Vec<f64> {
    assert_eq!(a.len(), rows * cols);
    assert_eq!(x.len(), cols);
    let mut y = vec![0.0; rows];
    for r in 0..rows {
        let mut acc = 0.0;
        for c in 0..cols {
            acc += a[r * cols + c] * x[c];
        }
        y[r] = acc;
    }
    y
}

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Returns eigenvalues in ascending order and the matching eigenvectors as
/// columns of a row-major n x n matrix, so a = V diag(w) Vᵀ.
pub fn symmetric_eigen(a: &[f64], n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    assert_eq!(a.len(), n * n);
    for i in 0..n {
        for j in (i + 1)..n {
            if (a[i * n + j] - a[j * n + i]).abs() > 1e-12 * (1.0 + a[i * n + j].abs()) {
                return Err(Error::Invalid(format!(
                    "matrix not symmetric at ({i}, {j})"
                )));
            }
        }
    }
    let mut m = a.to_vec();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let fro: f64 = m.iter().map(|x| x * x).sum::<f64>().sqrt();
    let stop = (1e-15 * fro.max(1e-300)).powi(2);

    for _sweep in 0..100 {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += m[i * n + j] * m[i * n + j];
            }
        }
        if off <= stop {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (m[q * n + q] - m[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for i in 0..n {
                    let aip = m[i * n + p];
                    let aiq = m[i * n + q];
                    m[i * n + p] = c * aip - s * aiq;
                    m[i * n + q] = s * aip + c * aiq;
                }
                for j in 0..n {
                    let apj = m[p * n + j];
                    let aqj = m[q * n + j];
                    m[p * n + j] = c * apj - s * aqj;
                    m[q * n + j] = s * apj + c * aqj;
                }
                for i in 0..n {
                    let vip = v[i * n + p];
                    let viq = v[i * n + q];
                    v[i * n + p] = c * vip - s * viq;
                    v[i * n + q] = s * vip + c * viq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[i * n + i].total_cmp(&m[j * n + j]));
    let mut evals = vec![0.0; n];
    let mut evecs = vec![0.0; n * n];
    for (new, &old) in order.iter().enumerate() {
        evals[new] = m[old * n + old];
        for i in 0..n {
            evecs[i * n + new] = v[i * n + old];
        }
    }
    Ok((evals, evecs))
}

/// exp(t a) x for symmetric a, through the eigendecomposition.
pub fn symmetric_expm_apply(a: &[f64], n: usize, t: f64, x: &[f64]) -> Result<Vec<f64>> {
    let (w, v) = symmetric_eigen(a, n)?;
    // y = V exp(t w) Vᵀ x
    let mut coeffs = vec![0.0; n];
    for k in 0..n {
        let mut acc = 0.0;
        for i in 0..n {
            acc += v[i * n + k] * x[i];
        }
        coeffs[k] = acc * (t * w[k]).exp();
    }
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut acc = 0.0;
        for k in 0..n {
            acc += v[i * n + k] * coeffs[k];
        }
        y[i] = acc;
    }
    Ok(y)
}

/// exp(t diag(s) k) x for symmetric k and strictly positive s, via the
/// similarity diag(s)^1/2 k~ diag(s)^-1/2 with k~ = s^1/2 k s^1/2.
pub fn expm_scaled_symmetric_apply(
    scale: &[f64],
    k: &[f64],
    n: usize,
    t: f64,
    x: &[f64],
) -> Result<Vec<f64>> {
    assert_eq!(scale.len(), n);
    assert_eq!(k.len(), n * n);
    for (i, &s) in scale.iter().enumerate() {
        if !(s > 0.0 && s.is_finite()) {
            return Err(Error::Invalid(format!("scale must be positive at {i}")));
        }
    }
    let sqrt_s: Vec<f64> = scale.iter().map(|s| s.sqrt()).collect();
    let mut sym = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            sym[i * n + j] = sqrt_s[i] * k[i * n + j] * sqrt_s[j];
        }
    }
    let xs: Vec<f64> = (0..n).map(|i| x[i] / sqrt_s[i]).collect();
    let ys = symmetric_expm_apply(&sym, n, t, &xs)?;
    Ok((0..n).map(|i| ys[i] * sqrt_s[i]).collect())
}

/// Closed-form state of the coupled system df/dt = Bᵀ g, dg/dt = -B f at
/// time t, via the eigendecomposition of BᵀB. Null modes of B carry the
/// constant part of f; Bᵀ g0 has no component on them.
pub fn skew_closed_form(
    b: &SparseMatrix,
    f0: &[f64],
    g0: &[f64],
    t: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let (n_edges, n_nodes) = b.shape();
    assert_eq!(f0.len(), n_nodes);
    assert_eq!(g0.len(), n_edges);

    let bt = b.transpose();
    let lv = bt.matmul_sparse(b)?.to_dense();
    let (w, v) = symmetric_eigen(&lv, n_nodes)?;
    let wmax = w.iter().fold(0.0f64, |m, &x| m.max(x.abs()));
    let zero_cut = 1e-12 * wmax.max(1.0);

    let btg0 = b.matvec_transpose(g0);
    let proj = |x: &[f64], k: usize| -> f64 {
        let mut acc = 0.0;
        for i in 0..n_nodes {
            acc += v[i * n_nodes + k] * x[i];
        }
        acc
    };

    // f(t) = V cos(sqrt(w) t) Vᵀ f0 + V sinc_t(w) Vᵀ Bᵀ g0
    // s(t) = V sinc_t(w) Vᵀ f0 + V m_t(w) Vᵀ Bᵀ g0, g(t) = g0 - B s(t)
    let mut f = vec![0.0; n_nodes];
    let mut s = vec![0.0; n_nodes];
    for k in 0..n_nodes {
        let cf = proj(f0, k);
        let cg = proj(&btg0, k);
        let (cos_c, sinc_c, m_c);
        if w[k] <= zero_cut {
            // null mode: B v_k = 0 and v_kᵀ Bᵀ g0 = 0 identically
            cos_c = 1.0;
            sinc_c = t;
            m_c = 0.0;
        } else {
            let r = w[k].sqrt();
            cos_c = (r * t).cos();
            sinc_c = (r * t).sin() / r;
            m_c = (1.0 - (r * t).cos()) / w[k];
        }
        let f_coeff = cos_c * cf + sinc_c * cg;
        let s_coeff = sinc_c * cf + m_c * cg;
        for i in 0..n_nodes {
            f[i] += v[i * n_nodes + k] * f_coeff;
            s[i] += v[i * n_nodes + k] * s_coeff;
        }
    }
    let bs = b.matvec(&s);
    let g: Vec<f64> = g0.iter().zip(&bs).map(|(g0e, bse)| g0e - bse).collect();
    Ok((f, g))
}
