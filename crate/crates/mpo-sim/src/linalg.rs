//! Hermitian eigenvalue helpers: dense solve at small dimension, Lanczos
//! extremal estimates above.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

/// Dimension cap for dense Hermitian eigensolves; larger matrices use Lanczos.
pub const DENSE_EIG_CAP: usize = 512;

/// All eigenvalues of a Hermitian matrix, ascending.
pub fn hermitian_eigenvalues(m: &DMatrix<Complex64>) -> Vec<f64> {
    let mut ev: Vec<f64> = m.clone().symmetric_eigen().eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| a.total_cmp(b));
    ev
}

/// Smallest eigenvalue of a Hermitian matrix: dense below [`DENSE_EIG_CAP`],
/// Lanczos extremal estimate above.
pub fn min_eigenvalue(m: &DMatrix<Complex64>) -> f64 {
    if m.nrows() <= DENSE_EIG_CAP {
        hermitian_eigenvalues(m)[0]
    } else {
        lanczos_extremes(m.nrows(), 80, |v| m * v).0
    }
}

/// Lanczos with full reorthogonalization on a Hermitian operator given as a
/// matvec closure. Returns (lowest, highest) Ritz values, which converge to
/// the extremal eigenvalues.
pub fn lanczos_extremes(
    dim: usize,
    max_iters: usize,
    matvec: impl Fn(&DVector<Complex64>) -> DVector<Complex64>,
) -> (f64, f64) {
    let iters = max_iters.min(dim);
    // Deterministic pseudo-random start vector so results are reproducible.
    let mut seed = 0x9e37_79b9_7f4a_7c15u64;
    let mut next = || {
        seed ^= seed << 13;
        seed ^= seed >> 7;
        seed ^= seed << 17;
        (seed >> 11) as f64 / (1u64 << 53) as f64 - 0.5
    };
    let mut q = DVector::from_fn(dim, |_, _| Complex64::new(next(), next()));
    q /= Complex64::new(q.norm(), 0.0);

    let mut basis: Vec<DVector<Complex64>> = vec![q.clone()];
    let mut alphas: Vec<f64> = Vec::new();
    let mut betas: Vec<f64> = Vec::new();

    for j in 0..iters {
        let mut w = matvec(&basis[j]);
        let alpha = basis[j].dotc(&w).re;
        alphas.push(alpha);
        // Full reorthogonalization keeps the Ritz values clean.
        for _ in 0..2 {
            for b in &basis {
                let coef = b.dotc(&w);
                w -= b * coef;
            }
        }
        let beta = w.norm();
        if beta < 1e-13 || j + 1 == iters {
            break;
        }
        betas.push(beta);
        basis.push(w / Complex64::new(beta, 0.0));
    }

    let k = alphas.len();
    let mut tri = DMatrix::<f64>::zeros(k, k);
    for i in 0..k {
        tri[(i, i)] = alphas[i];
        if i + 1 < k {
            tri[(i, i + 1)] = betas[i];
            tri[(i + 1, i)] = betas[i];
        }
    }
    let ev = tri.symmetric_eigen().eigenvalues;
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &e in ev.iter() {
        lo = lo.min(e);
        hi = hi.max(e);
    }
    (lo, hi)
}
