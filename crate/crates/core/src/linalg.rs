//! Dense vector helpers over plain slices.
//!
//! Jacobians are stored row-major as flat `p * d` buffers; row `i` is
//! `jac[i * d..(i + 1) * d]`.

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm_sq(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    norm_sq(a).sqrt()
}

pub fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    dist_sq(a, b).sqrt()
}

/// `y += alpha * x`
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn scale(a: &mut [f64], s: f64) {
    a.iter_mut().for_each(|x| *x *= s);
}

pub fn all_finite(a: &[f64]) -> bool {
    a.iter().all(|x| x.is_finite())
}

/// `jacᵀ · v` for a row-major `rows x cols` Jacobian.
pub fn jac_t_vec(jac: &[f64], rows: usize, cols: usize, v: &[f64]) -> Vec<f64> {
    debug_assert_eq!(jac.len(), rows * cols);
    debug_assert_eq!(v.len(), rows);
    let mut out = vec![0.0; cols];
    for (row, &vi) in jac.chunks_exact(cols).zip(v) {
        axpy(vi, row, &mut out);
    }
    out
}

/// `jac · w` for a row-major `rows x cols` Jacobian.
pub fn jac_vec(jac: &[f64], cols: usize, w: &[f64]) -> Vec<f64> {
    jac.chunks_exact(cols).map(|row| dot(row, w)).collect()
}

/// Ceiling that ignores floating-point noise just above an integer, so that
/// e.g. `18 * ln(e)` rounds to 18 rather than 19.
pub fn ceil_tol(x: f64) -> f64 {
    let tol = 1e-9 * x.abs().max(1.0);
    (x - tol).ceil()
}
