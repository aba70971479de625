//! Affine inner maps with additive heavy-tailed noise, and synthetic quadratic
//! compositional problems `½‖Aw − b‖²` with closed-form optima.

use std::sync::Arc;

use log::debug;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, RngCore};
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg;
use crate::noise::{StandardSampler, TailFamily};
use crate::problem::{Constants, HalfSquaredNorm, InnerOracle, Optimum, ProblemSpec};
use crate::prox::Regularizer;

/// Additive oracle noise: the value draw gets a vector with `E‖e‖² = sigma0²`,
/// the Jacobian draw a matrix with `E‖E‖_F² = sigma1²`, entries i.i.d. from
/// the standardized `family`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    pub family: TailFamily,
    pub sigma0: f64,
    pub sigma1: f64,
}

impl NoiseModel {
    pub fn none() -> Self {
        Self {
            family: TailFamily::Gaussian,
            sigma0: 0.0,
            sigma1: 0.0,
        }
    }

    pub fn new(family: TailFamily, sigma0: f64, sigma1: f64) -> Self {
        Self {
            family,
            sigma0,
            sigma1,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.sigma0 == 0.0 && self.sigma1 == 0.0
    }
}

/// `g(w; xi) = A w − b + noise`, `∇g(w; xi) = A + noise`.
#[derive(Debug, Clone)]
pub struct AffineOracle {
    /// Row-major `p x d`.
    a: Vec<f64>,
    b: Vec<f64>,
    p: usize,
    d: usize,
    noise: NoiseModel,
    sampler: StandardSampler,
    value_scale: f64,
    jac_scale: f64,
}

impl AffineOracle {
    pub fn new(a: Vec<f64>, b: Vec<f64>, p: usize, d: usize, noise: NoiseModel) -> Result<Self> {
        if p == 0 || d == 0 {
            return Err(Error::param("affine oracle needs p, d >= 1"));
        }
        if a.len() != p * d {
            return Err(Error::DimensionMismatch {
                expected: p * d,
                got: a.len(),
            });
        }
        if b.len() != p {
            return Err(Error::DimensionMismatch {
                expected: p,
                got: b.len(),
            });
        }
        for s in [noise.sigma0, noise.sigma1] {
            if !(s.is_finite() && s >= 0.0) {
                return Err(Error::param(format!("noise scale must be finite and >= 0, got {s}")));
            }
        }
        let sampler = noise.family.sampler()?;
        Ok(Self {
            value_scale: noise.sigma0 / (p as f64).sqrt(),
            jac_scale: noise.sigma1 / ((p * d) as f64).sqrt(),
            a,
            b,
            p,
            d,
            noise,
            sampler,
        })
    }

    pub fn matrix(&self) -> &[f64] {
        &self.a
    }

    pub fn offset(&self) -> &[f64] {
        &self.b
    }

    pub fn noise(&self) -> NoiseModel {
        self.noise
    }

    fn mean_value(&self, w: &[f64]) -> Vec<f64> {
        let mut v = linalg::jac_vec(&self.a, self.d, w);
        linalg::axpy(-1.0, &self.b, &mut v);
        v
    }
}

impl InnerOracle for AffineOracle {
    fn value_dim(&self) -> usize {
        self.p
    }

    fn param_dim(&self) -> usize {
        self.d
    }

    fn sample_into(
        &self,
        w: &[f64],
        rng: &mut dyn RngCore,
        value: &mut [f64],
        jacobian: &mut [f64],
    ) -> Result<()> {
        if w.len() != self.d {
            return Err(Error::DimensionMismatch {
                expected: self.d,
                got: w.len(),
            });
        }
        for ((v, row), b) in value.iter_mut().zip(self.a.chunks_exact(self.d)).zip(&self.b) {
            *v = linalg::dot(row, w) - b;
        }
        jacobian.copy_from_slice(&self.a);
        if self.value_scale > 0.0 {
            for v in value.iter_mut() {
                *v += self.value_scale * self.sampler.sample(rng);
            }
        }
        if self.jac_scale > 0.0 {
            for j in jacobian.iter_mut() {
                *j += self.jac_scale * self.sampler.sample(rng);
            }
        }
        Ok(())
    }

    fn exact_value(&self, w: &[f64]) -> Option<Vec<f64>> {
        Some(self.mean_value(w))
    }

    fn exact_jacobian(&self, _w: &[f64]) -> Option<Vec<f64>> {
        Some(self.a.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticOptions {
    pub p: usize,
    pub d: usize,
    /// Smallest nonzero eigenvalue of `AᵀA`, which is the quadratic-growth constant.
    pub mu: f64,
    /// Ratio of largest to smallest nonzero eigenvalue of `AᵀA`.
    pub condition: f64,
    /// `‖b‖`.
    pub offset_norm: f64,
    pub noise: NoiseModel,
    /// Radius around the origin over which `C_f = sup ‖g(w)‖` is certified.
    /// Defaults to `3.5 * sqrt(2 (F(0) − F*) / mu)`, which covers every
    /// iterate of a halving restart scheme started at the origin.
    pub domain_radius: Option<f64>,
    pub regularizer: Regularizer,
}

impl SyntheticOptions {
    pub fn new(p: usize, d: usize, mu: f64, noise: NoiseModel) -> Self {
        Self {
            p,
            d,
            mu,
            condition: 4.0,
            offset_norm: 1.0,
            noise,
            domain_radius: None,
            regularizer: Regularizer::None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticQuadratic {
    pub oracle: Arc<AffineOracle>,
    pub spec: ProblemSpec,
    /// Minimum-norm minimizer.
    pub w_star: Vec<f64>,
    pub f_star: f64,
    /// Nonzero eigenvalues of `AᵀA`, ascending.
    pub eigenvalues: Vec<f64>,
    /// `d x r` orthonormal basis of the row space of `A`.
    row_basis: DMatrix<f64>,
}

impl SyntheticQuadratic {
    /// Distance from `w` to the set of minimizers.
    pub fn dist_to_optimum(&self, w: &[f64]) -> f64 {
        let diff = DVector::from_iterator(w.len(), w.iter().zip(&self.w_star).map(|(a, b)| a - b));
        (self.row_basis.transpose() * diff).norm()
    }

    pub fn objective(&self, w: &[f64]) -> f64 {
        self.spec.exact_objective(w).expect("affine oracle is analytic")
    }

    pub fn gap(&self, w: &[f64]) -> f64 {
        self.objective(w) - self.f_star
    }
}

fn orthonormal_columns(rows: usize, cols: usize, rng: &mut dyn RngCore) -> DMatrix<f64> {
    let g = DMatrix::from_fn(rows, cols, |_, _| rng.sample::<f64, _>(StandardNormal));
    g.qr().q().columns(0, cols).into_owned()
}

/// Builds `g(w) = Aw − b`, `f = ½‖·‖²` with prescribed spectrum and noise.
///
/// Without regularization the minimizers are `A⁺b + null(A)`; `w_star` is the
/// minimum-norm one. A regularizer, if given, must be `None` for the stored
/// optimum to be exact, so other choices are rejected.
pub fn make_synthetic(opts: SyntheticOptions, rng: &mut dyn RngCore) -> Result<SyntheticQuadratic> {
    let SyntheticOptions { p, d, mu, condition, offset_norm, noise, .. } = opts;
    if p == 0 || d == 0 {
        return Err(Error::param("synthetic problem needs p, d >= 1"));
    }
    if !(mu > 0.0 && mu.is_finite()) {
        return Err(Error::param(format!("mu must be > 0, got {mu}")));
    }
    if !(condition >= 1.0 && condition.is_finite()) {
        return Err(Error::param(format!("condition must be >= 1, got {condition}")));
    }
    if !(offset_norm > 0.0 && offset_norm.is_finite()) {
        return Err(Error::param(format!("offset norm must be > 0, got {offset_norm}")));
    }
    if opts.regularizer != Regularizer::None {
        return Err(Error::param("synthetic optimum is closed-form only without a regularizer"));
    }

    let r = p.min(d);
    let eigenvalues: Vec<f64> = if r == 1 {
        vec![mu]
    } else {
        (0..r)
            .map(|i| mu * (1.0 + (condition - 1.0) * i as f64 / (r - 1) as f64))
            .collect()
    };
    let singular = DVector::from_iterator(r, eigenvalues.iter().map(|l| l.sqrt()));

    for attempt in 0..10 {
        let u = orthonormal_columns(p, r, rng);
        let v = orthonormal_columns(d, r, rng);
        let a = &u * DMatrix::from_diagonal(&singular) * v.transpose();

        // the r x r Gram matrix of full rank carries the nonzero spectrum
        let gram = if p <= d { &a * a.transpose() } else { a.transpose() * &a };
        let mut eig: Vec<f64> = SymmetricEigen::new(gram).eigenvalues.iter().copied().collect();
        eig.sort_by(f64::total_cmp);
        if (eig[0] - mu).abs() > 1e-8 * mu.max(1.0) {
            debug!("synthetic attempt {attempt}: smallest eigenvalue {} off target, retrying", eig[0]);
            continue;
        }

        let dir = DVector::from_fn(p, |_, _| rng.sample::<f64, _>(StandardNormal));
        let b = dir.normalize() * offset_norm;

        let s_inv = DMatrix::from_diagonal(&singular.map(|s| 1.0 / s));
        let w_star = &v * s_inv * u.transpose() * &b;
        let residual = &a * &w_star - &b;
        let f_star = 0.5 * residual.norm_squared();

        let f0 = 0.5 * b.norm_squared();
        let radius = opts
            .domain_radius
            .unwrap_or_else(|| 3.5 * (2.0 * (f0 - f_star).max(f64::MIN_POSITIVE) / mu).sqrt());
        let s_max = singular.max();
        let c_f = b.norm() + s_max * radius;
        let a_frob_sq = a.norm_squared();

        let constants = Constants {
            c_f,
            l_f: 1.0,
            c_g: (a_frob_sq + noise.sigma1 * noise.sigma1).sqrt(),
            l_g: 0.0,
            sigma0: noise.sigma0,
            sigma1: noise.sigma1,
            mu,
        };

        let a_rows: Vec<f64> = (0..p).flat_map(|i| (0..d).map(move |j| (i, j))).map(|(i, j)| a[(i, j)]).collect();
        let oracle = Arc::new(AffineOracle::new(a_rows, b.iter().copied().collect(), p, d, noise)?);
        let w_star: Vec<f64> = w_star.iter().copied().collect();
        let spec = ProblemSpec::new(Arc::new(HalfSquaredNorm), oracle.clone(), Regularizer::None, constants)?
            .with_optimum(Optimum {
                point: w_star.clone(),
                value: f_star,
            })?;

        return Ok(SyntheticQuadratic {
            oracle,
            spec,
            w_star,
            f_star,
            eigenvalues: eig,
            row_basis: v,
        });
    }
    Err(Error::param("could not build a well-conditioned synthetic matrix in 10 attempts"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prox::prox_step;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn quad(p: usize, d: usize, noise: NoiseModel, seed: u64) -> SyntheticQuadratic {
        make_synthetic(SyntheticOptions::new(p, d, 0.5, noise), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    #[test]
    fn spectrum_matches_target() {
        for (p, d) in [(5, 20), (20, 5), (2, 2), (1, 3)] {
            let q = quad(p, d, NoiseModel::none(), 1);
            // independent check through the full d x d Gram matrix
            let a = DMatrix::from_row_slice(p, d, q.oracle.matrix());
            let mut eig: Vec<f64> = SymmetricEigen::new(a.transpose() * &a).eigenvalues.iter().copied().collect();
            eig.sort_by(f64::total_cmp);
            let smallest_nonzero = eig.iter().copied().find(|l| *l > 1e-9).unwrap();
            assert!((smallest_nonzero - 0.5).abs() < 1e-8, "({p},{d}): {smallest_nonzero}");
        }
    }

    #[test]
    fn exact_gradient_descent_reaches_optimum() {
        let q = quad(2, 2, NoiseModel::none(), 2);
        let eta = 1.0 / (2.0 * q.spec.smoothness());
        let mut w = vec![3.0, -4.0];
        for _ in 0..5000 {
            let g = q.spec.exact_smooth_gradient(&w).unwrap();
            w = prox_step(&g, &w, eta, &Regularizer::None).unwrap();
        }
        assert!(linalg::dist(&w, &q.w_star) < 1e-10);
    }

    #[test]
    fn optimum_probes() {
        for (p, d) in [(2, 2), (5, 20), (20, 5)] {
            let q = quad(p, d, NoiseModel::none(), 3);
            let f_star = q.objective(&q.w_star);
            assert!((f_star - q.f_star).abs() < 1e-12);
            for j in 0..d {
                let mut w = q.w_star.clone();
                w[j] += 0.01;
                assert!(q.objective(&w) >= f_star);
            }
        }
    }

    #[test]
    fn quadratic_growth_holds() {
        let q = quad(5, 20, NoiseModel::none(), 4);
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        for _ in 0..1000 {
            let w: Vec<f64> = (0..20).map(|_| rng.random_range(-3.0..3.0)).collect();
            let lhs = q.gap(&w);
            let rhs = 0.5 * q.spec.constants.mu * q.dist_to_optimum(&w).powi(2);
            assert!(lhs >= rhs - 1e-10, "{lhs} < {rhs}");
        }
    }

    #[test]
    fn optimum_dominates_random_probes() {
        let q = quad(20, 5, NoiseModel::none(), 5);
        let mut rng = ChaCha8Rng::seed_from_u64(50);
        for _ in 0..1000 {
            let w: Vec<f64> = (0..5).map(|_| rng.random_range(-3.0..3.0)).collect();
            assert!(q.objective(&w) >= q.f_star);
        }
    }

    #[test]
    fn smooth_gradient_matches_finite_differences() {
        let q = quad(5, 8, NoiseModel::none(), 6);
        let mut rng = ChaCha8Rng::seed_from_u64(60);
        for _ in 0..20 {
            let w: Vec<f64> = (0..8).map(|_| rng.random_range(-2.0..2.0)).collect();
            let g = q.spec.exact_smooth_gradient(&w).unwrap();
            for j in 0..8 {
                let h = 1e-5;
                let mut up = w.clone();
                let mut dn = w.clone();
                up[j] += h;
                dn[j] -= h;
                let fd = (q.objective(&up) - q.objective(&dn)) / (2.0 * h);
                assert!((fd - g[j]).abs() <= 1e-6 * g[j].abs().max(1.0));
            }
        }
    }

    #[test]
    fn inner_sample_is_unbiased() {
        let noise = NoiseModel::new(TailFamily::StudentT { dof: 5.0 }, 0.7, 0.4);
        let q = quad(3, 4, noise, 7);
        let w = [0.3, -0.2, 1.0, 0.5];
        let mut rng = ChaCha8Rng::seed_from_u64(70);
        let n = 20_000;
        let mut acc = vec![0.0; 3];
        for _ in 0..n {
            let s = q.oracle.sample(&w, &mut rng).unwrap();
            linalg::axpy(1.0 / n as f64, &s.value, &mut acc);
        }
        let exact = q.oracle.exact_value(&w).unwrap();
        assert!(linalg::dist(&acc, &exact) <= 3.0 * 0.7 / (n as f64).sqrt());
    }

    #[test]
    fn noise_scales_match_registered_sigmas() {
        let noise = NoiseModel::new(TailFamily::Gaussian, 0.6, 0.9);
        let q = quad(3, 4, noise, 8);
        let w = [0.0; 4];
        let g = q.oracle.exact_value(&w).unwrap();
        let jac = q.oracle.exact_jacobian(&w).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(80);
        let n = 50_000;
        let (mut s0, mut s1) = (0.0, 0.0);
        for _ in 0..n {
            let s = q.oracle.sample(&w, &mut rng).unwrap();
            s0 += linalg::dist_sq(&s.value, &g) / n as f64;
            s1 += linalg::dist_sq(&s.jacobian, &jac) / n as f64;
        }
        assert!((s0.sqrt() - 0.6).abs() < 0.02, "{s0}");
        assert!((s1.sqrt() - 0.9).abs() < 0.02, "{s1}");
    }

    #[test]
    fn rejects_bad_options() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut o = SyntheticOptions::new(2, 2, 0.0, NoiseModel::none());
        assert!(make_synthetic(o, &mut rng).is_err());
        o.mu = 1.0;
        o.condition = 0.5;
        assert!(make_synthetic(o, &mut rng).is_err());
    }
}
