//! The compositional problem `F(w) = f(E[g(w; xi)]) + r(w)` and its constant bundle.

use std::fmt;
use std::sync::Arc;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg;
use crate::prox::Regularizer;

/// Evaluation batch size for plug-in objective traces.
pub const DEFAULT_EVAL_SAMPLES: usize = 2048;

/// Fixed seed for plug-in objective traces. Every evaluation replays the same
/// stream so traces stay comparable across iterates and solvers.
const EVAL_SEED: u64 = 0x5eed_0b1e_c7a1_7e00;

/// The outer function `f: R^p -> R`.
pub trait OuterFunction: Send + Sync + fmt::Debug {
    fn value(&self, u: &[f64]) -> f64;
    fn grad(&self, u: &[f64]) -> Vec<f64>;
}

/// One stochastic draw of the inner map and its Jacobian.
#[derive(Debug, Clone, PartialEq)]
pub struct InnerSample {
    pub value: Vec<f64>,
    /// Row-major `p x d`.
    pub jacobian: Vec<f64>,
}

/// Stochastic oracle for the inner map `g(w; xi)`.
pub trait InnerOracle: Send + Sync + fmt::Debug {
    /// `p`, the output dimension of `g`.
    fn value_dim(&self) -> usize;
    /// `d`, the parameter dimension.
    fn param_dim(&self) -> usize;

    /// Writes one draw of `g(w; xi)` into `value` and `∇g(w; xi)` into `jacobian`.
    fn sample_into(
        &self,
        w: &[f64],
        rng: &mut dyn RngCore,
        value: &mut [f64],
        jacobian: &mut [f64],
    ) -> Result<()>;

    /// `g(w)` when known in closed form.
    fn exact_value(&self, _w: &[f64]) -> Option<Vec<f64>> {
        None
    }

    /// `∇g(w)` when known in closed form.
    fn exact_jacobian(&self, _w: &[f64]) -> Option<Vec<f64>> {
        None
    }

    fn sample(&self, w: &[f64], rng: &mut dyn RngCore) -> Result<InnerSample> {
        let mut value = vec![0.0; self.value_dim()];
        let mut jacobian = vec![0.0; self.value_dim() * self.param_dim()];
        self.sample_into(w, rng, &mut value, &mut jacobian)?;
        Ok(InnerSample { value, jacobian })
    }
}

/// `f(u) = ½‖u‖²`.
#[derive(Debug, Clone, Copy, Default)]
pub struct HalfSquaredNorm;

impl OuterFunction for HalfSquaredNorm {
    fn value(&self, u: &[f64]) -> f64 {
        0.5 * linalg::norm_sq(u)
    }

    fn grad(&self, u: &[f64]) -> Vec<f64> {
        u.to_vec()
    }
}

/// `f(u) = cᵀu`.
#[derive(Debug, Clone)]
pub struct LinearOuter {
    pub weights: Vec<f64>,
}

impl OuterFunction for LinearOuter {
    fn value(&self, u: &[f64]) -> f64 {
        linalg::dot(&self.weights, u)
    }

    fn grad(&self, _u: &[f64]) -> Vec<f64> {
        self.weights.clone()
    }
}

/// Lipschitz, smoothness, noise and growth constants of the problem.
///
/// `c_f`: Lipschitz constant of `f`; `l_f`: smoothness of `f`;
/// `c_g`: second-moment bound on `∇g(w; xi)`; `l_g`: smoothness of `g`;
/// `sigma0`, `sigma1`: noise levels of the value and Jacobian draws;
/// `mu`: quadratic-growth constant of `F`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Constants {
    pub c_f: f64,
    pub l_f: f64,
    pub c_g: f64,
    pub l_g: f64,
    pub sigma0: f64,
    pub sigma1: f64,
    pub mu: f64,
}

impl Constants {
    pub fn validate(&self) -> Result<()> {
        let named = [
            ("C_f", self.c_f),
            ("L_f", self.l_f),
            ("C_g", self.c_g),
            ("L_g", self.l_g),
            ("sigma0", self.sigma0),
            ("sigma1", self.sigma1),
            ("mu", self.mu),
        ];
        for (name, v) in named {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::param(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        // L_g = 0 is allowed: affine inner maps have no curvature.
        for (name, v) in [("C_f", self.c_f), ("L_f", self.l_f), ("C_g", self.c_g), ("mu", self.mu)] {
            if v <= 0.0 {
                return Err(Error::param(format!("{name} must be > 0, got {v}")));
            }
        }
        let l = composite_smoothness(self);
        if l < self.mu {
            return Err(Error::param(format!(
                "smoothness L = {l} is below the growth constant mu = {}",
                self.mu
            )));
        }
        Ok(())
    }

    pub fn smoothness(&self) -> f64 {
        composite_smoothness(self)
    }

    pub fn condition_number(&self) -> f64 {
        self.smoothness() / self.mu
    }
}

/// Smoothness constant of `f(g(·))`.
///
/// Takes the larger of `C_f L_g + C_g² L_g` and the chain-rule constant
/// `C_f L_g + C_g² L_f`.
pub fn composite_smoothness(c: &Constants) -> f64 {
    let a = c.c_f * c.l_g + c.c_g * c.c_g * c.l_g;
    let b = c.c_f * c.l_g + c.c_g * c.c_g * c.l_f;
    a.max(b)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Optimum {
    pub point: Vec<f64>,
    pub value: f64,
}

#[derive(Debug, Clone)]
pub struct ProblemSpec {
    pub outer: Arc<dyn OuterFunction>,
    pub inner: Arc<dyn InnerOracle>,
    pub regularizer: Regularizer,
    pub constants: Constants,
    pub optimum: Option<Optimum>,
}

impl ProblemSpec {
    pub fn new(
        outer: Arc<dyn OuterFunction>,
        inner: Arc<dyn InnerOracle>,
        regularizer: Regularizer,
        constants: Constants,
    ) -> Result<Self> {
        constants.validate()?;
        regularizer.validate()?;
        if inner.value_dim() == 0 || inner.param_dim() == 0 {
            return Err(Error::param("inner oracle dimensions must be >= 1"));
        }
        Ok(Self {
            outer,
            inner,
            regularizer,
            constants,
            optimum: None,
        })
    }

    pub fn with_optimum(mut self, optimum: Optimum) -> Result<Self> {
        if optimum.point.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                got: optimum.point.len(),
            });
        }
        self.optimum = Some(optimum);
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.inner.param_dim()
    }

    pub fn value_dim(&self) -> usize {
        self.inner.value_dim()
    }

    pub fn smoothness(&self) -> f64 {
        self.constants.smoothness()
    }

    pub fn optimal_value(&self) -> Option<f64> {
        self.optimum.as_ref().map(|o| o.value)
    }

    /// One oracle draw, rejecting non-finite output.
    pub fn draw_into(
        &self,
        w: &[f64],
        rng: &mut dyn RngCore,
        value: &mut [f64],
        jacobian: &mut [f64],
    ) -> Result<()> {
        self.inner.sample_into(w, rng, value, jacobian)?;
        if !linalg::all_finite(value) || !linalg::all_finite(jacobian) {
            return Err(Error::NonFiniteOracle);
        }
        Ok(())
    }

    /// `F(w)` when `g` is known in closed form.
    pub fn exact_objective(&self, w: &[f64]) -> Option<f64> {
        let g = self.inner.exact_value(w)?;
        Some(self.outer.value(&g) + self.regularizer.value(w))
    }

    /// `∇g(w)ᵀ ∇f(g(w))` when `g` is known in closed form.
    pub fn exact_smooth_gradient(&self, w: &[f64]) -> Option<Vec<f64>> {
        let g = self.inner.exact_value(w)?;
        let jac = self.inner.exact_jacobian(w)?;
        let fg = self.outer.grad(&g);
        Some(linalg::jac_t_vec(&jac, self.value_dim(), self.dim(), &fg))
    }

    /// Objective used for traces: exact when available, otherwise a plug-in
    /// estimate over a replayed evaluation batch.
    pub fn trace_objective(&self, w: &[f64]) -> Result<f64> {
        if let Some(v) = self.exact_objective(w) {
            return Ok(v);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(EVAL_SEED);
        full_objective(self, w, DEFAULT_EVAL_SAMPLES, &mut rng)
    }

    pub fn gap(&self, objective: f64) -> Option<f64> {
        self.optimal_value().map(|f| objective - f)
    }
}

/// `f(mean of n_eval inner values) + r(w)`, or the exact objective when `g`
/// is analytic (then `n_eval` is ignored). Only used for tracing.
pub fn full_objective(
    spec: &ProblemSpec,
    w: &[f64],
    n_eval: usize,
    rng: &mut dyn RngCore,
) -> Result<f64> {
    if w.len() != spec.dim() {
        return Err(Error::DimensionMismatch {
            expected: spec.dim(),
            got: w.len(),
        });
    }
    if let Some(v) = spec.exact_objective(w) {
        return Ok(v);
    }
    if n_eval == 0 {
        return Err(Error::param("n_eval must be >= 1"));
    }
    let p = spec.value_dim();
    let mut value = vec![0.0; p];
    let mut jac = vec![0.0; p * spec.dim()];
    let mut acc = vec![0.0; p];
    for _ in 0..n_eval {
        spec.draw_into(w, rng, &mut value, &mut jac)?;
        linalg::axpy(1.0, &value, &mut acc);
    }
    linalg::scale(&mut acc, 1.0 / n_eval as f64);
    Ok(spec.outer.value(&acc) + spec.regularizer.value(w))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::{AffineOracle, NoiseModel};

    fn unit_constants() -> Constants {
        Constants {
            c_f: 1.0,
            l_f: 1.0,
            c_g: 1.0,
            l_g: 1.0,
            sigma0: 0.0,
            sigma1: 0.0,
            mu: 1.0,
        }
    }

    #[test]
    fn smoothness_examples() {
        assert_eq!(composite_smoothness(&unit_constants()), 2.0);

        let c = Constants { c_f: 2.0, l_g: 3.0, c_g: 1.0, l_f: 5.0, ..unit_constants() };
        assert_eq!(composite_smoothness(&c), 11.0);

        let c = Constants { c_f: 2.0, l_g: 3.0, c_g: 0.0, l_f: 5.0, ..unit_constants() };
        assert_eq!(composite_smoothness(&c), 6.0);
    }

    #[test]
    fn constants_rejected() {
        let bad = Constants { mu: 0.0, ..unit_constants() };
        assert!(bad.validate().is_err());
        let bad = Constants { sigma0: f64::NAN, ..unit_constants() };
        assert!(bad.validate().is_err());
        // mu above L
        let bad = Constants { mu: 10.0, ..unit_constants() };
        assert!(bad.validate().is_err());
    }

    fn scalar_problem(slope: f64, offset: f64, reg: Regularizer) -> ProblemSpec {
        let inner = AffineOracle::new(vec![slope], vec![-offset], 1, 1, NoiseModel::none()).unwrap();
        let constants = Constants { mu: 0.5, ..unit_constants() };
        ProblemSpec::new(
            Arc::new(LinearOuter { weights: vec![1.0] }),
            Arc::new(inner),
            reg,
            constants,
        )
        .unwrap()
    }

    #[test]
    fn full_objective_identity_chain() {
        let spec = scalar_problem(1.0, 0.0, Regularizer::None);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(full_objective(&spec, &[3.0], 10, &mut rng).unwrap(), 3.0);
    }

    #[test]
    fn full_objective_with_l1() {
        // g(w) = 0*w + 2
        let spec = scalar_problem(0.0, 2.0, Regularizer::l1(1.0).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(full_objective(&spec, &[-3.0], 10, &mut rng).unwrap(), 5.0);
    }

    #[test]
    fn dimension_checked() {
        let spec = scalar_problem(1.0, 0.0, Regularizer::None);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(matches!(
            full_objective(&spec, &[1.0, 2.0], 10, &mut rng),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[derive(Debug)]
    struct NanOracle;

    impl InnerOracle for NanOracle {
        fn value_dim(&self) -> usize {
            1
        }
        fn param_dim(&self) -> usize {
            1
        }
        fn sample_into(&self, _: &[f64], _: &mut dyn RngCore, v: &mut [f64], j: &mut [f64]) -> Result<()> {
            v[0] = f64::NAN;
            j[0] = 0.0;
            Ok(())
        }
    }

    #[test]
    fn non_finite_oracle_output_is_an_error() {
        let spec = ProblemSpec::new(
            Arc::new(HalfSquaredNorm),
            Arc::new(NanOracle),
            Regularizer::None,
            unit_constants(),
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let err = full_objective(&spec, &[0.0], 4, &mut rng).unwrap_err();
        assert_eq!(err.to_string(), "non-finite oracle output");
    }

    #[test]
    fn finite_difference_of_outer_grads() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let f = HalfSquaredNorm;
        for _ in 0..100 {
            let u: Vec<f64> = (0..4).map(|_| rng.random_range(-3.0..3.0)).collect();
            let g = f.grad(&u);
            for j in 0..4 {
                let h = 1e-5;
                let mut up = u.clone();
                let mut dn = u.clone();
                up[j] += h;
                dn[j] -= h;
                let fd = (f.value(&up) - f.value(&dn)) / (2.0 * h);
                assert!((fd - g[j]).abs() <= 1e-6 * g[j].abs().max(1.0));
            }
        }
    }
}
