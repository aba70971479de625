//! KL-regularized distributionally robust regression as a compositional problem:
//! `F(w) = λ log Σ_i exp(L_i(w) / λ) + r(w)` with `L_i` the expected square loss
//! of source `i`.

use std::sync::Arc;

use rand::{Rng, RngCore};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg;
use crate::problem::{Constants, InnerOracle, InnerSample, OuterFunction, ProblemSpec};
use crate::prox::Regularizer;

fn check_temperature(t: f64) {
    debug_assert!(t > 0.0 && t.is_finite(), "temperature must be > 0");
}

/// `λ log Σ exp(u_i / λ)`, shifted by the max so it never overflows.
pub fn lse_value(u: &[f64], temperature: f64) -> f64 {
    check_temperature(temperature);
    let m = u.iter().copied().fold(f64::NEG_INFINITY, f64::max) / temperature;
    let s: f64 = u.iter().map(|x| (x / temperature - m).exp()).sum();
    temperature * (m + s.ln())
}

/// `softmax(u / λ)`.
pub fn lse_grad(u: &[f64], temperature: f64) -> Vec<f64> {
    check_temperature(temperature);
    let m = u.iter().copied().fold(f64::NEG_INFINITY, f64::max) / temperature;
    let mut e: Vec<f64> = u.iter().map(|x| (x / temperature - m).exp()).collect();
    let s: f64 = e.iter().sum();
    linalg::scale(&mut e, 1.0 / s);
    e
}

/// The outer log-sum-exp. Its gradient is a probability vector, so `C_f = 1`;
/// its Hessian is bounded by `1/λ`, so `L_f = 1/λ`.
#[derive(Debug, Clone, Copy)]
pub struct LogSumExp {
    pub temperature: f64,
}

impl LogSumExp {
    pub fn new(temperature: f64) -> Result<Self> {
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(Error::param(format!("temperature must be > 0, got {temperature}")));
        }
        Ok(Self { temperature })
    }

    pub fn lipschitz(&self) -> f64 {
        1.0
    }

    pub fn smoothness(&self) -> f64 {
        1.0 / self.temperature
    }
}

impl OuterFunction for LogSumExp {
    fn value(&self, u: &[f64]) -> f64 {
        lse_value(u, self.temperature)
    }

    fn grad(&self, u: &[f64]) -> Vec<f64> {
        lse_grad(u, self.temperature)
    }
}

/// `m` labelled sources sharing a feature space.
#[derive(Debug, Clone)]
pub struct DroInstance {
    pub sources: Vec<Dataset>,
    pub temperature: f64,
    pub regularizer: Regularizer,
    pub dim: usize,
}

impl DroInstance {
    pub fn new(sources: Vec<Dataset>, temperature: f64, regularizer: Regularizer) -> Result<Self> {
        if sources.len() < 2 {
            return Err(Error::param(format!("need at least two sources, got {}", sources.len())));
        }
        if let Some(i) = sources.iter().position(Dataset::is_empty) {
            return Err(Error::EmptyData(format!("source {i} is empty")));
        }
        LogSumExp::new(temperature)?;
        regularizer.validate()?;
        let dim = sources.iter().map(|s| s.dim).max().unwrap_or(0);
        if dim == 0 {
            return Err(Error::param("sources have no features"));
        }
        Ok(Self {
            sources,
            temperature,
            regularizer,
            dim,
        })
    }

    pub fn num_sources(&self) -> usize {
        self.sources.len()
    }

    /// Mean square loss of every source at `w`.
    pub fn source_losses(&self, w: &[f64]) -> Vec<f64> {
        self.sources
            .iter()
            .map(|s| {
                let total: f64 = s
                    .features
                    .iter()
                    .zip(&s.labels)
                    .map(|(x, y)| (x.dot(w) - y).powi(2))
                    .sum();
                total / s.len() as f64
            })
            .collect()
    }

    /// DRO objective over the empirical source distributions.
    pub fn empirical_objective(&self, w: &[f64]) -> f64 {
        lse_value(&self.source_losses(w), self.temperature) + self.regularizer.value(w)
    }

    /// `2 sqrt(Σ_i (E‖x_i‖²)²)`, an upper bound on the Lipschitz constant of
    /// `∇g` in Frobenius norm.
    pub fn inner_smoothness_bound(&self) -> f64 {
        let s: f64 = self
            .sources
            .iter()
            .map(|s| {
                let m = s.features.iter().map(|x| x.norm_sq()).sum::<f64>() / s.len() as f64;
                m * m
            })
            .sum();
        2.0 * s.sqrt()
    }

    /// Wraps the instance as a problem. `C_f` and `L_f` come from the
    /// log-sum-exp; the remaining constants must be supplied (or calibrated).
    pub fn into_problem(self, c_g: f64, l_g: f64, sigma0: f64, sigma1: f64, mu: f64) -> Result<ProblemSpec> {
        let outer = LogSumExp::new(self.temperature)?;
        let constants = Constants {
            c_f: outer.lipschitz(),
            l_f: outer.smoothness(),
            c_g,
            l_g,
            sigma0,
            sigma1,
            mu,
        };
        let reg = self.regularizer;
        ProblemSpec::new(Arc::new(outer), Arc::new(self), reg, constants)
    }
}

impl InnerOracle for DroInstance {
    fn value_dim(&self) -> usize {
        self.sources.len()
    }

    fn param_dim(&self) -> usize {
        self.dim
    }

    /// One example per source; value `i` is its square loss and Jacobian row
    /// `i` its gradient `2 (wᵀx − y) x`.
    fn sample_into(
        &self,
        w: &[f64],
        rng: &mut dyn RngCore,
        value: &mut [f64],
        jacobian: &mut [f64],
    ) -> Result<()> {
        if w.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: w.len(),
            });
        }
        jacobian.fill(0.0);
        for (i, src) in self.sources.iter().enumerate() {
            let j = rng.random_range(0..src.len());
            let x = &src.features[j];
            let resid = x.dot(w) - src.labels[j];
            value[i] = resid * resid;
            x.scatter_add(2.0 * resid, &mut jacobian[i * self.dim..(i + 1) * self.dim]);
        }
        Ok(())
    }
}

pub fn dro_inner_sample(inst: &DroInstance, w: &[f64], rng: &mut dyn RngCore) -> Result<InnerSample> {
    inst.sample(w, rng)
}
