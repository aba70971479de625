//! Mini-batch stochastic compositional proximal gradient and its restarted
//! variant with doubling batches.

use log::warn;
use rand::RngCore;

use crate::error::{Error, Result};
use crate::linalg::{self, ceil_tol};
use crate::problem::{Constants, ProblemSpec};
use crate::prox::prox_step;
use crate::robust_mean::robust_mean;
use crate::trace::{Average, ErrorDecomposition, Recorder, RestartRun, RunOptions, RunTrace};

/// Relative slack allowed on the `η ≤ 1/(2L)` check.
const STEP_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Estimator {
    NonRobust,
    /// Median of means (scalar outputs) or robust distance (vector outputs)
    /// at confidence `delta`.
    Robust { delta: f64 },
}

impl Estimator {
    fn validate(&self) -> Result<()> {
        if let Estimator::Robust { delta } = *self {
            if !(delta > 0.0 && delta < 1.0) {
                return Err(Error::param(format!("delta must lie in (0, 1), got {delta}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum BatchSchedule {
    Constant(usize),
    /// `m_t = ceil(scale * (t + 1))`.
    Linear { scale: f64 },
    /// `m_t` for each `t`; the last entry repeats.
    Explicit(Vec<usize>),
}

impl BatchSchedule {
    pub fn batch(&self, t: usize) -> usize {
        match self {
            BatchSchedule::Constant(m) => *m,
            BatchSchedule::Linear { scale } => (ceil_tol(scale * (t + 1) as f64) as usize).max(1),
            BatchSchedule::Explicit(v) => v.get(t).or(v.last()).copied().unwrap_or(0),
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match self {
            BatchSchedule::Constant(m) => *m >= 1,
            BatchSchedule::Linear { scale } => scale.is_finite() && *scale > 0.0,
            BatchSchedule::Explicit(v) => !v.is_empty() && v.iter().all(|&m| m >= 1),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::param(format!("batch sizes must be >= 1: {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MscgConfig {
    pub eta: f64,
    pub iterations: usize,
    pub batch: BatchSchedule,
    pub estimator: Estimator,
}

pub(crate) fn check_step_bound(spec: &ProblemSpec, eta: f64) -> Result<()> {
    let bound = 1.0 / (2.0 * spec.smoothness());
    if eta > bound * (1.0 + STEP_SLACK) {
        return Err(Error::param(format!("step size {eta} exceeds 1/(2L) = {bound}")));
    }
    Ok(())
}

impl MscgConfig {
    /// Checks `η ≤ 1/(2L)` against the problem constants.
    pub fn new(
        spec: &ProblemSpec,
        eta: f64,
        iterations: usize,
        batch: BatchSchedule,
        estimator: Estimator,
    ) -> Result<Self> {
        let cfg = Self::unchecked(eta, iterations, batch, estimator)?;
        check_step_bound(spec, eta)?;
        Ok(cfg)
    }

    /// Skips the step-size bound, for tuned steps on problems whose constants
    /// are loose or unknown.
    pub fn unchecked(
        eta: f64,
        iterations: usize,
        batch: BatchSchedule,
        estimator: Estimator,
    ) -> Result<Self> {
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(Error::param(format!("step size must be finite and > 0, got {eta}")));
        }
        batch.validate()?;
        estimator.validate()?;
        Ok(Self {
            eta,
            iterations,
            batch,
            estimator,
        })
    }
}

fn mean_into(acc: &mut [f64], m: usize) {
    linalg::scale(acc, 1.0 / m as f64);
}

/// Estimates `(g(w), ∇g(w))` from two independent batches of size `m`: the
/// value from the first, the Jacobian from the second. Returns the Jacobian
/// row-major.
pub fn mscg_iterate(
    spec: &ProblemSpec,
    w: &[f64],
    m: usize,
    estimator: Estimator,
    rng: &mut dyn RngCore,
) -> Result<(Vec<f64>, Vec<f64>)> {
    if m < 1 {
        return Err(Error::param("batch size must be >= 1"));
    }
    let p = spec.value_dim();
    let pd = p * spec.dim();
    let mut value = vec![0.0; p];
    let mut jac = vec![0.0; pd];
    match estimator {
        Estimator::NonRobust => {
            let mut y = vec![0.0; p];
            for _ in 0..m {
                spec.draw_into(w, rng, &mut value, &mut jac)?;
                linalg::axpy(1.0, &value, &mut y);
            }
            let mut z = vec![0.0; pd];
            for _ in 0..m {
                spec.draw_into(w, rng, &mut value, &mut jac)?;
                linalg::axpy(1.0, &jac, &mut z);
            }
            mean_into(&mut y, m);
            mean_into(&mut z, m);
            Ok((y, z))
        }
        Estimator::Robust { delta } => {
            let mut values = Vec::with_capacity(m * p);
            for _ in 0..m {
                spec.draw_into(w, rng, &mut value, &mut jac)?;
                values.extend_from_slice(&value);
            }
            let mut jacs = Vec::with_capacity(m * pd);
            for _ in 0..m {
                spec.draw_into(w, rng, &mut value, &mut jac)?;
                jacs.extend_from_slice(&jac);
            }
            let y = robust_mean(&values, p, delta)?.value;
            let z = robust_mean(&jacs, pd, delta)?.value;
            Ok((y, z))
        }
    }
}

/// Step direction `zᵀ ∇f(y)`.
pub(crate) fn direction(spec: &ProblemSpec, y: &[f64], z: &[f64]) -> Vec<f64> {
    linalg::jac_t_vec(z, spec.value_dim(), spec.dim(), &spec.outer.grad(y))
}

/// Accumulates the error decomposition when the problem is analytic.
pub(crate) struct DecompositionProbe {
    inner: Option<(Vec<f64>, f64, ErrorDecomposition)>,
}

impl DecompositionProbe {
    pub fn new(spec: &ProblemSpec, w0: &[f64], eta: f64, stage: usize) -> Self {
        let inner = spec.optimum.as_ref().and_then(|opt| {
            spec.exact_smooth_gradient(w0)?;
            Some((
                opt.point.clone(),
                opt.value,
                ErrorDecomposition {
                    stage,
                    eta,
                    iterations: 0,
                    initial_dist_sq: linalg::dist_sq(w0, &opt.point),
                    a: 0.0,
                    b: 0.0,
                    gap_sum: 0.0,
                },
            ))
        });
        Self { inner }
    }

    /// Records the step taken from `w_t` along `dir`, landing at `w_next`.
    pub fn step(&mut self, spec: &ProblemSpec, w_t: &[f64], dir: &[f64], w_next: &[f64]) {
        let Some((w_star, f_star, d)) = self.inner.as_mut() else {
            return;
        };
        let (Some(exact), Some(f_next)) = (spec.exact_smooth_gradient(w_t), spec.exact_objective(w_next))
        else {
            return;
        };
        let err = linalg::sub(&exact, dir);
        d.a += linalg::norm_sq(&err);
        d.b += linalg::dot(&err, &linalg::sub(w_t, w_star));
        d.gap_sum += f_next - *f_star;
        d.iterations += 1;
    }

    pub fn finish(self) -> Option<ErrorDecomposition> {
        self.inner.map(|(_, _, d)| d).filter(|d| d.iterations > 0)
    }
}

/// Iterate state kept outside a stage so a divergence can report it.
pub(crate) struct Progress {
    pub last: Vec<f64>,
}

/// Maps an iterate failure to a divergence error carrying the partial trace.
pub(crate) fn fail(rec: Recorder<'_>, progress: Progress, avg: Vec<f64>, err: Error) -> Error {
    match err {
        Error::DivergedGradient => {
            let iteration = rec.iterations() as usize + 1;
            Error::diverged(iteration, rec.finish(progress.last, avg))
        }
        other => other,
    }
}

pub(crate) fn check_start(spec: &ProblemSpec, w0: &[f64]) -> Result<()> {
    if w0.len() != spec.dim() {
        return Err(Error::DimensionMismatch {
            expected: spec.dim(),
            got: w0.len(),
        });
    }
    if !linalg::all_finite(w0) {
        return Err(Error::param("starting point must be finite"));
    }
    Ok(())
}

/// One MSCG stage from `w0`. Returns the averaged point and the number of
/// updates performed.
fn mscg_stage(
    spec: &ProblemSpec,
    w0: &[f64],
    cfg: &MscgConfig,
    stage: usize,
    rec: &mut Recorder<'_>,
    progress: &mut Progress,
    avg: &mut Average,
    rng: &mut dyn RngCore,
) -> Result<()> {
    let mut w = w0.to_vec();
    let mut probe = DecompositionProbe::new(spec, w0, cfg.eta, stage);
    for t in 0..cfg.iterations {
        let m = cfg.batch.batch(t);
        if !rec.affords(2 * m as u64) {
            break;
        }
        let (y, z) = mscg_iterate(spec, &w, m, cfg.estimator, rng)?;
        let dir = direction(spec, &y, &z);
        let next = prox_step(&dir, &w, cfg.eta, &spec.regularizer)?;
        if !linalg::all_finite(&next) {
            return Err(Error::DivergedGradient);
        }
        probe.step(spec, &w, &dir, &next);
        w = next;
        avg.push(&w);
        progress.last.clone_from(&w);
        rec.iteration(&w, 2 * m as u64, false, false)?;
    }
    if let Some(d) = probe.finish() {
        rec.decomposition(d);
    }
    Ok(())
}

pub fn run_mscg(
    spec: &ProblemSpec,
    w0: &[f64],
    cfg: &MscgConfig,
    rng: &mut dyn RngCore,
) -> Result<RunTrace> {
    run_mscg_with(spec, w0, cfg, &RunOptions::default(), rng)
}

/// Runs `T` updates and averages `w_1..w_T` (`w_0` when `T = 0`).
pub fn run_mscg_with(
    spec: &ProblemSpec,
    w0: &[f64],
    cfg: &MscgConfig,
    opts: &RunOptions,
    rng: &mut dyn RngCore,
) -> Result<RunTrace> {
    check_start(spec, w0)?;
    let mut rec = Recorder::new(spec, opts);
    let mut progress = Progress { last: w0.to_vec() };
    let mut avg = Average::new(spec.dim());
    match mscg_stage(spec, w0, cfg, 1, &mut rec, &mut progress, &mut avg, rng) {
        Ok(()) => {
            let mean = avg.mean_or(w0);
            Ok(rec.finish(progress.last, mean))
        }
        Err(e) => {
            let mean = avg.mean_or(w0);
            Err(fail(rec, progress, mean, e))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RmscgConfig {
    pub eta: f64,
    pub iterations: usize,
    pub initial_batch: usize,
    pub stages: usize,
    pub estimator: Estimator,
}

impl RmscgConfig {
    pub fn new(
        spec: &ProblemSpec,
        eta: f64,
        iterations: usize,
        initial_batch: usize,
        stages: usize,
        estimator: Estimator,
    ) -> Result<Self> {
        let cfg = Self::unchecked(eta, iterations, initial_batch, stages, estimator)?;
        check_step_bound(spec, eta)?;
        Ok(cfg)
    }

    pub fn unchecked(
        eta: f64,
        iterations: usize,
        initial_batch: usize,
        stages: usize,
        estimator: Estimator,
    ) -> Result<Self> {
        if stages < 1 {
            return Err(Error::param("need at least one stage"));
        }
        MscgConfig::unchecked(eta, iterations, BatchSchedule::Constant(initial_batch), estimator)?;
        Ok(Self {
            eta,
            iterations,
            initial_batch,
            stages,
            estimator,
        })
    }

    /// Non-robust settings with `T = ceil(4/(μη))` and `m_1` sized for the
    /// initial gap `eps0`.
    pub fn theorem1(spec: &ProblemSpec, eta: f64, eps0: f64, stages: usize) -> Result<Self> {
        let c = &spec.constants;
        let t = theorem1_iterations(c.mu, eta);
        let m = theorem1_batch(c, eta, eps0);
        Self::new(spec, eta, t, m, stages, Estimator::NonRobust)
    }

    /// Robust settings with `T = ceil(4(2/(μη) + 1))` and the matching `m_1`.
    pub fn theorem2(spec: &ProblemSpec, eta: f64, eps0: f64, stages: usize, delta: f64) -> Result<Self> {
        let c = &spec.constants;
        let t = theorem2_iterations(c.mu, eta);
        let m = theorem2_batch(c, eta, eps0, delta);
        Self::new(spec, eta, t, m, stages, Estimator::Robust { delta })
    }

    /// `m_k = 2^(k−1) m_1`.
    pub fn batches(&self) -> Vec<usize> {
        (0..self.stages)
            .map(|k| self.initial_batch.saturating_mul(1usize << k.min(63)))
            .collect()
    }

    /// Samples drawn over all stages.
    pub fn total_samples(&self) -> u64 {
        self.batches()
            .iter()
            .map(|&m| 2 * m as u64 * self.iterations as u64)
            .sum()
    }
}

pub fn theorem1_iterations(mu: f64, eta: f64) -> usize {
    ceil_tol(4.0 / (mu * eta)) as usize
}

/// `ceil(4(μηC_f²σ1² + μηC_g²L_f²σ0² + C_g²L_f²σ0²) / (μ ε))`, at least 1.
pub fn theorem1_batch(c: &Constants, eta: f64, eps_prev: f64) -> usize {
    let me = c.mu * eta;
    let cgl = c.c_g * c.c_g * c.l_f * c.l_f * c.sigma0 * c.sigma0;
    let num = 4.0 * (me * c.c_f * c.c_f * c.sigma1 * c.sigma1 + me * cgl + cgl);
    (ceil_tol(num / (c.mu * eps_prev)) as usize).max(1)
}

pub fn theorem2_iterations(mu: f64, eta: f64) -> usize {
    ceil_tol(4.0 * (2.0 / (mu * eta) + 1.0)) as usize
}

/// `ceil(16 (μη + 1)(C_g²L_f²σ0² + C_f²σ1²) · 486 ln(1/δ) / (μ ε))`, at least 1.
pub fn theorem2_batch(c: &Constants, eta: f64, eps_prev: f64, delta: f64) -> usize {
    let noise = c.c_g * c.c_g * c.l_f * c.l_f * c.sigma0 * c.sigma0
        + c.c_f * c.c_f * c.sigma1 * c.sigma1;
    let num = 16.0 * (c.mu * eta + 1.0) * noise * 486.0 * (1.0 / delta).ln();
    (ceil_tol(num / (c.mu * eps_prev)) as usize).max(1)
}

pub fn run_rmscg(
    spec: &ProblemSpec,
    w0: &[f64],
    cfg: &RmscgConfig,
    rng: &mut dyn RngCore,
) -> Result<RestartRun> {
    run_rmscg_with(spec, w0, cfg, &RunOptions::default(), rng)
}

/// Chains MSCG stages, each from the previous stage's averaged point, with
/// the batch doubling between stages.
pub fn run_rmscg_with(
    spec: &ProblemSpec,
    w0: &[f64],
    cfg: &RmscgConfig,
    opts: &RunOptions,
    rng: &mut dyn RngCore,
) -> Result<RestartRun> {
    check_start(spec, w0)?;
    let mut rec = Recorder::new(spec, opts);
    let mut progress = Progress { last: w0.to_vec() };
    let mut start = w0.to_vec();
    let mut stages = Vec::with_capacity(cfg.stages);
    for (k, m) in cfg.batches().into_iter().enumerate() {
        if !rec.affords(2 * m as u64) {
            break;
        }
        let stage_cfg = MscgConfig {
            eta: cfg.eta,
            iterations: cfg.iterations,
            batch: BatchSchedule::Constant(m),
            estimator: cfg.estimator,
        };
        rec.set_stage(k + 1);
        let mut avg = Average::new(spec.dim());
        if let Err(e) = mscg_stage(spec, &start, &stage_cfg, k + 1, &mut rec, &mut progress, &mut avg, rng) {
            let mean = avg.mean_or(&start);
            return Err(fail(rec, progress, mean, e));
        }
        start = avg.mean_or(&start);
        stages.push(rec.stage_outcome(start.clone(), avg.count())?);
    }
    let trace = rec.finish(progress.last, start.clone());
    Ok(RestartRun {
        point: start,
        stages,
        trace,
    })
}

/// Logs when a step exceeds the `1/(2L)` bound; used by callers that tune `η`.
pub fn warn_if_unsafe_step(spec: &ProblemSpec, eta: f64) {
    if check_step_bound(spec, eta).is_err() {
        warn!(
            "step size {eta} exceeds 1/(2L) = {}; convergence guarantees do not apply",
            1.0 / (2.0 * spec.smoothness())
        );
    }
}
