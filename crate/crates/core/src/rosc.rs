//! Reference-truncated compositional solver and its restart schedule.
//!
//! Each stage estimates robust references `ỹ0 ≈ g(w0)` and `z̃0 ≈ ∇g(w0)` at
//! its anchor `w0`, then runs ball-constrained proximal steps where any
//! mini-batch estimate straying too far from its reference is replaced by it.

use log::warn;
use rand::RngCore;

use crate::error::{Error, Result};
use crate::linalg::{self, ceil_tol};
use crate::mscg::{check_start, check_step_bound, direction, fail, DecompositionProbe, Progress};
use crate::problem::{Constants, InnerOracle, ProblemSpec};
use crate::prox::prox_step_ball;
use crate::robust_mean::{robust_mean, EstimateKind};
use crate::trace::{Average, Recorder, RestartRun, RunOptions, RunTrace, TruncationCheck};

/// Floor applied to a slack `λ` that would otherwise be zero.
const MIN_LAMBDA: f64 = 1e-12;

/// How the reference accuracy `ν σ` enters the truncation threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NoiseScale {
    /// `ν σ / √m`, the mini-batch noise level; the truncation bound is
    /// audited against this scale.
    #[default]
    PerBatch,
    /// `ν σ` with the raw per-sample noise level.
    Raw,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RoscOptions {
    /// Draw the value and Jacobian estimates from two batches instead of one.
    pub split_batches: bool,
    pub noise_scale: NoiseScale,
    /// Skip the `η ≤ 1/(2L)` check, for tuned steps.
    pub allow_large_step: bool,
}

/// Robust estimates of `g(w0)` and `∇g(w0)` from one shared batch.
#[derive(Debug, Clone, PartialEq)]
pub struct References {
    pub y_ref: Vec<f64>,
    pub z_ref: Vec<f64>,
    /// `sqrt(486 ln(1/δ) / b)`.
    pub nu: f64,
    pub batch: usize,
}

/// `sqrt(486 ln(1/δ) / b)`: the reference error in units of the noise level
/// that holds with probability `1 − δ`.
pub fn reference_nu(b: usize, delta: f64) -> f64 {
    (EstimateKind::Vector.deviation_constant() * (1.0 / delta).ln() / b as f64).sqrt()
}

pub fn reference_estimates(
    spec: &ProblemSpec,
    w0: &[f64],
    b: usize,
    delta: f64,
    rng: &mut dyn RngCore,
) -> Result<References> {
    if b < 1 {
        return Err(Error::param("reference batch must be >= 1"));
    }
    let p = spec.value_dim();
    let pd = p * spec.dim();
    let mut value = vec![0.0; p];
    let mut jac = vec![0.0; pd];
    let mut values = Vec::with_capacity(b * p);
    let mut jacs = Vec::with_capacity(b * pd);
    for _ in 0..b {
        spec.draw_into(w0, rng, &mut value, &mut jac)?;
        values.extend_from_slice(&value);
        jacs.extend_from_slice(&jac);
    }
    Ok(References {
        y_ref: robust_mean(&values, p, delta)?.value,
        z_ref: robust_mean(&jacs, pd, delta)?.value,
        nu: reference_nu(b, delta),
        batch: b,
    })
}

/// Keeps `candidate` when `‖candidate − reference‖ ≤ lip ‖w_t − w0‖ + nu_sigma + λ`
/// (boundary included), otherwise returns `reference`. The flag is set on
/// truncation.
pub fn truncate_reference(
    candidate: &[f64],
    reference: &[f64],
    w_t: &[f64],
    w0: &[f64],
    lip: f64,
    nu_sigma: f64,
    lambda: f64,
) -> (Vec<f64>, bool) {
    let threshold = lip * linalg::dist(w_t, w0) + nu_sigma + lambda;
    if linalg::dist(candidate, reference) <= threshold {
        (candidate.to_vec(), false)
    } else {
        (reference.to_vec(), true)
    }
}

/// Stage anchor, references and truncation parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TruncationState {
    pub w0: Vec<f64>,
    pub y_ref: Vec<f64>,
    pub z_ref: Vec<f64>,
    pub nu: f64,
    pub lambda_y: f64,
    pub lambda_z: f64,
    pub radius: f64,
    pub nu_sigma_y: f64,
    pub nu_sigma_z: f64,
    pub trunc_count_y: usize,
    pub trunc_count_z: usize,
}

impl TruncationState {
    fn truncate(&mut self, y: &[f64], z: &[f64], w_t: &[f64], c: &Constants) -> (Vec<f64>, Vec<f64>, bool, bool) {
        let (y_hat, ty) = truncate_reference(y, &self.y_ref, w_t, &self.w0, c.c_g, self.nu_sigma_y, self.lambda_y);
        let (z_hat, tz) = truncate_reference(z, &self.z_ref, w_t, &self.w0, c.l_g, self.nu_sigma_z, self.lambda_z);
        self.trunc_count_y += ty as usize;
        self.trunc_count_z += tz as usize;
        (y_hat, z_hat, ty, tz)
    }
}

/// Parameters of one restart stage.
#[derive(Debug, Clone, PartialEq)]
pub struct StageSchedule {
    pub stage: usize,
    /// Target gap `ε_k`; NaN for geometric schedules.
    pub eps: f64,
    /// `ε_{k−1}`; NaN for geometric schedules.
    pub eps_prev: f64,
    pub eta: f64,
    pub iterations: usize,
    pub radius: f64,
    pub lambda_y: f64,
    pub lambda_z: f64,
    pub nu: f64,
    pub batch: usize,
    pub reference_batch: usize,
}

impl StageSchedule {
    fn validate(&self) -> Result<()> {
        let pos = |v: f64| v > 0.0 && v.is_finite();
        if !pos(self.eta) || !pos(self.radius) || !pos(self.lambda_y) || !pos(self.lambda_z) {
            return Err(Error::param(format!("invalid stage parameters: {self:?}")));
        }
        if !(self.nu >= 0.0 && self.nu.is_finite()) {
            return Err(Error::param(format!("nu must be finite and >= 0, got {}", self.nu)));
        }
        if self.batch < 1 || self.reference_batch < 1 {
            return Err(Error::param("batch sizes must be >= 1"));
        }
        Ok(())
    }

    /// Samples drawn by the stage, reference batch included.
    pub fn samples(&self, split_batches: bool) -> u64 {
        let per = self.batch as u64 * if split_batches { 2 } else { 1 };
        self.reference_batch as u64 + per * self.iterations as u64
    }
}

/// `ceil(10 / (μη))`.
pub fn stage_iterations(mu: f64, eta: f64) -> usize {
    (ceil_tol(10.0 / (mu * eta)) as usize).max(1)
}

/// `a / b`, infinite when `b` is zero.
fn ratio(a: f64, b: f64) -> f64 {
    if b > 0.0 {
        a / b
    } else {
        f64::INFINITY
    }
}

/// Largest step satisfying every step-size condition for the stage with
/// previous target `eps_prev`.
pub fn stage_step(c: &Constants, eps_prev: f64, delta: f64, m: usize) -> f64 {
    let ln = (1.0 / delta).ln();
    let m = m as f64;
    let l = c.smoothness();
    let s0 = c.sigma0 * c.sigma0 * c.c_g * c.c_g * c.l_f * c.l_f;
    let s1 = c.sigma1 * c.sigma1 * c.c_f * c.c_f;
    let a = 3.0 * ln + 2.0;
    let b = (ln + 1.0) * (ln + 1.0);
    [
        1.0 / (2.0 * l),
        ratio(m * eps_prev, 160.0 * s0 * a),
        ratio(1.0, c.c_g * (32.0 * c.c_g * c.c_g * c.l_f * c.l_f * a).sqrt()),
        ratio(m * eps_prev, 160.0 * s1 * a),
        ratio(1.0, c.l_g * (32.0 * c.c_f * c.c_f * a).sqrt()),
        ratio(m * eps_prev, 1280.0 * s0 * b),
        ratio(1.0, 16.0 * c.c_g * c.l_f * (ln + 1.0)),
        ratio(m * eps_prev, 1280.0 * s1 * b),
        ratio(1.0, 16.0 * c.l_g * c.c_f * (ln + 1.0)),
    ]
    .into_iter()
    .fold(f64::INFINITY, f64::min)
}

/// `max(lip D, σ/√m · √T) + ν σ/√m`, floored at a tiny positive value.
fn stage_lambda(lip: f64, sigma: f64, radius: f64, m: usize, t: usize, nu: f64) -> f64 {
    let sm = sigma / (m as f64).sqrt();
    ((lip * radius).max(sm * (t as f64).sqrt()) + nu * sm).max(MIN_LAMBDA)
}

/// Restart schedule halving the target gap from `eps0` to `eps_target`.
///
/// `K = ceil(log2(eps0/eps_target))`, `ε_k = eps0/2^k`, `D_k = sqrt(2ε_{k−1}/μ)`,
/// `b = ceil(18 c ln(1/δ))`, `T_k = ceil(10/(μη_k))` and
/// `ν = min(sqrt(486 ln(1/δ)/b), sqrt(T_k))`.
pub fn make_schedule(
    spec: &ProblemSpec,
    eps0: f64,
    eps_target: f64,
    delta: f64,
    m: usize,
    c: usize,
) -> Result<Vec<StageSchedule>> {
    if !(eps_target > 0.0 && eps_target < eps0 && eps0.is_finite()) {
        return Err(Error::param(format!(
            "need 0 < eps_target < eps0, got eps_target = {eps_target}, eps0 = {eps0}"
        )));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::param(format!("delta must lie in (0, 1), got {delta}")));
    }
    if m < 1 || c < 1 {
        return Err(Error::param("m and c must be >= 1"));
    }
    let k_stages = ceil_tol((eps0 / eps_target).log2()) as usize;
    let consts = &spec.constants;
    let ln = (1.0 / delta).ln();
    let b = (ceil_tol(18.0 * c as f64 * ln) as usize).max(1);
    let nu_ref = reference_nu(b, delta);
    let schedules = (1..=k_stages)
        .map(|k| {
            let eps_prev = eps0 / 2f64.powi(k as i32 - 1);
            let eps = eps0 / 2f64.powi(k as i32);
            let radius = (2.0 * eps_prev / consts.mu).sqrt();
            let eta = stage_step(consts, eps_prev, delta, m);
            let iterations = stage_iterations(consts.mu, eta);
            let nu = nu_ref.min((iterations as f64).sqrt());
            StageSchedule {
                stage: k,
                eps,
                eps_prev,
                eta,
                iterations,
                radius,
                lambda_y: stage_lambda(consts.c_g, consts.sigma0, radius, m, iterations, nu),
                lambda_z: stage_lambda(consts.l_g, consts.sigma1, radius, m, iterations, nu),
                nu,
                batch: m,
                reference_batch: b,
            }
        })
        .collect();
    Ok(schedules)
}

/// Practical schedule for problems whose constants are only estimated:
/// `η` halves and `T` doubles each stage while the radius stays fixed.
#[allow(clippy::too_many_arguments)]
pub fn geometric_schedule(
    c: &Constants,
    stages: usize,
    eta1: f64,
    iterations1: usize,
    radius: f64,
    m: usize,
    b: usize,
    delta: f64,
) -> Result<Vec<StageSchedule>> {
    if stages < 1 || iterations1 < 1 || m < 1 || b < 1 {
        return Err(Error::param("stages, iterations, m and b must be >= 1"));
    }
    let nu_ref = reference_nu(b, delta);
    let schedules: Vec<StageSchedule> = (0..stages)
        .map(|k| {
            let eta = eta1 / 2f64.powi(k as i32);
            let iterations = iterations1.saturating_mul(1 << k.min(40));
            let nu = nu_ref.min((iterations as f64).sqrt());
            StageSchedule {
                stage: k + 1,
                eps: f64::NAN,
                eps_prev: f64::NAN,
                eta,
                iterations,
                radius,
                lambda_y: stage_lambda(c.c_g, c.sigma0, radius, m, iterations, nu),
                lambda_z: stage_lambda(c.l_g, c.sigma1, radius, m, iterations, nu),
                nu,
                batch: m,
                reference_batch: b,
            }
        })
        .collect();
    for s in &schedules {
        s.validate()?;
    }
    Ok(schedules)
}

/// Noise levels and Jacobian scale estimated from pilot draws at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseCalibration {
    pub sigma0: f64,
    pub sigma1: f64,
    /// `sqrt(mean ‖∇g(w; ξ)‖²)`.
    pub c_g: f64,
}

pub const CALIBRATION_SAMPLES: usize = 1024;

/// Plain sample standard deviations (in norm) of `n` value and Jacobian draws
/// at `w`. A heuristic; the schedule guarantees do not cover it.
pub fn calibrate_noise(
    inner: &dyn InnerOracle,
    w: &[f64],
    n: usize,
    rng: &mut dyn RngCore,
) -> Result<NoiseCalibration> {
    if n < 2 {
        return Err(Error::param("calibration needs at least two samples"));
    }
    let p = inner.value_dim();
    let pd = p * inner.param_dim();
    let mut value = vec![0.0; p];
    let mut jac = vec![0.0; pd];
    let mut values = Vec::with_capacity(n * p);
    let mut jacs = Vec::with_capacity(n * pd);
    for _ in 0..n {
        inner.sample_into(w, rng, &mut value, &mut jac)?;
        if !linalg::all_finite(&value) || !linalg::all_finite(&jac) {
            return Err(Error::NonFiniteOracle);
        }
        values.extend_from_slice(&value);
        jacs.extend_from_slice(&jac);
    }
    let spread = |data: &[f64], dim: usize| -> f64 {
        let mut mean = vec![0.0; dim];
        for row in data.chunks_exact(dim) {
            linalg::axpy(1.0, row, &mut mean);
        }
        linalg::scale(&mut mean, 1.0 / n as f64);
        let ss: f64 = data.chunks_exact(dim).map(|row| linalg::dist_sq(row, &mean)).sum();
        (ss / (n - 1) as f64).sqrt()
    };
    let second: f64 = jacs.chunks_exact(pd).map(linalg::norm_sq).sum::<f64>() / n as f64;
    Ok(NoiseCalibration {
        sigma0: spread(&values, p),
        sigma1: spread(&jacs, pd),
        c_g: second.sqrt(),
    })
}

fn per_batch_scale(scale: NoiseScale, sigma: f64, m: usize) -> f64 {
    match scale {
        NoiseScale::PerBatch => sigma / (m as f64).sqrt(),
        NoiseScale::Raw => sigma,
    }
}

/// Audits the truncation bound when `g` and `∇g` are analytic.
struct BoundAudit {
    check: TruncationCheck,
    sm_y: f64,
    sm_z: f64,
}

impl BoundAudit {
    fn new(spec: &ProblemSpec, st: &TruncationState, stage: usize, m: usize) -> Option<Self> {
        let g0 = spec.inner.exact_value(&st.w0)?;
        let j0 = spec.inner.exact_jacobian(&st.w0)?;
        let c = &spec.constants;
        let sm_y = st.nu * c.sigma0 / (m as f64).sqrt();
        let sm_z = st.nu * c.sigma1 / (m as f64).sqrt();
        let ref_error_y = linalg::dist(&st.y_ref, &g0);
        let ref_error_z = linalg::dist(&st.z_ref, &j0);
        Some(Self {
            check: TruncationCheck {
                stage,
                premise_y: ref_error_y <= sm_y,
                premise_z: ref_error_z <= sm_z,
                ref_error_y,
                ref_error_z,
                ..Default::default()
            },
            sm_y,
            sm_z,
        })
    }

    /// Checks `‖ŷ − g(w_t)‖ ≤ 2C_g‖Δ‖ + 2νσ̃_m + λ_y` and the `∇g` analog.
    fn observe(&mut self, spec: &ProblemSpec, st: &TruncationState, w_t: &[f64], y_hat: &[f64], z_hat: &[f64]) {
        let (Some(g), Some(j)) = (spec.inner.exact_value(w_t), spec.inner.exact_jacobian(w_t)) else {
            return;
        };
        let c = &spec.constants;
        let delta = linalg::dist(w_t, &st.w0);
        let bound_y = 2.0 * c.c_g * delta + 2.0 * self.sm_y + st.lambda_y;
        let bound_z = 2.0 * c.l_g * delta + 2.0 * self.sm_z + st.lambda_z;
        let err_y = linalg::dist(y_hat, &g);
        let err_z = linalg::dist(z_hat, &j);
        let chk = &mut self.check;
        chk.checked += 1;
        // Relative slack for rounding in the distance computations.
        let tol = |b: f64| b * (1.0 + 1e-12) + 1e-15;
        chk.violations_y += (err_y > tol(bound_y)) as usize;
        chk.violations_z += (err_z > tol(bound_z)) as usize;
        chk.worst_ratio_y = chk.worst_ratio_y.max(err_y / bound_y);
        chk.worst_ratio_z = chk.worst_ratio_z.max(err_z / bound_z);
    }
}

/// Mini-batch means of `g` and `∇g` at `w`, from one batch or two.
fn batch_means(
    spec: &ProblemSpec,
    w: &[f64],
    m: usize,
    split: bool,
    rng: &mut dyn RngCore,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let p = spec.value_dim();
    let pd = p * spec.dim();
    let mut value = vec![0.0; p];
    let mut jac = vec![0.0; pd];
    let mut y = vec![0.0; p];
    let mut z = vec![0.0; pd];
    if split {
        for _ in 0..m {
            spec.draw_into(w, rng, &mut value, &mut jac)?;
            linalg::axpy(1.0, &value, &mut y);
        }
        for _ in 0..m {
            spec.draw_into(w, rng, &mut value, &mut jac)?;
            linalg::axpy(1.0, &jac, &mut z);
        }
    } else {
        for _ in 0..m {
            spec.draw_into(w, rng, &mut value, &mut jac)?;
            linalg::axpy(1.0, &value, &mut y);
            linalg::axpy(1.0, &jac, &mut z);
        }
    }
    linalg::scale(&mut y, 1.0 / m as f64);
    linalg::scale(&mut z, 1.0 / m as f64);
    Ok((y, z))
}

#[allow(clippy::too_many_arguments)]
fn rosc_stage(
    spec: &ProblemSpec,
    w0: &[f64],
    sched: &StageSchedule,
    delta: f64,
    opts: &RoscOptions,
    rec: &mut Recorder<'_>,
    progress: &mut Progress,
    avg: &mut Average,
    rng: &mut dyn RngCore,
) -> Result<Option<TruncationState>> {
    sched.validate()?;
    if !opts.allow_large_step {
        check_step_bound(spec, sched.eta)?;
    }
    let per_iter = sched.batch as u64 * if opts.split_batches { 2 } else { 1 };
    if !rec.affords(sched.reference_batch as u64 + per_iter) {
        return Ok(None);
    }
    let refs = reference_estimates(spec, w0, sched.reference_batch, delta, rng)?;
    rec.add_samples(sched.reference_batch as u64);
    let c = spec.constants;
    let mut st = TruncationState {
        w0: w0.to_vec(),
        y_ref: refs.y_ref,
        z_ref: refs.z_ref,
        nu: sched.nu,
        lambda_y: sched.lambda_y,
        lambda_z: sched.lambda_z,
        radius: sched.radius,
        nu_sigma_y: sched.nu * per_batch_scale(opts.noise_scale, c.sigma0, sched.batch),
        nu_sigma_z: sched.nu * per_batch_scale(opts.noise_scale, c.sigma1, sched.batch),
        trunc_count_y: 0,
        trunc_count_z: 0,
    };
    let mut audit = BoundAudit::new(spec, &st, sched.stage, sched.batch);
    let mut probe = DecompositionProbe::new(spec, w0, sched.eta, sched.stage);
    let mut w = w0.to_vec();
    for _ in 0..sched.iterations {
        if !rec.affords(per_iter) {
            break;
        }
        let (y, z) = batch_means(spec, &w, sched.batch, opts.split_batches, rng)?;
        let (y_hat, z_hat, ty, tz) = st.truncate(&y, &z, &w, &c);
        if let Some(a) = audit.as_mut() {
            a.observe(spec, &st, &w, &y_hat, &z_hat);
        }
        let dir = direction(spec, &y_hat, &z_hat);
        let next = prox_step_ball(&dir, &w, w0, sched.eta, sched.radius, &spec.regularizer)?;
        if !linalg::all_finite(&next) {
            return Err(Error::DivergedGradient);
        }
        probe.step(spec, &w, &dir, &next);
        w = next;
        avg.push(&w);
        progress.last.clone_from(&w);
        rec.iteration(&w, per_iter, ty, tz)?;
    }
    if let Some(a) = audit {
        rec.truncation_check(a.check);
    }
    if let Some(d) = probe.finish() {
        rec.decomposition(d);
    }
    Ok(Some(st))
}

/// One stage: references at `w0`, then `T` truncated ball-constrained steps.
/// Returns the trace; `averaged_point` is the mean of `w_1..w_T`. The state
/// is `None` when the sample budget does not cover the reference batch and
/// one iteration.
pub fn run_rosc(
    spec: &ProblemSpec,
    w0: &[f64],
    sched: &StageSchedule,
    delta: f64,
    rng: &mut dyn RngCore,
) -> Result<(RunTrace, Option<TruncationState>)> {
    run_rosc_with(spec, w0, sched, delta, &RoscOptions::default(), &RunOptions::default(), rng)
}

pub fn run_rosc_with(
    spec: &ProblemSpec,
    w0: &[f64],
    sched: &StageSchedule,
    delta: f64,
    opts: &RoscOptions,
    run_opts: &RunOptions,
    rng: &mut dyn RngCore,
) -> Result<(RunTrace, Option<TruncationState>)> {
    check_start(spec, w0)?;
    check_delta(delta)?;
    let mut rec = Recorder::new(spec, run_opts);
    rec.set_stage(sched.stage);
    let mut progress = Progress { last: w0.to_vec() };
    let mut avg = Average::new(spec.dim());
    match rosc_stage(spec, w0, sched, delta, opts, &mut rec, &mut progress, &mut avg, rng) {
        Ok(st) => {
            let mean = avg.mean_or(w0);
            Ok((rec.finish(progress.last, mean), st))
        }
        Err(e) => {
            let mean = avg.mean_or(w0);
            Err(fail(rec, progress, mean, e))
        }
    }
}

fn check_delta(delta: f64) -> Result<()> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::param(format!("delta must lie in (0, 1), got {delta}")));
    }
    Ok(())
}

pub fn run_rrosc(
    spec: &ProblemSpec,
    w0: &[f64],
    schedules: &[StageSchedule],
    delta: f64,
    rng: &mut dyn RngCore,
) -> Result<RestartRun> {
    run_rrosc_with(spec, w0, schedules, delta, &RoscOptions::default(), &RunOptions::default(), rng)
}

/// Chains stages, each anchored at the previous stage's averaged point.
pub fn run_rrosc_with(
    spec: &ProblemSpec,
    w0: &[f64],
    schedules: &[StageSchedule],
    delta: f64,
    opts: &RoscOptions,
    run_opts: &RunOptions,
    rng: &mut dyn RngCore,
) -> Result<RestartRun> {
    if schedules.is_empty() {
        return Err(Error::param("schedule list is empty"));
    }
    check_start(spec, w0)?;
    check_delta(delta)?;
    if opts.allow_large_step && schedules.iter().any(|s| check_step_bound(spec, s.eta).is_err()) {
        warn!("schedule steps exceed 1/(2L); convergence guarantees do not apply");
    }
    let mut rec = Recorder::new(spec, run_opts);
    let mut progress = Progress { last: w0.to_vec() };
    let mut start = w0.to_vec();
    let mut stages = Vec::with_capacity(schedules.len());
    for sched in schedules {
        rec.set_stage(sched.stage);
        let mut avg = Average::new(spec.dim());
        match rosc_stage(spec, &start, sched, delta, opts, &mut rec, &mut progress, &mut avg, rng) {
            Ok(Some(_)) => {}
            Ok(None) => break,
            Err(e) => {
                let mean = avg.mean_or(&start);
                return Err(fail(rec, progress, mean, e));
            }
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

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mscg::{run_mscg, BatchSchedule, Estimator, MscgConfig};
    use crate::noise::TailFamily;
    use crate::synthetic::{make_synthetic, NoiseModel, SyntheticOptions, SyntheticQuadratic};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn synthetic(noise: NoiseModel, seed: u64) -> SyntheticQuadratic {
        make_synthetic(SyntheticOptions::new(3, 5, 0.5, noise), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    fn wide_stage(eta: f64, iterations: usize, m: usize) -> StageSchedule {
        StageSchedule {
            stage: 1,
            eps: f64::NAN,
            eps_prev: f64::NAN,
            eta,
            iterations,
            radius: 1e12,
            lambda_y: 1e12,
            lambda_z: 1e12,
            nu: 1.0,
            batch: m,
            reference_batch: 1,
        }
    }

    #[test]
    fn nu_examples() {
        let delta = 0.01f64;
        let b = (486.0 * (1.0 / delta).ln()) as usize;
        assert!((reference_nu(b, delta) - 1.0).abs() < 1e-3);
        let e = (-1.0f64).exp();
        assert!((reference_nu(486, e) - 1.0).abs() < 1e-15);
        assert!((reference_nu(8192, 0.01) - 0.523).abs() < 5e-4);
    }

    #[test]
    fn truncation_examples() {
        let r = [1.0, 1.0];
        assert_eq!(truncate_reference(&r, &r, &[0.0], &[0.0], 1.0, 0.0, 1e-9), (r.to_vec(), false));
        // threshold = 1·2 + 0.5 + 1 = 3.5
        let far = [1.0 + 4.0, 1.0];
        assert_eq!(truncate_reference(&far, &r, &[2.0], &[0.0], 1.0, 0.5, 1.0), (r.to_vec(), true));
        let edge = [1.0, 1.0 + 3.5];
        assert_eq!(truncate_reference(&edge, &r, &[2.0], &[0.0], 1.0, 0.5, 1.0), (edge.to_vec(), false));
    }

    #[test]
    fn zero_noise_references_are_exact() {
        let s = synthetic(NoiseModel::none(), 1);
        let w0 = [0.5, -1.0, 0.2, 0.0, 0.3];
        for b in [1, 9, 40] {
            let refs = reference_estimates(&s.spec, &w0, b, 0.05, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
            let g = s.oracle.exact_value(&w0).unwrap();
            let j = s.oracle.exact_jacobian(&w0).unwrap();
            assert!(linalg::dist(&refs.y_ref, &g) < 1e-12);
            assert!(linalg::dist(&refs.z_ref, &j) < 1e-12);
        }
    }

    #[test]
    fn schedule_examples() {
        let s = synthetic(NoiseModel::new(TailFamily::Gaussian, 0.1, 0.1), 3);
        let sched = make_schedule(&s.spec, 1.0, 0.125, 0.05, 8, 1).unwrap();
        let eps: Vec<f64> = sched.iter().map(|s| s.eps).collect();
        assert_eq!(eps, vec![0.5, 0.25, 0.125]);
        // D_1 = sqrt(2 · 1 / 0.5) = 2
        assert!((sched[0].radius - 2.0).abs() < 1e-15);
        assert!(sched.windows(2).all(|w| w[1].radius < w[0].radius));
        for st in &sched {
            assert!(st.eta <= 1.0 / (2.0 * s.spec.smoothness()) * (1.0 + 1e-15));
            assert!(st.iterations >= 1);
            assert_eq!(st.reference_batch, 54);
            assert_eq!(st.batch, 8);
        }
        assert_eq!(stage_iterations(0.5, 0.1), 200);
        assert!(make_schedule(&s.spec, 1.0, 1.0, 0.05, 8, 1).is_err());
        assert!(make_schedule(&s.spec, 1.0, 2.0, 0.05, 8, 1).is_err());
    }

    #[test]
    fn step_bounds_by_hand() {
        let c = Constants {
            c_f: 1.0,
            l_f: 1.0,
            c_g: 1.0,
            l_g: 0.0,
            sigma0: 0.0,
            sigma1: 0.0,
            mu: 0.5,
        };
        let delta = (-1.0f64).exp();
        // noise-free: min(1/(2L), 1/sqrt(32·5), 1/(16·2)) = 1/32
        assert!((stage_step(&c, 1.0, delta, 8) - 1.0 / 32.0).abs() < 1e-15);
        let noisy = Constants { sigma0: 1.0, ..c };
        // m ε / (1280 σ0² C_g² L_f² (ln+1)²) = 8 / 5120
        assert!((stage_step(&noisy, 1.0, delta, 8) - 8.0 / 5120.0).abs() < 1e-15);
    }

    #[test]
    fn lambda_formula() {
        // max(2 · 3, 0.5/2 · 4) + 1 · 0.5/2
        assert!((stage_lambda(2.0, 0.5, 3.0, 4, 16, 1.0) - 6.25).abs() < 1e-15);
        assert!((stage_lambda(0.1, 0.5, 1.0, 4, 16, 1.0) - 1.25).abs() < 1e-15);
        assert_eq!(stage_lambda(0.0, 0.0, 1.0, 4, 16, 1.0), MIN_LAMBDA);
    }

    #[test]
    fn inactive_truncation_matches_mscg() {
        let s = synthetic(NoiseModel::none(), 4);
        let eta = 1.0 / (2.0 * s.spec.smoothness());
        let w0 = vec![1.0; 5];
        let (tr, st) = run_rosc(&s.spec, &w0, &wide_stage(eta, 40, 3), 0.1, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let cfg = MscgConfig::new(&s.spec, eta, 40, BatchSchedule::Constant(3), Estimator::NonRobust).unwrap();
        let plain = run_mscg(&s.spec, &w0, &cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let st = st.unwrap();
        assert_eq!(st.trunc_count_y + st.trunc_count_z, 0);
        for (a, b) in tr.rows.iter().zip(&plain.rows) {
            let (fa, fb) = (a.objective.unwrap(), b.objective.unwrap());
            assert!((fa - fb).abs() <= 1e-12 * fb.abs().max(1.0));
        }
        assert!(linalg::dist(&tr.averaged_point, &plain.averaged_point) < 1e-10);
    }

    #[test]
    fn iterates_stay_in_ball() {
        let s = synthetic(NoiseModel::new(TailFamily::StudentT { dof: 2.5 }, 0.05, 0.05), 5);
        let eps0 = s.gap(&[0.0; 5]);
        let sched = make_schedule(&s.spec, eps0, eps0 / 8.0, 0.05, 4, 1).unwrap();
        let w0 = vec![0.0; 5];
        let opts = RunOptions {
            snapshots: (1..200).map(|i| i * 50).collect(),
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (tr, _) = run_rosc_with(&s.spec, &w0, &sched[0], 0.05, &RoscOptions::default(), &opts, &mut rng).unwrap();
        for snap in &tr.snapshots {
            assert!(linalg::dist(&snap.point, &w0) <= sched[0].radius + 1e-9);
        }
        assert!(linalg::dist(&tr.final_point, &w0) <= sched[0].radius + 1e-9);
    }

    #[test]
    fn stage_sample_accounting() {
        let s = synthetic(NoiseModel::new(TailFamily::Gaussian, 0.1, 0.1), 7);
        let eta = 1.0 / (2.0 * s.spec.smoothness());
        let mut sched = wide_stage(eta, 10, 4);
        sched.reference_batch = 7;
        let (tr, _) = run_rosc(&s.spec, &[0.0; 5], &sched, 0.1, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(tr.samples(), 7 + 40);
        assert_eq!(tr.samples(), sched.samples(false));
        assert_eq!(tr.rows[0].samples, 11);
        let split = RoscOptions {
            split_batches: true,
            ..Default::default()
        };
        let (tr, _) = run_rosc_with(&s.spec, &[0.0; 5], &sched, 0.1, &split, &RunOptions::default(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(tr.samples(), sched.samples(true));
    }

    #[test]
    fn oversized_step_rejected_unless_allowed() {
        let s = synthetic(NoiseModel::none(), 8);
        let eta = 1.0 / s.spec.smoothness();
        let sched = wide_stage(eta, 3, 1);
        assert!(run_rosc(&s.spec, &[0.0; 5], &sched, 0.1, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
        let opts = RoscOptions {
            allow_large_step: true,
            ..Default::default()
        };
        assert!(run_rosc_with(&s.spec, &[0.0; 5], &sched, 0.1, &opts, &RunOptions::default(), &mut ChaCha8Rng::seed_from_u64(0)).is_ok());
    }

    #[test]
    fn small_noise_never_truncates() {
        let s = synthetic(NoiseModel::new(TailFamily::Gaussian, 1e-6, 1e-6), 9);
        let eps0 = s.gap(&[0.0; 5]);
        let sched = make_schedule(&s.spec, eps0, eps0 / 16.0, 0.05, 8, 1).unwrap();
        let run = run_rrosc(&s.spec, &[0.0; 5], &sched, 0.05, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(run.trace.truncations(), (0, 0));
        assert_eq!(run.stages.len(), 4);
    }

    #[test]
    fn single_stage_restart_equals_stage() {
        let s = synthetic(NoiseModel::new(TailFamily::StudentT { dof: 3.0 }, 0.05, 0.05), 10);
        let eps0 = s.gap(&[0.0; 5]);
        let sched = make_schedule(&s.spec, eps0, eps0 / 2.0, 0.05, 8, 1).unwrap();
        assert_eq!(sched.len(), 1);
        let r = run_rrosc(&s.spec, &[0.0; 5], &sched, 0.05, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let (t, _) = run_rosc(&s.spec, &[0.0; 5], &sched[0], 0.05, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(r.point, t.averaged_point);
        assert_eq!(r.trace.rows, t.rows);
    }

    #[test]
    fn zero_noise_restarts_reach_target() {
        let s = synthetic(NoiseModel::none(), 11);
        let w0 = vec![0.0; 5];
        let eps0 = s.gap(&w0);
        let sched = make_schedule(&s.spec, eps0, eps0 / 2f64.powi(20), 0.05, 1, 1).unwrap();
        assert_eq!(sched.len(), 20);
        let opts = RunOptions {
            objective: crate::trace::ObjectiveEval::Never,
            ..Default::default()
        };
        let r = run_rrosc_with(&s.spec, &w0, &sched, 0.05, &RoscOptions::default(), &opts, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(s.gap(&r.point) <= eps0 / 2f64.powi(20) + 1e-10);
    }

    #[test]
    fn bound_audit_holds_under_premise() {
        let s = synthetic(NoiseModel::new(TailFamily::StudentT { dof: 2.5 }, 0.02, 0.02), 12);
        let eps0 = s.gap(&[0.0; 5]);
        let sched = make_schedule(&s.spec, eps0, eps0 / 4.0, 0.05, 8, 1).unwrap();
        let mut audited = 0;
        for seed in 0..5 {
            let r = run_rrosc(&s.spec, &[0.0; 5], &sched, 0.05, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            for chk in &r.trace.diagnostics.truncation {
                assert_eq!(chk.checked, sched[chk.stage - 1].iterations);
                if chk.premise() {
                    audited += 1;
                    assert_eq!((chk.violations_y, chk.violations_z), (0, 0), "{chk:?}");
                }
            }
        }
        assert!(audited >= 5, "only {audited} stages met the premise");
    }

    #[test]
    fn calibration_recovers_noise_levels() {
        let s = synthetic(NoiseModel::new(TailFamily::Gaussian, 0.4, 0.2), 13);
        let cal = calibrate_noise(s.spec.inner.as_ref(), &[0.0; 5], 20_000, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!((cal.sigma0 - 0.4).abs() < 0.02, "{cal:?}");
        assert!((cal.sigma1 - 0.2).abs() < 0.01, "{cal:?}");
        assert!((cal.c_g - s.spec.constants.c_g).abs() < 0.05 * s.spec.constants.c_g, "{cal:?}");
    }

    #[test]
    fn geometric_schedule_shape() {
        let c = Constants {
            c_f: 1.0,
            l_f: 1.0,
            c_g: 2.0,
            l_g: 0.5,
            sigma0: 0.1,
            sigma1: 0.2,
            mu: 0.1,
        };
        let g = geometric_schedule(&c, 3, 0.4, 10, 100.0, 4, 54, 0.05).unwrap();
        let shape: Vec<(f64, usize)> = g.iter().map(|s| (s.eta, s.iterations)).collect();
        assert_eq!(shape, vec![(0.4, 10), (0.2, 20), (0.1, 40)]);
        assert!(g.iter().all(|s| s.radius == 100.0 && s.eps.is_nan()));
        assert!(geometric_schedule(&c, 0, 0.4, 10, 100.0, 4, 54, 0.05).is_err());
    }
}
