//! Seeded multi-trial runs: build the problem, run one solver to the sample
//! budget, record checkpoint traces and aggregate them.

use std::fmt::Write as _;
use std::fs;
use std::io::BufWriter;
use std::path::Path;

use log::{info, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use robcomp_core::data::{load_libsvm, make_regression, split_validation, Dataset, RegressionOptions};
use robcomp_core::dro::DroInstance;
use robcomp_core::mscg::{
    run_mscg_with, run_rmscg_with, theorem1_batch, theorem1_iterations, theorem2_batch, theorem2_iterations,
    warn_if_unsafe_step, BatchSchedule, Estimator, MscgConfig, RmscgConfig,
};
use robcomp_core::noise::{corrupt_labels, NoiseKind};
use robcomp_core::rosc::{
    calibrate_noise, geometric_schedule, make_schedule, run_rrosc_with, RoscOptions, StageSchedule, CALIBRATION_SAMPLES,
};
use robcomp_core::synthetic::{make_synthetic, NoiseModel, SyntheticOptions, SyntheticQuadratic};
use robcomp_core::trace::ObjectiveEval;
use robcomp_core::{ProblemSpec, RunOptions, RunTrace};

use crate::config::{DroConfig, ExperimentConfig, ProblemConfig, SolverConfig, SolverName, SyntheticConfig};
use crate::error::{HarnessError, Result};
use crate::metrics::{aggregate_trials, evaluate_mse, log_checkpoints, write_aggregate, write_trace, AggregateRow, Metric, TraceRecord};

/// Default first-stage iteration count for geometric schedules.
const DEFAULT_GEOMETRIC_ITERATIONS: usize = 100;
/// Default target gap reduction `2^-stages` for theory schedules.
const DEFAULT_THEORY_STAGES: usize = 5;
const MAX_STAGES: usize = 60;

pub fn version_string() -> String {
    format!("v{}", env!("CARGO_PKG_VERSION"))
}

pub fn trial_seed(seed: u64, trial: usize) -> u64 {
    seed ^ trial as u64
}

/// Data shared by all trials of a DRO experiment.
#[derive(Debug, Clone)]
struct DroData {
    data: Dataset,
    test: Option<Dataset>,
}

#[derive(Debug, Clone)]
enum Prepared {
    Synthetic(Option<SyntheticQuadratic>),
    Dro(DroData),
}

fn prepare(cfg: &ExperimentConfig) -> Result<Prepared> {
    match &cfg.problem {
        ProblemConfig::Synthetic(p) => {
            let fixed = match p.instance_seed {
                Some(s) => Some(synthetic_instance(p, &mut ChaCha8Rng::seed_from_u64(s))?),
                None => None,
            };
            Ok(Prepared::Synthetic(fixed))
        }
        ProblemConfig::Dro(p) => {
            let (data, test) = if let Some(g) = &p.generate {
                let mut opts = RegressionOptions::new(g.examples + g.test_examples, g.dim);
                opts.density = g.density.unwrap_or(opts.density);
                opts.support = g.support.unwrap_or(opts.support);
                opts.label_sigma = g.label_sigma.unwrap_or(opts.label_sigma);
                let mut rng = ChaCha8Rng::seed_from_u64(g.seed.unwrap_or(cfg.seed));
                let (all, _) = make_regression(opts, &mut rng)?;
                if g.test_examples == 0 {
                    (all, None)
                } else {
                    let rows: Vec<usize> = (0..all.len()).collect();
                    let (train, test) = rows.split_at(g.examples);
                    (all.subset(train, "regression#train"), Some(all.subset(test, "regression#test")))
                }
            } else {
                let path = p.dataset.as_ref().expect("validated");
                (load_libsvm(path)?, None)
            };
            let test = match (&p.test_dataset, test) {
                (Some(path), _) => Some(load_libsvm(path)?),
                (None, t) => t,
            };
            let dim = data.dim.max(test.as_ref().map_or(0, |t| t.dim));
            let data = data.with_dim(dim)?;
            let test = test.map(|t| t.with_dim(dim)).transpose()?;
            Ok(Prepared::Dro(DroData { data, test }))
        }
    }
}

fn synthetic_instance(p: &SyntheticConfig, rng: &mut ChaCha8Rng) -> Result<SyntheticQuadratic> {
    let noise = match p.noise.family() {
        Some(f) => NoiseModel::new(f, p.sigma0, p.sigma1),
        None => NoiseModel::none(),
    };
    Ok(make_synthetic(SyntheticOptions::new(p.p, p.d, p.mu, noise), rng)?)
}

/// How points are scored in traces.
enum Scorer {
    Synthetic { f_star: f64 },
    Dro { instance: DroInstance, valid: Dataset, test: Option<Dataset> },
}

struct TrialProblem {
    spec: ProblemSpec,
    /// `F(w0) − F*` when the optimum is known.
    eps0: Option<f64>,
    scorer: Scorer,
}

impl TrialProblem {
    fn record(&self, w: &[f64], iter: u64, samples: u64, trunc: (u64, u64)) -> Result<TraceRecord> {
        let (objective, gap, mse) = match &self.scorer {
            Scorer::Synthetic { f_star } => {
                let f = self.spec.exact_objective(w).expect("synthetic oracle is analytic");
                (f, Some(f - f_star), None)
            }
            Scorer::Dro { instance, valid, test } => {
                let f = instance.empirical_objective(w);
                (f, None, Some(evaluate_mse(w, test.as_ref().unwrap_or(valid))?))
            }
        };
        Ok(TraceRecord {
            iter,
            samples,
            objective: Some(objective),
            gap,
            mse,
            trunc_y: trunc.0,
            trunc_z: trunc.1,
        })
    }

    fn validation_mse(&self, w: &[f64]) -> Result<Option<f64>> {
        match &self.scorer {
            Scorer::Synthetic { .. } => Ok(None),
            Scorer::Dro { valid, .. } => Ok(Some(evaluate_mse(w, valid)?)),
        }
    }
}

fn dro_problem(
    p: &DroConfig,
    train: &Dataset,
    valid: &Dataset,
    test: &Option<Dataset>,
    kinds: &[NoiseKind],
    reg_weight: f64,
    rng: &mut ChaCha8Rng,
) -> Result<TrialProblem> {
    let sources = corrupt_labels(train, kinds, rng)?;
    let instance = DroInstance::new(sources, p.temperature, p.regularizer(reg_weight)?)?;
    let w0 = vec![0.0; instance.dim];
    let cal = calibrate_noise(&instance, &w0, CALIBRATION_SAMPLES, rng)?;
    let l_g = instance.inner_smoothness_bound();
    let spec = instance.clone().into_problem(cal.c_g, l_g, cal.sigma0, cal.sigma1, p.mu)?;
    Ok(TrialProblem {
        spec,
        eps0: None,
        scorer: Scorer::Dro {
            instance,
            valid: valid.clone(),
            test: test.clone(),
        },
    })
}

/// Smallest stage count whose doubling total covers the budget.
fn stages_for_budget(first_stage_samples: u64, budget: u64) -> usize {
    let mut total = 0u64;
    let mut k = 0;
    while total < budget && k < MAX_STAGES {
        total = total.saturating_add(first_stage_samples.saturating_mul(1 << k.min(62)));
        k += 1;
    }
    k.max(1)
}

/// Stage schedules for RROSC: the theory schedule when the optimum gap is
/// known and no step is given, otherwise the geometric one.
pub(crate) fn rrosc_schedule(
    spec: &ProblemSpec,
    s: &SolverConfig,
    eps0: Option<f64>,
    eta: Option<f64>,
    budget: u64,
) -> robcomp_core::Result<Vec<StageSchedule>> {
    let m = s.batch.unwrap_or(8);
    if let (Some(eps0), None) = (eps0, eta) {
        let k = s.stages.unwrap_or(DEFAULT_THEORY_STAGES);
        return make_schedule(spec, eps0, eps0 / 2f64.powi(k as i32), s.delta, m, s.c);
    }
    let eta1 = eta.unwrap_or(1.0 / (2.0 * spec.smoothness()));
    let t1 = s.iterations.unwrap_or(DEFAULT_GEOMETRIC_ITERATIONS);
    let b = s
        .reference_batch
        .unwrap_or_else(|| (18.0 * s.c as f64 * (1.0 / s.delta).ln()).ceil() as usize);
    let per = m as u64 * if s.split_batches { 2 } else { 1 };
    let stages = s.stages.unwrap_or_else(|| stages_for_budget(per * t1 as u64, budget));
    geometric_schedule(&spec.constants, stages, eta1, t1, s.radius, m, b, s.delta)
}

/// Runs the configured solver; returns the trace and the solver's output point.
fn run_solver(
    cfg: &ExperimentConfig,
    prob: &TrialProblem,
    eta: Option<f64>,
    rng: &mut ChaCha8Rng,
) -> robcomp_core::Result<(RunTrace, Vec<f64>)> {
    let s = &cfg.solver;
    let spec = &prob.spec;
    let budget = cfg.sample_budget;
    let w0 = vec![0.0; spec.dim()];
    let opts = RunOptions {
        objective: ObjectiveEval::Never,
        snapshots: log_checkpoints(budget, cfg.checkpoints),
        sample_budget: Some(budget),
    };
    let safe_eta = 1.0 / (2.0 * spec.smoothness());
    if let Some(e) = eta {
        warn_if_unsafe_step(spec, e);
    }
    let c = &spec.constants;
    match s.name {
        SolverName::Mscg => {
            let m = s.batch.unwrap_or(1);
            let t = s.iterations.unwrap_or((budget / (2 * m as u64)).max(1) as usize);
            let mc = MscgConfig::unchecked(eta.unwrap_or(safe_eta), t, BatchSchedule::Constant(m), Estimator::NonRobust)?;
            let tr = run_mscg_with(spec, &w0, &mc, &opts, rng)?;
            let out = tr.averaged_point.clone();
            Ok((tr, out))
        }
        SolverName::Rmscg | SolverName::RmscgRobust => {
            let robust = s.name == SolverName::RmscgRobust;
            let e = eta.unwrap_or(safe_eta);
            let t = s.iterations.unwrap_or(if robust {
                theorem2_iterations(c.mu, e)
            } else {
                theorem1_iterations(c.mu, e)
            });
            let m1 = match (s.batch, prob.eps0) {
                (Some(m), _) => m,
                (None, Some(eps0)) if robust => theorem2_batch(c, e, eps0, s.delta),
                (None, Some(eps0)) => theorem1_batch(c, e, eps0),
                (None, None) => 1,
            };
            let est = if robust { Estimator::Robust { delta: s.delta } } else { Estimator::NonRobust };
            let stages = s.stages.unwrap_or_else(|| stages_for_budget(2 * m1 as u64 * t as u64, budget));
            let rc = RmscgConfig::unchecked(e, t, m1, stages, est)?;
            let run = run_rmscg_with(spec, &w0, &rc, &opts, rng)?;
            Ok((run.trace, run.point))
        }
        SolverName::Rrosc => {
            let sched = rrosc_schedule(spec, s, prob.eps0, eta, budget)?;
            let ro = RoscOptions {
                split_batches: s.split_batches,
                allow_large_step: true,
                ..Default::default()
            };
            let run = run_rrosc_with(spec, &w0, &sched, s.delta, &ro, &opts, rng)?;
            Ok((run.trace, run.point))
        }
    }
}

/// Checkpoint rows: the start, each snapshot, and the solver output at the
/// final sample count.
fn trace_records(prob: &TrialProblem, trace: &RunTrace, output: &[f64]) -> Result<Vec<TraceRecord>> {
    let mut cum = Vec::with_capacity(trace.rows.len() + 1);
    cum.push((0u64, 0u64));
    for r in &trace.rows {
        let (y, z) = *cum.last().unwrap();
        cum.push((y + r.trunc_y as u64, z + r.trunc_z as u64));
    }
    let w0 = vec![0.0; prob.spec.dim()];
    let mut out = vec![prob.record(&w0, 0, 0, (0, 0))?];
    for s in &trace.snapshots {
        if out.last().is_some_and(|r| r.iter == s.iteration) {
            continue;
        }
        out.push(prob.record(&s.point, s.iteration, s.samples, cum[s.iteration as usize])?);
    }
    let n = trace.rows.len();
    let last = prob.record(output, n as u64, trace.samples(), cum[n])?;
    if out.len() > 1 && out.last().unwrap().samples == last.samples {
        out.pop();
    }
    if last.samples > 0 {
        out.push(last);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialResult {
    pub trial: usize,
    pub seed: u64,
    pub records: Vec<TraceRecord>,
    pub output: Vec<f64>,
    pub samples: u64,
    pub budget_exhausted: bool,
    pub validation_mse: Option<f64>,
    /// `(reg_weight, eta)` picked by model selection.
    pub selected: Option<(f64, Option<f64>)>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TrialOutcome {
    Done(TrialResult),
    Failed { trial: usize, seed: u64, error: String },
}

impl TrialOutcome {
    pub fn result(&self) -> Option<&TrialResult> {
        match self {
            TrialOutcome::Done(r) => Some(r),
            TrialOutcome::Failed { .. } => None,
        }
    }
}

fn run_trial(cfg: &ExperimentConfig, prepared: &Prepared, trial: usize) -> Result<TrialResult> {
    let seed = trial_seed(cfg.seed, trial);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let done = |prob: &TrialProblem, trace: RunTrace, output: Vec<f64>, selected| -> Result<TrialResult> {
        Ok(TrialResult {
            trial,
            seed,
            records: trace_records(prob, &trace, &output)?,
            validation_mse: prob.validation_mse(&output)?,
            samples: trace.samples(),
            budget_exhausted: trace.budget_exhausted,
            output,
            selected,
        })
    };
    match (prepared, &cfg.problem) {
        (Prepared::Synthetic(fixed), ProblemConfig::Synthetic(p)) => {
            let inst = match fixed {
                Some(i) => i.clone(),
                None => synthetic_instance(p, &mut rng)?,
            };
            let w0 = vec![0.0; p.d];
            let prob = TrialProblem {
                eps0: Some(inst.gap(&w0)),
                scorer: Scorer::Synthetic { f_star: inst.f_star },
                spec: inst.spec,
            };
            let (trace, out) = run_solver(cfg, &prob, cfg.solver.eta, &mut rng)?;
            done(&prob, trace, out, None)
        }
        (Prepared::Dro(d), ProblemConfig::Dro(p)) => {
            let (train, valid) = split_validation(&d.data, p.validation_fraction, &mut rng)?;
            let kinds: Vec<NoiseKind> = p.noise.iter().map(|n| n.0).collect();
            let sel = &cfg.selection;
            if !sel.enabled {
                let prob = dro_problem(p, &train, &valid, &d.test, &kinds, p.reg_weight, &mut rng)?;
                let (trace, out) = run_solver(cfg, &prob, cfg.solver.eta, &mut rng)?;
                return done(&prob, trace, out, None);
            }
            let regs = sel.reg_candidates(p.regularizer, p.reg_weight);
            let etas: Vec<Option<f64>> = sel.eta_candidates().into_iter().map(Some).collect();
            let mut best: Option<(f64, TrialResult)> = None;
            let mut last_err = None;
            for &reg in &regs {
                for &eta in &etas {
                    // every candidate sees the same random stream
                    let mut r = rng.clone();
                    let attempt = dro_problem(p, &train, &valid, &d.test, &kinds, reg, &mut r).and_then(|prob| {
                        let (trace, out) = run_solver(cfg, &prob, eta, &mut r)?;
                        done(&prob, trace, out, Some((reg, eta)))
                    });
                    match attempt {
                        Ok(res) => {
                            let score = res.validation_mse.filter(|v| v.is_finite()).unwrap_or(f64::INFINITY);
                            if best.as_ref().is_none_or(|(b, _)| score < *b) {
                                best = Some((score, res));
                            }
                        }
                        Err(e) => {
                            warn!("trial {trial}: reg_weight {reg} eta {eta:?} failed: {e}");
                            last_err = Some(e);
                        }
                    }
                }
            }
            best.map(|(_, r)| r)
                .ok_or_else(|| last_err.unwrap_or_else(|| HarnessError::Solver("no candidate finished".into())))
        }
        _ => unreachable!("prepared data matches the problem kind"),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub outcomes: Vec<TrialOutcome>,
    pub checkpoints: Vec<u64>,
    pub metric: Metric,
    pub aggregate: Vec<AggregateRow>,
}

impl ExperimentReport {
    pub fn completed(&self) -> Vec<&TrialResult> {
        self.outcomes.iter().filter_map(TrialOutcome::result).collect()
    }
}

/// Runs every trial (in parallel) and aggregates the completed ones. Data
/// errors abort; solver failures are recorded per trial.
pub fn run_trials(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let prepared = prepare(cfg)?;
    let outcomes: Vec<TrialOutcome> = (0..cfg.trials)
        .into_par_iter()
        .map(|t| match run_trial(cfg, &prepared, t) {
            Ok(r) => Ok(TrialOutcome::Done(r)),
            Err(HarnessError::Solver(e)) => Ok(TrialOutcome::Failed {
                trial: t,
                seed: trial_seed(cfg.seed, t),
                error: e,
            }),
            Err(e) => Err(e),
        })
        .collect::<Result<_>>()?;
    let traces: Vec<Vec<TraceRecord>> = outcomes.iter().filter_map(|o| o.result().map(|r| r.records.clone())).collect();
    if traces.is_empty() {
        let msg = outcomes
            .iter()
            .map(|o| match o {
                TrialOutcome::Failed { trial, error, .. } => format!("trial {trial}: {error}"),
                TrialOutcome::Done(_) => String::new(),
            })
            .collect::<Vec<_>>()
            .join("; ");
        return Err(HarnessError::Solver(format!("every trial failed: {msg}")));
    }
    if traces.len() < outcomes.len() {
        warn!("{} of {} trials failed; aggregating the rest", outcomes.len() - traces.len(), outcomes.len());
    }
    let metric = match cfg.problem {
        ProblemConfig::Synthetic(_) => Metric::Gap,
        ProblemConfig::Dro(_) => Metric::Mse,
    };
    let checkpoints = log_checkpoints(cfg.sample_budget, cfg.checkpoints);
    let aggregate = aggregate_trials(&traces, &checkpoints, metric);
    Ok(ExperimentReport {
        outcomes,
        checkpoints,
        metric,
        aggregate,
    })
}

pub fn manifest(cfg: &ExperimentConfig, report: &ExperimentReport) -> String {
    let mut s = String::new();
    let done = report.completed().len();
    let _ = writeln!(s, "version = {}", version_string());
    let _ = writeln!(s, "solver = {}", cfg.solver.name);
    let _ = writeln!(s, "metric = {}", if report.metric == Metric::Mse { "mse" } else { "gap" });
    let _ = writeln!(s, "trials = {} completed = {done}", report.outcomes.len());
    for o in &report.outcomes {
        match o {
            TrialOutcome::Done(r) => {
                let _ = write!(s, "trial {} seed {} ok samples {}", r.trial, r.seed, r.samples);
                if let Some(v) = r.validation_mse {
                    let _ = write!(s, " validation_mse {v}");
                }
                if let Some((reg, eta)) = r.selected {
                    let _ = write!(s, " reg_weight {reg}");
                    if let Some(e) = eta {
                        let _ = write!(s, " eta {e}");
                    }
                }
                let _ = writeln!(s);
            }
            TrialOutcome::Failed { trial, seed, error } => {
                let _ = writeln!(s, "trial {trial} seed {seed} failed: {error}");
            }
        }
    }
    let _ = writeln!(s, "\n[config]\n{}", cfg.to_toml());
    s
}

pub fn write_artifacts(cfg: &ExperimentConfig, report: &ExperimentReport) -> Result<()> {
    let dir = &cfg.output_dir;
    fs::create_dir_all(dir)?;
    for r in report.completed() {
        let f = fs::File::create(dir.join(format!("trace_trial{}.csv", r.trial)))?;
        write_trace(&r.records, BufWriter::new(f))?;
    }
    let f = fs::File::create(dir.join("aggregate.csv"))?;
    write_aggregate(&report.aggregate, BufWriter::new(f))?;
    fs::write(dir.join("manifest.txt"), manifest(cfg, report))?;
    Ok(())
}

/// Runs the experiment and writes `trace_trial{t}.csv`, `aggregate.csv` and
/// `manifest.txt` under the output directory.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    let report = run_trials(cfg)?;
    write_artifacts(cfg, &report)?;
    info!(
        "{} of {} trials completed; outputs in {}",
        report.completed().len(),
        report.outcomes.len(),
        Path::new(&cfg.output_dir).display()
    );
    Ok(report)
}
