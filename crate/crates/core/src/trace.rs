//! Per-iteration run records shared by all solvers.

use crate::error::Result;
use crate::linalg;
use crate::problem::ProblemSpec;

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    /// Global iteration index, counted from 1 across restart stages.
    pub iteration: u64,
    /// Oracle draws consumed so far, reference batches included.
    pub samples: u64,
    pub objective: Option<f64>,
    pub gap: Option<f64>,
    pub trunc_y: bool,
    pub trunc_z: bool,
    /// Restart stage, counted from 1. Always 1 for single-stage runs.
    pub stage: usize,
}

/// Iterate captured when the sample count first reaches a checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub checkpoint: u64,
    pub iteration: u64,
    pub samples: u64,
    pub point: Vec<f64>,
}

/// Sums `A` and `B` of the one-stage error decomposition, recorded when `g`
/// and `∇g` are analytic and the optimum is known.
///
/// `A = Σ ‖∇F_s(w_t) − ĝ_t‖²` and `B = Σ ⟨∇F_s(w_t) − ĝ_t, w_t − w*⟩` where
/// `ĝ_t = zᵀ∇f(y)` is the step direction and `∇F_s` the exact smooth gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorDecomposition {
    pub stage: usize,
    pub eta: f64,
    pub iterations: usize,
    pub initial_dist_sq: f64,
    pub a: f64,
    pub b: f64,
    /// `Σ_{t=1..T} (F(w_t) − F*)`.
    pub gap_sum: f64,
}

impl ErrorDecomposition {
    /// Mean gap of `w_1..w_T`.
    pub fn lhs(&self) -> f64 {
        self.gap_sum / self.iterations as f64
    }

    /// `‖w_0 − w*‖² / (2ηT) + ηA/T + B/T`.
    pub fn rhs(&self) -> f64 {
        let t = self.iterations as f64;
        self.initial_dist_sq / (2.0 * self.eta * t) + self.eta * self.a / t + self.b / t
    }
}

/// Per-stage audit of the reference-truncation bounds.
///
/// The premise is that the stage references are within `ν σ / √m` of the
/// exact values at the anchor; the bound is checked at every iteration.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TruncationCheck {
    pub stage: usize,
    pub premise_y: bool,
    pub premise_z: bool,
    pub ref_error_y: f64,
    pub ref_error_z: f64,
    pub checked: usize,
    pub violations_y: usize,
    pub violations_z: usize,
    /// Largest `‖ŷ − g(w_t)‖ / bound` seen in the stage.
    pub worst_ratio_y: f64,
    pub worst_ratio_z: f64,
}

impl TruncationCheck {
    pub fn premise(&self) -> bool {
        self.premise_y && self.premise_z
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Diagnostics {
    pub decompositions: Vec<ErrorDecomposition>,
    pub truncation: Vec<TruncationCheck>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunTrace {
    pub rows: Vec<TraceRow>,
    pub final_point: Vec<f64>,
    pub averaged_point: Vec<f64>,
    pub snapshots: Vec<Snapshot>,
    pub diagnostics: Diagnostics,
    /// Set when the run stopped early on the sample budget.
    pub budget_exhausted: bool,
}

impl RunTrace {
    pub fn samples(&self) -> u64 {
        self.rows.last().map_or(0, |r| r.samples)
    }

    pub fn iterations(&self) -> usize {
        self.rows.len()
    }

    pub fn truncations(&self) -> (usize, usize) {
        self.rows.iter().fold((0, 0), |(y, z), r| {
            (y + r.trunc_y as usize, z + r.trunc_z as usize)
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ObjectiveEval {
    #[default]
    EveryIteration,
    Every(u64),
    Never,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunOptions {
    pub objective: ObjectiveEval,
    /// Sample counts at which to capture the current iterate.
    pub snapshots: Vec<u64>,
    /// Never start an iteration (or reference batch) that would draw more
    /// than this many samples in total.
    pub sample_budget: Option<u64>,
}

/// Output of one restart stage.
#[derive(Debug, Clone, PartialEq)]
pub struct StageOutcome {
    pub stage: usize,
    /// Averaged point the next stage starts from.
    pub point: Vec<f64>,
    pub iterations: usize,
    pub samples: u64,
    pub objective: Option<f64>,
    pub gap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RestartRun {
    pub point: Vec<f64>,
    pub stages: Vec<StageOutcome>,
    pub trace: RunTrace,
}

/// Accumulates rows and snapshots across one or more stages.
pub(crate) struct Recorder<'a> {
    spec: &'a ProblemSpec,
    opts: &'a RunOptions,
    trace: RunTrace,
    iteration: u64,
    samples: u64,
    stage: usize,
    next_snapshot: usize,
    checkpoints: Vec<u64>,
}

impl<'a> Recorder<'a> {
    pub fn new(spec: &'a ProblemSpec, opts: &'a RunOptions) -> Self {
        let mut checkpoints = opts.snapshots.clone();
        checkpoints.sort_unstable();
        checkpoints.dedup();
        Self {
            spec,
            opts,
            trace: RunTrace::default(),
            iteration: 0,
            samples: 0,
            stage: 1,
            next_snapshot: 0,
            checkpoints,
        }
    }

    pub fn set_stage(&mut self, stage: usize) {
        self.stage = stage;
    }

    pub fn iterations(&self) -> u64 {
        self.iteration
    }

    /// True when drawing `cost` more samples stays within the budget.
    /// Once false, the run is marked as stopped on the budget.
    pub fn affords(&mut self, cost: u64) -> bool {
        let ok = self.opts.sample_budget.is_none_or(|b| self.samples + cost <= b);
        self.trace.budget_exhausted |= !ok;
        ok
    }

    /// Samples drawn outside an iteration, such as a reference batch.
    pub fn add_samples(&mut self, n: u64) {
        self.samples += n;
    }

    fn wants_objective(&self) -> bool {
        match self.opts.objective {
            ObjectiveEval::EveryIteration => true,
            ObjectiveEval::Every(n) => n > 0 && self.iteration.is_multiple_of(n),
            ObjectiveEval::Never => false,
        }
    }

    /// Records one completed iteration ending at `point`.
    pub fn iteration(
        &mut self,
        point: &[f64],
        samples: u64,
        trunc_y: bool,
        trunc_z: bool,
    ) -> Result<()> {
        self.iteration += 1;
        self.samples += samples;
        let objective = if self.wants_objective() {
            Some(self.spec.trace_objective(point)?)
        } else {
            None
        };
        let gap = objective.and_then(|f| self.spec.gap(f));
        self.trace.rows.push(TraceRow {
            iteration: self.iteration,
            samples: self.samples,
            objective,
            gap,
            trunc_y,
            trunc_z,
            stage: self.stage,
        });
        while let Some(&c) = self.checkpoints.get(self.next_snapshot) {
            if c > self.samples {
                break;
            }
            self.trace.snapshots.push(Snapshot {
                checkpoint: c,
                iteration: self.iteration,
                samples: self.samples,
                point: point.to_vec(),
            });
            self.next_snapshot += 1;
        }
        Ok(())
    }

    pub fn decomposition(&mut self, d: ErrorDecomposition) {
        self.trace.diagnostics.decompositions.push(d);
    }

    pub fn truncation_check(&mut self, c: TruncationCheck) {
        self.trace.diagnostics.truncation.push(c);
    }

    pub fn stage_outcome(&self, point: Vec<f64>, iterations: usize) -> Result<StageOutcome> {
        let objective = match self.opts.objective {
            ObjectiveEval::Never => None,
            _ => Some(self.spec.trace_objective(&point)?),
        };
        Ok(StageOutcome {
            stage: self.stage,
            gap: objective.and_then(|f| self.spec.gap(f)),
            objective,
            point,
            iterations,
            samples: self.samples,
        })
    }

    pub fn finish(mut self, final_point: Vec<f64>, averaged_point: Vec<f64>) -> RunTrace {
        self.trace.final_point = final_point;
        self.trace.averaged_point = averaged_point;
        self.trace
    }
}

/// Running uniform average of iterates.
pub(crate) struct Average {
    sum: Vec<f64>,
    count: usize,
}

impl Average {
    pub fn new(dim: usize) -> Self {
        Self {
            sum: vec![0.0; dim],
            count: 0,
        }
    }

    pub fn push(&mut self, w: &[f64]) {
        linalg::axpy(1.0, w, &mut self.sum);
        self.count += 1;
    }

    pub fn count(&self) -> usize {
        self.count
    }

    /// Mean of the pushed points, or `fallback` when none were pushed.
    pub fn mean_or(&self, fallback: &[f64]) -> Vec<f64> {
        if self.count == 0 {
            return fallback.to_vec();
        }
        let mut m = self.sum.clone();
        linalg::scale(&mut m, 1.0 / self.count as f64);
        m
    }
}
