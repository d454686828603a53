//! Multistage mirror descent (AMMD) and dual averaging (AMDA) drivers.
//!
//! Each stage runs a single-stage loop on a norm ball centred at the previous
//! stage output, then sparsifies the last iterate. Radii and stage lengths
//! follow either the theoretical recursions or the practical constant
//! schedule (see [`SolverSchedule`]).

pub mod schedule;
pub mod stages;

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use schedule::{
    amda_contraction, amda_limit_radius, amda_radii, amda_stage_length, ammd_limit_radius, ammd_radii,
    ammd_stage_length, plateau_detect, PlateauConfig, PracticalSettings, ScheduleMode, SolverSchedule, StageLength,
    TheoryConstants,
};
pub use stages::{da_stage, da_stage_with, md_stage, md_stage_with, Control, GradientOracle, RobustGradient};

use crate::datagen::split_batches;
use crate::error::{invalid, Error, Result};
use crate::estimators::Estimator;
use crate::geometry::{BallConstraint, Geometry};
use crate::model::{robust_objective_estimate, Problem};
use crate::Param;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Algorithm {
    Ammd,
    Amda,
}

impl Algorithm {
    pub fn name(&self) -> &'static str {
        match self {
            Algorithm::Ammd => "ammd",
            Algorithm::Amda => "amda",
        }
    }
}

impl std::str::FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ammd" => Ok(Algorithm::Ammd),
            "amda" => Ok(Algorithm::Amda),
            other => Err(Error::Config(format!("unknown algorithm '{other}' (expected ammd or amda)"))),
        }
    }
}

/// Metrics of one iterate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Metrics {
    /// `||theta - theta*||_F`, when the truth is known.
    pub l2_error: Option<f64>,
    /// Geometry norm of `theta - theta*`, when the truth is known.
    pub norm_error: Option<f64>,
    /// Trimmed mean of the per-sample losses.
    pub objective: f64,
}

pub fn metrics(
    geometry: &Geometry,
    theta: &Param,
    truth: Option<&Param>,
    problem: &Problem,
    alpha_obj: f64,
) -> Result<Metrics> {
    let (l2_error, norm_error) = match truth {
        Some(t) => {
            let diff = theta - t;
            (Some(diff.norm()), Some(geometry.norm(&diff)?))
        }
        None => (None, None),
    };
    Ok(Metrics { l2_error, norm_error, objective: robust_objective_estimate(problem, theta, alpha_obj)? })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceRecord {
    /// 0 for the starting point, `k >= 1` inside stage `k`.
    pub stage: usize,
    /// Global iteration count.
    pub iter: usize,
    pub elapsed_ms: f64,
    pub metrics: Metrics,
}

/// Recorded iterates of a run. The last record of each stage holds the
/// sparsified stage output.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunTrace {
    pub records: Vec<TraceRecord>,
    /// Radius used by each stage.
    pub radii: Vec<f64>,
    /// Steps taken by each stage.
    pub stage_lengths: Vec<usize>,
}

impl RunTrace {
    /// Records closing each stage (the sparsified outputs), in order.
    pub fn stage_outputs(&self) -> Vec<&TraceRecord> {
        let mut out = Vec::new();
        for (i, r) in self.records.iter().enumerate() {
            let last = self.records.get(i + 1).map_or(true, |next| next.stage != r.stage);
            if r.stage > 0 && last {
                out.push(r);
            }
        }
        out
    }
}

#[derive(Clone, Debug)]
pub struct FitResult {
    pub theta: Param,
    pub trace: RunTrace,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunOptions {
    /// Starting point; zero when absent.
    pub theta0: Option<Param>,
    pub truth: Option<Param>,
    /// Share of samples (last after a seeded shuffle) used for monitoring.
    pub validation_fraction: f64,
    /// Exclude the validation samples from gradient estimation.
    pub holdout: bool,
    /// Split the training samples into this many batches, one per stage
    /// (cycled when there are more stages than batches).
    pub split_batches: Option<usize>,
    /// Trimming level of the monitored objective.
    pub alpha_obj: f64,
    /// Record every this many iterations (stage ends are always recorded).
    pub record_every: usize,
    pub seed: u64,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            theta0: None,
            truth: None,
            validation_fraction: 0.2,
            holdout: false,
            split_batches: None,
            alpha_obj: 0.1,
            record_every: 1,
            seed: 0,
        }
    }
}

pub fn ammd(
    problem: &Problem,
    geometry: &Geometry,
    estimator: Estimator,
    schedule: &SolverSchedule,
    options: &RunOptions,
) -> Result<FitResult> {
    fit(Algorithm::Ammd, problem, geometry, estimator, schedule, options)
}

pub fn amda(
    problem: &Problem,
    geometry: &Geometry,
    estimator: Estimator,
    schedule: &SolverSchedule,
    options: &RunOptions,
) -> Result<FitResult> {
    fit(Algorithm::Amda, problem, geometry, estimator, schedule, options)
}

/// Stage plan: radius and step count of each stage, or a plateau-sized first
/// stage to be measured.
struct Plan {
    radii: Vec<f64>,
    lengths: Vec<usize>,
    da_steps: Vec<f64>,
}

fn plan(algo: Algorithm, geometry: &Geometry, schedule: &SolverSchedule) -> Result<Plan> {
    let nu = geometry.constants().nu;
    match schedule.mode {
        ScheduleMode::Theoretical { constants, beta } => {
            let k = constants.stages;
            let all = match algo {
                Algorithm::Ammd => {
                    let limit = ammd_limit_radius(schedule.s_bar, constants.eps_bar, constants.kappa);
                    ammd_radii(schedule.radius, limit, k)
                }
                Algorithm::Amda => {
                    let tau = amda_contraction(schedule.s_bar, constants.eps_bar, constants.kappa)?;
                    let limit =
                        amda_limit_radius(constants.lambda_growth, schedule.s_bar, constants.eps_bar, constants.kappa);
                    amda_radii(schedule.radius, tau, limit, k)
                }
            };
            let radii = all[..k].to_vec();
            let mut lengths = Vec::with_capacity(k);
            let mut budget = schedule.max_iters;
            for &r in &radii {
                if budget == 0 {
                    break;
                }
                let t = match algo {
                    Algorithm::Ammd => ammd_stage_length(nu, r, beta, constants.eps_bar)?,
                    Algorithm::Amda => amda_stage_length(nu, constants.lipschitz_m, constants.eps_bar)?,
                };
                let t = t.min(budget);
                budget -= t;
                lengths.push(t);
            }
            let radii = radii[..lengths.len()].to_vec();
            let da_steps = radii.clone();
            Ok(Plan { radii, lengths, da_steps })
        }
        ScheduleMode::Practical(p) => {
            let cap = p.stages.unwrap_or(usize::MAX);
            let a = p.da_step.unwrap_or(schedule.radius / 100.0);
            let lengths = match p.stage_length {
                StageLength::Fixed(t) => {
                    let t = t.min(schedule.max_iters);
                    vec![t; (schedule.max_iters / t).min(cap).max(1)]
                }
                // Measured while running the first stage.
                StageLength::Plateau { .. } => Vec::new(),
            };
            let k = lengths.len().max(1);
            Ok(Plan { radii: vec![schedule.radius; k], lengths, da_steps: vec![a; k] })
        }
    }
}

/// Runs AMMD or AMDA.
pub fn fit(
    algo: Algorithm,
    problem: &Problem,
    geometry: &Geometry,
    estimator: Estimator,
    schedule: &SolverSchedule,
    options: &RunOptions,
) -> Result<FitResult> {
    let mut trace = RunTrace::default();
    let theta = fit_traced(algo, problem, geometry, estimator, schedule, options, &mut trace)?;
    Ok(FitResult { theta, trace })
}

/// [`fit`] recording into `trace` as it goes, so that the records made before
/// a failure are kept.
pub fn fit_traced(
    algo: Algorithm,
    problem: &Problem,
    geometry: &Geometry,
    estimator: Estimator,
    schedule: &SolverSchedule,
    options: &RunOptions,
    trace: &mut RunTrace,
) -> Result<Param> {
    schedule.validate()?;
    if geometry.shape() != problem.shape() {
        let (r, c) = geometry.shape();
        return Err(Error::DimensionMismatch { expected: r * c, got: problem.shape().0 * problem.shape().1 });
    }
    if schedule.s_bar > geometry.capacity() {
        return Err(Error::Config(format!(
            "sparsity level {} exceeds the geometry capacity {}",
            schedule.s_bar,
            geometry.capacity()
        )));
    }
    schedule::check_fraction(options.validation_fraction)?;
    if !(0.0..0.5).contains(&options.alpha_obj) {
        return Err(invalid(format!("objective trimming level must lie in [0, 1/2) (got {})", options.alpha_obj)));
    }
    if options.record_every < 1 {
        return Err(invalid("record_every must be at least 1"));
    }
    let theta0 = options.theta0.clone().unwrap_or_else(|| problem.zeros());
    geometry.check_param(&theta0)?;
    if let Some(t) = &options.truth {
        geometry.check_param(t)?;
    }

    let n = problem.n();
    let n_val = ((options.validation_fraction * n as f64).ceil() as usize).max(2);
    if n_val >= n {
        return Err(invalid(format!("{n} samples are too few for a validation subset of {n_val}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(options.seed));
    let validation = problem.restrict(&order[n - n_val..]);
    let train_rows: Vec<usize> = if options.holdout {
        let mut rows = order[..n - n_val].to_vec();
        rows.sort_unstable();
        rows
    } else {
        (0..n).collect()
    };
    let batches: Vec<Problem> = match options.split_batches {
        Some(b) => split_batches(train_rows.len(), b, options.seed ^ 0x5bd1_e995)?
            .into_iter()
            .map(|batch| {
                let mut rows: Vec<usize> = batch.into_iter().map(|i| train_rows[i]).collect();
                rows.sort_unstable();
                problem.restrict(&rows)
            })
            .collect(),
        None if options.holdout => vec![problem.restrict(&train_rows)],
        None => vec![problem.clone()],
    };
    for b in &batches {
        estimator.spec.validate(b.n())?;
    }

    let mut plan = plan(algo, geometry, schedule)?;
    let plateau = match schedule.mode {
        ScheduleMode::Practical(PracticalSettings { stage_length: StageLength::Plateau { config, max_len }, .. }) => {
            Some((config, max_len.min(schedule.max_iters)))
        }
        _ => None,
    };
    let beta = match schedule.mode {
        ScheduleMode::Theoretical { beta, .. } => beta,
        ScheduleMode::Practical(p) => p.beta,
    };

    let start = Instant::now();
    let truth = options.truth.as_ref();
    let record = |stage: usize, iter: usize, theta: &Param| -> Result<TraceRecord> {
        Ok(TraceRecord {
            stage,
            iter,
            elapsed_ms: start.elapsed().as_secs_f64() * 1e3,
            metrics: metrics(geometry, theta, truth, &validation, options.alpha_obj)?,
        })
    };

    trace.records.push(record(0, 0, &theta0)?);
    let mut theta = theta0;
    let mut global = 0usize;
    let mut k = 0usize;
    loop {
        let (radius, max_steps) = match (plateau, k) {
            (Some((_, cap)), 0) => (plan.radii[0], cap),
            _ => match plan.lengths.get(k) {
                Some(&t) => (plan.radii[k], t),
                None => break,
            },
        };
        let ball = BallConstraint::new(theta.clone(), radius)?;
        let data = &batches[k % batches.len()];
        let base = RobustGradient::new(data, estimator);
        let offset = global;
        let mut oracle = |th: &Param, t: usize| {
            let mut inner = RobustGradient { problem: base.problem, estimator: base.estimator };
            inner.gradient(th, offset + t)
        };

        let stage = k + 1;
        let mut history = Vec::new();
        let records = &mut trace.records;
        let mut observe = |t: usize, th: &Param| -> Result<Control> {
            let due = t % options.record_every == 0 && t < max_steps;
            let mut stop = false;
            if let Some((cfg, _)) = plateau.filter(|_| k == 0) {
                let m = record(stage, offset + t, th)?;
                history.push(m.metrics.objective);
                stop = plateau_detect(&history, cfg.window, cfg.rel_tol);
                if due && !stop {
                    records.push(m);
                }
            } else if due {
                records.push(record(stage, offset + t, th)?);
            }
            Ok(if stop { Control::Stop } else { Control::Continue })
        };
        let (last, taken) = match algo {
            Algorithm::Ammd => md_stage_with(geometry, &mut oracle, &ball, beta, max_steps, &mut observe)?,
            Algorithm::Amda => {
                let a = plan.da_steps[k.min(plan.da_steps.len() - 1)];
                da_stage_with(geometry, &mut oracle, &ball, |_| a, max_steps, &mut observe)?
            }
        };
        global += taken;
        theta = geometry.sparsify(&last, schedule.s_bar)?;
        trace.records.push(record(stage, global, &theta)?);
        trace.radii.push(radius);
        trace.stage_lengths.push(taken);

        if plateau.is_some() && k == 0 {
            let cap = match schedule.mode {
                ScheduleMode::Practical(p) => p.stages.unwrap_or(usize::MAX),
                _ => usize::MAX,
            };
            let stages = (schedule.max_iters / taken).min(cap).max(1);
            plan.lengths = vec![taken; stages];
            plan.radii = vec![radius; stages];
            plan.da_steps = vec![plan.da_steps[0]; stages];
        }
        k += 1;
    }
    Ok(theta)
}
