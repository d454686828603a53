//! Stage schedules: radius recursions, stage lengths and the plateau rule.

use crate::error::{invalid, Error, Result};

/// Constants driving the theoretical multistage schedules.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TheoryConstants {
    /// Bound on the dual-norm gradient error.
    pub eps_bar: f64,
    /// Growth (minorization) constant.
    pub kappa: f64,
    /// Pseudo-linear growth offset, used by dual averaging.
    pub lambda_growth: f64,
    /// Lipschitz constant of the objective, used by dual averaging.
    pub lipschitz_m: f64,
    pub stages: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PlateauConfig {
    pub window: usize,
    pub rel_tol: f64,
    /// Share of the samples held out for monitoring.
    pub validation_fraction: f64,
    /// Trimming level of the monitored objective.
    pub alpha_obj: f64,
}

impl Default for PlateauConfig {
    fn default() -> Self {
        Self { window: 10, rel_tol: 1e-3, validation_fraction: 0.2, alpha_obj: 0.1 }
    }
}

impl PlateauConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window < 2 {
            return Err(Error::Config(format!("plateau window must be at least 2 (got {})", self.window)));
        }
        if !(self.rel_tol > 0.0) {
            return Err(Error::Config(format!("plateau tolerance must be positive (got {})", self.rel_tol)));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 0.5) {
            return Err(Error::Config(format!(
                "validation fraction must lie in (0, 1/2) (got {})",
                self.validation_fraction
            )));
        }
        if !(0.0..0.5).contains(&self.alpha_obj) {
            return Err(Error::Config(format!("objective trimming level must lie in [0, 1/2) (got {})", self.alpha_obj)));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum StageLength {
    Fixed(usize),
    /// Length of the first stage, run until the monitored objective plateaus
    /// (at most `max_len` steps), reused for every later stage.
    Plateau { config: PlateauConfig, max_len: usize },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PracticalSettings {
    /// Mirror descent step.
    pub beta: f64,
    /// Dual averaging step; `radius / 100` when absent.
    pub da_step: Option<f64>,
    pub stage_length: StageLength,
    /// Cap on the number of stages; whole stages within `max_iters` otherwise.
    pub stages: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ScheduleMode {
    /// Radii and stage lengths from the convergence analysis; `beta` is the
    /// mirror descent step (at most `1 / L`).
    Theoretical { constants: TheoryConstants, beta: f64 },
    Practical(PracticalSettings),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverSchedule {
    pub mode: ScheduleMode,
    /// Initial radius.
    pub radius: f64,
    /// Sparsity level used between stages.
    pub s_bar: usize,
    pub max_iters: usize,
}

impl SolverSchedule {
    pub fn practical(radius: f64, s_bar: usize, max_iters: usize, settings: PracticalSettings) -> Self {
        Self { mode: ScheduleMode::Practical(settings), radius, s_bar, max_iters }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64, what: &str| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!("{what} must be positive and finite (got {v})")))
            }
        };
        positive(self.radius, "radius")?;
        if self.s_bar < 1 {
            return Err(Error::Config("sparsity level must be at least 1".into()));
        }
        if self.max_iters < 1 {
            return Err(Error::Config("max_iters must be at least 1".into()));
        }
        match self.mode {
            ScheduleMode::Theoretical { constants, beta } => {
                positive(beta, "step size beta")?;
                positive(constants.eps_bar, "eps_bar")?;
                positive(constants.kappa, "kappa")?;
                if constants.stages < 1 {
                    return Err(Error::Config("number of stages must be at least 1".into()));
                }
            }
            ScheduleMode::Practical(p) => {
                positive(p.beta, "step size beta")?;
                if let Some(a) = p.da_step {
                    positive(a, "dual averaging step")?;
                }
                match p.stage_length {
                    StageLength::Fixed(t) if t < 1 => {
                        return Err(Error::Config("stage length must be at least 1".into()));
                    }
                    StageLength::Plateau { config, max_len } => {
                        config.validate()?;
                        if max_len < 2 * config.window {
                            return Err(Error::Config("plateau stage cap must be at least two windows".into()));
                        }
                    }
                    _ => {}
                }
                if p.stages == Some(0) {
                    return Err(Error::Config("number of stages must be at least 1".into()));
                }
            }
        }
        Ok(())
    }
}

/// Mirror descent stage length `ceil(nu R / (beta eps_bar))`.
pub fn ammd_stage_length(nu: f64, radius: f64, beta: f64, eps_bar: f64) -> Result<usize> {
    stage_count((nu * radius / (beta * eps_bar)).ceil())
}

/// Dual averaging stage length `ceil(((nu + M^2) / eps_bar)^2)`.
pub fn amda_stage_length(nu: f64, lipschitz_m: f64, eps_bar: f64) -> Result<usize> {
    stage_count(((nu + lipschitz_m * lipschitz_m) / eps_bar).powi(2).ceil())
}

fn stage_count(t: f64) -> Result<usize> {
    if !(t.is_finite() && t >= 1.0 && t < 1e15) {
        return Err(Error::Config(format!("stage length {t} is not a usable iteration count")));
    }
    Ok(t as usize)
}

/// Mirror descent radius limit `40 s_bar eps_bar / kappa`.
pub fn ammd_limit_radius(s_bar: usize, eps_bar: f64, kappa: f64) -> f64 {
    40.0 * s_bar as f64 * eps_bar / kappa
}

/// `R_0 .. R_stages` with `R_k = (R_{k-1} + limit) / 2`.
pub fn ammd_radii(r0: f64, limit: f64, stages: usize) -> Vec<f64> {
    let mut radii = Vec::with_capacity(stages + 1);
    radii.push(r0);
    for k in 0..stages {
        radii.push(0.5 * (radii[k] + limit));
    }
    radii
}

/// Contraction factor `10 sqrt(8 s_bar) eps_bar / kappa`; must be below 1.
pub fn amda_contraction(s_bar: usize, eps_bar: f64, kappa: f64) -> Result<f64> {
    let tau = 10.0 * (8.0 * s_bar as f64).sqrt() * eps_bar / kappa;
    if !(tau < 1.0) {
        return Err(Error::Config(format!("dual averaging contraction factor tau = {tau} is not below 1")));
    }
    Ok(tau)
}

/// Dual averaging radius limit `80 lambda s_bar eps_bar / kappa`.
pub fn amda_limit_radius(lambda_growth: f64, s_bar: usize, eps_bar: f64, kappa: f64) -> f64 {
    80.0 * lambda_growth * s_bar as f64 * eps_bar / kappa
}

/// `R_0 .. R_stages` with `R_k = max(tau R_{k-1}, (R_{k-1} + limit) / 2)`.
pub fn amda_radii(r0: f64, tau: f64, limit: f64, stages: usize) -> Vec<f64> {
    let mut radii = Vec::with_capacity(stages + 1);
    radii.push(r0);
    for k in 0..stages {
        radii.push((tau * radii[k]).max(0.5 * (radii[k] + limit)));
    }
    radii
}

/// True when the best value of the last `window` entries improves on the best
/// of the `window` entries before by less than `rel_tol * (1 + |best|)`.
pub fn plateau_detect(history: &[f64], window: usize, rel_tol: f64) -> bool {
    if window == 0 || history.len() < 2 * window {
        return false;
    }
    let n = history.len();
    let best = |s: &[f64]| s.iter().cloned().fold(f64::INFINITY, f64::min);
    let recent = best(&history[n - window..]);
    let before = best(&history[n - 2 * window..n - window]);
    before - recent < rel_tol * (1.0 + before.abs())
}

pub(crate) fn check_fraction(f: f64) -> Result<()> {
    if f > 0.0 && f < 0.5 {
        Ok(())
    } else {
        Err(invalid(format!("validation fraction must lie in (0, 1/2) (got {f})")))
    }
}
