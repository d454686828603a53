//! Single-stage mirror descent and dual averaging loops.

use crate::error::{invalid, Error, Result};
use crate::estimators::Estimator;
use crate::geometry::{BallConstraint, Geometry};
use crate::model::{gradient_samples, Problem};
use crate::Param;

/// Source of (possibly inexact) gradients.
pub trait GradientOracle {
    /// Gradient estimate at `theta`; `step` counts calls within a run.
    fn gradient(&mut self, theta: &Param, step: usize) -> Result<Param>;
}

impl<F> GradientOracle for F
where
    F: FnMut(&Param, usize) -> Result<Param>,
{
    fn gradient(&mut self, theta: &Param, step: usize) -> Result<Param> {
        self(theta, step)
    }
}

/// Robust gradient of the empirical loss: per-sample gradients reduced by an
/// [`Estimator`]. Block shuffles are reseeded at each step.
pub struct RobustGradient<'a> {
    pub problem: &'a Problem,
    pub estimator: Estimator,
}

impl<'a> RobustGradient<'a> {
    pub fn new(problem: &'a Problem, estimator: Estimator) -> Self {
        Self { problem, estimator }
    }
}

impl GradientOracle for RobustGradient<'_> {
    fn gradient(&mut self, theta: &Param, step: usize) -> Result<Param> {
        let samples = gradient_samples(self.problem, theta)?;
        let seed = self.estimator.seed.wrapping_add((step as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
        Estimator::new(self.estimator.spec, seed).estimate(&samples)
    }
}

/// Whether a stage keeps iterating after an observed iterate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Control {
    Continue,
    Stop,
}

fn checked(g: Param, theta: &Param, step: usize) -> Result<Param> {
    if g.shape() != theta.shape() {
        return Err(Error::DimensionMismatch { expected: theta.len(), got: g.len() });
    }
    if let Some(k) = g.iter().position(|v| !v.is_finite()) {
        return Err(Error::Numerical(format!(
            "gradient estimate at step {step} has non-finite entry {} at index {k} (iterate norm {:.3e})",
            g[k],
            theta.norm()
        )));
    }
    Ok(g)
}

fn check_start(geometry: &Geometry, ball: &BallConstraint, steps: usize) -> Result<()> {
    geometry.check_param(&ball.center)?;
    if steps < 1 {
        return Err(invalid("a stage needs at least one step"));
    }
    Ok(())
}

/// Mirror descent over `ball` started at its center. `observe` sees every
/// iterate `(t, theta_t)` from `t = 1` and may stop the stage early. Returns
/// the last iterate and the number of steps taken.
pub fn md_stage_with<O, F>(
    geometry: &Geometry,
    oracle: &mut O,
    ball: &BallConstraint,
    beta: f64,
    steps: usize,
    mut observe: F,
) -> Result<(Param, usize)>
where
    O: GradientOracle + ?Sized,
    F: FnMut(usize, &Param) -> Result<Control>,
{
    check_start(geometry, ball, steps)?;
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(invalid(format!("step size must be positive (got {beta})")));
    }
    let mut theta = ball.center.clone();
    for t in 0..steps {
        let g = checked(oracle.gradient(&theta, t)?, &theta, t)?;
        let (_, grad_omega) = geometry.dgf_value_grad(&(&theta - &ball.center))?;
        let w = g * beta - grad_omega;
        theta = geometry.prox_ball(&w, ball)?;
        if observe(t + 1, &theta)? == Control::Stop {
            return Ok((theta, t + 1));
        }
    }
    Ok((theta, steps))
}

/// All iterates `theta_0 ..= theta_steps` of a mirror descent stage.
pub fn md_stage<O: GradientOracle + ?Sized>(
    geometry: &Geometry,
    oracle: &mut O,
    ball: &BallConstraint,
    beta: f64,
    steps: usize,
) -> Result<Vec<Param>> {
    let mut iterates = vec![ball.center.clone()];
    md_stage_with(geometry, oracle, ball, beta, steps, |_, theta| {
        iterates.push(theta.clone());
        Ok(Control::Continue)
    })?;
    Ok(iterates)
}

/// Dual averaging over `ball` started at its center with steps `a_t` and
/// scaling `gamma_t = sqrt(t + 1)`.
pub fn da_stage_with<O, A, F>(
    geometry: &Geometry,
    oracle: &mut O,
    ball: &BallConstraint,
    mut step_size: A,
    steps: usize,
    mut observe: F,
) -> Result<(Param, usize)>
where
    O: GradientOracle + ?Sized,
    A: FnMut(usize) -> f64,
    F: FnMut(usize, &Param) -> Result<Control>,
{
    check_start(geometry, ball, steps)?;
    let step = |a: f64, t: usize| {
        if a > 0.0 && a.is_finite() {
            Ok(a)
        } else {
            Err(invalid(format!("dual averaging step a_{t} must be positive (got {a})")))
        }
    };
    let mut theta = ball.center.clone();
    // Weighted gradient sum A_t s_t and running weight A_t.
    let mut weighted = Param::zeros(theta.nrows(), theta.ncols());
    let mut a_next = step(step_size(0), 0)?;
    let mut total = 0.0;
    for t in 0..steps {
        let a = a_next;
        let g = checked(oracle.gradient(&theta, t)?, &theta, t)?;
        weighted += g * a;
        total += a;
        let gamma = ((t + 1) as f64).sqrt();
        let plus = geometry.prox_ball(&(&weighted / gamma), ball)?;
        a_next = step(step_size(t + 1), t + 1)?;
        let tau = a_next / (total + a_next);
        theta = &theta * (1.0 - tau) + plus * tau;
        if observe(t + 1, &theta)? == Control::Stop {
            return Ok((theta, t + 1));
        }
    }
    Ok((theta, steps))
}

/// All iterates of a dual averaging stage with constant step `a`.
pub fn da_stage<O: GradientOracle + ?Sized>(
    geometry: &Geometry,
    oracle: &mut O,
    ball: &BallConstraint,
    a: f64,
    steps: usize,
) -> Result<Vec<Param>> {
    let mut iterates = vec![ball.center.clone()];
    da_stage_with(geometry, oracle, ball, |_| a, steps, |_, theta| {
        iterates.push(theta.clone());
        Ok(Control::Continue)
    })?;
    Ok(iterates)
}
