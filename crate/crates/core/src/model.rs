//! Losses, per-sample gradients and the robust objective used for monitoring.

use nalgebra::{DMatrix, DVector};

use crate::datagen::Dataset;
use crate::error::{check_finite, invalid, Error, Result};
use crate::estimators::trimmed::trimmed_mean;
use crate::Param;

pub const DEFAULT_HUBER_DELTA: f64 = 1.35;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LossKind {
    LeastSquares,
    Logistic,
    Huber { delta: f64 },
    Hinge,
    Absolute,
}

/// Regularity of `z -> loss(z, y)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Smoothness {
    /// Derivative is `gamma`-Lipschitz.
    GradientLipschitz(f64),
    /// Loss itself is `m_z`-Lipschitz.
    LipschitzOnly(f64),
}

/// Growth constants: `|loss(z, y)| <= c1 + c2 |z - y|^2`-type and
/// `|loss'(z, y)| <= c1_prime + c2_prime |z - y|`. Stored for reference only.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GrowthConstants {
    pub c1: f64,
    pub c2: f64,
    pub c1_prime: f64,
    pub c2_prime: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossModel {
    pub kind: LossKind,
}

impl LossModel {
    pub fn new(kind: LossKind) -> Result<Self> {
        if let LossKind::Huber { delta } = kind {
            if !(delta > 0.0 && delta.is_finite()) {
                return Err(invalid(format!("huber delta must be positive (got {delta})")));
            }
        }
        Ok(Self { kind })
    }

    pub fn least_squares() -> Self {
        Self { kind: LossKind::LeastSquares }
    }

    pub fn logistic() -> Self {
        Self { kind: LossKind::Logistic }
    }

    pub fn huber() -> Self {
        Self { kind: LossKind::Huber { delta: DEFAULT_HUBER_DELTA } }
    }

    pub fn hinge() -> Self {
        Self { kind: LossKind::Hinge }
    }

    pub fn absolute() -> Self {
        Self { kind: LossKind::Absolute }
    }

    pub fn smoothness(&self) -> Smoothness {
        match self.kind {
            LossKind::LeastSquares => Smoothness::GradientLipschitz(1.0),
            LossKind::Logistic => Smoothness::GradientLipschitz(0.25),
            LossKind::Huber { .. } => Smoothness::GradientLipschitz(1.0),
            LossKind::Hinge | LossKind::Absolute => Smoothness::LipschitzOnly(1.0),
        }
    }

    pub fn growth_constants(&self) -> GrowthConstants {
        let (c1, c2, c1_prime, c2_prime) = match self.kind {
            LossKind::LeastSquares => (1.0, 0.5, 1.0, 1.0),
            LossKind::Logistic => (2.0, 1.0, 1.0, 1.0),
            LossKind::Huber { .. } => (1.0, 0.5, 1.0, 1.0),
            LossKind::Hinge => (3.0, 1.0, 1.0, 1.0),
            LossKind::Absolute => (1.0, 1.0, 1.0, 1.0),
        };
        GrowthConstants { c1, c2, c1_prime, c2_prime }
    }

    /// Whether labels must be `-1` or `+1`.
    pub fn is_classification(&self) -> bool {
        matches!(self.kind, LossKind::Logistic | LossKind::Hinge)
    }

    fn check(&self, z: f64, y: f64) -> Result<()> {
        check_finite(z, "prediction")?;
        check_finite(y, "label")?;
        if self.is_classification() && y != 1.0 && y != -1.0 {
            return Err(invalid(format!("label {y} must be -1 or +1 for a classification loss")));
        }
        Ok(())
    }
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn value_unchecked(kind: LossKind, z: f64, y: f64) -> f64 {
    match kind {
        LossKind::LeastSquares => 0.5 * (z - y) * (z - y),
        LossKind::Logistic => softplus(-z * y),
        LossKind::Huber { delta } => {
            let r = (z - y).abs();
            if r <= delta {
                0.5 * r * r
            } else {
                delta * (r - 0.5 * delta)
            }
        }
        LossKind::Hinge => (1.0 - z * y).max(0.0),
        LossKind::Absolute => (z - y).abs(),
    }
}

fn derivative_unchecked(kind: LossKind, z: f64, y: f64) -> f64 {
    match kind {
        LossKind::LeastSquares => z - y,
        LossKind::Logistic => -y / (1.0 + (z * y).exp()),
        LossKind::Huber { delta } => (z - y).clamp(-delta, delta),
        LossKind::Hinge => {
            if z * y < 1.0 {
                -y
            } else {
                0.0
            }
        }
        LossKind::Absolute => {
            if z > y {
                1.0
            } else if z < y {
                -1.0
            } else {
                0.0
            }
        }
    }
}

/// `loss(z, y)` for prediction `z` and label `y`.
pub fn loss_value(loss: &LossModel, z: f64, y: f64) -> Result<f64> {
    loss.check(z, y)?;
    Ok(value_unchecked(loss.kind, z, y))
}

/// Derivative in `z`. Kinks use a fixed subgradient: 0 for hinge at margin 1
/// and for absolute at `z = y`.
pub fn loss_derivative(loss: &LossModel, z: f64, y: f64) -> Result<f64> {
    loss.check(z, y)?;
    Ok(derivative_unchecked(loss.kind, z, y))
}

/// A loss over a dataset whose covariates are flattened `shape`-parameters.
#[derive(Clone, Debug)]
pub struct Problem {
    pub loss: LossModel,
    pub dataset: Dataset,
    shape: (usize, usize),
}

impl Problem {
    pub fn new(loss: LossModel, dataset: Dataset, shape: (usize, usize)) -> Result<Self> {
        if shape.0 * shape.1 != dataset.dim() {
            return Err(Error::DimensionMismatch { expected: shape.0 * shape.1, got: dataset.dim() });
        }
        if loss.is_classification() && dataset.y.iter().any(|&y| y != 1.0 && y != -1.0) {
            return Err(invalid("classification loss requires labels in {-1, +1}"));
        }
        Ok(Self { loss, dataset, shape })
    }

    pub fn shape(&self) -> (usize, usize) {
        self.shape
    }

    pub fn n(&self) -> usize {
        self.dataset.n()
    }

    pub fn zeros(&self) -> Param {
        Param::zeros(self.shape.0, self.shape.1)
    }

    /// Same loss and shape on a subset of the samples.
    pub fn restrict(&self, rows: &[usize]) -> Problem {
        Problem { loss: self.loss, dataset: self.dataset.subset(rows), shape: self.shape }
    }

    fn check_param(&self, theta: &Param) -> Result<()> {
        if theta.shape() != self.shape {
            return Err(Error::DimensionMismatch { expected: self.shape.0 * self.shape.1, got: theta.len() });
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("parameter has non-finite entries".into()));
        }
        Ok(())
    }

    /// Predictions `<theta, x_i>` for every sample.
    pub fn predictions(&self, theta: &Param) -> Result<DVector<f64>> {
        self.check_param(theta)?;
        let flat = DVector::from_column_slice(theta.as_slice());
        Ok(&self.dataset.x * flat)
    }

    pub fn sample_losses(&self, theta: &Param) -> Result<Vec<f64>> {
        let z = self.predictions(theta)?;
        let kind = self.loss.kind;
        Ok(z.iter().zip(self.dataset.y.iter()).map(|(&z, &y)| value_unchecked(kind, z, y)).collect())
    }

    /// Plain empirical risk.
    pub fn mean_loss(&self, theta: &Param) -> Result<f64> {
        let losses = self.sample_losses(theta)?;
        if losses.is_empty() {
            return Err(invalid("empty dataset"));
        }
        Ok(losses.iter().sum::<f64>() / losses.len() as f64)
    }
}

/// Per-sample gradients stored as an `n x dim` matrix; coordinate `j` of the
/// flattened parameter is column `j`.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientSamples {
    data: DMatrix<f64>,
    shape: (usize, usize),
}

impl GradientSamples {
    pub fn new(data: DMatrix<f64>, shape: (usize, usize)) -> Result<Self> {
        if shape.0 * shape.1 != data.ncols() {
            return Err(Error::DimensionMismatch { expected: shape.0 * shape.1, got: data.ncols() });
        }
        Ok(Self { data, shape })
    }

    pub fn n(&self) -> usize {
        self.data.nrows()
    }

    pub fn dim(&self) -> usize {
        self.data.ncols()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.shape
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    /// All samples' values of flattened coordinate `j`.
    pub fn coordinate(&self, j: usize) -> &[f64] {
        let n = self.n();
        &self.data.as_slice()[j * n..(j + 1) * n]
    }

    /// Sample `i` reshaped to the parameter shape.
    pub fn sample(&self, i: usize) -> Param {
        Param::from_iterator(self.shape.0, self.shape.1, self.data.row(i).iter().copied())
    }

    pub fn reshape(&self, values: Vec<f64>) -> Param {
        Param::from_vec(self.shape.0, self.shape.1, values)
    }

    pub fn mean(&self) -> Result<Param> {
        if self.n() == 0 {
            return Err(invalid("no gradient samples"));
        }
        self.check_finite()?;
        let n = self.n() as f64;
        Ok(self.reshape((0..self.dim()).map(|j| self.coordinate(j).iter().sum::<f64>() / n).collect()))
    }

    pub fn check_finite(&self) -> Result<()> {
        if self.data.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("gradient samples contain non-finite values".into()));
        }
        Ok(())
    }
}

/// Row `i` is `loss'(<theta, x_i>, y_i) * x_i`.
pub fn gradient_samples(problem: &Problem, theta: &Param) -> Result<GradientSamples> {
    let z = problem.predictions(theta)?;
    let kind = problem.loss.kind;
    let scale: Vec<f64> =
        z.iter().zip(problem.dataset.y.iter()).map(|(&z, &y)| derivative_unchecked(kind, z, y)).collect();
    let mut data = problem.dataset.x.clone();
    for mut col in data.column_iter_mut() {
        col.iter_mut().zip(&scale).for_each(|(v, s)| *v *= s);
    }
    GradientSamples::new(data, problem.shape)
}

/// Trimmed mean of the per-sample losses.
pub fn robust_objective_estimate(problem: &Problem, theta: &Param, alpha: f64) -> Result<f64> {
    if problem.n() < 2 {
        return Err(invalid("robust objective needs at least 2 samples"));
    }
    let losses = problem.sample_losses(theta)?;
    if let Some(i) = losses.iter().position(|v| !v.is_finite()) {
        return Err(Error::Numerical(format!(
            "loss of sample {i} is {} (iterate norm {:.3e})",
            losses[i],
            theta.norm()
        )));
    }
    trimmed_mean(&losses, alpha)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const ALL: [LossModel; 5] = [
        LossModel { kind: LossKind::LeastSquares },
        LossModel { kind: LossKind::Logistic },
        LossModel { kind: LossKind::Huber { delta: DEFAULT_HUBER_DELTA } },
        LossModel { kind: LossKind::Hinge },
        LossModel { kind: LossKind::Absolute },
    ];

    fn problem(x: DMatrix<f64>, y: Vec<f64>, loss: LossModel) -> Problem {
        let d = x.ncols();
        Problem::new(loss, Dataset::new(x, DVector::from_vec(y)).unwrap(), (d, 1)).unwrap()
    }

    #[test]
    fn loss_examples() {
        assert_eq!(loss_value(&LossModel::least_squares(), 3.0, 1.0).unwrap(), 2.0);
        assert!((loss_value(&LossModel::logistic(), 0.0, 1.0).unwrap() - 2f64.ln()).abs() < 1e-15);
        assert_eq!(loss_value(&LossModel::hinge(), 2.0, 1.0).unwrap(), 0.0);
        assert_eq!(loss_derivative(&LossModel::least_squares(), 3.0, 1.0).unwrap(), 2.0);
        assert_eq!(loss_derivative(&LossModel::logistic(), 0.0, 1.0).unwrap(), -0.5);
        assert_eq!(loss_derivative(&LossModel::hinge(), 1.0, 1.0).unwrap(), 0.0);
        assert_eq!(loss_derivative(&LossModel::absolute(), 2.0, 2.0).unwrap(), 0.0);
    }

    #[test]
    fn loss_errors() {
        assert!(loss_value(&LossModel::least_squares(), f64::NAN, 1.0).is_err());
        assert!(loss_derivative(&LossModel::hinge(), 0.0, 0.5).is_err());
        assert!(loss_value(&LossModel::logistic(), 0.0, 2.0).is_err());
        assert!(LossModel::new(LossKind::Huber { delta: 0.0 }).is_err());
    }

    #[test]
    fn smoothness_metadata() {
        assert_eq!(LossModel::least_squares().smoothness(), Smoothness::GradientLipschitz(1.0));
        assert_eq!(LossModel::logistic().smoothness(), Smoothness::GradientLipschitz(0.25));
        assert_eq!(LossModel::huber().smoothness(), Smoothness::GradientLipschitz(1.0));
        assert_eq!(LossModel::hinge().smoothness(), Smoothness::LipschitzOnly(1.0));
        assert_eq!(LossModel::absolute().smoothness(), Smoothness::LipschitzOnly(1.0));
    }

    #[test]
    fn derivative_growth_bound_and_nonnegativity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let z = rng.random_range(-50.0..50.0);
            let y = if rng.random::<bool>() { 1.0 } else { -1.0 };
            for loss in ALL {
                let g = loss.growth_constants();
                let d = loss_derivative(&loss, z, y).unwrap();
                assert!(d.abs() <= g.c1_prime + g.c2_prime * (z - y).abs());
                assert!(loss_value(&loss, z, y).unwrap() >= 0.0);
            }
        }
    }

    #[test]
    fn smooth_derivatives_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..1000 {
            let z: f64 = rng.random_range(-5.0..5.0);
            let y = if rng.random::<bool>() { 1.0 } else { -1.0 };
            for loss in &ALL[..3] {
                let h = 1e-5;
                let fd = (loss_value(loss, z + h, y).unwrap() - loss_value(loss, z - h, y).unwrap()) / (2.0 * h);
                let d = loss_derivative(loss, z, y).unwrap();
                assert!((fd - d).abs() <= 1e-6 * (1.0 + d.abs()), "{loss:?} z={z} y={y}: {fd} vs {d}");
            }
        }
    }

    #[test]
    fn gradient_sample_examples() {
        let p = problem(DMatrix::from_row_slice(1, 2, &[1.0, 0.0]), vec![2.0], LossModel::least_squares());
        let g = gradient_samples(&p, &p.zeros()).unwrap();
        assert_eq!(g.sample(0).as_slice(), &[-2.0, 0.0]);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = DMatrix::from_fn(6, 3, |_, _| rng.random_range(-1.0..1.0));
        let theta = Param::from_vec(3, 1, vec![0.5, -1.0, 2.0]);
        let y: Vec<f64> = (0..6).map(|i| (0..3).map(|j| x[(i, j)] * theta[j]).sum()).collect();
        let p = problem(x, y, LossModel::least_squares());
        assert!(gradient_samples(&p, &theta).unwrap().data().iter().all(|v| *v == 0.0));
        assert!(gradient_samples(&p, &Param::zeros(2, 1)).is_err());
    }

    #[test]
    fn gradient_samples_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = DMatrix::from_fn(5, 3, |_, _| rng.random_range(-2.0..2.0));
        let y: Vec<f64> = (0..5).map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 }).collect();
        let theta = Param::from_fn(3, 1, |_, _| rng.random_range(-1.0..1.0));
        for loss in &ALL[..3] {
            let p = problem(x.clone(), y.clone(), *loss);
            let g = gradient_samples(&p, &theta).unwrap();
            for i in 0..5 {
                for j in 0..3 {
                    let h = 1e-6;
                    let mut plus = theta.clone();
                    plus[j] += h;
                    let mut minus = theta.clone();
                    minus[j] -= h;
                    let fd = (p.sample_losses(&plus).unwrap()[i] - p.sample_losses(&minus).unwrap()[i]) / (2.0 * h);
                    let exact = g.data()[(i, j)];
                    assert!((fd - exact).abs() <= 1e-6 * (1.0 + exact.abs()));
                }
                // Rows are exact scalings of the covariates.
                let z: f64 = (0..3).map(|j| x[(i, j)] * theta[j]).sum();
                let s = loss_derivative(loss, z, y[i]).unwrap();
                for j in 0..3 {
                    assert_eq!(g.data()[(i, j)], s * x[(i, j)]);
                }
            }
        }
    }

    #[test]
    fn matrix_shaped_problems_use_column_major_flattening() {
        let x = DMatrix::from_row_slice(1, 4, &[1.0, 2.0, 3.0, 4.0]);
        let p = Problem::new(LossModel::least_squares(), Dataset::new(x, DVector::from_vec(vec![0.0])).unwrap(), (2, 2))
            .unwrap();
        let theta = Param::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        assert_eq!(p.predictions(&theta).unwrap()[0], 1.0);
        let g = gradient_samples(&p, &theta).unwrap();
        assert_eq!(g.sample(0), Param::from_row_slice(2, 2, &[1.0, 3.0, 2.0, 4.0]));
    }

    #[test]
    fn robust_objective_examples() {
        // Constant losses.
        let p = problem(DMatrix::zeros(6, 1), vec![2.0; 6], LossModel::least_squares());
        assert_eq!(robust_objective_estimate(&p, &p.zeros(), 0.2).unwrap(), 2.0);

        // alpha = 0: second half clipped at the first-half extremes.
        let y = [1.0, 3.0, 2.0, 0.0, 2.0, 10.0];
        let p = problem(DMatrix::zeros(6, 1), y.to_vec(), LossModel::absolute());
        assert_eq!(robust_objective_estimate(&p, &p.zeros(), 0.0).unwrap(), (1.0 + 2.0 + 3.0) / 3.0);

        // One extreme loss among 8.
        let y = [1.0, 2.0, 3.0, 4.0, 2.5, 1e6, 1.5, 3.5];
        let p = problem(DMatrix::zeros(8, 1), y.to_vec(), LossModel::absolute());
        let v = robust_objective_estimate(&p, &p.zeros(), 0.25).unwrap();
        assert!((1.0..=4.0).contains(&v));

        let p = problem(DMatrix::zeros(1, 1), vec![1.0], LossModel::absolute());
        assert!(robust_objective_estimate(&p, &p.zeros(), 0.1).is_err());
    }

    #[test]
    fn robust_objective_is_invariant_to_within_half_permutations() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let y: Vec<f64> = (0..20).map(|_| rng.random_range(-3.0..3.0)).collect();
        let mut permuted = y.clone();
        permuted[..10].reverse();
        permuted[10..].rotate_left(3);
        let a = problem(DMatrix::zeros(20, 1), y, LossModel::least_squares());
        let b = problem(DMatrix::zeros(20, 1), permuted, LossModel::least_squares());
        let theta = a.zeros();
        let (va, vb) =
            (robust_objective_estimate(&a, &theta, 0.1).unwrap(), robust_objective_estimate(&b, &theta, 0.1).unwrap());
        // Only the summation order differs.
        assert!((va - vb).abs() <= 1e-14 * va.abs());
    }
}
