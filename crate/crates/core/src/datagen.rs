//! Synthetic data generation, corruption injection and CSV ingestion.

use std::io::Write;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::seq::{index, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, Normal, Pareto, StandardNormal};

use crate::error::{invalid, Error, Result};

/// Covariates, labels and (for synthetic data) the ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    /// `n x d` covariate matrix, one sample per row.
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    /// Population parameter when known, flattened column-major.
    pub theta_star: Option<DVector<f64>>,
    /// Sorted indices of corrupted samples.
    pub outliers: Vec<usize>,
}

impl Dataset {
    pub fn new(x: DMatrix<f64>, y: DVector<f64>) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(Error::DimensionMismatch { expected: x.nrows(), got: y.len() });
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(invalid("dataset entries must be finite"));
        }
        Ok(Self { x, y, theta_star: None, outliers: Vec::new() })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    /// Restriction to the given rows, in the given order. Outlier indices are
    /// remapped to positions in the subset.
    pub fn subset(&self, rows: &[usize]) -> Dataset {
        let x = self.x.select_rows(rows.iter());
        let y = DVector::from_iterator(rows.len(), rows.iter().map(|&i| self.y[i]));
        let outliers = rows
            .iter()
            .enumerate()
            .filter(|(_, i)| self.outliers.binary_search(i).is_ok())
            .map(|(k, _)| k)
            .collect();
        Dataset { x, y, theta_star: self.theta_star.clone(), outliers }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum CovariateDist {
    Gaussian,
    /// Multivariate Student t, rescaled so that its covariance is the target one.
    Student { dof: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum NoiseDist {
    /// Pareto with unit scale, centered to zero mean.
    Pareto { shape: f64 },
    Gaussian { sigma: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Task {
    Regression,
    /// Labels in {-1, +1} drawn from the logistic model.
    LogisticClassification,
}

#[derive(Clone, Debug, PartialEq)]
pub enum ThetaSpec {
    /// `s` nonzero coordinates of the given magnitude with random signs.
    RandomSupport { magnitude: f64 },
    Explicit(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub n: usize,
    pub d: usize,
    pub s: usize,
    /// Diagonal covariance entries are drawn uniformly in this range.
    pub cov_diag_range: (f64, f64),
    pub covariates: CovariateDist,
    pub noise: NoiseDist,
    pub task: Task,
    pub theta: ThetaSpec,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n: 500,
            d: 5000,
            s: 40,
            cov_diag_range: (1.0, 10.0),
            covariates: CovariateDist::Gaussian,
            noise: NoiseDist::Pareto { shape: 2.05 },
            task: Task::Regression,
            theta: ThetaSpec::RandomSupport { magnitude: 1.0 },
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.d == 0 {
            return Err(invalid("n and d must be positive"));
        }
        if self.s > self.d {
            return Err(invalid(format!("sparsity s = {} exceeds d = {}", self.s, self.d)));
        }
        let (lo, hi) = self.cov_diag_range;
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return Err(invalid(format!("covariance range ({lo}, {hi}) must satisfy 0 < low <= high")));
        }
        if let CovariateDist::Student { dof } = self.covariates {
            if !(dof > 2.0) {
                return Err(invalid(format!("Student dof must exceed 2 (got {dof})")));
            }
        }
        match self.noise {
            NoiseDist::Pareto { shape } if !(shape > 2.0) => {
                return Err(invalid(format!("Pareto shape must exceed 2 (got {shape})")))
            }
            NoiseDist::Gaussian { sigma } if !(sigma >= 0.0 && sigma.is_finite()) => {
                return Err(invalid(format!("noise sigma must be non-negative (got {sigma})")))
            }
            _ => {}
        }
        match &self.theta {
            ThetaSpec::Explicit(v) if v.len() != self.d => {
                Err(Error::DimensionMismatch { expected: self.d, got: v.len() })
            }
            ThetaSpec::RandomSupport { magnitude } if !magnitude.is_finite() => {
                Err(invalid("theta magnitude must be finite"))
            }
            _ => Ok(()),
        }
    }
}

/// Stream 0 draws the global quantities; row `i` uses its own stream so that
/// rows can be produced independently of each other.
fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Draws a synthetic linear model dataset. Deterministic in `seed`.
pub fn generate(config: &SynthConfig, seed: u64) -> Result<Dataset> {
    config.validate()?;
    let SynthConfig { n, d, s, .. } = *config;
    let mut global = stream_rng(seed, 0);

    let (lo, hi) = config.cov_diag_range;
    let std_dev: Vec<f64> = (0..d)
        .map(|_| if hi > lo { global.random_range(lo..hi) } else { lo }.sqrt())
        .collect();

    let theta_star = match &config.theta {
        ThetaSpec::Explicit(v) => DVector::from_column_slice(v),
        ThetaSpec::RandomSupport { magnitude } => {
            let mut theta = DVector::zeros(d);
            for j in index::sample(&mut global, d, s) {
                theta[j] = if global.random::<bool>() { *magnitude } else { -*magnitude };
            }
            theta
        }
    };

    let noise_offset = match config.noise {
        NoiseDist::Pareto { shape } => shape / (shape - 1.0),
        NoiseDist::Gaussian { .. } => 0.0,
    };

    let mut x = DMatrix::zeros(n, d);
    let mut y = DVector::zeros(n);
    let mut row = vec![0.0; d];
    for i in 0..n {
        let mut rng = stream_rng(seed, i as u64 + 1);
        for v in row.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        let scale = match config.covariates {
            CovariateDist::Gaussian => 1.0,
            CovariateDist::Student { dof } => {
                let w: f64 = ChiSquared::new(dof).map_err(|e| invalid(e.to_string()))?.sample(&mut rng);
                ((dof - 2.0) / w).sqrt()
            }
        };
        let mut z = 0.0;
        for j in 0..d {
            let value = row[j] * std_dev[j] * scale;
            x[(i, j)] = value;
            z += value * theta_star[j];
        }
        y[i] = match config.task {
            Task::Regression => {
                let noise = match config.noise {
                    NoiseDist::Pareto { shape } => {
                        Pareto::new(1.0, shape).map_err(|e| invalid(e.to_string()))?.sample(&mut rng)
                    }
                    NoiseDist::Gaussian { sigma } => {
                        Normal::new(0.0, sigma).map_err(|e| invalid(e.to_string()))?.sample(&mut rng)
                    }
                };
                z + noise - noise_offset
            }
            Task::LogisticClassification => {
                let p = 1.0 / (1.0 + (-z).exp());
                if rng.random::<f64>() < p {
                    1.0
                } else {
                    -1.0
                }
            }
        };
    }

    Ok(Dataset { x, y, theta_star: Some(theta_star), outliers: Vec::new() })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum CorruptionMode {
    /// Covariates and label rescaled to `factor` times the largest clean magnitude.
    LargeMagnitude { factor: f64 },
    /// Covariates along one fixed random direction, label pushed against the signal.
    AdversarialResponse { factor: f64 },
    /// Label negated and covariates multiplied by `factor`.
    LabelFlipScale { factor: f64 },
}

impl Default for CorruptionMode {
    fn default() -> Self {
        CorruptionMode::LargeMagnitude { factor: 1e3 }
    }
}

fn max_abs<'a>(values: impl Iterator<Item = &'a f64>) -> f64 {
    values.fold(0.0_f64, |m, v| m.max(v.abs()))
}

/// Replaces `floor(eta * n)` uniformly chosen samples. Inlier rows are left
/// untouched.
pub fn corrupt(dataset: &Dataset, eta: f64, mode: CorruptionMode, seed: u64) -> Result<Dataset> {
    if !(0.0..0.5).contains(&eta) {
        return Err(invalid(format!("corruption fraction eta = {eta} must lie in [0, 1/2)")));
    }
    let n = dataset.n();
    let d = dataset.dim();
    let count = (eta * n as f64).floor() as usize;
    let mut out = dataset.clone();
    if count == 0 {
        return Ok(out);
    }

    let mut rng = stream_rng(seed, u64::MAX);
    let chosen: Vec<usize> = index::sample(&mut rng, n, count).into_vec();
    let x_max = max_abs(dataset.x.iter()).max(f64::MIN_POSITIVE);
    let y_max = max_abs(dataset.y.iter()).max(1.0);

    match mode {
        CorruptionMode::LargeMagnitude { factor } => {
            for &i in &chosen {
                let row_max = max_abs(dataset.x.row(i).iter());
                let target = factor * x_max;
                for j in 0..d {
                    out.x[(i, j)] = if row_max > 0.0 { dataset.x[(i, j)] / row_max * target } else { target };
                }
                let sign = if dataset.y[i] < 0.0 { -1.0 } else { 1.0 };
                out.y[i] = sign * factor * y_max;
            }
        }
        CorruptionMode::AdversarialResponse { factor } => {
            let mut direction: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
            let norm = direction.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
            direction.iter_mut().for_each(|v| *v /= norm);
            for &i in &chosen {
                let row_norm = dataset.x.row(i).norm().max(x_max);
                let mut z = 0.0;
                for j in 0..d {
                    out.x[(i, j)] = direction[j] * row_norm;
                    if let Some(theta) = &dataset.theta_star {
                        z += out.x[(i, j)] * theta[j];
                    }
                }
                let sign = if dataset.theta_star.is_some() && z < 0.0 { -1.0 } else { 1.0 };
                out.y[i] = -sign * factor * y_max;
            }
        }
        CorruptionMode::LabelFlipScale { factor } => {
            for &i in &chosen {
                for j in 0..d {
                    out.x[(i, j)] = dataset.x[(i, j)] * factor;
                }
                out.y[i] = -dataset.y[i];
            }
        }
    }

    let mut outliers = dataset.outliers.clone();
    outliers.extend(chosen);
    outliers.sort_unstable();
    outliers.dedup();
    out.outliers = outliers;
    Ok(out)
}

/// How the label column of a CSV file is interpreted.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LabelKind {
    /// `{0, 1}` or `{-1, +1}` mapped to `{-1, +1}`.
    Binary,
    /// Labels kept as read.
    Real,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CsvOptions {
    /// 0-based index of the label column.
    pub label_column: usize,
    pub has_header: bool,
    pub labels: LabelKind,
}

/// Reads a binary classification dataset (labels mapped to `{-1, +1}`).
pub fn load_csv(path: impl AsRef<Path>, label_column: usize, has_header: bool) -> Result<Dataset> {
    load_csv_with(path, CsvOptions { label_column, has_header, labels: LabelKind::Binary })
}

pub fn load_csv_with(path: impl AsRef<Path>, options: CsvOptions) -> Result<Dataset> {
    let file = std::fs::File::open(path)?;
    read_csv(file, options)
}

pub fn read_csv<R: std::io::Read>(reader: R, options: CsvOptions) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(options.has_header)
        .flexible(false)
        .trim(csv::Trim::All)
        .from_reader(reader);

    let mut width: Option<usize> = None;
    let mut features: Vec<f64> = Vec::new();
    let mut labels: Vec<f64> = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            match e.kind() {
                csv::ErrorKind::UnequalLengths { expected_len, len, .. } => Error::Parse {
                    line,
                    msg: format!("ragged row: expected {expected_len} fields, found {len}"),
                },
                _ => Error::Parse { line, msg: e.to_string() },
            }
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let w = *width.get_or_insert(record.len());
        if options.label_column >= w {
            return Err(Error::Parse {
                line,
                msg: format!("label column {} out of range for {w} fields", options.label_column),
            });
        }
        for (j, cell) in record.iter().enumerate() {
            let value: f64 = cell.parse().map_err(|_| Error::Parse {
                line,
                msg: format!("non-numeric cell {cell:?} in column {j}"),
            })?;
            if !value.is_finite() {
                return Err(Error::Parse { line, msg: format!("non-finite cell {cell:?} in column {j}") });
            }
            if j == options.label_column {
                labels.push(value);
            } else {
                features.push(value);
            }
        }
        if let LabelKind::Binary = options.labels {
            let raw = *labels.last().expect("label pushed above");
            if raw != 0.0 && raw != 1.0 && raw != -1.0 {
                return Err(Error::Parse { line, msg: format!("label {raw} is not in {{0, 1}} or {{-1, +1}}") });
            }
        }
    }

    let n = labels.len();
    let d = width.map_or(0, |w| w - 1);
    if let LabelKind::Binary = options.labels {
        for v in labels.iter_mut() {
            *v = if *v == 1.0 { 1.0 } else { -1.0 };
        }
    }
    let x = DMatrix::from_row_slice(n, d, &features);
    Ok(Dataset { x, y: DVector::from_vec(labels), theta_star: None, outliers: Vec::new() })
}

/// Writes covariates followed by the label column, with a header row and 17
/// significant digits per value so that reading back is exact.
pub fn save_csv(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_csv(dataset, std::io::BufWriter::new(file))
}

pub fn write_csv<W: Write>(dataset: &Dataset, mut out: W) -> Result<()> {
    let d = dataset.dim();
    let header: Vec<String> = (0..d).map(|j| format!("x{j}")).chain(std::iter::once("y".into())).collect();
    writeln!(out, "{}", header.join(","))?;
    let mut line = String::new();
    for i in 0..dataset.n() {
        line.clear();
        for j in 0..d {
            line.push_str(&format!("{:.16e},", dataset.x[(i, j)]));
        }
        line.push_str(&format!("{:.16e}", dataset.y[i]));
        writeln!(out, "{line}")?;
    }
    out.flush()?;
    Ok(())
}

/// Seeded shuffle of `0..n` cut into `batches` contiguous slices whose sizes
/// differ by at most one.
pub fn split_batches(n: usize, batches: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if batches < 1 {
        return Err(invalid("number of batches must be at least 1"));
    }
    if batches > n {
        return Err(invalid(format!("cannot split {n} samples into {batches} batches")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut stream_rng(seed, u64::MAX - 1));
    let base = n / batches;
    let extra = n % batches;
    let mut out = Vec::with_capacity(batches);
    let mut start = 0;
    for b in 0..batches {
        let len = base + usize::from(b < extra);
        out.push(order[start..start + len].to_vec());
        start += len;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> SynthConfig {
        SynthConfig { n: 50, d: 8, s: 3, ..SynthConfig::default() }
    }

    #[test]
    fn noiseless_dense_explicit_theta_is_exact() {
        let theta = vec![1.0, -2.0, 0.5];
        let cfg = SynthConfig {
            n: 20,
            d: 3,
            s: 3,
            noise: NoiseDist::Gaussian { sigma: 0.0 },
            theta: ThetaSpec::Explicit(theta.clone()),
            ..SynthConfig::default()
        };
        let ds = generate(&cfg, 7).unwrap();
        let fitted = &ds.x * DVector::from_vec(theta);
        assert_eq!(fitted, ds.y);
    }

    #[test]
    fn generation_is_deterministic_per_seed() {
        let a = generate(&small_config(), 1).unwrap();
        let b = generate(&small_config(), 1).unwrap();
        let c = generate(&small_config(), 2).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.x, c.x);
    }

    #[test]
    fn random_support_has_s_entries() {
        let ds = generate(&small_config(), 3).unwrap();
        let theta = ds.theta_star.unwrap();
        assert_eq!(theta.iter().filter(|v| **v != 0.0).count(), 3);
        assert!(theta.iter().all(|v| *v == 0.0 || v.abs() == 1.0));
    }

    #[test]
    fn classification_labels_are_signs() {
        let cfg = SynthConfig { task: Task::LogisticClassification, ..small_config() };
        let ds = generate(&cfg, 4).unwrap();
        assert!(ds.y.iter().all(|v| *v == 1.0 || *v == -1.0));
    }

    #[test]
    fn rejects_bad_distribution_parameters() {
        let bad = SynthConfig { covariates: CovariateDist::Student { dof: 2.0 }, ..small_config() };
        assert!(generate(&bad, 0).is_err());
        let bad = SynthConfig { noise: NoiseDist::Pareto { shape: 1.5 }, ..small_config() };
        assert!(generate(&bad, 0).is_err());
        let bad = SynthConfig { s: 9, ..small_config() };
        assert!(generate(&bad, 0).is_err());
    }

    #[test]
    fn zero_corruption_is_identity() {
        let ds = generate(&small_config(), 5).unwrap();
        let out = corrupt(&ds, 0.0, CorruptionMode::default(), 1).unwrap();
        assert_eq!(out, ds);
        assert!(out.outliers.is_empty());
    }

    #[test]
    fn corruption_count_and_inlier_preservation() {
        let cfg = SynthConfig { n: 500, d: 5, s: 2, ..SynthConfig::default() };
        let ds = generate(&cfg, 6).unwrap();
        for mode in [
            CorruptionMode::LargeMagnitude { factor: 1e3 },
            CorruptionMode::AdversarialResponse { factor: 10.0 },
            CorruptionMode::LabelFlipScale { factor: 5.0 },
        ] {
            let out = corrupt(&ds, 0.05, mode, 9).unwrap();
            assert_eq!(out.outliers.len(), 25);
            for i in 0..ds.n() {
                if out.outliers.binary_search(&i).is_err() {
                    assert_eq!(out.x.row(i), ds.x.row(i));
                    assert_eq!(out.y[i].to_bits(), ds.y[i].to_bits());
                }
            }
        }
    }

    #[test]
    fn large_magnitude_rows_exceed_clean_max() {
        let cfg = SynthConfig { n: 200, d: 4, s: 2, ..SynthConfig::default() };
        let ds = generate(&cfg, 8).unwrap();
        let clean_max = max_abs(ds.x.iter());
        let out = corrupt(&ds, 0.1, CorruptionMode::LargeMagnitude { factor: 1e3 }, 3).unwrap();
        for &i in &out.outliers {
            assert!(max_abs(out.x.row(i).iter()) > clean_max);
        }
    }

    #[test]
    fn corrupt_rejects_half() {
        let ds = generate(&small_config(), 5).unwrap();
        assert!(corrupt(&ds, 0.5, CorruptionMode::default(), 1).is_err());
    }

    #[test]
    fn csv_basic_parsing() {
        let opts = CsvOptions { label_column: 2, has_header: false, labels: LabelKind::Binary };
        let ds = read_csv("1,2,0\n3,4,1\n".as_bytes(), opts).unwrap();
        assert_eq!(ds.x, DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]));
        assert_eq!(ds.y.as_slice(), &[-1.0, 1.0]);
        assert!(ds.theta_star.is_none());

        let with_header = CsvOptions { has_header: true, ..opts };
        let ds2 = read_csv("a,b,label\n1,2,0\n3,4,1\n".as_bytes(), with_header).unwrap();
        assert_eq!(ds, ds2);
    }

    #[test]
    fn csv_errors_name_the_line() {
        let opts = CsvOptions { label_column: 2, has_header: false, labels: LabelKind::Binary };
        match read_csv("1,2,0\nabc,4,1\n".as_bytes(), opts) {
            Err(Error::Parse { line, msg }) => {
                assert_eq!(line, 2);
                assert!(msg.contains("abc"));
            }
            other => panic!("unexpected {other:?}"),
        }
        match read_csv("1,2,0\n3,4\n".as_bytes(), opts) {
            Err(Error::Parse { line: 2, msg }) => assert!(msg.contains("ragged")),
            other => panic!("unexpected {other:?}"),
        }
        match read_csv("1,2,0\n3,4,7\n".as_bytes(), opts) {
            Err(Error::Parse { line: 2, msg }) => assert!(msg.contains("label")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn split_batches_contract() {
        let one = split_batches(10, 1, 0).unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!(one[0].len(), 10);

        let parts = split_batches(10, 3, 42).unwrap();
        let sizes: Vec<usize> = parts.iter().map(Vec::len).collect();
        assert_eq!(sizes, vec![4, 3, 3]);
        let mut all: Vec<usize> = parts.concat();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
        assert_eq!(parts, split_batches(10, 3, 42).unwrap());
        assert!(split_batches(10, 0, 0).is_err());
        assert!(split_batches(3, 4, 0).is_err());
    }

    #[test]
    fn subset_remaps_outliers() {
        let cfg = SynthConfig { n: 40, d: 3, s: 1, ..SynthConfig::default() };
        let ds = corrupt(&generate(&cfg, 1).unwrap(), 0.25, CorruptionMode::default(), 2).unwrap();
        let rows: Vec<usize> = (0..40).rev().collect();
        let sub = ds.subset(&rows);
        for &k in &sub.outliers {
            assert!(ds.outliers.contains(&rows[k]));
        }
        assert_eq!(sub.outliers.len(), ds.outliers.len());
    }
}
