//! Benchmark harness: data preparation, repeated runs and CSV output.
//!
//! Repeat `i` uses seed `seed + i` for data generation, corruption, estimator
//! shuffles and the validation split. Repeats run in parallel and are written
//! in repeat order, so the output depends only on the configuration (apart
//! from the `elapsed_ms` column).

pub mod config;

use std::collections::BTreeMap;
use std::io::Write;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

pub use config::{parse_override, parse_pairs, DataSource, EstimatorChoice, ExperimentConfig, GeometryKind, TrimLevel};

use crate::datagen::{corrupt, generate, load_csv_with, CsvOptions, Dataset, LabelKind, SynthConfig, ThetaSpec};
use crate::error::{Error, Result};
use crate::estimators::Estimator;
use crate::geometry::Geometry;
use crate::model::{LossModel, Problem};
use crate::solvers::{fit_traced, Algorithm, RunTrace, TraceRecord};
use crate::Param;

pub const DETAIL_HEADER: &str = "run_id,setting,algo,stage,iter,elapsed_ms,l2_error,norm_error,objective";
pub const AGGREGATE_HEADER: &str = "setting,algo,stage,iter,runs,elapsed_ms,l2_error,norm_error,objective";

/// Process exit codes of the command line tool.
pub mod exit {
    pub const OK: i32 = 0;
    pub const IO: i32 = 1;
    pub const CONFIG: i32 = 2;
    pub const NUMERICAL: i32 = 3;
}

const CORRUPTION_SALT: u64 = 0x00c0_ffee;
const TRUTH_SALT: u64 = 0x7a11_5eed;

/// Problem, geometry and known truth of one repeat.
pub struct Prepared {
    pub problem: Problem,
    pub geometry: Geometry,
    pub truth: Option<Param>,
    pub estimator: Estimator,
}

/// Outcome of one repeat. `error` is set when the solver failed, in which
/// case `trace` holds the records made before the failure.
#[derive(Debug)]
pub struct RunOutcome {
    pub run_id: usize,
    pub seed: u64,
    pub theta: Option<Param>,
    pub trace: RunTrace,
    pub error: Option<Error>,
}

#[derive(Debug)]
pub struct ExperimentReport {
    pub setting: String,
    pub algo: Algorithm,
    pub runs: Vec<RunOutcome>,
}

impl ExperimentReport {
    /// First failed repeat, if any.
    pub fn failure(&self) -> Option<&RunOutcome> {
        self.runs.iter().find(|r| r.error.is_some())
    }
}

/// Truth with the structure the geometry expects: `s` nonzero rows for
/// groups, rank `s` for low-rank parameters.
fn structured_truth(kind: GeometryKind, (rows, cols): (usize, usize), s: usize, magnitude: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ TRUTH_SALT);
    let mut theta = Param::zeros(rows, cols);
    match kind {
        GeometryKind::Group => {
            for r in index::sample(&mut rng, rows, s.min(rows)) {
                for c in 0..cols {
                    theta[(r, c)] = if rng.random::<bool>() { magnitude } else { -magnitude };
                }
            }
        }
        GeometryKind::LowRank => {
            let rank = s.min(rows).min(cols);
            let u = Param::from_fn(rows, rank, |_, _| rng.sample::<f64, _>(StandardNormal));
            let v = Param::from_fn(cols, rank, |_, _| rng.sample::<f64, _>(StandardNormal));
            theta = u * v.transpose() * (magnitude / (rank.max(1) as f64 * ((rows * cols) as f64).sqrt()).sqrt());
        }
        GeometryKind::Vanilla => unreachable!("vanilla truth comes from the generator"),
    }
    theta.as_slice().to_vec()
}

/// Loads (or generates) and corrupts the data of the repeat with `seed`.
pub fn dataset_for(config: &ExperimentConfig, seed: u64) -> Result<Dataset> {
    let loss = LossModel::new(config.loss)?;
    let clean = match &config.data {
        DataSource::Synthetic(synth) => {
            let synth = match config.geometry {
                GeometryKind::Vanilla => synth.clone(),
                kind => SynthConfig {
                    theta: ThetaSpec::Explicit(structured_truth(kind, config.shape, synth.s, magnitude(synth), seed)),
                    ..synth.clone()
                },
            };
            generate(&synth, seed)?
        }
        DataSource::Csv { path, label_column, has_header } => {
            let labels = if loss.is_classification() { LabelKind::Binary } else { LabelKind::Real };
            load_csv_with(path, CsvOptions { label_column: *label_column, has_header: *has_header, labels })?
        }
    };
    corrupt(&clean, config.eta, config.corruption, seed ^ CORRUPTION_SALT)
}

fn magnitude(synth: &SynthConfig) -> f64 {
    match synth.theta {
        ThetaSpec::RandomSupport { magnitude } => magnitude,
        ThetaSpec::Explicit(_) => 1.0,
    }
}

/// Builds everything a repeat needs. Errors here are configuration errors.
pub fn prepare(config: &ExperimentConfig, seed: u64) -> Result<Prepared> {
    let dataset = dataset_for(config, seed)?;
    let shape = match config.geometry {
        GeometryKind::Vanilla => (dataset.dim(), 1),
        _ => config.shape,
    };
    if shape.0 * shape.1 != dataset.dim() {
        return Err(Error::Config(format!(
            "parameter shape {}x{} does not match {} covariates",
            shape.0,
            shape.1,
            dataset.dim()
        )));
    }
    let geometry = config.geometry_for(shape)?;
    if config.schedule.s_bar > geometry.capacity() {
        return Err(Error::Config(format!(
            "s_bar = {} exceeds the geometry capacity {}",
            config.schedule.s_bar,
            geometry.capacity()
        )));
    }
    let truth = dataset.theta_star.as_ref().map(|t| Param::from_column_slice(shape.0, shape.1, t.as_slice()));
    let problem = Problem::new(LossModel::new(config.loss)?, dataset, shape)?;
    let estimator = Estimator::new(config.estimator_spec(problem.n())?, seed);
    estimator.spec.validate(problem.n())?;
    Ok(Prepared { problem, geometry, truth, estimator })
}

fn as_config(e: Error) -> Error {
    match e {
        Error::Config(_) | Error::Io(_) => e,
        other => Error::Config(other.to_string()),
    }
}

/// Runs one repeat on prepared inputs.
pub fn run_prepared(config: &ExperimentConfig, prepared: &Prepared, run_id: usize, seed: u64) -> RunOutcome {
    let mut options = config.run_options(seed);
    options.truth = prepared.truth.clone();
    let mut trace = RunTrace::default();
    let result = fit_traced(
        config.algo,
        &prepared.problem,
        &prepared.geometry,
        prepared.estimator,
        &config.schedule,
        &options,
        &mut trace,
    );
    match result {
        Ok(theta) => RunOutcome { run_id, seed, theta: Some(theta), trace, error: None },
        Err(e) => RunOutcome { run_id, seed, theta: None, trace, error: Some(e) },
    }
}

/// Runs every repeat. Setup problems (data, shapes, estimator parameters)
/// are returned as errors; solver failures are recorded in the report.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    let runs = (0..config.repeats)
        .into_par_iter()
        .map(|i| {
            let seed = config.seed.wrapping_add(i as u64);
            let prepared = prepare(config, seed).map_err(as_config)?;
            Ok(run_prepared(config, &prepared, i, seed))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ExperimentReport { setting: config.setting.clone(), algo: config.algo, runs })
}

/// Shortest text that reads back to the same value.
pub fn format_value(v: f64) -> String {
    let a = v.abs();
    if v == 0.0 || (1e-4..1e15).contains(&a) {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

fn optional(v: Option<f64>) -> String {
    v.map(format_value).unwrap_or_default()
}

fn detail_line(run_id: usize, setting: &str, algo: Algorithm, r: &TraceRecord) -> String {
    format!(
        "{run_id},{setting},{},{},{},{:.3},{},{},{}",
        algo.name(),
        r.stage,
        r.iter,
        r.elapsed_ms,
        optional(r.metrics.l2_error),
        optional(r.metrics.norm_error),
        format_value(r.metrics.objective)
    )
}

/// Writes the per-record rows. Runs after the first failure are dropped and
/// the failed run ends with a `FAILED` sentinel row.
pub fn write_detail<W: Write>(report: &ExperimentReport, mut out: W) -> Result<()> {
    writeln!(out, "{DETAIL_HEADER}")?;
    for run in &report.runs {
        for r in &run.trace.records {
            writeln!(out, "{}", detail_line(run.run_id, &report.setting, report.algo, r))?;
        }
        if run.error.is_some() {
            writeln!(out, "{},{},{},FAILED,,,,,", run.run_id, report.setting, report.algo.name())?;
            break;
        }
    }
    out.flush()?;
    Ok(())
}

/// Mean over repeats of one `(setting, algo, iter)` cell.
#[derive(Clone, Debug, PartialEq)]
pub struct AggregateRow {
    pub setting: String,
    pub algo: Algorithm,
    /// Stage shared by every contributing record, if they agree.
    pub stage: Option<usize>,
    pub iter: usize,
    pub runs: usize,
    pub elapsed_ms: f64,
    pub l2_error: Option<f64>,
    pub norm_error: Option<f64>,
    pub objective: f64,
}

#[derive(Default)]
struct Cell {
    stage: Option<Option<usize>>,
    runs: usize,
    elapsed: f64,
    l2: (f64, usize),
    norm: (f64, usize),
    objective: f64,
}

/// Per-iteration means over the successful repeats.
pub fn aggregate(report: &ExperimentReport) -> Vec<AggregateRow> {
    let mut cells: BTreeMap<usize, Cell> = BTreeMap::new();
    for run in report.runs.iter().filter(|r| r.error.is_none()) {
        for r in &run.trace.records {
            let c = cells.entry(r.iter).or_default();
            c.stage = Some(match c.stage {
                None => Some(r.stage),
                Some(s) if s == Some(r.stage) => s,
                Some(_) => None,
            });
            c.runs += 1;
            c.elapsed += r.elapsed_ms;
            c.objective += r.metrics.objective;
            if let Some(v) = r.metrics.l2_error {
                c.l2.0 += v;
                c.l2.1 += 1;
            }
            if let Some(v) = r.metrics.norm_error {
                c.norm.0 += v;
                c.norm.1 += 1;
            }
        }
    }
    let mean = |(sum, count): (f64, usize)| (count > 0).then(|| sum / count as f64);
    cells
        .into_iter()
        .map(|(iter, c)| AggregateRow {
            setting: report.setting.clone(),
            algo: report.algo,
            stage: c.stage.flatten(),
            iter,
            runs: c.runs,
            elapsed_ms: c.elapsed / c.runs as f64,
            l2_error: mean(c.l2),
            norm_error: mean(c.norm),
            objective: c.objective / c.runs as f64,
        })
        .collect()
}

pub fn write_aggregate<W: Write>(rows: &[AggregateRow], mut out: W) -> Result<()> {
    writeln!(out, "{AGGREGATE_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{:.3},{},{},{}",
            r.setting,
            r.algo.name(),
            r.stage.map(|s| s.to_string()).unwrap_or_default(),
            r.iter,
            r.runs,
            r.elapsed_ms,
            optional(r.l2_error),
            optional(r.norm_error),
            format_value(r.objective)
        )?;
    }
    out.flush()?;
    Ok(())
}

/// Runs the experiment and writes both CSV files. Returns the exit code.
pub fn bench(config: &ExperimentConfig) -> Result<(ExperimentReport, i32)> {
    let report = run_experiment(config)?;
    let detail = std::io::BufWriter::new(std::fs::File::create(&config.out)?);
    write_detail(&report, detail)?;
    if report.failure().is_some() {
        return Ok((report, exit::NUMERICAL));
    }
    let agg = std::io::BufWriter::new(std::fs::File::create(config.aggregate_path())?);
    write_aggregate(&aggregate(&report), agg)?;
    Ok((report, exit::OK))
}

/// Exit code for an error returned before or while running.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io(_) => exit::IO,
        Error::Numerical(_) => exit::NUMERICAL,
        _ => exit::CONFIG,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(extra: &[(&str, &str)]) -> ExperimentConfig {
        let mut pairs = vec![
            ("n", "120"),
            ("d", "30"),
            ("s", "3"),
            ("s_bar", "3"),
            ("radius", "5"),
            ("beta", "0.5"),
            ("stage_length", "10"),
            ("max_iters", "40"),
            ("noise", "gaussian"),
            ("cov_high", "1"),
            ("record_every", "5"),
        ];
        pairs.extend_from_slice(extra);
        ExperimentConfig::from_pairs(pairs).unwrap()
    }

    #[test]
    fn repeats_are_ordered_and_reproducible() {
        let c = small(&[("repeats", "3"), ("seed", "7")]);
        let a = run_experiment(&c).unwrap();
        let b = run_experiment(&c).unwrap();
        assert_eq!(a.runs.len(), 3);
        for (x, y) in a.runs.iter().zip(&b.runs) {
            assert_eq!(x.seed, 7 + x.run_id as u64);
            assert_eq!(x.theta, y.theta);
            let strip = |t: &RunTrace| t.records.iter().map(|r| (r.stage, r.iter, r.metrics)).collect::<Vec<_>>();
            assert_eq!(strip(&x.trace), strip(&y.trace));
        }
        assert_ne!(a.runs[0].theta, a.runs[1].theta);
    }

    #[test]
    fn detail_rows_follow_schema() {
        let report = run_experiment(&small(&[("repeats", "2")])).unwrap();
        let mut buf = Vec::new();
        write_detail(&report, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some(DETAIL_HEADER));
        let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
        assert!(rows.iter().all(|r| r.len() == 9));
        assert_eq!(rows[0][..5], ["0", "default", "ammd", "0", "0"]);
        assert!(rows.iter().all(|r| !r[6].is_empty()));
        assert_eq!(rows.last().unwrap()[0], "1");
    }

    #[test]
    fn aggregate_is_the_mean() {
        let report = run_experiment(&small(&[("repeats", "3")])).unwrap();
        let rows = aggregate(&report);
        for row in &rows {
            let vals: Vec<f64> = report
                .runs
                .iter()
                .flat_map(|r| r.trace.records.iter().filter(|t| t.iter == row.iter))
                .map(|t| t.metrics.l2_error.unwrap())
                .collect();
            assert_eq!(vals.len(), row.runs);
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            assert!((row.l2_error.unwrap() - mean).abs() <= 1e-12 * mean.abs().max(1.0));
        }
        assert_eq!(rows[0].iter, 0);
        assert_eq!(rows[0].stage, Some(0));
    }

    #[test]
    fn failure_is_reported_with_partial_rows() {
        let c = small(&[("radius", "1e300"), ("beta", "1e300"), ("repeats", "2")]);
        let report = run_experiment(&c).unwrap();
        let failed = report.failure().unwrap();
        assert!(matches!(failed.error, Some(Error::Numerical(_))));
        let mut buf = Vec::new();
        write_detail(&report, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.trim_end().ends_with(",default,ammd,FAILED,,,,,"));
        assert!(text.lines().count() >= 3);
    }

    #[test]
    fn setup_errors_are_config_errors() {
        let c = small(&[("estimator", "mom"), ("blocks", "500")]);
        let e = run_experiment(&c).unwrap_err();
        assert_eq!(exit_code(&e), exit::CONFIG);
        let c = small(&[("data", "csv"), ("csv_path", "/nonexistent/file.csv")]);
        assert_eq!(exit_code(&run_experiment(&c).unwrap_err()), exit::IO);
    }

    #[test]
    fn structured_truths() {
        let g = structured_truth(GeometryKind::Group, (6, 3), 2, 1.0, 1);
        let m = Param::from_column_slice(6, 3, &g);
        assert_eq!((0..6).filter(|&r| m.row(r).norm() > 0.0).count(), 2);
        let l = structured_truth(GeometryKind::LowRank, (6, 5), 2, 1.0, 1);
        let sv = Param::from_column_slice(6, 5, &l).singular_values();
        assert_eq!(sv.iter().filter(|&&v| v > 1e-10).count(), 2);
    }

    #[test]
    fn values_round_trip() {
        for v in [0.0, 1.0, 0.1, 1e-7, 1e300, -2.5e-300, 123456.789, 4.47213595499958] {
            assert_eq!(format_value(v).parse::<f64>().unwrap(), v);
        }
        assert_eq!(format_value(0.5), "0.5");
        assert_eq!(format_value(1e-7), "1e-7");
    }
}
