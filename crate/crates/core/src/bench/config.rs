//! Flat `key = value` experiment configuration.

use std::collections::BTreeMap;
use std::path::PathBuf;

use crate::datagen::{CorruptionMode, CovariateDist, NoiseDist, SynthConfig, Task, ThetaSpec};
use crate::error::{Error, Result};
use crate::estimators::{alpha_from_budget, CorruptionBudget, EstimatorSpec, ScaleChoice};
use crate::geometry::Geometry;
use crate::model::{LossKind, LossModel, DEFAULT_HUBER_DELTA};
use crate::solvers::{
    Algorithm, PlateauConfig, PracticalSettings, RunOptions, ScheduleMode, SolverSchedule, StageLength,
    TheoryConstants,
};

#[derive(Clone, Debug, PartialEq)]
pub enum DataSource {
    Synthetic(SynthConfig),
    Csv { path: PathBuf, label_column: usize, has_header: bool },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GeometryKind {
    Vanilla,
    Group,
    LowRank,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TrimLevel {
    Fixed(f64),
    /// From the corruption budget `(eta, delta, n)`.
    Budget { delta: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum EstimatorChoice {
    Mean,
    TrimmedMean(TrimLevel),
    CoordMom { blocks: usize },
    GroupGeometricMom { blocks: usize },
    CmMom { blocks: usize, scale: ScaleChoice },
}

/// Everything a `bench` or `fit` run needs.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub setting: String,
    pub data: DataSource,
    pub geometry: GeometryKind,
    /// Parameter shape; `(d, 1)` for vanilla.
    pub shape: (usize, usize),
    pub loss: LossKind,
    pub eta: f64,
    pub corruption: CorruptionMode,
    pub algo: Algorithm,
    pub estimator: EstimatorChoice,
    pub schedule: SolverSchedule,
    pub validation_fraction: f64,
    pub holdout: bool,
    pub split_batches: Option<usize>,
    pub alpha_obj: f64,
    pub record_every: usize,
    pub repeats: usize,
    pub seed: u64,
    pub out: PathBuf,
    pub aggregate_out: Option<PathBuf>,
}

/// Recognised keys with their defaults.
pub const KEYS: &[(&str, &str)] = &[
    ("setting", "default"),
    ("data", "synthetic"),
    ("n", "500"),
    ("d", "1000"),
    ("s", "20"),
    ("cov_low", "1"),
    ("cov_high", "10"),
    ("covariates", "gaussian"),
    ("dof", "4.1"),
    ("noise", "pareto"),
    ("pareto_shape", "2.05"),
    ("noise_sigma", "1"),
    ("task", "regression"),
    ("magnitude", "1"),
    ("csv_path", ""),
    ("label_column", "0"),
    ("has_header", "false"),
    ("geometry", "vanilla"),
    ("rows", "0"),
    ("cols", "0"),
    ("loss", "least_squares"),
    ("eta", "0"),
    ("corruption", "large_magnitude"),
    ("corruption_factor", "1000"),
    ("algo", "ammd"),
    ("estimator", "tm"),
    ("tm_alpha", "0.1"),
    ("delta", "0.01"),
    ("blocks", "10"),
    ("cm_scale", "estimated"),
    ("cm_variance", "1"),
    ("schedule", "practical"),
    ("radius", "10"),
    ("s_bar", "20"),
    ("beta", "1"),
    ("da_step", ""),
    ("stage_length", "50"),
    ("plateau_window", "10"),
    ("plateau_tol", "0.001"),
    ("plateau_max_len", "200"),
    ("max_iters", "1000"),
    ("stages", ""),
    ("eps_bar", "0.1"),
    ("kappa", "1"),
    ("lambda_growth", "1"),
    ("lipschitz_m", "1"),
    ("validation_fraction", "0.2"),
    ("holdout", "false"),
    ("split_batches", ""),
    ("alpha_obj", "0.1"),
    ("record_every", "1"),
    ("repeats", "1"),
    ("seed", "0"),
    ("out", "results.csv"),
    ("aggregate_out", ""),
];

/// Parses `key = value` lines; `#` starts a comment, blank lines are skipped.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut pairs = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
            line: i as u64 + 1,
            msg: format!("expected key = value, found {line:?}"),
        })?;
        let key = key.trim();
        if key.is_empty() {
            return Err(Error::Parse { line: i as u64 + 1, msg: "empty key".into() });
        }
        pairs.push((key.to_string(), value.trim().to_string()));
    }
    Ok(pairs)
}

/// Parses a `key=value` override as given to `--set`.
pub fn parse_override(arg: &str) -> Result<(String, String)> {
    let (k, v) = arg
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {arg:?} is not of the form key=value")))?;
    Ok((k.trim().to_string(), v.trim().to_string()))
}

struct Values(BTreeMap<String, String>);

impl Values {
    fn raw(&self, key: &str) -> &str {
        self.0.get(key).map(String::as_str).expect("every key has a default")
    }

    fn get<T: std::str::FromStr>(&self, key: &str) -> Result<T> {
        let v = self.raw(key);
        v.parse().map_err(|_| Error::Config(format!("invalid value {v:?} for {key}")))
    }

    fn opt<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        if self.raw(key).is_empty() {
            Ok(None)
        } else {
            self.get(key).map(Some)
        }
    }

    fn flag(&self, key: &str) -> Result<bool> {
        match self.raw(key) {
            "true" | "1" | "yes" => Ok(true),
            "false" | "0" | "no" => Ok(false),
            v => Err(Error::Config(format!("invalid boolean {v:?} for {key}"))),
        }
    }

    fn choice<'a>(&'a self, key: &str, allowed: &[&str]) -> Result<&'a str> {
        let v = self.raw(key);
        if allowed.contains(&v) {
            Ok(v)
        } else {
            Err(Error::Config(format!("invalid value {v:?} for {key} (expected one of {})", allowed.join(", "))))
        }
    }
}

impl ExperimentConfig {
    /// Builds a configuration from `pairs` applied in order over the defaults.
    pub fn from_pairs<I, K, V>(pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (K, V)>,
        K: Into<String>,
        V: Into<String>,
    {
        let mut map: BTreeMap<String, String> = KEYS.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
        for (k, v) in pairs {
            let k = k.into();
            match map.get_mut(&k) {
                Some(slot) => *slot = v.into(),
                None => return Err(Error::Config(format!("unknown key {k:?}"))),
            }
        }
        let config = Self::build(&Values(map))?;
        config.validate()?;
        Ok(config)
    }

    /// Parses a config file body, then applies `overrides`.
    pub fn parse(text: &str, overrides: &[(String, String)]) -> Result<Self> {
        let mut pairs = parse_pairs(text)?;
        pairs.extend(overrides.iter().cloned());
        Self::from_pairs(pairs)
    }

    fn build(v: &Values) -> Result<Self> {
        let geometry = match v.choice("geometry", &["vanilla", "group", "lowrank"])? {
            "vanilla" => GeometryKind::Vanilla,
            "group" => GeometryKind::Group,
            _ => GeometryKind::LowRank,
        };
        let (rows, cols): (usize, usize) = (v.get("rows")?, v.get("cols")?);

        let data = match v.choice("data", &["synthetic", "csv"])? {
            "synthetic" => {
                let d = match geometry {
                    GeometryKind::Vanilla => v.get("d")?,
                    _ => rows * cols,
                };
                let covariates = match v.choice("covariates", &["gaussian", "student"])? {
                    "gaussian" => CovariateDist::Gaussian,
                    _ => CovariateDist::Student { dof: v.get("dof")? },
                };
                let noise = match v.choice("noise", &["pareto", "gaussian"])? {
                    "pareto" => NoiseDist::Pareto { shape: v.get("pareto_shape")? },
                    _ => NoiseDist::Gaussian { sigma: v.get("noise_sigma")? },
                };
                let task = match v.choice("task", &["regression", "logistic"])? {
                    "regression" => Task::Regression,
                    _ => Task::LogisticClassification,
                };
                DataSource::Synthetic(SynthConfig {
                    n: v.get("n")?,
                    d,
                    s: v.get("s")?,
                    cov_diag_range: (v.get("cov_low")?, v.get("cov_high")?),
                    covariates,
                    noise,
                    task,
                    theta: ThetaSpec::RandomSupport { magnitude: v.get("magnitude")? },
                })
            }
            _ => {
                let path: String = v.get("csv_path")?;
                if path.is_empty() {
                    return Err(Error::Config("data = csv needs csv_path".into()));
                }
                DataSource::Csv {
                    path: path.into(),
                    label_column: v.get("label_column")?,
                    has_header: v.flag("has_header")?,
                }
            }
        };
        let shape = match geometry {
            GeometryKind::Vanilla => match &data {
                DataSource::Synthetic(s) => (s.d, 1),
                // Resolved once the file is read.
                DataSource::Csv { .. } => (0, 1),
            },
            _ => (rows, cols),
        };

        let loss = match v.choice("loss", &["least_squares", "logistic", "huber", "hinge", "absolute"])? {
            "least_squares" => LossKind::LeastSquares,
            "logistic" => LossKind::Logistic,
            "huber" => LossKind::Huber { delta: DEFAULT_HUBER_DELTA },
            "hinge" => LossKind::Hinge,
            _ => LossKind::Absolute,
        };

        let factor: f64 = v.get("corruption_factor")?;
        let corruption =
            match v.choice("corruption", &["large_magnitude", "adversarial_response", "label_flip_scale"])? {
                "large_magnitude" => CorruptionMode::LargeMagnitude { factor },
                "adversarial_response" => CorruptionMode::AdversarialResponse { factor },
                _ => CorruptionMode::LabelFlipScale { factor },
            };

        let blocks: usize = v.get("blocks")?;
        let estimator = match v.choice("estimator", &["mean", "tm", "mom", "gmom", "cmmom"])? {
            "mean" => EstimatorChoice::Mean,
            "tm" => EstimatorChoice::TrimmedMean(match v.raw("tm_alpha") {
                "auto" => TrimLevel::Budget { delta: v.get("delta")? },
                _ => TrimLevel::Fixed(v.get("tm_alpha")?),
            }),
            "mom" => EstimatorChoice::CoordMom { blocks },
            "gmom" => EstimatorChoice::GroupGeometricMom { blocks },
            _ => EstimatorChoice::CmMom {
                blocks,
                scale: match v.raw("cm_scale") {
                    "estimated" => ScaleChoice::Estimated,
                    "auto" => ScaleChoice::Auto { v_guess: v.get("cm_variance")? },
                    _ => ScaleChoice::Explicit(v.get("cm_scale")?),
                },
            },
        };

        let beta: f64 = v.get("beta")?;
        let mode = match v.choice("schedule", &["practical", "theoretical"])? {
            "practical" => {
                let stage_length = match v.raw("stage_length") {
                    "plateau" => StageLength::Plateau {
                        config: PlateauConfig {
                            window: v.get("plateau_window")?,
                            rel_tol: v.get("plateau_tol")?,
                            validation_fraction: v.get("validation_fraction")?,
                            alpha_obj: v.get("alpha_obj")?,
                        },
                        max_len: v.get("plateau_max_len")?,
                    },
                    _ => StageLength::Fixed(v.get("stage_length")?),
                };
                ScheduleMode::Practical(PracticalSettings {
                    beta,
                    da_step: v.opt("da_step")?,
                    stage_length,
                    stages: v.opt("stages")?,
                })
            }
            _ => ScheduleMode::Theoretical {
                constants: TheoryConstants {
                    eps_bar: v.get("eps_bar")?,
                    kappa: v.get("kappa")?,
                    lambda_growth: v.get("lambda_growth")?,
                    lipschitz_m: v.get("lipschitz_m")?,
                    stages: v.opt("stages")?.unwrap_or(10),
                },
                beta,
            },
        };
        let schedule =
            SolverSchedule { mode, radius: v.get("radius")?, s_bar: v.get("s_bar")?, max_iters: v.get("max_iters")? };

        let aggregate_out: String = v.get("aggregate_out")?;
        Ok(Self {
            setting: v.get("setting")?,
            data,
            geometry,
            shape,
            loss,
            eta: v.get("eta")?,
            corruption,
            algo: v.get::<String>("algo")?.parse()?,
            estimator,
            schedule,
            validation_fraction: v.get("validation_fraction")?,
            holdout: v.flag("holdout")?,
            split_batches: v.opt("split_batches")?,
            alpha_obj: v.get("alpha_obj")?,
            record_every: v.get("record_every")?,
            repeats: v.get("repeats")?,
            seed: v.get("seed")?,
            out: v.get::<String>("out")?.into(),
            aggregate_out: (!aggregate_out.is_empty()).then(|| aggregate_out.into()),
        })
    }

    /// Checks everything that can be checked before data is loaded.
    pub fn validate(&self) -> Result<()> {
        let cfg = |e: Error| match e {
            Error::Config(m) => Error::Config(m),
            other => Error::Config(other.to_string()),
        };
        if self.setting.contains([',', '"', '\n']) {
            return Err(Error::Config(format!("setting {:?} may not contain commas or quotes", self.setting)));
        }
        if self.repeats < 1 {
            return Err(Error::Config("repeats must be at least 1".into()));
        }
        if self.geometry != GeometryKind::Vanilla && (self.shape.0 == 0 || self.shape.1 == 0) {
            return Err(Error::Config("group and lowrank geometries need positive rows and cols".into()));
        }
        if let DataSource::Synthetic(s) = &self.data {
            s.validate().map_err(cfg)?;
            self.geometry_for(self.shape).map_err(cfg)?;
        }
        if !(0.0..0.5).contains(&self.eta) {
            return Err(Error::Config(format!("eta = {} must lie in [0, 1/2)", self.eta)));
        }
        LossModel::new(self.loss).map_err(cfg)?;
        self.schedule.validate()?;
        crate::solvers::schedule::check_fraction(self.validation_fraction).map_err(cfg)?;
        if !(0.0..0.5).contains(&self.alpha_obj) {
            return Err(Error::Config(format!("alpha_obj = {} must lie in [0, 1/2)", self.alpha_obj)));
        }
        if self.record_every < 1 {
            return Err(Error::Config("record_every must be at least 1".into()));
        }
        if self.split_batches == Some(0) {
            return Err(Error::Config("split_batches must be at least 1".into()));
        }
        Ok(())
    }

    pub fn geometry_for(&self, shape: (usize, usize)) -> Result<Geometry> {
        match self.geometry {
            GeometryKind::Vanilla => Geometry::vanilla(shape.0),
            GeometryKind::Group => Geometry::group(shape.0, shape.1),
            GeometryKind::LowRank => Geometry::low_rank(shape.0, shape.1),
        }
    }

    /// Estimator for a training set of `n` samples.
    pub fn estimator_spec(&self, n: usize) -> Result<EstimatorSpec> {
        Ok(match self.estimator {
            EstimatorChoice::Mean => EstimatorSpec::Mean,
            EstimatorChoice::TrimmedMean(TrimLevel::Fixed(alpha)) => EstimatorSpec::TrimmedMean { alpha },
            EstimatorChoice::TrimmedMean(TrimLevel::Budget { delta }) => {
                EstimatorSpec::TrimmedMean { alpha: alpha_from_budget(CorruptionBudget { eta: self.eta, delta, n })? }
            }
            EstimatorChoice::CoordMom { blocks } => EstimatorSpec::CoordMom { blocks },
            EstimatorChoice::GroupGeometricMom { blocks } => EstimatorSpec::GroupGeometricMom { blocks },
            EstimatorChoice::CmMom { blocks, scale } => EstimatorSpec::CmMom { blocks, scale },
        })
    }

    pub fn run_options(&self, seed: u64) -> RunOptions {
        RunOptions {
            theta0: None,
            truth: None,
            validation_fraction: self.validation_fraction,
            holdout: self.holdout,
            split_batches: self.split_batches,
            alpha_obj: self.alpha_obj,
            record_every: self.record_every,
            seed,
        }
    }

    /// Aggregate file path: `aggregate_out`, or `<out stem>_aggregate.csv`.
    pub fn aggregate_path(&self) -> PathBuf {
        if let Some(p) = &self.aggregate_out {
            return p.clone();
        }
        let stem = self.out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "results".into());
        self.out.with_file_name(format!("{stem}_aggregate.csv"))
    }
}
