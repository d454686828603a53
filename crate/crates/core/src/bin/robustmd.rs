use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use robustmd::bench::{self, exit, parse_override, write_detail, DataSource, ExperimentConfig};
use robustmd::datagen::save_csv;
use robustmd::Error;

#[derive(Parser)]
#[command(name = "robustmd", version, about = "Robust sparse linear learning: data generation, fitting and benchmarks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a (possibly corrupted) synthetic dataset as CSV.
    Generate(Common),
    /// Run a single fit and write its trace.
    Fit(Common),
    /// Run repeated fits and write detail and aggregate CSV files.
    Bench {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        repeats: Option<usize>,
    },
}

#[derive(Args)]
struct Common {
    /// Flat key = value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override a configuration key (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

fn load(common: &Common, extra: &[(String, String)]) -> Result<ExperimentConfig, Error> {
    let text = match &common.config {
        Some(path) => std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?,
        None => String::new(),
    };
    let mut overrides = common.set.iter().map(|s| parse_override(s)).collect::<Result<Vec<_>, _>>()?;
    if let Some(seed) = common.seed {
        overrides.push(("seed".into(), seed.to_string()));
    }
    if let Some(out) = &common.out {
        overrides.push(("out".into(), out.display().to_string()));
    }
    overrides.extend_from_slice(extra);
    ExperimentConfig::parse(&text, &overrides)
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}_{suffix}.csv"))
}

fn generate(common: &Common) -> Result<i32, Error> {
    let config = load(common, &[])?;
    if !matches!(config.data, DataSource::Synthetic(_)) {
        return Err(Error::Config("generate needs data = synthetic".into()));
    }
    let dataset = bench::dataset_for(&config, config.seed).map_err(|e| match e {
        Error::Io(_) => e,
        other => Error::Config(other.to_string()),
    })?;
    save_csv(&dataset, &config.out)?;
    if let Some(theta) = &dataset.theta_star {
        let text: String = theta.iter().map(|v| format!("{v:.16e}\n")).collect();
        std::fs::write(sibling(&config.out, "theta"), text)?;
    }
    println!("wrote {} samples x {} features to {}", dataset.n(), dataset.dim(), config.out.display());
    Ok(exit::OK)
}

fn fit(common: &Common) -> Result<i32, Error> {
    let config = load(common, &[("repeats".into(), "1".into())])?;
    let report = bench::run_experiment(&config)?;
    write_detail(&report, std::io::BufWriter::new(std::fs::File::create(&config.out)?))?;
    let run = &report.runs[0];
    if let Some(e) = &run.error {
        eprintln!("error: {e}");
        return Ok(exit::NUMERICAL);
    }
    let theta = run.theta.as_ref().expect("successful run has an estimate");
    let last = run.trace.records.last().expect("trace starts with the initial point");
    println!("stages: {}", run.trace.stage_lengths.len());
    println!("iterations: {}", last.iter);
    println!("nonzeros: {}", theta.iter().filter(|v| **v != 0.0).count());
    println!("objective: {}", bench::format_value(last.metrics.objective));
    if let Some(e) = last.metrics.l2_error {
        println!("l2_error: {}", bench::format_value(e));
    }
    let text: String = theta.iter().map(|v| format!("{v:.16e}\n")).collect();
    std::fs::write(sibling(&config.out, "theta"), text)?;
    Ok(exit::OK)
}

fn run_bench(common: &Common, repeats: Option<usize>) -> Result<i32, Error> {
    let extra: Vec<(String, String)> = repeats.map(|r| ("repeats".to_string(), r.to_string())).into_iter().collect();
    let config = load(common, &extra)?;
    let (report, code) = bench::bench(&config)?;
    match report.failure() {
        Some(run) => eprintln!("error: repeat {} failed: {}", run.run_id, run.error.as_ref().expect("failed run")),
        None => println!(
            "{} repeats written to {} and {}",
            report.runs.len(),
            config.out.display(),
            config.aggregate_path().display()
        ),
    }
    Ok(code)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Generate(common) => generate(common),
        Command::Fit(common) => fit(common),
        Command::Bench { common, repeats } => run_bench(common, *repeats),
    };
    let code = match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            bench::exit_code(&e)
        }
    };
    ExitCode::from(code as u8)
}
