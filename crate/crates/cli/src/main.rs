use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rankcp::experiment::io::{write_outputs, write_population_csv, write_predictions_csv};
use rankcp::experiment::{generate_dataset, load_external, run_experiment, run_sweep, ExperimentConfig, GeneratorKind};
use rankcp::{verify, Error, Result};

/// Conformal prediction sets for full rankings: data generation, benchmark
/// runs, sweeps and exact small-instance checks.
#[derive(Parser)]
#[command(name = "rankcp", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write one synthetic population and its predictions as CSV.
    Gen(ConfigArgs),
    /// Run all trials at a single configuration.
    Run(ConfigArgs),
    /// Run a sweep over the one axis given several values.
    Sweep(ConfigArgs),
    /// Exhaustive checks on small populations.
    Verify {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args)]
struct ConfigArgs {
    /// Flat `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    alpha: Option<String>,
    #[arg(long)]
    n: Option<String>,
    #[arg(long)]
    m: Option<String>,
    #[arg(long)]
    trials: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    methods: Option<String>,
    #[arg(long)]
    score: Option<String>,
    #[arg(long)]
    envelope: Option<String>,
    #[arg(long)]
    delta: Option<String>,
    #[arg(long = "K")]
    sim_count: Option<String>,
    #[arg(long)]
    out_dir: Option<String>,
    #[arg(long)]
    parallelism: Option<String>,
    /// Any other config key, as `key=value`; may be repeated.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    extra: Vec<String>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::from_file(path)?,
            None => ExperimentConfig::default(),
        };
        for pair in &self.extra {
            let (key, value) = pair
                .split_once('=')
                .ok_or_else(|| Error::Config {
                    field: pair.clone(),
                    message: "expected KEY=VALUE".into(),
                })?;
            cfg.set(key.trim(), value.trim())?;
        }
        // envelope before methods so a bare `tcpr` picks it up
        let overrides = [
            ("envelope", &self.envelope),
            ("alpha", &self.alpha),
            ("n", &self.n),
            ("m", &self.m),
            ("trials", &self.trials),
            ("seed", &self.seed),
            ("methods", &self.methods),
            ("score", &self.score),
            ("delta", &self.delta),
            ("K", &self.sim_count),
            ("out_dir", &self.out_dir),
            ("parallelism", &self.parallelism),
        ];
        for (key, value) in overrides {
            if let Some(v) = value {
                cfg.set(key, v)?;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn gen(cfg: &ExperimentConfig) -> Result<()> {
    let data = generate_dataset(cfg)?;
    let dir = &cfg.out_dir;
    std::fs::create_dir_all(dir)?;
    write_population_csv(&dir.join("population.csv"), &data.population)?;
    write_predictions_csv(&dir.join("predictions.csv"), &data.preds)?;
    let metadata = serde_json::json!({
        "seed": cfg.seed,
        "score": data.preds.kind(),
        "ridge": data.ridge,
        "config": cfg,
    });
    write_json(&dir.join("metadata.json"), &metadata)?;
    println!("wrote {} items to {}", data.population.total(), dir.display());
    Ok(())
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    let mut f = File::create(path)?;
    serde_json::to_writer_pretty(&mut f, value)?;
    writeln!(f)?;
    Ok(())
}

fn run(cfg: &ExperimentConfig, sweep: bool) -> Result<()> {
    let output = if sweep { run_sweep(cfg)? } else { run_experiment(cfg)? };
    let external = match cfg.generator {
        GeneratorKind::External => Some(load_external(
            cfg.population.as_deref().expect("validated"),
            cfg.predictions.as_deref().expect("validated"),
            cfg.score,
        )?),
        _ => None,
    };
    write_outputs(&cfg.out_dir, &output, external.as_ref())?;
    for point in &output.points {
        if let Some(v) = point.axis_value {
            println!("{} = {v}", output.axis.map(|a| a.key()).unwrap_or(""));
        }
        for s in &point.summaries {
            let coverage = s.coverage_mean.map(|c| format!("{c:.4}")).unwrap_or_else(|| "n/a".into());
            println!(
                "  {:<18} coverage {coverage}  rel_length {:.4}  inf thresholds {}",
                s.name, s.rel_length_mean, s.inf_threshold_count
            );
        }
    }
    println!("results in {}", cfg.out_dir.display());
    Ok(())
}

fn verify_all(seed: u64) -> Result<bool> {
    let checks = verify::run_all(seed)?;
    for check in &checks {
        println!("{check}");
    }
    let failed = checks.iter().filter(|c| !c.passed).count();
    println!("{} checks, {failed} failed", checks.len());
    Ok(failed == 0)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match &cli.command {
        Command::Gen(args) => args.resolve().and_then(|cfg| gen(&cfg)),
        Command::Run(args) => args.resolve().and_then(|cfg| run(&cfg, false)),
        Command::Sweep(args) => args.resolve().and_then(|cfg| run(&cfg, true)),
        Command::Verify { seed } => match verify_all(*seed) {
            Ok(true) => Ok(()),
            Ok(false) => return ExitCode::from(3),
            Err(e) => Err(e),
        },
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
