//! `nestseg` command-line driver.
//!
//! Exit codes: 0 on success, 1 on configuration or usage errors, 2 on runtime
//! errors.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nestseg::config::ExperimentConfig;
use nestseg::harness;
use nestseg::Error;

#[derive(Debug, Parser)]
#[command(name = "nestseg", version, about = "Nested-class segmentation experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train one model and write a checkpoint and its validation curve.
    Train(Common),
    /// Cross-validated comparison of all configured methods.
    Benchmark(Common),
    /// Label one PGM image with a trained checkpoint.
    Predict {
        #[command(flatten)]
        common: Common,
        /// Checkpoint written by `train`; its `.ini` sidecar must sit next to it.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        image: Option<PathBuf>,
        /// Comma-separated ordinal thresholds, e.g. `0.5,1.4`.
        #[arg(long, value_delimiter = ',')]
        thresholds: Option<Vec<f64>>,
    },
    /// Export the synthetic dataset as PGM files.
    GenData(Common),
}

#[derive(Debug, Args)]
struct Common {
    /// INI configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Print the effective configuration and exit.
    #[arg(long)]
    print_defaults: bool,
}

enum Failure {
    Config(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_config() {
            Failure::Config(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

fn load_config(common: &Common) -> Result<ExperimentConfig, Failure> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::parse_file(path).map_err(|e| Failure::Config(e.to_string()))?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.master_seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.output_dir = out.clone();
    }
    cfg.validate().map_err(|e| Failure::Config(e.to_string()))?;
    Ok(cfg)
}

fn required<'a>(value: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path, Failure> {
    value
        .as_deref()
        .ok_or_else(|| Failure::Config(format!("predict needs --{flag}")))
}

fn fmt_iterations(it: Option<usize>) -> String {
    it.map_or_else(|| "not reached".to_string(), |i| i.to_string())
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Train(common) => {
            let cfg = load_config(&common)?;
            if common.print_defaults {
                print!("{}", cfg.to_ini());
                return Ok(());
            }
            let summary = harness::cmd_train(&cfg)?;
            if let Some((it, dice)) = summary.curve.last() {
                println!("final validation dice (class {}) at {it}: {dice:.4}", cfg.scene.m);
            }
            println!("iterations to {}: {}", harness::TARGET_DICE, fmt_iterations(summary.iterations_to_target));
            println!("checkpoint: {}", summary.checkpoint.display());
        }
        Command::Benchmark(common) => {
            let cfg = load_config(&common)?;
            if common.print_defaults {
                print!("{}", cfg.to_ini());
                return Ok(());
            }
            let report = harness::run_benchmark(&cfg)?;
            print!("{}", harness::summary(&report));
            for row in &report.wilcoxon {
                let p = row.p_value.map_or_else(|| "NA".to_string(), |p| format!("{p:.4}"));
                println!("{} vs {} ({}): n={} p={p}", row.method, row.baseline, row.thresholds, row.n);
            }
            println!("results: {}", cfg.output_dir.display());
        }
        Command::Predict {
            common,
            checkpoint,
            image,
            thresholds,
        } => {
            if common.print_defaults {
                print!("{}", load_config(&common)?.to_ini());
                return Ok(());
            }
            let checkpoint = required(&checkpoint, "checkpoint")?;
            let image = required(&image, "image")?;
            let out = common.out.clone().unwrap_or_else(|| PathBuf::from("."));
            let summary = harness::cmd_predict(checkpoint, image, thresholds.as_deref(), &out)?;
            for (c, n) in summary.counts.iter().enumerate() {
                println!("class {c}: {n} px");
            }
            println!("violations: {}", summary.violations);
            if let Some(th) = &summary.thresholds {
                println!("thresholds: {:?}", th.as_slice());
            }
            println!("labels: {}", summary.labels.display());
            println!("activation: {}", summary.activation.display());
        }
        Command::GenData(common) => {
            let cfg = load_config(&common)?;
            if common.print_defaults {
                print!("{}", cfg.to_ini());
                return Ok(());
            }
            let manifest = harness::cmd_gen_data(&cfg)?;
            println!("wrote {} image pairs to {}", manifest.pairs.len(), cfg.output_dir.join("data").display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("nestseg: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("nestseg: {msg}");
            ExitCode::from(2)
        }
    }
}
