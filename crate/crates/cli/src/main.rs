use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use bicmppi::closed_loop::Algorithm;
use bicmppi::environment::MapSpec;
use bicmppi::experiment::{
    format_summary_csv, format_summary_jsonl, read_trials, run_suite, summarize, write_generated_maps,
    write_outputs, ExperimentConfig, MapSource,
};
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "bicmppi", version, about = "Benchmark harness for MPPI-family planners")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate obstacle maps into a directory.
    GenMaps {
        #[arg(long)]
        count: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        obstacles: Option<usize>,
        #[arg(long)]
        resolution: Option<f64>,
        #[arg(long)]
        inflate: Option<f64>,
    },
    /// Run an experiment suite.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Replace the configured algorithm list (comma-separated).
        #[arg(long)]
        algo: Option<String>,
        /// Read maps from this directory instead of the configured source.
        #[arg(long)]
        maps: Option<PathBuf>,
        #[arg(long, default_value = "results")]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Summarize the trials of a finished run.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Csv)]
        format: Format,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Jsonl,
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenMaps {
            count,
            seed,
            out,
            obstacles,
            resolution,
            inflate,
        } => {
            let defaults = MapSpec::default();
            let spec = MapSpec {
                obstacle_count: obstacles.unwrap_or(defaults.obstacle_count),
                resolution: resolution.unwrap_or(defaults.resolution),
                inflation_radius: inflate.unwrap_or(defaults.inflation_radius),
                rng_seed: seed,
                ..defaults
            };
            let paths = write_generated_maps(&out, count, &spec)?;
            println!("wrote {} maps to {}", paths.len(), out.display());
        }
        Command::Run {
            config,
            algo,
            maps,
            out,
            seed,
        } => {
            let mut cfg = ExperimentConfig::load(&config)
                .with_context(|| format!("loading config {}", config.display()))?;
            if let Some(list) = algo {
                cfg.algorithms = list
                    .split(',')
                    .map(|a| a.trim().parse::<Algorithm>())
                    .collect::<Result<_, _>>()?;
            }
            if let Some(dir) = maps {
                cfg.maps = MapSource::Directory(dir);
            }
            if let Some(s) = seed {
                if let MapSource::Generate { spec, .. } = &mut cfg.maps {
                    if !cfg.explicit_keys.contains("map_seed") {
                        spec.rng_seed = s;
                    }
                }
                cfg.seed = s;
            }
            let output = run_suite(&cfg)?;
            write_outputs(&out, cfg.model, &output, cfg.dump_trajectories)
                .with_context(|| format!("writing results to {}", out.display()))?;
            print!("{}", format_summary_csv(&output.summary));
        }
        Command::Report { input, format } => {
            let trials = read_trials(&input).with_context(|| format!("reading trials from {}", input.display()))?;
            if trials.is_empty() {
                bail!("no trials in {}", input.display());
            }
            let report = summarize(&trials);
            match format {
                Format::Csv => print!("{}", format_summary_csv(&report)),
                Format::Jsonl => print!("{}", format_summary_jsonl(&report)?),
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
