use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use coopcache::config::{
    load_config, parse_config, ExperimentConfig, MechanismChoice, Overrides, TrendChoice,
};
use coopcache::experiment::{coverage_for, run_baseline, run_experiment, write_coverage, Summary};
use coopcache::game::{read_trace_csv, verify_trace};
use coopcache::oracle::{cross_check, SmallInstanceSpec};
use coopcache::{Error, Result};

/// Cooperative cache placement for layered and multiple-description video.
#[derive(Parser)]
#[command(name = "coopcache", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate coverage region probabilities and write coverage.csv.
    Coverage(RunArgs),
    /// Evaluate the most-popular placement for every scenario.
    Baseline(RunArgs),
    /// Run best response dynamics from empty caches for every scenario.
    Robr(RunArgs),
    /// Check that a trace never increases the global cost.
    VerifyTrace {
        /// Trace CSV written by `robr`.
        trace: PathBuf,
    },
    /// Compare greedy best responses with exhaustive search on random
    /// small instances.
    Oracle {
        #[arg(long, default_value_t = 1000)]
        instances: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Print the normalized configuration and its hash.
    ValidateConfig {
        #[arg(long)]
        config: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    /// TOML experiment configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed_game: Option<u64>,
    #[arg(long)]
    seed_sampler: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    mechanism: Option<MechanismArg>,
    #[arg(long, value_enum)]
    trend: Option<TrendArg>,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum MechanismArg {
    Lc,
    Mdc,
    Both,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum TrendArg {
    Uniform,
    Linear,
    Inverse,
    All,
}

impl RunArgs {
    fn load(&self) -> Result<ExperimentConfig> {
        let overrides = Overrides {
            seed_game: self.seed_game,
            seed_sampler: self.seed_sampler,
            out: self.out.clone(),
            mechanism: self.mechanism.map(|m| match m {
                MechanismArg::Lc => MechanismChoice::Lc,
                MechanismArg::Mdc => MechanismChoice::Mdc,
                MechanismArg::Both => MechanismChoice::Both,
            }),
            trend: self.trend.map(|t| match t {
                TrendArg::Uniform => TrendChoice::Uniform,
                TrendArg::Linear => TrendChoice::Linear,
                TrendArg::Inverse => TrendChoice::Inverse,
                TrendArg::All => TrendChoice::All,
            }),
        };
        match &self.config {
            Some(path) => load_config(path, &overrides),
            None => parse_config("", Path::new("."), &overrides),
        }
    }
}

fn print_summary(summary: &Summary) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(summary)?);
    Ok(())
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Coverage(args) => {
            let config = args.load()?;
            let coverage = coverage_for(&config)?;
            let path = write_coverage(&config.out, &coverage)?;
            println!(
                "{} caches, {} regions, mean cardinality {:.4}; wrote {}",
                coverage.cache_count(),
                coverage.regions().len(),
                coverage.mean_cardinality(),
                path.display()
            );
        }
        Command::Baseline(args) => print_summary(&run_baseline(&args.load()?)?.summary)?,
        Command::Robr(args) => print_summary(&run_experiment(&args.load()?)?.summary)?,
        Command::VerifyTrace { trace } => {
            let file = File::open(&trace).map_err(|e| Error::Io {
                path: trace.clone(),
                source: e,
            })?;
            let check = verify_trace(&read_trace_csv(BufReader::new(file))?)?;
            let cost = |f: Option<f64>| f.map_or_else(|| "-".to_string(), |f| f.to_string());
            println!(
                "ok: {} records, {} effective updates, f {} -> {}",
                check.records,
                check.effective_updates,
                cost(check.initial_cost),
                cost(check.final_cost)
            );
        }
        Command::Oracle { instances, seed } => {
            let report = cross_check(instances, seed, SmallInstanceSpec::ORACLE)?;
            for m in &report.mismatches {
                println!(
                    "mismatch: instance {} {} cache {}: greedy {} vs exhaustive {}",
                    m.instance,
                    m.mechanism,
                    m.cache + 1,
                    m.greedy,
                    m.exhaustive
                );
            }
            println!(
                "{} instances per mechanism, {} mismatches",
                report.instances,
                report.mismatches.len()
            );
            return Ok(report.passed());
        }
        Command::ValidateConfig { config } => {
            let config = load_config(&config, &Overrides::default())?;
            println!("{}", serde_json::to_string_pretty(&config)?);
            println!("hash {}", config.content_hash());
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
