use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use vaml_core::calibration::suite::run_suite;
use vaml_core::envs::{generate_garnet, GarnetSpec};
use vaml_core::harness::output::ExperimentRecord;
use vaml_core::harness::{emit_results, format_summary, run_pi_sweep, run_sweep, summarize, PiConfig, SweepConfig};
use vaml_core::mdp::exact_value;

const SUMMARY_RESAMPLES: usize = 2000;

#[derive(Parser)]
#[command(name = "vaml", version, about = "Value-aware model learning experiments on finite MDPs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the calibration and oracle checks; exits non-zero on any failure.
    Verify,
    /// Value-estimation sweep over Garnet problems.
    GarnetSweep(SweepArgs),
    /// Approximate policy iteration on the slippery cliffwalk.
    CliffwalkPi(SweepArgs),
    /// Print the exact value function of one Garnet problem.
    Exact {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        tau: f64,
        /// Successors per state; defaults to min(10, n).
        #[arg(long)]
        k: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.9)]
        discount: f64,
    },
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Worker threads; defaults to the available parallelism.
    #[arg(long)]
    jobs: Option<usize>,
    /// Overrides the config's master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Print per-cell means with 95% bootstrap intervals.
    #[arg(long)]
    summary: bool,
}

impl SweepArgs {
    fn jobs(&self) -> usize {
        self.jobs
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Verify => verify(),
        Command::GarnetSweep(args) => {
            let mut config = SweepConfig::load(&args.config)?;
            if let Some(seed) = args.seed {
                config.master_seed = seed;
            }
            let records = run_sweep(&config, args.jobs())?;
            finish(&records, &args, "value_mse", config.master_seed)
        }
        Command::CliffwalkPi(args) => {
            let mut config = PiConfig::load(&args.config)?;
            if let Some(seed) = args.seed {
                config.master_seed = seed;
            }
            let records = run_pi_sweep(&config, args.jobs())?;
            finish(&records, &args, "return", config.master_seed)
        }
        Command::Exact { n, tau, k, seed, discount } => {
            let mdp = generate_garnet(&GarnetSpec {
                n_states: n,
                n_successors: k.unwrap_or(n.min(10)),
                temperature: tau,
                discount,
                seed,
            })?;
            for (state, value) in exact_value(&mdp)?.iter().enumerate() {
                println!("{state}\t{value}");
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn verify() -> Result<ExitCode> {
    let outcomes = run_suite()?;
    let mut all_passed = true;
    for outcome in &outcomes {
        let status = if outcome.passed { "PASS" } else { "FAIL" };
        println!("{status}  {:<12} {}", outcome.name, outcome.detail);
        all_passed &= outcome.passed;
    }
    Ok(if all_passed { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn finish(records: &[ExperimentRecord], args: &SweepArgs, metric: &str, seed: u64) -> Result<ExitCode> {
    emit_results(records, &args.out).with_context(|| format!("writing {}", args.out.display()))?;
    let summaries = summarize(records, metric, SUMMARY_RESAMPLES, seed);
    let report = format_summary(&summaries, metric);
    if args.summary {
        print!("{report}");
    } else if let Some(last) = report.lines().last() {
        println!("{last}");
    }
    Ok(ExitCode::SUCCESS)
}
