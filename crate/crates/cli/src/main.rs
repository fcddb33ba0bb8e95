//! `bdprem`: fit, simulate and summarise birth-death Poisson random-effects
//! models from the command line.

use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use bdprem::bd::{pmf, BdParams};
use bdprem::config::load_fit_config;
use bdprem::output::{
    create_file, load_profile, load_responses, write_mrse, write_predictions, write_study_report, write_summary,
};
use bdprem::report::{mrse_decomposition, predict_group_trajectory, summarize_trace, DEFAULT_LAMBDA_BREAKS};
use bdprem::simulation::{load_scenario, replicate_study, write_replicate};
use bdprem::trace_io::read_trace_dir;
use bdprem::{Error, Result};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(name = "bdprem", version, about = "Poisson random-effects models with birth-death reporting error")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a model described by a config file.
    Fit {
        #[arg(long)]
        config: PathBuf,
        /// Overrides the data path in the config.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        iterations: Option<u64>,
        #[arg(long)]
        burn_in: Option<u64>,
        #[arg(long)]
        thin: Option<u64>,
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides the output directory in the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a replicated simulation study.
    Simulate {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        replicates: Option<usize>,
        #[arg(long)]
        iterations: Option<u64>,
        #[arg(long)]
        burn_in: Option<u64>,
        #[arg(long)]
        thin: Option<u64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the reporting distribution P(Y = y | Z = z) as CSV.
    BdPmf {
        #[arg(long)]
        z: u64,
        #[arg(long)]
        lambda: f64,
        #[arg(long)]
        max_y: u64,
    },
    /// Posterior means, SDs and equal-tailed intervals of a stored trace.
    Summarize {
        #[arg(long)]
        trace_dir: PathBuf,
        #[arg(long, default_value_t = 0.95)]
        level: f64,
    },
    /// Split the mean residual squared error by posterior reporting rate.
    Mrse {
        #[arg(long)]
        trace_dir: PathBuf,
        /// Data file the trace was fitted to.
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_delimiter = ',')]
        breaks: Option<Vec<f64>>,
    },
    /// Predicted mean counts for covariate profiles with zero random effect.
    Predict {
        #[arg(long)]
        trace_dir: PathBuf,
        #[arg(long)]
        profile: PathBuf,
        #[arg(long, default_value_t = 0.95)]
        level: f64,
    },
}

fn stdout_error(e: io::Error) -> Error {
    Error::Io { path: "<stdout>".into(), source: e }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Fit { config, data, iterations, burn_in, thin, seed, out } => {
            let mut cfg = load_fit_config(&config)?;
            if let Some(d) = data {
                cfg.data.path = d;
            }
            if let Some(o) = out {
                cfg.output.dir = o;
            }
            let s = &mut cfg.sampler;
            s.iterations = iterations.unwrap_or(s.iterations);
            s.burn_in = burn_in.unwrap_or(s.burn_in);
            s.thin = thin.unwrap_or(s.thin);
            s.seed = seed.unwrap_or(s.seed);
            let fit = cfg.run()?;
            cfg.write_outputs(&fit)?;
            eprintln!("wrote {} samples to {}", fit.trace.len(), cfg.output.dir.display());
        }
        Command::Simulate { scenario, replicates, iterations, burn_in, thin, seed, out } => {
            let mut sc = load_scenario(&scenario)?;
            sc.replicates = replicates.unwrap_or(sc.replicates);
            sc.seed = seed.unwrap_or(sc.seed);
            let s = &mut sc.sampler;
            s.iterations = iterations.unwrap_or(s.iterations);
            s.burn_in = burn_in.unwrap_or(s.burn_in);
            s.thin = thin.unwrap_or(s.thin);
            let study = sc.build()?;
            let report = replicate_study(&study, &|outcome| write_replicate(&out, outcome))?;
            write_study_report(create_file(&out.join("study_report.csv"))?, &report)?;
            eprintln!("wrote {} replicates to {}", study.replicates, out.display());
        }
        Command::BdPmf { z, lambda, max_y } => {
            let params = BdParams::new(z, lambda)?;
            let mut w = io::BufWriter::new(io::stdout().lock());
            writeln!(w, "y,probability").map_err(stdout_error)?;
            for y in 0..=max_y {
                writeln!(w, "{y},{}", pmf(y, &params)).map_err(stdout_error)?;
            }
            w.flush().map_err(stdout_error)?;
        }
        Command::Summarize { trace_dir, level } => {
            let trace = read_trace_dir(&trace_dir)?;
            write_summary(io::stdout().lock(), &summarize_trace(&trace, level)?)?;
        }
        Command::Mrse { trace_dir, data, breaks } => {
            let trace = read_trace_dir(&trace_dir)?;
            let y = load_responses(&data)?;
            let breaks = breaks.unwrap_or_else(|| DEFAULT_LAMBDA_BREAKS.to_vec());
            write_mrse(io::stdout().lock(), &mrse_decomposition(&y, &trace.obs_means, &breaks)?)?;
        }
        Command::Predict { trace_dir, profile, level } => {
            let trace = read_trace_dir(&trace_dir)?;
            let points = load_profile(&profile, &trace.alpha_names)?;
            write_predictions(io::stdout().lock(), &predict_group_trajectory(&trace, &points, level)?)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 2 } else { 1 })
        }
    }
}
