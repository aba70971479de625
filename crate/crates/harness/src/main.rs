use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use robcomp_harness::error::{HarnessError, Result};
use robcomp_harness::metrics::{aggregate_trials, log_checkpoints, read_trace, write_aggregate, Metric};
use robcomp_harness::selftest::selftest;
use robcomp_harness::{run_experiment, ExperimentConfig};

/// Robust stochastic compositional optimization experiments.
#[derive(Parser)]
#[command(name = "robcomp", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment from a TOML config.
    Run {
        #[arg(long)]
        config: PathBuf,
    },
    /// Aggregate trace CSVs matching a glob pattern into `samples,mean,std`.
    Aggregate {
        #[arg(long)]
        glob: String,
        /// Write here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum)]
        metric: Option<MetricArg>,
        #[arg(long, default_value_t = robcomp_harness::config::DEFAULT_CHECKPOINTS)]
        checkpoints: usize,
        /// Last checkpoint; defaults to the largest sample count seen.
        #[arg(long)]
        budget: Option<u64>,
    },
    /// Run built-in sanity checks.
    Selftest,
}

#[derive(Clone, Copy, ValueEnum)]
enum MetricArg {
    Gap,
    Mse,
}

fn aggregate(
    pattern: &str,
    out: Option<PathBuf>,
    metric: Option<MetricArg>,
    checkpoints: usize,
    budget: Option<u64>,
) -> Result<()> {
    let paths: Vec<PathBuf> = glob::glob(pattern)
        .map_err(|e| HarnessError::Usage(format!("bad glob {pattern:?}: {e}")))?
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| HarnessError::Data(e.to_string()))?;
    if paths.is_empty() {
        return Err(HarnessError::Data(format!("no files match {pattern:?}")));
    }
    let traces = paths
        .iter()
        .map(|p| read_trace(File::open(p)?).map_err(|e| HarnessError::Data(format!("{}: {e}", p.display()))))
        .collect::<Result<Vec<_>>>()?;
    let metric = match metric {
        Some(MetricArg::Gap) => Metric::Gap,
        Some(MetricArg::Mse) => Metric::Mse,
        None => Metric::detect(&traces),
    };
    let budget = budget.unwrap_or_else(|| traces.iter().flatten().map(|r| r.samples).max().unwrap_or(0).max(1));
    let rows = aggregate_trials(&traces, &log_checkpoints(budget, checkpoints), metric);
    match out {
        Some(p) => write_aggregate(&rows, BufWriter::new(File::create(p)?)),
        None => write_aggregate(&rows, io::stdout().lock()),
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            run_experiment(&cfg).map(|_| ())
        }
        Command::Aggregate {
            glob,
            out,
            metric,
            checkpoints,
            budget,
        } => aggregate(&glob, out, metric, checkpoints, budget),
        Command::Selftest => {
            let lines = selftest()?;
            let mut stdout = io::stdout().lock();
            for l in lines {
                let _ = writeln!(stdout, "{l}");
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
