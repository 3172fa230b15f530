//! Batch experiments over the teleoperation simulator: run a spec, extract
//! metrics, compare conditions statistically and emit plot data.
//!
//! Output tree under `--out`:
//!
//! ```text
//! manifest.json
//! traces/{run_id}.states.csv, traces/{run_id}.packets.csv
//! metrics/metrics.csv, metrics/timing_{condition}_{l2f|f2l}.csv
//! stats/stats_report.csv, stats/stats_report.txt
//! plotdata/boxplot_{epsilon|epsilon_dot}.csv, plotdata/hist_{t_send|t_recv}_{l2f|f2l}.csv
//! ```

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

pub mod manifest;
pub mod pipeline;
pub mod spec;

pub use pipeline::{cmd_all, cmd_metrics, cmd_plotdata, cmd_run, cmd_stats, Outcome};
pub use spec::ExperimentSpec;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_PARTIAL: i32 = 2;
pub const EXIT_ANALYSIS: i32 = 3;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("invalid spec: {0}")]
    Config(String),

    #[error("{0}")]
    Analysis(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Core(#[from] teleop_core::Error),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => EXIT_USAGE,
            _ => EXIT_ANALYSIS,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "teleop", version, about = "Teleoperation transport benchmark harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate every run of a spec and write traces plus manifest.
    Run(RunArgs),
    /// Error indices and timing tables from the traces.
    Metrics(OutArgs),
    /// Friedman and pairwise Wilcoxon tests per metric.
    Stats(StatsArgs),
    /// Boxplot summaries and delay histograms.
    Plotdata(OutArgs),
    /// run, metrics, stats and plotdata in sequence.
    All(AllArgs),
}

#[derive(Debug, Args)]
struct RunArgs {
    #[arg(long)]
    spec: PathBuf,
    /// Output directory; defaults to the spec's `experiment.output`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Parallel simulations (default: available cores).
    #[arg(long)]
    jobs: Option<usize>,
    /// Override the spec's master seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct OutArgs {
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct StatsArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
}

#[derive(Debug, Args)]
struct AllArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
}

fn default_jobs() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn resolve_out(args: &RunArgs) -> Result<(ExperimentSpec, PathBuf), CliError> {
    let spec = ExperimentSpec::load(&args.spec)?;
    let out = match (&args.out, &spec.experiment.output) {
        (Some(o), _) => o.clone(),
        (None, Some(o)) => args.spec.parent().unwrap_or(Path::new(".")).join(o),
        (None, None) => return Err(CliError::Usage("no --out given and the spec sets no experiment.output".into())),
    };
    Ok((spec, out))
}

fn finish(result: Result<Outcome, CliError>) -> i32 {
    match result {
        Ok(outcome) => outcome.code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Parse `args` (including the program name) and execute. Returns the
/// process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match cli.command {
        Command::Run(a) => finish(resolve_out(&a).and_then(|(spec, out)| {
            cmd_run(&spec, &out, a.jobs.unwrap_or_else(default_jobs), a.seed)
        })),
        Command::Metrics(a) => finish(cmd_metrics(&a.out)),
        Command::Stats(a) => finish(cmd_stats(&a.out, a.alpha)),
        Command::Plotdata(a) => finish(cmd_plotdata(&a.out)),
        Command::All(a) => finish(resolve_out(&a.run).and_then(|(spec, out)| {
            cmd_all(&spec, &out, a.run.jobs.unwrap_or_else(default_jobs), a.run.seed, a.alpha)
        })),
    }
}
