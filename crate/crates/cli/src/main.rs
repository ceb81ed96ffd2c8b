//! `isopsm` command-line front end.
//!
//! Exit codes: 0 success, 2 usage error, 3 data error, 4 numerical failure.

mod commands;
mod input;
mod output;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use isopsm::pipeline::EstimatorKind;
use isopsm::Link;

const DEFAULT_SEED: u64 = 20_240_101;
const ALL_ESTIMATORS: &str = "pava-mle,pava-sse,para,psm:3,psm:5,psm:10,psm:15";

#[derive(Parser, Debug)]
#[command(
    name = "isopsm",
    version,
    about = "Isotonic propensity score estimators of treatment effects"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Estimate the index direction and the step propensity.
    Fit(FitArgs),
    /// Point estimates of every selected estimator, optionally bootstrapped.
    Att(EstimateArgs),
    /// Like `att`, with the percentile bootstrap on by default.
    Bootstrap(EstimateArgs),
    /// Monte Carlo study over the simulation design.
    Simulate(SimulateArgs),
    /// Fitted propensities against the estimated index, for plotting.
    ExportSteps(FitArgs),
}

#[derive(Args, Debug)]
struct DataArgs {
    /// CSV with header `y,d,x1,...,xd`.
    #[arg(long)]
    input: PathBuf,
    /// Covariate set used by every first stage.
    #[arg(long, value_enum, default_value_t = Features::Linear)]
    features: Features,
}

#[derive(Args, Debug)]
struct OutputArgs {
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
}

#[derive(Args, Debug)]
struct FitArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_enum, default_value_t = IndexChoice::Mle)]
    index_method: IndexChoice,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args, Debug)]
struct EstimateArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Comma-separated estimators: pava-mle, pava-sse, para, psm:M.
    #[arg(long, default_value = ALL_ESTIMATORS, value_parser = parse_estimators)]
    estimators: Estimators,
    #[arg(long, value_enum, default_value_t = TargetChoice::Att)]
    target: TargetChoice,
    /// Bootstrap replicates per estimator (0 disables; `bootstrap` defaults to 1000).
    #[arg(long = "bootstrap", value_name = "B")]
    b: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// Restrict to one outcome model (1 or 2); all by default.
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
    model: Option<u8>,
    /// Restrict to one power a (1 or 2).
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
    a: Option<u8>,
    /// Restrict to one sign b (1 or -1).
    #[arg(long, allow_negative_numbers = true, value_parser = parse_sign)]
    b: Option<i8>,
    #[arg(long, value_enum, default_value_t = LinkChoice::Logistic)]
    link: LinkChoice,
    #[arg(long, default_value_t = 500)]
    n: usize,
    #[arg(long = "reps", value_name = "R", default_value_t = 1000)]
    reps: usize,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    seed: u64,
    #[arg(long, default_value = ALL_ESTIMATORS, value_parser = parse_estimators)]
    estimators: Estimators,
    /// Covariate draws used to integrate the true ATT.
    #[arg(long, default_value_t = 4_000_000)]
    oracle_n: usize,
    /// Table file; a sidecar in the other format is written next to it.
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Clone, Debug)]
struct Estimators(Vec<EstimatorKind>);

fn parse_estimators(s: &str) -> Result<Estimators, String> {
    let kinds = EstimatorKind::parse_list(s)?;
    if kinds.is_empty() {
        return Err("no estimators selected".into());
    }
    Ok(Estimators(kinds))
}

fn parse_sign(s: &str) -> Result<i8, String> {
    match s {
        "1" | "+1" => Ok(1),
        "-1" => Ok(-1),
        _ => Err(format!("`{s}` is not a valid sign (valid: 1, -1)")),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Features {
    Linear,
    Quadratic,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum IndexChoice {
    Mle,
    Sse,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum TargetChoice {
    Att,
    Mu1,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum LinkChoice {
    Logistic,
    Probit,
}

impl From<LinkChoice> for Link {
    fn from(l: LinkChoice) -> Self {
        match l {
            LinkChoice::Logistic => Link::Logistic,
            LinkChoice::Probit => Link::Probit,
        }
    }
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    Io(std::io::Error),
    /// A library error with a short description of what was being done.
    Core(isopsm::Error, String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data(_) | CliError::Io(_) => 3,
            CliError::Core(e, _) => core_exit_code(e),
        }
    }
}

pub fn core_exit_code(e: &isopsm::Error) -> u8 {
    if e.is_numerical() {
        4
    } else if matches!(e, isopsm::Error::InvalidArgument(_)) {
        2
    } else {
        3
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Data(m) => f.write_str(m),
            CliError::Io(e) => write!(f, "i/o error: {e}"),
            CliError::Core(e, context) => write!(f, "{context}: {e}"),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e)
    }
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(value) = std::env::var("ISOPSM_THREADS") else {
        return Ok(());
    };
    let threads: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&t| t >= 1)
        .ok_or_else(|| CliError::Usage(format!("ISOPSM_THREADS must be a positive integer, got `{value}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| CliError::Usage(format!("cannot configure worker pool: {e}")))
}

fn run(cli: Cli) -> Result<(), CliError> {
    configure_threads()?;
    match cli.command {
        Command::Fit(args) => commands::fit(&args),
        Command::Att(args) => commands::estimate("att", &args, args.b.unwrap_or(0)),
        Command::Bootstrap(args) => commands::estimate("bootstrap", &args, args.b.unwrap_or(1000)),
        Command::Simulate(args) => commands::simulate(&args),
        Command::ExportSteps(args) => commands::export_steps(&args),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
