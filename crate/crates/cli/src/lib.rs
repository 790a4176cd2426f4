//! Command-line front-end: one subcommand per pipeline stage.
//!
//! [`dispatch`] parses an argument vector, runs the subcommand and returns
//! the process exit code: 0 on success, 1 on a usage error, 2 on a data
//! error (missing or malformed input, failed check).

use std::ffi::OsString;
use std::fmt;
use std::ops::RangeInclusive;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;

/// Environment variable holding the log filter, e.g. `debug`.
pub const LOG_ENV: &str = "CTXOIE_LOG";

#[derive(Debug, Parser)]
#[command(
    name = "ctxoie",
    version,
    about = "Document-level context-aware open information extraction"
)]
pub struct Cli {
    /// Worker threads for parallel stages. Results do not depend on it.
    #[arg(long, global = true, value_parser = clap::value_parser!(u16).range(1..))]
    pub threads: Option<u16>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Corpus statistics: sentence lengths, tuples per sentence, slot lengths.
    Stats(StatsArgs),
    /// Tuples from POS-tagged sentences with the pattern extractor.
    Extract(ExtractArgs),
    /// Main + fallback combination of two extraction files.
    Combine(CombineArgs),
    /// Scores predictions against gold tuples.
    Score(ScoreArgs),
    /// Agreement between two annotation files.
    Consistency(ConsistencyArgs),
    /// Builds `[source; context]` training examples from labeled sentences.
    Windows(WindowsArgs),
    /// Trains a model on training examples.
    Train(TrainArgs),
    /// Extracts tuples with a trained model.
    Predict(PredictArgs),
    /// Compares analytic and finite-difference gradients.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DocFormatArg {
    Jsonl,
    Plain,
}

impl From<DocFormatArg> for ctxoie::corpus::DocFormat {
    fn from(f: DocFormatArg) -> Self {
        match f {
            DocFormatArg::Jsonl => ctxoie::corpus::DocFormat::Jsonl,
            DocFormatArg::Plain => ctxoie::corpus::DocFormat::Plain,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Graded,
    Lenient,
}

impl From<ModeArg> for ctxoie::scorer::MatchMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Graded => ctxoie::scorer::MatchMode::TokenGraded,
            ModeArg::Lenient => ctxoie::scorer::MatchMode::BinaryLenient,
        }
    }
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[arg(long)]
    pub docs: PathBuf,
    #[arg(long, value_enum, default_value = "jsonl")]
    pub format: DocFormatArg,
    /// Gold tuples; without them every sentence counts.
    #[arg(long)]
    pub gold: Option<PathBuf>,
    /// JSON report path; printed to stdout when absent.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    /// Tagged CoNLL file (`# doc=<id> sent=<idx>` headers, `token<TAB>tag`).
    #[arg(long, required_unless_present = "docs", conflicts_with = "docs")]
    pub conll: Option<PathBuf>,
    /// JSONL documents carrying a `tags` field.
    #[arg(long)]
    pub docs: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CombineArgs {
    #[arg(long)]
    pub main: PathBuf,
    #[arg(long)]
    pub fallback: PathBuf,
    /// Documents defining the sentence universe.
    #[arg(long)]
    pub universe: PathBuf,
    #[arg(long, value_enum, default_value = "jsonl")]
    pub format: DocFormatArg,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub pred: PathBuf,
    #[arg(long)]
    pub gold: PathBuf,
    #[arg(long, value_enum, default_value = "lenient")]
    pub mode: ModeArg,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ConsistencyArgs {
    #[arg(long)]
    pub a: PathBuf,
    #[arg(long)]
    pub b: PathBuf,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct WindowsArgs {
    #[arg(long)]
    pub docs: PathBuf,
    #[arg(long, value_enum, default_value = "jsonl")]
    pub format: DocFormatArg,
    /// Labeled tuples: a combined file or a plain extraction file.
    #[arg(long)]
    pub labels: PathBuf,
    /// Context sentences on each side.
    #[arg(long, default_value_t = 5)]
    pub t: usize,
    #[arg(long, default_value_t = ctxoie::context::DEFAULT_MAX_LEN)]
    pub max_len: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Training examples (JSONL).
    #[arg(long)]
    pub data: PathBuf,
    /// Run configuration (JSON); defaults apply when absent.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides both the initialization and the training seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Writes `epoch_<n>.json` after every epoch.
    #[arg(long)]
    pub checkpoint_dir: Option<PathBuf>,
    /// Per-epoch losses as JSON.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub docs: PathBuf,
    #[arg(long, value_enum, default_value = "jsonl")]
    pub format: DocFormatArg,
    /// Context sentences on each side.
    #[arg(long, required_unless_present = "sweep_t", conflicts_with = "sweep_t")]
    pub t: Option<usize>,
    /// Window sizes `a..b` (inclusive); predicts and scores once per size.
    #[arg(long, value_parser = parse_range)]
    pub sweep_t: Option<RangeInclusive<usize>>,
    /// Beam width; the model's configured width when absent.
    #[arg(long)]
    pub beam: Option<usize>,
    /// Prediction file for a single `--t`.
    #[arg(long, required_unless_present = "sweep_t")]
    pub out: Option<PathBuf>,
    /// Output directory for a sweep.
    #[arg(long, required_unless_present = "t")]
    pub out_dir: Option<PathBuf>,
    /// Gold tuples for sweep scoring.
    #[arg(long, required_unless_present = "t")]
    pub gold: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "lenient")]
    pub mode: ModeArg,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Run configuration; only its model section is used.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Examples to check; a built-in example when absent.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Number of examples taken from `--data`.
    #[arg(long, default_value_t = 3)]
    pub n: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub eps: f64,
    /// Largest accepted relative error.
    #[arg(long, default_value_t = 1e-4)]
    pub tol: f64,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

/// `a..b` or `a..=b`, both inclusive.
fn parse_range(s: &str) -> Result<RangeInclusive<usize>, String> {
    let (a, b) = s
        .split_once("..")
        .ok_or_else(|| format!("expected a..b, got '{s}'"))?;
    let b = b.strip_prefix('=').unwrap_or(b);
    let a: usize = a
        .trim()
        .parse()
        .map_err(|_| format!("bad range start '{a}'"))?;
    let b: usize = b
        .trim()
        .parse()
        .map_err(|_| format!("bad range end '{b}'"))?;
    if a > b {
        return Err(format!("empty range {a}..{b}"));
    }
    Ok(a..=b)
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
        }
    }

    /// Data error for `path`. I/O errors already name their path.
    pub(crate) fn at(path: &Path, e: ctxoie::Error) -> Self {
        match e {
            ctxoie::Error::Io { .. } => CliError::Data(e.to_string()),
            e => CliError::Data(format!("{}: {e}", path.display())),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Data(m) => f.write_str(m),
        }
    }
}

impl std::error::Error for CliError {}

impl From<ctxoie::Error> for CliError {
    fn from(e: ctxoie::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

fn init_logging() {
    let env = env_logger::Env::default().filter_or(LOG_ENV, "info");
    let _ = env_logger::Builder::from_env(env)
        .format_timestamp(None)
        .try_init();
}

/// Runs one command line and returns its exit code.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    init_logging();
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Runs a parsed command line.
pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n as usize)
            .build()
            .map_err(|e| CliError::Usage(format!("cannot start {n} threads: {e}")))?
            .install(|| commands::run(cli.command)),
        None => commands::run(cli.command),
    }
}
