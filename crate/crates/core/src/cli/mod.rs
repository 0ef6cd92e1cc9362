//! The `fhdr` command-line tool.
//!
//! Exit codes: 0 on success, 1 on runtime failure, 2 on usage or
//! configuration errors.

mod commands;
mod config;
mod manifest;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub use config::RunConfig;
pub use manifest::{build_id, RunManifest};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Parser, Debug)]
#[command(
    name = "fhdr",
    version,
    about = "Single-image HDR reconstruction with a feedback network"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Synthesize LDR/HDR training pairs from HDR sources.
    Synth(SynthArgs),
    /// Train a model on a paired dataset.
    Train(TrainArgs),
    /// Score a checkpoint on a paired dataset, per iteration.
    Eval(EvalArgs),
    /// Reconstruct HDR from one LDR image.
    Infer(InferArgs),
    /// Check analytic gradients against finite differences.
    Gradcheck(GradcheckArgs),
    /// Train one model per iteration count and record PSNR curves.
    Ablate(AblateArgs),
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Directory of .pfm/.hdr sources.
    #[arg(long)]
    pub hdr_dir: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Output size WxH via random crop and resize; sources are kept whole
    /// when omitted.
    #[arg(long, value_parser = parse_size)]
    pub size: Option<(usize, usize)>,
    /// Exposure range in stops, as LO:HI.
    #[arg(long, default_value = "-3:3", value_parser = parse_range, allow_hyphen_values = true)]
    pub ev_range: (f64, f64),
    /// Comma-separated curves (gamma:E, sigmoid:S:M) or "standard".
    #[arg(long, default_value = "standard")]
    pub curves: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// LDR exposures drawn per source.
    #[arg(long, default_value_t = 1)]
    pub per_source: usize,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Dataset root with ldr/ and hdr/.
    #[arg(long)]
    pub data: PathBuf,
    /// key = value settings; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub decay_start: Option<usize>,
    /// Checkpoint to continue from.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Dataset for best-checkpoint selection; defaults to the training set.
    #[arg(long)]
    pub eval_data: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Unroll this many iterations instead of the checkpoint's.
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Expected model settings; a different checkpoint is rejected.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = crate::losses::DEFAULT_MU)]
    pub mu: f64,
}

#[derive(Args, Debug)]
pub struct InferArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Input LDR (.ppm).
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Output HDR (.pfm or .hdr). With `--iteration all` a `_t<k>` suffix
    /// is added per iteration.
    #[arg(long)]
    pub out: PathBuf,
    /// 1-based iteration to write, or "all". Defaults to the last.
    #[arg(long)]
    pub iteration: Option<String>,
    /// Also write a μ-law tonemapped 8-bit preview next to each output.
    #[arg(long)]
    pub tonemap_preview: bool,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScopeArg {
    Ops,
    Model,
    All,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    #[arg(long, value_enum, default_value = "all")]
    pub scope: ScopeArg,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Negative control: scale analytic conv2d gradients by this factor.
    #[arg(long, hide = true)]
    pub inject_fault: Option<f64>,
}

#[derive(Args, Debug)]
pub struct AblateArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Comma-separated iteration counts.
    #[arg(long, default_value = "1,2,3,4", value_delimiter = ',')]
    pub n_list: Vec<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub eval_data: Option<PathBuf>,
}

fn parse_size(s: &str) -> Result<(usize, usize), String> {
    let (w, h) = s.split_once(['x', 'X']).ok_or("expected WxH")?;
    let dim = |v: &str| {
        v.parse::<usize>()
            .ok()
            .filter(|&d| d > 0)
            .ok_or(format!("bad dimension {v:?}"))
    };
    Ok((dim(w)?, dim(h)?))
}

fn parse_range(s: &str) -> Result<(f64, f64), String> {
    let (lo, hi) = s.split_once(':').ok_or("expected LO:HI")?;
    let num = |v: &str| v.trim().parse::<f64>().map_err(|_| format!("bad number {v:?}"));
    let (lo, hi) = (num(lo)?, num(hi)?);
    if lo > hi {
        return Err(format!("empty range {lo}:{hi}"));
    }
    Ok((lo, hi))
}

/// A failed command, classified by exit code.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Runtime(crate::Error),
    /// The command ran but its outcome is a failure (e.g. a gradient check).
    Failed(String),
}

impl From<crate::Error> for Failure {
    fn from(e: crate::Error) -> Self {
        Failure::Runtime(e)
    }
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Usage(_) => EXIT_USAGE,
            Failure::Runtime(_) | Failure::Failed(_) => EXIT_RUNTIME,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Usage(m) => write!(f, "usage error: {m}"),
            Failure::Runtime(e) => write!(f, "error: {e}"),
            Failure::Failed(m) => write!(f, "failed: {m}"),
        }
    }
}

fn configure_threads() -> Result<(), Failure> {
    let Ok(v) = std::env::var("FHDR_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Failure::Usage(format!("FHDR_THREADS must be a positive integer, got {v:?}")))?;
    // A second call in the same process (tests) keeps the first pool.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

/// Executes an already-parsed command.
pub fn execute(cli: Cli, argv: &[String]) -> Result<(), Failure> {
    configure_threads()?;
    match cli.command {
        Command::Synth(a) => commands::synth(&a, argv),
        Command::Train(a) => commands::train(&a, argv),
        Command::Eval(a) => commands::eval(&a, argv),
        Command::Infer(a) => commands::infer(&a),
        Command::Gradcheck(a) => commands::gradcheck(&a),
        Command::Ablate(a) => commands::ablate(&a, argv),
    }
}

/// Parses `args` (including the program name) and runs the command,
/// returning the process exit code.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let argv: Vec<String> = args.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    match execute(cli, &argv) {
        Ok(()) => EXIT_OK,
        Err(f) => {
            eprintln!("{f}");
            f.exit_code()
        }
    }
}
