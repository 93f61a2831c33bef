use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod cli;

#[derive(Parser, Debug)]
#[command(name = "superexp", version, about = "Fixed-size approximators, property suites and a PEUAF trainer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build a network approximating a target within eps.
    Approximate(ApproximateArgs),
    /// Run a property suite against the bundled golden files.
    Verify(VerifyArgs),
    /// Train a classifier from a key = value config file.
    Train(TrainArgs),
    /// Per-window occlusion drops of a trained classifier.
    Occlude(OccludeArgs),
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    /// Full interval for d = 1, superposition otherwise.
    Auto,
    /// Accurate on [0, 1] for d = 1.
    Full,
    /// Accurate on the union of the intervals I_k, d = 1.
    Half,
    /// Superposition build for any d.
    Kst,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum Encoding {
    Decimal,
    Hex,
}

#[derive(Args, Debug)]
pub struct ApproximateArgs {
    #[arg(long)]
    pub activation: String,
    /// Registry name or a CSV table of (x, y) knots.
    #[arg(long)]
    pub target: String,
    #[arg(long, default_value_t = 1)]
    pub dim: usize,
    #[arg(long, allow_negative_numbers = true)]
    pub eps: f64,
    /// Number of intervals; chosen automatically when absent.
    #[arg(long = "K")]
    pub k: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = Mode::Auto)]
    pub mode: Mode,
    /// Superposition text file supplying the inner and outer maps.
    #[arg(long)]
    pub superposition: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Encoding::Decimal)]
    pub float_encoding: Encoding,
    /// Network file.
    #[arg(long)]
    pub out: PathBuf,
    /// Build report CSV.
    #[arg(long)]
    pub report: PathBuf,
    /// Error curve CSV; defaults to `<report stem>.curve.csv` beside the report.
    #[arg(long)]
    pub curve: Option<PathBuf>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum Suite {
    Activations,
    Encoder,
    Kst,
    Train,
    All,
}

#[derive(Args, Debug)]
pub struct VerifyArgs {
    #[arg(value_enum)]
    pub suite: Suite,
    /// Directory whose files replace the bundled golden files of the same name.
    #[arg(long)]
    pub golden_dir: Option<PathBuf>,
    /// Write freshly computed golden files into this directory and exit.
    #[arg(long, hide = true)]
    pub write_golden: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Config file; defaults apply when absent.
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct OccludeArgs {
    /// Model JSON written by `train`.
    pub model: PathBuf,
    /// Dataset CSV: samples then an integer label per row.
    pub dataset: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub window: usize,
    #[arg(long, default_value_t = 50)]
    pub stride: usize,
    /// Only the first N signals.
    #[arg(long)]
    pub limit: Option<usize>,
    /// Drop CSV.
    #[arg(long)]
    pub out: PathBuf,
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let outcome = match &cli.command {
        Command::Approximate(a) => cli::approximate::run(a, &argv),
        Command::Verify(a) => cli::verify::run(a),
        Command::Train(a) => cli::train::run(a, &argv),
        Command::Occlude(a) => cli::train::occlude(a, &argv),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
