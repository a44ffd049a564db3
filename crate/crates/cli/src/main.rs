mod commands;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};

use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "rwcap", version, about = "Floating random walk capacitance extraction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a training dataset of finite-difference kernels.
    GenData(GenDataArgs),
    /// Compute and summarize the transition kernels of one cube.
    Kernel(KernelArgs),
    /// Extract one capacitance row of a layout.
    Extract(ExtractArgs),
    /// Time extraction with several kernel sources and write CSV.
    Bench(BenchArgs),
    /// Describe a weights file or dataset file.
    Inspect(InspectArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long)]
    pub count: u64,
    #[arg(long, default_value_t = 23)]
    pub n: usize,
    #[arg(long, default_value_t = 5)]
    pub blocks: u32,
    #[arg(long, default_value_t = 0.2)]
    pub p_nest: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Worker threads; output does not depend on it.
    #[arg(long)]
    pub workers: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AxisArg {
    X,
    Y,
    Z,
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("input").required(true).args(["layout", "config"])))]
pub struct KernelArgs {
    /// Layout document; the cube is the largest empty cube at --point.
    #[arg(long, requires = "point")]
    pub layout: Option<PathBuf>,
    /// Block configuration over [-1,1]³.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Cube center as x,y,z.
    #[arg(long, value_delimiter = ',', num_args = 3)]
    pub point: Option<Vec<f64>>,
    #[arg(long, default_value_t = 23)]
    pub n: usize,
    /// Also report the signed gradient kernel along this axis.
    #[arg(long, value_enum)]
    pub axis: Option<AxisArg>,
    /// Write the kernels as a one-record dataset file.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SourceArg {
    /// Finite-difference kernels for every cube.
    Oracle,
    /// Stratified cache, finite differences for the rest.
    Cache,
    /// Stratified cache, networks for the rest.
    Neural,
    /// Networks for every cube.
    NeuralDirect,
}

#[derive(Debug, Args, Clone)]
pub struct EngineArgs {
    /// Engine configuration file (TOML); flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub weights: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub surface_offset: Option<f64>,
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    #[arg(long)]
    pub layout: PathBuf,
    /// Master conductor id.
    #[arg(long)]
    pub net: u32,
    #[arg(long, value_enum, default_value_t = SourceArg::Cache)]
    pub kernel_source: SourceArg,
    #[arg(long)]
    pub target_err: Option<f64>,
    #[arg(long)]
    pub min_walks: Option<u64>,
    #[arg(long)]
    pub max_walks: Option<u64>,
    #[arg(long)]
    pub json: bool,
    #[command(flatten)]
    pub engine: EngineArgs,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub layout: PathBuf,
    /// Master conductor id; defaults to the first conductor.
    #[arg(long)]
    pub net: Option<u32>,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "oracle,cache")]
    pub sources: Vec<SourceArg>,
    #[arg(long, default_value_t = 3)]
    pub repeats: u32,
    /// Walks per run.
    #[arg(long, default_value_t = 5000)]
    pub walks: u64,
    /// CSV destination; standard output if absent.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    #[command(flatten)]
    pub engine: EngineArgs,
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("file").required(true).args(["weights", "data"])))]
pub struct InspectArgs {
    #[arg(long)]
    pub weights: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::GenData(a) => commands::gen_data(&a),
        Command::Kernel(a) => commands::kernel(&a),
        Command::Extract(a) => commands::extract(&a),
        Command::Bench(a) => commands::bench(&a),
        Command::Inspect(a) => commands::inspect(&a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let first: Vec<&str> = text
                .lines()
                .map(str::trim)
                .take_while(|l| !l.is_empty())
                .collect();
            let first = first.join(" ").trim_start_matches("error: ").to_string();
            return CliError::Usage(first).report();
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => e.report(),
    }
}
