mod backend;
mod commands;
mod error;
mod http;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use pearl::pipeline::PRESETS;
use pearl::placements::BaselineKind;

#[derive(Parser)]
#[command(name = "pearl", version, about = "Place objects in scene photographs and score placements")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the placement pipeline on one image.
    Place(PlaceArgs),
    /// Run the placement pipeline over every annotated pair of a dataset.
    Run(RunArgs),
    /// Score tag lists, selections or placements against a dataset.
    Eval(EvalArgs),
    /// Write natural, unnatural or random reference placements.
    Baseline(BaselineArgs),
    /// Capture every model call a pipeline makes over a dataset.
    RecordFixtures(RecordArgs),
    /// Generate a synthetic benchmark dataset.
    Synth(SynthArgs),
    /// Print a preset as a TOML config file.
    ShowConfig(ShowConfigArgs),
}

#[derive(Args, Clone)]
pub struct PipelineChoice {
    /// Built-in pipeline.
    #[arg(long, value_parser = PRESETS, conflicts_with = "config")]
    pub preset: Option<String>,
    /// TOML pipeline config.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Args, Clone)]
pub struct DatasetChoice {
    /// Dataset root directory.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Accept any object name the annotations declare.
    #[arg(long)]
    pub open_vocabulary: bool,
}

#[derive(Args)]
pub struct PlaceArgs {
    /// Scene image (PNG). Its file stem is the image id.
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long)]
    pub object: String,
    #[command(flatten)]
    pub pipeline: PipelineChoice,
    /// Fixture file, `http(s)://` server URL, or `simulated`.
    #[arg(long)]
    pub backend: String,
    /// Dataset the image belongs to; supplies depth and drives `simulated`.
    #[command(flatten)]
    pub dataset: DatasetChoice,
    /// Output file for the placement record (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write a copy of the image with the point marked.
    #[arg(long)]
    pub annotate: Option<PathBuf>,
    /// Per-request timeout for HTTP backends, in seconds.
    #[arg(long, default_value_t = 120)]
    pub timeout: u64,
}

#[derive(Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub dataset: DatasetChoice,
    #[command(flatten)]
    pub pipeline: PipelineChoice,
    #[arg(long)]
    pub backend: String,
    /// Directory for records.jsonl, tags.json, selections.jsonl and placements.jsonl.
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[arg(long, default_value_t = 120)]
    pub timeout: u64,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum Format {
    Csv,
    Table,
    Json,
}

#[derive(Args)]
pub struct EvalArgs {
    /// 1: tag lists, 2: selections, 3: placements.
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=3))]
    pub stage: u8,
    #[command(flatten)]
    pub dataset: DatasetChoice,
    /// Method inputs as `name=path` or `path` (name = file stem). Repeatable.
    #[arg(long, required = true, num_args = 1..)]
    pub inputs: Vec<String>,
    /// Embedding fixture `{"dim": n, "vectors": {..}}` for stages 1 and 2.
    #[arg(long, conflicts_with = "backend")]
    pub embeddings: Option<PathBuf>,
    /// Backend serving `/v1/embed` for stages 1 and 2.
    #[arg(long)]
    pub backend: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "table")]
    pub format: Format,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Stage 2: average over all pairs instead of per image.
    #[arg(long)]
    pub flat: bool,
    /// Stage 3: directory for per-method audit rows (default: next to --out).
    #[arg(long)]
    pub audit_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 120)]
    pub timeout: u64,
}

#[derive(Args)]
pub struct BaselineArgs {
    #[arg(long)]
    pub kind: BaselineKind,
    #[command(flatten)]
    pub dataset: DatasetChoice,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args)]
pub struct RecordArgs {
    /// Model server URL, or `simulated`.
    #[arg(long)]
    pub backend_url: String,
    #[command(flatten)]
    pub dataset: DatasetChoice,
    #[command(flatten)]
    pub pipeline: PipelineChoice,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[arg(long, default_value_t = 120)]
    pub timeout: u64,
}

#[derive(Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub scenes: usize,
    #[arg(long, default_value_t = 561)]
    pub width: u32,
    #[arg(long, default_value_t = 427)]
    pub height: u32,
    #[arg(long, default_value_t = 8)]
    pub objects_per_scene: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.0)]
    pub exclusion_rate: f64,
    #[arg(long, default_value_t = 0.0)]
    pub missing_rate: f64,
    /// Also write depth maps.
    #[arg(long)]
    pub depth: bool,
}

#[derive(Args)]
pub struct ShowConfigArgs {
    #[arg(long, value_parser = PRESETS, default_value = "octo-plus")]
    pub preset: String,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Place(a) => commands::place(a),
        Command::Run(a) => commands::run(a),
        Command::Eval(a) => commands::eval(a),
        Command::Baseline(a) => commands::baseline(a),
        Command::RecordFixtures(a) => commands::record_fixtures(a),
        Command::Synth(a) => commands::synth(a),
        Command::ShowConfig(a) => commands::show_config(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}
