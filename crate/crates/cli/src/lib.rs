//! `grnn-lab` command-line driver.
//!
//! Every subcommand writes its artifacts plus a `run_manifest.json` into
//! `--out`. Exit status: 0 on success, 1 on a domain error, 2 on a usage
//! error. `GRNN_LAB_THREADS` caps the worker pool.

mod commands;
mod config;
mod pipeline;
pub mod report;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use grnn_core::perturb::FoldReference;
use grnn_core::search::SelectionMode;
use grnn_core::tasks::TableTask;
use serde::Serialize;

pub const THREADS_ENV: &str = "GRNN_LAB_THREADS";

#[derive(Debug, Parser)]
#[command(name = "grnn-lab", version, about = "Gene regulatory network analysis toolkit")]
pub struct Cli {
    /// Flat JSON file of flag values; command-line flags take precedence.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// TPM-normalize a raw count table.
    Normalize(NormalizeArgs),
    /// Score network edges by cross-dataset correlation consistency.
    StableEdges(StableEdgesArgs),
    /// Benchmark task definitions.
    #[command(subcommand)]
    Tasks(TasksCommand),
    /// Find genes whose expression solves a task.
    #[command(subcommand)]
    Search(SearchCommand),
    /// Trace the sub-network feeding the matched output genes.
    Extract(ExtractArgs),
    /// Perturbation reliability analysis.
    #[command(subcommand)]
    Perturb(PerturbCommand),
    /// Lyapunov trajectory and critical perturbation level.
    Lyapunov(LyapunovArgs),
    /// Generate a synthetic benchmark with planted solutions.
    Synth(SynthArgs),
    /// Search, extract, perturb and Lyapunov analysis in one run.
    Pipeline(PipelineArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Normalize(_) => "normalize",
            Command::StableEdges(_) => "stable-edges",
            Command::Tasks(_) => "tasks show",
            Command::Search(SearchCommand::Calc(_)) => "search calc",
            Command::Search(SearchCommand::Class(_)) => "search class",
            Command::Search(SearchCommand::Binary(_)) => "search binary",
            Command::Extract(_) => "extract",
            Command::Perturb(PerturbCommand::Gene(_)) => "perturb gene",
            Command::Perturb(PerturbCommand::Collective(_)) => "perturb collective",
            Command::Lyapunov(_) => "lyapunov",
            Command::Synth(_) => "synth",
            Command::Pipeline(_) => "pipeline",
        }
    }
}

fn parse_task(s: &str) -> Result<TableTask, String> {
    s.parse().map_err(|e: grnn_core::Error| e.to_string())
}

fn parse_selection(s: &str) -> Result<SelectionMode, String> {
    s.parse().map_err(|e: grnn_core::Error| e.to_string())
}

fn parse_reference(s: &str) -> Result<FoldReference, String> {
    match s {
        "unperturbed" => Ok(FoldReference::Unperturbed),
        "task" => Ok(FoldReference::Task),
        _ => Err(format!("expected `unperturbed` or `task`, got {s:?}")),
    }
}

#[derive(Debug, Args, Serialize)]
pub struct OutArg {
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct NormalizeArgs {
    /// CSV with columns gene,length_bp,<sample>...
    #[arg(long)]
    pub counts: PathBuf,
    #[command(flatten)]
    #[serde(skip)]
    pub out: OutArg,
}

#[derive(Debug, Args, Serialize)]
pub struct StableEdgesArgs {
    #[arg(long)]
    pub network: PathBuf,
    /// Two or more expression tables, one per dataset.
    #[arg(long, value_delimiter = ',', num_args = 1.., required = true)]
    pub expression: Vec<PathBuf>,
    /// Score at or above which an edge is stable.
    #[arg(long, conflicts_with = "top_fraction")]
    pub threshold: Option<f64>,
    /// Mark this fraction of the best-scoring edges stable instead.
    #[arg(long)]
    pub top_fraction: Option<f64>,
    #[command(flatten)]
    #[serde(skip)]
    pub out: OutArg,
}

#[derive(Debug, Subcommand)]
pub enum TasksCommand {
    /// Expected outputs of the benchmark tasks for inputs 1..7.
    Show(TasksShowArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct TasksShowArgs {
    /// Restrict to one task.
    #[arg(long, value_parser = parse_task)]
    pub task: Option<TableTask>,
    #[command(flatten)]
    #[serde(skip)]
    pub out: OutArg,
}

#[derive(Debug, Args, Serialize, Clone)]
pub struct TaskArgs {
    #[arg(long, value_parser = parse_task)]
    pub task: TableTask,
    #[arg(long, default_value_t = 0)]
    pub base_code: u32,
    /// Allowed per-code fold deviation for calculation tasks.
    #[arg(long, default_value_t = 0.01)]
    pub tolerance: f64,
}

#[derive(Debug, Subcommand)]
pub enum SearchCommand {
    /// Fold-change match for calculation tasks.
    Calc(SearchArgs),
    /// Above/below-mean match for classification tasks.
    Class(SearchArgs),
    /// Per-bit threshold match for binary-encoded tasks.
    Binary(SearchArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct SearchArgs {
    #[arg(long)]
    pub expression: PathBuf,
    #[command(flatten)]
    pub task: TaskArgs,
    /// Classifier choice among candidates: margin-max or score-min.
    #[arg(long, value_parser = parse_selection, default_value = "margin-max")]
    pub selection: SelectionMode,
    #[command(flatten)]
    #[serde(skip)]
    pub out: OutArg,
}

#[derive(Debug, Args, Serialize)]
pub struct ExtractArgs {
    #[arg(long)]
    pub network: PathBuf,
    /// matchset.json written by `search`.
    #[arg(long)]
    pub matchset: PathBuf,
    /// Input-responsive genes.
    #[arg(long, value_delimiter = ',')]
    pub inputs: Vec<String>,
    /// Synthetic benchmark manifest to take input genes from.
    #[arg(long)]
    pub benchmark: Option<PathBuf>,
    /// Expression table for the top-variance input fallback.
    #[arg(long)]
    pub expression: Option<PathBuf>,
    #[arg(long, default_value_t = grnn_core::search::DEFAULT_DEPTH_LIMIT)]
    pub depth_limit: usize,
    /// Number of fallback input genes.
    #[arg(long, default_value_t = grnn_core::search::DEFAULT_INPUT_FALLBACK_K)]
    pub input_k: usize,
    #[command(flatten)]
    #[serde(skip)]
    pub out: OutArg,
}

#[derive(Debug, Args, Serialize, Clone)]
pub struct PerturbOpts {
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5")]
    pub alphas: Vec<f64>,
    #[arg(long, default_value_t = 0.1)]
    pub sigma2: f64,
    /// Maximum path length for propagation.
    #[arg(long, default_value_t = 3)]
    pub d_max: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Reference folds for errors: unperturbed or task.
    #[arg(long, value_parser = parse_reference, default_value = "unperturbed")]
    pub fold_reference: FoldReference,
    /// Draw perturbations within each replicate's own min/max.
    #[arg(long)]
    pub per_replicate_bounds: bool,
}

#[derive(Debug, Subcommand)]
pub enum PerturbCommand {
    /// Perturb each sub-network gene on its own and rank by criticality.
    Gene(PerturbGeneArgs),
    /// Perturb the top-k ranked genes together for k = 1..k_max.
    Collective(PerturbCollectiveArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct PerturbInputs {
    #[arg(long)]
    pub expression: PathBuf,
    /// subgrnn.json written by `extract`.
    #[arg(long)]
    pub subgrnn: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub base_code: u32,
}

#[derive(Debug, Args, Serialize)]
pub struct PerturbGeneArgs {
    #[command(flatten)]
    pub inputs: PerturbInputs,
    #[command(flatten)]
    pub opts: PerturbOpts,
    #[command(flatten)]
    #[serde(skip)]
    pub out: OutArg,
}

#[derive(Debug, Args, Serialize)]
pub struct PerturbCollectiveArgs {
    #[command(flatten)]
    pub inputs: PerturbInputs,
    #[command(flatten)]
    pub opts: PerturbOpts,
    /// reliability.json from `perturb gene`, for the ranking.
    #[arg(long, required_unless_present = "genes")]
    pub reliability: Option<PathBuf>,
    /// Explicit ranking, most critical first.
    #[arg(long, value_delimiter = ',')]
    pub genes: Vec<String>,
    #[arg(long, default_value_t = 10)]
    pub k_max: usize,
    #[command(flatten)]
    #[serde(skip)]
    pub out: OutArg,
}

#[derive(Debug, Args, Serialize, Clone)]
pub struct TrajectoryOpts {
    #[arg(long, default_value_t = 0.1, allow_negative_numbers = true)]
    pub alpha0: f64,
    #[arg(long, default_value_t = 0.1, allow_negative_numbers = true)]
    pub sigma0: f64,
    /// Slope of the fold factor along the trajectory.
    #[arg(long, default_value_t = 10.0)]
    pub k: f64,
    /// Slope of the noise scale along the trajectory.
    #[arg(long, default_value_t = 1.0)]
    pub l: f64,
    #[arg(long, default_value_t = 0.0)]
    pub epsilon_tol: f64,
    #[arg(long, default_value_t = 1e-9)]
    pub zeta: f64,
    #[arg(long, default_value_t = 1.0)]
    pub s_max: f64,
    #[arg(long, default_value_t = 101)]
    pub samples: usize,
}

#[derive(Debug, Args, Serialize)]
pub struct LyapunovArgs {
    #[command(flatten)]
    pub trajectory: TrajectoryOpts,
    #[arg(long, default_value_t = 1.0)]
    pub delta_norm: f64,
    /// Criticality prefactor of V.
    #[arg(long, default_value_t = 1.0)]
    pub criticality: f64,
    /// Summed squared deviation Σ‖Δ‖².
    #[arg(long, default_value_t = 1.0)]
    pub sum_sq: f64,
    /// Profile a gene of an extracted sub-network instead of the bare cubic.
    #[arg(long, requires_all = ["expression", "subgrnn"])]
    pub gene: Option<String>,
    #[arg(long)]
    pub expression: Option<PathBuf>,
    /// Seed for missing edge correlations.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub subgrnn: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub base_code: u32,
    #[arg(long, default_value_t = 3)]
    pub d_max: usize,
    #[command(flatten)]
    #[serde(skip)]
    pub out: OutArg,
}

#[derive(Debug, Args, Serialize, Clone)]
pub struct SynthOpts {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 4000)]
    pub n_genes: usize,
    #[arg(long, default_value_t = 2)]
    pub hidden_layers: usize,
    #[arg(long, default_value_t = 6)]
    pub layer_width: usize,
    #[arg(long, default_value_t = 8)]
    pub n_inputs: usize,
    #[arg(long, default_value_t = 0.3)]
    pub edge_density: f64,
    #[arg(long, default_value_t = 4000)]
    pub background_edges: usize,
    #[arg(long, default_value_t = 0.05)]
    pub missing_fraction: f64,
    /// Relative std of multiplicative noise on planted genes.
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    #[arg(long, default_value_t = 2)]
    pub decoys: usize,
}

impl SynthOpts {
    fn spec(&self) -> grnn_core::synth::BenchmarkSpec {
        grnn_core::synth::BenchmarkSpec {
            n_genes: self.n_genes,
            n_hidden_layers: self.hidden_layers,
            layer_width: self.layer_width,
            n_inputs: self.n_inputs,
            edge_density: self.edge_density,
            background_edges: self.background_edges,
            missing_correlation_fraction: self.missing_fraction,
            expression_noise: self.noise,
            decoys_per_task: self.decoys,
            seed: self.seed,
            ..Default::default()
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    #[command(flatten)]
    pub synth: SynthOpts,
    #[command(flatten)]
    #[serde(skip)]
    pub out: OutArg,
}

#[derive(Debug, Args, Serialize)]
pub struct PipelineArgs {
    #[arg(long, value_parser = parse_task)]
    pub task: TableTask,
    /// Expression table; a synthetic benchmark is generated when absent.
    #[arg(long, requires = "network")]
    pub expression: Option<PathBuf>,
    #[arg(long, requires = "expression")]
    pub network: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub inputs: Vec<String>,
    #[arg(long, default_value_t = 0)]
    pub base_code: u32,
    #[arg(long, default_value_t = 0.01)]
    pub tolerance: f64,
    #[arg(long, value_parser = parse_selection, default_value = "margin-max")]
    pub selection: SelectionMode,
    #[arg(long, default_value_t = grnn_core::search::DEFAULT_DEPTH_LIMIT)]
    pub depth_limit: usize,
    #[arg(long, default_value_t = grnn_core::search::DEFAULT_INPUT_FALLBACK_K)]
    pub input_k: usize,
    #[arg(long, default_value_t = 10)]
    pub k_max: usize,
    /// Synthetic benchmark size when no expression table is given.
    #[arg(long, default_value_t = 1000)]
    pub n_genes: usize,
    #[command(flatten)]
    pub perturb: PerturbOpts,
    #[command(flatten)]
    pub trajectory: TrajectoryOpts,
    #[command(flatten)]
    #[serde(skip)]
    pub out: OutArg,
}

/// Runs the tool with the worker cap taken from `GRNN_LAB_THREADS`.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let threads = match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Some(n),
            _ => {
                eprintln!("error: {THREADS_ENV} must be a positive integer, got {v:?}");
                return 2;
            }
        },
        Err(_) => None,
    };
    run_with_threads(args, threads)
}

/// Runs the tool on a private pool of `threads` workers, or on the global
/// pool when `None`.
pub fn run_with_threads<I, T>(args: I, threads: Option<usize>) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString>,
{
    let argv = match config::merge(args.into_iter().map(Into::into).collect()) {
        Ok(a) => a,
        Err(msg) => {
            eprintln!("error: {msg}");
            return 2;
        }
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let outcome = match threads {
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| commands::dispatch(&cli.command)),
            Err(e) => {
                eprintln!("error: cannot start worker pool: {e}");
                return 1;
            }
        },
        None => commands::dispatch(&cli.command),
    };
    match outcome {
        Ok(summary) => {
            use std::io::Write;
            let _ = writeln!(std::io::stdout(), "{summary}");
            0
        }
        Err(e) => {
            eprintln!("error: {}: {e}", e.name());
            1
        }
    }
}
