use std::net::SocketAddr;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use convrisk::baselines::BaselineKind;
use convrisk::evaluation::ReportFormat;
use convrisk::microlm::{Precision, Projection};
use convrisk::serialization::TemplateKind;

#[derive(Debug, Parser)]
#[command(name = "convrisk", version, about = "Few-shot conversational risk assessment with a micro language model")]
pub struct Cli {
    /// TOML file with per-subcommand defaults
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic labelled cohort as CSV
    GenData(GenDataArgs),
    /// Pre-train a base model on a related cohort and write a bundle
    Pretrain(PretrainArgs),
    /// Fit a LoRA adapter on balanced few-shot examples
    Finetune(FinetuneArgs),
    /// Print the risk score of one record
    Score(RecordArgs),
    /// Print per-feature attention importance for one record
    Explain(ExplainArgs),
    /// Run the few-shot AUC grid
    Benchmark(BenchmarkArgs),
    /// Render a saved benchmark report
    Render(RenderArgs),
    /// Serve the questionnaire session API
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct SchemaArg {
    /// Questionnaire schema JSON (default: the built-in COVID-19 questionnaire)
    #[arg(long, value_name = "PATH")]
    pub schema: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long, value_name = "PATH")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 393)]
    pub n: usize,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.28)]
    pub prevalence: f64,
    /// Planted signal as `feature_id:weight` pairs; unlisted features get 0
    #[arg(long, value_delimiter = ',', default_value = "15:2.0,13:1.5,9:1.0,12:1.0")]
    pub weights: Vec<String>,
    /// Also write the schema JSON here
    #[arg(long, value_name = "PATH")]
    pub schema_out: Option<PathBuf>,
    #[command(flatten)]
    pub schema: SchemaArg,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PrecisionArg {
    F64,
    F32,
}

impl From<PrecisionArg> for Precision {
    fn from(p: PrecisionArg) -> Self {
        match p {
            PrecisionArg::F64 => Precision::F64,
            PrecisionArg::F32 => Precision::F32,
        }
    }
}

#[derive(Debug, Args)]
pub struct PretrainArgs {
    /// Labelled related-task cohort CSV
    #[arg(long, value_name = "PATH")]
    pub data: PathBuf,
    /// Output bundle directory
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    #[command(flatten)]
    pub schema: SchemaArg,
    /// Template the bundle scores with
    #[arg(long, default_value = "text")]
    pub template: TemplateKind,
    /// Templates used to render the pre-training corpus
    #[arg(long, value_delimiter = ',', default_value = "list,text")]
    pub corpus_templates: Vec<TemplateKind>,
    /// Leave answer-interpretation examples out of the corpus
    #[arg(long)]
    pub no_interpretation: bool,
    #[arg(long, default_value_t = 600)]
    pub steps: usize,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 3e-3)]
    pub learning_rate: f64,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub d_model: Option<usize>,
    /// Feed-forward width (default 4 × d-model)
    #[arg(long)]
    pub d_ff: Option<usize>,
    #[arg(long)]
    pub context_length: Option<usize>,
    #[arg(long, value_enum, default_value = "f64")]
    pub precision: PrecisionArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct LoraArgs {
    #[arg(long, default_value_t = 4)]
    pub rank: usize,
    #[arg(long, default_value_t = 8.0)]
    pub alpha: f64,
    /// Adapted projections
    #[arg(long, value_delimiter = ',', default_value = "q,v")]
    pub targets: Vec<Projection>,
    #[arg(long, default_value_t = 200)]
    pub finetune_steps: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub learning_rate: f64,
}

#[derive(Debug, Args)]
pub struct FinetuneArgs {
    /// Base bundle directory
    #[arg(long, value_name = "DIR")]
    pub model: PathBuf,
    /// Labelled target cohort CSV
    #[arg(long, value_name = "PATH")]
    pub data: PathBuf,
    /// Output bundle directory
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Balanced shot count (even)
    #[arg(long, default_value_t = 32)]
    pub shots: usize,
    /// Template for the shots and the output bundle (default: the base bundle's)
    #[arg(long)]
    pub template: Option<TemplateKind>,
    #[command(flatten)]
    pub lora: LoraArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct RecordArgs {
    #[arg(long, value_name = "DIR")]
    pub model: PathBuf,
    /// Comma-separated binary answers in schema order
    #[arg(long, value_delimiter = ',', required = true)]
    pub record: Vec<u8>,
    /// Serialize with this template instead of the bundle's
    #[arg(long)]
    pub template: Option<TemplateKind>,
}

#[derive(Debug, Args)]
pub struct ExplainArgs {
    #[command(flatten)]
    pub record: RecordArgs,
    /// Only print the highest-ranked features
    #[arg(long)]
    pub top: Option<usize>,
}

#[derive(Debug, Args)]
pub struct BenchmarkArgs {
    /// Labelled target cohort CSV
    #[arg(long, value_name = "PATH")]
    pub data: PathBuf,
    #[command(flatten)]
    pub schema: SchemaArg,
    /// Base bundle; without it only the baselines run
    #[arg(long, value_name = "DIR")]
    pub model: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "0,2,4,8,16,32")]
    pub shots: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "0,1,32,42,1024")]
    pub seeds: Vec<u64>,
    #[arg(long, value_delimiter = ',', default_value = "list,text")]
    pub templates: Vec<TemplateKind>,
    #[arg(long, value_delimiter = ',', default_value = "lr,rf,gbt")]
    pub baselines: Vec<BaselineKind>,
    #[arg(long, default_value = "MicroLM")]
    pub model_name: String,
    #[command(flatten)]
    pub lora: LoraArgs,
    /// Write the full report as JSON
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
    /// Rendering printed to stdout
    #[arg(long, default_value = "table")]
    pub format: ReportFormat,
    /// No per-seed progress on stderr
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    /// Report JSON written by `benchmark --out`
    #[arg(long, value_name = "PATH")]
    pub report: PathBuf,
    #[arg(long, default_value = "table")]
    pub format: ReportFormat,
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: SocketAddr,
    /// Session log file
    #[arg(long, value_name = "PATH")]
    pub store: PathBuf,
    /// Model bundle directory
    #[arg(long, value_name = "DIR")]
    pub model: PathBuf,
    /// Users TOML file
    #[arg(long, value_name = "PATH")]
    pub users: PathBuf,
}
