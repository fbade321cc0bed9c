//! `ctq`: example selection for few-shot LLM translation.
//!
//! Every subcommand reads the optional `--config` file and lets flags
//! override it. Exit codes: 0 success, 2 configuration error, 3 stage
//! failure.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ctq_core::regressor::{Activation, Optimizer};
use ctq_core::selection::{ExampleOrder, Method};
use ctq_core::Error;

#[derive(Parser, Debug)]
#[command(name = "ctq", version, about = "Select in-context examples for few-shot LLM translation")]
pub struct Cli {
    /// Pipeline config file (TOML). Flags override its values.
    #[arg(short, long, global = true)]
    pub config: Option<PathBuf>,

    /// More log output (-v info, -vv debug). RUST_LOG also works.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Load, trim and deduplicate parallel files into the internal format.
    Corpus(CorpusArgs),
    /// Build or query the BM25 index over database sources.
    #[command(subcommand)]
    Index(IndexCommand),
    /// Compute candidate features or list the score-store keys they need.
    #[command(subcommand)]
    Features(FeaturesCommand),
    /// Generate scorer training data from a held-out set.
    Datagen(DatagenArgs),
    /// Train the quality scorer on generated data.
    Train(TrainArgs),
    /// Grid-search scorer hyper-parameters and keep the best model.
    Tune(TuneArgs),
    /// Check backprop gradients against finite differences.
    Gradcheck(GradcheckArgs),
    /// Select examples for input sentences.
    Select(SelectArgs),
    /// Translate input sentences with selected examples.
    Translate(TranslateArgs),
    /// Score translations and compare methods.
    Evaluate(EvaluateArgs),
    /// Run every pipeline stage from the config, resuming finished ones.
    RunAll(RunAllArgs),
}

#[derive(Args, Debug, Clone, Default)]
pub struct DataArgs {
    /// Example database (TSV `source<TAB>target` or JSONL).
    #[arg(long)]
    pub db: Option<PathBuf>,
    /// Source language name used in prompts [default: English].
    #[arg(long)]
    pub src_lang: Option<String>,
    /// Target language name used in prompts [default: French].
    #[arg(long)]
    pub tgt_lang: Option<String>,
}

#[derive(Args, Debug, Clone, Default)]
pub struct RetrievalArgs {
    /// BM25 term-frequency saturation k1 [default: 1.2].
    #[arg(long)]
    pub bm25_k1: Option<f64>,
    /// BM25 length normalization b [default: 0.75].
    #[arg(long)]
    pub bm25_b: Option<f64>,
    /// Shortlist size n [default: 100].
    #[arg(long)]
    pub shortlist_n: Option<usize>,
    /// Saved index; built from --db when absent.
    #[arg(long)]
    pub index: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Default)]
pub struct StoreArgs {
    /// Score store with embeddings, QE scores and perplexities.
    #[arg(long)]
    pub store: Option<PathBuf>,
    /// What to do when a store entry is missing [default: strict].
    #[arg(long, value_enum)]
    pub policy: Option<Policy>,
}

#[derive(Args, Debug, Clone, Default)]
pub struct LlmArgs {
    /// Generation endpoint: http(s)://host:port, mock:echo or mock:table:FILE [default: mock:echo].
    #[arg(long, env = "CTQ_ENDPOINT")]
    pub endpoint: Option<String>,
    /// Maximum concurrent generation requests (batch size) [default: 8].
    #[arg(long)]
    pub max_in_flight: Option<usize>,
    /// Per-request timeout in seconds [default: 120].
    #[arg(long)]
    pub timeout_s: Option<u64>,
    /// Maximum generated tokens per request [default: 256].
    #[arg(long)]
    pub max_new_tokens: Option<usize>,
}

#[derive(Args, Debug, Clone, Default)]
pub struct QueryArgs {
    /// An input sentence (repeatable).
    #[arg(long = "query")]
    pub query: Vec<String>,
    /// File with one input sentence per line.
    #[arg(long)]
    pub queries: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Policy {
    Strict,
    #[value(name = "fill_default")]
    FillDefault,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FallbackArg {
    RandomFill,
    None,
}

#[derive(Args, Debug)]
pub struct CorpusArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Held-out pairs for training data generation; pairs also in the database are dropped.
    #[arg(long)]
    pub heldout: Option<PathBuf>,
    /// Test pairs; pairs also in the database are dropped.
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// Output directory for db.jsonl, heldout.jsonl and test.jsonl.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Subcommand, Debug)]
pub enum IndexCommand {
    /// Build the index and save it.
    Build {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        retrieval: RetrievalArgs,
        /// Output index file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the BM25 shortlist of each query as JSON lines.
    Query {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        retrieval: RetrievalArgs,
        #[command(flatten)]
        queries: QueryArgs,
    },
}

#[derive(Subcommand, Debug)]
pub enum FeaturesCommand {
    /// Print the feature vector of every shortlisted candidate of each query.
    Extract {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        retrieval: RetrievalArgs,
        #[command(flatten)]
        store: StoreArgs,
        #[command(flatten)]
        queries: QueryArgs,
    },
    /// Print every score-store key the queries' shortlists need, one JSON object per line.
    Keys {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        retrieval: RetrievalArgs,
        #[command(flatten)]
        queries: QueryArgs,
    },
}

#[derive(Args, Debug)]
pub struct DatagenArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub retrieval: RetrievalArgs,
    #[command(flatten)]
    pub store: StoreArgs,
    #[command(flatten)]
    pub llm: LlmArgs,
    /// Held-out parallel file.
    #[arg(long)]
    pub heldout: Option<PathBuf>,
    /// Candidates per held-out query K [default: 100].
    #[arg(long)]
    pub k: Option<usize>,
    /// Translation metric: `chrf` or a file of `hash<TAB>score` lines [default: chrf].
    #[arg(long)]
    pub metric: Option<String>,
    /// Output training file; an existing file is resumed.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug, Clone, Default)]
pub struct HyperArgs {
    /// Hidden layers [default: 3].
    #[arg(long)]
    pub hidden_layers: Option<usize>,
    /// Units per hidden layer [default: 128].
    #[arg(long)]
    pub hidden_width: Option<usize>,
    /// sigmoid, tanh or relu [default: relu].
    #[arg(long)]
    pub activation: Option<Activation>,
    /// sgd, adam or rmsprop [default: adam].
    #[arg(long)]
    pub optimizer: Option<Optimizer>,
    /// Learning rate [default: 0.001].
    #[arg(long)]
    pub learning_rate: Option<f64>,
    /// Mini-batch size [default: 32].
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Epochs [default: 30].
    #[arg(long)]
    pub epochs: Option<usize>,
    /// L2 weight decay [default: 0].
    #[arg(long)]
    pub weight_decay: Option<f64>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Training file written by `datagen`.
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub hyper: HyperArgs,
    /// Seed for the split, initialization and shuffling [default: 13].
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output model file; the history goes to <out>.history.jsonl.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct TuneArgs {
    /// Training file written by `datagen`.
    #[arg(long)]
    pub data: PathBuf,
    /// Grid file (TOML lists per hyper-parameter); the full default grid when absent.
    #[arg(long)]
    pub grid: Option<PathBuf>,
    /// Seed for the split, initialization and shuffling [default: 13].
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output model file; the leaderboard goes to <out>.leaderboard.jsonl.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    /// Hidden layers.
    #[arg(long, default_value_t = 3)]
    pub hidden_layers: usize,
    /// Units per hidden layer.
    #[arg(long, default_value_t = 64)]
    pub hidden_width: usize,
    /// Activation to check; all three when absent.
    #[arg(long)]
    pub activation: Option<Activation>,
    /// L2 weight decay included in the objective.
    #[arg(long, default_value_t = 0.0)]
    pub weight_decay: f64,
    /// Random instances in the checked batch.
    #[arg(long, default_value_t = 4)]
    pub batch: usize,
    /// Seed for the network and batch.
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
}

#[derive(Args, Debug, Clone, Default)]
pub struct SelectionArgs {
    /// ctq, bm25, rbm25, random, feat:<name> or scavg:<f1,f2,...> [default: ctq].
    #[arg(long)]
    pub method: Option<Method>,
    /// Examples per prompt k [default: 4].
    #[arg(long)]
    pub k: Option<usize>,
    /// Trained scorer, required by ctq.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Top up short selections: random-fill or none [default: random-fill].
    #[arg(long, value_enum)]
    pub fallback: Option<FallbackArg>,
    /// Seed for random selection and filling [default: 13].
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct SelectArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub retrieval: RetrievalArgs,
    #[command(flatten)]
    pub store: StoreArgs,
    #[command(flatten)]
    pub selection: SelectionArgs,
    #[command(flatten)]
    pub queries: QueryArgs,
}

#[derive(Args, Debug)]
pub struct TranslateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub retrieval: RetrievalArgs,
    #[command(flatten)]
    pub store: StoreArgs,
    #[command(flatten)]
    pub selection: SelectionArgs,
    #[command(flatten)]
    pub llm: LlmArgs,
    /// Input sentences, one per line.
    #[arg(long)]
    pub inputs: PathBuf,
    /// Reference translations, one per line; only the echo mock uses them.
    #[arg(long)]
    pub refs: Option<PathBuf>,
    /// Prompt token budget [default: 1000].
    #[arg(long)]
    pub budget: Option<usize>,
    /// Example delimiter line [default: ###].
    #[arg(long)]
    pub delimiter: Option<String>,
    /// best-last puts the top-ranked example next to the input [default: best-last].
    #[arg(long)]
    pub example_order: Option<ExampleOrder>,
    /// Output file, one translation per line; provenance goes to <out>.provenance.jsonl.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    /// Reference translations, one per line.
    #[arg(long)]
    pub refs: Option<PathBuf>,
    /// A method's translations as NAME=FILE, scored with chrF (repeatable).
    #[arg(long = "hyp")]
    pub hyps: Vec<String>,
    /// A method's externally computed per-sentence scores as NAME=FILE (repeatable).
    #[arg(long = "scores")]
    pub scores: Vec<String>,
    /// Method the others are compared with [default: bm25, or the only method].
    #[arg(long)]
    pub baseline: Option<String>,
    /// Also write the structured report here.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct RunAllArgs {
    /// Run directory, overriding run.dir.
    #[arg(long)]
    pub run_dir: Option<PathBuf>,
    /// Stop after this stage: prepare, datagen, train, translate or evaluate.
    #[arg(long)]
    pub stop_after: Option<String>,
    #[command(flatten)]
    pub llm: LlmArgs,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        _ => 3,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
