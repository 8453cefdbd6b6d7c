//! `stereoprobe`: corpus checks, contrastive encoder training, separation
//! metrics, LLM stereotype evaluation, probe classification, and report
//! bundles.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use stereoprobe_cli::reports::{
    self, ReportBundle, RunMeta, TableScore,
};
use stereoprobe_cli::tsne::TsneConfig;
use stereoprobe_core::classifier::{
    evaluate_head, train_head, EncoderMode, F1Report, HeadConfig, MlpHead,
};
use stereoprobe_core::corpus::{
    load_corpus, load_eval_set, split_by_context, Category, ContextGroup, CorpusFormat,
    CorpusSplit, CorpusStats,
};
use stereoprobe_core::embedder::{
    make_encoder, BagEncoder, Pooling, SentenceEncoder, DEFAULT_BUCKETS, DEFAULT_DIMENSION,
    DEFAULT_SEED,
};
use stereoprobe_core::losses::{LossConfig, LossKind};
use stereoprobe_core::repr_metrics::{delta_sim, SimReport};
use stereoprobe_core::scoring::{aggregate, verdict, BiasReport, Verdict};
use stereoprobe_core::trainer::{
    best_by_loss, sweep, train, SweepCell, SweepGrid, TrainConfig,
};
use stereoprobe_gateway::{
    Cassette, ChatEndpoint, GenerationConfig, HttpEndpoint, ModelEndpoint, ParseStrictness,
    RecordingEndpoint, ReplayEndpoint, UnmaskSession,
};

#[derive(Parser)]
#[command(
    name = "stereoprobe",
    version,
    about = "Contrastive sentence-encoder training and LLM stereotype evaluation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Corpus loading, structure checks, and split previews.
    Corpus {
        #[command(subcommand)]
        command: CorpusCommand,
    },
    /// Fine-tune the trainable encoder with a contrastive loss.
    Train(TrainArgs),
    /// Train every cell of a hyperparameter grid and record the outcomes.
    Sweep(SweepArgs),
    /// Embedding-space separation metrics.
    Metrics {
        #[command(subcommand)]
        command: MetricsCommand,
    },
    /// Query a chat endpoint over a masked evaluation set and score it.
    Evaluate(EvaluateArgs),
    /// Stereotype/anti-stereotype probe classifier on sentence embeddings.
    Classify {
        #[command(subcommand)]
        command: ClassifyCommand,
    },
    /// Emit a report bundle (tables, figures, JSON) from upstream artifacts.
    Report {
        #[command(subcommand)]
        command: ReportCommand,
    },
}

#[derive(Subcommand)]
enum CorpusCommand {
    /// Load a corpus, validate its structure, and preview the split.
    Validate(CorpusValidateArgs),
}

#[derive(Subcommand)]
enum MetricsCommand {
    /// Intra- vs inter-class cosine separation (Δsim) over a corpus split.
    Deltasim(DeltasimArgs),
}

#[derive(Subcommand)]
enum ClassifyCommand {
    /// Train the MLP head (optionally fine-tuning the encoder under it).
    TrainHead(TrainHeadArgs),
    /// Evaluate a saved head: macro-F1 per category and overall.
    Eval(EvalHeadArgs),
}

#[derive(Subcommand)]
enum ReportCommand {
    /// Per-model scoring table (markdown + CSV) from evaluation outputs.
    BiasTable(ReportBiasTableArgs),
    /// Hyperparameter × epochs heatmap from sweep outcomes.
    Heatmap(ReportHeatmapArgs),
    /// Two-component projection of sentence embeddings, colored by label.
    Tsne(ReportTsneArgs),
}

/// Corpus location plus the context-level split parameters.
#[derive(Args)]
struct CorpusArgs {
    /// Corpus file (JSONL or CSV; format inferred from the extension).
    #[arg(long)]
    corpus: PathBuf,
    /// Fraction of contexts held out for validation.
    #[arg(long, default_value_t = 0.2)]
    split_fraction: f64,
    /// Seed for the split shuffle.
    #[arg(long, default_value_t = 17)]
    seed: u64,
}

impl CorpusArgs {
    fn load(&self) -> Result<Vec<ContextGroup>> {
        load_corpus(&self.corpus, CorpusFormat::from_path(&self.corpus))
            .with_context(|| format!("loading corpus {}", self.corpus.display()))
    }

    fn split(&self, groups: &[ContextGroup]) -> Result<CorpusSplit> {
        split_by_context(groups, self.split_fraction, self.seed)
            .context("splitting corpus by context")
    }
}

/// Encoder selection: a backend id or a training checkpoint.
#[derive(Args)]
struct EncoderArgs {
    /// Encoder backend id: `stub`, `hashbag`, or `hashbag-{dim}`.
    #[arg(long, default_value = "hashbag")]
    backend: String,
    /// Token-vector pooling: `mean` or `first-token`.
    #[arg(long, value_parser = parse_pooling, default_value = "mean")]
    pooling: Pooling,
    /// Load encoder weights from a training checkpoint directory instead of
    /// initializing fresh from the backend id.
    #[arg(long)]
    encoder_checkpoint: Option<PathBuf>,
    /// Seed for fresh backend initialization.
    #[arg(long, default_value_t = DEFAULT_SEED)]
    encoder_seed: u64,
}

impl EncoderArgs {
    fn build(&self) -> Result<Box<dyn SentenceEncoder>> {
        match &self.encoder_checkpoint {
            Some(dir) => Ok(Box::new(BagEncoder::load_checkpoint(dir).with_context(
                || format!("loading encoder checkpoint {}", dir.display()),
            )?)),
            None => Ok(make_encoder(&self.backend, self.encoder_seed, self.pooling)?),
        }
    }

    /// The concrete trainable encoder, for commands that update weights.
    fn build_trainable(&self) -> Result<BagEncoder> {
        if let Some(dir) = &self.encoder_checkpoint {
            return BagEncoder::load_checkpoint(dir)
                .with_context(|| format!("loading encoder checkpoint {}", dir.display()));
        }
        let encoder = match self.backend.as_str() {
            "hashbag" => BagEncoder::new(DEFAULT_DIMENSION, DEFAULT_BUCKETS, self.encoder_seed),
            other => match other.strip_prefix("hashbag-").and_then(|d| d.parse().ok()) {
                Some(dim) => BagEncoder::new(dim, DEFAULT_BUCKETS, self.encoder_seed),
                None => bail!("backend `{other}` has no trainable parameters; use `hashbag`"),
            },
        };
        Ok(encoder.with_pooling(self.pooling))
    }

    fn is_contrastive(&self) -> bool {
        self.encoder_checkpoint.is_some()
    }
}

#[derive(Args)]
struct CorpusValidateArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    /// Also validate a masked evaluation set.
    #[arg(long)]
    eval_set: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    #[command(flatten)]
    encoder: EncoderArgs,
    /// Output directory; the run writes `{run_id}/manifest.json`, weights,
    /// and per-epoch metrics CSV beneath it.
    #[arg(long)]
    out: PathBuf,
    /// Training config file (.yaml/.yml/.json); flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Contrastive loss to train with.
    #[arg(long, value_parser = parse_loss)]
    loss: Option<LossKind>,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    margin: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    /// Seed for batch shuffling and optimizer-independent draws.
    #[arg(long)]
    train_seed: Option<u64>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    #[command(flatten)]
    encoder: EncoderArgs,
    /// Output directory for per-cell run directories plus `cells.json`.
    #[arg(long)]
    out: PathBuf,
    /// Base training config file (.yaml/.yml/.json).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Grid file (.yaml/.yml/.json) with temperatures, margins, and epochs.
    #[arg(long)]
    grid: Option<PathBuf>,
    /// Losses to sweep (default: all four).
    #[arg(long, value_parser = parse_loss, value_delimiter = ',')]
    losses: Vec<LossKind>,
}

#[derive(Args)]
struct DeltasimArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    #[command(flatten)]
    encoder: EncoderArgs,
    /// Which contexts to measure: `validation`, `train`, or `all`.
    #[arg(long, value_parser = parse_split, default_value = "validation")]
    split: SplitChoice,
    /// Write the report JSON here (printed to stdout otherwise).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Endpoint settings: a JSON config file or a base URL.
    #[arg(long)]
    model_endpoint: Option<String>,
    /// Masked evaluation set (JSONL).
    #[arg(long)]
    eval_set: PathBuf,
    #[command(flatten)]
    encoder: EncoderArgs,
    /// Scored report JSON destination.
    #[arg(long)]
    out: PathBuf,
    /// Markdown table destination (defaults to `--out` with `.md`).
    #[arg(long)]
    markdown: Option<PathBuf>,
    /// Display name for the report row (defaults to the endpoint model id).
    #[arg(long)]
    model_name: Option<String>,
    /// Completions requested per item (majority vote pool; must be odd).
    #[arg(long, default_value_t = 5)]
    queries: usize,
    /// Attempts per query before it counts as exhausted.
    #[arg(long, default_value_t = 5)]
    retries: usize,
    /// Nucleus sampling mass requested from the endpoint.
    #[arg(long, default_value_t = 0.9)]
    top_p: f64,
    /// Sampling temperature requested from the endpoint.
    #[arg(long, default_value_t = 0.8)]
    temperature: f64,
    /// Reject replies whose JSON object carries extra keys.
    #[arg(long)]
    strict: bool,
    /// Cassette file to record to or replay from.
    #[arg(long)]
    cassette: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = CassetteMode::Replay)]
    cassette_mode: CassetteMode,
    /// JSONL traffic journal (every request/response attempt).
    #[arg(long)]
    journal: Option<PathBuf>,
    /// Items in flight at once (defaults to the endpoint setting).
    #[arg(long)]
    parallelism: Option<usize>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum CassetteMode {
    Record,
    Replay,
}

#[derive(Args)]
struct TrainHeadArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    #[command(flatten)]
    encoder: EncoderArgs,
    /// Keep encoder weights fixed while the head trains.
    #[arg(long, value_parser = clap::value_parser!(bool), default_value_t = true)]
    freeze: bool,
    /// Head checkpoint path (defaults to `head.json` inside
    /// `--encoder-checkpoint` when one is given).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    head_seed: Option<u64>,
    /// Sigmoid decision threshold for the stereotype class.
    #[arg(long)]
    threshold: Option<f64>,
    /// Where to save the updated encoder when `--freeze false`.
    #[arg(long)]
    encoder_out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalHeadArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    #[command(flatten)]
    encoder: EncoderArgs,
    /// Saved head checkpoint.
    #[arg(long)]
    head: PathBuf,
    /// Which contexts to score: `validation`, `train`, or `all`.
    #[arg(long, value_parser = parse_split, default_value = "validation")]
    split: SplitChoice,
    /// Whether the encoder under the head was frozen during head training
    /// (labels the report only).
    #[arg(long, value_parser = clap::value_parser!(bool), default_value_t = true)]
    freeze: bool,
    /// Write the F1 report JSON here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportBiasTableArgs {
    /// Evaluation output JSON files (from `stereoprobe evaluate`).
    #[arg(long = "input", required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long, default_value = "reports")]
    out_root: PathBuf,
    #[arg(long)]
    run_id: String,
    /// Artifact name inside the bundle.
    #[arg(long, default_value = "bias_table")]
    name: String,
    /// Score sub-row: the 0–100 deviation score or the divergence score.
    #[arg(long, value_enum, default_value_t = ScoreChoice::Bias)]
    score: ScoreChoice,
}

#[derive(Args)]
struct ReportHeatmapArgs {
    /// Sweep outcome file (`cells.json` from `stereoprobe sweep`).
    #[arg(long)]
    cells: PathBuf,
    #[arg(long, default_value = "reports")]
    out_root: PathBuf,
    #[arg(long)]
    run_id: String,
    #[arg(long, default_value = "sweep")]
    name: String,
}

#[derive(Args)]
struct ReportTsneArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    #[command(flatten)]
    encoder: EncoderArgs,
    /// Restrict to one category (all sentences otherwise).
    #[arg(long, value_parser = parse_category)]
    category: Option<Category>,
    /// Which contexts to project: `validation`, `train`, or `all`.
    #[arg(long, value_parser = parse_split, default_value = "all")]
    split: SplitChoice,
    #[arg(long, default_value_t = 30.0)]
    perplexity: f64,
    #[arg(long, default_value_t = 1000)]
    iterations: usize,
    /// Seed for the projection's random layout init.
    #[arg(long, default_value_t = 0)]
    tsne_seed: u64,
    #[arg(long, default_value = "reports")]
    out_root: PathBuf,
    #[arg(long)]
    run_id: String,
    #[arg(long, default_value = "tsne")]
    name: String,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ScoreChoice {
    Bias,
    Kl,
}

impl From<ScoreChoice> for TableScore {
    fn from(choice: ScoreChoice) -> TableScore {
        match choice {
            ScoreChoice::Bias => TableScore::BiasScore,
            ScoreChoice::Kl => TableScore::KlScore,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum SplitChoice {
    Validation,
    Train,
    All,
}

fn parse_pooling(raw: &str) -> Result<Pooling, String> {
    match raw {
        "mean" => Ok(Pooling::Mean),
        "first-token" | "first_token" => Ok(Pooling::FirstToken),
        other => Err(format!("unknown pooling `{other}` (mean, first-token)")),
    }
}

fn parse_loss(raw: &str) -> Result<LossKind, String> {
    LossKind::ALL
        .into_iter()
        .find(|k| k.as_str() == raw)
        .ok_or_else(|| {
            let known: Vec<&str> = LossKind::ALL.iter().map(|k| k.as_str()).collect();
            format!("unknown loss `{raw}` ({})", known.join(", "))
        })
}

fn parse_split(raw: &str) -> Result<SplitChoice, String> {
    match raw {
        "validation" => Ok(SplitChoice::Validation),
        "train" => Ok(SplitChoice::Train),
        "all" => Ok(SplitChoice::All),
        other => Err(format!("unknown split `{other}` (validation, train, all)")),
    }
}

fn parse_category(raw: &str) -> Result<Category, String> {
    Category::parse(raw).ok_or_else(|| {
        let known: Vec<&str> = Category::ALL.iter().map(|c| c.as_str()).collect();
        format!("unknown category `{raw}` ({})", known.join(", "))
    })
}

/// Parse a config file as YAML or JSON by extension (YAML reads JSON too).
fn load_config_file<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    let parsed = match path.extension().and_then(|e| e.to_str()) {
        Some("json") => serde_json::from_str(&text)
            .with_context(|| format!("parsing JSON config {}", path.display()))?,
        _ => serde_yaml::from_str(&text)
            .with_context(|| format!("parsing YAML config {}", path.display()))?,
    };
    Ok(parsed)
}

/// Contexts selected by `--split`, without cloning when all are wanted.
fn select_contexts(
    groups: Vec<ContextGroup>,
    args: &CorpusArgs,
    choice: SplitChoice,
) -> Result<Vec<ContextGroup>> {
    Ok(match choice {
        SplitChoice::All => groups,
        SplitChoice::Validation => split_by_context(&groups, args.split_fraction, args.seed)?.validation,
        SplitChoice::Train => split_by_context(&groups, args.split_fraction, args.seed)?.train,
    })
}

fn main() -> Result<()> {
    // Die quietly when a downstream pipe closes (`stereoprobe ... | head`)
    // instead of panicking on the failed write.
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Corpus {
            command: CorpusCommand::Validate(args),
        } => corpus_validate(args),
        Command::Train(args) => run_train(args),
        Command::Sweep(args) => run_sweep(args),
        Command::Metrics {
            command: MetricsCommand::Deltasim(args),
        } => run_deltasim(args),
        Command::Evaluate(args) => run_evaluate(args),
        Command::Classify { command } => match command {
            ClassifyCommand::TrainHead(args) => run_train_head(args),
            ClassifyCommand::Eval(args) => run_eval_head(args),
        },
        Command::Report { command } => match command {
            ReportCommand::BiasTable(args) => report_bias_table(args),
            ReportCommand::Heatmap(args) => report_heatmap(args),
            ReportCommand::Tsne(args) => report_tsne(args),
        },
    }
}

fn corpus_validate(args: CorpusValidateArgs) -> Result<()> {
    let groups = args.corpus.load()?;
    let stats = CorpusStats::from_groups(&groups);
    println!("corpus: {}", args.corpus.corpus.display());
    println!(
        "{:<15} {:>9} {:>12} {:>17}",
        "category", "contexts", "stereotypes", "anti-stereotypes"
    );
    for (category, counts) in &stats.per_category {
        println!(
            "{:<15} {:>9} {:>12} {:>17}",
            category.as_str(),
            counts.contexts,
            counts.stereotypes,
            counts.anti_stereotypes
        );
    }
    println!(
        "{:<15} {:>9} {:>12} {:>17}",
        "total", stats.total.contexts, stats.total.stereotypes, stats.total.anti_stereotypes
    );

    let split = args.corpus.split(&groups)?;
    println!(
        "split (fraction {}, seed {}): {} train / {} validation contexts",
        args.corpus.split_fraction,
        args.corpus.seed,
        split.train.len(),
        split.validation.len()
    );

    if let Some(eval_path) = &args.eval_set {
        let items = load_eval_set(eval_path)
            .with_context(|| format!("loading eval set {}", eval_path.display()))?;
        let mut per_category: BTreeMap<Category, usize> = BTreeMap::new();
        for item in &items {
            *per_category.entry(item.category).or_default() += 1;
        }
        let breakdown: Vec<String> = per_category
            .iter()
            .map(|(c, n)| format!("{} {}", c.as_str(), n))
            .collect();
        println!(
            "eval set: {} items ({})",
            items.len(),
            breakdown.join(", ")
        );
    }
    println!("ok");
    Ok(())
}

fn resolve_train_config(args: &TrainArgs) -> Result<TrainConfig> {
    let mut config = match &args.config {
        Some(path) => load_config_file::<TrainConfig>(path)?,
        None => {
            let kind = args.loss.unwrap_or(LossKind::NtbXent);
            TrainConfig::new(LossConfig::new(kind))
        }
    };
    if let Some(kind) = args.loss {
        config.loss.kind = kind;
    }
    if let Some(t) = args.temperature {
        config.loss.temperature = t;
    }
    if let Some(m) = args.margin {
        config.loss.margin = m;
    }
    if let Some(e) = args.epochs {
        config.max_epochs = e;
    }
    if let Some(lr) = args.learning_rate {
        config.learning_rate = lr;
    }
    if let Some(b) = args.batch_size {
        config.batch_size = b;
    }
    if let Some(p) = args.patience {
        config.patience = p;
    }
    if let Some(s) = args.train_seed {
        config.seed = s;
    }
    Ok(config)
}

fn run_train(args: TrainArgs) -> Result<()> {
    let groups = args.corpus.load()?;
    let split = args.corpus.split(&groups)?;
    let config = resolve_train_config(&args)?;
    let mut encoder = args.encoder.build_trainable()?;

    let record = train(&mut encoder, &split, &config, &args.out)?;
    println!("run: {}", record.run_id);
    println!(
        "validation Δsim: {:.6} before training, {:.6} at the best epoch",
        record.initial_delta_sim, record.best_validation_delta_sim
    );
    println!(
        "best epoch {} of {} run (validation loss {:.6})",
        record.best_epoch, record.stopped_epoch, record.best_validation_loss
    );
    println!("checkpoint: {}", record.best_checkpoint.display());
    Ok(())
}

fn run_sweep(args: SweepArgs) -> Result<()> {
    let groups = args.corpus.load()?;
    let split = args.corpus.split(&groups)?;
    let encoder = args.encoder.build_trainable()?;
    let base = match &args.config {
        Some(path) => load_config_file::<TrainConfig>(path)?,
        None => TrainConfig::new(LossConfig::new(LossKind::NtbXent)),
    };
    let grid = match &args.grid {
        Some(path) => load_config_file::<SweepGrid>(path)?,
        None => SweepGrid::default(),
    };
    let losses: Vec<LossKind> = if args.losses.is_empty() {
        LossKind::ALL.to_vec()
    } else {
        args.losses.clone()
    };

    let cells = sweep(&encoder, &split, &grid, &losses, &base, &args.out)?;
    std::fs::create_dir_all(&args.out)?;
    let cells_path = args.out.join("cells.json");
    std::fs::write(&cells_path, serde_json::to_string_pretty(&cells)?)?;

    let completed = cells
        .iter()
        .filter(|c| matches!(c.outcome, stereoprobe_core::trainer::CellOutcome::Completed { .. }))
        .count();
    println!(
        "{} cells: {} completed, {} failed",
        cells.len(),
        completed,
        cells.len() - completed
    );
    for (kind, record) in best_by_loss(&cells) {
        println!(
            "best {}: {} (validation Δsim {:.6})",
            kind, record.run_id, record.best_validation_delta_sim
        );
    }
    println!("outcomes: {}", cells_path.display());
    Ok(())
}

fn print_sim_table(report: &SimReport) {
    println!(
        "{:<15} {:>10} {:>10} {:>10}",
        "slice", "mu_intra", "mu_inter", "delta_sim"
    );
    for (category, summary) in &report.per_category {
        println!(
            "{:<15} {:>10.6} {:>10.6} {:>10.6}",
            category.as_str(),
            summary.mu_intra,
            summary.mu_inter,
            summary.delta_sim
        );
    }
    println!(
        "{:<15} {:>10.6} {:>10.6} {:>10.6}",
        "pooled", report.mu_intra, report.mu_inter, report.delta_sim
    );
    println!(
        "pairs: {} intra, {} inter",
        report.n_intra_pairs, report.n_inter_pairs
    );
}

fn run_deltasim(args: DeltasimArgs) -> Result<()> {
    let groups = args.corpus.load()?;
    let contexts = select_contexts(groups, &args.corpus, args.split)?;
    let encoder = args.encoder.build()?;
    let report = delta_sim(&contexts, encoder.as_ref())?;
    print_sim_table(&report);
    let json = serde_json::to_string_pretty(&report)?;
    match &args.out {
        Some(path) => {
            std::fs::write(path, json)?;
            println!("report: {}", path.display());
        }
        None => println!("{json}"),
    }
    Ok(())
}

/// The evaluate subcommand's on-disk output: enough context to rebuild the
/// table row without re-querying the endpoint.
#[derive(Debug, Serialize, Deserialize)]
struct EvaluationOutput {
    model: String,
    #[serde(default)]
    endpoint: Option<EndpointSummary>,
    #[serde(default)]
    generation: Option<GenerationConfig>,
    report: BiasReport,
}

#[derive(Debug, Default, Clone, Serialize, Deserialize)]
struct EndpointSummary {
    base_url: String,
    model_id: String,
}

enum EvalEndpoint {
    Http(HttpEndpoint),
    Recording(RecordingEndpoint<HttpEndpoint>),
    Replay(ReplayEndpoint),
}

impl EvalEndpoint {
    fn as_dyn(&self) -> &dyn ChatEndpoint {
        match self {
            EvalEndpoint::Http(e) => e,
            EvalEndpoint::Recording(e) => e,
            EvalEndpoint::Replay(e) => e,
        }
    }
}

fn resolve_endpoint_settings(arg: &str) -> Result<ModelEndpoint> {
    if arg.starts_with("http://") || arg.starts_with("https://") {
        let settings = ModelEndpoint::new(arg, "default").overlay_env();
        settings.validate()?;
        return Ok(settings);
    }
    let path = Path::new(arg);
    if !path.exists() {
        bail!("--model-endpoint `{arg}` is neither a URL nor an existing config file");
    }
    Ok(ModelEndpoint::resolve(Some(path))?)
}

fn run_evaluate(args: EvaluateArgs) -> Result<()> {
    let items = load_eval_set(&args.eval_set)
        .with_context(|| format!("loading eval set {}", args.eval_set.display()))?;
    let encoder = args.encoder.build()?;

    let replaying = args.cassette.is_some() && args.cassette_mode == CassetteMode::Replay;
    let settings = match (&args.model_endpoint, replaying) {
        (Some(arg), _) => Some(resolve_endpoint_settings(arg)?),
        (None, true) => None,
        (None, false) => bail!("--model-endpoint is required unless replaying a cassette"),
    };

    let endpoint = match (&args.cassette, args.cassette_mode) {
        (Some(path), CassetteMode::Replay) => {
            let cassette = Cassette::load(path)
                .with_context(|| format!("loading cassette {}", path.display()))?;
            EvalEndpoint::Replay(ReplayEndpoint::new(cassette))
        }
        (Some(_), CassetteMode::Record) | (None, _) => {
            let settings = settings
                .clone()
                .expect("endpoint settings required when not replaying");
            let http = HttpEndpoint::connect(settings)?;
            if args.cassette.is_some() {
                EvalEndpoint::Recording(RecordingEndpoint::new(http))
            } else {
                EvalEndpoint::Http(http)
            }
        }
    };

    let generation = GenerationConfig {
        n_queries_per_item: args.queries,
        max_retries_per_query: args.retries,
        top_p: args.top_p,
        temperature: args.temperature,
        strictness: if args.strict {
            ParseStrictness::Strict
        } else {
            ParseStrictness::Lenient
        },
    };

    let mut session = UnmaskSession::new(endpoint.as_dyn(), generation)?;
    if let Some(journal) = &args.journal {
        session = session.with_journal(journal)?;
    }
    let parallelism = args
        .parallelism
        .or_else(|| settings.as_ref().map(|s| s.parallelism))
        .unwrap_or(4);
    let all_records = session.unmask_all(&items, parallelism)?;

    if let (EvalEndpoint::Recording(recording), Some(path)) = (&endpoint, &args.cassette) {
        recording.cassette().save(path)?;
        println!("cassette: {}", path.display());
    }

    let verdicts: Vec<Verdict> = items
        .iter()
        .zip(&all_records)
        .map(|(item, records)| {
            let sentences = stereoprobe_gateway::predicted_sentences(records);
            verdict(item, &sentences, encoder.as_ref())
        })
        .collect::<Result<_, _>>()?;
    let report = aggregate(&verdicts, &items)?;

    let model = args
        .model_name
        .clone()
        .or_else(|| settings.as_ref().map(|s| s.model_id.clone()))
        .unwrap_or_else(|| "replayed-model".to_string());
    let output = EvaluationOutput {
        model: model.clone(),
        endpoint: settings.as_ref().map(|s| EndpointSummary {
            base_url: s.base_url.clone(),
            model_id: s.model_id.clone(),
        }),
        generation: Some(generation),
        report: report.clone(),
    };
    std::fs::write(&args.out, serde_json::to_string_pretty(&output)?)?;

    let markdown_path = args
        .markdown
        .clone()
        .unwrap_or_else(|| args.out.with_extension("md"));
    let table = reports::BiasTableArtifact {
        name: "evaluation".to_string(),
        score: TableScore::BiasScore,
        models: vec![reports::BiasTableRow {
            model: model.clone(),
            report: report.clone(),
        }],
    };
    std::fs::write(&markdown_path, reports::render_bias_table_markdown(&table))?;

    println!("model: {model}");
    for (category, scores) in &report.per_category {
        println!(
            "{:<15} p={} bias={} skip_ratio={:.3}",
            category.as_str(),
            scores
                .stereotype_probability
                .map(|v| format!("{v:.3}"))
                .unwrap_or_else(|| "-".into()),
            scores
                .bias_score
                .map(|v| format!("{v:.3}"))
                .unwrap_or_else(|| "-".into()),
            scores.skip_ratio
        );
    }
    println!(
        "overall: p={} bias={} skip_ratio={:.3}",
        report
            .overall
            .stereotype_probability
            .map(|v| format!("{v:.3}"))
            .unwrap_or_else(|| "-".into()),
        report
            .overall
            .bias_score
            .map(|v| format!("{v:.3}"))
            .unwrap_or_else(|| "-".into()),
        report.overall.skip_ratio
    );
    println!("report: {}", args.out.display());
    println!("table: {}", markdown_path.display());
    Ok(())
}

fn head_mode(freeze: bool, contrastive: bool) -> EncoderMode {
    match (freeze, contrastive) {
        (true, false) => EncoderMode::FrozenVanilla,
        (true, true) => EncoderMode::FrozenContrastive,
        (false, false) => EncoderMode::UnfrozenVanilla,
        (false, true) => EncoderMode::UnfrozenContrastive,
    }
}

fn resolve_head_config(args: &TrainHeadArgs) -> HeadConfig {
    let mut config = HeadConfig::default();
    if let Some(e) = args.epochs {
        config.max_epochs = e;
    }
    if let Some(p) = args.patience {
        config.patience = p;
    }
    if let Some(lr) = args.learning_rate {
        config.learning_rate = lr;
    }
    if let Some(b) = args.batch_size {
        config.batch_size = b;
    }
    if let Some(s) = args.head_seed {
        config.seed = s;
    }
    if let Some(t) = args.threshold {
        config.threshold = t;
    }
    config
}

fn print_f1_report(report: &F1Report) {
    println!("encoder mode: {}", report.encoder_mode);
    println!("{:<15} {:>9}", "category", "macro-F1");
    for (category, f1) in &report.per_category {
        println!("{:<15} {:>9.3}", category.as_str(), f1);
    }
    println!("{:<15} {:>9.3}", "overall", report.macro_f1);
}

fn run_train_head(args: TrainHeadArgs) -> Result<()> {
    let groups = args.corpus.load()?;
    let split = args.corpus.split(&groups)?;
    let mode = head_mode(args.freeze, args.encoder.is_contrastive());
    let config = resolve_head_config(&args);

    let out = match (&args.out, &args.encoder.encoder_checkpoint) {
        (Some(path), _) => path.clone(),
        (None, Some(dir)) => dir.join("head.json"),
        (None, None) => bail!("--out is required when no --encoder-checkpoint is given"),
    };

    let (head, report) = if mode.frozen() {
        let mut encoder = args.encoder.build()?;
        let head = train_head(&mut *encoder, &split, mode, &config)?;
        let report = evaluate_head(&head, &*encoder, &split.validation, mode)?;
        (head, report)
    } else {
        // Unfrozen modes update encoder weights, so they need the concrete
        // trainable backend — and the updated weights are worth keeping.
        let mut encoder = args.encoder.build_trainable()?;
        let head = train_head(&mut encoder, &split, mode, &config)?;
        let report = evaluate_head(&head, &encoder, &split.validation, mode)?;
        if let Some(dir) = &args.encoder_out {
            std::fs::create_dir_all(dir)?;
            encoder.save_checkpoint(
                dir,
                Some(serde_json::json!({ "head_config": config, "mode": mode })),
            )?;
            println!("updated encoder: {}", dir.display());
        }
        (head, report)
    };

    head.save(&out)?;
    print_f1_report(&report);
    println!("head: {}", out.display());
    Ok(())
}

fn run_eval_head(args: EvalHeadArgs) -> Result<()> {
    let groups = args.corpus.load()?;
    let contexts = select_contexts(groups, &args.corpus, args.split)?;
    let encoder = args.encoder.build()?;
    let head = MlpHead::load(&args.head)
        .with_context(|| format!("loading head {}", args.head.display()))?;
    let mode = head_mode(args.freeze, args.encoder.is_contrastive());
    let report = evaluate_head(&head, encoder.as_ref(), &contexts, mode)?;
    print_f1_report(&report);
    if let Some(path) = &args.out {
        std::fs::write(path, serde_json::to_string_pretty(&report)?)?;
        println!("report: {}", path.display());
    }
    Ok(())
}

fn report_bias_table(args: ReportBiasTableArgs) -> Result<()> {
    let mut models = Vec::new();
    let mut sources = Vec::new();
    for path in &args.inputs {
        let output: EvaluationOutput =
            serde_json::from_str(&std::fs::read_to_string(path).with_context(|| {
                format!("reading evaluation output {}", path.display())
            })?)
            .with_context(|| format!("parsing evaluation output {}", path.display()))?;
        sources.push(path.display().to_string());
        models.push((output.model, output.report));
    }
    let bundle = ReportBundle::create(&args.out_root, &args.run_id)?;
    let mut meta = RunMeta::new(&args.run_id);
    meta.configs = serde_json::json!({ "inputs": sources, "score": match args.score {
        ScoreChoice::Bias => "bias_score",
        ScoreChoice::Kl => "kl_score",
    }});
    bundle.write_meta(&meta)?;
    reports::emit_bias_table(&bundle, &args.name, &models, args.score.into())?;
    println!(
        "bundle: {} (tables/{}.md, tables/{}.csv)",
        bundle.dir().display(),
        args.name,
        args.name
    );
    Ok(())
}

fn report_heatmap(args: ReportHeatmapArgs) -> Result<()> {
    let cells: Vec<SweepCell> =
        serde_json::from_str(&std::fs::read_to_string(&args.cells).with_context(|| {
            format!("reading sweep outcomes {}", args.cells.display())
        })?)
        .with_context(|| format!("parsing sweep outcomes {}", args.cells.display()))?;
    let bundle = ReportBundle::create(&args.out_root, &args.run_id)?;
    let mut meta = RunMeta::new(&args.run_id);
    meta.configs = serde_json::json!({ "cells": args.cells.display().to_string() });
    bundle.write_meta(&meta)?;
    let artifact = reports::emit_sweep_heatmap(&bundle, &args.name, &cells)?;
    let (rows, cols) = artifact.shape();
    println!(
        "bundle: {} ({}×{} grid, figures/{}.png)",
        bundle.dir().display(),
        rows,
        cols,
        args.name
    );
    Ok(())
}

fn report_tsne(args: ReportTsneArgs) -> Result<()> {
    let groups = args.corpus.load()?;
    let contexts = select_contexts(groups, &args.corpus, args.split)?;
    let encoder = args.encoder.build()?;

    let mut labels = Vec::new();
    let mut texts: Vec<&str> = Vec::new();
    for group in &contexts {
        if args.category.is_some_and(|c| c != group.category) {
            continue;
        }
        for record in group.sentences() {
            labels.push(record.label.as_str().to_string());
            texts.push(record.text.as_str());
        }
    }
    if texts.is_empty() {
        bail!("no sentences matched the requested category/split");
    }
    let points: Vec<Vec<f64>> = encoder
        .embed(&texts)?
        .into_iter()
        .map(|e| e.values)
        .collect();

    let config = TsneConfig::default()
        .with_perplexity(args.perplexity)
        .with_iterations(args.iterations)
        .with_seed(args.tsne_seed);
    let bundle = ReportBundle::create(&args.out_root, &args.run_id)?;
    let mut meta = RunMeta::new(&args.run_id);
    meta.seeds.insert("split".into(), args.corpus.seed);
    meta.seeds.insert("tsne".into(), args.tsne_seed);
    meta.corpus_sha256 = Some(reports::sha256_file(&args.corpus.corpus)?);
    meta.configs = serde_json::json!({
        "category": args.category.map(|c| c.as_str()),
        "perplexity": args.perplexity,
        "iterations": args.iterations,
    });
    bundle.write_meta(&meta)?;
    let artifact = reports::emit_tsne(&bundle, &args.name, &labels, &points, &config)?;
    println!(
        "bundle: {} ({} points, figures/{}.png)",
        bundle.dir().display(),
        artifact.coordinates.len(),
        args.name
    );
    Ok(())
}
