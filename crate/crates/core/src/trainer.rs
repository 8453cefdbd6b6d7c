//! Contrastive fine-tuning loop: whole-context batch packing, early stopping
//! on validation loss, checkpointing of the best epoch, and the
//! hyperparameter grid sweep.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{ContextGroup, CorpusSplit, Label};
use crate::embedder::{BagEncoder, EmbedderError, SentenceEncoder};
use crate::losses::{loss_with_grad, LossConfig, LossError, LossKind, PairBatch};
use crate::optim::{clip_global_norm, AdamW, AdamWConfig};
use crate::repr_metrics::{delta_sim, MetricsError, SimReport};

/// Maximum global gradient norm; guards low-temperature runs against blowup.
pub const GRADIENT_CLIP_NORM: f64 = 1.0;

/// Which validation quantity drives early stopping and best-epoch selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum StopMetric {
    /// Minimize validation loss (default protocol).
    #[default]
    ValidationLoss,
    /// Maximize validation Δsim (exploratory alternative).
    DeltaSim,
}

/// One training run's hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub loss: LossConfig,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Stop after this many epochs without validation improvement.
    pub patience: usize,
    pub seed: u64,
    pub weight_decay: f64,
    #[serde(default)]
    pub stop_metric: StopMetric,
}

impl TrainConfig {
    pub fn new(loss: LossConfig) -> TrainConfig {
        TrainConfig {
            loss,
            learning_rate: 5e-5,
            batch_size: 256,
            max_epochs: 30,
            patience: 3,
            seed: 0,
            weight_decay: 0.01,
            stop_metric: StopMetric::ValidationLoss,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        if self.patience < 1 {
            return Err(TrainError::InvalidConfig("patience must be ≥ 1".into()));
        }
        if self.batch_size < 2 {
            return Err(TrainError::InvalidConfig("batch_size must be ≥ 2".into()));
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(TrainError::InvalidConfig(
                "learning_rate must be finite and non-negative".into(),
            ));
        }
        if self.max_epochs < 1 {
            return Err(TrainError::InvalidConfig("max_epochs must be ≥ 1".into()));
        }
        self.loss
            .validate()
            .map_err(|e| TrainError::IncompatibleLossConfig(e.to_string()))?;
        Ok(())
    }

    /// Stable identifier encoding the cell's hyperparameters.
    pub fn run_id(&self) -> String {
        format!(
            "{}-tau{}-m{}-ep{}-seed{}",
            self.loss.kind, self.loss.temperature, self.loss.margin, self.max_epochs, self.seed
        )
    }
}

/// Hyperparameter grid for [`sweep`]. Temperatures apply to the
/// softmax/sigmoid losses, margins to the hinge losses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub temperatures: Vec<f64>,
    pub margins: Vec<f64>,
    pub epochs: Vec<usize>,
}

impl Default for SweepGrid {
    fn default() -> SweepGrid {
        SweepGrid {
            temperatures: vec![0.1, 0.5, 1.0, 10.0, 20.0, 30.0],
            margins: vec![0.2, 0.3, 0.4, 0.5, 0.6],
            epochs: vec![30, 50, 100],
        }
    }
}

/// Per-epoch observations, 1-based epochs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub validation_loss: f64,
    pub validation_delta_sim: f64,
}

/// Everything recorded about one completed training run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainRunRecord {
    pub run_id: String,
    pub config: TrainConfig,
    pub epochs: Vec<EpochMetrics>,
    /// Validation Δsim of the encoder before any update.
    pub initial_delta_sim: f64,
    pub best_epoch: usize,
    pub best_validation_loss: f64,
    pub best_validation_delta_sim: f64,
    pub stopped_epoch: usize,
    /// Directory holding `manifest.json` + `weights.bin` of the best epoch.
    pub best_checkpoint: PathBuf,
}

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("loss diverged (NaN/Inf) at epoch {epoch}, batch {batch}")]
    DivergedLoss { epoch: usize, batch: usize },
    #[error("loss configuration incompatible with training: {0}")]
    IncompatibleLossConfig(String),
    #[error("context {context_id} has {size} sentences, exceeding batch size {batch_size}")]
    ContextLargerThanBatch {
        context_id: String,
        size: usize,
        batch_size: usize,
    },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("encoder backend does not expose trainable parameters")]
    NotTrainable,
    #[error("training split is empty")]
    EmptySplit,
    #[error("no batch in the epoch produced a usable loss: {0}")]
    UnusableBatches(String),
    #[error(transparent)]
    Encoder(#[from] EmbedderError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("metrics csv failure: {0}")]
    Csv(#[from] csv::Error),
}

/// A planned batch: indices into the context list plus its sentence count.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchPlan {
    pub context_indices: Vec<usize>,
    pub n_sentences: usize,
}

/// Pack whole contexts into batches of at most `batch_size` sentences.
///
/// Context order is permuted by `seed`, then contexts are packed greedily in
/// that order; a context is never split across batches, because every
/// positive/negative pair lives inside one context.
pub fn make_batches(
    groups: &[ContextGroup],
    batch_size: usize,
    seed: u64,
) -> Result<Vec<BatchPlan>, TrainError> {
    if batch_size < 2 {
        return Err(TrainError::InvalidConfig("batch_size must be ≥ 2".into()));
    }
    for g in groups {
        if g.len() > batch_size {
            return Err(TrainError::ContextLargerThanBatch {
                context_id: g.context_id.clone(),
                size: g.len(),
                batch_size,
            });
        }
    }
    let mut order: Vec<usize> = (0..groups.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);

    let mut batches = Vec::new();
    let mut current = BatchPlan {
        context_indices: Vec::new(),
        n_sentences: 0,
    };
    for idx in order {
        let size = groups[idx].len();
        if current.n_sentences + size > batch_size && !current.context_indices.is_empty() {
            batches.push(std::mem::replace(
                &mut current,
                BatchPlan {
                    context_indices: Vec::new(),
                    n_sentences: 0,
                },
            ));
        }
        current.context_indices.push(idx);
        current.n_sentences += size;
    }
    if !current.context_indices.is_empty() {
        batches.push(current);
    }
    Ok(batches)
}

/// Epoch-specific batch seed, mixed so consecutive epochs decorrelate.
fn epoch_seed(base: u64, epoch: usize) -> u64 {
    base ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Materialize one planned batch as texts/labels/contexts.
fn collect_batch<'a>(
    groups: &'a [ContextGroup],
    plan: &BatchPlan,
) -> (Vec<&'a str>, Vec<Label>, Vec<String>) {
    let mut texts = Vec::with_capacity(plan.n_sentences);
    let mut labels = Vec::with_capacity(plan.n_sentences);
    let mut contexts = Vec::with_capacity(plan.n_sentences);
    for &idx in &plan.context_indices {
        for record in groups[idx].sentences() {
            texts.push(record.text.as_str());
            labels.push(record.label);
            contexts.push(record.context_id.clone());
        }
    }
    (texts, labels, contexts)
}

/// Loss of one batch under the current encoder, with gradient if requested.
/// Batches that cannot form the pairs a loss needs are reported as `Ok(None)`
/// so callers may skip them (mixed corpora can pack a degenerate batch).
fn batch_loss(
    encoder: &dyn SentenceEncoder,
    groups: &[ContextGroup],
    plan: &BatchPlan,
    loss: &LossConfig,
) -> Result<Option<(f64, Vec<Vec<f64>>, Vec<String>)>, TrainError> {
    let (texts, labels, contexts) = collect_batch(groups, plan);
    let vectors = encoder.embed(&texts)?;
    let batch = PairBatch::from_vectors(&vectors, labels, contexts)?;
    match loss_with_grad(&batch, loss) {
        Ok((value, grad)) => {
            let rows: Vec<Vec<f64>> = grad.rows().into_iter().map(|r| r.to_vec()).collect();
            let owned_texts = texts.iter().map(|t| t.to_string()).collect();
            Ok(Some((value, rows, owned_texts)))
        }
        Err(
            e @ (LossError::NoPositivePair
            | LossError::NoNegativePair
            | LossError::NoLabeledPairs
            | LossError::NoTripletConstructible),
        ) => {
            log::warn!("skipping batch without usable pairs: {e}");
            Ok(None)
        }
        Err(e) => Err(e.into()),
    }
}

/// Mean loss over an epoch's batches without touching parameters.
fn evaluate_loss(
    encoder: &dyn SentenceEncoder,
    groups: &[ContextGroup],
    plans: &[BatchPlan],
    loss: &LossConfig,
) -> Result<f64, TrainError> {
    let mut total = 0.0;
    let mut used = 0usize;
    let mut last_skip = String::new();
    for plan in plans {
        match batch_loss(encoder, groups, plan, loss)? {
            Some((value, _, _)) => {
                total += value;
                used += 1;
            }
            None => last_skip = "no usable pairs".to_string(),
        }
    }
    if used == 0 {
        return Err(TrainError::UnusableBatches(last_skip));
    }
    Ok(total / used as f64)
}

fn require_trainable(
    encoder: &mut dyn SentenceEncoder,
) -> Result<&mut dyn crate::embedder::TrainableEncoder, TrainError> {
    encoder.as_trainable().ok_or(TrainError::NotTrainable)
}

/// Fine-tune `encoder` on `split.train`, early-stopping on `split.validation`.
///
/// Writes the best checkpoint (`manifest.json` + `weights.bin`) and a
/// per-epoch `metrics.csv` into `out_dir/{run_id}`, and leaves `encoder` at
/// the best epoch's weights on return.
pub fn train(
    encoder: &mut BagEncoder,
    split: &CorpusSplit,
    config: &TrainConfig,
    out_dir: &Path,
) -> Result<TrainRunRecord, TrainError> {
    config.validate()?;
    if split.train.is_empty() {
        return Err(TrainError::EmptySplit);
    }
    let run_dir = out_dir.join(config.run_id());
    std::fs::create_dir_all(&run_dir)?;

    let initial_delta_sim = delta_sim(&split.validation, encoder)?.delta_sim;
    // Validation packing is fixed across epochs so its loss is comparable.
    let validation_plans = make_batches(&split.validation, config.batch_size, config.seed)?;

    let trainable = require_trainable(encoder)?;
    let mut optimizer = AdamW::new(
        trainable.param_len(),
        AdamWConfig::new(config.learning_rate).with_weight_decay(config.weight_decay),
    );

    let mut epochs: Vec<EpochMetrics> = Vec::new();
    let mut best: Option<(usize, f64, f64, Vec<f64>)> = None; // epoch, val loss, val Δsim, params
    let mut epochs_since_improvement = 0usize;
    let mut stopped_epoch = 0usize;

    for epoch in 1..=config.max_epochs {
        stopped_epoch = epoch;
        let plans = make_batches(&split.train, config.batch_size, epoch_seed(config.seed, epoch))?;
        let mut epoch_loss = 0.0;
        let mut used_batches = 0usize;
        for (batch_idx, plan) in plans.iter().enumerate() {
            let Some((value, upstream, texts)) = batch_loss(trainable, &split.train, plan, &config.loss)?
            else {
                continue;
            };
            if !value.is_finite() {
                return Err(TrainError::DivergedLoss {
                    epoch,
                    batch: batch_idx,
                });
            }
            let text_refs: Vec<&str> = texts.iter().map(|t| t.as_str()).collect();
            let mut grads = trainable.param_grads(&text_refs, &upstream)?;
            clip_global_norm(&mut grads, GRADIENT_CLIP_NORM);
            optimizer.step(trainable.params_mut(), &grads);
            epoch_loss += value;
            used_batches += 1;
        }
        if used_batches == 0 {
            return Err(TrainError::UnusableBatches(
                "every training batch lacked usable pairs".into(),
            ));
        }
        let train_loss = epoch_loss / used_batches as f64;
        let validation_loss =
            evaluate_loss(trainable, &split.validation, &validation_plans, &config.loss)?;
        if !validation_loss.is_finite() {
            return Err(TrainError::DivergedLoss { epoch, batch: 0 });
        }
        let validation_delta_sim = delta_sim(&split.validation, trainable)?.delta_sim;
        epochs.push(EpochMetrics {
            epoch,
            train_loss,
            validation_loss,
            validation_delta_sim,
        });

        let improved = match (&best, config.stop_metric) {
            (None, _) => true,
            (Some((_, best_loss, _, _)), StopMetric::ValidationLoss) => {
                validation_loss < *best_loss
            }
            (Some((_, _, best_ds, _)), StopMetric::DeltaSim) => validation_delta_sim > *best_ds,
        };
        if improved {
            best = Some((
                epoch,
                validation_loss,
                validation_delta_sim,
                trainable.params().to_vec(),
            ));
            epochs_since_improvement = 0;
        } else {
            epochs_since_improvement += 1;
            if epochs_since_improvement >= config.patience {
                break;
            }
        }
    }

    let (best_epoch, best_validation_loss, best_validation_delta_sim, best_params) =
        best.expect("at least one epoch ran");
    trainable.params_mut().copy_from_slice(&best_params);

    encoder.save_checkpoint(
        &run_dir,
        Some(serde_json::to_value(config).expect("config serializes")),
    )?;
    let record = TrainRunRecord {
        run_id: config.run_id(),
        config: config.clone(),
        epochs,
        initial_delta_sim,
        best_epoch,
        best_validation_loss,
        best_validation_delta_sim,
        stopped_epoch,
        best_checkpoint: run_dir.clone(),
    };
    write_metrics_csv(&run_dir.join("metrics.csv"), &record)?;
    std::fs::write(
        run_dir.join("record.json"),
        serde_json::to_string_pretty(&record).expect("record serializes"),
    )?;
    Ok(record)
}

/// Per-epoch metrics in CSV form for downstream plotting.
fn write_metrics_csv(path: &Path, record: &TrainRunRecord) -> Result<(), TrainError> {
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record(["epoch", "train_loss", "validation_loss", "validation_delta_sim"])?;
    for m in &record.epochs {
        writer.write_record([
            m.epoch.to_string(),
            format!("{:.12}", m.train_loss),
            format!("{:.12}", m.validation_loss),
            format!("{:.12}", m.validation_delta_sim),
        ])?;
    }
    writer.flush()?;
    Ok(())
}

/// Outcome of one sweep cell; failures are recorded, not propagated.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum CellOutcome {
    Completed { record: TrainRunRecord },
    Failed { reason: String },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepCell {
    pub config: TrainConfig,
    pub outcome: CellOutcome,
}

/// Expand a grid into per-cell configs: temperature × epochs for the
/// softmax/sigmoid losses, margin × epochs for the hinge losses.
pub fn expand_grid(
    grid: &SweepGrid,
    losses: &[LossKind],
    base: &TrainConfig,
) -> Result<Vec<TrainConfig>, TrainError> {
    if grid.epochs.is_empty() {
        return Err(TrainError::InvalidConfig("grid.epochs is empty".into()));
    }
    let mut cells = Vec::new();
    for &kind in losses {
        let values: &[f64] = if kind.uses_temperature() {
            &grid.temperatures
        } else {
            &grid.margins
        };
        if values.is_empty() {
            return Err(TrainError::InvalidConfig(format!(
                "grid has no values for {kind}"
            )));
        }
        for &value in values {
            for &max_epochs in &grid.epochs {
                let mut config = base.clone();
                config.loss.kind = kind;
                if kind.uses_temperature() {
                    config.loss.temperature = value;
                } else {
                    config.loss.margin = value;
                }
                config.max_epochs = max_epochs;
                cells.push(config);
            }
        }
    }
    Ok(cells)
}

/// Run every grid cell from the same initial encoder state. Cells run in
/// parallel; the result order matches [`expand_grid`] regardless of
/// scheduling. A failed cell is recorded and does not abort the sweep.
pub fn sweep(
    base_encoder: &BagEncoder,
    split: &CorpusSplit,
    grid: &SweepGrid,
    losses: &[LossKind],
    base: &TrainConfig,
    out_dir: &Path,
) -> Result<Vec<SweepCell>, TrainError> {
    let cells = expand_grid(grid, losses, base)?;
    let results: Vec<SweepCell> = cells
        .into_par_iter()
        .map(|config| {
            let mut encoder = base_encoder.clone();
            let outcome = match train(&mut encoder, split, &config, out_dir) {
                Ok(record) => CellOutcome::Completed { record },
                Err(e) => CellOutcome::Failed {
                    reason: e.to_string(),
                },
            };
            SweepCell { config, outcome }
        })
        .collect();
    Ok(results)
}

/// Best completed cell per loss, ranked by best validation Δsim.
pub fn best_by_loss(cells: &[SweepCell]) -> BTreeMap<LossKind, &TrainRunRecord> {
    let mut best: BTreeMap<LossKind, &TrainRunRecord> = BTreeMap::new();
    for cell in cells {
        let CellOutcome::Completed { record } = &cell.outcome else {
            continue;
        };
        let kind = cell.config.loss.kind;
        let better = match best.get(&kind) {
            None => true,
            Some(current) => {
                record.best_validation_delta_sim > current.best_validation_delta_sim
            }
        };
        if better {
            best.insert(kind, record);
        }
    }
    best
}

/// Reload the encoder stored by [`train`]'s best checkpoint.
pub fn load_checkpoint_encoder(run_dir: &Path) -> Result<BagEncoder, TrainError> {
    Ok(BagEncoder::load_checkpoint(run_dir)?)
}

/// Convenience for tests and the separation report: Δsim of a split's
/// validation side, with full per-category breakdown.
pub fn validation_report(
    encoder: &dyn SentenceEncoder,
    split: &CorpusSplit,
) -> Result<SimReport, TrainError> {
    Ok(delta_sim(&split.validation, encoder)?)
}
