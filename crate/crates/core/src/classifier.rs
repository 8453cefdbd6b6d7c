//! Supervised stereotype detector: a 2-layer MLP probe over sentence
//! embeddings (D → D/2 → 1, rectified-linear hidden layer, sigmoid output),
//! trained with binary cross entropy and scored by macro-averaged F1 per
//! bias category.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Category, ContextGroup, CorpusSplit, Label};
use crate::embedder::{EmbedderError, SentenceEncoder};
use crate::optim::{clip_global_norm, AdamW, AdamWConfig};

/// Which encoder variant feeds the head, and whether it receives gradients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderMode {
    FrozenVanilla,
    FrozenContrastive,
    UnfrozenVanilla,
    UnfrozenContrastive,
}

impl EncoderMode {
    pub const ALL: [EncoderMode; 4] = [
        EncoderMode::FrozenVanilla,
        EncoderMode::FrozenContrastive,
        EncoderMode::UnfrozenVanilla,
        EncoderMode::UnfrozenContrastive,
    ];

    /// Frozen modes never propagate gradients into the encoder.
    pub fn frozen(self) -> bool {
        matches!(self, EncoderMode::FrozenVanilla | EncoderMode::FrozenContrastive)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            EncoderMode::FrozenVanilla => "frozen_vanilla",
            EncoderMode::FrozenContrastive => "frozen_contrastive",
            EncoderMode::UnfrozenVanilla => "unfrozen_vanilla",
            EncoderMode::UnfrozenContrastive => "unfrozen_contrastive",
        }
    }
}

impl std::fmt::Display for EncoderMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Head-training hyperparameters; optimizer family and learning rate mirror
/// the contrastive trainer's defaults.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeadConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub weight_decay: f64,
    /// Sigmoid decision threshold for the stereotype class.
    pub threshold: f64,
}

impl Default for HeadConfig {
    fn default() -> HeadConfig {
        HeadConfig {
            learning_rate: 5e-5,
            batch_size: 256,
            max_epochs: 50,
            patience: 3,
            seed: 0,
            weight_decay: 0.01,
            threshold: 0.5,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ClassifierError {
    #[error("head training diverged (NaN/Inf loss) at epoch {epoch}")]
    DivergedLoss { epoch: usize },
    #[error("training split is empty")]
    EmptySplit,
    #[error("unfrozen mode requires a trainable encoder backend")]
    NotTrainable,
    #[error("invalid head config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Encoder(#[from] EmbedderError),
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("head checkpoint failure: {0}")]
    Checkpoint(String),
}

/// 2-layer MLP: input D → hidden D/2 (rectified linear) → 1 logit.
/// Parameters live in one flat vector (w1, b1, w2, b2) so a single optimizer
/// instance covers the whole head.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MlpHead {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub threshold: f64,
    params: Vec<f64>,
}

impl MlpHead {
    pub fn new(input_dim: usize, seed: u64) -> MlpHead {
        let hidden_dim = (input_dim / 2).max(1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n_params = hidden_dim * input_dim + hidden_dim + hidden_dim + 1;
        let scale1 = 1.0 / (input_dim as f64).sqrt();
        let scale2 = 1.0 / (hidden_dim as f64).sqrt();
        let mut params = vec![0.0; n_params];
        for p in params[..hidden_dim * input_dim].iter_mut() {
            *p = (rng.gen::<f64>() * 2.0 - 1.0) * scale1;
        }
        let w2_start = hidden_dim * input_dim + hidden_dim;
        for p in params[w2_start..w2_start + hidden_dim].iter_mut() {
            *p = (rng.gen::<f64>() * 2.0 - 1.0) * scale2;
        }
        MlpHead {
            input_dim,
            hidden_dim,
            threshold: 0.5,
            params,
        }
    }

    pub fn param_len(&self) -> usize {
        self.params.len()
    }

    fn offsets(&self) -> (usize, usize, usize) {
        let w1_end = self.hidden_dim * self.input_dim;
        let b1_end = w1_end + self.hidden_dim;
        let w2_end = b1_end + self.hidden_dim;
        (w1_end, b1_end, w2_end)
    }

    /// Forward pass returning the pre-activation hidden layer and the logit.
    fn forward_cached(&self, x: &[f64]) -> (Vec<f64>, f64) {
        let (w1_end, b1_end, w2_end) = self.offsets();
        let w1 = &self.params[..w1_end];
        let b1 = &self.params[w1_end..b1_end];
        let w2 = &self.params[b1_end..w2_end];
        let b2 = self.params[w2_end];
        let mut hidden_pre = vec![0.0; self.hidden_dim];
        for j in 0..self.hidden_dim {
            let row = &w1[j * self.input_dim..(j + 1) * self.input_dim];
            hidden_pre[j] = b1[j] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
        }
        let logit = b2
            + hidden_pre
                .iter()
                .zip(w2)
                .map(|(h, w)| h.max(0.0) * w)
                .sum::<f64>();
        (hidden_pre, logit)
    }

    pub fn logit(&self, x: &[f64]) -> f64 {
        self.forward_cached(x).1
    }

    /// σ(logit): probability that the input is a stereotype.
    pub fn probability(&self, x: &[f64]) -> f64 {
        sigmoid(self.logit(x))
    }

    /// Threshold the sigmoid output; the boundary itself falls to the
    /// anti-stereotype class.
    pub fn predict(&self, x: &[f64]) -> Label {
        if self.probability(x) > self.threshold {
            Label::Stereotype
        } else {
            Label::AntiStereotype
        }
    }

    /// Accumulate d(BCE)/d(params) into `grad` (scaled by `weight`) and
    /// return d(BCE)/d(x) for backprop into an unfrozen encoder.
    fn backward(
        &self,
        x: &[f64],
        hidden_pre: &[f64],
        logit: f64,
        target: f64,
        weight: f64,
        grad: &mut [f64],
    ) -> Vec<f64> {
        let (w1_end, b1_end, w2_end) = self.offsets();
        let dz = (sigmoid(logit) - target) * weight;
        let w1 = &self.params[..w1_end];
        let w2 = &self.params[b1_end..w2_end];
        let mut dx = vec![0.0; self.input_dim];
        for j in 0..self.hidden_dim {
            let h = hidden_pre[j].max(0.0);
            grad[b1_end + j] += dz * h; // w2
            if hidden_pre[j] > 0.0 {
                let dpre = dz * w2[j];
                grad[w1_end + j] += dpre; // b1
                let row = j * self.input_dim;
                for k in 0..self.input_dim {
                    grad[row + k] += dpre * x[k]; // w1
                    dx[k] += dpre * w1[row + k];
                }
            }
        }
        grad[w2_end] += dz; // b2
        dx
    }

    pub fn save(&self, path: &Path) -> Result<(), ClassifierError> {
        let json = serde_json::to_string(self)
            .map_err(|e| ClassifierError::Checkpoint(e.to_string()))?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<MlpHead, ClassifierError> {
        let json = std::fs::read_to_string(path)?;
        serde_json::from_str(&json).map_err(|e| ClassifierError::Checkpoint(e.to_string()))
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable binary cross entropy from the logit.
fn bce(logit: f64, target: f64) -> f64 {
    let softplus = |v: f64| v.max(0.0) + (-v.abs()).exp().ln_1p();
    target * softplus(-logit) + (1.0 - target) * softplus(logit)
}

fn flatten(groups: &[ContextGroup]) -> Vec<(&str, Category, Label)> {
    groups
        .iter()
        .flat_map(|g| g.sentences().map(|r| (r.text.as_str(), r.category, r.label)))
        .collect()
}

fn label_target(label: Label) -> f64 {
    match label {
        Label::Stereotype => 1.0,
        Label::AntiStereotype => 0.0,
    }
}

/// Train an MLP head over `encoder` embeddings of `split.train`, early
/// stopping on `split.validation` BCE; returns the best-validation head.
/// Unfrozen modes update the encoder in place alongside the head.
pub fn train_head(
    encoder: &mut dyn SentenceEncoder,
    split: &CorpusSplit,
    mode: EncoderMode,
    config: &HeadConfig,
) -> Result<MlpHead, ClassifierError> {
    if config.batch_size < 1 {
        return Err(ClassifierError::InvalidConfig("batch_size must be ≥ 1".into()));
    }
    if config.max_epochs < 1 || config.patience < 1 {
        return Err(ClassifierError::InvalidConfig(
            "max_epochs and patience must be ≥ 1".into(),
        ));
    }
    let train_rows = flatten(&split.train);
    let val_rows = flatten(&split.validation);
    if train_rows.is_empty() || val_rows.is_empty() {
        return Err(ClassifierError::EmptySplit);
    }
    if !mode.frozen() && encoder.as_trainable().is_none() {
        return Err(ClassifierError::NotTrainable);
    }

    let dim = encoder.info().dimension;
    let mut head = MlpHead::new(dim, config.seed);
    head.threshold = config.threshold;
    let mut head_opt = AdamW::new(
        head.param_len(),
        AdamWConfig::new(config.learning_rate).with_weight_decay(config.weight_decay),
    );
    let mut encoder_opt = if mode.frozen() {
        None
    } else {
        let trainable = encoder.as_trainable().expect("checked above");
        Some(AdamW::new(
            trainable.param_len(),
            AdamWConfig::new(config.learning_rate).with_weight_decay(config.weight_decay),
        ))
    };

    // Frozen encoders embed each text once up front.
    let frozen_train: Option<Vec<Vec<f64>>> = if mode.frozen() {
        let texts: Vec<&str> = train_rows.iter().map(|r| r.0).collect();
        Some(embed_values(encoder, &texts)?)
    } else {
        None
    };

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0xC1A5_51F1);
    let mut best: Option<(f64, Vec<f64>, Option<Vec<f64>>)> = None; // val loss, head, encoder
    let mut since_improvement = 0usize;

    for epoch in 1..=config.max_epochs {
        let mut order: Vec<usize> = (0..train_rows.len()).collect();
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            let weight = 1.0 / chunk.len() as f64;
            let mut grad = vec![0.0; head.param_len()];
            let mut batch_loss = 0.0;

            // Embeddings for this batch: cached when frozen, fresh otherwise.
            let embeddings: Vec<Vec<f64>> = match &frozen_train {
                Some(cache) => chunk.iter().map(|&i| cache[i].clone()).collect(),
                None => {
                    let texts: Vec<&str> = chunk.iter().map(|&i| train_rows[i].0).collect();
                    embed_values(encoder, &texts)?
                }
            };
            let mut upstream: Vec<Vec<f64>> = Vec::new();
            for (&i, x) in chunk.iter().zip(&embeddings) {
                let target = label_target(train_rows[i].2);
                let (hidden_pre, logit) = head.forward_cached(x);
                batch_loss += weight * bce(logit, target);
                let dx = head.backward(x, &hidden_pre, logit, target, weight, &mut grad);
                if !mode.frozen() {
                    upstream.push(dx);
                }
            }
            if !batch_loss.is_finite() {
                return Err(ClassifierError::DivergedLoss { epoch });
            }
            clip_global_norm(&mut grad, 1.0);
            head_opt.step(&mut head.params, &grad);

            if let Some(opt) = encoder_opt.as_mut() {
                let trainable = encoder.as_trainable().expect("checked above");
                let texts: Vec<&str> = chunk.iter().map(|&i| train_rows[i].0).collect();
                let mut enc_grad = trainable.param_grads(&texts, &upstream)?;
                clip_global_norm(&mut enc_grad, 1.0);
                opt.step(trainable.params_mut(), &enc_grad);
            }
        }

        // Validation BCE under current weights.
        let texts: Vec<&str> = val_rows.iter().map(|r| r.0).collect();
        let val_embeddings = embed_values(encoder, &texts)?;
        let mut val_loss = 0.0;
        for (row, x) in val_rows.iter().zip(&val_embeddings) {
            val_loss += bce(head.logit(x), label_target(row.2));
        }
        val_loss /= val_rows.len() as f64;
        if !val_loss.is_finite() {
            return Err(ClassifierError::DivergedLoss { epoch });
        }

        let improved = best.as_ref().map_or(true, |(b, _, _)| val_loss < *b);
        if improved {
            let encoder_params = encoder
                .as_trainable()
                .filter(|_| !mode.frozen())
                .map(|t| t.params().to_vec());
            best = Some((val_loss, head.params.clone(), encoder_params));
            since_improvement = 0;
        } else {
            since_improvement += 1;
            if since_improvement >= config.patience {
                break;
            }
        }
    }

    let (_, best_head, best_encoder) = best.expect("at least one epoch ran");
    head.params = best_head;
    if let Some(params) = best_encoder {
        let trainable = encoder.as_trainable().expect("checked above");
        trainable.params_mut().copy_from_slice(&params);
    }
    Ok(head)
}

fn embed_values(
    encoder: &dyn SentenceEncoder,
    texts: &[&str],
) -> Result<Vec<Vec<f64>>, EmbedderError> {
    Ok(encoder
        .embed(texts)?
        .into_iter()
        .map(|v| v.values)
        .collect())
}

/// Binary confusion counts with the stereotype class as positive.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub true_pos: usize,
    pub false_pos: usize,
    pub false_neg: usize,
    pub true_neg: usize,
}

impl Confusion {
    pub fn add(&mut self, truth: Label, predicted: Label) {
        match (truth, predicted) {
            (Label::Stereotype, Label::Stereotype) => self.true_pos += 1,
            (Label::AntiStereotype, Label::Stereotype) => self.false_pos += 1,
            (Label::Stereotype, Label::AntiStereotype) => self.false_neg += 1,
            (Label::AntiStereotype, Label::AntiStereotype) => self.true_neg += 1,
        }
    }

    fn merge(&mut self, other: &Confusion) {
        self.true_pos += other.true_pos;
        self.false_pos += other.false_pos;
        self.false_neg += other.false_neg;
        self.true_neg += other.true_neg;
    }

    /// F1 of one class from its (tp, fp, fn) counts; 0 when undefined.
    fn f1(tp: usize, fp: usize, fn_: usize) -> f64 {
        let denom = 2 * tp + fp + fn_;
        if denom == 0 {
            0.0
        } else {
            2.0 * tp as f64 / denom as f64
        }
    }

    /// Mean of the stereotype-class and anti-stereotype-class F1 scores.
    pub fn macro_f1(&self) -> f64 {
        let f1_s = Confusion::f1(self.true_pos, self.false_pos, self.false_neg);
        // For the anti class, roles transpose: its hits are true negatives,
        // its false alarms are the stereotype class's misses.
        let f1_a = Confusion::f1(self.true_neg, self.false_neg, self.false_pos);
        (f1_s + f1_a) / 2.0
    }

    pub fn total(&self) -> usize {
        self.true_pos + self.false_pos + self.false_neg + self.true_neg
    }

    pub fn accuracy(&self) -> f64 {
        if self.total() == 0 {
            0.0
        } else {
            (self.true_pos + self.true_neg) as f64 / self.total() as f64
        }
    }
}

/// Macro-F1 evaluation per bias category plus a pooled overall row.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct F1Report {
    pub encoder_mode: EncoderMode,
    pub macro_f1: f64,
    pub per_category: BTreeMap<Category, f64>,
    pub confusion: BTreeMap<Category, Confusion>,
    pub overall_confusion: Confusion,
}

/// Score `head` on every sentence of `groups`, grouped by category.
pub fn evaluate_head(
    head: &MlpHead,
    encoder: &dyn SentenceEncoder,
    groups: &[ContextGroup],
    mode: EncoderMode,
) -> Result<F1Report, ClassifierError> {
    let rows = flatten(groups);
    let texts: Vec<&str> = rows.iter().map(|r| r.0).collect();
    let embeddings = embed_values(encoder, &texts)?;
    let mut confusion: BTreeMap<Category, Confusion> = BTreeMap::new();
    for ((_, category, truth), x) in rows.iter().zip(&embeddings) {
        confusion
            .entry(*category)
            .or_default()
            .add(*truth, head.predict(x));
    }
    let mut overall = Confusion::default();
    for c in confusion.values() {
        overall.merge(c);
    }
    let per_category = confusion
        .iter()
        .map(|(cat, c)| (*cat, c.macro_f1()))
        .collect();
    Ok(F1Report {
        encoder_mode: mode,
        macro_f1: overall.macro_f1(),
        per_category,
        confusion,
        overall_confusion: overall,
    })
}
