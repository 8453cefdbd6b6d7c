//! Contrastive objectives over context-restricted pairs.
//!
//! Pair semantics are shared by all four losses: within one context, two
//! sentences of the same label form a positive pair and two sentences of
//! opposite labels form a negative pair; sentences from different contexts
//! are neither. Losses consume a [`PairBatch`] whose similarity matrix holds
//! plain dot products of unit-normalized embeddings, so similarities are
//! cosines and every loss is a smooth (or piecewise-smooth) function of the
//! embedding matrix — each loss ships an analytic gradient with respect to
//! the embeddings, verified against central finite differences.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::corpus::Label;
use crate::embedder::EmbeddingVector;

/// A batch of labeled, context-tagged embeddings plus their similarity matrix.
#[derive(Debug, Clone)]
pub struct PairBatch {
    /// N×D, rows are unit L2 norm.
    pub embeddings: Array2<f64>,
    pub labels: Vec<Label>,
    pub context_ids: Vec<String>,
    /// S[i][j] = embeddings[i] · embeddings[j]; symmetric, unit diagonal.
    pub similarity: Array2<f64>,
}

impl PairBatch {
    pub fn new(
        embeddings: Array2<f64>,
        labels: Vec<Label>,
        context_ids: Vec<String>,
    ) -> Result<PairBatch, LossError> {
        let n = embeddings.nrows();
        if labels.len() != n || context_ids.len() != n {
            return Err(LossError::ShapeMismatch {
                rows: n,
                labels: labels.len(),
                contexts: context_ids.len(),
            });
        }
        if n < 2 {
            return Err(LossError::BatchTooSmall { size: n });
        }
        let similarity = embeddings.dot(&embeddings.t());
        Ok(PairBatch {
            embeddings,
            labels,
            context_ids,
            similarity,
        })
    }

    /// Build a batch from embedder output.
    pub fn from_vectors(
        vectors: &[EmbeddingVector],
        labels: Vec<Label>,
        context_ids: Vec<String>,
    ) -> Result<PairBatch, LossError> {
        let n = vectors.len();
        let d = vectors.first().map(|v| v.dimension()).unwrap_or(0);
        let mut embeddings = Array2::zeros((n, d));
        for (i, v) in vectors.iter().enumerate() {
            if v.dimension() != d {
                return Err(LossError::ShapeMismatch {
                    rows: d,
                    labels: v.dimension(),
                    contexts: i,
                });
            }
            for (j, x) in v.values.iter().enumerate() {
                embeddings[[i, j]] = *x;
            }
        }
        PairBatch::new(embeddings, labels, context_ids)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Refresh `similarity` after mutating `embeddings`.
    pub fn recompute_similarity(&mut self) {
        self.similarity = self.embeddings.dot(&self.embeddings.t());
    }
}

/// Which objective to optimize.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    NtXent,
    NtbXent,
    Pairwise,
    Triplet,
}

impl LossKind {
    pub const ALL: [LossKind; 4] = [
        LossKind::NtXent,
        LossKind::NtbXent,
        LossKind::Pairwise,
        LossKind::Triplet,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            LossKind::NtXent => "nt_xent",
            LossKind::NtbXent => "ntb_xent",
            LossKind::Pairwise => "pairwise",
            LossKind::Triplet => "triplet",
        }
    }

    /// Temperature-scaled losses read `temperature`; margin losses read `margin`.
    pub fn uses_temperature(self) -> bool {
        matches!(self, LossKind::NtXent | LossKind::NtbXent)
    }
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Loss selection plus its hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub kind: LossKind,
    /// Softmax/sigmoid temperature τ > 0.
    pub temperature: f64,
    /// Hinge margin m ∈ (0, 1).
    pub margin: f64,
}

impl LossConfig {
    pub fn new(kind: LossKind) -> LossConfig {
        LossConfig {
            kind,
            temperature: 0.1,
            margin: 0.5,
        }
    }

    pub fn with_temperature(mut self, temperature: f64) -> LossConfig {
        self.temperature = temperature;
        self
    }

    pub fn with_margin(mut self, margin: f64) -> LossConfig {
        self.margin = margin;
        self
    }

    pub fn validate(&self) -> Result<(), LossError> {
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return Err(LossError::InvalidConfig(format!(
                "temperature must be positive and finite, got {}",
                self.temperature
            )));
        }
        if !(self.margin > 0.0 && self.margin < 1.0) {
            return Err(LossError::InvalidConfig(format!(
                "margin must lie strictly between 0 and 1, got {}",
                self.margin
            )));
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum LossError {
    #[error("batch contains no positive pair")]
    NoPositivePair,
    #[error("batch contains no negative pair")]
    NoNegativePair,
    #[error("batch contains no same-context pair at all")]
    NoLabeledPairs,
    #[error("no (anchor, positive, negative) triplet constructible in batch")]
    NoTripletConstructible,
    #[error("invalid loss config: {0}")]
    InvalidConfig(String),
    #[error("batch shape mismatch: {rows} embeddings, {labels} labels, {contexts} context ids")]
    ShapeMismatch {
        rows: usize,
        labels: usize,
        contexts: usize,
    },
    #[error("batch needs at least 2 rows, got {size}")]
    BatchTooSmall { size: usize },
}

/// mask[i][j] = true iff i≠j, same context, same label.
pub fn positive_mask(batch: &PairBatch) -> Array2<bool> {
    pair_mask(batch, true)
}

/// mask[i][j] = true iff i≠j, same context, opposite labels.
pub fn negative_mask(batch: &PairBatch) -> Array2<bool> {
    pair_mask(batch, false)
}

fn pair_mask(batch: &PairBatch, same_label: bool) -> Array2<bool> {
    let n = batch.len();
    let mut mask = Array2::from_elem((n, n), false);
    for i in 0..n {
        for j in 0..n {
            if i != j
                && batch.context_ids[i] == batch.context_ids[j]
                && (batch.labels[i] == batch.labels[j]) == same_label
            {
                mask[[i, j]] = true;
            }
        }
    }
    mask
}

/// Unordered canonical pairs (i < j) from a mask.
fn upper_pairs(mask: &Array2<bool>) -> Vec<(usize, usize)> {
    let n = mask.nrows();
    let mut pairs = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            if mask[[i, j]] {
                pairs.push((i, j));
            }
        }
    }
    pairs
}

/// ln(1 + e^x), overflow-safe.
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// σ(x), overflow-safe.
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// d(loss)/d(embeddings) from d(loss)/d(similarity):
/// S = E·Eᵀ, so dL/dE = (G + Gᵀ)·E.
fn grad_embeddings(g: &Array2<f64>, embeddings: &Array2<f64>) -> Array2<f64> {
    (g + &g.t()).dot(embeddings)
}

/// Normalized temperature-scaled cross entropy.
///
/// For each anchor `a` with positive set P(a), the candidates are all other
/// sentences of the same context (both labels). The anchor's term averages
/// −log softmax over its positives:
///
/// ```text
/// term(a) = (1/|P(a)|) Σ_{p∈P(a)} [ logΣ_{k∈cand(a)} exp(S_ak/τ) − S_ap/τ ]
/// ```
///
/// and the loss is the mean of `term(a)` over anchors with at least one
/// positive. At τ=1 this is the standard softmax cross entropy over
/// same-context candidates.
pub fn nt_xent(batch: &PairBatch, config: &LossConfig) -> Result<f64, LossError> {
    nt_xent_with_grad(batch, config).map(|(loss, _)| loss)
}

pub fn nt_xent_with_grad(
    batch: &PairBatch,
    config: &LossConfig,
) -> Result<(f64, Array2<f64>), LossError> {
    config.validate()?;
    let tau = config.temperature;
    let n = batch.len();
    let pos = positive_mask(batch);
    let neg = negative_mask(batch);
    if !pos.iter().any(|&m| m) {
        return Err(LossError::NoPositivePair);
    }
    if !neg.iter().any(|&m| m) {
        return Err(LossError::NoNegativePair);
    }
    let anchors: Vec<usize> = (0..n).filter(|&a| (0..n).any(|p| pos[[a, p]])).collect();
    let mut loss = 0.0;
    let mut g = Array2::zeros((n, n));
    let inv_anchors = 1.0 / anchors.len() as f64;
    for &a in &anchors {
        let candidates: Vec<usize> = (0..n)
            .filter(|&k| k != a && batch.context_ids[k] == batch.context_ids[a])
            .collect();
        let positives: Vec<usize> = candidates
            .iter()
            .copied()
            .filter(|&p| pos[[a, p]])
            .collect();
        let max_logit = candidates
            .iter()
            .map(|&k| batch.similarity[[a, k]] / tau)
            .fold(f64::NEG_INFINITY, f64::max);
        let mut denom = 0.0;
        for &k in &candidates {
            denom += ((batch.similarity[[a, k]] / tau) - max_logit).exp();
        }
        let lse = max_logit + denom.ln();
        let inv_pos = 1.0 / positives.len() as f64;
        for &p in &positives {
            loss += inv_anchors * inv_pos * (lse - batch.similarity[[a, p]] / tau);
            g[[a, p]] -= inv_anchors * inv_pos / tau;
        }
        // The log-sum-exp term appears once per positive, so its softmax
        // weights enter with the anchor's full weight.
        for &k in &candidates {
            let w = ((batch.similarity[[a, k]] / tau) - max_logit).exp() / denom;
            g[[a, k]] += inv_anchors * w / tau;
        }
    }
    Ok((loss, grad_embeddings(&g, &batch.embeddings)))
}

/// Binary cross-entropy contrastive loss with per-class weighting:
///
/// ```text
/// ℓ_ij = −y_ij·log σ(S_ij/τ) − (1−y_ij)·log σ((1−S_ij)/τ)
/// L    = (1/N_pos) Σ_pos ℓ_ij + (1/N_neg) Σ_neg ℓ_ij
/// ```
///
/// Positive and negative pair sets are averaged separately, so imbalanced
/// batches weigh both classes equally.
pub fn ntb_xent(batch: &PairBatch, config: &LossConfig) -> Result<f64, LossError> {
    ntb_xent_with_grad(batch, config).map(|(loss, _)| loss)
}

pub fn ntb_xent_with_grad(
    batch: &PairBatch,
    config: &LossConfig,
) -> Result<(f64, Array2<f64>), LossError> {
    config.validate()?;
    let tau = config.temperature;
    let n = batch.len();
    let pos_pairs = upper_pairs(&positive_mask(batch));
    let neg_pairs = upper_pairs(&negative_mask(batch));
    if pos_pairs.is_empty() {
        return Err(LossError::NoPositivePair);
    }
    if neg_pairs.is_empty() {
        return Err(LossError::NoNegativePair);
    }
    let mut loss = 0.0;
    let mut g = Array2::zeros((n, n));
    let w_pos = 1.0 / pos_pairs.len() as f64;
    for &(i, j) in &pos_pairs {
        let s = batch.similarity[[i, j]];
        loss += w_pos * softplus(-s / tau);
        g[[i, j]] -= w_pos * sigmoid(-s / tau) / tau;
    }
    let w_neg = 1.0 / neg_pairs.len() as f64;
    for &(i, j) in &neg_pairs {
        let s = batch.similarity[[i, j]];
        loss += w_neg * softplus(-(1.0 - s) / tau);
        g[[i, j]] += w_neg * sigmoid(-(1.0 - s) / tau) / tau;
    }
    Ok((loss, grad_embeddings(&g, &batch.embeddings)))
}

/// Margin hinge over labeled pairs:
/// mean of `y·(1 − S_ij) + (1−y)·max(0, S_ij − m)` over all same-context pairs.
pub fn pairwise(batch: &PairBatch, config: &LossConfig) -> Result<f64, LossError> {
    pairwise_with_grad(batch, config).map(|(loss, _)| loss)
}

pub fn pairwise_with_grad(
    batch: &PairBatch,
    config: &LossConfig,
) -> Result<(f64, Array2<f64>), LossError> {
    config.validate()?;
    let m = config.margin;
    let n = batch.len();
    let pos_pairs = upper_pairs(&positive_mask(batch));
    let neg_pairs = upper_pairs(&negative_mask(batch));
    let count = pos_pairs.len() + neg_pairs.len();
    if count == 0 {
        return Err(LossError::NoLabeledPairs);
    }
    let mut loss = 0.0;
    let mut g = Array2::zeros((n, n));
    let w = 1.0 / count as f64;
    for &(i, j) in &pos_pairs {
        loss += w * (1.0 - batch.similarity[[i, j]]);
        g[[i, j]] -= w;
    }
    for &(i, j) in &neg_pairs {
        let overshoot = batch.similarity[[i, j]] - m;
        if overshoot > 0.0 {
            loss += w * overshoot;
            g[[i, j]] += w;
        }
    }
    Ok((loss, grad_embeddings(&g, &batch.embeddings)))
}

/// Similarity-margin triplet loss over anchor-shared in-batch triplets.
///
/// Every (anchor, positive, negative) with all three in one context yields a
/// term `max(0, (S_an − S_ap) + m)`; the loss averages the nonzero (active)
/// terms and is 0 when every triplet satisfies its margin.
pub fn triplet(batch: &PairBatch, config: &LossConfig) -> Result<f64, LossError> {
    triplet_with_grad(batch, config).map(|(loss, _)| loss)
}

pub fn triplet_with_grad(
    batch: &PairBatch,
    config: &LossConfig,
) -> Result<(f64, Array2<f64>), LossError> {
    config.validate()?;
    let m = config.margin;
    let n = batch.len();
    let pos = positive_mask(batch);
    let neg = negative_mask(batch);
    let mut active: Vec<(usize, usize, usize)> = Vec::new();
    let mut constructible = false;
    for a in 0..n {
        let positives: Vec<usize> = (0..n).filter(|&p| pos[[a, p]]).collect();
        let negatives: Vec<usize> = (0..n).filter(|&k| neg[[a, k]]).collect();
        if positives.is_empty() || negatives.is_empty() {
            continue;
        }
        constructible = true;
        for &p in &positives {
            for &k in &negatives {
                let term = batch.similarity[[a, k]] - batch.similarity[[a, p]] + m;
                if term > 0.0 {
                    active.push((a, p, k));
                }
            }
        }
    }
    if !constructible {
        return Err(LossError::NoTripletConstructible);
    }
    let mut g = Array2::zeros((n, n));
    if active.is_empty() {
        return Ok((0.0, grad_embeddings(&g, &batch.embeddings)));
    }
    let w = 1.0 / active.len() as f64;
    let mut loss = 0.0;
    for &(a, p, k) in &active {
        loss += w * (batch.similarity[[a, k]] - batch.similarity[[a, p]] + m);
        g[[a, k]] += w;
        g[[a, p]] -= w;
    }
    Ok((loss, grad_embeddings(&g, &batch.embeddings)))
}

/// Dispatch on `config.kind`.
pub fn loss_value(batch: &PairBatch, config: &LossConfig) -> Result<f64, LossError> {
    loss_with_grad(batch, config).map(|(loss, _)| loss)
}

/// Dispatch on `config.kind`, returning the loss and d(loss)/d(embeddings).
pub fn loss_with_grad(
    batch: &PairBatch,
    config: &LossConfig,
) -> Result<(f64, Array2<f64>), LossError> {
    match config.kind {
        LossKind::NtXent => nt_xent_with_grad(batch, config),
        LossKind::NtbXent => ntb_xent_with_grad(batch, config),
        LossKind::Pairwise => pairwise_with_grad(batch, config),
        LossKind::Triplet => triplet_with_grad(batch, config),
    }
}
