//! Embedding-space separation metrics: context-restricted intra-class and
//! inter-class cosine-similarity means, and their gap Δsim.
//!
//! Pairs are only formed *within* a context: two same-label sentences of one
//! context are an intra pair, a stereotype/anti-stereotype pair of one
//! context is an inter pair. Means are pooled with global pair-count
//! normalizers (every pair weighs the same regardless of context size).
//!
//! The implementation accumulates streaming sums — for unit vectors,
//! Σ_{i<j} eᵢ·eⱼ = (‖Σeᵢ‖² − k)/2 within a class and Σ eᵢ·wⱼ = (Σe)·(Σw)
//! across classes — so no pairwise enumeration is materialized. Tests verify
//! the identity against a brute-force all-pairs route.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{Category, ContextGroup};
use crate::embedder::{EmbedderError, SentenceEncoder};

/// Intra/inter means and their gap for one slice of the corpus.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimSummary {
    pub mu_intra: f64,
    pub mu_inter: f64,
    pub delta_sim: f64,
}

/// Separation report over a corpus: pooled means, per-category breakdown,
/// and the pair counts used as normalizers.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimReport {
    pub mu_intra: f64,
    pub mu_inter: f64,
    /// |mu_intra − mu_inter|.
    pub delta_sim: f64,
    /// Categories that supply both intra and inter pairs.
    pub per_category: BTreeMap<Category, SimSummary>,
    /// Σ over contexts of C(|S_c|,2) + C(|A_c|,2).
    pub n_intra_pairs: usize,
    /// Σ over contexts of |S_c|·|A_c|.
    pub n_inter_pairs: usize,
}

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("no context supplies an intra-class pair (need ≥2 same-label sentences somewhere)")]
    NoIntraPairs,
    #[error("no context supplies an inter-class pair (need both labels in some context)")]
    NoInterPairs,
    #[error(transparent)]
    Embedding(#[from] EmbedderError),
}

#[derive(Debug, Clone, Copy, Default)]
struct PoolSums {
    intra_sum: f64,
    n_intra: usize,
    inter_sum: f64,
    n_inter: usize,
}

impl PoolSums {
    fn merge(&mut self, other: PoolSums) {
        self.intra_sum += other.intra_sum;
        self.n_intra += other.n_intra;
        self.inter_sum += other.inter_sum;
        self.n_inter += other.n_inter;
    }

    fn summary(&self) -> Option<SimSummary> {
        if self.n_intra == 0 || self.n_inter == 0 {
            return None;
        }
        let mu_intra = self.intra_sum / self.n_intra as f64;
        let mu_inter = self.inter_sum / self.n_inter as f64;
        Some(SimSummary {
            mu_intra,
            mu_inter,
            delta_sim: (mu_intra - mu_inter).abs(),
        })
    }
}

/// Streaming accumulator over contexts. Sums are associative-commutative, so
/// contexts may be added in any order (or merged from parallel workers).
#[derive(Debug, Default)]
pub struct SimAccumulator {
    per_category: BTreeMap<Category, PoolSums>,
}

impl SimAccumulator {
    pub fn new() -> SimAccumulator {
        SimAccumulator::default()
    }

    /// Add one context's unit-norm embeddings, split by label.
    pub fn add_context(&mut self, category: Category, stereo: &[Vec<f64>], anti: &[Vec<f64>]) {
        let sums = self.per_category.entry(category).or_default();

        for class in [stereo, anti] {
            let k = class.len();
            if k >= 2 {
                sums.intra_sum += pair_sum_within(class);
                sums.n_intra += k * (k - 1) / 2;
            }
        }
        if !stereo.is_empty() && !anti.is_empty() {
            sums.inter_sum += dot(&vector_sum(stereo), &vector_sum(anti));
            sums.n_inter += stereo.len() * anti.len();
        }
    }

    pub fn finish(self) -> Result<SimReport, MetricsError> {
        let mut total = PoolSums::default();
        for sums in self.per_category.values() {
            total.merge(*sums);
        }
        if total.n_intra == 0 {
            return Err(MetricsError::NoIntraPairs);
        }
        if total.n_inter == 0 {
            return Err(MetricsError::NoInterPairs);
        }
        let overall = total.summary().expect("both pools checked non-empty");
        let per_category = self
            .per_category
            .iter()
            .filter_map(|(cat, sums)| sums.summary().map(|s| (*cat, s)))
            .collect();
        Ok(SimReport {
            mu_intra: overall.mu_intra,
            mu_inter: overall.mu_inter,
            delta_sim: overall.delta_sim,
            per_category,
            n_intra_pairs: total.n_intra,
            n_inter_pairs: total.n_inter,
        })
    }
}

/// Σ_{i<j} eᵢ·eⱼ via the sum-of-vectors identity.
fn pair_sum_within(vectors: &[Vec<f64>]) -> f64 {
    let total = vector_sum(vectors);
    let sq_norm_of_sum = dot(&total, &total);
    let sum_of_sq_norms: f64 = vectors.iter().map(|v| dot(v, v)).sum();
    (sq_norm_of_sum - sum_of_sq_norms) / 2.0
}

fn vector_sum(vectors: &[Vec<f64>]) -> Vec<f64> {
    let d = vectors[0].len();
    let mut out = vec![0.0; d];
    for v in vectors {
        for (o, x) in out.iter_mut().zip(v) {
            *o += *x;
        }
    }
    out
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Embed every context with `encoder` and compute the separation report.
pub fn delta_sim(
    groups: &[ContextGroup],
    encoder: &dyn SentenceEncoder,
) -> Result<SimReport, MetricsError> {
    let mut acc = SimAccumulator::new();
    for group in groups {
        let stereo_texts: Vec<&str> = group.stereotypes.iter().map(|r| r.text.as_str()).collect();
        let anti_texts: Vec<&str> = group
            .anti_stereotypes
            .iter()
            .map(|r| r.text.as_str())
            .collect();
        let stereo: Vec<Vec<f64>> = encoder
            .embed(&stereo_texts)?
            .into_iter()
            .map(|v| v.values)
            .collect();
        let anti: Vec<Vec<f64>> = encoder
            .embed(&anti_texts)?
            .into_iter()
            .map(|v| v.values)
            .collect();
        acc.add_context(group.category, &stereo, &anti);
    }
    acc.finish()
}

/// Published Δsim figures for bare (not fine-tuned) transformer encoders,
/// for regression display next to measured values.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct BareReference {
    pub backend_id: &'static str,
    pub overall: f64,
    /// (category, Δsim) in canonical category order.
    pub per_category: [(Category, f64); 5],
}

/// Reference Δsim of bare encoders on the evaluation corpus.
pub fn delta_sim_bare_reference() -> &'static [BareReference] {
    use Category::*;
    const REFS: [BareReference; 3] = [
        BareReference {
            backend_id: "modernbert",
            overall: 0.0031,
            per_category: [
                (Caste, 0.0038),
                (Religion, 0.00008),
                (Gender, 0.0047),
                (Disability, 0.0009),
                (Socioeconomic, 0.0014),
            ],
        },
        BareReference {
            backend_id: "bert-base-uncased",
            overall: 0.0023,
            per_category: [
                (Caste, 0.0033),
                (Religion, 0.0014),
                (Gender, 0.0034),
                (Disability, 0.0029),
                (Socioeconomic, 0.0019),
            ],
        },
        BareReference {
            backend_id: "all-MiniLM-L6-v2",
            overall: 0.0157,
            per_category: [
                (Caste, 0.0232),
                (Religion, 0.0013),
                (Gender, 0.0205),
                (Disability, 0.0199),
                (Socioeconomic, 0.0183),
            ],
        },
    ];
    &REFS
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Label, SentenceRecord};
    use crate::embedder::{cosine, EmbeddingVector, FixedEncoder, StubEncoder};
    use crate::synthetic::{synthetic_corpus, SyntheticCorpusSpec};
    use approx::assert_abs_diff_eq;

    fn record(context_id: &str, category: Category, label: Label, text: &str) -> SentenceRecord {
        SentenceRecord {
            context_id: context_id.to_string(),
            category,
            label,
            text: text.to_string(),
        }
    }

    fn group(
        context_id: &str,
        category: Category,
        stereo: &[&str],
        anti: &[&str],
    ) -> ContextGroup {
        ContextGroup {
            context_id: context_id.to_string(),
            category,
            stereotypes: stereo
                .iter()
                .map(|t| record(context_id, category, Label::Stereotype, t))
                .collect(),
            anti_stereotypes: anti
                .iter()
                .map(|t| record(context_id, category, Label::AntiStereotype, t))
                .collect(),
        }
    }

    #[test]
    fn identical_intra_orthogonal_inter_gives_unit_gap() {
        let encoder = FixedEncoder::new([
            ("s1", vec![1.0, 0.0]),
            ("s2", vec![1.0, 0.0]),
            ("a1", vec![0.0, 1.0]),
        ]);
        let groups = [group("c1", Category::Caste, &["s1", "s2"], &["a1"])];
        let report = delta_sim(&groups, &encoder).unwrap();
        assert_abs_diff_eq!(report.mu_intra, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(report.mu_inter, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(report.delta_sim, 1.0, epsilon = 1e-12);
        assert_eq!(report.n_intra_pairs, 1);
        assert_eq!(report.n_inter_pairs, 2);
    }

    #[test]
    fn pair_counts_follow_binomial_and_product_rules() {
        let encoder = StubEncoder::new(16, 7);
        let groups = [
            group("c1", Category::Caste, &["a b", "c d", "e f"], &["g h"]),
            group("c2", Category::Gender, &["i j"], &["k l", "m n"]),
        ];
        let report = delta_sim(&groups, &encoder).unwrap();
        // c1: C(3,2)=3 intra + 3·1 inter; c2: C(2,2)=1 intra + 1·2 inter.
        assert_eq!(report.n_intra_pairs, 4);
        assert_eq!(report.n_inter_pairs, 5);
        assert_eq!(report.per_category.len(), 2);
    }

    /// Brute-force oracle: enumerate every same-context pair explicitly.
    fn brute_force(groups: &[ContextGroup], encoder: &dyn SentenceEncoder) -> (f64, f64) {
        let mut intra = Vec::new();
        let mut inter = Vec::new();
        for g in groups {
            let embed_all = |records: &[SentenceRecord]| -> Vec<EmbeddingVector> {
                let texts: Vec<&str> = records.iter().map(|r| r.text.as_str()).collect();
                encoder.embed(&texts).unwrap()
            };
            let s = embed_all(&g.stereotypes);
            let a = embed_all(&g.anti_stereotypes);
            for class in [&s, &a] {
                for i in 0..class.len() {
                    for j in (i + 1)..class.len() {
                        intra.push(cosine(&class[i], &class[j]).unwrap());
                    }
                }
            }
            for x in &s {
                for y in &a {
                    inter.push(cosine(x, y).unwrap());
                }
            }
        }
        (
            intra.iter().sum::<f64>() / intra.len() as f64,
            inter.iter().sum::<f64>() / inter.len() as f64,
        )
    }

    #[test]
    fn streaming_sums_match_brute_force_enumeration() {
        for seed in 0..10u64 {
            let spec = SyntheticCorpusSpec {
                contexts_per_category: 2,
                seed,
                ..SyntheticCorpusSpec::default()
            };
            let groups = synthetic_corpus(&spec);
            let encoder = StubEncoder::new(32, seed);
            let report = delta_sim(&groups, &encoder).unwrap();
            let (mu_intra, mu_inter) = brute_force(&groups, &encoder);
            assert_abs_diff_eq!(report.mu_intra, mu_intra, epsilon = 1e-9);
            assert_abs_diff_eq!(report.mu_inter, mu_inter, epsilon = 1e-9);
            assert_abs_diff_eq!(
                report.delta_sim,
                (mu_intra - mu_inter).abs(),
                epsilon = 1e-9
            );
        }
    }

    #[test]
    fn duplicating_sentences_keeps_means_in_range() {
        let spec = SyntheticCorpusSpec {
            contexts_per_category: 1,
            ..SyntheticCorpusSpec::default()
        };
        let mut groups = synthetic_corpus(&spec);
        for g in &mut groups {
            let dup: Vec<_> = g.stereotypes.clone();
            g.stereotypes.extend(dup);
        }
        let encoder = StubEncoder::new(16, 3);
        let report = delta_sim(&groups, &encoder).unwrap();
        for mu in [report.mu_intra, report.mu_inter] {
            assert!((-1.0..=1.0).contains(&mu), "mean out of range: {mu}");
        }
    }

    #[test]
    fn swapping_labels_leaves_delta_sim_unchanged() {
        let spec = SyntheticCorpusSpec::default();
        let groups = synthetic_corpus(&spec);
        let swapped: Vec<ContextGroup> = groups
            .iter()
            .map(|g| ContextGroup {
                context_id: g.context_id.clone(),
                category: g.category,
                stereotypes: g.anti_stereotypes.clone(),
                anti_stereotypes: g.stereotypes.clone(),
            })
            .collect();
        let encoder = StubEncoder::new(16, 11);
        let original = delta_sim(&groups, &encoder).unwrap();
        let mirrored = delta_sim(&swapped, &encoder).unwrap();
        assert_abs_diff_eq!(original.delta_sim, mirrored.delta_sim, epsilon = 1e-12);
        assert_eq!(original.n_intra_pairs, mirrored.n_intra_pairs);
        assert_eq!(original.n_inter_pairs, mirrored.n_inter_pairs);
    }

    #[test]
    fn missing_pair_kinds_are_reported() {
        let encoder = StubEncoder::new(8, 1);
        // Only one sentence per class anywhere: inter pairs exist, intra don't.
        let only_inter = [group("c1", Category::Caste, &["s one"], &["a one"])];
        assert!(matches!(
            delta_sim(&only_inter, &encoder),
            Err(MetricsError::NoIntraPairs)
        ));
        // Single-class contexts: intra pairs exist, inter don't.
        let only_intra = [group("c1", Category::Caste, &["s one", "s two"], &[])];
        assert!(matches!(
            delta_sim(&only_intra, &encoder),
            Err(MetricsError::NoInterPairs)
        ));
    }

    #[test]
    fn per_category_breakdown_filters_contexts() {
        let encoder = StubEncoder::new(16, 5);
        let groups = [
            group("c1", Category::Caste, &["s1 x", "s2 x"], &["a1 x"]),
            group("c2", Category::Gender, &["s3 y", "s4 y"], &["a2 y"]),
        ];
        let report = delta_sim(&groups, &encoder).unwrap();
        let caste_only = delta_sim(&groups[..1], &encoder).unwrap();
        let caste_row = report.per_category[&Category::Caste];
        assert_abs_diff_eq!(caste_row.mu_intra, caste_only.mu_intra, epsilon = 1e-12);
        assert_abs_diff_eq!(caste_row.mu_inter, caste_only.mu_inter, epsilon = 1e-12);
        assert_abs_diff_eq!(caste_row.delta_sim, caste_only.delta_sim, epsilon = 1e-12);
    }

    #[test]
    fn bare_references_expose_published_magnitudes() {
        let refs = delta_sim_bare_reference();
        let by_id = |id: &str| refs.iter().find(|r| r.backend_id == id).unwrap();
        assert_abs_diff_eq!(by_id("all-MiniLM-L6-v2").overall, 0.0157, epsilon = 1e-12);
        assert_abs_diff_eq!(by_id("bert-base-uncased").overall, 0.0023, epsilon = 1e-12);
        let modernbert = by_id("modernbert");
        let religion = modernbert
            .per_category
            .iter()
            .find(|(c, _)| *c == Category::Religion)
            .unwrap()
            .1;
        assert_abs_diff_eq!(religion, 0.00008, epsilon = 1e-12);
    }
}
