//! Deterministic synthetic corpora.
//!
//! Real corpora of this shape are built by human annotators; tests and demos
//! need something with the same structure that can be generated on the fly.
//! Sentences here are near-minimal pairs: within one context everything is
//! shared except a class marker token, and marker tokens are reused across
//! contexts of a category so that an encoder can learn a class direction that
//! generalizes to held-out contexts.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Category, ContextGroup, Label, SentenceRecord};

/// Parameters for [`synthetic_corpus`].
#[derive(Debug, Clone)]
pub struct SyntheticCorpusSpec {
    pub contexts_per_category: usize,
    /// Inclusive range of stereotype sentences per context.
    pub stereotypes_per_context: (usize, usize),
    /// Inclusive range of anti-stereotype sentences per context.
    pub anti_per_context: (usize, usize),
    /// Distinct marker tokens per class per category.
    pub markers_per_class: usize,
    pub seed: u64,
}

impl Default for SyntheticCorpusSpec {
    fn default() -> Self {
        SyntheticCorpusSpec {
            contexts_per_category: 5,
            stereotypes_per_context: (2, 4),
            anti_per_context: (2, 4),
            markers_per_class: 12,
            seed: 17,
        }
    }
}

const NOUNS: [&str; 8] = [
    "family", "teacher", "merchant", "neighbour", "student", "farmer", "clerk", "singer",
];

const PHRASES: [&str; 10] = [
    "kept the largest house on the lane",
    "waited by the old well each morning",
    "ran the evening classes at the hall",
    "sold vegetables at the weekly market",
    "repaired bicycles behind the depot",
    "organized the festival on the green",
    "looked after the library records",
    "cooked for the wedding next door",
    "walked the children to the school",
    "managed the accounts of the co-op",
];

fn marker(category: Category, label: Label, index: usize) -> String {
    let polarity = match label {
        Label::Stereotype => "pro",
        Label::AntiStereotype => "con",
    };
    format!("{}{}{:02}", category.as_str(), polarity, index)
}

/// Generate a corpus of near-minimal-pair contexts, deterministic in the seed.
pub fn synthetic_corpus(spec: &SyntheticCorpusSpec) -> Vec<ContextGroup> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut groups = Vec::new();
    let mut scene = 0usize;
    for &category in &Category::ALL {
        for _ in 0..spec.contexts_per_category {
            let context_id = format!("{}-ctx-{:03}", category.as_str(), scene);
            let noun = NOUNS[rng.gen_range(0..NOUNS.len())];
            let phrase = PHRASES[rng.gen_range(0..PHRASES.len())];
            let sentence = |label: Label, rng: &mut ChaCha8Rng| {
                let m = marker(category, label, rng.gen_range(0..spec.markers_per_class));
                SentenceRecord {
                    context_id: context_id.clone(),
                    category,
                    label,
                    text: format!("The {m} {noun} {phrase} near scene{scene:03}."),
                }
            };
            let n_s = rng.gen_range(spec.stereotypes_per_context.0..=spec.stereotypes_per_context.1);
            let n_a = rng.gen_range(spec.anti_per_context.0..=spec.anti_per_context.1);
            let stereotypes = (0..n_s)
                .map(|_| sentence(Label::Stereotype, &mut rng))
                .collect();
            let anti_stereotypes = (0..n_a)
                .map(|_| sentence(Label::AntiStereotype, &mut rng))
                .collect();
            groups.push(ContextGroup {
                context_id,
                category,
                stereotypes,
                anti_stereotypes,
            });
            scene += 1;
        }
    }
    groups
}

/// Per-category (contexts, stereotypes, anti_stereotypes) counts of the
/// published training corpus, used to exercise loaders at realistic scale.
pub const REFERENCE_DISTRIBUTION: [(Category, usize, usize, usize); 5] = [
    (Category::Caste, 23, 244, 254),
    (Category::Religion, 20, 262, 160),
    (Category::Gender, 37, 462, 391),
    (Category::Disability, 19, 140, 158),
    (Category::Socioeconomic, 20, 282, 222),
];

/// A flat record list that reproduces [`REFERENCE_DISTRIBUTION`] exactly,
/// with sentences spread round-robin over each category's contexts.
pub fn reference_shaped_records(seed: u64) -> Vec<SentenceRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::new();
    let mut scene = 0usize;
    for &(category, contexts, stereotypes, anti) in &REFERENCE_DISTRIBUTION {
        let ids: Vec<String> = (0..contexts)
            .map(|i| format!("{}-ref-{:03}", category.as_str(), i))
            .collect();
        let mut emit = |label: Label, count: usize, records: &mut Vec<SentenceRecord>| {
            for k in 0..count {
                let context_id = ids[k % contexts].clone();
                let m = marker(category, label, rng.gen_range(0..16));
                let noun = NOUNS[rng.gen_range(0..NOUNS.len())];
                let phrase = PHRASES[rng.gen_range(0..PHRASES.len())];
                records.push(SentenceRecord {
                    context_id,
                    category,
                    label,
                    text: format!("The {m} {noun} {phrase} near scene{scene:03} case{k}."),
                });
                scene += 1;
            }
        };
        emit(Label::Stereotype, stereotypes, &mut records);
        emit(Label::AntiStereotype, anti, &mut records);
    }
    records
}
