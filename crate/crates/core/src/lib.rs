//! Core library for contrastive sentence-encoder training and stereotype
//! evaluation: corpus loading, embedding backends, context-restricted
//! contrastive losses, embedding-space separation metrics, a small training
//! loop with checkpointing, a probe classifier, and LLM bias scoring.

pub mod classifier;
pub mod corpus;
pub mod embedder;
pub mod losses;
pub mod optim;
pub mod repr_metrics;
pub mod scoring;
pub mod synthetic;
pub mod trainer;
