//! Core library for the needcast living-need pipeline.
//!
//! The pipeline turns a stream of timestamped service-consumption records into
//! open-ended predictions of what a user needs *right now*, and maps those
//! predictions back onto a concrete service catalog:
//!
//! 1. [`corpus`] — record/catalog formats, time bucketing, chronological
//!    splits, and a seeded synthetic generator with planted preferences.
//! 2. [`graph`] — a weighted tripartite behavior graph (users, spatiotemporal
//!    contexts, needs) with LightGCN-style propagation and BPR training.
//! 3. [`retrieve`] — similarity retrieval of past records over the learned
//!    embeddings: a personal channel and a similar-user channel.
//! 4. [`maslow`] — a three-tier hierarchy of living needs used to ground
//!    free-form predictions, plus catalog validation.
//! 5. [`orchestrate`] — prompt construction (prefix-cache friendly), LLM
//!    providers (scripted + HTTP), prediction/refinement/revision calls, and
//!    instruction-pair export.
//! 6. [`recall`] — text-embedding recall from need descriptions to services,
//!    with a triplet-trained linear adapter.
//! 7. [`eval`] — Recall@K / NDCG@K and the end-to-end evaluation harness with
//!    ablation flags.
//! 8. [`servebench`] — a discrete-event simulator for LLM serving cost under
//!    static batching, with and without prefix caching.
//!
//! Everything is deterministic given a seed: RNG streams are ChaCha-based and
//! derived per module via [`seeding::subseed`].

pub mod corpus;
pub mod error;
pub mod eval;
pub mod graph;
pub mod maslow;
pub mod orchestrate;
pub mod recall;
pub mod retrieve;
pub mod seeding;
pub mod servebench;

pub use error::{Error, Result};
