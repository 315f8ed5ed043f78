//! Similarity retrieval of historical records over trained embeddings.
//!
//! Two channels feed the prediction prompt:
//!
//! * **personal** — the user's own records, ranked by how similar each
//!   record's context embedding is to the current context embedding;
//! * **similar users** — everyone else's records, ranked by similarity of
//!   the combined `e_u + e_c` embeddings.
//!
//! Both are brute-force exact scans (the reference implementation; pools are
//! desk-scale). Ranking is total and deterministic: score descending, then
//! earlier day_index, then lower ordinal — the record's position in the
//! supplied pool.

use serde::Serialize;

use crate::corpus::{ContextKey, Record};
use crate::error::{Error, Result};
use crate::graph::EmbeddingTable;

/// Channel sizes: K_p personal records, K_s similar-user records.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Deserialize, Serialize)]
#[serde(default)]
pub struct RetrievalConfig {
    pub k_personal: usize,
    pub k_similar: usize,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        RetrievalConfig {
            k_personal: 5,
            k_similar: 10,
        }
    }
}

/// Which channel produced a retrieved record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum RetrievalSource {
    Personal,
    SimilarUser,
}

/// A retrieved record with its similarity score.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScoredRecord {
    pub record: Record,
    /// Position of the record in the pool it was drawn from (tie-break key).
    pub ordinal: usize,
    /// Cosine similarity; −∞ when either side is a degenerate zero vector.
    pub score: f64,
    pub source: RetrievalSource,
}

/// Cosine similarity with the degenerate-node rule: zero-norm inputs score
/// −∞ so they sort behind every real candidate.
pub fn cosine_similarity(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for i in 0..a.len() {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if na == 0.0 || nb == 0.0 {
        return Ok(f64::NEG_INFINITY);
    }
    Ok(dot / (na.sqrt() * nb.sqrt()))
}

/// Retrieval over one trained table.
pub struct Retriever<'a> {
    table: &'a EmbeddingTable,
}

impl<'a> Retriever<'a> {
    pub fn new(table: &'a EmbeddingTable) -> Retriever<'a> {
        Retriever { table }
    }

    /// Embedding for the *current* context, total over unseen contexts:
    /// a context with no trained node falls back to the mean embedding of
    /// trained contexts sharing its time slot, else sharing its location,
    /// else the mean over all trained contexts. Degenerate rows are left out
    /// of means; if nothing usable exists the zero vector is returned (every
    /// similarity then scores −∞ and ranking falls to the tie-break).
    pub fn context_query_embedding(&self, key: ContextKey) -> Vec<f64> {
        if let Some(row) = self.table.context_row(key) {
            return row.to_vec();
        }
        let same_slot = |c: &ContextKey| c.time_slot == key.time_slot;
        let same_loc = |c: &ContextKey| c.location_id == key.location_id;
        let any = |_: &ContextKey| true;
        for filter in [&same_slot as &dyn Fn(&ContextKey) -> bool, &same_loc, &any] {
            if let Some(mean) = self.mean_context_embedding(filter) {
                return mean;
            }
        }
        vec![0.0; self.table.dimension]
    }

    fn mean_context_embedding(&self, filter: &dyn Fn(&ContextKey) -> bool) -> Option<Vec<f64>> {
        let mut sum = vec![0.0; self.table.dimension];
        let mut count = 0usize;
        for (i, context) in self.table.contexts.iter().enumerate() {
            let node = self.table.users.len() + i;
            if !filter(context) || self.table.is_degenerate(node) {
                continue;
            }
            for (s, x) in sum.iter_mut().zip(self.table.row(node)) {
                *s += x;
            }
            count += 1;
        }
        if count == 0 {
            return None;
        }
        for s in &mut sum {
            *s /= count as f64;
        }
        Some(sum)
    }

    /// Top-K of the user's own `history`, ranked by similarity between each
    /// record's context embedding and the current context embedding.
    pub fn retrieve_personal(
        &self,
        current_context: ContextKey,
        history: &[Record],
        k: usize,
    ) -> Result<Vec<ScoredRecord>> {
        let query = self.context_query_embedding(current_context);
        let mut scored = Vec::with_capacity(history.len());
        for (ordinal, record) in history.iter().enumerate() {
            let score = match self.table.context_row(ContextKey::of(record)) {
                Some(row) => cosine_similarity(row, &query)?,
                None => f64::NEG_INFINITY, // context unseen in training
            };
            scored.push(ScoredRecord {
                record: record.clone(),
                ordinal,
                score,
                source: RetrievalSource::Personal,
            });
        }
        Ok(rank_and_truncate(scored, k))
    }

    /// Top-K over everyone else's records, ranked by similarity between each
    /// record's combined `e_u + e_c` and the current user+context embedding.
    /// The target user's own records are skipped so the two channels stay
    /// disjoint.
    pub fn retrieve_similar_users(
        &self,
        user_id: u64,
        current_context: ContextKey,
        pool: &[Record],
        k: usize,
    ) -> Result<Vec<ScoredRecord>> {
        let context_query = self.context_query_embedding(current_context);
        let query: Vec<f64> = match self.table.user_row(user_id) {
            Some(user_row) => user_row
                .iter()
                .zip(&context_query)
                .map(|(u, c)| u + c)
                .collect(),
            // Unknown user: rank purely by context affinity.
            None => context_query,
        };
        let mut scored = Vec::new();
        for (ordinal, record) in pool.iter().enumerate() {
            if record.user_id == user_id {
                continue;
            }
            let score = match (
                self.table.user_row(record.user_id),
                self.table.context_row(ContextKey::of(record)),
            ) {
                (Some(u), Some(c)) => {
                    let combined: Vec<f64> = u.iter().zip(c).map(|(a, b)| a + b).collect();
                    cosine_similarity(&combined, &query)?
                }
                _ => f64::NEG_INFINITY,
            };
            scored.push(ScoredRecord {
                record: record.clone(),
                ordinal,
                score,
                source: RetrievalSource::SimilarUser,
            });
        }
        Ok(rank_and_truncate(scored, k))
    }
}

/// Total order: score descending, then (day_index, ordinal) ascending.
fn rank_and_truncate(mut scored: Vec<ScoredRecord>, k: usize) -> Vec<ScoredRecord> {
    scored.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then_with(|| a.record.day_index.cmp(&b.record.day_index))
            .then_with(|| a.ordinal.cmp(&b.ordinal))
    });
    scored.truncate(k);
    scored
}
