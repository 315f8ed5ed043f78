//! Need-to-service recall: a pluggable text embedder, a trainable linear
//! adapter over it, and brute-force top-K retrieval over the service catalog.
//!
//! "Fine-tuning the embedding model" is realized as a square adapter matrix A
//! applied to a frozen base embedder, `f_finetune(x) = normalize(A · f_base(x))`,
//! trained with the triplet hinge objective. The bundled base embedder is
//! seeded feature hashing of word n-grams — deterministic, dependency-free,
//! and good enough to make lexical overlap between need descriptions and
//! service texts measurable. Swapping in a real transformer embedder means
//! implementing [`TextEmbedder`].

use rand::prelude::*;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Catalogs, ServiceEntry};
use crate::error::{Error, Result};

/// Text → deterministic unit-norm vector of a fixed dimension.
pub trait TextEmbedder: Send + Sync {
    fn provider_id(&self) -> &str;
    fn dimension(&self) -> usize;
    /// Errors on text with no usable words; otherwise returns a unit vector.
    fn embed(&self, text: &str) -> Result<Vec<f64>>;
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// Seeded feature-hashing embedder: lowercase word n-grams (n = 1, 2) hashed
/// by FNV-1a into signed buckets, then L2-normalized.
pub struct HashingEmbedder {
    dimension: usize,
    seed: u64,
    id: String,
}

impl HashingEmbedder {
    pub const DEFAULT_DIMENSION: usize = 256;

    pub fn new(dimension: usize, seed: u64) -> Result<HashingEmbedder> {
        if dimension < 2 {
            return Err(Error::Config(
                "embedder dimension must be at least 2".into(),
            ));
        }
        Ok(HashingEmbedder {
            dimension,
            seed,
            id: format!("feature-hash-d{dimension}-s{seed}"),
        })
    }
}

fn fnv_step(h: u64, byte: u8) -> u64 {
    (h ^ u64::from(byte)).wrapping_mul(FNV_PRIME)
}

fn ngram_hash(seed: u64, words: &[String]) -> u64 {
    let mut h = FNV_OFFSET ^ seed;
    for (i, word) in words.iter().enumerate() {
        if i > 0 {
            h = fnv_step(h, 0x1f); // unit separator between words
        }
        for &b in word.as_bytes() {
            h = fnv_step(h, b);
        }
    }
    h
}

fn embed_words(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|w| {
            w.trim_matches(|c: char| !c.is_alphanumeric())
                .to_lowercase()
        })
        .filter(|w| !w.is_empty())
        .collect()
}

impl TextEmbedder for HashingEmbedder {
    fn provider_id(&self) -> &str {
        &self.id
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>> {
        let words = embed_words(text);
        if words.is_empty() {
            return Err(Error::Validation(format!(
                "cannot embed text with no words: {text:?}"
            )));
        }
        let mut v = vec![0.0; self.dimension];
        let mut bump = |ngram: &[String]| {
            let h = ngram_hash(self.seed, ngram);
            let index = (h % self.dimension as u64) as usize;
            let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
            v[index] += sign;
        };
        for i in 0..words.len() {
            bump(std::slice::from_ref(&words[i]));
            if i + 1 < words.len() {
                bump(&words[i..=i + 1]);
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            // Possible only when opposite-signed n-grams cancel exactly.
            return Err(Error::Validation(format!(
                "text hashed to a zero vector: {text:?}"
            )));
        }
        for x in &mut v {
            *x /= norm;
        }
        Ok(v)
    }
}

/// The trainable square adapter. Identity-initialized, so an untrained
/// adapter reproduces the base embedder's geometry exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecallAdapter {
    dimension: usize,
    /// Row-major `dimension × dimension`.
    matrix: Vec<f64>,
}

impl RecallAdapter {
    pub fn identity(dimension: usize) -> RecallAdapter {
        let mut matrix = vec![0.0; dimension * dimension];
        for i in 0..dimension {
            matrix[i * dimension + i] = 1.0;
        }
        RecallAdapter { dimension, matrix }
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn matrix(&self) -> &[f64] {
        &self.matrix
    }

    /// Raw `A · base`, no normalization. Training math works on this.
    pub fn map(&self, base: &[f64]) -> Result<Vec<f64>> {
        if base.len() != self.dimension {
            return Err(Error::DimensionMismatch {
                left: base.len(),
                right: self.dimension,
            });
        }
        let out = self
            .matrix
            .chunks_exact(self.dimension)
            .map(|row| row.iter().zip(base).map(|(a, x)| a * x).sum())
            .collect();
        Ok(out)
    }

    /// `f_finetune`: normalize(A · base). Errors if the image is zero or
    /// non-finite — an adapter that collapses inputs is broken.
    pub fn apply(&self, base: &[f64]) -> Result<Vec<f64>> {
        let mut out = self.map(base)?;
        let norm = out.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !norm.is_finite() || norm == 0.0 {
            return Err(Error::Validation(
                "adapter mapped an embedding to zero or non-finite".into(),
            ));
        }
        for x in &mut out {
            *x /= norm;
        }
        Ok(out)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let mut json = serde_json::to_string_pretty(self)?;
        json.push('\n');
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<RecallAdapter> {
        let text = std::fs::read_to_string(path)?;
        let adapter: RecallAdapter = serde_json::from_str(&text)?;
        if adapter.matrix.len() != adapter.dimension * adapter.dimension {
            return Err(Error::Validation(
                "adapter matrix size does not match dimension".into(),
            ));
        }
        Ok(adapter)
    }
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    dot / (na.sqrt() * nb.sqrt())
}

/// Hinge objective on base vectors: max(0, sim(q,neg) − sim(q,pos) + margin),
/// with similarities under the adapter.
pub fn triplet_loss(
    adapter: &RecallAdapter,
    query: &[f64],
    positive: &[f64],
    negative: &[f64],
    margin: f64,
) -> Result<f64> {
    let u = adapter.map(query)?;
    let v = adapter.map(positive)?;
    let w = adapter.map(negative)?;
    Ok((cosine(&u, &w) - cosine(&u, &v) + margin).max(0.0))
}

/// Per-image gradients of the hinge loss: (loss, Some((d/du, d/dv, d/dw)))
/// with u = Aq, v = As, w = An; None when the triplet is inactive.
#[allow(clippy::type_complexity)]
fn triplet_image_grads(
    adapter: &RecallAdapter,
    q: &[f64],
    s: &[f64],
    n: &[f64],
    margin: f64,
) -> Result<(f64, Option<(Vec<f64>, Vec<f64>, Vec<f64>)>)> {
    let u = adapter.map(q)?;
    let v = adapter.map(s)?;
    let w = adapter.map(n)?;
    let nu = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nw = w.iter().map(|x| x * x).sum::<f64>().sqrt();
    if nu == 0.0 || nv == 0.0 || nw == 0.0 {
        return Err(Error::Validation(
            "triplet gradient hit a zero-norm image".into(),
        ));
    }
    let dot_uv = u.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>();
    let dot_uw = u.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
    let cos_p = dot_uv / (nu * nv);
    let cos_n = dot_uw / (nu * nw);
    let loss = cos_n - cos_p + margin;
    if loss <= 0.0 {
        return Ok((0.0, None));
    }
    let d = u.len();
    // ∂cos(u,v)/∂u = v/(|u||v|) − cos·u/|u|²; the loss differentiates as
    // dL/du = ∂cos(u,w)/∂u − ∂cos(u,v)/∂u, dL/dv = −∂cos(u,v)/∂v,
    // dL/dw = ∂cos(u,w)/∂w.
    let mut gu = vec![0.0; d];
    let mut gv = vec![0.0; d];
    let mut gw = vec![0.0; d];
    for i in 0..d {
        gu[i] = (w[i] / (nu * nw) - cos_n * u[i] / (nu * nu))
            - (v[i] / (nu * nv) - cos_p * u[i] / (nu * nu));
        gv[i] = -(u[i] / (nu * nv) - cos_p * v[i] / (nv * nv));
        gw[i] = u[i] / (nu * nw) - cos_n * w[i] / (nw * nw);
    }
    Ok((loss, Some((gu, gv, gw))))
}

/// Full dL/dA as a row-major matrix (chain rule through the three images:
/// dA = gu·qᵀ + gv·sᵀ + gw·nᵀ). Test hook for finite-difference checks;
/// training applies the same image gradients in a fused SGD step.
pub fn triplet_grad_matrix(
    adapter: &RecallAdapter,
    q: &[f64],
    s: &[f64],
    n: &[f64],
    margin: f64,
) -> Result<(f64, Vec<f64>)> {
    let d = adapter.dimension();
    let (loss, grads) = triplet_image_grads(adapter, q, s, n, margin)?;
    let mut grad = vec![0.0; d * d];
    if let Some((gu, gv, gw)) = grads {
        for i in 0..d {
            let row = &mut grad[i * d..(i + 1) * d];
            for j in 0..d {
                row[j] = gu[i] * q[j] + gv[i] * s[j] + gw[i] * n[j];
            }
        }
    }
    Ok((loss, grad))
}

/// Triplet-training hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TripletConfig {
    pub margin: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub negatives_per_positive: usize,
    pub seed: u64,
}

impl Default for TripletConfig {
    fn default() -> Self {
        TripletConfig {
            margin: 0.5,
            learning_rate: 2e-5,
            epochs: 15,
            negatives_per_positive: 1,
            seed: 0,
        }
    }
}

impl TripletConfig {
    pub fn validate(&self) -> Result<()> {
        if self.margin.is_nan() || self.margin <= 0.0 {
            return Err(Error::Config("triplet margin must be positive".into()));
        }
        if !self.learning_rate.is_finite() || self.learning_rate <= 0.0 {
            return Err(Error::Config(
                "triplet learning_rate must be positive and finite".into(),
            ));
        }
        if self.negatives_per_positive == 0 {
            return Err(Error::Config(
                "negatives_per_positive must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// One training example: query text, the consumed service, a sampled
/// non-consumed service.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryTriplet {
    pub query: String,
    pub positive: u32,
    pub negative: u32,
}

/// Attach `negatives_per_positive` uniform negatives (≠ positive) to each
/// (query, consumed-service) pair.
pub fn assign_negatives(
    pairs: &[(String, u32)],
    service_count: usize,
    negatives_per_positive: usize,
    seed: u64,
) -> Result<Vec<QueryTriplet>> {
    if service_count < 2 {
        return Err(Error::Validation(
            "need at least 2 services to sample negatives".into(),
        ));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut triplets = Vec::with_capacity(pairs.len() * negatives_per_positive);
    for (query, positive) in pairs {
        if *positive as usize >= service_count {
            return Err(Error::field(
                "positive",
                format!("service {positive} out of range"),
            ));
        }
        for _ in 0..negatives_per_positive {
            let draw = rng.random_range(0..service_count as u32 - 1);
            let negative = if draw >= *positive { draw + 1 } else { draw };
            triplets.push(QueryTriplet {
                query: query.clone(),
                positive: *positive,
                negative,
            });
        }
    }
    Ok(triplets)
}

/// Canonical text a service is embedded from.
pub fn service_text(entry: &ServiceEntry) -> String {
    format!("{}. {}", entry.name, entry.desc)
}

/// SGD over shuffled triplets. Texts are embedded once up front; every
/// epoch reshuffles with the seeded stream, so the result is a pure function
/// of (inputs, config).
pub fn train_adapter(
    catalogs: &Catalogs,
    embedder: &dyn TextEmbedder,
    triplets: &[QueryTriplet],
    config: &TripletConfig,
) -> Result<RecallAdapter> {
    config.validate()?;
    let d = embedder.dimension();
    let service_vecs: Vec<Vec<f64>> = catalogs
        .services
        .iter()
        .map(|s| embedder.embed(&service_text(s)))
        .collect::<Result<_>>()?;
    let query_vecs: Vec<Vec<f64>> = triplets
        .iter()
        .map(|t| embedder.embed(&t.query))
        .collect::<Result<_>>()?;
    for t in triplets {
        for id in [t.positive, t.negative] {
            if id as usize >= service_vecs.len() {
                return Err(Error::field("service", format!("{id} out of range")));
            }
        }
    }
    let mut adapter = RecallAdapter::identity(d);
    let mut rng = ChaCha12Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..triplets.len()).collect();
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        for &t in &order {
            let triplet = &triplets[t];
            let q = &query_vecs[t];
            let s = &service_vecs[triplet.positive as usize];
            let n = &service_vecs[triplet.negative as usize];
            let (loss, grads) = triplet_image_grads(&adapter, q, s, n, config.margin)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss(format!(
                    "triplet loss diverged at epoch {epoch}"
                )));
            }
            if let Some((gu, gv, gw)) = grads {
                let lr = config.learning_rate;
                for i in 0..d {
                    let row = &mut adapter.matrix[i * d..(i + 1) * d];
                    for j in 0..d {
                        row[j] -= lr * (gu[i] * q[j] + gv[i] * s[j] + gw[i] * n[j]);
                    }
                }
            }
        }
    }
    if adapter.matrix.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFiniteLoss("adapter matrix diverged".into()));
    }
    Ok(adapter)
}

/// Service embeddings under a fixed adapter, in catalog order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecallIndex {
    pub dimension: usize,
    pub embedder_id: String,
    pub adapter: RecallAdapter,
    /// Catalog ids, ascending; row i embeds service `service_ids[i]`.
    pub service_ids: Vec<u32>,
    /// Row-major `service_ids.len() × dimension`, unit-norm rows.
    pub embeddings: Vec<f64>,
}

impl RecallIndex {
    pub fn build(
        catalogs: &Catalogs,
        embedder: &dyn TextEmbedder,
        adapter: &RecallAdapter,
    ) -> Result<RecallIndex> {
        if adapter.dimension() != embedder.dimension() {
            return Err(Error::DimensionMismatch {
                left: adapter.dimension(),
                right: embedder.dimension(),
            });
        }
        let d = embedder.dimension();
        let mut embeddings = Vec::with_capacity(catalogs.services.len() * d);
        for entry in &catalogs.services {
            let row = adapter.apply(&embedder.embed(&service_text(entry))?)?;
            embeddings.extend_from_slice(&row);
        }
        Ok(RecallIndex {
            dimension: d,
            embedder_id: embedder.provider_id().to_string(),
            adapter: adapter.clone(),
            service_ids: (0..catalogs.services.len() as u32).collect(),
            embeddings,
        })
    }

    pub fn len(&self) -> usize {
        self.service_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.service_ids.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.embeddings[i * self.dimension..(i + 1) * self.dimension]
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let mut json = serde_json::to_string(self)?;
        json.push('\n');
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<RecallIndex> {
        let text = std::fs::read_to_string(path)?;
        let index: RecallIndex = serde_json::from_str(&text)?;
        if index.embeddings.len() != index.service_ids.len() * index.dimension {
            return Err(Error::Validation(
                "index embedding matrix size mismatch".into(),
            ));
        }
        Ok(index)
    }
}

/// Top-K service ids for a query, by cosine under the index's adapter.
/// Ties keep catalog order; K beyond the catalog returns the full ranking.
pub fn recall_topk(
    index: &RecallIndex,
    embedder: &dyn TextEmbedder,
    query_text: &str,
    k: usize,
) -> Result<Vec<u32>> {
    if k == 0 {
        return Err(Error::Validation("recall K must be at least 1".into()));
    }
    if embedder.provider_id() != index.embedder_id {
        return Err(Error::Config(format!(
            "index built with embedder {:?}, queried with {:?}",
            index.embedder_id,
            embedder.provider_id()
        )));
    }
    let query = index.adapter.apply(&embedder.embed(query_text)?)?;
    let mut scored: Vec<(usize, f64)> = (0..index.len())
        .map(|i| {
            (
                i,
                index
                    .row(i)
                    .iter()
                    .zip(&query)
                    .map(|(a, b)| a * b)
                    .sum::<f64>(),
            )
        })
        .collect();
    // Stable sort: equal similarities keep catalog order.
    scored.sort_by(|a, b| b.1.total_cmp(&a.1));
    scored.truncate(k);
    Ok(scored
        .into_iter()
        .map(|(i, _)| index.service_ids[i])
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{default_need_names, generate_synthetic, SyntheticConfig};

    fn embedder(dim: usize) -> HashingEmbedder {
        HashingEmbedder::new(dim, 7).unwrap()
    }

    fn tiny_catalog() -> Catalogs {
        Catalogs {
            needs: vec![
                "a quick meal".into(),
                "body relaxation".into(),
                "pet companionship".into(),
            ],
            services: vec![
                ServiceEntry {
                    name: "burger express #0".into(),
                    desc: "Fulfills the living need of a quick meal.".into(),
                    fulfills_need: 0,
                },
                ServiceEntry {
                    name: "massage lounge #1".into(),
                    desc: "Fulfills the living need of body relaxation.".into(),
                    fulfills_need: 1,
                },
                ServiceEntry {
                    name: "pet corner #2".into(),
                    desc: "Fulfills the living need of pet companionship.".into(),
                    fulfills_need: 2,
                },
            ],
            locations: vec!["zone".into()],
        }
    }

    #[test]
    fn embeddings_are_deterministic_unit_vectors() {
        let e = embedder(64);
        let a = e.embed("a quick meal nearby").unwrap();
        let b = e.embed("a quick meal nearby").unwrap();
        assert_eq!(a, b);
        let norm: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-12);
        assert_eq!(a.len(), 64);
    }

    #[test]
    fn empty_text_is_rejected() {
        let e = embedder(64);
        assert!(e.embed("").is_err());
        assert!(e.embed("  ...  ").is_err());
    }

    #[test]
    fn word_order_changes_bigrams_only() {
        let e = embedder(512);
        let a = e.embed("quick meal").unwrap();
        let b = e.embed("meal quick").unwrap();
        let sim = cosine(&a, &b);
        // Unigrams shared, bigram differs: similar but not identical.
        assert!(sim > 0.3 && sim < 0.999, "sim = {sim}");
    }

    #[test]
    fn disjoint_vocabulary_has_near_zero_similarity() {
        let e = embedder(4096); // wide enough that collisions are unlikely
        let a = e.embed("skiing lessons").unwrap();
        let b = e.embed("noodle soup").unwrap();
        assert!(cosine(&a, &b).abs() < 1e-9);
    }

    #[test]
    fn collision_rate_on_catalog_vocabulary_is_bounded() {
        // Birthday audit: hashing the full default-catalog vocabulary into
        // the default dimension should collide at roughly V²/(2·dim), not
        // catastrophically worse.
        let mut ngrams: Vec<Vec<String>> = Vec::new();
        for need in default_need_names() {
            let words = embed_words(&need);
            for i in 0..words.len() {
                ngrams.push(vec![words[i].clone()]);
                if i + 1 < words.len() {
                    ngrams.push(words[i..=i + 1].to_vec());
                }
            }
        }
        ngrams.sort();
        ngrams.dedup();
        let v = ngrams.len();
        let mut buckets = std::collections::HashMap::new();
        let mut collisions = 0usize;
        for g in &ngrams {
            let h = ngram_hash(7, g) % HashingEmbedder::DEFAULT_DIMENSION as u64;
            collisions += buckets.get(&h).copied().unwrap_or(0usize);
            *buckets.entry(h).or_insert(0) += 1;
        }
        let expected = (v * v) as f64 / (2.0 * HashingEmbedder::DEFAULT_DIMENSION as f64);
        assert!(
            (collisions as f64) < 3.0 * expected + 5.0,
            "collisions {collisions} vs expectation {expected:.1} over {v} n-grams"
        );
    }

    /// Unit vectors with a chosen cosine against the first axis.
    fn with_cos(dim: usize, c: f64) -> Vec<f64> {
        let mut v = vec![0.0; dim];
        v[0] = c;
        v[1] = (1.0 - c * c).sqrt();
        v
    }

    #[test]
    fn triplet_loss_hand_values() {
        let a = RecallAdapter::identity(4);
        let q = with_cos(4, 1.0);
        assert!(
            (triplet_loss(&a, &q, &with_cos(4, 0.9), &with_cos(4, 0.2), 0.5).unwrap()).abs()
                < 1e-12
        );
        let l = triplet_loss(&a, &q, &with_cos(4, 0.5), &with_cos(4, 0.4), 0.5).unwrap();
        assert!((l - 0.4).abs() < 1e-12);
        let s = with_cos(4, 0.7);
        let same = triplet_loss(&a, &q, &s, &s, 0.5).unwrap();
        assert!((same - 0.5).abs() < 1e-12);
    }

    /// Deterministic pseudo-random stream for fixture construction.
    struct Lcg(u64);
    impl Lcg {
        fn next_f64(&mut self) -> f64 {
            self.0 = self
                .0
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            ((self.0 >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        }
        fn vector(&mut self, dim: usize) -> Vec<f64> {
            (0..dim).map(|_| self.next_f64()).collect()
        }
    }

    #[test]
    fn adapter_gradient_matches_finite_differences() {
        let dim = 6;
        let mut lcg = Lcg(99);
        for trial in 0..10 {
            let mut adapter = RecallAdapter::identity(dim);
            for x in &mut adapter.matrix {
                *x += 0.3 * lcg.next_f64();
            }
            let q = lcg.vector(dim);
            let s = lcg.vector(dim);
            let n = lcg.vector(dim);
            let (loss, grad) = triplet_grad_matrix(&adapter, &q, &s, &n, 0.5).unwrap();
            if loss == 0.0 {
                continue;
            }
            let h = 1e-5;
            for (idx, analytic) in grad.iter().enumerate() {
                let mut plus = adapter.clone();
                plus.matrix[idx] += h;
                let mut minus = adapter.clone();
                minus.matrix[idx] -= h;
                let fd = (triplet_loss(&plus, &q, &s, &n, 0.5).unwrap()
                    - triplet_loss(&minus, &q, &s, &n, 0.5).unwrap())
                    / (2.0 * h);
                let denom = fd.abs().max(analytic.abs()).max(1e-8);
                assert!(
                    (fd - analytic).abs() / denom < 1e-4,
                    "trial {trial} entry {idx}: fd {fd} vs analytic {analytic}"
                );
            }
        }
    }

    #[test]
    fn zero_epochs_returns_identity() {
        let catalogs = tiny_catalog();
        let e = embedder(32);
        let triplets = assign_negatives(
            &[("a quick meal".to_string(), 0)],
            catalogs.services.len(),
            1,
            3,
        )
        .unwrap();
        let config = TripletConfig {
            epochs: 0,
            ..TripletConfig::default()
        };
        let adapter = train_adapter(&catalogs, &e, &triplets, &config).unwrap();
        assert_eq!(adapter, RecallAdapter::identity(32));
    }

    #[test]
    fn identity_adapter_rankings_ignore_base_scale() {
        struct Scaled(HashingEmbedder);
        impl TextEmbedder for Scaled {
            fn provider_id(&self) -> &str {
                self.0.provider_id()
            }
            fn dimension(&self) -> usize {
                self.0.dimension()
            }
            fn embed(&self, text: &str) -> Result<Vec<f64>> {
                Ok(self.0.embed(text)?.into_iter().map(|x| x * 3.5).collect())
            }
        }
        let catalogs = tiny_catalog();
        let plain = embedder(64);
        let scaled = Scaled(embedder(64));
        let id = RecallAdapter::identity(64);
        let a = RecallIndex::build(&catalogs, &plain, &id).unwrap();
        let b = RecallIndex::build(&catalogs, &scaled, &id).unwrap();
        for query in [
            "a quick meal please",
            "time to relax my body",
            "my pet needs company",
        ] {
            assert_eq!(
                recall_topk(&a, &plain, query, 3).unwrap(),
                recall_topk(&b, &scaled, query, 3).unwrap()
            );
        }
    }

    #[test]
    fn topk_matches_brute_force_and_is_prefix_monotone() {
        let config = SyntheticConfig {
            user_count: 5,
            total_days: 10,
            service_count: 120,
            ..SyntheticConfig::default()
        };
        let (catalogs, _) = generate_synthetic(&config).unwrap();
        let e = embedder(128);
        let index = RecallIndex::build(&catalogs, &e, &RecallAdapter::identity(128)).unwrap();
        for query in [
            "a quick meal",
            "pet companionship nearby",
            "fitness session",
        ] {
            let q = index.adapter.apply(&e.embed(query).unwrap()).unwrap();
            let mut oracle: Vec<(usize, f64)> = (0..index.len())
                .map(|i| (i, index.row(i).iter().zip(&q).map(|(a, b)| a * b).sum()))
                .collect();
            oracle.sort_by(|a, b| b.1.total_cmp(&a.1));
            let full = recall_topk(&index, &e, query, index.len()).unwrap();
            assert_eq!(
                full,
                oracle.iter().map(|&(i, _)| i as u32).collect::<Vec<_>>()
            );
            for k in [1, 7, 20] {
                assert_eq!(recall_topk(&index, &e, query, k).unwrap(), full[..k]);
            }
        }
    }

    #[test]
    fn oversized_k_returns_full_permutation() {
        let catalogs = tiny_catalog();
        let e = embedder(64);
        let index = RecallIndex::build(&catalogs, &e, &RecallAdapter::identity(64)).unwrap();
        let ranked = recall_topk(&index, &e, "anything at all", 50).unwrap();
        let mut sorted = ranked.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, vec![0, 1, 2]);
    }

    #[test]
    fn duplicate_services_stay_in_catalog_order() {
        let mut catalogs = tiny_catalog();
        let clone = catalogs.services[0].clone();
        catalogs.services.push(clone);
        let e = embedder(64);
        let index = RecallIndex::build(&catalogs, &e, &RecallAdapter::identity(64)).unwrap();
        let ranked = recall_topk(&index, &e, "burger express quick meal", 4).unwrap();
        let a = ranked.iter().position(|&s| s == 0).unwrap();
        let b = ranked.iter().position(|&s| s == 3).unwrap();
        assert_eq!(
            b,
            a + 1,
            "duplicates must be adjacent, original first: {ranked:?}"
        );
    }

    #[test]
    fn exact_service_name_ranks_first() {
        let catalogs = tiny_catalog();
        let e = embedder(256);
        let index = RecallIndex::build(&catalogs, &e, &RecallAdapter::identity(256)).unwrap();
        for (id, entry) in catalogs.services.iter().enumerate() {
            let ranked = recall_topk(&index, &e, &entry.name, 1).unwrap();
            assert_eq!(ranked[0] as usize, id, "query {:?}", entry.name);
        }
    }

    #[test]
    fn negative_assignment_is_seeded_and_avoids_positive() {
        let pairs: Vec<(String, u32)> = (0..50).map(|i| (format!("query {i}"), i % 7)).collect();
        let a = assign_negatives(&pairs, 7, 2, 11).unwrap();
        let b = assign_negatives(&pairs, 7, 2, 11).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 100);
        assert!(a
            .iter()
            .all(|t| t.negative != t.positive && (t.negative as usize) < 7));
        assert!(assign_negatives(&pairs, 1, 1, 0).is_err());
    }

    #[test]
    fn training_is_deterministic_and_separates_a_lexical_corpus() {
        // Separable by construction: each query names its need, each service
        // description names the same need.
        let config = SyntheticConfig {
            user_count: 5,
            total_days: 10,
            need_count: 12,
            service_count: 60,
            ..SyntheticConfig::default()
        };
        let (catalogs, _) = generate_synthetic(&config).unwrap();
        let pairs: Vec<(String, u32)> = (0..catalogs.services.len() as u32)
            .map(|sid| {
                let need = &catalogs.needs[catalogs.services[sid as usize].fulfills_need as usize];
                (
                    format!("Looking for something helpful here; overall this is about {need}"),
                    sid,
                )
            })
            .collect();
        let (train_pairs, held_out) = pairs.split_at(40);
        let e = embedder(128);
        let triplets = assign_negatives(train_pairs, catalogs.services.len(), 1, 5).unwrap();
        let config = TripletConfig {
            epochs: 20,
            learning_rate: 2e-5,
            ..TripletConfig::default()
        };
        let adapter = train_adapter(&catalogs, &e, &triplets, &config).unwrap();
        let again = train_adapter(&catalogs, &e, &triplets, &config).unwrap();
        assert_eq!(adapter, again);

        // Trained adapter should rank the positive above a random negative
        // for nearly all held-out queries, and beat identity on Recall@20.
        let identity = RecallAdapter::identity(128);
        let trained_index = RecallIndex::build(&catalogs, &e, &adapter).unwrap();
        let identity_index = RecallIndex::build(&catalogs, &e, &identity).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(17);
        let mut wins = 0usize;
        let mut trained_hits = 0usize;
        let mut identity_hits = 0usize;
        for (query, positive) in held_out {
            let ranked = recall_topk(&trained_index, &e, query, catalogs.services.len()).unwrap();
            let pos_rank = ranked.iter().position(|&s| s == *positive).unwrap();
            let negative = loop {
                let n = rng.random_range(0..catalogs.services.len() as u32);
                if n != *positive {
                    break n;
                }
            };
            let neg_rank = ranked.iter().position(|&s| s == negative).unwrap();
            if pos_rank < neg_rank {
                wins += 1;
            }
            if pos_rank < 20 {
                trained_hits += 1;
            }
            let id_ranked = recall_topk(&identity_index, &e, query, 20).unwrap();
            if id_ranked.contains(positive) {
                identity_hits += 1;
            }
        }
        assert!(
            wins * 10 >= held_out.len() * 9,
            "wins {wins}/{}",
            held_out.len()
        );
        assert!(
            trained_hits >= identity_hits,
            "trained {trained_hits} vs identity {identity_hits}"
        );
    }

    #[test]
    fn divergent_learning_rate_aborts() {
        let catalogs = tiny_catalog();
        let e = embedder(16);
        let triplets = assign_negatives(
            &[
                ("a quick meal".to_string(), 0),
                ("body relaxation".to_string(), 1),
            ],
            catalogs.services.len(),
            1,
            3,
        )
        .unwrap();
        let config = TripletConfig {
            learning_rate: 1e300,
            epochs: 50,
            ..TripletConfig::default()
        };
        assert!(train_adapter(&catalogs, &e, &triplets, &config).is_err());
    }

    #[test]
    fn index_round_trips_through_disk() {
        let catalogs = tiny_catalog();
        let e = embedder(32);
        let index = RecallIndex::build(&catalogs, &e, &RecallAdapter::identity(32)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("index.json");
        index.save(&path).unwrap();
        assert_eq!(RecallIndex::load(&path).unwrap(), index);

        let adapter_path = dir.path().join("adapter.json");
        index.adapter.save(&adapter_path).unwrap();
        assert_eq!(RecallAdapter::load(&adapter_path).unwrap(), index.adapter);
    }

    #[test]
    fn mismatched_embedder_is_refused() {
        let catalogs = tiny_catalog();
        let e = embedder(32);
        let index = RecallIndex::build(&catalogs, &e, &RecallAdapter::identity(32)).unwrap();
        let other = HashingEmbedder::new(32, 8).unwrap();
        assert!(recall_topk(&index, &other, "query", 1).is_err());
    }
}
