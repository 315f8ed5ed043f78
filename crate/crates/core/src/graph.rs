//! Behavior graph construction and embedding training.
//!
//! The graph is tripartite: user nodes, spatiotemporal context nodes, and
//! need nodes. Every training record increments the weight of its (user,
//! need) edge and its (context, need) edge by one. Embeddings live on all
//! nodes and are learned by propagating layer 0 through the symmetrically
//! normalized adjacency,
//!
//! ```text
//! e_i^(k+1) = Σ_{j ∈ N(i)}  w_ij / (D_i · D_j) · e_j^(k),   D_i = sqrt(Σ_j w_ij)
//! ```
//!
//! summing layers 0..=K, and training the layer-0 table end-to-end with a
//! pairwise ranking loss, `L = −ln σ(e_uc·e_n − e_uc·e_n′)` with
//! `e_uc = e_u + e_c`. Ranking scores during training use the *raw* layer
//! sums; unit-normalization happens once at export, and retrieval works on
//! the normalized table.
//!
//! Everything here is f64 and single-threaded: bit-reproducibility given the
//! seed is part of the contract.

use std::collections::HashMap;

use rand::prelude::*;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::corpus::{ContextKey, Record};
use crate::error::{Error, Result};

/// Dense per-node vectors: `rows × dim`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeMatrix {
    pub dim: usize,
    pub data: Vec<f64>,
}

impl NodeMatrix {
    pub fn zeros(rows: usize, dim: usize) -> NodeMatrix {
        NodeMatrix {
            dim,
            data: vec![0.0; rows * dim],
        }
    }

    pub fn rows(&self) -> usize {
        self.data.len().checked_div(self.dim).unwrap_or(0)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.dim..(i + 1) * self.dim]
    }

    fn add_assign(&mut self, other: &NodeMatrix) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

/// Weighted tripartite graph. Node indices are unified: users first, then
/// contexts, then needs, so one matrix covers all nodes.
#[derive(Debug, Clone)]
pub struct BehaviorGraph {
    users: Vec<u64>,
    contexts: Vec<ContextKey>,
    need_count: usize,
    user_index: HashMap<u64, usize>,
    context_index: HashMap<ContextKey, usize>,
    /// Symmetric adjacency: for each node, (neighbor, weight) sorted by
    /// neighbor index. Weights are pair counts (integers stored as f64).
    adjacency: Vec<Vec<(u32, f64)>>,
    /// D_i = sqrt(Σ_j w_ij); 0.0 for isolated nodes.
    degree: Vec<f64>,
}

impl BehaviorGraph {
    pub fn node_count(&self) -> usize {
        self.users.len() + self.contexts.len() + self.need_count
    }

    pub fn user_count(&self) -> usize {
        self.users.len()
    }

    pub fn context_count(&self) -> usize {
        self.contexts.len()
    }

    pub fn need_count(&self) -> usize {
        self.need_count
    }

    pub fn users(&self) -> &[u64] {
        &self.users
    }

    pub fn contexts(&self) -> &[ContextKey] {
        &self.contexts
    }

    pub fn user_node(&self, user_id: u64) -> Option<usize> {
        self.user_index.get(&user_id).copied()
    }

    pub fn context_node(&self, key: ContextKey) -> Option<usize> {
        self.context_index.get(&key).map(|&i| self.users.len() + i)
    }

    pub fn need_node(&self, need_id: u32) -> usize {
        self.users.len() + self.contexts.len() + need_id as usize
    }

    pub fn neighbors(&self, node: usize) -> &[(u32, f64)] {
        &self.adjacency[node]
    }

    pub fn degree(&self, node: usize) -> f64 {
        self.degree[node]
    }
}

/// Count pair weights over the train split. Need nodes cover the full
/// catalog (`need_count`), so needs unseen in training become isolated
/// nodes; user and context nodes exist only for observed ids.
pub fn build_graph(train_records: &[Record], need_count: usize) -> Result<BehaviorGraph> {
    if train_records.is_empty() {
        return Err(Error::Validation(
            "cannot build a behavior graph from zero records".into(),
        ));
    }
    let mut users = Vec::new();
    let mut user_index = HashMap::new();
    let mut contexts = Vec::new();
    let mut context_index = HashMap::new();
    for record in train_records {
        if record.need_id as usize >= need_count {
            return Err(Error::field(
                "need_id",
                format!("{} out of range (need_count {need_count})", record.need_id),
            ));
        }
        user_index.entry(record.user_id).or_insert_with(|| {
            users.push(record.user_id);
            users.len() - 1
        });
        let key = ContextKey::of(record);
        context_index.entry(key).or_insert_with(|| {
            contexts.push(key);
            contexts.len() - 1
        });
    }

    let node_count = users.len() + contexts.len() + need_count;
    let need_base = users.len() + contexts.len();
    // BTreeMap per node keeps neighbor order deterministic regardless of
    // record order quirks.
    let mut weights: Vec<std::collections::BTreeMap<u32, f64>> =
        vec![Default::default(); node_count];
    let bump = |a: usize, b: usize, weights: &mut Vec<std::collections::BTreeMap<u32, f64>>| {
        *weights[a].entry(b as u32).or_insert(0.0) += 1.0;
        *weights[b].entry(a as u32).or_insert(0.0) += 1.0;
    };
    for record in train_records {
        let u = user_index[&record.user_id];
        let c = users.len() + context_index[&ContextKey::of(record)];
        let n = need_base + record.need_id as usize;
        bump(u, n, &mut weights);
        bump(c, n, &mut weights);
    }

    let adjacency: Vec<Vec<(u32, f64)>> = weights
        .into_iter()
        .map(|m| m.into_iter().collect())
        .collect();
    let degree = adjacency
        .iter()
        .map(|neighbors| neighbors.iter().map(|(_, w)| w).sum::<f64>().sqrt())
        .collect();

    Ok(BehaviorGraph {
        users,
        contexts,
        need_count,
        user_index,
        context_index,
        adjacency,
        degree,
    })
}

/// One step of symmetric-normalized propagation. Nodes with no neighbors map
/// to the zero vector.
pub fn propagate_layer(graph: &BehaviorGraph, layer: &NodeMatrix) -> NodeMatrix {
    let dim = layer.dim;
    let mut next = NodeMatrix::zeros(graph.node_count(), dim);
    for i in 0..graph.node_count() {
        let d_i = graph.degree[i];
        if d_i == 0.0 {
            continue;
        }
        let out = &mut next.data[i * dim..(i + 1) * dim];
        for &(j, w) in &graph.adjacency[i] {
            let j = j as usize;
            let coef = w / (d_i * graph.degree[j]);
            let src = &layer.data[j * dim..(j + 1) * dim];
            for (o, s) in out.iter_mut().zip(src) {
                *o += coef * s;
            }
        }
    }
    next
}

/// All layers 0..=k starting from `layer0`.
pub fn forward_layers(graph: &BehaviorGraph, layer0: &NodeMatrix, k: usize) -> Vec<NodeMatrix> {
    let mut layers = Vec::with_capacity(k + 1);
    layers.push(layer0.clone());
    for _ in 0..k {
        let next = propagate_layer(graph, layers.last().expect("layers never empty"));
        layers.push(next);
    }
    layers
}

/// Plain (pre-normalization) sum of layers — the view training scores on.
pub fn layer_sum(layers: &[NodeMatrix]) -> NodeMatrix {
    let mut sum = layers[0].clone();
    for layer in &layers[1..] {
        sum.add_assign(layer);
    }
    sum
}

/// Sum layers and unit-normalize each row. Rows whose sum is exactly zero
/// stay zero and are flagged degenerate (retrieval treats them as
/// unmatchable).
pub fn combine_layers(layers: &[NodeMatrix]) -> (NodeMatrix, Vec<bool>) {
    let mut combined = layer_sum(layers);
    let mut degenerate = vec![false; combined.rows()];
    for (i, flag) in degenerate.iter_mut().enumerate() {
        let row = combined.row_mut(i);
        let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            *flag = true;
        } else {
            for x in row {
                *x /= norm;
            }
        }
    }
    (combined, degenerate)
}

/// Gradients of one ranking-loss instance with respect to its four inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct BprGrads {
    pub d_user: Vec<f64>,
    pub d_context: Vec<f64>,
    pub d_pos: Vec<f64>,
    pub d_neg: Vec<f64>,
}

/// `−ln σ(e_uc·e_pos − e_uc·e_neg)` with `e_uc = e_u + e_c`, plus analytic
/// gradients. σ is evaluated in log-space so huge margins don't overflow.
pub fn bpr_loss_and_grad(
    e_user: &[f64],
    e_context: &[f64],
    e_pos: &[f64],
    e_neg: &[f64],
) -> Result<(f64, BprGrads)> {
    let dim = e_user.len();
    for other in [e_context.len(), e_pos.len(), e_neg.len()] {
        if other != dim {
            return Err(Error::DimensionMismatch {
                left: dim,
                right: other,
            });
        }
    }
    let mut margin = 0.0;
    for i in 0..dim {
        let uc = e_user[i] + e_context[i];
        margin += uc * (e_pos[i] - e_neg[i]);
    }
    let loss = softplus(-margin);
    // dL/dmargin = −σ(−margin)
    let slope = -sigmoid(-margin);
    let mut grads = BprGrads {
        d_user: vec![0.0; dim],
        d_context: vec![0.0; dim],
        d_pos: vec![0.0; dim],
        d_neg: vec![0.0; dim],
    };
    for i in 0..dim {
        let uc = e_user[i] + e_context[i];
        let d_uc = slope * (e_pos[i] - e_neg[i]);
        grads.d_user[i] = d_uc;
        grads.d_context[i] = d_uc;
        grads.d_pos[i] = slope * uc;
        grads.d_neg[i] = -slope * uc;
    }
    Ok((loss, grads))
}

fn softplus(x: f64) -> f64 {
    // ln(1 + e^x), stable on both tails.
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
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

/// One training instance with its sampled negative, in node/id space.
#[derive(Debug, Clone, Copy)]
pub struct TrainInstance {
    pub user_node: usize,
    pub context_node: usize,
    pub pos_need: u32,
    pub neg_need: u32,
}

/// Total ranking loss of `instances` scored on the layer sums reached from
/// `layer0`. Shared by the trainer and the finite-difference tests.
pub fn total_loss(
    graph: &BehaviorGraph,
    layer0: &NodeMatrix,
    k: usize,
    instances: &[TrainInstance],
) -> Result<f64> {
    let combined = layer_sum(&forward_layers(graph, layer0, k));
    let mut total = 0.0;
    for inst in instances {
        let (loss, _) = bpr_loss_and_grad(
            combined.row(inst.user_node),
            combined.row(inst.context_node),
            combined.row(graph.need_node(inst.pos_need)),
            combined.row(graph.need_node(inst.neg_need)),
        )?;
        total += loss;
    }
    Ok(total)
}

/// Gradient of [`total_loss`] with respect to `layer0`.
///
/// The combined view is `C = Σ_k A^k · E0` for the (symmetric) normalized
/// adjacency A, so ∂L/∂E0 = Σ_k A^k · ∂L/∂C — the backward pass reuses the
/// forward propagation operator.
pub fn total_loss_gradient(
    graph: &BehaviorGraph,
    layer0: &NodeMatrix,
    k: usize,
    instances: &[TrainInstance],
) -> Result<NodeMatrix> {
    let combined = layer_sum(&forward_layers(graph, layer0, k));
    let mut grad_combined = NodeMatrix::zeros(graph.node_count(), layer0.dim);
    accumulate_combined_gradient(graph, &combined, instances, &mut grad_combined)?;
    Ok(backpropagate(graph, grad_combined, k))
}

fn accumulate_combined_gradient(
    graph: &BehaviorGraph,
    combined: &NodeMatrix,
    instances: &[TrainInstance],
    grad: &mut NodeMatrix,
) -> Result<f64> {
    let mut total = 0.0;
    for inst in instances {
        let pos_node = graph.need_node(inst.pos_need);
        let neg_node = graph.need_node(inst.neg_need);
        let (loss, g) = bpr_loss_and_grad(
            combined.row(inst.user_node),
            combined.row(inst.context_node),
            combined.row(pos_node),
            combined.row(neg_node),
        )?;
        total += loss;
        add_into(grad.row_mut(inst.user_node), &g.d_user);
        add_into(grad.row_mut(inst.context_node), &g.d_context);
        add_into(grad.row_mut(pos_node), &g.d_pos);
        add_into(grad.row_mut(neg_node), &g.d_neg);
    }
    Ok(total)
}

fn backpropagate(graph: &BehaviorGraph, grad_combined: NodeMatrix, k: usize) -> NodeMatrix {
    let mut total = grad_combined.clone();
    let mut current = grad_combined;
    for _ in 0..k {
        current = propagate_layer(graph, &current);
        total.add_assign(&current);
    }
    total
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Hyperparameters for embedding training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GnnTrainConfig {
    pub dimension: usize,
    pub layers: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub negatives_per_positive: usize,
    pub init_scale: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for GnnTrainConfig {
    fn default() -> Self {
        GnnTrainConfig {
            dimension: 64,
            layers: 3,
            learning_rate: 1e-4,
            epochs: 200,
            negatives_per_positive: 1,
            init_scale: 0.1,
            batch_size: 1024,
            seed: 0,
        }
    }
}

impl GnnTrainConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, ok) in [
            ("dimension", self.dimension > 0),
            ("learning_rate", self.learning_rate > 0.0),
            ("epochs", self.epochs > 0),
            ("negatives_per_positive", self.negatives_per_positive > 0),
            ("init_scale", self.init_scale > 0.0),
            ("batch_size", self.batch_size > 0),
        ] {
            if !ok {
                return Err(Error::Config(format!("gnn {name} must be positive")));
            }
        }
        Ok(())
    }
}

/// Trained embedding table: final combined unit-norm vectors plus the node
/// maps needed to look them up, and the per-epoch mean training loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingTable {
    pub dimension: usize,
    pub layers: usize,
    pub users: Vec<u64>,
    pub contexts: Vec<ContextKey>,
    pub need_count: usize,
    /// Row-major `node_count × dimension`, node order users→contexts→needs.
    pub vectors: Vec<f64>,
    /// Node indices whose combined embedding summed to exactly zero.
    pub degenerate: Vec<usize>,
    pub epoch_mean_loss: Vec<f64>,
    #[serde(skip)]
    user_index: HashMap<u64, usize>,
    #[serde(skip)]
    context_index: HashMap<ContextKey, usize>,
}

impl EmbeddingTable {
    fn new(
        graph: &BehaviorGraph,
        vectors: NodeMatrix,
        degenerate_flags: Vec<bool>,
        epoch_mean_loss: Vec<f64>,
    ) -> EmbeddingTable {
        let mut table = EmbeddingTable {
            dimension: vectors.dim,
            layers: 0,
            users: graph.users.clone(),
            contexts: graph.contexts.clone(),
            need_count: graph.need_count,
            vectors: vectors.data,
            degenerate: degenerate_flags
                .iter()
                .enumerate()
                .filter_map(|(i, &d)| d.then_some(i))
                .collect(),
            epoch_mean_loss,
            user_index: HashMap::new(),
            context_index: HashMap::new(),
        };
        table.rebuild_indexes();
        table
    }

    /// Assemble a table from explicit parts (deserialization, hand-crafted
    /// fixtures). Rows must already be normalized or flagged degenerate.
    pub fn from_parts(
        dimension: usize,
        layers: usize,
        users: Vec<u64>,
        contexts: Vec<ContextKey>,
        need_count: usize,
        vectors: Vec<f64>,
        degenerate: Vec<usize>,
    ) -> Result<EmbeddingTable> {
        let nodes = users.len() + contexts.len() + need_count;
        if vectors.len() != nodes * dimension {
            return Err(Error::DimensionMismatch {
                left: vectors.len(),
                right: nodes * dimension,
            });
        }
        let mut table = EmbeddingTable {
            dimension,
            layers,
            users,
            contexts,
            need_count,
            vectors,
            degenerate,
            epoch_mean_loss: Vec::new(),
            user_index: HashMap::new(),
            context_index: HashMap::new(),
        };
        table.rebuild_indexes();
        Ok(table)
    }

    /// Rebuild the lookup maps (needed after deserialization, which skips
    /// them).
    pub fn rebuild_indexes(&mut self) {
        self.user_index = self
            .users
            .iter()
            .enumerate()
            .map(|(i, &u)| (u, i))
            .collect();
        self.context_index = self
            .contexts
            .iter()
            .enumerate()
            .map(|(i, &c)| (c, i))
            .collect();
    }

    pub fn node_count(&self) -> usize {
        self.users.len() + self.contexts.len() + self.need_count
    }

    pub fn row(&self, node: usize) -> &[f64] {
        &self.vectors[node * self.dimension..(node + 1) * self.dimension]
    }

    pub fn user_row(&self, user_id: u64) -> Option<&[f64]> {
        self.user_index.get(&user_id).map(|&i| self.row(i))
    }

    pub fn context_node(&self, key: ContextKey) -> Option<usize> {
        self.context_index.get(&key).map(|&i| self.users.len() + i)
    }

    pub fn context_row(&self, key: ContextKey) -> Option<&[f64]> {
        self.context_node(key).map(|node| self.row(node))
    }

    pub fn need_row(&self, need_id: u32) -> &[f64] {
        self.row(self.users.len() + self.contexts.len() + need_id as usize)
    }

    pub fn is_degenerate(&self, node: usize) -> bool {
        self.degenerate.contains(&node)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let mut text = serde_json::to_string(self)?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<EmbeddingTable> {
        let text = std::fs::read_to_string(path)?;
        let mut table: EmbeddingTable = serde_json::from_str(&text)?;
        table.rebuild_indexes();
        Ok(table)
    }
}

/// Train layer-0 embeddings with mini-batch SGD on the summed batch loss and
/// return the combined, unit-normalized table. Deterministic given
/// `config.seed`: one ChaCha stream drives init, shuffling, and negative
/// sampling, and all arithmetic is sequential f64.
pub fn train_embeddings(
    graph: &BehaviorGraph,
    train_records: &[Record],
    config: &GnnTrainConfig,
) -> Result<EmbeddingTable> {
    config.validate()?;
    if train_records.is_empty() {
        return Err(Error::Validation("no training records".into()));
    }
    if graph.need_count < 2 {
        return Err(Error::Validation(
            "need at least 2 needs to sample negatives".into(),
        ));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(config.seed);
    let normal = Normal::new(0.0, config.init_scale)
        .map_err(|e| Error::Config(format!("bad init_scale: {e}")))?;
    let mut layer0 = NodeMatrix::zeros(graph.node_count(), config.dimension);
    for x in &mut layer0.data {
        *x = normal.sample(&mut rng);
    }

    // Positive instances, one per record, in record order.
    let positives: Vec<(usize, usize, u32)> = train_records
        .iter()
        .map(|r| {
            let u = graph
                .user_node(r.user_id)
                .ok_or_else(|| Error::Validation(format!("user {} not in graph", r.user_id)))?;
            let c = graph
                .context_node(ContextKey::of(r))
                .ok_or_else(|| Error::Validation("record context not in graph".into()))?;
            Ok((u, c, r.need_id))
        })
        .collect::<Result<_>>()?;

    let denom = (positives.len() * config.negatives_per_positive) as f64;
    let mut order: Vec<usize> = (0..positives.len()).collect();
    let mut epoch_mean_loss = Vec::with_capacity(config.epochs);
    let mut batch = Vec::with_capacity(config.batch_size * config.negatives_per_positive);

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(config.batch_size) {
            batch.clear();
            for &idx in chunk {
                let (u, c, pos) = positives[idx];
                for _ in 0..config.negatives_per_positive {
                    let neg = sample_negative(graph.need_count as u32, pos, &mut rng);
                    batch.push(TrainInstance {
                        user_node: u,
                        context_node: c,
                        pos_need: pos,
                        neg_need: neg,
                    });
                }
            }
            let combined = layer_sum(&forward_layers(graph, &layer0, config.layers));
            let mut grad_combined = NodeMatrix::zeros(graph.node_count(), config.dimension);
            let batch_loss =
                accumulate_combined_gradient(graph, &combined, &batch, &mut grad_combined)?;
            if !batch_loss.is_finite() {
                return Err(Error::NonFiniteLoss(format!("epoch {epoch}")));
            }
            epoch_loss += batch_loss;
            let grad0 = backpropagate(graph, grad_combined, config.layers);
            for (x, g) in layer0.data.iter_mut().zip(&grad0.data) {
                *x -= config.learning_rate * g;
            }
        }
        epoch_mean_loss.push(epoch_loss / denom);
    }

    let layers = forward_layers(graph, &layer0, config.layers);
    let (combined, degenerate) = combine_layers(&layers);
    let mut table = EmbeddingTable::new(graph, combined, degenerate, epoch_mean_loss);
    table.layers = config.layers;
    Ok(table)
}

fn sample_negative(need_count: u32, pos: u32, rng: &mut ChaCha12Rng) -> u32 {
    // Uniform over needs != pos: draw from n-1 and skip past the positive.
    let draw = rng.random_range(0..need_count - 1);
    if draw >= pos {
        draw + 1
    } else {
        draw
    }
}
