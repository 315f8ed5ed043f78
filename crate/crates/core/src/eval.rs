//! Offline evaluation: top-K metrics, ablation switches, and the end-to-end
//! retrieve → predict → refine → recall loop over a test split.
//!
//! Each test record carries exactly one consumed service, so Recall@K is a
//! per-instance hit indicator and NDCG@K degenerates to 1/log2(rank+1); the
//! reported numbers are means over the instances that completed. Ablation
//! flags switch individual stages off so paired runs on the same seed can be
//! compared directionally.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{Catalogs, ContextKey, Record};
use crate::error::{Error, Result};
use crate::maslow::NeedFramework;
use crate::orchestrate::{
    fan_out, history_excluding, user_record_indices, with_one_retry, BatchReport, LlmClient,
    NeedPipeline, PipelineConfig,
};
use crate::recall::{recall_topk, RecallAdapter, RecallIndex, TextEmbedder};
use crate::retrieve::Retriever;

/// Report cutoffs used when nothing else is configured.
pub const DEFAULT_KS: [usize; 2] = [10, 20];

/// Hit indicator: 1.0 if the consumed service appears in the first `k`
/// entries of the ranking, else 0.0. The dataset metric is the mean.
pub fn recall_at_k(ranked_ids: &[u32], truth_id: u32, k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::Validation(
            "metric cutoff K must be at least 1".into(),
        ));
    }
    let window = &ranked_ids[..k.min(ranked_ids.len())];
    Ok(if window.contains(&truth_id) { 1.0 } else { 0.0 })
}

/// Rank-discounted hit quality: 1/log2(rank+1) with 1-based rank, 0.0 when
/// the consumed service is outside the top `k`. With a single relevant item
/// the ideal DCG is 1, so this is already normalized.
pub fn ndcg_at_k(ranked_ids: &[u32], truth_id: u32, k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::Validation(
            "metric cutoff K must be at least 1".into(),
        ));
    }
    let window = &ranked_ids[..k.min(ranked_ids.len())];
    Ok(match window.iter().position(|&id| id == truth_id) {
        Some(p) => 1.0 / ((p + 2) as f64).log2(),
        None => 0.0,
    })
}

/// Stage switches for ablation runs. Everything on is the full pipeline;
/// each flag removes one ingredient so paired runs isolate its contribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct AblationFlags {
    /// Feed the user's own retrieved records into the prediction prompt.
    pub use_personal_history: bool,
    /// Feed similar users' retrieved records into the prediction prompt.
    pub use_similar_history: bool,
    /// Refine the initial prediction against the need framework before it
    /// becomes the recall query.
    pub use_refinement: bool,
    /// Rank services with the trained adapter rather than the identity.
    pub use_adapter: bool,
    /// Adapter training queries include flexible need descriptions
    /// (LLM predictions).
    pub queries_use_flexible: bool,
    /// Adapter training queries include the closed-set ground truth: with
    /// flexible queries on, predictions are revised toward the ground truth;
    /// with flexible queries off, the raw need names are the queries.
    pub queries_use_closed_set: bool,
}

impl Default for AblationFlags {
    fn default() -> Self {
        AblationFlags {
            use_personal_history: true,
            use_similar_history: true,
            use_refinement: true,
            use_adapter: true,
            queries_use_flexible: true,
            queries_use_closed_set: true,
        }
    }
}

impl AblationFlags {
    pub fn validate(&self) -> Result<()> {
        if !self.queries_use_flexible && !self.queries_use_closed_set {
            return Err(Error::Config(
                "adapter training needs at least one query source: \
                 queries_use_flexible or queries_use_closed_set"
                    .into(),
            ));
        }
        Ok(())
    }
}

/// The standard ablation grid: the full pipeline plus one row per removed
/// ingredient. Labels are stable and CLI-friendly.
pub fn standard_variants() -> Vec<(String, AblationFlags)> {
    let full = AblationFlags::default();
    vec![
        ("full".into(), full),
        (
            "no-personal-history".into(),
            AblationFlags {
                use_personal_history: false,
                ..full
            },
        ),
        (
            "no-similar-history".into(),
            AblationFlags {
                use_similar_history: false,
                ..full
            },
        ),
        (
            "no-history".into(),
            AblationFlags {
                use_personal_history: false,
                use_similar_history: false,
                ..full
            },
        ),
        (
            "no-flexible-queries".into(),
            AblationFlags {
                queries_use_flexible: false,
                ..full
            },
        ),
        (
            "no-closed-set-queries".into(),
            AblationFlags {
                queries_use_closed_set: false,
                ..full
            },
        ),
        (
            "no-adapter-tuning".into(),
            AblationFlags {
                use_adapter: false,
                ..full
            },
        ),
        (
            "no-refinement".into(),
            AblationFlags {
                use_refinement: false,
                ..full
            },
        ),
    ]
}

/// Mean metrics at one cutoff.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TopKMetrics {
    pub recall: f64,
    pub ndcg: f64,
}

/// One evaluation run: which variant, how many instances completed and
/// failed, and the mean metrics per cutoff.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub label: String,
    pub flags: AblationFlags,
    /// Test instances that completed and entered the means.
    pub instance_count: usize,
    /// Test instances dropped after their retry.
    pub failure_count: usize,
    pub per_k: BTreeMap<usize, TopKMetrics>,
}

/// Everything an evaluation run reads: trained artifacts by reference plus
/// the run knobs. Construction sites load the artifacts, so a context is
/// complete by the time it exists.
pub struct EvalContext<'a> {
    pub catalogs: &'a Catalogs,
    pub retriever: &'a Retriever<'a>,
    pub framework: &'a NeedFramework,
    pub client: &'a dyn LlmClient,
    pub embedder: &'a dyn TextEmbedder,
    /// Pool for similar-user retrieval and source of personal histories.
    pub train_records: &'a [Record],
    pub pipeline_config: PipelineConfig,
    /// Report cutoffs, each ≥ 1.
    pub ks: Vec<usize>,
}

impl EvalContext<'_> {
    fn validate(&self) -> Result<()> {
        self.pipeline_config.validate()?;
        if self.ks.is_empty() {
            return Err(Error::Config(
                "evaluation needs at least one cutoff K".into(),
            ));
        }
        if self.ks.contains(&0) {
            return Err(Error::Config(
                "evaluation cutoffs must be at least 1".into(),
            ));
        }
        Ok(())
    }

    fn pipeline(&self) -> NeedPipeline<'_> {
        NeedPipeline {
            catalogs: self.catalogs,
            retriever: self.retriever,
            framework: self.framework,
            client: self.client,
            config: self.pipeline_config.clone(),
        }
    }
}

/// Run the end-to-end loop over the test split: retrieve → predict →
/// (refine) → recall → score each record's consumed service. Failures after
/// one retry are dropped and counted; means run over the completions.
///
/// `adapter` is the trained adapter for this variant; `use_adapter: false`
/// substitutes the identity, and the history/refinement flags disable their
/// stages. The two `queries_use_*` flags do not change anything here — they
/// describe how `adapter` was trained (see
/// [`build_recall_training_queries`]) and travel in the report for
/// bookkeeping.
pub fn evaluate_pipeline(
    ctx: &EvalContext,
    adapter: &RecallAdapter,
    test_records: &[Record],
    flags: AblationFlags,
    label: &str,
) -> Result<MetricsReport> {
    flags.validate()?;
    ctx.validate()?;
    if test_records.is_empty() {
        return Err(Error::Validation("test split is empty".into()));
    }
    for (i, record) in test_records.iter().enumerate() {
        record
            .validate_against(ctx.catalogs)
            .map_err(|e| Error::Validation(format!("test record {i}: {e}")))?;
    }

    let effective = if flags.use_adapter {
        adapter.clone()
    } else {
        RecallAdapter::identity(ctx.embedder.dimension())
    };
    let index = RecallIndex::build(ctx.catalogs, ctx.embedder, &effective)?;
    let pipeline = ctx.pipeline();
    let max_k = ctx.ks.iter().copied().max().unwrap_or(1);

    // Personal histories come from the training window — at prediction time
    // the user's later consumption does not exist yet.
    let mut histories: BTreeMap<u64, Vec<Record>> = BTreeMap::new();
    if flags.use_personal_history {
        for record in ctx.train_records {
            histories
                .entry(record.user_id)
                .or_default()
                .push(record.clone());
        }
    }
    let empty: Vec<Record> = Vec::new();
    let pool: &[Record] = if flags.use_similar_history {
        ctx.train_records
    } else {
        &[]
    };

    let outcomes: Vec<Result<Vec<TopKMetrics>>> =
        fan_out(test_records.len(), ctx.pipeline_config.max_in_flight, |i| {
            let record = &test_records[i];
            let context = ContextKey::of(record);
            let history = histories.get(&record.user_id).unwrap_or(&empty);
            let prompt = pipeline.prediction_prompt(record.user_id, context, history, pool)?;
            let initial = with_one_retry(|| pipeline.predict(&prompt))?;
            let query = if flags.use_refinement {
                with_one_retry(|| pipeline.refine(&initial, context))?
            } else {
                initial
            };
            let ranked = recall_topk(&index, ctx.embedder, &query.text, max_k)?;
            ctx.ks
                .iter()
                .map(|&k| {
                    Ok(TopKMetrics {
                        recall: recall_at_k(&ranked, record.service_id, k)?,
                        ndcg: ndcg_at_k(&ranked, record.service_id, k)?,
                    })
                })
                .collect()
        });

    let mut sums: Vec<TopKMetrics> = ctx
        .ks
        .iter()
        .map(|_| TopKMetrics {
            recall: 0.0,
            ndcg: 0.0,
        })
        .collect();
    let mut instance_count = 0usize;
    let mut failure_count = 0usize;
    let mut first_error: Option<Error> = None;
    for outcome in outcomes {
        match outcome {
            Ok(per_k) => {
                instance_count += 1;
                for (sum, m) in sums.iter_mut().zip(&per_k) {
                    sum.recall += m.recall;
                    sum.ndcg += m.ndcg;
                }
            }
            Err(e) => {
                failure_count += 1;
                first_error.get_or_insert(e);
            }
        }
    }
    if instance_count == 0 {
        let cause = first_error.map(|e| e.to_string()).unwrap_or_default();
        return Err(Error::Validation(format!(
            "all {failure_count} evaluation instances failed; first error: {cause}"
        )));
    }

    let per_k = ctx
        .ks
        .iter()
        .zip(&sums)
        .map(|(&k, sum)| {
            (
                k,
                TopKMetrics {
                    recall: sum.recall / instance_count as f64,
                    ndcg: sum.ndcg / instance_count as f64,
                },
            )
        })
        .collect();
    Ok(MetricsReport {
        label: label.to_string(),
        flags,
        instance_count,
        failure_count,
        per_k,
    })
}

/// Produce (query text, consumed service) pairs for adapter training from a
/// record set, honoring the query-source and history flags:
///
/// - flexible + closed-set: predict, then revise toward the ground truth
///   (the default instruction-data path);
/// - flexible only: the unrevised initial prediction;
/// - closed-set only: the record's need name, no LLM involved.
///
/// The history flags gate the retrieval channels of the prediction prompt
/// exactly as they do at evaluation time. Records whose LLM calls fail after
/// a retry are skipped and counted.
pub fn build_recall_training_queries(
    ctx: &EvalContext,
    records: &[Record],
    flags: AblationFlags,
) -> Result<(Vec<(String, u32)>, BatchReport)> {
    flags.validate()?;
    ctx.validate()?;
    if !flags.queries_use_flexible {
        // Closed-set only: deterministic, nothing can fail per-record.
        let pairs = records
            .iter()
            .map(|r| {
                let name = ctx
                    .catalogs
                    .needs
                    .get(r.need_id as usize)
                    .ok_or_else(|| Error::field("need_id", format!("{} unknown", r.need_id)))?;
                Ok((name.clone(), r.service_id))
            })
            .collect::<Result<Vec<_>>>()?;
        return Ok((
            pairs,
            BatchReport {
                attempted: records.len(),
                failed: 0,
            },
        ));
    }

    let pipeline = ctx.pipeline();
    let by_user = user_record_indices(records);
    let pool: &[Record] = if flags.use_similar_history {
        records
    } else {
        &[]
    };
    let outcomes: Vec<Result<(String, u32)>> =
        fan_out(records.len(), ctx.pipeline_config.max_in_flight, |i| {
            let record = &records[i];
            let context = ContextKey::of(record);
            let history = if flags.use_personal_history {
                history_excluding(records, &by_user, record.user_id, i)
            } else {
                Vec::new()
            };
            let prompt = pipeline.prediction_prompt(record.user_id, context, &history, pool)?;
            let initial = with_one_retry(|| pipeline.predict(&prompt))?;
            let query = if flags.queries_use_closed_set {
                let gt_name = ctx
                    .catalogs
                    .needs
                    .get(record.need_id as usize)
                    .ok_or_else(|| {
                        Error::field("need_id", format!("{} unknown", record.need_id))
                    })?;
                with_one_retry(|| pipeline.revise(&initial, gt_name))?
            } else {
                initial
            };
            Ok((query.text, record.service_id))
        });

    let mut pairs = Vec::with_capacity(records.len());
    let mut failed = 0usize;
    for outcome in outcomes {
        match outcome {
            Ok(pair) => pairs.push(pair),
            Err(_) => failed += 1,
        }
    }
    Ok((
        pairs,
        BatchReport {
            attempted: records.len(),
            failed,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_synthetic, split_by_time, SyntheticConfig};
    use crate::graph::{build_graph, train_embeddings, EmbeddingTable, GnnTrainConfig};
    use crate::maslow::default_framework;
    use crate::orchestrate::ScriptedClient;
    use crate::recall::HashingEmbedder;

    #[test]
    fn recall_hand_values() {
        let ranked = [7, 3, 9, 1];
        assert_eq!(recall_at_k(&ranked, 7, 10).unwrap(), 1.0);
        assert_eq!(recall_at_k(&ranked, 1, 3).unwrap(), 0.0);
        assert_eq!(recall_at_k(&ranked, 1, 4).unwrap(), 1.0);
        assert_eq!(recall_at_k(&ranked, 42, 10).unwrap(), 0.0);
        let mean: f64 = (1.0 + 0.0 + 1.0) / 3.0;
        assert!((mean - 0.6667).abs() < 5e-5);
        assert!(recall_at_k(&ranked, 7, 0).is_err());
    }

    #[test]
    fn ndcg_hand_values() {
        let ranked = [7, 3, 9, 1];
        assert_eq!(ndcg_at_k(&ranked, 7, 10).unwrap(), 1.0);
        let rank3 = ndcg_at_k(&ranked, 9, 10).unwrap();
        assert!(
            (rank3 - 0.5).abs() < 1e-12,
            "1/log2(4) should be exactly 0.5, got {rank3}"
        );
        assert_eq!(ndcg_at_k(&ranked, 1, 3).unwrap(), 0.0);
        assert_eq!(ndcg_at_k(&ranked, 42, 10).unwrap(), 0.0);
        assert!(ndcg_at_k(&ranked, 7, 0).is_err());
    }

    #[test]
    fn metrics_are_monotone_in_k_and_ndcg_bounded_by_recall() {
        // A fixed ranking with the truth placed at every possible position.
        let n = 30usize;
        let ranked: Vec<u32> = (0..n as u32).collect();
        for truth in 0..n as u32 {
            let mut prev_recall = 0.0;
            let mut prev_ndcg = 0.0;
            for k in 1..=n {
                let r = recall_at_k(&ranked, truth, k).unwrap();
                let d = ndcg_at_k(&ranked, truth, k).unwrap();
                assert!(r >= prev_recall && d >= prev_ndcg, "not monotone at k={k}");
                assert!(d <= r + 1e-12, "ndcg {d} exceeds recall {r}");
                let floor = r / ((k + 1) as f64).log2();
                assert!(
                    d + 1e-12 >= floor,
                    "ndcg {d} below discount floor {floor} at k={k}"
                );
                prev_recall = r;
                prev_ndcg = d;
            }
        }
    }

    #[test]
    fn query_source_flags_require_one_source() {
        let bad = AblationFlags {
            queries_use_flexible: false,
            queries_use_closed_set: false,
            ..AblationFlags::default()
        };
        assert!(bad.validate().is_err());
        assert!(AblationFlags::default().validate().is_ok());
        assert_eq!(standard_variants().len(), 8);
        for (label, flags) in standard_variants() {
            assert!(flags.validate().is_ok(), "variant {label} invalid");
        }
    }

    /// Shared small trained fixture: synthetic corpus, embeddings, split.
    struct Fixture {
        catalogs: Catalogs,
        train: Vec<Record>,
        test: Vec<Record>,
        table: EmbeddingTable,
    }

    /// Small but deliberately easy corpus: few locations and sharp planted
    /// preferences keep each (user, context) cell dense enough that retrieved
    /// history names the right need far more often than chance.
    fn fixture() -> Fixture {
        let config = SyntheticConfig {
            user_count: 12,
            location_count: 4,
            total_days: 30,
            service_count: 120,
            records_per_user_per_day: 2.0,
            preference_sharpness: 8.0,
            seed: 7,
            ..SyntheticConfig::default()
        };
        let (catalogs, records) = generate_synthetic(&config).unwrap();
        let splits = split_by_time(&records, 24, 3, 3).unwrap();
        let graph = build_graph(&splits.train, catalogs.needs.len()).unwrap();
        let gnn = GnnTrainConfig {
            dimension: 16,
            epochs: 10,
            learning_rate: 1e-3,
            ..GnnTrainConfig::default()
        };
        let table = train_embeddings(&graph, &splits.train, &gnn).unwrap();
        Fixture {
            catalogs,
            train: splits.train,
            test: splits.test,
            table,
        }
    }

    fn context<'a>(
        f: &'a Fixture,
        retriever: &'a Retriever<'a>,
        client: &'a ScriptedClient,
        embedder: &'a HashingEmbedder,
        framework: &'a NeedFramework,
    ) -> EvalContext<'a> {
        EvalContext {
            catalogs: &f.catalogs,
            retriever,
            framework,
            client,
            embedder,
            train_records: &f.train,
            pipeline_config: PipelineConfig::default(),
            ks: DEFAULT_KS.to_vec(),
        }
    }

    #[test]
    fn end_to_end_is_deterministic_and_accounts_for_every_instance() {
        let f = fixture();
        let retriever = Retriever::new(&f.table);
        let client = ScriptedClient::new();
        let embedder = HashingEmbedder::new(128, 7).unwrap();
        let framework = default_framework();
        let ctx = context(&f, &retriever, &client, &embedder, &framework);
        let identity = RecallAdapter::identity(128);

        let report =
            evaluate_pipeline(&ctx, &identity, &f.test, AblationFlags::default(), "full").unwrap();
        let again =
            evaluate_pipeline(&ctx, &identity, &f.test, AblationFlags::default(), "full").unwrap();
        assert_eq!(report, again);
        assert_eq!(report.instance_count + report.failure_count, f.test.len());
        assert_eq!(report.failure_count, 0, "scripted provider never fails");
        assert_eq!(report.per_k.len(), 2);
        for (&k, m) in &report.per_k {
            assert!((0.0..=1.0).contains(&m.recall), "recall@{k} out of range");
            assert!((0.0..=1.0).contains(&m.ndcg), "ndcg@{k} out of range");
            assert!(m.ndcg <= m.recall + 1e-12);
        }
        assert!(report.per_k[&10].recall <= report.per_k[&20].recall + 1e-12);
        assert!(report.per_k[&10].ndcg <= report.per_k[&20].ndcg + 1e-12);
    }

    #[test]
    fn history_signal_beats_no_history_on_planted_data() {
        let f = fixture();
        let retriever = Retriever::new(&f.table);
        let client = ScriptedClient::new();
        let embedder = HashingEmbedder::new(128, 7).unwrap();
        let framework = default_framework();
        let ctx = context(&f, &retriever, &client, &embedder, &framework);
        let identity = RecallAdapter::identity(128);

        let full =
            evaluate_pipeline(&ctx, &identity, &f.test, AblationFlags::default(), "full").unwrap();
        let blind_flags = AblationFlags {
            use_personal_history: false,
            use_similar_history: false,
            ..AblationFlags::default()
        };
        let blind = evaluate_pipeline(&ctx, &identity, &f.test, blind_flags, "no-history").unwrap();
        assert!(
            full.per_k[&20].recall > blind.per_k[&20].recall,
            "planted preferences should make history informative: full {} vs blind {}",
            full.per_k[&20].recall,
            blind.per_k[&20].recall
        );
    }

    #[test]
    fn training_queries_follow_the_source_flags() {
        let f = fixture();
        let retriever = Retriever::new(&f.table);
        let client = ScriptedClient::new();
        let embedder = HashingEmbedder::new(128, 7).unwrap();
        let framework = default_framework();
        let ctx = context(&f, &retriever, &client, &embedder, &framework);
        let sample = &f.train[..20.min(f.train.len())];

        let closed_flags = AblationFlags {
            queries_use_flexible: false,
            ..AblationFlags::default()
        };
        let (closed, report) = build_recall_training_queries(&ctx, sample, closed_flags).unwrap();
        assert_eq!(report.failed, 0);
        assert_eq!(closed.len(), sample.len());
        for ((query, service), record) in closed.iter().zip(sample) {
            assert_eq!(query, &f.catalogs.needs[record.need_id as usize]);
            assert_eq!(*service, record.service_id);
        }

        // Default path: every query is revised, so it names the ground truth.
        let (revised, _) =
            build_recall_training_queries(&ctx, sample, AblationFlags::default()).unwrap();
        for ((query, _), record) in revised.iter().zip(sample) {
            let gt = f.catalogs.needs[record.need_id as usize].to_lowercase();
            assert!(
                query.to_lowercase().contains(&gt),
                "revised query {query:?} should mention {gt:?}"
            );
        }

        // Flexible-only: the raw prediction, which the scripted provider
        // phrases from retrieved records, not from the ground truth.
        let flexible_flags = AblationFlags {
            queries_use_closed_set: false,
            ..AblationFlags::default()
        };
        let (flexible, _) = build_recall_training_queries(&ctx, sample, flexible_flags).unwrap();
        assert!(flexible
            .iter()
            .all(|(q, _)| !q.contains("; overall this is about ")));
        assert_ne!(revised, flexible);
    }
}
