//! Subcommand implementations. Each handler wires core stages to files on
//! disk, prints a short summary, and refreshes the run manifest on success.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use needcast_core::corpus::{
    generate_synthetic, read_records_file, split_by_time, write_records_file, Catalogs, ContextKey,
    Record,
};
use needcast_core::eval::{
    build_recall_training_queries, evaluate_pipeline, standard_variants, AblationFlags,
    EvalContext, MetricsReport,
};
use needcast_core::graph::{build_graph, train_embeddings, EmbeddingTable};
use needcast_core::maslow::{
    build_framework, default_framework, parse_framework, serialize_framework, validate_framework,
    NeedFramework,
};
use needcast_core::orchestrate::{
    export_instruction_pairs, history_excluding, user_record_indices, with_one_retry, LlmClient,
    NeedDescription, NeedPipeline, Prompt,
};
use needcast_core::recall::{
    assign_negatives, recall_topk, train_adapter, HashingEmbedder, RecallAdapter, RecallIndex,
    TextEmbedder,
};
use needcast_core::retrieve::{Retriever, ScoredRecord};
use needcast_core::servebench::{
    generate_workload, read_workload_file, simulate_serving, BenchReport, ServingCostModel,
};
use needcast_core::{Error, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;

// ---------------------------------------------------------------------------
// Artifact layout and the run manifest
// ---------------------------------------------------------------------------

/// Fixed file layout under the artifacts directory.
pub struct Layout {
    pub artifacts: PathBuf,
    pub data: PathBuf,
}

impl Layout {
    pub fn new(config: &RunConfig) -> Layout {
        Layout {
            artifacts: config.artifacts_dir.clone(),
            data: config.data_dir(),
        }
    }

    pub fn catalogs(&self) -> PathBuf {
        self.data.join("catalogs.json")
    }

    pub fn records(&self, split: &str) -> PathBuf {
        self.data.join(format!("{split}.jsonl"))
    }

    pub fn models(&self) -> PathBuf {
        self.artifacts.join("models")
    }

    pub fn embeddings(&self) -> PathBuf {
        self.models().join("embeddings.json")
    }

    pub fn adapter(&self) -> PathBuf {
        self.models().join("adapter.json")
    }

    pub fn recall_index(&self) -> PathBuf {
        self.models().join("recall_index.json")
    }

    pub fn framework_text(&self) -> PathBuf {
        self.models().join("framework.txt")
    }

    pub fn pairs(&self) -> PathBuf {
        self.artifacts.join("pairs")
    }

    pub fn reports(&self) -> PathBuf {
        self.artifacts.join("reports")
    }

    pub fn manifest(&self) -> PathBuf {
        self.artifacts.join("manifest.json")
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    Ok(())
}

/// Stages that consume the corpus refuse to run before `corpus generate`.
fn require_data(layout: &Layout) -> Result<()> {
    if !layout.catalogs().is_file() {
        return Err(Error::Validation(format!(
            "missing data dir {}: run `corpus generate` first",
            layout.data.display()
        )));
    }
    Ok(())
}

fn require_file(path: &Path, producer: &str) -> Result<()> {
    if !path.is_file() {
        return Err(Error::Validation(format!(
            "missing {}: run `{producer}` first",
            path.display()
        )));
    }
    Ok(())
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut hex = String::with_capacity(digest.len() * 2);
    for byte in digest {
        let _ = write!(hex, "{byte:02x}");
    }
    hex
}

#[derive(Serialize)]
struct Manifest<'a> {
    seed: u64,
    config: &'a RunConfig,
    /// Slash-separated path relative to the artifacts dir → SHA-256 hex.
    artifacts: BTreeMap<String, String>,
}

/// Rewrite `manifest.json`: the config snapshot, the seed, and a hash of
/// every file under the artifacts dir (the manifest itself excluded).
/// Identical inputs and seed therefore yield a byte-identical manifest.
pub fn write_manifest(config: &RunConfig, layout: &Layout) -> Result<()> {
    let mut artifacts = BTreeMap::new();
    let manifest_path = layout.manifest();
    collect_hashes(
        &layout.artifacts,
        &layout.artifacts,
        &manifest_path,
        &mut artifacts,
    )?;
    let manifest = Manifest {
        seed: config.seed,
        config,
        artifacts,
    };
    write_json(&manifest_path, &manifest)
}

fn collect_hashes(
    root: &Path,
    dir: &Path,
    skip: &Path,
    out: &mut BTreeMap<String, String>,
) -> Result<()> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)?
        .map(|entry| entry.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    entries.sort();
    for path in entries {
        if path.is_dir() {
            collect_hashes(root, &path, skip, out)?;
        } else if path != skip {
            let bytes = fs::read(&path)?;
            let rel = path.strip_prefix(root).unwrap_or(&path);
            let key: Vec<String> = rel
                .components()
                .map(|c| c.as_os_str().to_string_lossy().into_owned())
                .collect();
            out.insert(key.join("/"), sha256_hex(&bytes));
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Shared loading
// ---------------------------------------------------------------------------

/// Everything the post-training stages need, loaded from the artifacts dir.
struct Stack {
    catalogs: Catalogs,
    train: Vec<Record>,
    test: Vec<Record>,
    table: EmbeddingTable,
    framework: NeedFramework,
    client: Box<dyn LlmClient>,
    embedder: HashingEmbedder,
}

impl Stack {
    fn load(config: &RunConfig, layout: &Layout) -> Result<Stack> {
        require_data(layout)?;
        require_file(&layout.embeddings(), "gnn train")?;
        let catalogs = Catalogs::load(&layout.catalogs())?;
        let train = read_records_file(&layout.records("train"), Some(&catalogs))?;
        let test = read_records_file(&layout.records("test"), Some(&catalogs))?;
        let table = EmbeddingTable::load(&layout.embeddings())?;
        // A framework built by `framework build` takes precedence over the
        // bundled default so evaluation follows what the provider produced.
        let framework = if layout.framework_text().is_file() {
            parse_framework(&fs::read_to_string(layout.framework_text())?)?
        } else {
            default_framework()
        };
        let client = config.provider.build()?;
        let embedder = HashingEmbedder::new(config.embedder.dimension, config.embedder_seed())?;
        Ok(Stack {
            catalogs,
            train,
            test,
            table,
            framework,
            client,
            embedder,
        })
    }

    fn eval_context<'a>(
        &'a self,
        retriever: &'a Retriever<'a>,
        config: &RunConfig,
    ) -> EvalContext<'a> {
        EvalContext {
            catalogs: &self.catalogs,
            retriever,
            framework: &self.framework,
            client: self.client.as_ref(),
            embedder: &self.embedder,
            train_records: &self.train,
            pipeline_config: config.pipeline.clone(),
            ks: config.eval.ks.clone(),
        }
    }

    fn pipeline<'a>(
        &'a self,
        retriever: &'a Retriever<'a>,
        config: &RunConfig,
    ) -> NeedPipeline<'a> {
        NeedPipeline {
            catalogs: &self.catalogs,
            retriever,
            framework: &self.framework,
            client: self.client.as_ref(),
            config: config.pipeline.clone(),
        }
    }
}

/// Train the recall adapter exactly as the given flags dictate: queries from
/// the training records (channel/source gating included), seeded negatives,
/// triplet SGD.
fn train_adapter_for_flags(
    config: &RunConfig,
    ctx: &EvalContext,
    train: &[Record],
    catalogs: &Catalogs,
    embedder: &HashingEmbedder,
    flags: AblationFlags,
) -> Result<RecallAdapter> {
    let (queries, report) = build_recall_training_queries(ctx, train, flags)?;
    if report.failed > 0 {
        println!(
            "note: {} of {} training queries failed and were skipped",
            report.failed, report.attempted
        );
    }
    let triplets = assign_negatives(
        &queries,
        catalogs.services.len(),
        config.triplet.negatives_per_positive,
        config.triplet.seed,
    )?;
    train_adapter(catalogs, embedder, &triplets, &config.triplet)
}

// ---------------------------------------------------------------------------
// corpus / gnn
// ---------------------------------------------------------------------------

pub fn corpus_generate(config: &RunConfig) -> Result<()> {
    let layout = Layout::new(config);
    ensure_dir(&layout.data)?;
    let (catalogs, records) = generate_synthetic(&config.synthetic)?;
    let splits = split_by_time(
        &records,
        config.split.train_days,
        config.split.val_days,
        config.split.test_days,
    )?;
    catalogs.save(&layout.catalogs())?;
    write_records_file(&splits.train, &layout.records("train"))?;
    write_records_file(&splits.validation, &layout.records("val"))?;
    write_records_file(&splits.test, &layout.records("test"))?;
    println!(
        "corpus: {} needs, {} services, {} locations -> {}",
        catalogs.needs.len(),
        catalogs.services.len(),
        catalogs.locations.len(),
        layout.catalogs().display()
    );
    println!(
        "records: {} train / {} val / {} test under {}",
        splits.train.len(),
        splits.validation.len(),
        splits.test.len(),
        layout.data.display()
    );
    write_manifest(config, &layout)
}

pub fn gnn_train(config: &RunConfig) -> Result<()> {
    let layout = Layout::new(config);
    require_data(&layout)?;
    let catalogs = Catalogs::load(&layout.catalogs())?;
    let train = read_records_file(&layout.records("train"), Some(&catalogs))?;
    let graph = build_graph(&train, catalogs.needs.len())?;
    let table = train_embeddings(&graph, &train, &config.gnn)?;
    ensure_dir(&layout.models())?;
    table.save(&layout.embeddings())?;
    let first = table.epoch_mean_loss.first().copied().unwrap_or(f64::NAN);
    let last = table.epoch_mean_loss.last().copied().unwrap_or(f64::NAN);
    println!(
        "embeddings: {} nodes x dim {} ({} users, {} contexts, {} needs)",
        table.node_count(),
        table.dimension,
        table.users.len(),
        table.contexts.len(),
        table.need_count
    );
    println!(
        "loss: {first:.6} -> {last:.6} over {} epochs -> {}",
        table.epoch_mean_loss.len(),
        layout.embeddings().display()
    );
    write_manifest(config, &layout)
}

// ---------------------------------------------------------------------------
// retrieve / predict
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct RetrieveReport {
    user_id: u64,
    time_slot: u8,
    location_id: u32,
    personal: Vec<ScoredRecord>,
    similar: Vec<ScoredRecord>,
}

pub fn retrieve_once(
    config: &RunConfig,
    user_id: u64,
    time_slot: u8,
    location_id: u32,
    out: Option<PathBuf>,
) -> Result<()> {
    let layout = Layout::new(config);
    require_data(&layout)?;
    require_file(&layout.embeddings(), "gnn train")?;
    let catalogs = Catalogs::load(&layout.catalogs())?;
    let train = read_records_file(&layout.records("train"), Some(&catalogs))?;
    let table = EmbeddingTable::load(&layout.embeddings())?;
    let retriever = Retriever::new(&table);
    let key = ContextKey {
        time_slot,
        location_id,
    };
    let history: Vec<Record> = train
        .iter()
        .filter(|r| r.user_id == user_id)
        .cloned()
        .collect();
    let personal =
        retriever.retrieve_personal(key, &history, config.pipeline.retrieval.k_personal)?;
    let similar = retriever.retrieve_similar_users(
        user_id,
        key,
        &train,
        config.pipeline.retrieval.k_similar,
    )?;
    let report = RetrieveReport {
        user_id,
        time_slot,
        location_id,
        personal,
        similar,
    };
    ensure_dir(&layout.reports())?;
    let path = out.unwrap_or_else(|| layout.reports().join("retrieve.json"));
    write_json(&path, &report)?;
    println!(
        "retrieved {} personal + {} similar-user records -> {}",
        report.personal.len(),
        report.similar.len(),
        path.display()
    );
    write_manifest(config, &layout)
}

#[derive(Serialize)]
struct PredictReport {
    split: String,
    index: usize,
    user_id: u64,
    time_slot: u8,
    location_id: u32,
    ground_truth_need: String,
    estimated_tokens: usize,
    prompt: Prompt,
    initial: NeedDescription,
    refined: NeedDescription,
}

pub fn predict_once(
    config: &RunConfig,
    split: &str,
    index: usize,
    out: Option<PathBuf>,
) -> Result<()> {
    let layout = Layout::new(config);
    let stack = Stack::load(config, &layout)?;
    let records = match split {
        "train" => stack.train.clone(),
        "test" => stack.test.clone(),
        other => read_records_file(&layout.records(other), Some(&stack.catalogs))?,
    };
    let record = records.get(index).ok_or_else(|| {
        Error::Validation(format!(
            "index {index} out of range for the {split} split ({} records)",
            records.len()
        ))
    })?;
    let retriever = Retriever::new(&stack.table);
    let pipeline = stack.pipeline(&retriever, config);
    let key = ContextKey::of(record);
    // Personal history always comes from the training records; when the
    // record itself is one of them it must not retrieve itself.
    let history: Vec<Record> = if split == "train" {
        let by_user = user_record_indices(&stack.train);
        history_excluding(&stack.train, &by_user, record.user_id, index)
    } else {
        stack
            .train
            .iter()
            .filter(|r| r.user_id == record.user_id)
            .cloned()
            .collect()
    };
    let prompt = pipeline.prediction_prompt(record.user_id, key, &history, &stack.train)?;
    let initial = with_one_retry(|| pipeline.predict(&prompt))?;
    let refined = with_one_retry(|| pipeline.refine(&initial, key))?;
    let report = PredictReport {
        split: split.to_string(),
        index,
        user_id: record.user_id,
        time_slot: record.time_slot,
        location_id: record.location_id,
        ground_truth_need: stack.catalogs.needs[record.need_id as usize].clone(),
        estimated_tokens: prompt.token_count_estimate,
        prompt,
        initial,
        refined,
    };
    ensure_dir(&layout.reports())?;
    let path = out.unwrap_or_else(|| layout.reports().join("predict.json"));
    write_json(&path, &report)?;
    println!("initial: {}", report.initial.text);
    println!("refined: {}", report.refined.text);
    println!(
        "ground truth: {} -> {}",
        report.ground_truth_need,
        path.display()
    );
    write_manifest(config, &layout)
}

// ---------------------------------------------------------------------------
// framework
// ---------------------------------------------------------------------------

pub fn framework_validate(config: &RunConfig, file: Option<PathBuf>) -> Result<()> {
    let layout = Layout::new(config);
    require_data(&layout)?;
    let catalogs = Catalogs::load(&layout.catalogs())?;
    let framework = match &file {
        Some(path) => parse_framework(&fs::read_to_string(path)?)?,
        None => default_framework(),
    };
    let report = validate_framework(&framework, &catalogs);
    ensure_dir(&layout.reports())?;
    let path = layout.reports().join("framework.json");
    write_json(&path, &report)?;
    println!(
        "{} leaves, {} unmatched -> {}",
        report.coverage.len(),
        report.unmatched.len(),
        path.display()
    );
    if !report.passed() {
        return Err(Error::Validation(format!(
            "framework leaves no catalog service fulfills: {}",
            report.unmatched.join(", ")
        )));
    }
    write_manifest(config, &layout)
}

pub fn framework_build(config: &RunConfig) -> Result<()> {
    let layout = Layout::new(config);
    require_data(&layout)?;
    let catalogs = Catalogs::load(&layout.catalogs())?;
    let client = config.provider.build()?;
    let names: Vec<String> = catalogs.services.iter().map(|s| s.name.clone()).collect();
    let framework = build_framework(
        client.as_ref(),
        &names,
        config.pipeline.token_budget,
        Some(&catalogs),
    )?;
    ensure_dir(&layout.models())?;
    fs::write(layout.framework_text(), serialize_framework(&framework))?;
    println!(
        "framework: {} levels, {} leaves -> {}",
        framework.levels.len(),
        framework.leaves().count(),
        layout.framework_text().display()
    );
    write_manifest(config, &layout)
}

// ---------------------------------------------------------------------------
// recall
// ---------------------------------------------------------------------------

pub fn recall_train(config: &RunConfig) -> Result<()> {
    let layout = Layout::new(config);
    let stack = Stack::load(config, &layout)?;
    let retriever = Retriever::new(&stack.table);
    let ctx = stack.eval_context(&retriever, config);
    let adapter = train_adapter_for_flags(
        config,
        &ctx,
        &stack.train,
        &stack.catalogs,
        &stack.embedder,
        AblationFlags::default(),
    )?;
    let index = RecallIndex::build(&stack.catalogs, &stack.embedder, &adapter)?;
    ensure_dir(&layout.models())?;
    adapter.save(&layout.adapter())?;
    index.save(&layout.recall_index())?;
    println!(
        "adapter: dim {} -> {}",
        adapter.dimension(),
        layout.adapter().display()
    );
    println!(
        "index: {} services -> {}",
        index.len(),
        layout.recall_index().display()
    );
    write_manifest(config, &layout)
}

#[derive(Serialize)]
struct RecallQueryReport {
    query: String,
    k: usize,
    services: Vec<RecalledService>,
}

#[derive(Serialize)]
struct RecalledService {
    service_id: u32,
    name: String,
}

pub fn recall_query(config: &RunConfig, text: &str, k: usize, out: Option<PathBuf>) -> Result<()> {
    let layout = Layout::new(config);
    require_data(&layout)?;
    require_file(&layout.recall_index(), "recall train")?;
    let catalogs = Catalogs::load(&layout.catalogs())?;
    let index = RecallIndex::load(&layout.recall_index())?;
    let embedder = HashingEmbedder::new(config.embedder.dimension, config.embedder_seed())?;
    let top = recall_topk(&index, &embedder, text, k)?;
    let services = top
        .iter()
        .map(|&id| RecalledService {
            service_id: id,
            name: catalogs.services[id as usize].name.clone(),
        })
        .collect();
    let report = RecallQueryReport {
        query: text.to_string(),
        k,
        services,
    };
    ensure_dir(&layout.reports())?;
    let path = out.unwrap_or_else(|| layout.reports().join("recall_query.json"));
    write_json(&path, &report)?;
    for service in &report.services {
        println!("{:>6}  {}", service.service_id, service.name);
    }
    println!("-> {}", path.display());
    write_manifest(config, &layout)
}

// ---------------------------------------------------------------------------
// pairs
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct RecallPair<'a> {
    query: &'a str,
    positive: u32,
}

pub fn pairs_export(config: &RunConfig) -> Result<()> {
    let layout = Layout::new(config);
    let stack = Stack::load(config, &layout)?;
    let retriever = Retriever::new(&stack.table);
    ensure_dir(&layout.pairs())?;

    // Instruction pairs: (prediction prompt, ground-truth-revised need).
    let pipeline = stack.pipeline(&retriever, config);
    let instruction_path = layout.pairs().join("instruction_pairs.jsonl");
    let mut writer = std::io::BufWriter::new(fs::File::create(&instruction_path)?);
    let report = export_instruction_pairs(&pipeline, &stack.train, &mut writer)?;
    writer.flush()?;
    println!(
        "instruction pairs: {} written, {} failed -> {}",
        report.attempted - report.failed,
        report.failed,
        instruction_path.display()
    );

    // Recall pairs: (revised need text, consumed service id).
    let ctx = stack.eval_context(&retriever, config);
    let (queries, query_report) =
        build_recall_training_queries(&ctx, &stack.train, AblationFlags::default())?;
    let recall_path = layout.pairs().join("recall_pairs.jsonl");
    let mut writer = std::io::BufWriter::new(fs::File::create(&recall_path)?);
    for (query, positive) in &queries {
        serde_json::to_writer(
            &mut writer,
            &RecallPair {
                query,
                positive: *positive,
            },
        )?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    println!(
        "recall pairs: {} written, {} failed -> {}",
        queries.len(),
        query_report.failed,
        recall_path.display()
    );
    write_manifest(config, &layout)
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct EvalRunReport {
    seed: u64,
    ks: Vec<usize>,
    variants: Vec<MetricsReport>,
}

pub fn eval_run(
    config: &RunConfig,
    flags_file: Option<PathBuf>,
    out: Option<PathBuf>,
) -> Result<()> {
    let layout = Layout::new(config);
    let stack = Stack::load(config, &layout)?;
    let retriever = Retriever::new(&stack.table);
    let ctx = stack.eval_context(&retriever, config);

    let variants: Vec<(String, AblationFlags)> = match &flags_file {
        None => standard_variants(),
        Some(path) => {
            let text = fs::read_to_string(path)?;
            let flags: AblationFlags = serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("flags file {}: {e}", path.display())))?;
            let label = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "custom".to_string());
            vec![(label, flags)]
        }
    };

    // Adapters are retrained per distinct training recipe: the history flags
    // gate the prompts behind the training queries, and the source flags pick
    // which query text trains the adapter.
    let mut trained: BTreeMap<(bool, bool, bool, bool), RecallAdapter> = BTreeMap::new();
    let mut reports = Vec::new();
    for (label, flags) in variants {
        let adapter = if flags.use_adapter {
            let recipe = (
                flags.use_personal_history,
                flags.use_similar_history,
                flags.queries_use_flexible,
                flags.queries_use_closed_set,
            );
            match trained.get(&recipe) {
                Some(adapter) => adapter.clone(),
                None => {
                    let adapter = train_adapter_for_flags(
                        config,
                        &ctx,
                        &stack.train,
                        &stack.catalogs,
                        &stack.embedder,
                        flags,
                    )?;
                    trained.insert(recipe, adapter.clone());
                    adapter
                }
            }
        } else {
            RecallAdapter::identity(stack.embedder.dimension())
        };
        let report = evaluate_pipeline(&ctx, &adapter, &stack.test, flags, &label)?;
        let top_k = report.per_k.keys().max().copied().unwrap_or(0);
        let metrics = report.per_k.get(&top_k);
        println!(
            "{label}: recall@{top_k} {:.5}, ndcg@{top_k} {:.5} ({} instances, {} failed)",
            metrics.map_or(f64::NAN, |m| m.recall),
            metrics.map_or(f64::NAN, |m| m.ndcg),
            report.instance_count,
            report.failure_count
        );
        reports.push(report);
    }

    let run_report = EvalRunReport {
        seed: config.seed,
        ks: config.eval.ks.clone(),
        variants: reports,
    };
    ensure_dir(&layout.reports())?;
    let path = out.unwrap_or_else(|| layout.reports().join("eval.json"));
    write_json(&path, &run_report)?;
    println!("-> {}", path.display());
    write_manifest(config, &layout)
}

// ---------------------------------------------------------------------------
// servebench
// ---------------------------------------------------------------------------

#[derive(Serialize)]
struct ServeRunReport {
    model: ServingCostModel,
    batch_sizes: Vec<usize>,
    runs: Vec<BenchReport>,
}

pub fn servebench_run(
    config: &RunConfig,
    batch_sizes: Option<Vec<usize>>,
    cache: Option<bool>,
    workload_file: Option<PathBuf>,
    out: Option<PathBuf>,
) -> Result<()> {
    let layout = Layout::new(config);
    let mut model = config.serving.cost;
    if let Some(enabled) = cache {
        model.prefix_cache_enabled = enabled;
    }
    let workload = match &workload_file {
        Some(path) => read_workload_file(path)?,
        None => generate_workload(&config.serving.workload)?,
    };
    let batch_sizes = batch_sizes.unwrap_or_else(|| config.serving.batch_sizes.clone());
    if batch_sizes.is_empty() {
        return Err(Error::Validation("no batch sizes to simulate".into()));
    }
    let mut runs = Vec::with_capacity(batch_sizes.len());
    for &batch_size in &batch_sizes {
        let report = simulate_serving(&workload, batch_size, &model)?;
        println!(
            "batch {batch_size:>4}: qps {:.1}, p50 {:.1} ms, p99 {:.1} ms, busy {:.0} ms",
            report.qps, report.p50_latency_ms, report.p99_latency_ms, report.busy_ms
        );
        runs.push(report);
    }
    let report = ServeRunReport {
        model,
        batch_sizes,
        runs,
    };
    ensure_dir(&layout.reports())?;
    let path = out.unwrap_or_else(|| layout.reports().join("servebench.json"));
    write_json(&path, &report)?;
    println!("-> {}", path.display());
    write_manifest(config, &layout)
}
