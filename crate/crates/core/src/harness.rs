//! Evaluation protocol: run configuration, LODO splits, database building,
//! episode sampling, the pre-train/adapt pipeline, reports, correlation maps
//! and sweep expansion.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::adapt::{fit_text_map, prepare_target, run_episode, AdaptConfig, Episode, TargetContext, TargetSpec, TaskKind};
use crate::encoder::{EncoderDims, EncoderParams};
use crate::error::{config, Error, Result};
use crate::graph::{bundle_json, Graph};
use crate::io::content_hash;
use crate::pretrain::{build_views, build_views_with_token, prepare_inputs, run_pretraining, GraphInputs, PretrainConfig, StructTransform, TraceRow};
use crate::store::{MetaFilter, SemanticMeta, SemanticRecord, SemanticStore, StructuralMeta, StructuralRecord, StructuralStore};
use crate::text::{chunk_document, cosine, hashing_embedder, Embedder, HashingEmbedder, PrefixedDocument};
use crate::wse::{anchor_scores, select_anchors};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    pub d0: usize,
    pub alpha: f64,
    /// WSE order `K`.
    pub order: usize,
    pub struct_transform: StructTransform,
    /// Seed of the width-`d0` node-text embedder.
    pub feature_seed: u64,
    /// Width of stored chunk embeddings and retrieval queries.
    pub retrieval_dim: usize,
    pub retrieval_seed: u64,
    /// Anchors `M` stored per source graph.
    pub anchors: usize,
    /// Ego-graph radius `h` of stored motifs.
    pub hops: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            d0: 16,
            alpha: 0.5,
            order: 8,
            struct_transform: StructTransform::Log1pStandardized,
            feature_seed: 0,
            retrieval_dim: 128,
            retrieval_seed: 1,
            anchors: 32,
            hops: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderWidths {
    pub d_tau: usize,
    pub d_h: usize,
    pub d: usize,
    pub d_p: usize,
}

impl Default for EncoderWidths {
    fn default() -> Self {
        EncoderWidths {
            d_tau: 16,
            d_h: 64,
            d: 64,
            d_p: 32,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    Dataset,
    Domain,
}

impl SplitMode {
    pub fn as_str(self) -> &'static str {
        match self {
            SplitMode::Dataset => "dataset",
            SplitMode::Domain => "domain",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub split_mode: SplitMode,
    /// Restrict to these targets; empty means every split.
    pub targets: Vec<String>,
    pub task: TaskKind,
    pub shots: Vec<usize>,
    pub episodes: usize,
    pub seeds: Vec<u64>,
    pub query_cap: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            split_mode: SplitMode::Domain,
            targets: Vec::new(),
            task: TaskKind::Node,
            shots: vec![5],
            episodes: 50,
            seeds: vec![0, 1, 2, 3, 4],
            query_cap: 200,
        }
    }
}

/// Which ablation variants to run next to the full model.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Ablations {
    pub no_align: bool,
    pub no_text_qa: bool,
    pub no_struct_qa: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Full,
    NoAlign,
    NoTextQa,
    NoStructQa,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoAlign => "no_align",
            Variant::NoTextQa => "no_text_qa",
            Variant::NoStructQa => "no_struct_qa",
        }
    }
}

impl Ablations {
    pub fn variants(&self) -> Vec<Variant> {
        let mut v = vec![Variant::Full];
        if self.no_align {
            v.push(Variant::NoAlign);
        }
        if self.no_text_qa {
            v.push(Variant::NoTextQa);
        }
        if self.no_struct_qa {
            v.push(Variant::NoStructQa);
        }
        v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub features: FeatureConfig,
    pub encoder: EncoderWidths,
    pub pretrain: PretrainConfig,
    pub adapt: AdaptConfig,
    pub eval: EvalConfig,
    pub ablation: Ablations,
    /// Ridge weight of the retrieval-to-encoder projection fit.
    pub text_map_ridge: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            features: FeatureConfig::default(),
            encoder: EncoderWidths::default(),
            pretrain: PretrainConfig::default(),
            adapt: AdaptConfig::default(),
            eval: EvalConfig::default(),
            ablation: Ablations::default(),
            text_map_ridge: 1e-3,
        }
    }
}

impl RunConfig {
    pub fn dims(&self) -> EncoderDims {
        EncoderDims {
            d0: self.features.d0,
            order: self.features.order,
            d_tau: self.encoder.d_tau,
            d_h: self.encoder.d_h,
            d: self.encoder.d,
            d_p: self.encoder.d_p,
        }
    }

    pub fn from_json(body: &str, context: &str) -> Result<RunConfig> {
        serde_json::from_str(body).map_err(|e| Error::parse(context, e))
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Applies `key=value` overrides on dotted paths. Values parse as JSON
    /// when they can and fall back to plain strings.
    pub fn with_overrides(&self, overrides: &[String]) -> Result<RunConfig> {
        let mut v = serde_json::to_value(self).expect("config serializes");
        for o in overrides {
            let (key, raw) = o
                .split_once('=')
                .ok_or_else(|| config(format!("override {o:?} is not key=value")))?;
            let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
            set_path(&mut v, key, value)?;
        }
        serde_json::from_value(v).map_err(|e| config(format!("override produced an invalid config: {e}")))
    }

    pub fn feature_embedder(&self) -> Result<HashingEmbedder> {
        hashing_embedder(self.features.d0, self.features.feature_seed)
    }

    pub fn retrieval_embedder(&self) -> Result<HashingEmbedder> {
        hashing_embedder(self.features.retrieval_dim, self.features.retrieval_seed)
    }
}

fn set_path(root: &mut Value, path: &str, value: Value) -> Result<()> {
    let mut cur = root;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| config(format!("{path}: {} is not an object", parts[..i].join("."))))?;
        if !obj.contains_key(*part) {
            return Err(config(format!("unknown config key {path:?}")));
        }
        if i + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        cur = obj.get_mut(*part).expect("checked");
    }
    Err(config("empty override key"))
}

/// One config per value of `key`.
pub fn sweep_configs(base: &RunConfig, key: &str, values: &[String]) -> Result<Vec<RunConfig>> {
    values.iter().map(|v| base.with_overrides(&[format!("{key}={v}")])).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LodoSplit {
    pub mode: SplitMode,
    pub target: String,
    /// Dataset ids used for pre-training and retrieval.
    pub sources: Vec<String>,
    /// Datasets held out.
    pub held_out: Vec<String>,
}

/// One split per dataset or one per domain.
pub fn make_splits(graphs: &[Graph], mode: SplitMode) -> Result<Vec<LodoSplit>> {
    let datasets: BTreeSet<&str> = graphs.iter().map(Graph::dataset_id).collect();
    if datasets.len() < 2 {
        return Err(config("LODO needs at least two datasets"));
    }
    if datasets.len() != graphs.len() {
        return Err(config("dataset ids must be unique"));
    }
    let key = |g: &Graph| match mode {
        SplitMode::Dataset => g.dataset_id().to_string(),
        SplitMode::Domain => g.domain_id().to_string(),
    };
    let targets: BTreeSet<String> = graphs.iter().map(key).collect();
    targets
        .into_iter()
        .map(|t| {
            let (held, src): (Vec<&Graph>, Vec<&Graph>) = graphs.iter().partition(|g| key(g) == t);
            if src.is_empty() {
                return Err(config(format!("{} split {t:?} leaves no source datasets", mode.as_str())));
            }
            Ok(LodoSplit {
                mode,
                target: t,
                sources: src.iter().map(|g| g.dataset_id().to_string()).collect(),
                held_out: held.iter().map(|g| g.dataset_id().to_string()).collect(),
            })
        })
        .collect()
}

/// Dataset splits followed by domain splits.
pub fn make_lodo_splits(graphs: &[Graph]) -> Result<Vec<LodoSplit>> {
    let mut out = make_splits(graphs, SplitMode::Dataset)?;
    out.extend(make_splits(graphs, SplitMode::Domain)?);
    Ok(out)
}

/// Seeded m-shot episodes over the labeled nodes. Queries are the remaining
/// labeled nodes, shuffled and capped.
pub fn sample_episodes(
    target: &Graph,
    task: TaskKind,
    m: usize,
    n_episodes: usize,
    seed: u64,
    query_cap: usize,
) -> Result<Vec<Episode>> {
    let labels = target
        .labels()
        .ok_or_else(|| config(format!("target {} has no labels", target.dataset_id())))?;
    let n_classes = target.num_classes();
    if m == 0 {
        return Err(config("shots m must be >= 1"));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); n_classes];
    for (v, &y) in labels.iter().enumerate() {
        by_class[y].push(v);
    }
    for (c, nodes) in by_class.iter().enumerate() {
        if nodes.len() < m + 1 {
            return Err(config(format!(
                "class {c} of {} has {} labeled nodes; {m}-shot needs at least {}",
                target.dataset_id(),
                nodes.len(),
                m + 1
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n_episodes);
    for _ in 0..n_episodes {
        let mut support = Vec::new();
        let mut query = Vec::new();
        for (c, nodes) in by_class.iter().enumerate() {
            let mut shuffled = nodes.clone();
            shuffled.shuffle(&mut rng);
            support.extend(shuffled[..m].iter().map(|&v| (v, c)));
            query.extend(shuffled[m..].iter().map(|&v| (v, c)));
        }
        query.shuffle(&mut rng);
        query.truncate(query_cap);
        out.push(Episode {
            task,
            m,
            n_classes,
            support,
            query,
        });
    }
    Ok(out)
}

fn class_name(y: usize) -> String {
    format!("class-{y}")
}

/// The prefixed document of a node. `with_label = false` renders "unknown".
pub fn node_document(g: &Graph, v: usize, with_label: bool) -> PrefixedDocument {
    let label = match (with_label, g.labels()) {
        (true, Some(l)) => class_name(l[v]),
        _ => "unknown".to_string(),
    };
    PrefixedDocument {
        dataset: g.dataset_id().to_string(),
        node_id: format!("#{v}"),
        label,
        description: format!("Graph {} from domain {}", g.dataset_id(), g.domain_id()),
        node_text: g.texts().map(|t| t[v].clone()).unwrap_or_default(),
    }
}

/// Chunks every node document and embeds each chunk.
pub fn build_semantic_store(graphs: &[&Graph], embedder: &dyn Embedder) -> Result<SemanticStore> {
    let mut store = SemanticStore::new();
    for g in graphs {
        for v in 0..g.node_count() {
            let doc = node_document(g, v, true);
            for chunk in chunk_document(&doc, v) {
                store.insert_semantic(SemanticRecord {
                    dataset_id: g.dataset_id().to_string(),
                    node: v,
                    chunk_index: chunk.chunk_index,
                    vec: embedder.embed(&chunk.text)?,
                    meta: SemanticMeta {
                        dataset: doc.dataset.clone(),
                        node_id: doc.node_id.clone(),
                        label: doc.label.clone(),
                        description: doc.description.clone(),
                        field_tag: chunk.field_tag.as_str().to_string(),
                        domain_id: g.domain_id().to_string(),
                    },
                })?;
            }
        }
    }
    Ok(store)
}

/// Top-`M` anchors per graph with their `h`-hop motifs, deduplicated by node set.
pub fn build_structural_store(graphs: &[&Graph], inputs: &[&GraphInputs], anchors: usize, hops: usize) -> Result<StructuralStore> {
    let mut store = StructuralStore::new();
    for (g, inp) in graphs.iter().zip(inputs) {
        let scores = anchor_scores(&inp.signatures);
        let score_of: BTreeMap<usize, f64> = scores.iter().map(|s| (s.node, s.score)).collect();
        for a in select_anchors(&scores, anchors)? {
            let motif = g.ego_subgraph(a, hops)?;
            let motif_rows = motif.nodes.iter().map(|&u| inp.struct_x.row(u).to_vec()).collect();
            store.insert_structural(StructuralRecord {
                dataset_id: g.dataset_id().to_string(),
                anchor: a,
                motif,
                motif_rows,
                signature: inp.signatures[a].values.clone(),
                meta: StructuralMeta {
                    hop_radius: hops,
                    anchor_score: score_of[&a],
                    domain_id: g.domain_id().to_string(),
                    dataset: g.dataset_id().to_string(),
                },
            })?;
        }
    }
    Ok(store)
}

/// Encoder inputs for every graph, in input order.
pub fn prepare_all_inputs(graphs: &[Graph], cfg: &RunConfig) -> Result<Vec<GraphInputs>> {
    let emb = cfg.feature_embedder()?;
    graphs
        .iter()
        .map(|g| prepare_inputs(g, cfg.features.d0, cfg.features.alpha, cfg.features.order, cfg.features.struct_transform, &emb))
        .collect()
}

/// Sorted unique domain ids of the given inputs.
pub fn domains_of(inputs: &[&GraphInputs]) -> Vec<String> {
    inputs
        .iter()
        .map(|i| i.domain_id.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect()
}

/// Pre-trains on `sources` from a seeded initialization and fits the frozen
/// text projection against the semantic store.
pub fn pretrain_sources(
    sources: &[&GraphInputs],
    sem_store: &SemanticStore,
    cfg: &RunConfig,
    seed: u64,
    align: f64,
) -> Result<(EncoderParams, Vec<TraceRow>)> {
    let domains = domains_of(sources);
    let init = EncoderParams::init(cfg.dims(), &domains, seed)?;
    let owned: Vec<GraphInputs> = sources.iter().map(|i| (*i).clone()).collect();
    let pcfg = PretrainConfig { seed, ..cfg.pretrain };
    let out = run_pretraining(&owned, init, &pcfg, align)?;
    let mut params = out.params;
    let h_text = owned
        .iter()
        .map(|inp| build_views(inp, &params).map(|v| v.h_text))
        .collect::<Result<Vec<_>>>()?;
    params.text_map = Some(fit_text_map(sem_store, &owned, &h_text, cfg.text_map_ridge)?);
    Ok((params, out.trace))
}

/// Search filter for a split: only source domains, never the held-out
/// datasets, and never the target domain under domain-level LODO.
pub fn split_filter(split: &LodoSplit, graphs: &[Graph]) -> MetaFilter {
    let src_domains = graphs
        .iter()
        .filter(|g| split.sources.iter().any(|s| s == g.dataset_id()))
        .map(|g| g.domain_id().to_string());
    MetaFilter {
        allowed_domains: Some(src_domains.collect()),
        excluded_domains: match split.mode {
            SplitMode::Domain => BTreeSet::from([split.target.clone()]),
            SplitMode::Dataset => BTreeSet::new(),
        },
        excluded_datasets: split.held_out.iter().cloned().collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRow {
    pub split_mode: SplitMode,
    pub target: String,
    pub task: TaskKind,
    pub m: usize,
    pub seed: u64,
    pub episode: usize,
    pub variant: Variant,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub split_mode: SplitMode,
    pub target: String,
    pub task: TaskKind,
    pub m: usize,
    pub variant: Variant,
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationDelta {
    pub target: String,
    pub m: usize,
    pub variant: Variant,
    /// `full - variant` mean accuracy.
    pub delta: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LeakageAudit {
    pub retrieved: usize,
    pub leaked: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub config: RunConfig,
    pub input_hash: String,
    pub rows: Vec<EpisodeRow>,
    pub aggregates: Vec<Aggregate>,
    pub deltas: Vec<AblationDelta>,
    pub leakage: LeakageAudit,
    /// Set when evaluation stopped early; rows hold the partial results.
    pub failure: Option<String>,
}

/// Mean and sample standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn adapt_for(variant: Variant, base: &AdaptConfig) -> AdaptConfig {
    match variant {
        Variant::NoTextQa => AdaptConfig { lambda_text: 0.0, ..*base },
        Variant::NoStructQa => AdaptConfig { lambda_struct: 0.0, ..*base },
        Variant::Full | Variant::NoAlign => *base,
    }
}

/// Everything one (split, seed, alignment) pipeline run produces.
pub struct SplitRun {
    pub params: EncoderParams,
    pub trace: Vec<TraceRow>,
    pub sem_store: SemanticStore,
    pub str_store: StructuralStore,
    pub targets: Vec<(usize, TargetContext)>,
}

fn split_members(graphs: &[Graph], split: &LodoSplit) -> Result<(Vec<usize>, Vec<usize>)> {
    let src_idx: Vec<usize> = (0..graphs.len())
        .filter(|&i| split.sources.iter().any(|s| s == graphs[i].dataset_id()))
        .collect();
    let tgt_idx: Vec<usize> = (0..graphs.len())
        .filter(|&i| split.held_out.iter().any(|s| s == graphs[i].dataset_id()))
        .collect();
    for &i in &src_idx {
        let g = &graphs[i];
        let leaks = split.held_out.iter().any(|h| h == g.dataset_id())
            || (split.mode == SplitMode::Domain && g.domain_id() == split.target);
        if leaks {
            return Err(config(format!("LODO violation: source {} matches the held-out target", g.dataset_id())));
        }
    }
    Ok((src_idx, tgt_idx))
}

/// Looks up the split of `target` under `mode`.
pub fn find_split(graphs: &[Graph], mode: SplitMode, target: &str) -> Result<LodoSplit> {
    make_splits(graphs, mode)?
        .into_iter()
        .find(|s| s.target == target)
        .ok_or_else(|| config(format!("no {} split named {target:?}", mode.as_str())))
}

/// Both stores built from the split's sources only.
pub fn build_split_db(graphs: &[Graph], inputs: &[GraphInputs], split: &LodoSplit, cfg: &RunConfig) -> Result<(SemanticStore, StructuralStore)> {
    let (src_idx, _) = split_members(graphs, split)?;
    let src_graphs: Vec<&Graph> = src_idx.iter().map(|&i| &graphs[i]).collect();
    let src_inputs: Vec<&GraphInputs> = src_idx.iter().map(|&i| &inputs[i]).collect();
    let sem = build_semantic_store(&src_graphs, &cfg.retrieval_embedder()?)?;
    let st = build_structural_store(&src_graphs, &src_inputs, cfg.features.anchors, cfg.features.hops)?;
    Ok((sem, st))
}

/// Pre-trains on the split's sources. The pipeline refuses any source that
/// matches the held-out target.
pub fn pretrain_split(
    graphs: &[Graph],
    inputs: &[GraphInputs],
    split: &LodoSplit,
    sem_store: &SemanticStore,
    cfg: &RunConfig,
    seed: u64,
    align: f64,
) -> Result<(EncoderParams, Vec<TraceRow>)> {
    let (src_idx, _) = split_members(graphs, split)?;
    let src_inputs: Vec<&GraphInputs> = src_idx.iter().map(|&i| &inputs[i]).collect();
    pretrain_sources(&src_inputs, sem_store, cfg, seed, align)
}

/// Retrieval and gating for every held-out graph of the split, keyed by graph index.
pub fn prepare_split_targets(
    graphs: &[Graph],
    inputs: &[GraphInputs],
    split: &LodoSplit,
    params: &EncoderParams,
    sem_store: &SemanticStore,
    str_store: &StructuralStore,
    cfg: &RunConfig,
) -> Result<Vec<(usize, TargetContext)>> {
    let (_, tgt_idx) = split_members(graphs, split)?;
    let filter = split_filter(split, graphs);
    let retr = cfg.retrieval_embedder()?;
    let mut targets = Vec::new();
    for i in tgt_idx {
        let spec = TargetSpec {
            graph: &graphs[i],
            inputs: &inputs[i],
            filter: &filter,
            banned_dataset: Some(graphs[i].dataset_id()),
            banned_domain: (split.mode == SplitMode::Domain).then_some(split.target.as_str()),
            alpha: cfg.features.alpha,
            order: cfg.features.order,
        };
        targets.push((i, prepare_target(&spec, cfg.eval.task, params, sem_store, str_store, &retr, &cfg.adapt)?));
    }
    Ok(targets)
}

/// Database, pre-training and target preparation for one split and seed.
pub fn run_split(graphs: &[Graph], inputs: &[GraphInputs], split: &LodoSplit, cfg: &RunConfig, seed: u64, align: f64) -> Result<SplitRun> {
    let (sem_store, str_store) = build_split_db(graphs, inputs, split, cfg)?;
    let (params, trace) = pretrain_split(graphs, inputs, split, &sem_store, cfg, seed, align)?;
    let targets = prepare_split_targets(graphs, inputs, split, &params, &sem_store, &str_store, cfg)?;
    Ok(SplitRun {
        params,
        trace,
        sem_store,
        str_store,
        targets,
    })
}

/// Full LODO evaluation of every selected split, seed, shot count and variant.
pub fn evaluate(graphs: &[Graph], cfg: &RunConfig) -> Report {
    let mut report = Report {
        config: cfg.clone(),
        input_hash: content_hash(bundle_json(graphs).as_bytes()),
        rows: Vec::new(),
        aggregates: Vec::new(),
        deltas: Vec::new(),
        leakage: LeakageAudit::default(),
        failure: None,
    };
    if let Err(e) = evaluate_into(graphs, cfg, &mut report) {
        log::error!("evaluation failed: {e}");
        report.failure = Some(e.to_string());
    }
    summarize(&mut report);
    report
}

fn evaluate_into(graphs: &[Graph], cfg: &RunConfig, report: &mut Report) -> Result<()> {
    let inputs = prepare_all_inputs(graphs, cfg)?;
    let splits: Vec<LodoSplit> = make_splits(graphs, cfg.eval.split_mode)?
        .into_iter()
        .filter(|s| cfg.eval.targets.is_empty() || cfg.eval.targets.contains(&s.target))
        .collect();
    if splits.is_empty() {
        return Err(config("no split matches the configured targets"));
    }
    let variants = cfg.ablation.variants();
    for split in &splits {
        for &seed in &cfg.eval.seeds {
            let full = run_split(graphs, &inputs, split, cfg, seed, 1.0)?;
            let no_align = if variants.contains(&Variant::NoAlign) {
                Some(run_split(graphs, &inputs, split, cfg, seed, 0.0)?)
            } else {
                None
            };
            for &variant in &variants {
                let run = if variant == Variant::NoAlign { no_align.as_ref().expect("built above") } else { &full };
                let acfg = adapt_for(variant, &cfg.adapt);
                for (gi, ctx) in &run.targets {
                    if variant == Variant::Full {
                        report.leakage.retrieved += ctx.retrieved_records;
                        report.leakage.leaked += ctx.leaked_records;
                    }
                    for &m in &cfg.eval.shots {
                        let episodes = sample_episodes(&graphs[*gi], cfg.eval.task, m, cfg.eval.episodes, seed, cfg.eval.query_cap)?;
                        for (e, ep) in episodes.iter().enumerate() {
                            let out = run_episode(ep, ctx, &run.params, &run.sem_store, &acfg)?;
                            report.rows.push(EpisodeRow {
                                split_mode: split.mode,
                                target: split.target.clone(),
                                task: cfg.eval.task,
                                m,
                                seed,
                                episode: e,
                                variant,
                                accuracy: out.accuracy,
                            });
                        }
                    }
                }
            }
        }
    }
    Ok(())
}

fn summarize(report: &mut Report) {
    let mut groups: BTreeMap<(SplitMode, String, TaskKind, usize, Variant), Vec<f64>> = BTreeMap::new();
    for r in &report.rows {
        groups
            .entry((r.split_mode, r.target.clone(), r.task, r.m, r.variant))
            .or_default()
            .push(r.accuracy);
    }
    report.aggregates = groups
        .iter()
        .map(|((mode, target, task, m, variant), accs)| {
            let (mean, std) = mean_std(accs);
            Aggregate {
                split_mode: *mode,
                target: target.clone(),
                task: *task,
                m: *m,
                variant: *variant,
                mean,
                std,
                n: accs.len(),
            }
        })
        .collect();
    report.deltas = report
        .aggregates
        .iter()
        .filter(|a| a.variant != Variant::Full)
        .filter_map(|a| {
            report
                .aggregates
                .iter()
                .find(|f| f.variant == Variant::Full && f.target == a.target && f.m == a.m && f.split_mode == a.split_mode)
                .map(|f| AblationDelta {
                    target: a.target.clone(),
                    m: a.m,
                    variant: a.variant,
                    delta: f.mean - a.mean,
                })
        })
        .collect();
}

impl Report {
    /// Mean accuracy of a variant over every row.
    pub fn overall_mean(&self, variant: Variant) -> Option<f64> {
        let accs: Vec<f64> = self.rows.iter().filter(|r| r.variant == variant).map(|r| r.accuracy).collect();
        (!accs.is_empty()).then(|| mean_std(&accs).0)
    }

    /// Per-episode rows of one variant: split_mode,target,task,m,seed,episode,accuracy.
    pub fn episodes_csv(&self, variant: Variant) -> String {
        let mut out = String::from("split_mode,target,task,m,seed,episode,accuracy\n");
        for r in self.rows.iter().filter(|r| r.variant == variant) {
            let task = serde_json::to_value(r.task).expect("enum");
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                r.split_mode.as_str(),
                r.target,
                task.as_str().expect("string"),
                r.m,
                r.seed,
                r.episode,
                r.accuracy
            )
            .expect("string write");
        }
        out
    }

    pub fn aggregate_csv(&self) -> String {
        let mut out = String::from("split_mode,target,task,m,variant,mean,std,n\n");
        for a in &self.aggregates {
            let task = serde_json::to_value(a.task).expect("enum");
            writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                a.split_mode.as_str(),
                a.target,
                task.as_str().expect("string"),
                a.m,
                a.variant.as_str(),
                a.mean,
                a.std,
                a.n
            )
            .expect("string write");
        }
        out
    }

    /// Human-readable table: one row per target, one column per (variant, m),
    /// cells as mean ± std in percent.
    pub fn render_table(&self) -> String {
        let mut cols: Vec<(Variant, usize)> = self.aggregates.iter().map(|a| (a.variant, a.m)).collect();
        cols.sort();
        cols.dedup();
        let mut targets: Vec<&str> = self.aggregates.iter().map(|a| a.target.as_str()).collect();
        targets.sort();
        targets.dedup();
        let mut out = format!("{:<20}", "target");
        for (v, m) in &cols {
            out.push_str(&format!(" {:>22}", format!("{} {m}-shot", v.as_str())));
        }
        out.push('\n');
        for t in targets {
            out.push_str(&format!("{t:<20}"));
            for (v, m) in &cols {
                let cell = self
                    .aggregates
                    .iter()
                    .find(|a| a.target == t && a.variant == *v && a.m == *m)
                    .map(|a| format!("{:.2} ± {:.2}", 100.0 * a.mean, 100.0 * a.std))
                    .unwrap_or_else(|| "-".into());
                out.push_str(&format!(" {cell:>22}"));
            }
            out.push('\n');
        }
        if let Some(f) = &self.failure {
            out.push_str(&format!("FAILED: {f}\n"));
        }
        out
    }
}

/// Dataset × dataset mean cosine between the projected text view of a node
/// in the row dataset and the projected structural view of a node in the
/// column dataset, over `samples` seeded pairs per cell. Graphs whose domain
/// has no token use a zero token.
pub fn correlation_map(inputs: &[GraphInputs], params: &EncoderParams, samples: usize, seed: u64) -> Result<(Vec<String>, Array2<f64>)> {
    let zero = ndarray::Array1::zeros(params.dims.d_tau);
    let mut proj = Vec::with_capacity(inputs.len());
    for inp in inputs {
        let views = match params.token(&inp.domain_id) {
            Ok(t) => build_views_with_token(inp, params, t)?,
            Err(_) => build_views_with_token(inp, params, zero.view())?,
        };
        proj.push((views.h_text.dot(&params.weights.proj_t), views.h_struct.dot(&params.weights.proj_s)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = inputs.len();
    let mut map = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            let (ti, _) = &proj[i];
            let (_, sj) = &proj[j];
            if ti.nrows() == 0 || sj.nrows() == 0 {
                continue;
            }
            let mut acc = 0.0;
            for _ in 0..samples.max(1) {
                let u = rng.random_range(0..ti.nrows());
                let v = rng.random_range(0..sj.nrows());
                acc += cosine(&ti.row(u).to_vec(), &sj.row(v).to_vec());
            }
            map[[i, j]] = acc / samples.max(1) as f64;
        }
    }
    Ok((inputs.iter().map(|i| i.dataset_id.clone()).collect(), map))
}

pub fn correlation_csv(labels: &[String], map: &Array2<f64>) -> String {
    let mut out = String::from("dataset");
    for l in labels {
        out.push(',');
        out.push_str(l);
    }
    out.push('\n');
    for (l, row) in labels.iter().zip(map.axis_iter(Axis(0))) {
        out.push_str(l);
        for v in row {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::synth::{generate_synthetic, SyntheticSpec};
    use crate::graph::GraphParts;

    fn tiny(dataset: &str, domain: &str) -> Graph {
        Graph::new(GraphParts {
            dataset_id: dataset.into(),
            domain_id: domain.into(),
            node_count: 2,
            edges: vec![(0, 1)],
            features: Array2::zeros((2, 1)),
            texts: None,
            labels: None,
        })
        .unwrap()
    }

    #[test]
    fn split_counts() {
        let names = [("a", "x"), ("b", "x"), ("c", "y"), ("d", "z"), ("e", "z")];
        let gs: Vec<Graph> = names.iter().map(|(d, m)| tiny(d, m)).collect();
        let splits = make_lodo_splits(&gs).unwrap();
        assert_eq!(splits.len(), 5 + 3);
        let dom_x = splits.iter().find(|s| s.mode == SplitMode::Domain && s.target == "x").unwrap();
        assert_eq!(dom_x.held_out, vec!["a", "b"]);
        assert_eq!(dom_x.sources, vec!["c", "d", "e"]);

        let same = vec![tiny("a", "x"), tiny("b", "x")];
        assert_eq!(make_splits(&same, SplitMode::Dataset).unwrap().len(), 2);
        assert!(make_splits(&same, SplitMode::Domain).is_err());
        assert!(make_splits(&same[..1], SplitMode::Dataset).is_err());
    }

    #[test]
    fn synthetic_domain_splits() {
        let gs = generate_synthetic(&SyntheticSpec { domains: 3, ..Default::default() }).unwrap();
        assert_eq!(make_splits(&gs, SplitMode::Domain).unwrap().len(), 3);
    }

    #[test]
    fn episode_sampling() {
        let g = &generate_synthetic(&SyntheticSpec { domains: 1, nodes_per_class: 4, ..Default::default() }).unwrap()[0];
        let eps = sample_episodes(g, TaskKind::Node, 1, 3, 7, 200).unwrap();
        for ep in &eps {
            assert_eq!(ep.support.len(), 3);
            assert_eq!(ep.query.len(), 9);
            let s: BTreeSet<usize> = ep.support.iter().map(|x| x.0).collect();
            assert!(ep.query.iter().all(|q| !s.contains(&q.0)));
        }
        assert_eq!(eps, sample_episodes(g, TaskKind::Node, 1, 3, 7, 200).unwrap());
        let err = sample_episodes(g, TaskKind::Node, 5, 1, 0, 200).unwrap_err();
        assert!(err.to_string().contains("class 0"), "{err}");
        assert_eq!(sample_episodes(g, TaskKind::Node, 1, 1, 0, 2).unwrap()[0].query.len(), 2);
    }

    #[test]
    fn overrides_and_sweeps() {
        let base = RunConfig::default();
        let c = base
            .with_overrides(&["adapt.lambda_text=0.3".into(), "eval.split_mode=dataset".into()])
            .unwrap();
        assert_eq!(c.adapt.lambda_text, 0.3);
        assert_eq!(c.eval.split_mode, SplitMode::Dataset);
        assert!(base.with_overrides(&["adapt.nope=1".into()]).is_err());
        assert!(base.with_overrides(&["adapt.k=\"x\"".into()]).is_err());
        let sweep = sweep_configs(&base, "adapt.k", &["1".into(), "10".into()]).unwrap();
        assert_eq!(sweep.iter().map(|c| c.adapt.k).collect::<Vec<_>>(), vec![1, 10]);
        let round = RunConfig::from_json(&base.to_json_pretty(), "mem").unwrap();
        assert_eq!(round, base);
        assert_eq!(RunConfig::from_json("{}", "mem").unwrap(), base);
    }

    #[test]
    fn mean_std_small_cases() {
        assert_eq!(mean_std(&[1.0]), (1.0, 0.0));
        let (m, s) = mean_std(&[1.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn dedup_in_structural_store() {
        // a triangle: every 1-hop ball is the whole graph
        let g = Graph::new(GraphParts {
            dataset_id: "tri".into(),
            domain_id: "x".into(),
            node_count: 3,
            edges: vec![(0, 1), (1, 2), (0, 2)],
            features: Array2::zeros((3, 1)),
            ..Default::default()
        })
        .unwrap();
        let cfg = RunConfig::default();
        let inp = prepare_all_inputs(std::slice::from_ref(&g), &RunConfig { features: FeatureConfig { d0: 8, ..cfg.features }, ..cfg.clone() })
            .unwrap()
            .remove(0);
        let store = build_structural_store(&[&g], &[&inp], 3, 1).unwrap();
        assert_eq!(store.len(), 1);
    }

    #[test]
    fn correlation_map_single_dataset() {
        let gs = generate_synthetic(&SyntheticSpec { domains: 1, nodes_per_class: 5, ..Default::default() }).unwrap();
        let cfg = RunConfig::default();
        let inputs = prepare_all_inputs(&gs, &cfg).unwrap();
        let params = EncoderParams::init(cfg.dims(), &["domain-0".into()], 0).unwrap();
        let (labels, m) = correlation_map(&inputs, &params, 20, 3).unwrap();
        assert_eq!(labels.len(), 1);
        assert_eq!(m.dim(), (1, 1));
        assert_eq!(m, correlation_map(&inputs, &params, 20, 3).unwrap().1);
    }
}
