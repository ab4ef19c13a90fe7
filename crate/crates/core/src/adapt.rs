//! Few-shot adaptation: domain gates, retrieval augmentation from both
//! stores, gated prompt initialization and prompt-only prototype tuning.

use std::collections::HashMap;

use nalgebra::DMatrix;
use ndarray::{concatenate, Array1, Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::encoder::{adam_step, EncoderParams, OptimState};
use crate::error::{config, param, validation, Error, Result};
use crate::graph::{normalized_adjacency, Graph};
use crate::pretrain::{encode_struct, GraphInputs};
use crate::store::{MetaFilter, SemanticStore, StoreRecord, StructuralStore};
use crate::text::{cosine, Embedder};
use crate::wse::wse_nodes;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdaptConfig {
    pub lambda_text: f64,
    pub lambda_struct: f64,
    /// Semantic top-k.
    pub k: usize,
    pub tau: f64,
    /// Prompt-tuning epochs (E2).
    pub epochs: usize,
    pub patience: usize,
    pub lr: f64,
    /// Hop radius of query ego-graphs.
    pub hops: usize,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        AdaptConfig {
            lambda_text: 0.1,
            lambda_struct: 0.1,
            k: 5,
            tau: 0.5,
            epochs: 100,
            patience: 10,
            lr: 0.01,
            hops: 1,
        }
    }
}

pub fn softmax(xs: &[f64]) -> Vec<f64> {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = xs.iter().map(|x| (x - max).exp()).collect();
    let sum: f64 = e.iter().sum();
    e.into_iter().map(|v| v / sum).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateWeights {
    pub domains: Vec<String>,
    pub pi: Vec<f64>,
}

/// Softmax over source domains of `cos(z · G, τ_D)`, `G` the frozen gate
/// projection stored with the parameters.
pub fn gate(z: ArrayView1<f64>, params: &EncoderParams) -> Result<GateWeights> {
    if params.domains.is_empty() {
        return Err(config("gating needs at least one source domain token"));
    }
    if z.iter().all(|&v| v == 0.0) {
        return Err(validation("cannot gate a zero-norm instance embedding"));
    }
    let zp = z.dot(&params.gate_proj);
    let sims: Vec<f64> = params
        .weights
        .tokens
        .rows()
        .into_iter()
        .map(|t| cosine(zp.as_slice().expect("contiguous"), &t.to_vec()))
        .collect();
    Ok(GateWeights {
        domains: params.domains.clone(),
        pi: softmax(&sims),
    })
}

/// `P = Σ_k π_k τ_k`.
pub fn init_prompt(pi: &[f64], tokens: &Array2<f64>) -> Result<Array1<f64>> {
    if pi.len() != tokens.nrows() {
        return Err(validation(format!("{} gates for {} tokens", pi.len(), tokens.nrows())));
    }
    let mut p = Array1::zeros(tokens.ncols());
    for (w, t) in pi.iter().zip(tokens.rows()) {
        p.scaled_add(*w, &t);
    }
    Ok(p)
}

/// Ridge least-squares map `W` minimizing `‖E W - Y‖² + λ‖W‖²`.
pub fn fit_linear_map(e: &Array2<f64>, y: &Array2<f64>, ridge: f64) -> Result<Array2<f64>> {
    if e.nrows() != y.nrows() || e.nrows() == 0 {
        return Err(validation("least-squares fit needs matching, non-empty rows"));
    }
    let p = e.ncols();
    let gram = e.t().dot(e);
    let rhs = e.t().dot(y);
    let mut a = DMatrix::from_fn(p, p, |i, j| gram[[i, j]]);
    for i in 0..p {
        a[(i, i)] += ridge;
    }
    let b = DMatrix::from_fn(p, y.ncols(), |i, j| rhs[[i, j]]);
    let chol = a
        .cholesky()
        .ok_or_else(|| Error::Numerical("least-squares normal matrix is not positive definite".into()))?;
    let w = chol.solve(&b);
    Ok(Array2::from_shape_fn((p, y.ncols()), |(i, j)| w[(i, j)]))
}

/// Fits the frozen map from retrieval-embedding width to encoder width:
/// every semantic record of a source graph is regressed onto the text-view
/// embedding of its node.
pub fn fit_text_map(store: &SemanticStore, sources: &[GraphInputs], h_text: &[Array2<f64>], ridge: f64) -> Result<Array2<f64>> {
    let index: HashMap<&str, usize> = sources.iter().enumerate().map(|(i, s)| (s.dataset_id.as_str(), i)).collect();
    let mut rows_e = Vec::new();
    let mut rows_y = Vec::new();
    for rec in store.records() {
        if let Some(&gi) = index.get(rec.dataset_id.as_str()) {
            rows_e.push(Array1::from(rec.vec.clone()));
            rows_y.push(h_text[gi].row(rec.node).to_owned());
        }
    }
    if rows_e.is_empty() {
        return Err(config("no semantic records belong to the pre-training graphs"));
    }
    let e = ndarray::stack(Axis(0), &rows_e.iter().map(|r| r.view()).collect::<Vec<_>>()).expect("uniform dim");
    let y = ndarray::stack(Axis(0), &rows_y.iter().map(|r| r.view()).collect::<Vec<_>>()).expect("uniform dim");
    fit_linear_map(&e, &y, ridge)
}

/// Retrieved semantic evidence for one query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextRetrieval {
    /// `(record id, softmax weight)` in rank order.
    pub attention: Vec<(usize, f64)>,
    /// `Σ_u w_u · (z̃_u W_text)`; zero when nothing passed the filter.
    pub delta: Vec<f64>,
}

/// Top-k semantic search and softmax-weighted fusion of the projected hits.
pub fn retrieve_text(
    store: &SemanticStore,
    query: &[f64],
    k: usize,
    filter: &MetaFilter,
    text_map: &Array2<f64>,
) -> Result<TextRetrieval> {
    let hits = store.topk(query, k, filter)?;
    let mut delta = Array1::zeros(text_map.ncols());
    if hits.is_empty() {
        log::warn!("semantic retrieval: no record passed the filter");
        return Ok(TextRetrieval {
            attention: Vec::new(),
            delta: delta.to_vec(),
        });
    }
    let w = softmax(&hits.iter().map(|h| h.score).collect::<Vec<_>>());
    for (hit, wi) in hits.iter().zip(&w) {
        let v = ArrayView1::from(store.get(hit.id).expect("hit id").vector());
        delta.scaled_add(*wi, &v.dot(text_map));
    }
    Ok(TextRetrieval {
        attention: hits.iter().zip(w).map(|(h, w)| (h.id, w)).collect(),
        delta: delta.to_vec(),
    })
}

/// `z + λ Δ`.
pub fn augment(z: ArrayView1<f64>, delta: &[f64], lambda: f64) -> Array1<f64> {
    let mut out = z.to_owned();
    out.scaled_add(lambda, &ArrayView1::from(delta));
    out
}

/// Mean-pooled frozen structural embeddings of stored motifs, keyed by record id.
#[derive(Debug, Default)]
pub struct MotifCache {
    pooled: HashMap<usize, Array1<f64>>,
}

impl MotifCache {
    pub fn pooled(&mut self, store: &StructuralStore, id: usize, params: &EncoderParams) -> Result<&Array1<f64>> {
        if !self.pooled.contains_key(&id) {
            let rec = store.get(id).ok_or_else(|| Error::Index(format!("no structural record {id}")))?;
            let a_hat = normalized_adjacency(rec.motif.len(), &rec.motif.edges);
            let rows: Vec<ArrayView1<f64>> = rec.motif_rows.iter().map(|r| ArrayView1::from(r.as_slice())).collect();
            let x = ndarray::stack(Axis(0), &rows).map_err(|e| validation(format!("motif rows: {e}")))?;
            let h = encode_struct(params, &a_hat, &x, params.token(&rec.meta.domain_id)?)?;
            self.pooled.insert(id, h.mean_axis(Axis(0)).expect("non-empty motif"));
        }
        Ok(&self.pooled[&id])
    }
}

/// Top-1 motif per source domain for one WSE query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructRetrieval {
    /// Record id per source domain (token order); `None` when the domain had nothing.
    pub hits: Vec<Option<usize>>,
    /// Pooled motif embedding per source domain (zeros when missing).
    pub pooled: Vec<Vec<f64>>,
}

pub fn retrieve_struct(
    store: &StructuralStore,
    query_sig: &[f64],
    filter: &MetaFilter,
    params: &EncoderParams,
    cache: &mut MotifCache,
) -> Result<StructRetrieval> {
    let d = params.dims.d;
    let mut hits = Vec::with_capacity(params.domains.len());
    let mut pooled = Vec::with_capacity(params.domains.len());
    let zero_query = query_sig.iter().all(|&v| v == 0.0);
    for domain in &params.domains {
        let top = if zero_query {
            Vec::new()
        } else {
            store.topk_where(query_sig, 1, |r| r.meta.domain_id == *domain && filter.accepts(r.dataset(), r.domain_id()))?
        };
        match top.first() {
            Some(hit) => {
                hits.push(Some(hit.id));
                pooled.push(cache.pooled(store, hit.id, params)?.to_vec());
            }
            None => {
                log::warn!("structural retrieval: nothing from domain {domain}");
                hits.push(None);
                pooled.push(vec![0.0; d]);
            }
        }
    }
    Ok(StructRetrieval { hits, pooled })
}

/// `Σ_k π_k pooled_k`.
pub fn gated_struct_delta(pi: &[f64], pooled: &[Vec<f64>]) -> Vec<f64> {
    let d = pooled.first().map_or(0, Vec::len);
    let mut out = vec![0.0; d];
    for (w, p) in pi.iter().zip(pooled) {
        for (o, v) in out.iter_mut().zip(p) {
            *o += w * v;
        }
    }
    out
}

fn cos_and_grads(a: ArrayView1<f64>, b: ArrayView1<f64>) -> (f64, Array1<f64>, Array1<f64>) {
    let na = a.dot(&a).sqrt();
    let nb = b.dot(&b).sqrt();
    if na == 0.0 || nb == 0.0 {
        return (0.0, Array1::zeros(a.len()), Array1::zeros(b.len()));
    }
    let c = a.dot(&b) / (na * nb);
    let da = &b / (na * nb) - &a * (c / (na * na));
    let db = &a / (na * nb) - &b * (c / (nb * nb));
    (c, da, db)
}

fn with_prompt(z: &Array2<f64>, prompt: &Array1<f64>) -> Array2<f64> {
    let p = prompt.broadcast((z.nrows(), prompt.len())).expect("broadcast prompt");
    concatenate![Axis(1), *z, p]
}

/// Per-class means of the support rows; every class in `0..n_classes` needs support.
pub fn class_means(z: &Array2<f64>, labels: &[usize], n_classes: usize) -> Result<Array2<f64>> {
    let mut sums = Array2::zeros((n_classes, z.ncols()));
    let mut counts = vec![0usize; n_classes];
    for (row, &y) in z.rows().into_iter().zip(labels) {
        if y >= n_classes {
            return Err(validation(format!("label {y} out of range for {n_classes} classes")));
        }
        let mut s = sums.row_mut(y);
        s += &row;
        counts[y] += 1;
    }
    for (y, &c) in counts.iter().enumerate() {
        if c == 0 {
            return Err(config(format!("class {y} has no support instances")));
        }
        sums.row_mut(y).mapv_inplace(|v| v / c as f64);
    }
    Ok(sums)
}

/// `-Σ_i log softmax_y(cos([z_i‖P], [z̄_y‖P]) / τ)[y_i]` and its gradient in `P`.
pub fn finetune_loss(z: &Array2<f64>, labels: &[usize], n_classes: usize, prompt: &Array1<f64>, tau: f64) -> Result<(f64, Array1<f64>)> {
    if n_classes < 2 {
        return Err(config("fine-tuning needs at least two classes"));
    }
    if z.nrows() != labels.len() {
        return Err(validation("support rows and labels differ in length"));
    }
    if !(tau > 0.0) {
        return Err(param("temperature must be > 0"));
    }
    let d = z.ncols();
    let h = with_prompt(z, prompt);
    let protos = with_prompt(&class_means(z, labels, n_classes)?, prompt);
    let mut loss = 0.0;
    let mut grad = Array1::zeros(prompt.len());
    for (i, &yi) in labels.iter().enumerate() {
        let parts: Vec<_> = (0..n_classes).map(|y| cos_and_grads(h.row(i), protos.row(y))).collect();
        let logits: Vec<f64> = parts.iter().map(|(c, _, _)| c / tau).collect();
        let p = softmax(&logits);
        loss -= p[yi].ln();
        for (y, (_, da, db)) in parts.iter().enumerate() {
            let g = (p[y] - if y == yi { 1.0 } else { 0.0 }) / tau;
            grad.scaled_add(g, &da.slice(ndarray::s![d..]));
            grad.scaled_add(g, &db.slice(ndarray::s![d..]));
        }
    }
    Ok((loss, grad))
}

/// Nearest prototype by cosine for each row of `zq`.
pub fn classify(zq: &Array2<f64>, protos_z: &Array2<f64>, prompt: &Array1<f64>) -> Vec<usize> {
    let hq = with_prompt(zq, prompt);
    let hp = with_prompt(protos_z, prompt);
    hq.rows()
        .into_iter()
        .map(|q| {
            let mut best = (0, f64::NEG_INFINITY);
            for (y, p) in hp.rows().into_iter().enumerate() {
                let (c, _, _) = cos_and_grads(q, p);
                if c > best.1 {
                    best = (y, c);
                }
            }
            best.0
        })
        .collect()
}

/// Adam on the prompt only, full batch on the support set, with early stopping.
pub fn tune_prompt(
    z: &Array2<f64>,
    labels: &[usize],
    n_classes: usize,
    init: Array1<f64>,
    cfg: &AdaptConfig,
) -> Result<(Array1<f64>, Vec<f64>)> {
    let mut prompt = init;
    let mut best = (f64::INFINITY, prompt.clone());
    let mut trace = Vec::new();
    let mut opt = OptimState::new(prompt.len(), cfg.lr, 0.0);
    let mut stale = 0;
    for _ in 0..cfg.epochs {
        let (loss, grad) = finetune_loss(z, labels, n_classes, &prompt, cfg.tau)?;
        trace.push(loss);
        if loss < best.0 - 1e-12 {
            best = (loss, prompt.clone());
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                break;
            }
        }
        adam_step(prompt.as_slice_mut().expect("contiguous"), grad.as_slice().expect("contiguous"), &mut opt)?;
    }
    if cfg.epochs == 0 {
        return Ok((prompt, trace));
    }
    Ok((best.1, trace))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Node,
    /// Ego-graphs around labeled centers, labeled by their center.
    Graph,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Episode {
    pub task: TaskKind,
    pub m: usize,
    pub n_classes: usize,
    /// `(center node, label)`
    pub support: Vec<(usize, usize)>,
    pub query: Vec<(usize, usize)>,
}

/// Frozen-encoder view of one target graph with all retrieval done once.
#[derive(Debug, Clone)]
pub struct TargetContext {
    pub task: TaskKind,
    /// Instance embeddings (node rows or pooled ego-graphs), zero-token text view.
    pub z: Array2<f64>,
    pub gates: Vec<GateWeights>,
    pub text: Vec<TextRetrieval>,
    pub structure: Vec<StructRetrieval>,
    /// Retrieved records whose dataset or domain matches the target's.
    pub leaked_records: usize,
    pub retrieved_records: usize,
}

/// Node text plus its one-hop neighbor texts, joined with `" | "`.
pub fn query_text(g: &Graph, v: usize) -> String {
    std::iter::once(g.text(v))
        .chain(g.neighbors(v).iter().map(|&u| g.text(u)))
        .collect::<Vec<_>>()
        .join(" | ")
}

/// WSE signature of `v` inside its `hops`-hop ego-graph.
pub fn query_signature(g: &Graph, v: usize, hops: usize, alpha: f64, order: usize) -> Result<Vec<f64>> {
    let ego = g.ego_subgraph(v, hops)?;
    let adj = crate::graph::CsrMatrix::from_triplets(
        ego.len(),
        ego.len(),
        &ego.edges.iter().flat_map(|&(a, b)| [(a, b, 1.0), (b, a, 1.0)]).collect::<Vec<_>>(),
    );
    Ok(wse_nodes(&adj, &[ego.local_center()], alpha, order)?.remove(0).values)
}

pub struct TargetSpec<'a> {
    pub graph: &'a Graph,
    pub inputs: &'a GraphInputs,
    /// Leakage filter restricting search to the pre-training domains.
    pub filter: &'a MetaFilter,
    /// Ids the leakage audit checks retrieved records against.
    pub banned_dataset: Option<&'a str>,
    pub banned_domain: Option<&'a str>,
    pub alpha: f64,
    pub order: usize,
}

/// Encodes the target with the frozen text encoder and runs both retrievals
/// for every node. Graph-level instances mean-pool node embeddings over the
/// center's ego-graph.
pub fn prepare_target(
    spec: &TargetSpec<'_>,
    task: TaskKind,
    params: &EncoderParams,
    sem_store: &SemanticStore,
    str_store: &StructuralStore,
    query_embedder: &dyn Embedder,
    cfg: &AdaptConfig,
) -> Result<TargetContext> {
    let g = spec.graph;
    let text_map = params
        .text_map
        .as_ref()
        .ok_or_else(|| config("checkpoint has no text projection; pre-training must fit it"))?;
    let zero_token = Array1::zeros(params.dims.d_tau);
    let h = crate::pretrain::encode_text(params, &spec.inputs.a_hat, &spec.inputs.sem_x, zero_token.view())?;
    let n = g.node_count();
    let z = match task {
        TaskKind::Node => h,
        TaskKind::Graph => {
            let mut pooled = Array2::zeros(h.raw_dim());
            for v in 0..n {
                let ego = g.ego_subgraph(v, cfg.hops)?;
                let rows = h.select(Axis(0), &ego.nodes);
                pooled.row_mut(v).assign(&rows.mean_axis(Axis(0)).expect("ego contains center"));
            }
            pooled
        }
    };
    let mut gates = Vec::with_capacity(n);
    let mut text = Vec::with_capacity(n);
    let mut structure = Vec::with_capacity(n);
    let mut cache = MotifCache::default();
    let mut leaked = 0;
    let mut retrieved = 0;
    let audit = |dataset: &str, domain: &str| {
        spec.banned_dataset.is_some_and(|d| d == dataset) || spec.banned_domain.is_some_and(|d| d == domain)
    };
    for v in 0..n {
        gates.push(if z.row(v).iter().all(|&x| x == 0.0) {
            log::warn!("instance {v} has a zero embedding; using uniform gates");
            GateWeights {
                domains: params.domains.clone(),
                pi: vec![1.0 / params.domains.len() as f64; params.domains.len()],
            }
        } else {
            gate(z.row(v), params)?
        });
        let q = query_embedder.embed(&query_text(g, v))?;
        let t = if q.iter().all(|&x| x == 0.0) {
            TextRetrieval {
                attention: Vec::new(),
                delta: vec![0.0; params.dims.d],
            }
        } else {
            retrieve_text(sem_store, &q, cfg.k, spec.filter, text_map)?
        };
        for &(id, _) in &t.attention {
            let r = sem_store.get(id).expect("hit id");
            retrieved += 1;
            leaked += usize::from(audit(r.dataset(), r.domain_id()));
        }
        let sig = query_signature(g, v, cfg.hops, spec.alpha, spec.order)?;
        let s = retrieve_struct(str_store, &sig, spec.filter, params, &mut cache)?;
        for id in s.hits.iter().flatten() {
            let r = str_store.get(*id).expect("hit id");
            retrieved += 1;
            leaked += usize::from(audit(r.dataset(), r.domain_id()));
        }
        text.push(t);
        structure.push(s);
    }
    Ok(TargetContext {
        task,
        z,
        gates,
        text,
        structure,
        leaked_records: leaked,
        retrieved_records: retrieved,
    })
}

impl TargetContext {
    /// `z″ = z + λ_text Δtext + λ_struct Σ_k π_k pooled_k` for instance `v`.
    pub fn augmented(&self, v: usize, lambda_text: f64, lambda_struct: f64) -> Array1<f64> {
        let zp = augment(self.z.row(v), &self.text[v].delta, lambda_text);
        let ds = gated_struct_delta(&self.gates[v].pi, &self.structure[v].pooled);
        augment(zp.view(), &ds, lambda_struct)
    }

    fn stack(&self, ids: &[usize], cfg: &AdaptConfig) -> Array2<f64> {
        let rows: Vec<Array1<f64>> = ids.iter().map(|&v| self.augmented(v, cfg.lambda_text, cfg.lambda_struct)).collect();
        ndarray::stack(Axis(0), &rows.iter().map(|r| r.view()).collect::<Vec<_>>()).expect("uniform width")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionEntry {
    pub record: String,
    pub w: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainGate {
    pub domain: String,
    pub pi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryAttention {
    pub query_id: usize,
    pub text_attention: Vec<AttentionEntry>,
    pub domain_gates: Vec<DomainGate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeOutcome {
    pub predictions: Vec<usize>,
    pub accuracy: f64,
    pub prompt: Vec<f64>,
    pub loss_trace: Vec<f64>,
    pub attention: Vec<QueryAttention>,
}

pub fn record_label(store: &SemanticStore, id: usize) -> String {
    let r = store.get(id).expect("record id");
    format!("{}#{}:{}", r.dataset_id, r.node, r.chunk_index)
}

/// Augment, initialize the prompt from the mean support gate, tune it, and
/// classify queries by nearest prototype. Parameters are only read.
pub fn run_episode(
    ep: &Episode,
    ctx: &TargetContext,
    params: &EncoderParams,
    sem_store: &SemanticStore,
    cfg: &AdaptConfig,
) -> Result<EpisodeOutcome> {
    if ep.support.is_empty() {
        return Err(config("episode has no support instances"));
    }
    let s_ids: Vec<usize> = ep.support.iter().map(|s| s.0).collect();
    let s_labels: Vec<usize> = ep.support.iter().map(|s| s.1).collect();
    let zs = ctx.stack(&s_ids, cfg);
    let n_src = params.domains.len();
    let mut mean_pi = vec![0.0; n_src];
    for &v in &s_ids {
        for (m, p) in mean_pi.iter_mut().zip(&ctx.gates[v].pi) {
            *m += p / s_ids.len() as f64;
        }
    }
    let init = init_prompt(&mean_pi, &params.weights.tokens)?;
    let (prompt, loss_trace) = tune_prompt(&zs, &s_labels, ep.n_classes, init, cfg)?;
    let protos = class_means(&zs, &s_labels, ep.n_classes)?;
    let q_ids: Vec<usize> = ep.query.iter().map(|q| q.0).collect();
    let predictions = if q_ids.is_empty() {
        Vec::new()
    } else {
        classify(&ctx.stack(&q_ids, cfg), &protos, &prompt)
    };
    let correct = predictions.iter().zip(&ep.query).filter(|(p, q)| **p == q.1).count();
    let attention = q_ids
        .iter()
        .map(|&v| QueryAttention {
            query_id: v,
            text_attention: ctx.text[v]
                .attention
                .iter()
                .map(|&(id, w)| AttentionEntry {
                    record: record_label(sem_store, id),
                    w,
                })
                .collect(),
            domain_gates: ctx.gates[v]
                .domains
                .iter()
                .zip(&ctx.gates[v].pi)
                .map(|(d, p)| DomainGate {
                    domain: d.clone(),
                    pi: *p,
                })
                .collect(),
        })
        .collect();
    Ok(EpisodeOutcome {
        accuracy: if q_ids.is_empty() { 0.0 } else { correct as f64 / q_ids.len() as f64 },
        predictions,
        prompt: prompt.to_vec(),
        loss_trace,
        attention,
    })
}

/// Plain-text prompt assembled from a query and its retrieved evidence, for
/// consumption by an external language model.
pub fn prompt_dump(g: &Graph, v: usize, ctx: &TargetContext, sem_store: &SemanticStore, class_names: &[String]) -> String {
    let mut out = format!("Target node {v}: {}\nRetrieved knowledge:\n", g.text(v));
    for &(id, w) in &ctx.text[v].attention {
        let r = sem_store.get(id).expect("record id");
        out.push_str(&format!(
            "- [{:.3}] dataset {} node {} label {} ({})\n",
            w, r.meta.dataset, r.meta.node_id, r.meta.label, r.meta.field_tag
        ));
    }
    out.push_str("Domain gates:");
    for (d, p) in ctx.gates[v].domains.iter().zip(&ctx.gates[v].pi) {
        out.push_str(&format!(" {d}={p:.3}"));
    }
    out.push_str(&format!("\nCandidate classes: {}\n", class_names.join(", ")));
    out
}
