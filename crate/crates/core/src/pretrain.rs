//! Cross-view information-bottleneck pre-training: per-graph view inputs,
//! InfoNCE over mixed-domain batches, Gaussian KL compression and the token
//! regularizer, with analytic gradients and an early-stopped training loop.

use std::collections::BTreeMap;

use ndarray::{s, Array1, Array2, ArrayView1, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoder::{
    adam_step, attach_domain_token, gnn_backward, gnn_forward, gnn_forward_cached, normalize_rows,
    normalize_rows_backward, EncoderParams, OptimState, Weights,
};
use crate::error::{numerical, param, validation, Result};
use crate::graph::{CsrMatrix, Graph};
use crate::text::{fuse_features, pca_align, Embedder, PcaModel};
use crate::wse::{signature_matrix, wse_all, WseSignature};

pub const LOGVAR_CLAMP: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StructTransform {
    /// `ln(1 + x)` on each damped count; tames the geometric growth in `k`.
    Log1p,
    /// `Log1p` followed by per-graph column standardization.
    Log1pStandardized,
    Raw,
}

/// Encoder-ready inputs of one graph.
#[derive(Debug, Clone)]
pub struct GraphInputs {
    pub dataset_id: String,
    pub domain_id: String,
    pub a_hat: CsrMatrix,
    /// `[x_aligned || b]`, width `2 * d0`.
    pub sem_x: Array2<f64>,
    /// Transformed WSE rows, width `K`.
    pub struct_x: Array2<f64>,
    /// Untransformed signatures, as stored and searched.
    pub signatures: Vec<WseSignature>,
    pub pca: Option<PcaModel>,
}

impl GraphInputs {
    pub fn node_count(&self) -> usize {
        self.sem_x.nrows()
    }
}

/// Structural-view input rows from a `[N x K]` signature matrix.
pub fn transform_signatures(sig: &Array2<f64>, transform: StructTransform) -> Array2<f64> {
    match transform {
        StructTransform::Raw => sig.clone(),
        StructTransform::Log1p => sig.mapv(f64::ln_1p),
        StructTransform::Log1pStandardized => {
            let mut x = sig.mapv(f64::ln_1p);
            if x.nrows() == 0 {
                return x;
            }
            let mean = x.mean_axis(Axis(0)).expect("non-empty");
            let std = x.std_axis(Axis(0), 0.0);
            for mut row in x.rows_mut() {
                for j in 0..row.len() {
                    row[j] = if std[j] > 1e-12 { (row[j] - mean[j]) / std[j] } else { 0.0 };
                }
            }
            x
        }
    }
}

/// Per-graph PCA of the raw attributes to `d0` (zero-padding narrow inputs and
/// tiny graphs), node-text embeddings at width `d0`, and WSE rows.
pub fn prepare_inputs(
    g: &Graph,
    d0: usize,
    alpha: f64,
    order: usize,
    transform: StructTransform,
    embedder: &dyn Embedder,
) -> Result<GraphInputs> {
    if embedder.dim() != d0 {
        return Err(validation(format!(
            "feature embedder dim {} must equal d0 = {d0}",
            embedder.dim()
        )));
    }
    let n = g.node_count();
    let width = g.feat_dim().max(d0);
    let mut padded = Array2::zeros((n, width));
    padded.slice_mut(s![.., ..g.feat_dim()]).assign(g.features());
    let k = d0.min(n);
    let mut aligned = Array2::zeros((n, d0));
    let mut pca = None;
    if n >= 2 {
        let (proj, model) = pca_align(&padded, k)?;
        aligned.slice_mut(s![.., ..k]).assign(&proj);
        pca = Some(model);
    }
    let mut sem = Array2::zeros((n, d0));
    if g.texts().is_some() {
        for v in 0..n {
            let e = embedder.embed(g.text(v))?;
            sem.row_mut(v).assign(&Array1::from(e));
        }
    }
    let sem_x = fuse_features(&aligned, &sem)?;
    let signatures = wse_all(g, alpha, order)?;
    let struct_x = transform_signatures(&signature_matrix(&signatures), transform);
    Ok(GraphInputs {
        dataset_id: g.dataset_id().to_string(),
        domain_id: g.domain_id().to_string(),
        a_hat: g.normalized_adjacency(),
        sem_x,
        struct_x,
        signatures,
        pca,
    })
}

/// Per-node embeddings of both views.
#[derive(Debug, Clone, PartialEq)]
pub struct Views {
    pub h_text: Array2<f64>,
    pub h_struct: Array2<f64>,
}

pub fn encode_text(params: &EncoderParams, a_hat: &CsrMatrix, sem_x: &Array2<f64>, token: ArrayView1<f64>) -> Result<Array2<f64>> {
    let x = attach_domain_token(sem_x, token);
    gnn_forward(a_hat, &x, &params.weights.text_w1, &params.weights.text_w2)
}

pub fn encode_struct(params: &EncoderParams, a_hat: &CsrMatrix, struct_x: &Array2<f64>, token: ArrayView1<f64>) -> Result<Array2<f64>> {
    let x = attach_domain_token(struct_x, token);
    gnn_forward(a_hat, &x, &params.weights.struct_w1, &params.weights.struct_w2)
}

/// Both views with the graph's own domain token.
pub fn build_views(inputs: &GraphInputs, params: &EncoderParams) -> Result<Views> {
    let token = params.token(&inputs.domain_id)?;
    build_views_with_token(inputs, params, token)
}

pub fn build_views_with_token(inputs: &GraphInputs, params: &EncoderParams, token: ArrayView1<f64>) -> Result<Views> {
    Ok(Views {
        h_text: encode_text(params, &inputs.a_hat, &inputs.sem_x, token)?,
        h_struct: encode_struct(params, &inputs.a_hat, &inputs.struct_x, token)?,
    })
}

/// Row-wise log-softmax of `logits`.
fn log_softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        row.mapv_inplace(|v| v - lse);
    }
    out
}

struct InfoNce {
    /// Per-row `-log softmax` of the positive.
    per_node: Array1<f64>,
    log_probs: Array2<f64>,
}

fn infonce_parts(zt: &Array2<f64>, zs: &Array2<f64>, tau: f64) -> (InfoNce, [(Array2<f64>, Array1<f64>); 2]) {
    let (ut, nt) = normalize_rows(zt);
    let (us, ns) = normalize_rows(zs);
    let sims = ut.dot(&us.t());
    let log_probs = log_softmax_rows(&(&sims / tau));
    let per_node = Array1::from_shape_fn(sims.nrows(), |i| -log_probs[[i, i]]);
    (InfoNce { per_node, log_probs }, [(ut, nt), (us, ns)])
}

/// `-(1/|B|) Σ_v log softmax_u(cos(zt_v, zs_u) / τ)[v]`; zero for a single row.
pub fn infonce_relevance(zt: &Array2<f64>, zs: &Array2<f64>, tau: f64) -> Result<f64> {
    if zt.dim() != zs.dim() {
        return Err(validation(format!("view shapes differ: {:?} vs {:?}", zt.dim(), zs.dim())));
    }
    if !(tau > 0.0) {
        return Err(param(format!("temperature {tau} must be > 0")));
    }
    if zt.iter().chain(zs.iter()).any(|v| !v.is_finite()) {
        return Err(numerical("non-finite embedding in InfoNCE batch"));
    }
    if zt.nrows() == 0 {
        return Ok(0.0);
    }
    let (parts, _) = infonce_parts(zt, zs, tau);
    Ok(parts.per_node.mean().unwrap_or(0.0))
}

/// Share of rows whose positive is the top-1 cross-view similarity.
pub fn in_batch_top1(zt: &Array2<f64>, zs: &Array2<f64>) -> f64 {
    let (ut, _) = normalize_rows(zt);
    let (us, _) = normalize_rows(zs);
    let sims = ut.dot(&us.t());
    let hits = sims
        .rows()
        .into_iter()
        .enumerate()
        .filter(|(i, row)| row.iter().enumerate().all(|(j, &v)| j == *i || v < row[*i]))
        .count();
    hits as f64 / zt.nrows().max(1) as f64
}

/// Per-row `KL(N(μ, e^lv) ‖ N(0, I))` with `lv` clamped to `[-10, 10]`.
pub fn gaussian_kl(mu: &Array2<f64>, logvar: &Array2<f64>) -> Array1<f64> {
    let mut out = Array1::zeros(mu.nrows());
    for i in 0..mu.nrows() {
        out[i] = 0.5
            * mu.row(i)
                .iter()
                .zip(logvar.row(i))
                .map(|(m, lv)| {
                    let lv = lv.clamp(-LOGVAR_CLAMP, LOGVAR_CLAMP);
                    m * m + lv.exp() - lv - 1.0
                })
                .sum::<f64>();
    }
    out
}

/// Mean over rows of the KL of the Gaussian produced by heads `(w_mu, w_lv)`.
pub fn compression_penalty(h: &Array2<f64>, w_mu: &Array2<f64>, w_lv: &Array2<f64>) -> f64 {
    if h.nrows() == 0 {
        return 0.0;
    }
    gaussian_kl(&h.dot(w_mu), &h.dot(w_lv)).mean().unwrap_or(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainConfig {
    pub beta: f64,
    pub gamma: f64,
    pub tau: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub patience: usize,
    /// Window of the moving average watched by early stopping.
    pub smoothing: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            beta: 0.01,
            gamma: 0.01,
            tau: 0.2,
            batch_size: 64,
            epochs: 200,
            patience: 50,
            smoothing: 10,
            lr: 0.005,
            weight_decay: 0.0,
            seed: 0,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) {
            return Err(param(format!("tau = {} must be > 0", self.tau)));
        }
        if !(self.beta >= 0.0) || !(self.gamma >= 0.0) {
            return Err(param("beta and gamma must be >= 0"));
        }
        if self.batch_size == 0 || self.smoothing == 0 {
            return Err(param("batch_size and smoothing must be >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    /// Plain batch mean of the per-node InfoNCE terms.
    pub infonce: f64,
    /// Batch mean of the summed two-view KL.
    pub compression: f64,
    pub token_reg: f64,
}

/// Node reference inside a list of graphs: `(graph index, node)`.
pub type NodeRef = (usize, usize);

/// Loss and gradients for one batch:
/// `align * Σ_D mean_{v∈D} InfoNCE_v + β Σ_D mean_{v∈D} (KL_t + KL_s)_v + γ Σ_D ‖τ_D‖²`.
/// `align = 0` drops the cross-view term (used by the no-alignment ablation).
pub fn pretrain_loss(
    batch: &[NodeRef],
    inputs: &[GraphInputs],
    params: &EncoderParams,
    cfg: &PretrainConfig,
    align: f64,
) -> Result<(LossBreakdown, Weights)> {
    let w = &params.weights;
    let d_tau = params.dims.d_tau;
    let mut grads = w.zeros_like();
    if batch.is_empty() {
        return Err(validation("empty pre-training batch"));
    }

    // forward each graph touched by the batch
    let mut used: Vec<usize> = batch.iter().map(|&(g, _)| g).collect();
    used.sort_unstable();
    used.dedup();
    struct Fwd {
        token_row: usize,
        text: (Array2<f64>, crate::encoder::GcnCache),
        structure: (Array2<f64>, crate::encoder::GcnCache),
    }
    let mut fwd: BTreeMap<usize, Fwd> = BTreeMap::new();
    for &gi in &used {
        let inp = inputs.get(gi).ok_or_else(|| validation(format!("batch refers to graph {gi}")))?;
        let token_row = params.domain_index(&inp.domain_id)?;
        let token = w.tokens.row(token_row);
        let xt = attach_domain_token(&inp.sem_x, token);
        let xs = attach_domain_token(&inp.struct_x, token);
        fwd.insert(
            gi,
            Fwd {
                token_row,
                text: gnn_forward_cached(&inp.a_hat, &xt, &w.text_w1, &w.text_w2)?,
                structure: gnn_forward_cached(&inp.a_hat, &xs, &w.struct_w1, &w.struct_w2)?,
            },
        );
    }

    let b = batch.len();
    let d = params.dims.d;
    let mut ht = Array2::zeros((b, d));
    let mut hs = Array2::zeros((b, d));
    for (i, &(gi, v)) in batch.iter().enumerate() {
        let f = &fwd[&gi];
        if v >= f.text.0.nrows() {
            return Err(validation(format!("batch node {v} out of range for graph {gi}")));
        }
        ht.row_mut(i).assign(&f.text.0.row(v));
        hs.row_mut(i).assign(&f.structure.0.row(v));
    }

    // per-node weight 1/|batch ∩ D|
    let mut per_domain: BTreeMap<usize, usize> = BTreeMap::new();
    for &(gi, _) in batch {
        *per_domain.entry(fwd[&gi].token_row).or_default() += 1;
    }
    let c: Array1<f64> = batch
        .iter()
        .map(|&(gi, _)| 1.0 / per_domain[&fwd[&gi].token_row] as f64)
        .collect();

    // cross-view InfoNCE
    let zt = ht.dot(&w.proj_t);
    let zs = hs.dot(&w.proj_s);
    if zt.iter().chain(zs.iter()).any(|v| !v.is_finite()) {
        return Err(numerical("non-finite projected embedding"));
    }
    let (nce, [(ut, nt), (us, ns)]) = infonce_parts(&zt, &zs, cfg.tau);
    let infonce_weighted: f64 = nce.per_node.iter().zip(&c).map(|(l, ci)| l * ci).sum();
    let mut d_logits = nce.log_probs.mapv(f64::exp);
    for i in 0..b {
        d_logits[[i, i]] -= 1.0;
        let scale = align * c[i];
        d_logits.row_mut(i).mapv_inplace(|v| v * scale);
    }
    let d_sims = d_logits / cfg.tau;
    let d_ut = d_sims.dot(&us);
    let d_us = d_sims.t().dot(&ut);
    let d_zt = normalize_rows_backward(&ut, &nt, &d_ut);
    let d_zs = normalize_rows_backward(&us, &ns, &d_us);
    grads.proj_t = ht.t().dot(&d_zt);
    grads.proj_s = hs.t().dot(&d_zs);
    let mut d_ht = d_zt.dot(&w.proj_t.t());
    let mut d_hs = d_zs.dot(&w.proj_s.t());

    // compression
    let mut kl_total = Array1::zeros(b);
    for (h, w_mu, w_lv, g_mu, g_lv, d_h) in [
        (&ht, &w.vib_t_mu, &w.vib_t_lv, &mut grads.vib_t_mu, &mut grads.vib_t_lv, &mut d_ht),
        (&hs, &w.vib_s_mu, &w.vib_s_lv, &mut grads.vib_s_mu, &mut grads.vib_s_lv, &mut d_hs),
    ] {
        let mu = h.dot(w_mu);
        let lv_raw = h.dot(w_lv);
        kl_total += &gaussian_kl(&mu, &lv_raw);
        let mut d_mu = mu.clone();
        let mut d_lv = lv_raw.mapv(|l| {
            if l > -LOGVAR_CLAMP && l < LOGVAR_CLAMP {
                0.5 * (l.exp() - 1.0)
            } else {
                0.0
            }
        });
        for i in 0..b {
            let scale = cfg.beta * c[i];
            d_mu.row_mut(i).mapv_inplace(|v| v * scale);
            d_lv.row_mut(i).mapv_inplace(|v| v * scale);
        }
        *g_mu = h.t().dot(&d_mu);
        *g_lv = h.t().dot(&d_lv);
        *d_h += &d_mu.dot(&w_mu.t());
        *d_h += &d_lv.dot(&w_lv.t());
    }
    let compression_weighted: f64 = kl_total.iter().zip(&c).map(|(k, ci)| k * ci).sum();

    // back through the encoders, graph by graph
    for (&gi, f) in &fwd {
        let inp = &inputs[gi];
        let n = inp.node_count();
        let mut dt = Array2::zeros((n, d));
        let mut ds = Array2::zeros((n, d));
        for (i, &(g2, v)) in batch.iter().enumerate() {
            if g2 == gi {
                let mut r = dt.row_mut(v);
                r += &d_ht.row(i);
                let mut r = ds.row_mut(v);
                r += &d_hs.row(i);
            }
        }
        let gt = gnn_backward(&inp.a_hat, &f.text.1, &w.text_w1, &w.text_w2, &dt);
        let gs = gnn_backward(&inp.a_hat, &f.structure.1, &w.struct_w1, &w.struct_w2, &ds);
        grads.text_w1 += &gt.w1;
        grads.text_w2 += &gt.w2;
        grads.struct_w1 += &gs.w1;
        grads.struct_w2 += &gs.w2;
        if d_tau > 0 {
            let off_t = inp.sem_x.ncols();
            let off_s = inp.struct_x.ncols();
            let mut row = grads.tokens.row_mut(f.token_row);
            row += &gt.x.slice(s![.., off_t..]).sum_axis(Axis(0));
            row += &gs.x.slice(s![.., off_s..]).sum_axis(Axis(0));
        }
    }

    // token regularizer over every domain token
    let token_sq: f64 = w.tokens.iter().map(|t| t * t).sum();
    grads.tokens.scaled_add(2.0 * cfg.gamma, &w.tokens);

    let breakdown = LossBreakdown {
        total: align * infonce_weighted + cfg.beta * compression_weighted + cfg.gamma * token_sq,
        infonce: nce.per_node.mean().unwrap_or(0.0),
        compression: kl_total.mean().unwrap_or(0.0),
        token_reg: cfg.gamma * token_sq,
    };
    if !breakdown.total.is_finite() {
        return Err(numerical("non-finite pre-training loss"));
    }
    Ok((breakdown, grads))
}

/// Shuffles every `(graph, node)` pair together and cuts consecutive batches,
/// so each batch mixes domains in proportion to their node counts.
pub fn mixed_batches(node_counts: &[usize], batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<NodeRef>> {
    let mut all: Vec<NodeRef> = node_counts
        .iter()
        .enumerate()
        .flat_map(|(g, &n)| (0..n).map(move |v| (g, v)))
        .collect();
    all.shuffle(rng);
    all.chunks(batch_size.max(1)).map(<[NodeRef]>::to_vec).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub epoch: usize,
    pub total: f64,
    pub infonce: f64,
    pub compression: f64,
    pub token_reg: f64,
}

pub fn trace_csv(trace: &[TraceRow]) -> String {
    let mut out = String::from("epoch,total,infonce,compression,token_reg\n");
    for r in trace {
        out.push_str(&format!("{},{},{},{},{}\n", r.epoch, r.total, r.infonce, r.compression, r.token_reg));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Completed,
    EarlyStopped,
    Diverged,
}

#[derive(Debug, Clone)]
pub struct PretrainOutcome {
    pub params: EncoderParams,
    /// Row 0 evaluates the initial parameters; row `e` averages epoch `e`.
    pub trace: Vec<TraceRow>,
    pub stop: StopReason,
}

fn mean_breakdown(epoch: usize, parts: &[LossBreakdown]) -> TraceRow {
    let n = parts.len().max(1) as f64;
    TraceRow {
        epoch,
        total: parts.iter().map(|p| p.total).sum::<f64>() / n,
        infonce: parts.iter().map(|p| p.infonce).sum::<f64>() / n,
        compression: parts.iter().map(|p| p.compression).sum::<f64>() / n,
        token_reg: parts.iter().map(|p| p.token_reg).sum::<f64>() / n,
    }
}

/// Loss over fixed batches without updating anything.
pub fn evaluate_batches(
    batches: &[Vec<NodeRef>],
    inputs: &[GraphInputs],
    params: &EncoderParams,
    cfg: &PretrainConfig,
    align: f64,
) -> Result<LossBreakdown> {
    let parts = batches
        .iter()
        .map(|b| pretrain_loss(b, inputs, params, cfg, align).map(|(l, _)| l))
        .collect::<Result<Vec<_>>>()?;
    let row = mean_breakdown(0, &parts);
    Ok(LossBreakdown {
        total: row.total,
        infonce: row.infonce,
        compression: row.compression,
        token_reg: row.token_reg,
    })
}

/// Projected view embeddings `(g_t(h_text), g_s(h_struct))` of the batch rows.
pub fn projected_batch(batch: &[NodeRef], inputs: &[GraphInputs], params: &EncoderParams) -> Result<(Array2<f64>, Array2<f64>)> {
    let mut cache: BTreeMap<usize, Views> = BTreeMap::new();
    let d = params.dims.d;
    let mut ht = Array2::zeros((batch.len(), d));
    let mut hs = Array2::zeros((batch.len(), d));
    for (i, &(gi, v)) in batch.iter().enumerate() {
        if !cache.contains_key(&gi) {
            cache.insert(gi, build_views(&inputs[gi], params)?);
        }
        let views = &cache[&gi];
        ht.row_mut(i).assign(&views.h_text.row(v));
        hs.row_mut(i).assign(&views.h_struct.row(v));
    }
    Ok((ht.dot(&params.weights.proj_t), hs.dot(&params.weights.proj_s)))
}

/// Mini-batch AdamW on [`pretrain_loss`]. Stops early when the moving average
/// of the epoch loss has not improved for `patience` epochs.
pub fn run_pretraining(inputs: &[GraphInputs], init: EncoderParams, cfg: &PretrainConfig, align: f64) -> Result<PretrainOutcome> {
    cfg.validate()?;
    for inp in inputs {
        init.domain_index(&inp.domain_id)?;
    }
    let mut params = init;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let counts: Vec<usize> = inputs.iter().map(GraphInputs::node_count).collect();
    let first = mixed_batches(&counts, cfg.batch_size, &mut rng.clone());
    let initial = evaluate_batches(&first, inputs, &params, cfg, align)?;
    let mut trace = vec![TraceRow {
        epoch: 0,
        total: initial.total,
        infonce: initial.infonce,
        compression: initial.compression,
        token_reg: initial.token_reg,
    }];
    let mut opt = OptimState::new(params.weights.len(), cfg.lr, cfg.weight_decay);
    let mut flat = params.weights.flatten();
    let mut best_avg = f64::INFINITY;
    let mut since_best = 0usize;
    for epoch in 1..=cfg.epochs {
        let batches = mixed_batches(&counts, cfg.batch_size, &mut rng);
        let mut parts = Vec::with_capacity(batches.len());
        for batch in &batches {
            let step = pretrain_loss(batch, inputs, &params, cfg, align).and_then(|(loss, grads)| {
                let mut next = flat.clone();
                let mut next_opt = opt.clone();
                adam_step(&mut next, &grads.flatten(), &mut next_opt)?;
                if next.iter().any(|v| !v.is_finite()) {
                    return Err(numerical("parameters became non-finite"));
                }
                Ok((loss, next, next_opt))
            });
            match step {
                Ok((loss, next, next_opt)) => {
                    parts.push(loss);
                    flat = next;
                    opt = next_opt;
                    params.weights.assign_flat(&flat);
                }
                Err(e) => {
                    log::error!("pre-training diverged at epoch {epoch}: {e}; keeping last good parameters");
                    return Ok(PretrainOutcome {
                        params,
                        trace,
                        stop: StopReason::Diverged,
                    });
                }
            }
        }
        trace.push(mean_breakdown(epoch, &parts));
        log::debug!("epoch {epoch}: {:?}", trace.last());

        let window = cfg.smoothing.min(epoch);
        let avg = trace[trace.len() - window..].iter().map(|r| r.total).sum::<f64>() / window as f64;
        if avg < best_avg {
            best_avg = avg;
            since_best = 0;
        } else {
            since_best += 1;
            if cfg.patience > 0 && since_best >= cfg.patience {
                log::info!("early stop at epoch {epoch}");
                return Ok(PretrainOutcome {
                    params,
                    trace,
                    stop: StopReason::EarlyStopped,
                });
            }
        }
    }
    Ok(PretrainOutcome {
        params,
        trace,
        stop: StopReason::Completed,
    })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::encoder::{grad_check, EncoderDims};
    use crate::graph::GraphParts;
    use crate::text::hashing_embedder;
    use ndarray::array;
    use rand::Rng;

    /// Two 6-node graphs in different domains with random features and texts.
    pub(crate) fn toy_inputs(dims: &EncoderDims) -> Vec<GraphInputs> {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let emb = hashing_embedder(dims.d0, 0).unwrap();
        let words = ["alpha", "beta", "gamma", "delta", "omega", "sigma"];
        let specs: [(&str, Vec<(usize, usize)>); 2] = [
            ("dom-a", vec![(0, 1), (1, 2), (2, 0), (2, 3), (3, 4), (4, 5)]),
            ("dom-b", vec![(0, 1), (0, 2), (0, 3), (3, 4), (4, 5), (5, 3)]),
        ];
        specs
            .into_iter()
            .enumerate()
            .map(|(k, (dom, edges))| {
                let g = Graph::new(GraphParts {
                    dataset_id: format!("toy-{k}"),
                    domain_id: dom.into(),
                    node_count: 6,
                    edges,
                    features: Array2::from_shape_fn((6, 5), |_| rng.random_range(-1.0..1.0)),
                    texts: Some((0..6).map(|v| format!("{} {}", words[v], words[(v + k) % 6])).collect()),
                    labels: None,
                })
                .unwrap();
                prepare_inputs(&g, dims.d0, 0.5, dims.order, StructTransform::Log1p, &emb).unwrap()
            })
            .collect()
    }

    pub(crate) fn toy_dims() -> EncoderDims {
        EncoderDims {
            d0: 8,
            order: 4,
            d_tau: 3,
            d_h: 6,
            d: 5,
            d_p: 4,
        }
    }

    #[test]
    fn single_row_infonce_is_zero() {
        let z = array![[0.3, -1.0]];
        assert_eq!(infonce_relevance(&z, &array![[2.0, 0.5]], 0.1).unwrap(), 0.0);
    }

    #[test]
    fn uniform_pair_is_log_two() {
        let zt = array![[1.0, 0.0], [1.0, 0.0]];
        let zs = array![[0.0, 1.0], [0.0, 1.0]];
        let l = infonce_relevance(&zt, &zs, 0.5).unwrap();
        assert!((l - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn aligned_orthogonal_pairs_go_to_zero() {
        let z = array![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        assert!(infonce_relevance(&z, &z, 0.01).unwrap() < 1e-12);
        assert!(infonce_relevance(&z, &array![[f64::NAN, 0.0, 0.0], [0.0; 3], [0.0; 3]], 0.1).is_err());
    }

    #[test]
    fn kl_closed_forms() {
        let mu = array![[0.0, 0.0], [1.0, -2.0]];
        let lv = Array2::zeros((2, 2));
        let kl = gaussian_kl(&mu, &lv);
        assert_eq!(kl[0], 0.0);
        assert!((kl[1] - 2.5).abs() < 1e-15);
    }

    #[test]
    fn zero_weights_reduce_to_infonce() {
        let dims = toy_dims();
        let inputs = toy_inputs(&dims);
        let params = EncoderParams::init(dims, &["dom-a".into(), "dom-b".into()], 2).unwrap();
        let cfg = PretrainConfig { beta: 0.0, gamma: 0.0, tau: 0.3, ..Default::default() };
        let batch: Vec<NodeRef> = vec![(0, 0), (1, 2), (0, 3), (1, 5), (0, 5)];
        let (loss, _) = pretrain_loss(&batch, &inputs, &params, &cfg, 1.0).unwrap();
        let (zt, zs) = projected_batch(&batch, &inputs, &params).unwrap();
        // independent recomputation: per-node InfoNCE, then mean per domain, summed
        let mut per = Vec::new();
        for i in 0..batch.len() {
            let cos = |a: ArrayView1<f64>, b: ArrayView1<f64>| a.dot(&b) / (a.dot(&a).sqrt() * b.dot(&b).sqrt());
            let logits: Vec<f64> = (0..batch.len()).map(|j| cos(zt.row(i), zs.row(j)) / 0.3).collect();
            let denom: f64 = logits.iter().map(|l| l.exp()).sum();
            per.push(-(logits[i].exp() / denom).ln());
        }
        let dom_a = (per[0] + per[2] + per[4]) / 3.0;
        let dom_b = (per[1] + per[3]) / 2.0;
        assert!((loss.total - (dom_a + dom_b)).abs() < 1e-12);
        assert_eq!(loss.token_reg, 0.0);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let dims = toy_dims();
        let inputs = toy_inputs(&dims);
        let mut params = EncoderParams::init(dims, &["dom-a".into(), "dom-b".into()], 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        params.weights.tokens.mapv_inplace(|_| rng.random_range(-0.5..0.5));
        let cfg = PretrainConfig { beta: 0.3, gamma: 0.1, tau: 0.5, ..Default::default() };
        let batch: Vec<NodeRef> = (0..6).flat_map(|v| [(0, v), (1, v)]).collect();
        let f = |flat: &[f64]| -> Result<(f64, Vec<f64>)> {
            let mut p = params.clone();
            p.weights.assign_flat(flat);
            let (l, g) = pretrain_loss(&batch, &inputs, &p, &cfg, 1.0)?;
            Ok((l.total, g.flatten()))
        };
        let err = grad_check(f, &params.weights.flatten(), 1e-5, usize::MAX, 0).unwrap();
        assert!(err <= 1e-4, "max relative error {err}");
    }

    #[test]
    fn token_regularizer_gradient_is_two_gamma_tau() {
        let dims = toy_dims();
        let inputs = toy_inputs(&dims);
        let mut params = EncoderParams::init(dims, &["dom-a".into(), "dom-b".into(), "unused".into()], 4).unwrap();
        params.weights.tokens.row_mut(2).assign(&array![0.5, -1.0, 2.0]);
        let cfg = PretrainConfig { gamma: 0.25, ..Default::default() };
        let (_, g) = pretrain_loss(&[(0, 0), (1, 1)], &inputs, &params, &cfg, 1.0).unwrap();
        assert_eq!(g.tokens.row(2).to_vec(), vec![0.25, -0.5, 1.0]);
    }

    #[test]
    fn zero_epochs_returns_init_and_runs_are_deterministic() {
        let dims = toy_dims();
        let inputs = toy_inputs(&dims);
        let init = EncoderParams::init(dims, &["dom-a".into(), "dom-b".into()], 4).unwrap();
        let cfg = PretrainConfig { epochs: 0, batch_size: 4, ..Default::default() };
        let out = run_pretraining(&inputs, init.clone(), &cfg, 1.0).unwrap();
        assert_eq!(out.params, init);
        assert_eq!(out.trace.len(), 1);

        let cfg = PretrainConfig { epochs: 5, batch_size: 4, ..Default::default() };
        let a = run_pretraining(&inputs, init.clone(), &cfg, 1.0).unwrap();
        let b = run_pretraining(&inputs, init, &cfg, 1.0).unwrap();
        assert_eq!(a.params.to_json(), b.params.to_json());
        assert_eq!(trace_csv(&a.trace), trace_csv(&b.trace));
    }

    #[test]
    fn missing_token_is_a_config_error() {
        let dims = toy_dims();
        let inputs = toy_inputs(&dims);
        let params = EncoderParams::init(dims, &["dom-a".into()], 0).unwrap();
        assert!(matches!(build_views(&inputs[1], &params), Err(crate::Error::Config(_))));
    }

    #[test]
    fn edgeless_struct_view_depends_only_on_token() {
        let dims = toy_dims();
        let emb = hashing_embedder(dims.d0, 0).unwrap();
        let g = Graph::new(GraphParts {
            node_count: 4,
            features: Array2::from_shape_fn((4, 3), |(i, j)| (i * 3 + j) as f64),
            domain_id: "dom-a".into(),
            ..Default::default()
        })
        .unwrap();
        let inp = prepare_inputs(&g, dims.d0, 0.5, dims.order, StructTransform::Log1p, &emb).unwrap();
        assert!(inp.struct_x.iter().all(|&v| v == 0.0));
        let mut params = EncoderParams::init(dims, &["dom-a".into()], 1).unwrap();
        params.weights.tokens.row_mut(0).fill(0.7);
        let views = build_views(&inp, &params).unwrap();
        for v in 1..4 {
            assert_eq!(views.h_struct.row(v), views.h_struct.row(0));
        }
    }
}
