//! Dual two-layer GCN encoders, projection and variational heads, domain
//! tokens, hand-written backward passes, AdamW and finite-difference checks.

use std::path::Path;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{config, numerical, param, validation, Error, Result};
use crate::graph::CsrMatrix;
use crate::io;

const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderDims {
    pub d0: usize,
    /// WSE order `K`.
    pub order: usize,
    pub d_tau: usize,
    pub d_h: usize,
    pub d: usize,
    pub d_p: usize,
}

impl Default for EncoderDims {
    fn default() -> Self {
        EncoderDims {
            d0: 16,
            order: 8,
            d_tau: 16,
            d_h: 64,
            d: 64,
            d_p: 32,
        }
    }
}

impl EncoderDims {
    pub fn in_text(&self) -> usize {
        2 * self.d0 + self.d_tau
    }

    pub fn in_struct(&self) -> usize {
        self.order + self.d_tau
    }
}

/// Every trainable tensor. Tokens are rows of `tokens`, one per domain.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights {
    pub text_w1: Array2<f64>,
    pub text_w2: Array2<f64>,
    pub struct_w1: Array2<f64>,
    pub struct_w2: Array2<f64>,
    pub proj_t: Array2<f64>,
    pub proj_s: Array2<f64>,
    pub vib_t_mu: Array2<f64>,
    pub vib_t_lv: Array2<f64>,
    pub vib_s_mu: Array2<f64>,
    pub vib_s_lv: Array2<f64>,
    pub tokens: Array2<f64>,
}

pub const TENSOR_NAMES: [&str; 11] = [
    "text_w1", "text_w2", "struct_w1", "struct_w2", "proj_t", "proj_s", "vib_t_mu", "vib_t_lv", "vib_s_mu",
    "vib_s_lv", "tokens",
];

impl Weights {
    pub fn tensors(&self) -> [&Array2<f64>; 11] {
        [
            &self.text_w1,
            &self.text_w2,
            &self.struct_w1,
            &self.struct_w2,
            &self.proj_t,
            &self.proj_s,
            &self.vib_t_mu,
            &self.vib_t_lv,
            &self.vib_s_mu,
            &self.vib_s_lv,
            &self.tokens,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Array2<f64>; 11] {
        [
            &mut self.text_w1,
            &mut self.text_w2,
            &mut self.struct_w1,
            &mut self.struct_w2,
            &mut self.proj_t,
            &mut self.proj_s,
            &mut self.vib_t_mu,
            &mut self.vib_t_lv,
            &mut self.vib_s_mu,
            &mut self.vib_s_lv,
            &mut self.tokens,
        ]
    }

    pub fn zeros_like(&self) -> Weights {
        let z = |a: &Array2<f64>| Array2::zeros(a.raw_dim());
        Weights {
            text_w1: z(&self.text_w1),
            text_w2: z(&self.text_w2),
            struct_w1: z(&self.struct_w1),
            struct_w2: z(&self.struct_w2),
            proj_t: z(&self.proj_t),
            proj_s: z(&self.proj_s),
            vib_t_mu: z(&self.vib_t_mu),
            vib_t_lv: z(&self.vib_t_lv),
            vib_s_mu: z(&self.vib_s_mu),
            vib_s_lv: z(&self.vib_s_lv),
            tokens: z(&self.tokens),
        }
    }

    pub fn len(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Row-major concatenation in [`TENSOR_NAMES`] order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.len());
        for t in self.tensors() {
            out.extend(t.iter().copied());
        }
        out
    }

    pub fn assign_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.len(), "flat parameter length");
        let mut offset = 0;
        for t in self.tensors_mut() {
            for (dst, src) in t.iter_mut().zip(&flat[offset..]) {
                *dst = *src;
            }
            offset += t.len();
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|x| x.is_finite()))
    }
}

/// Trainable weights plus the frozen pieces used at adaptation time.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub dims: EncoderDims,
    /// Domain ids in token-row order.
    pub domains: Vec<String>,
    pub weights: Weights,
    /// Frozen seeded map from encoder width `d` to token width `d_tau`, used by the gates.
    pub gate_proj: Array2<f64>,
    /// Frozen least-squares map from retrieval-embedding width to `d`.
    pub text_map: Option<Array2<f64>>,
}

fn glorot(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let a = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-a..=a))
}

impl EncoderParams {
    pub fn init(dims: EncoderDims, domains: &[String], seed: u64) -> Result<EncoderParams> {
        if dims.d0 == 0 || dims.order == 0 || dims.d_h == 0 || dims.d == 0 || dims.d_p == 0 {
            return Err(param("encoder widths must be positive (d_tau may be 0)"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let weights = Weights {
            text_w1: glorot(dims.in_text(), dims.d_h, &mut rng),
            text_w2: glorot(dims.d_h, dims.d, &mut rng),
            struct_w1: glorot(dims.in_struct(), dims.d_h, &mut rng),
            struct_w2: glorot(dims.d_h, dims.d, &mut rng),
            proj_t: glorot(dims.d, dims.d_p, &mut rng),
            proj_s: glorot(dims.d, dims.d_p, &mut rng),
            vib_t_mu: glorot(dims.d, dims.d, &mut rng),
            vib_t_lv: glorot(dims.d, dims.d, &mut rng),
            vib_s_mu: glorot(dims.d, dims.d, &mut rng),
            vib_s_lv: glorot(dims.d, dims.d, &mut rng),
            tokens: Array2::zeros((domains.len(), dims.d_tau)),
        };
        let scale = 1.0 / (dims.d_tau.max(1) as f64).sqrt();
        let gate_proj = Array2::from_shape_fn((dims.d, dims.d_tau), |_| scale * rng.sample::<f64, _>(StandardNormal));
        Ok(EncoderParams {
            dims,
            domains: domains.to_vec(),
            weights,
            gate_proj,
            text_map: None,
        })
    }

    pub fn domain_index(&self, domain: &str) -> Result<usize> {
        self.domains
            .iter()
            .position(|d| d == domain)
            .ok_or_else(|| config(format!("no domain token for {domain:?}")))
    }

    pub fn token(&self, domain: &str) -> Result<ArrayView1<'_, f64>> {
        Ok(self.weights.tokens.row(self.domain_index(domain)?))
    }

    pub fn to_json(&self) -> String {
        let ck = Checkpoint {
            version: CHECKPOINT_VERSION,
            dims: self.dims,
            domains: self.domains.clone(),
            tensors: TENSOR_NAMES
                .iter()
                .zip(self.weights.tensors())
                .map(|(n, t)| NamedTensor {
                    name: n.to_string(),
                    tensor: DenseTensor::from(t),
                })
                .collect(),
            gate_proj: DenseTensor::from(&self.gate_proj),
            text_map: self.text_map.as_ref().map(DenseTensor::from),
        };
        serde_json::to_string(&ck).expect("checkpoint serializes")
    }

    pub fn from_json(body: &str, context: &str) -> Result<EncoderParams> {
        let ck: Checkpoint = serde_json::from_str(body).map_err(|e| Error::parse(context, e))?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::parse(context, format!("unsupported checkpoint version {}", ck.version)));
        }
        let mut params = EncoderParams::init(ck.dims, &ck.domains, 0)?;
        if ck.tensors.len() != TENSOR_NAMES.len() {
            return Err(Error::parse(context, "wrong number of tensors"));
        }
        for ((slot, name), nt) in params.weights.tensors_mut().into_iter().zip(TENSOR_NAMES).zip(ck.tensors) {
            if nt.name != name {
                return Err(Error::parse(context, format!("expected tensor {name}, found {}", nt.name)));
            }
            let t = nt.tensor.into_array(context)?;
            if t.dim() != slot.dim() {
                return Err(Error::parse(context, format!("tensor {name} has shape {:?}, expected {:?}", t.dim(), slot.dim())));
            }
            *slot = t;
        }
        params.gate_proj = ck.gate_proj.into_array(context)?;
        params.text_map = ck.text_map.map(|t| t.into_array(context)).transpose()?;
        Ok(params)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        io::write_atomic(path, self.to_json().as_bytes())
    }

    pub fn load(path: &Path) -> Result<EncoderParams> {
        EncoderParams::from_json(&io::read_to_string(path)?, &path.display().to_string())
    }
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    version: u32,
    dims: EncoderDims,
    domains: Vec<String>,
    tensors: Vec<NamedTensor>,
    gate_proj: DenseTensor,
    text_map: Option<DenseTensor>,
}

#[derive(Serialize, Deserialize)]
struct NamedTensor {
    name: String,
    #[serde(flatten)]
    tensor: DenseTensor,
}

#[derive(Serialize, Deserialize)]
struct DenseTensor {
    shape: [usize; 2],
    data: Vec<f64>,
}

impl From<&Array2<f64>> for DenseTensor {
    fn from(a: &Array2<f64>) -> Self {
        DenseTensor {
            shape: [a.nrows(), a.ncols()],
            data: a.iter().copied().collect(),
        }
    }
}

impl DenseTensor {
    fn into_array(self, context: &str) -> Result<Array2<f64>> {
        Array2::from_shape_vec((self.shape[0], self.shape[1]), self.data)
            .map_err(|e| Error::parse(context, format!("tensor data does not match shape: {e}")))
    }
}

/// `[H || token]` on every row.
pub fn attach_domain_token(h: &Array2<f64>, token: ArrayView1<f64>) -> Array2<f64> {
    let (n, dx) = h.dim();
    let mut out = Array2::zeros((n, dx + token.len()));
    out.slice_mut(s![.., ..dx]).assign(h);
    out.slice_mut(s![.., dx..]).assign(&token.broadcast((n, token.len())).expect("broadcast row"));
    out
}

/// Intermediates kept for the backward pass.
#[derive(Debug, Clone)]
pub struct GcnCache {
    /// `Â X`
    pub ax: Array2<f64>,
    /// pre-activation `Â X W1`
    pub pre: Array2<f64>,
    /// `Â relu(pre)`
    pub ah: Array2<f64>,
}

fn check_chain(a_hat: &CsrMatrix, x: &ArrayView2<f64>, w1: &Array2<f64>, w2: &Array2<f64>) -> Result<()> {
    if a_hat.n_rows() != a_hat.n_cols() || a_hat.n_cols() != x.nrows() {
        return Err(validation(format!(
            "propagation matrix {}x{} does not fit {} input rows",
            a_hat.n_rows(),
            a_hat.n_cols(),
            x.nrows()
        )));
    }
    if x.ncols() != w1.nrows() || w1.ncols() != w2.nrows() {
        return Err(validation(format!(
            "shape chain broken: X has {} cols, W1 is {:?}, W2 is {:?}",
            x.ncols(),
            w1.dim(),
            w2.dim()
        )));
    }
    Ok(())
}

/// `H = Â · relu(Â · X · W1) · W2`.
pub fn gnn_forward(a_hat: &CsrMatrix, x: &Array2<f64>, w1: &Array2<f64>, w2: &Array2<f64>) -> Result<Array2<f64>> {
    Ok(gnn_forward_cached(a_hat, x, w1, w2)?.0)
}

pub fn gnn_forward_cached(
    a_hat: &CsrMatrix,
    x: &Array2<f64>,
    w1: &Array2<f64>,
    w2: &Array2<f64>,
) -> Result<(Array2<f64>, GcnCache)> {
    check_chain(a_hat, &x.view(), w1, w2)?;
    let ax = a_hat.matmul(&x.view());
    let pre = ax.dot(w1);
    let act = pre.mapv(|v| v.max(0.0));
    let ah = a_hat.matmul(&act.view());
    let out = ah.dot(w2);
    Ok((out, GcnCache { ax, pre, ah }))
}

pub struct GcnGrads {
    pub w1: Array2<f64>,
    pub w2: Array2<f64>,
    pub x: Array2<f64>,
}

/// Backward through [`gnn_forward_cached`] for upstream gradient `d_out`.
/// `Â` is symmetric, so `Âᵀ = Â`.
pub fn gnn_backward(a_hat: &CsrMatrix, cache: &GcnCache, w1: &Array2<f64>, w2: &Array2<f64>, d_out: &Array2<f64>) -> GcnGrads {
    let g_w2 = cache.ah.t().dot(d_out);
    let d_ah = d_out.dot(&w2.t());
    let mut d_pre = a_hat.matmul(&d_ah.view());
    ndarray::Zip::from(&mut d_pre).and(&cache.pre).for_each(|d, &p| {
        if p <= 0.0 {
            *d = 0.0;
        }
    });
    let g_w1 = cache.ax.t().dot(&d_pre);
    let d_ax = d_pre.dot(&w1.t());
    let g_x = a_hat.matmul(&d_ax.view());
    GcnGrads { w1: g_w1, w2: g_w2, x: g_x }
}

/// Central differences on up to `samples` random coordinates (all of them if
/// fewer) against the analytic gradient returned by `f`. The relative error of
/// a coordinate is `|a - n| / max(|a|, |n|, 1e-6)`; the floor keeps
/// coordinates whose true gradient is zero from dividing round-off by zero.
pub fn grad_check<F>(f: F, x: &[f64], eps: f64, samples: usize, seed: u64) -> Result<f64>
where
    F: Fn(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    if !(1e-6..=1e-3).contains(&eps) {
        return Err(param(format!("grad_check eps {eps} must lie in [1e-6, 1e-3]")));
    }
    let (loss, analytic) = f(x)?;
    if !loss.is_finite() {
        return Err(numerical("grad_check: non-finite loss"));
    }
    if analytic.len() != x.len() {
        return Err(validation("grad_check: gradient length differs from parameter length"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let coords: Vec<usize> = if samples >= x.len() {
        (0..x.len()).collect()
    } else {
        sample(&mut rng, x.len(), samples).into_vec()
    };
    let mut probe = x.to_vec();
    let mut worst = 0.0f64;
    for i in coords {
        probe[i] = x[i] + eps;
        let (up, _) = f(&probe)?;
        probe[i] = x[i] - eps;
        let (down, _) = f(&probe)?;
        probe[i] = x[i];
        if !up.is_finite() || !down.is_finite() {
            return Err(numerical("grad_check: non-finite loss under perturbation"));
        }
        let numeric = (up - down) / (2.0 * eps);
        let a = analytic[i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
        worst = worst.max(rel);
    }
    Ok(worst)
}

/// AdamW over a flat parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
    pub lr: f64,
    pub weight_decay: f64,
}

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

impl OptimState {
    pub fn new(len: usize, lr: f64, weight_decay: f64) -> OptimState {
        OptimState {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
            lr,
            weight_decay,
        }
    }
}

/// One bias-corrected Adam step with decoupled weight decay. Refuses (and
/// leaves everything untouched) when a gradient entry is not finite.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut OptimState) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(validation(format!(
            "adam_step: {} params, {} grads, {} moments",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(numerical("adam_step: non-finite gradient, step refused"));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - ADAM_BETA1.powi(t);
    let c2 = 1.0 - ADAM_BETA2.powi(t);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = ADAM_BETA1 * state.m[i] + (1.0 - ADAM_BETA1) * g;
        state.v[i] = ADAM_BETA2 * state.v[i] + (1.0 - ADAM_BETA2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] -= state.lr * (m_hat / (v_hat.sqrt() + ADAM_EPS) + state.weight_decay * params[i]);
    }
    Ok(())
}

/// Row-wise L2 normalization; zero rows stay zero. Returns the norms too.
pub fn normalize_rows(z: &Array2<f64>) -> (Array2<f64>, Array1<f64>) {
    let norms = z.map_axis(Axis(1), |r| r.dot(&r).sqrt());
    let mut u = z.clone();
    for (mut row, &n) in u.rows_mut().into_iter().zip(norms.iter()) {
        if n > 0.0 {
            row /= n;
        }
    }
    (u, norms)
}

/// Backward through row normalization: `dz = (du - (du·u) u) / ‖z‖`.
pub fn normalize_rows_backward(u: &Array2<f64>, norms: &Array1<f64>, du: &Array2<f64>) -> Array2<f64> {
    let mut dz = Array2::zeros(u.raw_dim());
    for i in 0..u.nrows() {
        if norms[i] == 0.0 {
            continue;
        }
        let ui = u.row(i);
        let dui = du.row(i);
        let proj = ui.dot(&dui);
        let mut row = dz.row_mut(i);
        row.assign(&((&dui - &(&ui * proj)) / norms[i]));
    }
    dz
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::normalized_adjacency;
    use ndarray::array;

    fn rand_matrix(r: usize, c: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
        Array2::from_shape_fn((r, c), |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn token_attachment() {
        let h = array![[1.0], [2.0]];
        let t = array![7.0];
        assert_eq!(attach_domain_token(&h, t.view()), array![[1.0, 7.0], [2.0, 7.0]]);
        let z = Array1::<f64>::zeros(0);
        assert_eq!(attach_domain_token(&h, z.view()), h);
    }

    #[test]
    fn identity_chain_and_zero_w2() {
        let a = CsrMatrix::identity(1);
        let one = array![[1.0]];
        assert_eq!(gnn_forward(&a, &one, &one, &one).unwrap(), one);
        let zero = array![[0.0]];
        assert_eq!(gnn_forward(&a, &one, &one, &zero).unwrap(), zero);
        assert!(gnn_forward(&a, &array![[1.0, 2.0]], &one, &one).is_err());
    }

    #[test]
    fn matches_dense_reference_on_path() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = normalized_adjacency(3, &[(0, 1), (1, 2)]);
        let x = rand_matrix(3, 4, &mut rng);
        let w1 = rand_matrix(4, 5, &mut rng);
        let w2 = rand_matrix(5, 2, &mut rng);
        // dense oracle built directly from D^-1/2 (A+I) D^-1/2
        let ai = array![[1.0, 1.0, 0.0], [1.0, 1.0, 1.0], [0.0, 1.0, 1.0]];
        let deg = [2.0f64, 3.0, 2.0];
        let dense = Array2::from_shape_fn((3, 3), |(i, j)| ai[[i, j]] / (deg[i] * deg[j]).sqrt());
        let want = dense.dot(&dense.dot(&x).dot(&w1).mapv(|v| v.max(0.0))).dot(&w2);
        let got = gnn_forward(&a, &x, &w1, &w2).unwrap();
        for (g, w) in got.iter().zip(want.iter()) {
            assert!((g - w).abs() < 1e-9);
        }
    }

    #[test]
    fn gcn_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = normalized_adjacency(5, &[(0, 1), (1, 2), (2, 3), (3, 4), (0, 4), (1, 3)]);
        let x = rand_matrix(5, 3, &mut rng);
        let w1 = rand_matrix(3, 4, &mut rng);
        let w2 = rand_matrix(4, 2, &mut rng);
        let target = rand_matrix(5, 2, &mut rng);
        let n1 = w1.len();
        let f = |flat: &[f64]| -> Result<(f64, Vec<f64>)> {
            let w1 = Array2::from_shape_vec((3, 4), flat[..n1].to_vec()).unwrap();
            let w2 = Array2::from_shape_vec((4, 2), flat[n1..].to_vec()).unwrap();
            let (h, cache) = gnn_forward_cached(&a, &x, &w1, &w2)?;
            let diff = &h - &target;
            let loss = 0.5 * diff.iter().map(|v| v * v).sum::<f64>();
            let g = gnn_backward(&a, &cache, &w1, &w2, &diff);
            Ok((loss, g.w1.iter().chain(g.w2.iter()).copied().collect()))
        };
        let flat: Vec<f64> = w1.iter().chain(w2.iter()).copied().collect();
        assert!(grad_check(f, &flat, 1e-5, 1000, 0).unwrap() < 1e-6);
    }

    #[test]
    fn quadratic_grad_check_and_eps_range() {
        let f = |w: &[f64]| -> Result<(f64, Vec<f64>)> {
            Ok((w.iter().map(|v| v * v).sum(), w.iter().map(|v| 2.0 * v).collect()))
        };
        let w = vec![0.3, -1.2, 2.0, 0.7];
        assert!(grad_check(f, &w, 1e-5, 200, 0).unwrap() <= 1e-7);
        assert!(grad_check(f, &w, 0.0, 200, 0).is_err());
    }

    #[test]
    fn adam_basics() {
        let mut p = vec![1.0, -2.0];
        let mut st = OptimState::new(2, 0.1, 0.0);
        adam_step(&mut p, &[0.0, 0.0], &mut st).unwrap();
        assert_eq!(p, vec![1.0, -2.0]);
        assert!(adam_step(&mut p, &[f64::NAN, 0.0], &mut st).is_err());
        assert_eq!(st.step, 1);
    }

    #[test]
    fn checkpoint_round_trip() {
        let domains = vec!["a".to_string(), "b".to_string()];
        let mut p = EncoderParams::init(EncoderDims { d0: 2, order: 3, d_tau: 2, d_h: 4, d: 3, d_p: 2 }, &domains, 1).unwrap();
        p.weights.tokens[[1, 0]] = 0.1 + 0.2;
        p.text_map = Some(array![[1.0 / 3.0, 2.0, 0.5]]);
        let body = p.to_json();
        let back = EncoderParams::from_json(&body, "mem").unwrap();
        assert_eq!(back, p);
        assert_eq!(back.to_json(), body);
        assert!(matches!(p.token("zzz"), Err(Error::Config(_))));
    }

    #[test]
    fn init_is_seeded_and_tokens_start_at_zero() {
        let domains = vec!["a".to_string()];
        let a = EncoderParams::init(EncoderDims::default(), &domains, 3).unwrap();
        let b = EncoderParams::init(EncoderDims::default(), &domains, 3).unwrap();
        assert_eq!(a, b);
        assert!(a.weights.tokens.iter().all(|&t| t == 0.0));
        let bound = (6.0f64 / (48.0 + 64.0)).sqrt();
        assert!(a.weights.text_w1.iter().all(|v| v.abs() <= bound));
    }

    #[test]
    fn flatten_round_trip() {
        let domains = vec!["a".to_string()];
        let p = EncoderParams::init(EncoderDims::default(), &domains, 3).unwrap();
        let mut w = p.weights.zeros_like();
        w.assign_flat(&p.weights.flatten());
        assert_eq!(w, p.weights);
    }
}
