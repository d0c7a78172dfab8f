//! Causal forward pass with optional LoRA, keeping the activations the
//! backward pass needs.

use ndarray::{s, Array1, Array2, Array3, ArrayView1, Axis};

use super::lora::{LayerLora, LoraAdapter, LoraPair};
use super::weights::MicroLmWeights;
use crate::error::{Error, Result};

pub(crate) const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    /// Next-token logits for every position, `T × vocab`.
    pub logits: Array2<f64>,
    /// Per layer, attention probabilities `heads × T × T` (row = query).
    pub attention: Vec<Array3<f64>>,
}

impl ForwardOutput {
    pub fn final_logits(&self) -> ArrayView1<'_, f64> {
        self.logits.row(self.logits.nrows() - 1)
    }
}

pub(crate) struct LnCache {
    pub xhat: Array2<f64>,
    pub rstd: Array1<f64>,
}

pub(crate) struct LayerCache {
    pub ln1: LnCache,
    pub h1: Array2<f64>,
    pub q: Array2<f64>,
    pub k: Array2<f64>,
    pub v: Array2<f64>,
    pub zq: Option<Array2<f64>>,
    pub zk: Option<Array2<f64>>,
    pub zv: Option<Array2<f64>>,
    pub attn: Array2<f64>,
    pub zo: Option<Array2<f64>>,
    pub ln2: LnCache,
    pub h2: Array2<f64>,
    pub pre_act: Array2<f64>,
    pub act: Array2<f64>,
}

pub(crate) struct ForwardCache {
    pub ids: Vec<u32>,
    pub layers: Vec<LayerCache>,
    pub lnf: LnCache,
    pub hf: Array2<f64>,
}

pub fn forward(weights: &MicroLmWeights, adapter: Option<&LoraAdapter>, token_ids: &[u32]) -> Result<ForwardOutput> {
    forward_cached(weights, adapter, token_ids).map(|(out, _)| out)
}

pub(crate) fn check_input(weights: &MicroLmWeights, adapter: Option<&LoraAdapter>, token_ids: &[u32]) -> Result<()> {
    let cfg = &weights.config;
    if token_ids.is_empty() {
        return Err(Error::arg("empty token sequence"));
    }
    if token_ids.len() > cfg.context_length {
        return Err(Error::ContextLength { len: token_ids.len(), max: cfg.context_length });
    }
    if let Some(&bad) = token_ids.iter().find(|&&t| t as usize >= cfg.vocab_size) {
        return Err(Error::arg(format!("token id {bad} outside vocabulary of {}", cfg.vocab_size)));
    }
    if let Some(a) = adapter {
        a.check_compatible(weights)?;
    }
    Ok(())
}

pub(crate) fn forward_cached(
    weights: &MicroLmWeights,
    adapter: Option<&LoraAdapter>,
    token_ids: &[u32],
) -> Result<(ForwardOutput, ForwardCache)> {
    check_input(weights, adapter, token_ids)?;
    let cfg = &weights.config;
    let t = token_ids.len();
    let scale = adapter.map_or(0.0, LoraAdapter::scale);
    let no_lora = LayerLora::default();

    let mut x = Array2::zeros((t, cfg.d_model));
    for (i, &id) in token_ids.iter().enumerate() {
        let mut row = x.row_mut(i);
        row.assign(&weights.token_embedding.row(id as usize));
        row += &weights.position_embedding.row(i);
    }

    let mut attention = Vec::with_capacity(cfg.n_layers);
    let mut layers = Vec::with_capacity(cfg.n_layers);
    for (l, lw) in weights.layers.iter().enumerate() {
        let lora = adapter.map_or(&no_lora, |a| &a.layers[l]);
        let (h1, ln1) = layer_norm(&x, &lw.ln1_gain, &lw.ln1_bias);
        let (q, zq) = project(&h1, &lw.w_q, lora.q.as_ref(), scale);
        let (k, zk) = project(&h1, &lw.w_k, lora.k.as_ref(), scale);
        let (v, zv) = project(&h1, &lw.w_v, lora.v.as_ref(), scale);
        let (attn, probs) = causal_attention(&q, &k, &v, cfg.n_heads);
        let (proj, zo) = project(&attn, &lw.w_o, lora.o.as_ref(), scale);
        let x_mid = &x + &proj;
        let (h2, ln2) = layer_norm(&x_mid, &lw.ln2_gain, &lw.ln2_bias);
        let pre_act = h2.dot(&lw.ff_in.t()) + &lw.ff_in_bias;
        let act = pre_act.mapv(gelu);
        let ff = act.dot(&lw.ff_out.t()) + &lw.ff_out_bias;
        x = &x_mid + &ff;
        attention.push(probs);
        layers.push(LayerCache { ln1, h1, q, k, v, zq, zk, zv, attn, zo, ln2, h2, pre_act, act });
    }

    let (hf, lnf) = layer_norm(&x, &weights.final_gain, &weights.final_bias);
    let logits = hf.dot(&weights.head.t());
    Ok((
        ForwardOutput { logits, attention },
        ForwardCache { ids: token_ids.to_vec(), layers, lnf, hf },
    ))
}

/// `y = x·Wᵀ + scale·(x·Aᵀ)·Bᵀ`; also returns `x·Aᵀ` for backprop.
pub(crate) fn project(
    x: &Array2<f64>,
    w: &Array2<f64>,
    lora: Option<&LoraPair>,
    scale: f64,
) -> (Array2<f64>, Option<Array2<f64>>) {
    let mut y = x.dot(&w.t());
    let z = lora.map(|pair| {
        let z = x.dot(&pair.a.t());
        y.scaled_add(scale, &z.dot(&pair.b.t()));
        z
    });
    (y, z)
}

pub(crate) fn layer_norm(x: &Array2<f64>, gain: &Array1<f64>, bias: &Array1<f64>) -> (Array2<f64>, LnCache) {
    let mean = x.mean_axis(Axis(1)).expect("non-empty rows");
    let centered = x - &mean.insert_axis(Axis(1));
    let var = centered.mapv(|v| v * v).mean_axis(Axis(1)).expect("non-empty rows");
    let rstd = var.mapv(|v| 1.0 / (v + LN_EPS).sqrt());
    let xhat = centered * &rstd.view().insert_axis(Axis(1));
    let y = &xhat * gain + bias;
    (y, LnCache { xhat, rstd })
}

fn causal_attention(q: &Array2<f64>, k: &Array2<f64>, v: &Array2<f64>, n_heads: usize) -> (Array2<f64>, Array3<f64>) {
    let (t, d) = q.dim();
    let dh = d / n_heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut out = Array2::zeros((t, d));
    let mut probs = Array3::zeros((n_heads, t, t));
    for h in 0..n_heads {
        let cols = s![.., h * dh..(h + 1) * dh];
        let mut scores = q.slice(cols).dot(&k.slice(cols).t());
        for (i, mut row) in scores.rows_mut().into_iter().enumerate() {
            let max = row.iter().take(i + 1).fold(f64::NEG_INFINITY, |m, &v| m.max(v * scale));
            let mut sum = 0.0;
            for (j, s) in row.iter_mut().enumerate() {
                if j <= i {
                    *s = (*s * scale - max).exp();
                    sum += *s;
                } else {
                    *s = 0.0;
                }
            }
            row /= sum;
        }
        out.slice_mut(cols).assign(&scores.dot(&v.slice(cols)));
        probs.index_axis_mut(Axis(0), h).assign(&scores);
    }
    (out, probs)
}

pub(crate) fn gelu(u: f64) -> f64 {
    0.5 * u * (1.0 + (GELU_C * (u + GELU_A * u * u * u)).tanh())
}

pub(crate) fn gelu_grad(u: f64) -> f64 {
    let t = (GELU_C * (u + GELU_A * u * u * u)).tanh();
    0.5 * (1.0 + t) + 0.5 * u * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * u * u)
}
