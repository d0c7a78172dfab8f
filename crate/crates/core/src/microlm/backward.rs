//! Reverse-mode gradients of the final-position cross-entropy.

use ndarray::{s, Array1, Array2, Array3, Axis};

use super::forward::{forward_cached, gelu_grad, ForwardCache, LayerCache, LnCache};
use super::lora::{LayerLora, LoraAdapter, LoraPair};
use super::weights::MicroLmWeights;
use crate::error::{Error, Result};

/// One training prompt and the token it should be answered with.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Example {
    pub token_ids: Vec<u32>,
    pub target: u32,
}

/// Summed loss over a batch with the requested gradients.
pub struct BatchGradients {
    pub loss: f64,
    pub base: Option<MicroLmWeights>,
    pub lora: Option<LoraAdapter>,
}

/// Cross-entropy of `target` under the softmax of the final-position logits.
pub fn example_loss(weights: &MicroLmWeights, adapter: Option<&LoraAdapter>, example: &Example) -> Result<f64> {
    let out = super::forward::forward(weights, adapter, &example.token_ids)?;
    let (loss, _) = cross_entropy(out.final_logits().to_owned(), example.target);
    Ok(loss)
}

pub fn batch_loss(weights: &MicroLmWeights, adapter: Option<&LoraAdapter>, batch: &[Example]) -> Result<f64> {
    batch.iter().map(|e| example_loss(weights, adapter, e)).sum()
}

/// Gradients of the summed loss over `batch`. `want_base` asks for base
/// weight gradients; LoRA gradients are produced whenever an adapter is
/// given.
pub fn batch_gradients(
    weights: &MicroLmWeights,
    adapter: Option<&LoraAdapter>,
    batch: &[Example],
    want_base: bool,
) -> Result<BatchGradients> {
    let mut base = want_base.then(|| weights.zeros_like());
    let mut lora = adapter.map(LoraAdapter::zeros_like);
    let mut loss = 0.0;
    for ex in batch {
        let (out, cache) = forward_cached(weights, adapter, &ex.token_ids)?;
        if ex.target as usize >= weights.config.vocab_size {
            return Err(Error::arg(format!("target token {} outside vocabulary", ex.target)));
        }
        let t = ex.token_ids.len();
        let (l, dlast) = cross_entropy(out.logits.row(t - 1).to_owned(), ex.target);
        loss += l;
        backward(weights, adapter, &cache, &out.attention, t - 1, &dlast, base.as_mut(), lora.as_mut());
    }
    Ok(BatchGradients { loss, base, lora })
}

/// Returns the loss and its gradient with respect to the logits.
fn cross_entropy(logits: Array1<f64>, target: u32) -> (f64, Array1<f64>) {
    let max = logits.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let exp = logits.mapv(|v| (v - max).exp());
    let sum = exp.sum();
    let loss = sum.ln() + max - logits[target as usize];
    let mut grad = exp / sum;
    grad[target as usize] -= 1.0;
    (loss, grad)
}

fn backward(
    w: &MicroLmWeights,
    adapter: Option<&LoraAdapter>,
    cache: &ForwardCache,
    attention: &[Array3<f64>],
    position: usize,
    dlogits: &Array1<f64>,
    mut base: Option<&mut MicroLmWeights>,
    mut lora: Option<&mut LoraAdapter>,
) {
    let t = cache.ids.len();
    let d = w.config.d_model;
    let scale = adapter.map_or(0.0, LoraAdapter::scale);
    let no_lora = LayerLora::default();

    let mut dhf = Array2::zeros((t, d));
    dhf.row_mut(position).assign(&dlogits.dot(&w.head));
    if let Some(g) = base.as_deref_mut() {
        let hrow = cache.hf.row(position);
        for (v, &dl) in dlogits.iter().enumerate() {
            if dl != 0.0 {
                g.head.row_mut(v).scaled_add(dl, &hrow);
            }
        }
    }
    let (dg, db) = match base.as_deref_mut() {
        Some(g) => (Some(&mut g.final_gain), Some(&mut g.final_bias)),
        None => (None, None),
    };
    let mut dx = ln_backward(&dhf, &cache.lnf, &w.final_gain, dg, db);

    for l in (0..w.layers.len()).rev() {
        let lw = &w.layers[l];
        let lc = &cache.layers[l];
        let lora_w = adapter.map_or(&no_lora, |a| &a.layers[l]);
        let mut lg = lora.as_deref_mut().map(|a| &mut a.layers[l]);
        let mut bg = base.as_deref_mut().map(|g| &mut g.layers[l]);

        // feed-forward block
        if let Some(g) = bg.as_deref_mut() {
            g.ff_out += &dx.t().dot(&lc.act);
            g.ff_out_bias += &dx.sum_axis(Axis(0));
        }
        let mut dpre = dx.dot(&lw.ff_out);
        dpre.zip_mut_with(&lc.pre_act, |g, &u| *g *= gelu_grad(u));
        if let Some(g) = bg.as_deref_mut() {
            g.ff_in += &dpre.t().dot(&lc.h2);
            g.ff_in_bias += &dpre.sum_axis(Axis(0));
        }
        let dh2 = dpre.dot(&lw.ff_in);
        let (dg2, db2) = match bg.as_deref_mut() {
            Some(g) => (Some(&mut g.ln2_gain), Some(&mut g.ln2_bias)),
            None => (None, None),
        };
        let dx_mid = &dx + &ln_backward(&dh2, &lc.ln2, &lw.ln2_gain, dg2, db2);

        // attention block
        let dattn = project_backward(
            &dx_mid,
            &lc.attn,
            &lw.w_o,
            lora_w.o.as_ref(),
            lc.zo.as_ref(),
            scale,
            bg.as_deref_mut().map(|g| &mut g.w_o),
            lg.as_deref_mut().and_then(|g| g.o.as_mut()),
        );
        let (dq, dk, dv) = attention_backward(&dattn, lc, &attention[l], w.config.n_heads);
        let mut dh1 = project_backward(
            &dq,
            &lc.h1,
            &lw.w_q,
            lora_w.q.as_ref(),
            lc.zq.as_ref(),
            scale,
            bg.as_deref_mut().map(|g| &mut g.w_q),
            lg.as_deref_mut().and_then(|g| g.q.as_mut()),
        );
        dh1 += &project_backward(
            &dk,
            &lc.h1,
            &lw.w_k,
            lora_w.k.as_ref(),
            lc.zk.as_ref(),
            scale,
            bg.as_deref_mut().map(|g| &mut g.w_k),
            lg.as_deref_mut().and_then(|g| g.k.as_mut()),
        );
        dh1 += &project_backward(
            &dv,
            &lc.h1,
            &lw.w_v,
            lora_w.v.as_ref(),
            lc.zv.as_ref(),
            scale,
            bg.as_deref_mut().map(|g| &mut g.w_v),
            lg.as_deref_mut().and_then(|g| g.v.as_mut()),
        );
        let (dg1, db1) = match bg {
            Some(g) => (Some(&mut g.ln1_gain), Some(&mut g.ln1_bias)),
            None => (None, None),
        };
        dx = dx_mid + ln_backward(&dh1, &lc.ln1, &lw.ln1_gain, dg1, db1);
    }

    if let Some(g) = base {
        for (i, &id) in cache.ids.iter().enumerate() {
            g.token_embedding.row_mut(id as usize).scaled_add(1.0, &dx.row(i));
            g.position_embedding.row_mut(i).scaled_add(1.0, &dx.row(i));
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn project_backward(
    dy: &Array2<f64>,
    x: &Array2<f64>,
    w: &Array2<f64>,
    lora: Option<&LoraPair>,
    z: Option<&Array2<f64>>,
    scale: f64,
    dw: Option<&mut Array2<f64>>,
    dlora: Option<&mut LoraPair>,
) -> Array2<f64> {
    let mut dx = dy.dot(w);
    if let Some(dw) = dw {
        *dw += &dy.t().dot(x);
    }
    if let (Some(pair), Some(z)) = (lora, z) {
        let dz = dy.dot(&pair.b) * scale;
        if let Some(g) = dlora {
            g.b.scaled_add(scale, &dy.t().dot(z));
            g.a += &dz.t().dot(x);
        }
        dx += &dz.dot(&pair.a);
    }
    dx
}

fn attention_backward(
    dout: &Array2<f64>,
    lc: &LayerCache,
    probs: &Array3<f64>,
    n_heads: usize,
) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
    let (t, d) = lc.q.dim();
    let dh = d / n_heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut dq = Array2::zeros((t, d));
    let mut dk = Array2::zeros((t, d));
    let mut dv = Array2::zeros((t, d));
    for h in 0..n_heads {
        let cols = s![.., h * dh..(h + 1) * dh];
        let p = probs.index_axis(Axis(0), h);
        let dout_h = dout.slice(cols);
        let dp = dout_h.dot(&lc.v.slice(cols).t());
        dv.slice_mut(cols).assign(&p.t().dot(&dout_h));
        let row_dot = (&dp * &p).sum_axis(Axis(1)).insert_axis(Axis(1));
        let ds = (&dp - &row_dot) * &p * scale;
        dq.slice_mut(cols).assign(&ds.dot(&lc.k.slice(cols)));
        dk.slice_mut(cols).assign(&ds.t().dot(&lc.q.slice(cols)));
    }
    (dq, dk, dv)
}

fn ln_backward(
    dy: &Array2<f64>,
    cache: &LnCache,
    gain: &Array1<f64>,
    dgain: Option<&mut Array1<f64>>,
    dbias: Option<&mut Array1<f64>>,
) -> Array2<f64> {
    if let Some(g) = dgain {
        *g += &(dy * &cache.xhat).sum_axis(Axis(0));
    }
    if let Some(b) = dbias {
        *b += &dy.sum_axis(Axis(0));
    }
    let dxhat = dy * gain;
    let mean = dxhat.mean_axis(Axis(1)).expect("rows").insert_axis(Axis(1));
    let mean_x = (&dxhat * &cache.xhat).mean_axis(Axis(1)).expect("rows").insert_axis(Axis(1));
    (dxhat - &mean - &(&cache.xhat * &mean_x)) * &cache.rstd.view().insert_axis(Axis(1))
}

impl Example {
    /// Target is the `yes` token for label 1, `no` otherwise.
    pub fn labeled(token_ids: Vec<u32>, label: u8, tokenizer: &super::tokenizer::Tokenizer) -> Self {
        let target = if label == 1 { tokenizer.yes_id() } else { tokenizer.no_id() };
        Self { token_ids, target }
    }
}
