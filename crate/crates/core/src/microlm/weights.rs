use ndarray::{Array1, Array2};

use super::config::MicroLmConfig;
use crate::rng::SeededRng;

/// Flat view of one parameter tensor, used by the optimizer, gradient
/// checks and the file format.
pub struct TensorRef<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: &'a [f64],
}

pub struct TensorMut<'a> {
    pub name: String,
    pub data: &'a mut [f64],
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    pub ln1_gain: Array1<f64>,
    pub ln1_bias: Array1<f64>,
    /// Projections are stored `d_out × d_in`; `y = x · Wᵀ`.
    pub w_q: Array2<f64>,
    pub w_k: Array2<f64>,
    pub w_v: Array2<f64>,
    pub w_o: Array2<f64>,
    pub ln2_gain: Array1<f64>,
    pub ln2_bias: Array1<f64>,
    pub ff_in: Array2<f64>,
    pub ff_in_bias: Array1<f64>,
    pub ff_out: Array2<f64>,
    pub ff_out_bias: Array1<f64>,
}

/// Decoder-only transformer: learned token and absolute position
/// embeddings, pre-norm blocks, untied output head.
#[derive(Debug, Clone, PartialEq)]
pub struct MicroLmWeights {
    pub config: MicroLmConfig,
    pub token_embedding: Array2<f64>,
    pub position_embedding: Array2<f64>,
    pub layers: Vec<LayerWeights>,
    pub final_gain: Array1<f64>,
    pub final_bias: Array1<f64>,
    pub head: Array2<f64>,
}

fn gaussian(rng: &mut SeededRng, rows: usize, cols: usize, std: f64) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || std * rng.normal())
}

impl MicroLmWeights {
    pub fn init(config: &MicroLmConfig, seed: u64) -> Self {
        let mut rng = SeededRng::new(seed);
        let (d, ff, v) = (config.d_model, config.d_ff, config.vocab_size);
        let std = 0.02;
        let resid_std = std / (2.0 * config.n_layers as f64).sqrt();
        let token_embedding = gaussian(&mut rng, v, d, std);
        let position_embedding = gaussian(&mut rng, config.context_length, d, std);
        let layers = (0..config.n_layers)
            .map(|_| LayerWeights {
                ln1_gain: Array1::ones(d),
                ln1_bias: Array1::zeros(d),
                w_q: gaussian(&mut rng, d, d, std),
                w_k: gaussian(&mut rng, d, d, std),
                w_v: gaussian(&mut rng, d, d, std),
                w_o: gaussian(&mut rng, d, d, resid_std),
                ln2_gain: Array1::ones(d),
                ln2_bias: Array1::zeros(d),
                ff_in: gaussian(&mut rng, ff, d, std),
                ff_in_bias: Array1::zeros(ff),
                ff_out: gaussian(&mut rng, d, ff, resid_std),
                ff_out_bias: Array1::zeros(d),
            })
            .collect();
        Self {
            config: config.clone(),
            token_embedding,
            position_embedding,
            layers,
            final_gain: Array1::ones(d),
            final_bias: Array1::zeros(d),
            head: gaussian(&mut rng, v, d, std),
        }
    }

    /// Same shapes, all zeros. Used as a gradient accumulator.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.data.fill(0.0);
        }
        z
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.data.len()).sum()
    }

    pub fn tensors(&self) -> Vec<TensorRef<'_>> {
        let mut out = Vec::new();
        push_mat(&mut out, "token_embedding".into(), &self.token_embedding);
        push_mat(&mut out, "position_embedding".into(), &self.position_embedding);
        for (l, layer) in self.layers.iter().enumerate() {
            let p = |s: &str| format!("layers.{l}.{s}");
            push_vec(&mut out, p("ln1_gain"), &layer.ln1_gain);
            push_vec(&mut out, p("ln1_bias"), &layer.ln1_bias);
            push_mat(&mut out, p("w_q"), &layer.w_q);
            push_mat(&mut out, p("w_k"), &layer.w_k);
            push_mat(&mut out, p("w_v"), &layer.w_v);
            push_mat(&mut out, p("w_o"), &layer.w_o);
            push_vec(&mut out, p("ln2_gain"), &layer.ln2_gain);
            push_vec(&mut out, p("ln2_bias"), &layer.ln2_bias);
            push_mat(&mut out, p("ff_in"), &layer.ff_in);
            push_vec(&mut out, p("ff_in_bias"), &layer.ff_in_bias);
            push_mat(&mut out, p("ff_out"), &layer.ff_out);
            push_vec(&mut out, p("ff_out_bias"), &layer.ff_out_bias);
        }
        push_vec(&mut out, "final_gain".into(), &self.final_gain);
        push_vec(&mut out, "final_bias".into(), &self.final_bias);
        push_mat(&mut out, "head".into(), &self.head);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<TensorMut<'_>> {
        let mut out = Vec::new();
        push_mut(&mut out, "token_embedding".into(), self.token_embedding.as_slice_mut());
        push_mut(&mut out, "position_embedding".into(), self.position_embedding.as_slice_mut());
        for (l, layer) in self.layers.iter_mut().enumerate() {
            let p = |s: &str| format!("layers.{l}.{s}");
            push_mut(&mut out, p("ln1_gain"), layer.ln1_gain.as_slice_mut());
            push_mut(&mut out, p("ln1_bias"), layer.ln1_bias.as_slice_mut());
            push_mut(&mut out, p("w_q"), layer.w_q.as_slice_mut());
            push_mut(&mut out, p("w_k"), layer.w_k.as_slice_mut());
            push_mut(&mut out, p("w_v"), layer.w_v.as_slice_mut());
            push_mut(&mut out, p("w_o"), layer.w_o.as_slice_mut());
            push_mut(&mut out, p("ln2_gain"), layer.ln2_gain.as_slice_mut());
            push_mut(&mut out, p("ln2_bias"), layer.ln2_bias.as_slice_mut());
            push_mut(&mut out, p("ff_in"), layer.ff_in.as_slice_mut());
            push_mut(&mut out, p("ff_in_bias"), layer.ff_in_bias.as_slice_mut());
            push_mut(&mut out, p("ff_out"), layer.ff_out.as_slice_mut());
            push_mut(&mut out, p("ff_out_bias"), layer.ff_out_bias.as_slice_mut());
        }
        push_mut(&mut out, "final_gain".into(), self.final_gain.as_slice_mut());
        push_mut(&mut out, "final_bias".into(), self.final_bias.as_slice_mut());
        push_mut(&mut out, "head".into(), self.head.as_slice_mut());
        out
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.data.iter().all(|v| v.is_finite()))
    }

    /// Hex sha256 over tensor names, shapes and little-endian values.
    pub fn fingerprint(&self) -> String {
        fingerprint_tensors(&self.tensors())
    }
}

pub(crate) fn fingerprint_tensors(tensors: &[TensorRef<'_>]) -> String {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    for t in tensors {
        h.update(t.name.as_bytes());
        for &dim in &t.shape {
            h.update((dim as u64).to_le_bytes());
        }
        for v in t.data {
            h.update(v.to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

pub(crate) fn push_mat<'a>(out: &mut Vec<TensorRef<'a>>, name: String, m: &'a Array2<f64>) {
    out.push(TensorRef {
        name,
        shape: m.shape().to_vec(),
        data: m.as_slice().expect("standard layout"),
    });
}

pub(crate) fn push_vec<'a>(out: &mut Vec<TensorRef<'a>>, name: String, v: &'a Array1<f64>) {
    out.push(TensorRef {
        name,
        shape: vec![v.len()],
        data: v.as_slice().expect("standard layout"),
    });
}

pub(crate) fn push_mut<'a>(out: &mut Vec<TensorMut<'a>>, name: String, data: Option<&'a mut [f64]>) {
    out.push(TensorMut { name, data: data.expect("standard layout") });
}
