//! Low-rank adapters on attention projections.
//!
//! An adapted projection computes `y = x·Wᵀ + (alpha/r)·(x·Aᵀ)·Bᵀ` with
//! `A: r × d_in` and `B: d_out × r`. `B` starts at zero so a fresh adapter
//! reproduces the base model exactly.

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::weights::{push_mat, push_mut, MicroLmWeights, TensorMut, TensorRef};
use crate::error::{Error, Result};
use crate::rng::SeededRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Projection {
    Q,
    K,
    V,
    O,
}

impl Projection {
    pub const ALL: [Projection; 4] = [Projection::Q, Projection::K, Projection::V, Projection::O];
}

impl fmt::Display for Projection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Projection::Q => "q",
            Projection::K => "k",
            Projection::V => "v",
            Projection::O => "o",
        })
    }
}

impl FromStr for Projection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "q" | "w_q" => Ok(Projection::Q),
            "k" | "w_k" => Ok(Projection::K),
            "v" | "w_v" => Ok(Projection::V),
            "o" | "w_o" => Ok(Projection::O),
            other => Err(Error::arg(format!("unknown projection {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoraConfig {
    pub rank: usize,
    pub alpha: f64,
    /// Adapted projections, applied in every layer.
    pub targets: Vec<Projection>,
}

impl Default for LoraConfig {
    fn default() -> Self {
        Self {
            rank: 4,
            alpha: 8.0,
            targets: vec![Projection::Q, Projection::V],
        }
    }
}

impl LoraConfig {
    pub fn scale(&self) -> f64 {
        self.alpha / self.rank as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoraPair {
    /// `r × d_in`
    pub a: Array2<f64>,
    /// `d_out × r`
    pub b: Array2<f64>,
}

impl LoraPair {
    pub fn delta(&self, scale: f64) -> Array2<f64> {
        self.b.dot(&self.a) * scale
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LayerLora {
    pub q: Option<LoraPair>,
    pub k: Option<LoraPair>,
    pub v: Option<LoraPair>,
    pub o: Option<LoraPair>,
}

impl LayerLora {
    pub fn get(&self, p: Projection) -> Option<&LoraPair> {
        match p {
            Projection::Q => self.q.as_ref(),
            Projection::K => self.k.as_ref(),
            Projection::V => self.v.as_ref(),
            Projection::O => self.o.as_ref(),
        }
    }

    fn slot(&mut self, p: Projection) -> &mut Option<LoraPair> {
        match p {
            Projection::Q => &mut self.q,
            Projection::K => &mut self.k,
            Projection::V => &mut self.v,
            Projection::O => &mut self.o,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoraAdapter {
    pub config: LoraConfig,
    pub layers: Vec<LayerLora>,
}

impl LoraAdapter {
    /// `A ~ N(0, 1/d_in)`, `B = 0`.
    pub fn init(base: &MicroLmWeights, config: &LoraConfig, seed: u64) -> Result<Self> {
        if config.rank == 0 {
            return Err(Error::arg("LoRA rank must be positive"));
        }
        if config.targets.is_empty() {
            return Err(Error::arg("LoRA needs at least one target projection"));
        }
        let mut targets = config.targets.clone();
        targets.sort();
        targets.dedup();
        let config = LoraConfig { targets, ..config.clone() };
        let d = base.config.d_model;
        let mut rng = SeededRng::new(seed);
        let std = 1.0 / (d as f64).sqrt();
        let layers = (0..base.config.n_layers)
            .map(|_| {
                let mut layer = LayerLora::default();
                for &p in &config.targets {
                    let a = Array2::from_shape_simple_fn((config.rank, d), || std * rng.normal());
                    *layer.slot(p) = Some(LoraPair { a, b: Array2::zeros((d, config.rank)) });
                }
                layer
            })
            .collect();
        Ok(Self { config, layers })
    }

    pub fn scale(&self) -> f64 {
        self.config.scale()
    }

    /// `Σ r·(d_in + d_out)` over every adapted matrix.
    pub fn trainable_parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.data.len()).sum()
    }

    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.data.fill(0.0);
        }
        z
    }

    pub fn tensors(&self) -> Vec<TensorRef<'_>> {
        let mut out = Vec::new();
        for (l, layer) in self.layers.iter().enumerate() {
            for p in Projection::ALL {
                if let Some(pair) = layer.get(p) {
                    push_mat(&mut out, format!("layers.{l}.{p}.a"), &pair.a);
                    push_mat(&mut out, format!("layers.{l}.{p}.b"), &pair.b);
                }
            }
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<TensorMut<'_>> {
        let mut out = Vec::new();
        for (l, layer) in self.layers.iter_mut().enumerate() {
            let slots = [
                (Projection::Q, &mut layer.q),
                (Projection::K, &mut layer.k),
                (Projection::V, &mut layer.v),
                (Projection::O, &mut layer.o),
            ];
            for (p, slot) in slots {
                if let Some(pair) = slot.as_mut() {
                    push_mut(&mut out, format!("layers.{l}.{p}.a"), pair.a.as_slice_mut());
                    push_mut(&mut out, format!("layers.{l}.{p}.b"), pair.b.as_slice_mut());
                }
            }
        }
        out
    }

    pub fn check_compatible(&self, base: &MicroLmWeights) -> Result<()> {
        if self.layers.len() != base.config.n_layers {
            return Err(Error::arg(format!(
                "adapter has {} layers, model has {}",
                self.layers.len(),
                base.config.n_layers
            )));
        }
        let d = base.config.d_model;
        for (l, layer) in self.layers.iter().enumerate() {
            for p in Projection::ALL {
                if let Some(pair) = layer.get(p) {
                    let r = self.config.rank;
                    if pair.a.dim() != (r, d) || pair.b.dim() != (d, r) {
                        return Err(Error::arg(format!(
                            "adapter layer {l} {p}: shapes {:?}/{:?} do not fit d_model {d} rank {r}",
                            pair.a.dim(),
                            pair.b.dim()
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.data.iter().all(|v| v.is_finite()))
    }
}

/// Folds the adapter into the base: `W' = W + (alpha/r)·B·A` per target.
pub fn merge_adapter(base: &MicroLmWeights, adapter: &LoraAdapter) -> Result<MicroLmWeights> {
    adapter.check_compatible(base)?;
    let scale = adapter.scale();
    let mut merged = base.clone();
    for (layer, lora) in merged.layers.iter_mut().zip(&adapter.layers) {
        for p in Projection::ALL {
            if let Some(pair) = lora.get(p) {
                let w = match p {
                    Projection::Q => &mut layer.w_q,
                    Projection::K => &mut layer.w_k,
                    Projection::V => &mut layer.w_v,
                    Projection::O => &mut layer.w_o,
                };
                *w += &pair.delta(scale);
            }
        }
    }
    Ok(merged)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::microlm::config::MicroLmConfig;

    fn base() -> MicroLmWeights {
        MicroLmWeights::init(&MicroLmConfig::new(30), 0)
    }

    #[test]
    fn zero_init_b_and_count() {
        let w = base();
        let a = LoraAdapter::init(&w, &LoraConfig::default(), 1).unwrap();
        assert!(a.layers.iter().all(|l| l.q.as_ref().unwrap().b.iter().all(|&v| v == 0.0)));
        assert!(a.layers[0].k.is_none());
        // 2 layers × {Q, V} × 4·(64 + 64)
        assert_eq!(a.trainable_parameter_count(), 2 * 2 * 4 * (64 + 64));
    }

    #[test]
    fn merge_with_zero_b_is_identity() {
        let w = base();
        let a = LoraAdapter::init(&w, &LoraConfig::default(), 1).unwrap();
        assert_eq!(merge_adapter(&w, &a).unwrap(), w);
    }

    #[test]
    fn merging_twice_doubles_the_update() {
        let w = base();
        let mut a = LoraAdapter::init(&w, &LoraConfig::default(), 1).unwrap();
        a.layers[0].q.as_mut().unwrap().b.fill(0.01);
        let once = merge_adapter(&w, &a).unwrap();
        let twice = merge_adapter(&once, &a).unwrap();
        assert_ne!(once, twice);
        let delta = a.layers[0].q.as_ref().unwrap().delta(a.scale());
        let expected = &w.layers[0].w_q + &(&delta * 2.0);
        let err = (&twice.layers[0].w_q - &expected).mapv(f64::abs).fold(0.0f64, |m, &v| m.max(v));
        assert!(err < 1e-15);
    }

    #[test]
    fn incompatible_shapes_rejected() {
        let w = base();
        let other = MicroLmWeights::init(&MicroLmConfig { d_model: 32, ..MicroLmConfig::new(30) }, 0);
        let a = LoraAdapter::init(&other, &LoraConfig::default(), 1).unwrap();
        assert!(merge_adapter(&w, &a).is_err());
        assert!(LoraAdapter::init(&w, &LoraConfig { rank: 0, ..Default::default() }, 0).is_err());
    }
}
