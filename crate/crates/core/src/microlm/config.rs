use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// On-disk width of stored tensors. Computation is always `f64`; `F32`
/// halves file size for serving bundles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F64,
    F32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MicroLmConfig {
    pub vocab_size: usize,
    #[serde(default = "defaults::context_length")]
    pub context_length: usize,
    #[serde(default = "defaults::n_layers")]
    pub n_layers: usize,
    #[serde(default = "defaults::n_heads")]
    pub n_heads: usize,
    #[serde(default = "defaults::d_model")]
    pub d_model: usize,
    #[serde(default = "defaults::d_ff")]
    pub d_ff: usize,
    #[serde(default)]
    pub precision: Precision,
}

mod defaults {
    pub fn context_length() -> usize {
        256
    }
    pub fn n_layers() -> usize {
        2
    }
    pub fn n_heads() -> usize {
        4
    }
    pub fn d_model() -> usize {
        64
    }
    pub fn d_ff() -> usize {
        256
    }
}

impl MicroLmConfig {
    pub fn new(vocab_size: usize) -> Self {
        Self {
            vocab_size,
            context_length: defaults::context_length(),
            n_layers: defaults::n_layers(),
            n_heads: defaults::n_heads(),
            d_model: defaults::d_model(),
            d_ff: defaults::d_ff(),
            precision: Precision::F64,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("vocab_size", self.vocab_size),
            ("context_length", self.context_length),
            ("n_layers", self.n_layers),
            ("n_heads", self.n_heads),
            ("d_model", self.d_model),
            ("d_ff", self.d_ff),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::arg(format!("{name} must be positive")));
        }
        if self.d_model % self.n_heads != 0 {
            return Err(Error::arg(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        Ok(())
    }
}
