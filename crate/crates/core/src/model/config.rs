use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Per-view input widths `d_1..d_m`.
    pub dims: Vec<usize>,
    /// Embedding width `d_e`.
    pub d_e: usize,
    pub heads: usize,
    /// Encoder and decoder block count.
    pub layers: usize,
    pub mlp_hidden: usize,
    /// Residual connections around attention and MLP.
    pub residual: bool,
    pub ln_eps: f64,
}

impl ModelConfig {
    pub fn new(dims: Vec<usize>) -> Self {
        ModelConfig {
            dims,
            d_e: 128,
            heads: 4,
            layers: 1,
            mlp_hidden: 256,
            residual: true,
            ln_eps: 1e-5,
        }
    }

    pub fn m(&self) -> usize {
        self.dims.len()
    }

    pub fn head_dim(&self) -> usize {
        self.d_e / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.is_empty() || self.dims.contains(&0) {
            return Err(Error::Config(format!("invalid view dims {:?}", self.dims)));
        }
        if self.heads == 0 || self.d_e % self.heads != 0 {
            return Err(Error::Config(format!(
                "d_e = {} is not divisible by heads = {}",
                self.d_e, self.heads
            )));
        }
        if self.d_e < 2 {
            return Err(Error::Config("d_e must be at least 2".into()));
        }
        if self.layers == 0 {
            return Err(Error::Config("layers must be at least 1".into()));
        }
        if self.mlp_hidden == 0 {
            return Err(Error::Config("mlp_hidden must be at least 1".into()));
        }
        if !(self.ln_eps > 0.0) {
            return Err(Error::Config("ln_eps must be positive".into()));
        }
        Ok(())
    }
}
