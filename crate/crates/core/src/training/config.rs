use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    /// Weight of the graph term.
    pub beta: f64,
    /// Neighbors per sample in each view graph.
    pub k_neighbors: usize,
    /// Recovery-stage epochs.
    pub e1: usize,
    /// Clustering-stage epochs.
    pub e2: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub kmeans_restarts: usize,
    /// Start the clustering stage from fresh weights instead of continuing.
    pub reinit_stage2: bool,
    /// Cluster count; falls back to the dataset's class count.
    pub clusters: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.001,
            beta: 1.0,
            k_neighbors: 10,
            e1: 50,
            e2: 50,
            batch_size: 128,
            seed: 0,
            kmeans_restarts: 10,
            reinit_stage2: false,
            clusters: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(Error::Config(msg.into()));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return fail("lr must be positive");
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return fail("beta must be non-negative");
        }
        if self.k_neighbors == 0 {
            return fail("k_neighbors must be at least 1");
        }
        if self.e1 == 0 || self.e2 == 0 {
            return fail("e1 and e2 must be at least 1");
        }
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1");
        }
        if self.kmeans_restarts == 0 {
            return fail("kmeans_restarts must be at least 1");
        }
        if self.clusters == Some(0) {
            return fail("clusters must be at least 1");
        }
        Ok(())
    }
}
