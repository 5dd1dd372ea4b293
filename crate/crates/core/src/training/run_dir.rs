//! Run directory layout:
//!
//! ```text
//! config.json            effective hyperparameters (flat keys)
//! losses.csv             epoch,stage,recon,graph,total
//! checkpoint.json        final weights
//! scaler.json            per-feature min/max used for normalization
//! mask.csv               availability mask the run trained with
//! recovered_view_<v>.csv imputed views, normalized units, v = 1..m
//! graph.csv              view,i,j neighbor triplets
//! embeddings.csv         fused representation, n × d_e
//! predictions.csv        cluster id per sample
//! metrics.json           {acc, nmi, purity, inertia, seed}
//! ```

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{EpochLoss, RunArtifacts, TrainConfig};
use crate::data::{write_labels, write_mask, write_matrix_csv};
use crate::error::{Error, Result};
use crate::graph::write_graph_csv;
use crate::model::ModelConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectiveConfig {
    #[serde(flatten)]
    pub model: ModelConfig,
    #[serde(flatten)]
    pub train: TrainConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct MetricsFile {
    #[serde(skip_serializing_if = "Option::is_none")]
    acc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    nmi: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    purity: Option<f64>,
    inertia: f64,
    seed: u64,
}

/// Paths inside a run directory.
#[derive(Debug, Clone)]
pub struct RunFiles {
    pub dir: PathBuf,
}

impl RunFiles {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        RunFiles { dir: dir.into() }
    }

    pub fn config(&self) -> PathBuf {
        self.dir.join("config.json")
    }
    pub fn losses(&self) -> PathBuf {
        self.dir.join("losses.csv")
    }
    pub fn checkpoint(&self) -> PathBuf {
        self.dir.join("checkpoint.json")
    }
    pub fn scaler(&self) -> PathBuf {
        self.dir.join("scaler.json")
    }
    pub fn mask(&self) -> PathBuf {
        self.dir.join("mask.csv")
    }
    pub fn recovered(&self, v: usize) -> PathBuf {
        self.dir.join(format!("recovered_view_{}.csv", v + 1))
    }
    pub fn graph(&self) -> PathBuf {
        self.dir.join("graph.csv")
    }
    pub fn embeddings(&self) -> PathBuf {
        self.dir.join("embeddings.csv")
    }
    pub fn predictions(&self) -> PathBuf {
        self.dir.join("predictions.csv")
    }
    pub fn metrics(&self) -> PathBuf {
        self.dir.join("metrics.json")
    }
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Json {
        path: path.into(),
        source: e,
    })?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn write_losses_csv(path: &Path, log: &[EpochLoss]) -> Result<()> {
    let mut s = String::from("epoch,stage,recon,graph,total\n");
    for e in log {
        writeln!(s, "{},{},{},{},{}", e.epoch, e.stage, e.recon, e.graph, e.total).unwrap();
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

pub fn read_losses_csv(path: &Path) -> Result<Vec<EpochLoss>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let parse_err = |line: usize, msg: String| Error::Parse {
        path: path.into(),
        line,
        msg,
    };
    let mut out = Vec::new();
    for (k, line) in text.lines().enumerate().skip(1) {
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 5 {
            return Err(parse_err(k + 1, format!("expected 5 fields, found {}", f.len())));
        }
        let int = |s: &str| s.parse::<usize>().map_err(|e| parse_err(k + 1, e.to_string()));
        let num = |s: &str| s.parse::<f64>().map_err(|e| parse_err(k + 1, e.to_string()));
        out.push(EpochLoss {
            epoch: int(f[0])?,
            stage: int(f[1])? as u8,
            recon: num(f[2])?,
            graph: num(f[3])?,
            total: num(f[4])?,
        });
    }
    Ok(out)
}

impl RunArtifacts {
    pub fn effective_config(&self) -> EffectiveConfig {
        EffectiveConfig {
            model: self.model_config.clone(),
            train: self.train_config.clone(),
        }
    }

    pub fn write(&self, dir: &Path) -> Result<RunFiles> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let files = RunFiles::new(dir);
        write_json(&files.config(), &self.effective_config())?;
        write_losses_csv(&files.losses(), &self.log)?;
        self.model.save(&files.checkpoint())?;
        write_json(&files.scaler(), &self.scaler)?;
        write_mask(&files.mask(), &self.mask)?;
        for (v, x) in self.imputed.views.iter().enumerate() {
            write_matrix_csv(&files.recovered(v), x)?;
        }
        write_graph_csv(&files.graph(), &self.graphs)?;
        write_matrix_csv(&files.embeddings(), &self.fused)?;
        write_labels(&files.predictions(), &self.clusters.labels)?;
        let metrics = MetricsFile {
            acc: self.metrics.map(|m| m.acc),
            nmi: self.metrics.map(|m| m.nmi),
            purity: self.metrics.map(|m| m.purity),
            inertia: self.clusters.inertia,
            seed: self.train_config.seed,
        };
        write_json(&files.metrics(), &metrics)?;
        Ok(files)
    }
}
