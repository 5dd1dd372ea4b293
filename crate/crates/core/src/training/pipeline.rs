use super::{train_stage1, train_stage2, Adam, EpochLoss, TrainConfig};
use crate::autodiff::Tensor;
use crate::cluster_eval::{evaluate, kmeans, ClusterResult, Metrics};
use crate::data::{normalize, zero_fill, ImputedDataset, MaskMatrix, MultiViewDataset, Scaler};
use crate::error::{Error, Result};
use crate::graph::NeighborGraphs;
use crate::model::{ModelConfig, ModelState};
use crate::rng::{derive_seed, streams};

/// Everything a finished run produces.
#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub model_config: ModelConfig,
    pub train_config: TrainConfig,
    pub model: ModelState,
    pub scaler: Scaler,
    pub mask: MaskMatrix,
    /// Stage-1 imputation in normalized units; the clustering-stage input.
    pub imputed: ImputedDataset,
    pub graphs: NeighborGraphs,
    pub fused: Tensor,
    pub log: Vec<EpochLoss>,
    pub clusters: ClusterResult,
    pub metrics: Option<Metrics>,
}

/// Normalize, zero-fill, train both stages, then run k-means on the fused
/// representation. Every random draw derives from `cfg.seed`.
pub fn run_pipeline(
    dataset: &MultiViewDataset,
    mask: &MaskMatrix,
    model_config: &ModelConfig,
    cfg: &TrainConfig,
) -> Result<RunArtifacts> {
    cfg.validate()?;
    model_config.validate()?;
    if model_config.dims != dataset.dims() {
        return Err(Error::Config(format!(
            "model dims {:?} do not match dataset dims {:?}",
            model_config.dims,
            dataset.dims()
        )));
    }
    let clusters = cfg
        .clusters
        .or(dataset.classes())
        .ok_or_else(|| Error::Config("cluster count unknown: set clusters or provide c in meta.json".into()))?;

    let (scaled, scaler) = normalize(dataset, Some(mask))?;
    let filled = zero_fill(&scaled, mask)?;

    let mut model = ModelState::init(model_config, derive_seed(cfg.seed, streams::INIT))?;
    let mut adam = Adam::new(model.params(), cfg.lr);
    let stage1 = train_stage1(&mut model, &mut adam, &filled, mask, cfg)?;
    if cfg.reinit_stage2 {
        model = ModelState::init(model_config, derive_seed(cfg.seed, streams::REINIT))?;
        adam = Adam::new(model.params(), cfg.lr);
    }
    let mut buffer = stage1.buffer;
    let stage2 = train_stage2(&mut model, &mut adam, &stage1.imputed, &stage1.graphs, &mut buffer, cfg)?;

    let result = kmeans(
        &stage2.fused,
        clusters,
        cfg.kmeans_restarts,
        derive_seed(cfg.seed, streams::KMEANS),
    )?;
    let metrics = dataset.labels().map(|t| evaluate(&result.labels, t)).transpose()?;
    let mut log = stage1.log;
    log.extend(stage2.log);
    Ok(RunArtifacts {
        model_config: model_config.clone(),
        train_config: cfg.clone(),
        model,
        scaler,
        mask: mask.clone(),
        imputed: stage1.imputed,
        graphs: stage1.graphs,
        fused: stage2.fused,
        log,
        clusters: result,
        metrics,
    })
}
