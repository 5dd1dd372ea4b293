use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{recon_loss_full, recon_loss_masked, total_loss, Adam, TrainConfig};
use crate::autodiff::{Tape, Tensor, Var};
use crate::data::{ImputedDataset, MaskMatrix, MultiViewDataset};
use crate::error::{Error, Result};
use crate::graph::{graph_loss_batch, rebuild_graphs, EmbeddingBuffer, NeighborGraph, NeighborGraphs};
use crate::model::{forward, ModelState, Stage};
use crate::rng::{derive_seed, seeded, streams};

/// Rows per chunk for full-dataset inference passes.
const INFER_CHUNK: usize = 256;

/// Epoch means of the per-batch losses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    /// 1-based within its stage.
    pub epoch: usize,
    pub stage: u8,
    pub recon: f64,
    /// 0 when the graph term was not active.
    pub graph: f64,
    pub total: f64,
}

#[derive(Debug, Clone)]
pub struct Stage1Output {
    /// Original entries where observed, reconstructions elsewhere.
    pub imputed: ImputedDataset,
    pub graphs: NeighborGraphs,
    pub buffer: EmbeddingBuffer,
    pub log: Vec<EpochLoss>,
}

#[derive(Debug, Clone)]
pub struct Stage2Output {
    /// Fused representation of every sample, `n × d_e`.
    pub fused: Tensor,
    pub log: Vec<EpochLoss>,
}

fn shuffled(n: usize, seed: u64, global_epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seeded(derive_seed(seed, streams::SHUFFLE_BASE + global_epoch as u64)));
    order
}

struct Step {
    recon: f64,
    graph: Option<f64>,
    total: f64,
}

fn optimize(tape: &mut Tape, p: &[Var], loss: Var, model: &mut ModelState, adam: &mut Adam) -> Result<()> {
    tape.backward(loss)?;
    let grads: Vec<Option<&Tensor>> = p.iter().map(|&v| tape.grad(v)).collect();
    adam.step(model.params_mut(), &grads)
}

struct EpochMeans {
    recon: f64,
    graph: f64,
    total: f64,
    batches: usize,
    graph_active: bool,
}

impl EpochMeans {
    fn new() -> Self {
        EpochMeans {
            recon: 0.0,
            graph: 0.0,
            total: 0.0,
            batches: 0,
            graph_active: false,
        }
    }

    fn push(&mut self, s: &Step) {
        self.recon += s.recon;
        self.total += s.total;
        if let Some(g) = s.graph {
            self.graph += g;
            self.graph_active = true;
        }
        self.batches += 1;
    }

    fn finish(self, stage: u8, epoch: usize) -> Result<EpochLoss> {
        let k = self.batches as f64;
        let e = EpochLoss {
            epoch,
            stage,
            recon: self.recon / k,
            graph: if self.graph_active { self.graph / k } else { 0.0 },
            total: self.total / k,
        };
        if ![e.recon, e.graph, e.total].iter().all(|x| x.is_finite()) {
            log::error!("stage {stage} epoch {epoch}: non-finite loss");
            return Err(Error::NonFinite { stage, epoch });
        }
        log::info!(
            "stage {stage} epoch {epoch}: recon {:.6} graph {:.6} total {:.6}",
            e.recon,
            e.graph,
            e.total
        );
        Ok(e)
    }
}

fn scalar(tape: &Tape, v: Var) -> f64 {
    tape.value(v).data()[0]
}

/// Recovery stage on zero-filled, normalized data. `observe` sees the
/// imputed data and rebuilt graphs at the end of every epoch.
pub fn train_stage1_with(
    model: &mut ModelState,
    adam: &mut Adam,
    data: &MultiViewDataset,
    mask: &MaskMatrix,
    cfg: &TrainConfig,
    observe: &mut dyn FnMut(usize, &ImputedDataset, &[NeighborGraph]),
) -> Result<Stage1Output> {
    let (n, m, d_e) = (data.n(), data.m(), model.config().d_e);
    if mask.n() != n || mask.m() != m {
        return Err(Error::shape("stage 1 mask", &[mask.n(), mask.m()], &[n, m]));
    }
    let mut buffer = EmbeddingBuffer::new(n, m, d_e);
    let mut graphs: Option<NeighborGraphs> = None;
    let mut imputed = None;
    let mut log = Vec::with_capacity(cfg.e1);
    for epoch in 1..=cfg.e1 {
        let mut means = EpochMeans::new();
        for batch in shuffled(n, cfg.seed, epoch - 1).chunks(cfg.batch_size) {
            let mut tape = Tape::new();
            let p = model.bind(&mut tape, true);
            let views = data.batch(batch);
            let bmask = mask.select_rows(batch);
            let out = forward(&mut tape, &p, model, &views, Stage::Recovery, Some(&bmask))?;
            let recon = recon_loss_masked(&mut tape, &out.recon, &views, &bmask)?;
            let graph = match &graphs {
                Some(g) => Some(graph_loss_batch(&mut tape, out.z, &buffer, g, batch)?),
                None => None,
            };
            let total = total_loss(&mut tape, recon, graph, cfg.beta)?;
            means.push(&Step {
                recon: scalar(&tape, recon),
                graph: graph.map(|g| scalar(&tape, g)),
                total: scalar(&tape, total),
            });
            optimize(&mut tape, &p, total, model, adam)?;
            buffer.update(tape.value(out.z), batch)?;
        }
        log.push(means.finish(1, epoch)?);

        let inf = model.infer(data.views(), Stage::Recovery, Some(mask), INFER_CHUNK)?;
        let x_prime = ImputedDataset::from_reconstruction(data.views(), &inf.recon, mask)?;
        let g = rebuild_graphs(&x_prime, cfg.k_neighbors)?;
        observe(epoch, &x_prime, &g);
        graphs = Some(g);
        imputed = Some(x_prime);
    }
    Ok(Stage1Output {
        imputed: imputed.expect("at least one epoch"),
        graphs: graphs.expect("at least one epoch"),
        buffer,
        log,
    })
}

pub fn train_stage1(
    model: &mut ModelState,
    adam: &mut Adam,
    data: &MultiViewDataset,
    mask: &MaskMatrix,
    cfg: &TrainConfig,
) -> Result<Stage1Output> {
    train_stage1_with(model, adam, data, mask, cfg, &mut |_, _, _| {})
}

/// Clustering stage on the imputed data with the graphs held fixed.
pub fn train_stage2(
    model: &mut ModelState,
    adam: &mut Adam,
    imputed: &ImputedDataset,
    graphs: &[NeighborGraph],
    buffer: &mut EmbeddingBuffer,
    cfg: &TrainConfig,
) -> Result<Stage2Output> {
    let views = &imputed.views;
    let n = views.first().map_or(0, Tensor::rows);
    let mut log = Vec::with_capacity(cfg.e2);
    for epoch in 1..=cfg.e2 {
        let mut means = EpochMeans::new();
        for batch in shuffled(n, cfg.seed, cfg.e1 + epoch - 1).chunks(cfg.batch_size) {
            let mut tape = Tape::new();
            let p = model.bind(&mut tape, true);
            let bviews: Vec<Tensor> = views.iter().map(|x| x.select_rows(batch)).collect();
            let out = forward(&mut tape, &p, model, &bviews, Stage::Clustering, None)?;
            let recon = recon_loss_full(&mut tape, &out.recon, &bviews)?;
            let graph = graph_loss_batch(&mut tape, out.z, buffer, graphs, batch)?;
            let total = total_loss(&mut tape, recon, Some(graph), cfg.beta)?;
            means.push(&Step {
                recon: scalar(&tape, recon),
                graph: Some(scalar(&tape, graph)),
                total: scalar(&tape, total),
            });
            optimize(&mut tape, &p, total, model, adam)?;
            buffer.update(tape.value(out.z), batch)?;
        }
        log.push(means.finish(2, epoch)?);
    }
    let fused = model.infer(views, Stage::Clustering, None, INFER_CHUNK)?.fused;
    Ok(Stage2Output { fused, log })
}
