//! k-nearest-neighbour graphs over imputed views and the recurrent graph
//! loss against the previous epoch's embeddings.

use std::io::Write as _;
use std::path::Path;

use rayon::prelude::*;

use crate::autodiff::{Tape, Tensor, Var};
use crate::data::ImputedDataset;
use crate::error::{Error, Result};

/// Directed binary kNN adjacency of one view, stored as neighbour lists.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeighborGraph {
    k: usize,
    neighbors: Vec<Vec<usize>>,
    /// Requested `k` when it had to be clamped to `n - 1`.
    pub clamped_from: Option<usize>,
}

impl NeighborGraph {
    pub fn from_neighbors(k: usize, neighbors: Vec<Vec<usize>>) -> Self {
        NeighborGraph {
            k,
            neighbors,
            clamped_from: None,
        }
    }

    pub fn n(&self) -> usize {
        self.neighbors.len()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    /// Neighbours of `i`, nearest first.
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        self.neighbors[i].contains(&j)
    }

    pub fn to_dense(&self) -> Vec<Vec<u8>> {
        let n = self.n();
        self.neighbors
            .iter()
            .map(|nb| {
                let mut row = vec![0; n];
                for &j in nb {
                    row[j] = 1;
                }
                row
            })
            .collect()
    }
}

/// One graph per view.
pub type NeighborGraphs = Vec<NeighborGraph>;

/// `G[i, j] = 1` iff `j ≠ i` is among the `k` points nearest to `i` in
/// Euclidean distance, ties going to the lower index. `k ≥ n` is clamped to
/// `n − 1`.
pub fn knn_graph(x: &Tensor, k: usize) -> Result<NeighborGraph> {
    let n = x.rows();
    if x.shape().len() != 2 || n < 2 {
        return Err(Error::Range(format!("knn needs at least two points, got shape {:?}", x.shape())));
    }
    if k == 0 {
        return Err(Error::Range("k must be at least 1".into()));
    }
    let (k_eff, clamped_from) = if k >= n {
        log::warn!("k = {k} >= n = {n}; using k = {}", n - 1);
        (n - 1, Some(k))
    } else {
        (k, None)
    };
    let neighbors = (0..n)
        .into_par_iter()
        .map(|i| {
            let xi = x.row(i);
            let mut cand: Vec<(f64, usize)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| {
                    let d: f64 = xi.iter().zip(x.row(j)).map(|(a, b)| (a - b) * (a - b)).sum();
                    (d, j)
                })
                .collect();
            let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
            cand.select_nth_unstable_by(k_eff - 1, cmp);
            cand.truncate(k_eff);
            cand.sort_unstable_by(cmp);
            cand.into_iter().map(|(_, j)| j).collect()
        })
        .collect();
    Ok(NeighborGraph {
        k: k_eff,
        neighbors,
        clamped_from,
    })
}

/// Fresh kNN graphs for every view of the imputed data.
pub fn rebuild_graphs(imputed: &ImputedDataset, k: usize) -> Result<NeighborGraphs> {
    imputed.views.iter().map(|x| knn_graph(x, k)).collect()
}

/// Writes `view,i,j` triplets (all zero-based) with a header line.
pub fn write_graph_csv(path: &Path, graphs: &[NeighborGraph]) -> Result<()> {
    let io = |e| Error::io(path, e);
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
    writeln!(f, "view,i,j").map_err(io)?;
    for (v, g) in graphs.iter().enumerate() {
        for i in 0..g.n() {
            for &j in g.neighbors(i) {
                writeln!(f, "{v},{i},{j}").map_err(io)?;
            }
        }
    }
    f.flush().map_err(io)
}

/// Embeddings `n × m × d_e` from the previous pass over the data.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingBuffer {
    n: usize,
    m: usize,
    d: usize,
    data: Vec<f64>,
    filled: Vec<bool>,
}

impl EmbeddingBuffer {
    pub fn new(n: usize, m: usize, d: usize) -> Self {
        EmbeddingBuffer {
            n,
            m,
            d,
            data: vec![0.0; n * m * d],
            filled: vec![false; n],
        }
    }

    pub fn is_full(&self) -> bool {
        self.filled.iter().all(|&f| f)
    }

    pub fn is_filled(&self, i: usize) -> bool {
        self.filled[i]
    }

    /// Embedding of sample `i` in view `v`.
    pub fn get(&self, i: usize, v: usize) -> &[f64] {
        let off = (i * self.m + v) * self.d;
        &self.data[off..off + self.d]
    }

    /// As a `[n·m, d_e]` tensor with row `i·m + v`.
    pub fn as_tensor(&self) -> Tensor {
        Tensor::new(vec![self.n * self.m, self.d], self.data.clone()).expect("buffer shape")
    }

    /// Overwrites rows `indices` with `z` given as `[b·m, d_e]` (row
    /// `k·m + v` belongs to `indices[k]`).
    pub fn update(&mut self, z: &Tensor, indices: &[usize]) -> Result<()> {
        if z.numel() != indices.len() * self.m * self.d {
            return Err(Error::shape("buffer update", z.shape(), &[indices.len() * self.m, self.d]));
        }
        let mut seen = vec![false; self.n];
        for &i in indices {
            if i >= self.n {
                return Err(Error::InvalidBatch(format!("index {i} out of range for n = {}", self.n)));
            }
            if std::mem::replace(&mut seen[i], true) {
                return Err(Error::InvalidBatch(format!("index {i} appears twice in one batch")));
            }
        }
        let chunk = self.m * self.d;
        for (k, &i) in indices.iter().enumerate() {
            self.data[i * chunk..(i + 1) * chunk].copy_from_slice(&z.data()[k * chunk..(k + 1) * chunk]);
            self.filled[i] = true;
        }
        Ok(())
    }
}

/// Mini-batch recurrent graph loss
///
/// `(1 / (m·n·b)) Σ_v Σ_{i ∈ batch} Σ_j ‖z[i, v] − buffer[j, v]‖² G_v[i, j]`
///
/// with `z` the `[b·m, d_e]` encoder output for `batch_indices`. The buffer
/// and graphs are constants, so only `z` receives a gradient.
pub fn graph_loss_batch(
    tape: &mut Tape,
    z: Var,
    buffer: &EmbeddingBuffer,
    graphs: &[NeighborGraph],
    batch_indices: &[usize],
) -> Result<Var> {
    if !buffer.is_full() {
        return Err(Error::Sequencing(
            "graph loss needs embeddings from a completed epoch".into(),
        ));
    }
    let (n, m, d) = (buffer.n, buffer.m, buffer.d);
    let b = batch_indices.len();
    if graphs.len() != m || graphs.iter().any(|g| g.n() != n) {
        return Err(Error::shape("graph loss graphs", &[m, n], &[graphs.len()]));
    }
    if tape.value(z).shape() != [b * m, d] {
        return Err(Error::shape("graph loss z", tape.value(z).shape(), &[b * m, d]));
    }
    let mut pairs = Vec::new();
    let mut rows: Vec<usize> = Vec::new();
    let mut slot = std::collections::HashMap::new();
    for (k, &gi) in batch_indices.iter().enumerate() {
        for (v, g) in graphs.iter().enumerate() {
            for &j in g.neighbors(gi) {
                let key = j * m + v;
                let c = *slot.entry(key).or_insert_with(|| {
                    rows.push(key);
                    rows.len() - 1
                });
                pairs.push((k * m + v, c));
            }
        }
    }
    let total = if pairs.is_empty() {
        let zero = tape.scale(z, 0.0);
        tape.sum(zero)
    } else {
        let mut targets = Vec::with_capacity(rows.len() * d);
        for &r in &rows {
            targets.extend_from_slice(buffer.get(r / m, r % m));
        }
        let targets = Tensor::new(vec![rows.len(), d], targets)?;
        tape.pair_sq_dist(z, targets, pairs)?
    };
    Ok(tape.scale(total, 1.0 / (m * n * b) as f64))
}
