use rand::Rng as _;
use rayon::prelude::*;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, seeded, Rng};

pub const MAX_ITERS: usize = 300;

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterResult {
    /// Hard assignment in `[0, c)` per sample.
    pub labels: Vec<usize>,
    /// `c × d` centroids.
    pub centroids: Tensor,
    /// Sum of squared distances to the assigned centroids.
    pub inertia: f64,
    /// Inertia after every assignment step of the winning run.
    pub trace: Vec<f64>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(x: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (k, c) in centroids.iter().enumerate() {
        let d = sq_dist(x, c);
        if d < best.1 {
            best = (k, d);
        }
    }
    best
}

fn seed_centroids(z: &Tensor, c: usize, rng: &mut Rng) -> Vec<Vec<f64>> {
    let n = z.rows();
    let mut centroids = vec![z.row(rng.gen_range(0..n)).to_vec()];
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(z.row(i), &centroids[0])).collect();
    while centroids.len() < c {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut r = rng.gen::<f64>() * total;
            let mut pick = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if r < w {
                    pick = i;
                    break;
                }
                r -= w;
            }
            pick
        } else {
            rng.gen_range(0..n)
        };
        let next = z.row(pick).to_vec();
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(z.row(i), &next));
        }
        centroids.push(next);
    }
    centroids
}

/// One k-means++ seeded Lloyd run.
pub fn kmeans_single(z: &Tensor, c: usize, rng: &mut Rng) -> Result<ClusterResult> {
    let (n, d) = (z.rows(), z.last_dim());
    if c == 0 {
        return Err(Error::Range("cluster count must be at least 1".into()));
    }
    if c > n {
        return Err(Error::Infeasible(format!("{c} clusters requested for {n} samples")));
    }
    let mut centroids = seed_centroids(z, c, rng);
    let mut labels = vec![usize::MAX; n];
    let mut trace = Vec::new();
    for _ in 0..MAX_ITERS {
        let mut changed = false;
        let mut inertia = 0.0;
        for i in 0..n {
            let (k, dist) = nearest(z.row(i), &centroids);
            changed |= labels[i] != k;
            labels[i] = k;
            inertia += dist;
        }
        trace.push(inertia);
        if !changed {
            break;
        }
        let mut sums = vec![vec![0.0; d]; c];
        let mut counts = vec![0usize; c];
        for i in 0..n {
            counts[labels[i]] += 1;
            for (s, x) in sums[labels[i]].iter_mut().zip(z.row(i)) {
                *s += x;
            }
        }
        for k in 0..c {
            if counts[k] > 0 {
                centroids[k] = sums[k].iter().map(|s| s / counts[k] as f64).collect();
            }
        }
        // empty cluster: take the point farthest from the largest cluster's centroid
        for k in 0..c {
            if counts[k] > 0 {
                continue;
            }
            let big = (0..c).max_by_key(|&j| (counts[j], std::cmp::Reverse(j))).unwrap();
            if counts[big] < 2 {
                continue;
            }
            let far = (0..n)
                .filter(|&i| labels[i] == big)
                .max_by(|&a, &b| {
                    sq_dist(z.row(a), &centroids[big])
                        .total_cmp(&sq_dist(z.row(b), &centroids[big]))
                        .then(b.cmp(&a))
                })
                .unwrap();
            centroids[k] = z.row(far).to_vec();
            labels[far] = k;
            counts[big] -= 1;
            counts[k] = 1;
        }
    }
    let inertia = *trace.last().unwrap_or(&0.0);
    Ok(ClusterResult {
        labels,
        centroids: Tensor::new(vec![c, d], centroids.concat())?,
        inertia,
        trace,
    })
}

/// Best of `restarts` runs by inertia, ties broken by restart index. Restart
/// `r` draws from sub-seed `r` of `seed`, so the result does not depend on
/// thread scheduling.
pub fn kmeans(z: &Tensor, c: usize, restarts: usize, seed: u64) -> Result<ClusterResult> {
    let runs = (0..restarts.max(1))
        .into_par_iter()
        .map(|r| kmeans_single(z, c, &mut seeded(derive_seed(seed, r as u64))))
        .collect::<Result<Vec<_>>>()?;
    Ok(runs
        .into_iter()
        .enumerate()
        .min_by(|(i, a), (j, b)| a.inertia.total_cmp(&b.inertia).then(i.cmp(j)))
        .map(|(_, r)| r)
        .unwrap())
}
