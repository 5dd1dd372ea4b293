use rand::Rng as _;
use rand_distr::{Distribution, Normal, StandardNormal};

use super::MultiViewDataset;
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::rng::seeded;

/// Width of the shared latent space.
pub const LATENT_DIM: usize = 16;
/// Standard deviation of latent class-center coordinates.
const CENTER_STD: f64 = 3.0;
const MAX_REDRAWS: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n: usize,
    pub classes: usize,
    pub dims: Vec<usize>,
    pub noise: f64,
    pub seed: u64,
}

/// Planted-cluster multi-view data.
///
/// Draws `c` latent centers (redrawn until every pair is at least
/// `10 · noise` apart), assigns sample `i` to class `i mod c`, and produces
/// view `v` as `(center + N(0, noise²)) · M_v` with a seeded Gaussian
/// projection `M_v` of shape `16 × d_v`.
pub fn synth_dataset(cfg: &SynthConfig) -> Result<MultiViewDataset> {
    let (n, c) = (cfg.n, cfg.classes);
    if c < 2 || n < c {
        return Err(Error::Range(format!("need n >= c >= 2, got n = {n}, c = {c}")));
    }
    if cfg.dims.is_empty() || cfg.dims.contains(&0) {
        return Err(Error::Range("every view needs a positive width".into()));
    }
    if !(cfg.noise >= 0.0 && cfg.noise.is_finite()) {
        return Err(Error::Range(format!("noise must be finite and >= 0, got {}", cfg.noise)));
    }
    let mut rng = seeded(cfg.seed);

    let min_sep = 10.0 * cfg.noise;
    let mut centers = None;
    for _ in 0..MAX_REDRAWS {
        let cand: Vec<Vec<f64>> = (0..c)
            .map(|_| {
                (0..LATENT_DIM)
                    .map(|_| CENTER_STD * rng.sample::<f64, _>(StandardNormal))
                    .collect()
            })
            .collect();
        let ok = (0..c).all(|a| {
            (a + 1..c).all(|b| {
                let d2: f64 = cand[a].iter().zip(&cand[b]).map(|(x, y)| (x - y) * (x - y)).sum();
                d2.sqrt() >= min_sep && d2 > 0.0
            })
        });
        if ok {
            centers = Some(cand);
            break;
        }
    }
    let centers = centers.ok_or_else(|| {
        Error::Generation(format!(
            "could not separate {c} centers by {min_sep} after {MAX_REDRAWS} redraws"
        ))
    })?;

    let labels: Vec<usize> = (0..n).map(|i| i % c).collect();
    let scale = 1.0 / (LATENT_DIM as f64).sqrt();
    let noise = Normal::new(0.0, cfg.noise).expect("noise validated above");

    let mut views = Vec::with_capacity(cfg.dims.len());
    for &d in &cfg.dims {
        let proj: Vec<f64> = (0..LATENT_DIM * d)
            .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let mut data = vec![0.0; n * d];
        let mut latent = [0.0; LATENT_DIM];
        for i in 0..n {
            for (k, l) in latent.iter_mut().enumerate() {
                *l = centers[labels[i]][k] + noise.sample(&mut rng);
            }
            for j in 0..d {
                data[i * d + j] = (0..LATENT_DIM).map(|k| latent[k] * proj[k * d + j]).sum();
            }
        }
        views.push(Tensor::new(vec![n, d], data)?);
    }
    MultiViewDataset::new(views, Some(labels), Some(c))
}
