//! Missing-view simulation.
//!
//! Both generators draw from `ChaCha8Rng::seed_from_u64(seed)`.
//!
//! *Per-view protocol*: views are processed in order `0..m`. For each view,
//! `round(rate · n)` rows are removed one at a time: a row index is drawn
//! uniformly from `0..n` and redrawn if it was already removed from this
//! view or if removing it would leave the row with no view. If a view runs
//! out of eligible rows the whole mask is redrawn (up to 100 attempts).
//!
//! *Paired protocol* (two views): the row indices are shuffled
//! (Fisher-Yates); the first `round(rate · n)` rows keep both views, the
//! next `floor((n − paired) / 2)` lose view 1, the rest lose view 2.

use rand::seq::SliceRandom;
use rand::Rng as _;

use super::MaskMatrix;
use crate::error::{Error, Result};
use crate::rng::seeded;

const MAX_ATTEMPTS: usize = 100;

fn count_for(rate: f64, n: usize) -> usize {
    (rate * n as f64).round() as usize
}

pub fn generate_mask(n: usize, m: usize, missing_rate: f64, seed: u64) -> Result<MaskMatrix> {
    if !(0.0..1.0).contains(&missing_rate) {
        return Err(Error::Range(format!(
            "missing rate must lie in [0, 1), got {missing_rate}"
        )));
    }
    let drop = count_for(missing_rate, n);
    if drop == 0 {
        return Ok(MaskMatrix::ones(n, m));
    }
    if m < 2 {
        return Err(Error::Infeasible(
            "a single-view dataset cannot lose views and keep one view per sample".into(),
        ));
    }
    if drop * m > n * (m - 1) {
        return Err(Error::Infeasible(format!(
            "removing {drop} of {n} rows from each of {m} views leaves some sample without a view"
        )));
    }

    let mut rng = seeded(seed);
    'attempt: for _ in 0..MAX_ATTEMPTS {
        let mut w = vec![1u8; n * m];
        let mut avail = vec![m; n];
        for v in 0..m {
            let eligible = (0..n).filter(|&i| avail[i] >= 2).count();
            if eligible < drop {
                continue 'attempt;
            }
            let mut removed = 0;
            while removed < drop {
                let i = rng.gen_range(0..n);
                if w[i * m + v] == 0 || avail[i] < 2 {
                    continue;
                }
                w[i * m + v] = 0;
                avail[i] -= 1;
                removed += 1;
            }
        }
        return MaskMatrix::new(n, m, w);
    }
    Err(Error::Infeasible(format!(
        "no feasible mask found in {MAX_ATTEMPTS} attempts (n = {n}, m = {m}, rate = {missing_rate})"
    )))
}

pub fn generate_paired_mask(n: usize, m: usize, paired_rate: f64, seed: u64) -> Result<MaskMatrix> {
    if m != 2 {
        return Err(Error::Protocol(format!(
            "the paired protocol needs exactly two views, dataset has {m}"
        )));
    }
    if !(0.0..=1.0).contains(&paired_rate) {
        return Err(Error::Range(format!(
            "paired rate must lie in [0, 1], got {paired_rate}"
        )));
    }
    let paired = count_for(paired_rate, n);
    let drop_first = (n - paired) / 2;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seeded(seed));
    let mut w = vec![1u8; n * 2];
    for (k, &i) in order.iter().enumerate() {
        if k < paired {
            continue;
        } else if k < paired + drop_first {
            w[i * 2] = 0;
        } else {
            w[i * 2 + 1] = 0;
        }
    }
    MaskMatrix::new(n, 2, w)
}
