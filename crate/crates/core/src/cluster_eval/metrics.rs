use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::hungarian;
use crate::error::{Error, Result};

/// Counts of (predicted cluster, true class) pairs over compacted label ids.
#[derive(Debug, Clone, PartialEq)]
pub struct Contingency {
    pub n: usize,
    /// `table[p][t]`
    pub table: Vec<Vec<usize>>,
}

impl Contingency {
    fn row_sums(&self) -> Vec<usize> {
        self.table.iter().map(|r| r.iter().sum()).collect()
    }

    fn col_sums(&self) -> Vec<usize> {
        let cols = self.table.first().map_or(0, Vec::len);
        (0..cols).map(|t| self.table.iter().map(|r| r[t]).sum()).collect()
    }
}

fn compact(labels: &[usize]) -> (Vec<usize>, usize) {
    let mut ids = BTreeMap::new();
    for &l in labels {
        let next = ids.len();
        ids.entry(l).or_insert(next);
    }
    // renumber in sorted label order
    for (k, v) in ids.values_mut().enumerate() {
        *v = k;
    }
    (labels.iter().map(|l| ids[l]).collect(), ids.len())
}

pub fn contingency(pred: &[usize], truth: &[usize]) -> Result<Contingency> {
    if pred.len() != truth.len() {
        return Err(Error::shape("contingency", &[pred.len()], &[truth.len()]));
    }
    if pred.is_empty() {
        return Err(Error::Range("no labels to compare".into()));
    }
    let (p, np) = compact(pred);
    let (t, nt) = compact(truth);
    let mut table = vec![vec![0; nt]; np];
    for (a, b) in p.into_iter().zip(t) {
        table[a][b] += 1;
    }
    Ok(Contingency { n: pred.len(), table })
}

/// Best one-to-one cluster-to-class matching, as a fraction of samples.
pub fn acc(pred: &[usize], truth: &[usize]) -> Result<f64> {
    let ct = contingency(pred, truth)?;
    let k = ct.table.len().max(ct.table[0].len());
    let count = |p: usize, t: usize| *ct.table.get(p).and_then(|r| r.get(t)).unwrap_or(&0);
    let cost: Vec<Vec<f64>> = (0..k)
        .map(|p| (0..k).map(|t| -(count(p, t) as f64)).collect())
        .collect();
    let assignment = hungarian(&cost)?;
    let matched: usize = assignment.iter().enumerate().map(|(p, &t)| count(p, t)).sum();
    Ok(matched as f64 / ct.n as f64)
}

/// Mutual information over `sqrt(H(pred)·H(truth))`, natural logarithms.
/// Labelings equal up to relabeling score exactly 1; otherwise a zero
/// entropy on either side scores 0.
pub fn nmi(pred: &[usize], truth: &[usize]) -> Result<f64> {
    let ct = contingency(pred, truth)?;
    let bijective = ct.table.len() == ct.table[0].len()
        && ct.table.iter().all(|r| r.iter().filter(|&&c| c > 0).count() == 1);
    if bijective {
        return Ok(1.0);
    }
    let n = ct.n as f64;
    let entropy = |counts: &[usize]| -> f64 {
        counts
            .iter()
            .filter(|&&c| c > 0)
            .map(|&c| {
                let p = c as f64 / n;
                -p * p.ln()
            })
            .sum()
    };
    let (rows, cols) = (ct.row_sums(), ct.col_sums());
    let (hp, ht) = (entropy(&rows), entropy(&cols));
    if hp == 0.0 || ht == 0.0 {
        return Ok(0.0);
    }
    let mut mi = 0.0;
    for (a, row) in ct.table.iter().enumerate() {
        for (b, &c) in row.iter().enumerate() {
            if c > 0 {
                let pab = c as f64 / n;
                mi += pab * (pab * n * n / (rows[a] as f64 * cols[b] as f64)).ln();
            }
        }
    }
    Ok((mi / (hp * ht).sqrt()).clamp(0.0, 1.0))
}

/// Fraction of samples that carry the majority class of their cluster.
pub fn purity(pred: &[usize], truth: &[usize]) -> Result<f64> {
    let ct = contingency(pred, truth)?;
    let hits: usize = ct.table.iter().map(|r| *r.iter().max().unwrap()).sum();
    Ok(hits as f64 / ct.n as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub acc: f64,
    pub nmi: f64,
    pub purity: f64,
}

pub fn evaluate(pred: &[usize], truth: &[usize]) -> Result<Metrics> {
    Ok(Metrics {
        acc: acc(pred, truth)?,
        nmi: nmi(pred, truth)?,
        purity: purity(pred, truth)?,
    })
}
