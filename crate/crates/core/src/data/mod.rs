//! Multi-view datasets, missing-view masks, imputation and dataset files.

mod io;
mod mask;
mod normalize;
mod synth;

pub use io::{
    load_dataset, read_labels, read_mask, read_matrix_csv, save_dataset, write_labels,
    write_mask, write_matrix_csv, DatasetMeta,
};
pub use mask::{generate_mask, generate_paired_mask};
pub use normalize::{normalize, FeatureRange, Scaler};
pub use synth::{synth_dataset, SynthConfig, LATENT_DIM};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// `m` aligned feature matrices over the same `n` samples.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiViewDataset {
    views: Vec<Tensor>,
    labels: Option<Vec<usize>>,
    classes: Option<usize>,
}

impl MultiViewDataset {
    pub fn new(views: Vec<Tensor>, labels: Option<Vec<usize>>, classes: Option<usize>) -> Result<Self> {
        let first = views
            .first()
            .ok_or_else(|| Error::Config("a dataset needs at least one view".into()))?;
        let n = first.shape()[0];
        for v in &views {
            if v.shape().len() != 2 || v.shape()[0] != n {
                return Err(Error::shape("dataset views", first.shape(), v.shape()));
            }
        }
        if let Some(l) = &labels {
            if l.len() != n {
                return Err(Error::shape("dataset labels", &[n], &[l.len()]));
            }
            if let Some(c) = classes {
                if let Some(bad) = l.iter().find(|&&y| y >= c) {
                    return Err(Error::Range(format!("label {bad} outside [0, {c})")));
                }
            }
        }
        Ok(MultiViewDataset {
            views,
            labels,
            classes,
        })
    }

    pub fn n(&self) -> usize {
        self.views[0].shape()[0]
    }

    pub fn m(&self) -> usize {
        self.views.len()
    }

    pub fn dims(&self) -> Vec<usize> {
        self.views.iter().map(|v| v.shape()[1]).collect()
    }

    pub fn views(&self) -> &[Tensor] {
        &self.views
    }

    pub fn view(&self, v: usize) -> &Tensor {
        &self.views[v]
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn classes(&self) -> Option<usize> {
        self.classes
    }

    pub fn with_views(&self, views: Vec<Tensor>) -> Result<Self> {
        Self::new(views, self.labels.clone(), self.classes)
    }

    /// Rows `indices` of every view.
    pub fn batch(&self, indices: &[usize]) -> Vec<Tensor> {
        self.views.iter().map(|v| v.select_rows(indices)).collect()
    }
}

/// Binary `n × m` missing-view indicator: `1` means observed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskMatrix {
    n: usize,
    m: usize,
    w: Vec<u8>,
}

impl MaskMatrix {
    pub fn ones(n: usize, m: usize) -> Self {
        MaskMatrix {
            n,
            m,
            w: vec![1; n * m],
        }
    }

    /// Validates entries and the at-least-one-view-per-row constraint.
    pub fn new(n: usize, m: usize, w: Vec<u8>) -> Result<Self> {
        if w.len() != n * m {
            return Err(Error::shape("mask", &[n, m], &[w.len()]));
        }
        if w.iter().any(|&x| x > 1) {
            return Err(Error::InvalidMask("entries must be 0 or 1".into()));
        }
        let mask = MaskMatrix { n, m, w };
        if let Some(i) = (0..n).find(|&i| mask.available(i) == 0) {
            return Err(Error::InvalidMask(format!("row {i} has no available view")));
        }
        Ok(mask)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn get(&self, i: usize, v: usize) -> bool {
        self.w[i * self.m + v] == 1
    }

    pub fn weight(&self, i: usize, v: usize) -> f64 {
        f64::from(self.w[i * self.m + v])
    }

    pub fn row(&self, i: usize) -> &[u8] {
        &self.w[i * self.m..(i + 1) * self.m]
    }

    pub fn available(&self, i: usize) -> usize {
        self.row(i).iter().map(|&x| x as usize).sum()
    }

    pub fn column(&self, v: usize) -> Vec<bool> {
        (0..self.n).map(|i| self.get(i, v)).collect()
    }

    pub fn missing_in_view(&self, v: usize) -> usize {
        (0..self.n).filter(|&i| !self.get(i, v)).count()
    }

    pub fn is_complete(&self) -> bool {
        self.w.iter().all(|&x| x == 1)
    }

    /// Rows `indices` as a new mask.
    pub fn select_rows(&self, indices: &[usize]) -> MaskMatrix {
        let mut w = Vec::with_capacity(indices.len() * self.m);
        for &i in indices {
            w.extend_from_slice(self.row(i));
        }
        MaskMatrix {
            n: indices.len(),
            m: self.m,
            w,
        }
    }

    /// Row-major `n × m` entries.
    pub fn entries(&self) -> &[u8] {
        &self.w
    }
}

/// Dataset whose missing rows were filled from reconstructions.
#[derive(Debug, Clone, PartialEq)]
pub struct ImputedDataset {
    pub views: Vec<Tensor>,
    pub source_mask: MaskMatrix,
}

impl ImputedDataset {
    /// Applies [`impute`] view by view.
    pub fn from_reconstruction(original: &[Tensor], recon: &[Tensor], mask: &MaskMatrix) -> Result<Self> {
        if original.len() != recon.len() || original.len() != mask.m() {
            return Err(Error::shape("impute views", &[original.len()], &[recon.len(), mask.m()]));
        }
        let views = original
            .iter()
            .zip(recon)
            .enumerate()
            .map(|(v, (x, xb))| impute(x, xb, &mask.column(v)))
            .collect::<Result<Vec<_>>>()?;
        Ok(ImputedDataset {
            views,
            source_mask: mask.clone(),
        })
    }
}

fn check_mask_fits(dataset: &MultiViewDataset, mask: &MaskMatrix) -> Result<()> {
    if dataset.n() != mask.n() || dataset.m() != mask.m() {
        return Err(Error::shape(
            "dataset/mask",
            &[dataset.n(), dataset.m()],
            &[mask.n(), mask.m()],
        ));
    }
    Ok(())
}

/// Zeroes every row of view `v` whose mask entry is 0.
pub fn zero_fill(dataset: &MultiViewDataset, mask: &MaskMatrix) -> Result<MultiViewDataset> {
    check_mask_fits(dataset, mask)?;
    let views = dataset
        .views()
        .iter()
        .enumerate()
        .map(|(v, x)| {
            let mut out = x.clone();
            for i in 0..mask.n() {
                if !mask.get(i, v) {
                    out.row_mut(i).fill(0.0);
                }
            }
            out
        })
        .collect();
    dataset.with_views(views)
}

/// Row `i` of the result is `x[i]` where `w_col[i]` holds and `x_bar[i]`
/// otherwise.
pub fn impute(x: &Tensor, x_bar: &Tensor, w_col: &[bool]) -> Result<Tensor> {
    if x.shape() != x_bar.shape() || x.shape().len() != 2 || x.shape()[0] != w_col.len() {
        return Err(Error::shape("impute", x.shape(), x_bar.shape()));
    }
    let mut out = x.clone();
    for (i, &keep) in w_col.iter().enumerate() {
        if !keep {
            out.row_mut(i).copy_from_slice(x_bar.row(i));
        }
    }
    Ok(out)
}
