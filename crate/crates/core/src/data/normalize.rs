use serde::{Deserialize, Serialize};

use super::{MaskMatrix, MultiViewDataset};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

/// Per-feature `[min, max]` of one view.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRange {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

/// Min-max scaling parameters for every view.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub views: Vec<FeatureRange>,
}

impl FeatureRange {
    fn fit(x: &Tensor, rows: impl Iterator<Item = usize>) -> Self {
        let d = x.last_dim();
        let mut min = vec![f64::INFINITY; d];
        let mut max = vec![f64::NEG_INFINITY; d];
        for i in rows {
            for (j, &v) in x.row(i).iter().enumerate() {
                min[j] = min[j].min(v);
                max[j] = max[j].max(v);
            }
        }
        // view with no observed row
        for j in 0..d {
            if min[j] > max[j] {
                min[j] = 0.0;
                max[j] = 0.0;
            }
        }
        FeatureRange { min, max }
    }

    pub fn transform(&self, x: &Tensor) -> Tensor {
        let mut out = x.clone();
        for i in 0..out.rows() {
            for (j, v) in out.row_mut(i).iter_mut().enumerate() {
                let span = self.max[j] - self.min[j];
                *v = if span > 0.0 { (*v - self.min[j]) / span } else { 0.0 };
            }
        }
        out
    }

    pub fn inverse(&self, x: &Tensor) -> Tensor {
        let mut out = x.clone();
        for i in 0..out.rows() {
            for (j, v) in out.row_mut(i).iter_mut().enumerate() {
                let span = self.max[j] - self.min[j];
                *v = if span > 0.0 { *v * span + self.min[j] } else { self.min[j] };
            }
        }
        out
    }
}

impl Scaler {
    pub fn inverse_views(&self, views: &[Tensor]) -> Result<Vec<Tensor>> {
        if views.len() != self.views.len() {
            return Err(Error::shape("scaler views", &[self.views.len()], &[views.len()]));
        }
        Ok(self.views.iter().zip(views).map(|(r, x)| r.inverse(x)).collect())
    }
}

/// Per-view, per-feature min-max scaling to `[0, 1]`. With a mask, the
/// statistics use only observed rows. Constant features map to 0.
pub fn normalize(dataset: &MultiViewDataset, mask: Option<&MaskMatrix>) -> Result<(MultiViewDataset, Scaler)> {
    if let Some(w) = mask {
        if w.n() != dataset.n() || w.m() != dataset.m() {
            return Err(Error::shape(
                "normalize mask",
                &[dataset.n(), dataset.m()],
                &[w.n(), w.m()],
            ));
        }
    }
    let n = dataset.n();
    let ranges: Vec<FeatureRange> = dataset
        .views()
        .iter()
        .enumerate()
        .map(|(v, x)| FeatureRange::fit(x, (0..n).filter(|&i| mask.map_or(true, |w| w.get(i, v)))))
        .collect();
    let views = ranges
        .iter()
        .zip(dataset.views())
        .map(|(r, x)| r.transform(x))
        .collect();
    Ok((dataset.with_views(views)?, Scaler { views: ranges }))
}
