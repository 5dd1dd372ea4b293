//! Network forward passes recorded on a [`Tape`].
//!
//! Token tensors are `[b·m, d_e]` matrices with row `i·m + v` holding view
//! `v` of sample `i`.

use super::state::{BlockIdx, LinearIdx};
use super::ModelState;
use crate::autodiff::{Tape, Tensor, Var};
use crate::data::MaskMatrix;
use crate::error::{Error, Result};

/// Which half of training a pass belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    /// Masked attention and availability-weighted fusion on incomplete data.
    Recovery,
    /// Unmasked attention and mean fusion on imputed data.
    Clustering,
}

/// Outputs of one full pass.
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    /// Encoder output `[b·m, d_e]`.
    pub z: Var,
    /// Fused representation `[b, d_e]`.
    pub fused: Var,
    /// One `[b, d_v]` reconstruction per view.
    pub recon: Vec<Var>,
}

fn linear(tape: &mut Tape, p: &[Var], idx: LinearIdx, x: Var) -> Result<Var> {
    let y = tape.matmul(x, p[idx.weight])?;
    tape.add_bias(y, p[idx.bias])
}

fn check_mask(mask: &MaskMatrix, b: usize, m: usize) -> Result<()> {
    if mask.n() != b || mask.m() != m {
        return Err(Error::shape("mask rows", &[b, m], &[mask.n(), mask.m()]));
    }
    if let Some(i) = (0..b).find(|&i| mask.available(i) == 0) {
        return Err(Error::InvalidMask(format!("sample {i} has no available view")));
    }
    Ok(())
}

/// `ReLU(X_v · Φ_v + bias_v)` per view, interleaved into tokens.
pub fn extract_low_level(tape: &mut Tape, p: &[Var], model: &ModelState, views: &[Var]) -> Result<Var> {
    let cfg = model.config();
    if views.len() != cfg.m() {
        return Err(Error::shape("extract views", &[cfg.m()], &[views.len()]));
    }
    let mut feats = Vec::with_capacity(views.len());
    for (v, (&x, &d)) in views.iter().zip(&cfg.dims).enumerate() {
        let s = tape.value(x).shape();
        if s.len() != 2 || s[1] != d {
            return Err(Error::shape("extract view", s, &[d]));
        }
        let h = linear(tape, p, model.layout.extractors[v], x)?;
        feats.push(tape.relu(h));
    }
    let b = tape.value(feats[0]).shape()[0];
    let wide = tape.concat_last(&feats)?;
    tape.reshape(wide, &[b * cfg.m(), cfg.d_e])
}

/// Per-sample multi-head attention across the `m` view tokens. With a mask,
/// the logits of sample `i` are zero-filled wherever `w_iᵀ w_i` is 0.
fn attention(
    tape: &mut Tape,
    p: &[Var],
    model: &ModelState,
    idx: &BlockIdx,
    tokens: Var,
    b: usize,
    mask: Option<&MaskMatrix>,
) -> Result<Var> {
    let cfg = model.config();
    let (m, d_h) = (cfg.m(), cfg.head_dim());
    let pair_mask: Option<Vec<f64>> = mask.map(|w| {
        let mut out = Vec::with_capacity(b * m * m);
        for i in 0..b {
            for r in 0..m {
                for c in 0..m {
                    out.push(w.weight(i, r) * w.weight(i, c));
                }
            }
        }
        out
    });
    let scale = 1.0 / (d_h as f64).sqrt();
    let mut heads = Vec::with_capacity(cfg.heads);
    for t in 0..cfg.heads {
        let q = tape.matmul(tokens, p[idx.query[t]])?;
        let q = tape.reshape(q, &[b, m, d_h])?;
        let k = tape.matmul(tokens, p[idx.key[t]])?;
        let k = tape.reshape(k, &[b, m, d_h])?;
        let kt = tape.transpose(k)?;
        let v = tape.matmul(tokens, p[idx.value[t]])?;
        let v = tape.reshape(v, &[b, m, d_h])?;
        let scores = tape.batch_matmul(q, kt)?;
        let scores = tape.scale(scores, scale);
        let probs = match &pair_mask {
            Some(pm) => tape.softmax_zerofill(scores, pm)?,
            None => tape.softmax_masked(scores, None)?,
        };
        heads.push(tape.batch_matmul(probs, v)?);
    }
    let cat = tape.concat_last(&heads)?;
    tape.reshape(cat, &[b * m, cfg.d_e])
}

/// attention → linear → (+residual) → norm → MLP → (+residual) → norm.
fn block(
    tape: &mut Tape,
    p: &[Var],
    model: &ModelState,
    idx: &BlockIdx,
    tokens: Var,
    b: usize,
    mask: Option<&MaskMatrix>,
) -> Result<Var> {
    let cfg = model.config();
    let a = attention(tape, p, model, idx, tokens, b, mask)?;
    let a = linear(tape, p, idx.out, a)?;
    let h = if cfg.residual { tape.add(tokens, a)? } else { a };
    let h = tape.layer_norm(h, p[idx.norm1.0], p[idx.norm1.1], cfg.ln_eps)?;
    let f = linear(tape, p, idx.fc1, h)?;
    let f = tape.relu(f);
    let f = linear(tape, p, idx.fc2, f)?;
    let o = if cfg.residual { tape.add(h, f)? } else { f };
    tape.layer_norm(o, p[idx.norm2.0], p[idx.norm2.1], cfg.ln_eps)
}

/// Cross-view encoder: extractors followed by the encoder blocks. A mask
/// selects the recovery-stage (masked) attention.
pub fn encode(
    tape: &mut Tape,
    p: &[Var],
    model: &ModelState,
    views: &[Var],
    mask: Option<&MaskMatrix>,
) -> Result<Var> {
    let mut tokens = extract_low_level(tape, p, model, views)?;
    let b = tape.value(tokens).shape()[0] / model.config().m();
    if let Some(w) = mask {
        check_mask(w, b, model.config().m())?;
    }
    for idx in &model.layout.encoder {
        tokens = block(tape, p, model, idx, tokens, b, mask)?;
    }
    Ok(tokens)
}

/// `Σ_v z[i, v] · w_iv / Σ_v w_iv`; without a mask every weight is `1/m`.
pub fn fuse(tape: &mut Tape, z: Var, m: usize, mask: Option<&MaskMatrix>) -> Result<Var> {
    let s = tape.value(z).shape().to_vec();
    if s.len() != 2 || s[0] % m != 0 {
        return Err(Error::shape("fuse", &s, &[m]));
    }
    let (b, d) = (s[0] / m, s[1]);
    if let Some(w) = mask {
        if w.n() != b || w.m() != m {
            return Err(Error::shape("fuse mask", &[b, m], &[w.n(), w.m()]));
        }
    }
    let mut weights = Vec::with_capacity(b * m * d);
    for i in 0..b {
        let total = match mask {
            Some(w) => {
                let a = w.available(i);
                if a == 0 {
                    return Err(Error::InvalidMask(format!("sample {i} has no available view")));
                }
                a as f64
            }
            None => m as f64,
        };
        for v in 0..m {
            let wv = mask.map_or(1.0, |w| w.weight(i, v));
            weights.extend(std::iter::repeat(wv / total).take(d));
        }
    }
    let wt = tape.constant(Tensor::new(vec![b * m, d], weights)?);
    let weighted = tape.mul(z, wt)?;
    let wide = tape.reshape(weighted, &[b, m * d])?;
    let parts = tape.split_last(wide, &vec![d; m])?;
    let mut acc = parts[0];
    for &part in &parts[1..] {
        acc = tape.add(acc, part)?;
    }
    Ok(acc)
}

/// Replicates the fused rows over the view axis, runs the decoder blocks
/// unmasked, and maps each view slice through its linear output head.
pub fn decode(tape: &mut Tape, p: &[Var], model: &ModelState, fused: Var) -> Result<Vec<Var>> {
    let cfg = model.config();
    let m = cfg.m();
    let s = tape.value(fused).shape().to_vec();
    if s.len() != 2 || s[1] != cfg.d_e {
        return Err(Error::shape("decode", &s, &[cfg.d_e]));
    }
    let b = s[0];
    let rep: Vec<usize> = (0..b).flat_map(|i| std::iter::repeat(i).take(m)).collect();
    let mut tokens = tape.gather_rows(fused, &rep)?;
    for idx in &model.layout.decoder {
        tokens = block(tape, p, model, idx, tokens, b, None)?;
    }
    (0..m)
        .map(|v| {
            let rows: Vec<usize> = (0..b).map(|i| i * m + v).collect();
            let slice = tape.gather_rows(tokens, &rows)?;
            linear(tape, p, model.layout.heads[v], slice)
        })
        .collect()
}

/// Encode, fuse and decode one batch. `mask` (recovery stage) must hold the
/// batch rows.
pub fn forward(
    tape: &mut Tape,
    p: &[Var],
    model: &ModelState,
    views: &[Tensor],
    stage: Stage,
    mask: Option<&MaskMatrix>,
) -> Result<ForwardOutput> {
    let mask = match stage {
        Stage::Recovery => Some(mask.ok_or_else(|| {
            Error::InvalidMask("the recovery stage needs a missing-view mask".into())
        })?),
        Stage::Clustering => None,
    };
    let inputs: Vec<Var> = views.iter().map(|x| tape.constant(x.clone())).collect();
    let z = encode(tape, p, model, &inputs, mask)?;
    let fused = fuse(tape, z, model.config().m(), mask)?;
    let recon = decode(tape, p, model, fused)?;
    Ok(ForwardOutput { z, fused, recon })
}

/// Gradient-free pass over a whole dataset.
#[derive(Debug, Clone)]
pub struct Inference {
    /// `[n·m, d_e]`.
    pub z: Tensor,
    /// `[n, d_e]`.
    pub fused: Tensor,
    pub recon: Vec<Tensor>,
}

impl ModelState {
    /// Runs [`forward`] over all rows in chunks of `chunk` samples.
    pub fn infer(&self, views: &[Tensor], stage: Stage, mask: Option<&MaskMatrix>, chunk: usize) -> Result<Inference> {
        let n = views
            .first()
            .map(|v| v.shape()[0])
            .ok_or_else(|| Error::Config("no views".into()))?;
        let (m, d_e) = (self.config().m(), self.config().d_e);
        let mut z = Vec::with_capacity(n * m * d_e);
        let mut fused = Vec::with_capacity(n * d_e);
        let mut recon: Vec<Vec<f64>> = self.config().dims.iter().map(|d| Vec::with_capacity(n * d)).collect();
        let all: Vec<usize> = (0..n).collect();
        for rows in all.chunks(chunk.max(1)) {
            let mut tape = Tape::new();
            let p = self.bind(&mut tape, false);
            let batch: Vec<Tensor> = views.iter().map(|x| x.select_rows(rows)).collect();
            let bm = mask.map(|w| w.select_rows(rows));
            let out = forward(&mut tape, &p, self, &batch, stage, bm.as_ref())?;
            z.extend_from_slice(tape.value(out.z).data());
            fused.extend_from_slice(tape.value(out.fused).data());
            for (acc, &r) in recon.iter_mut().zip(&out.recon) {
                acc.extend_from_slice(tape.value(r).data());
            }
        }
        Ok(Inference {
            z: Tensor::new(vec![n * m, d_e], z)?,
            fused: Tensor::new(vec![n, d_e], fused)?,
            recon: recon
                .into_iter()
                .zip(&self.config().dims)
                .map(|(r, &d)| Tensor::new(vec![n, d], r))
                .collect::<Result<_>>()?,
        })
    }

    /// Multi-head attention of encoder block `layer` for one sample's
    /// `m × d_e` token matrix. `w_row` selects masked attention.
    pub fn cross_view_attention(&self, layer: usize, x_hat: &Tensor, w_row: Option<&[u8]>) -> Result<Tensor> {
        let m = self.config().m();
        let idx = self
            .layout
            .encoder
            .get(layer)
            .ok_or_else(|| Error::Config(format!("no encoder layer {layer}")))?;
        if x_hat.shape() != [m, self.config().d_e] {
            return Err(Error::shape("cross_view_attention", x_hat.shape(), &[m, self.config().d_e]));
        }
        let mask = match w_row {
            Some(w) => {
                if w.iter().all(|&x| x == 0) {
                    return Err(Error::InvalidMask("every view of the sample is masked".into()));
                }
                Some(MaskMatrix::new(1, m, w.to_vec())?)
            }
            None => None,
        };
        let mut tape = Tape::new();
        let p = self.bind(&mut tape, false);
        let x = tape.constant(x_hat.clone());
        let a = attention(&mut tape, &p, self, idx, x, 1, mask.as_ref())?;
        Ok(tape.value(a).clone())
    }
}
