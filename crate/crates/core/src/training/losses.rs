use crate::autodiff::{Tape, Tensor, Var};
use crate::data::MaskMatrix;
use crate::error::{Error, Result};

fn weighted_recon(tape: &mut Tape, recon: &[Var], targets: &[Tensor], mask: Option<&MaskMatrix>) -> Result<Var> {
    let m = targets.len();
    if recon.len() != m || m == 0 {
        return Err(Error::shape("reconstruction loss views", &[recon.len()], &[m]));
    }
    let b = targets[0].rows();
    if let Some(w) = mask {
        if w.n() != b || w.m() != m {
            return Err(Error::shape("reconstruction loss mask", &[w.n(), w.m()], &[b, m]));
        }
    }
    let mut total: Option<Var> = None;
    for (v, (&r, x)) in recon.iter().zip(targets).enumerate() {
        if tape.value(r).shape() != x.shape() {
            return Err(Error::shape("reconstruction loss", tape.value(r).shape(), x.shape()));
        }
        let d = x.last_dim();
        let per_dim = 1.0 / d as f64;
        let mut weights = Vec::with_capacity(b * d);
        for i in 0..b {
            let w = mask.map_or(1.0, |w| w.weight(i, v));
            weights.extend(std::iter::repeat(w * per_dim).take(d));
        }
        let t = tape.constant(x.clone());
        let diff = tape.sub(r, t)?;
        let sq = tape.mul(diff, diff)?;
        let w = tape.constant(Tensor::new(vec![b, d], weights)?);
        let weighted = tape.mul(sq, w)?;
        let s = tape.sum(weighted);
        total = Some(match total {
            None => s,
            Some(acc) => tape.add(acc, s)?,
        });
    }
    Ok(tape.scale(total.unwrap(), 1.0 / (m * b) as f64))
}

/// `(1 / (m·b)) Σ_v Σ_i (1/d_v) ‖x̄_i − x_i‖² W[i, v]` over a batch of `b`
/// samples. Rows with `W = 0` contribute exactly nothing.
pub fn recon_loss_masked(tape: &mut Tape, recon: &[Var], targets: &[Tensor], mask: &MaskMatrix) -> Result<Var> {
    weighted_recon(tape, recon, targets, Some(mask))
}

/// The masked loss with every weight 1, against the imputed targets.
pub fn recon_loss_full(tape: &mut Tape, recon: &[Var], targets: &[Tensor]) -> Result<Var> {
    weighted_recon(tape, recon, targets, None)
}

fn value_of(x_bar: &[Tensor], x: &[Tensor], mask: Option<&MaskMatrix>) -> Result<f64> {
    let mut tape = Tape::new();
    let r: Vec<Var> = x_bar.iter().map(|t| tape.constant(t.clone())).collect();
    let l = weighted_recon(&mut tape, &r, x, mask)?;
    Ok(tape.value(l).data()[0])
}

pub fn recon_loss_masked_value(x_bar: &[Tensor], x: &[Tensor], mask: &MaskMatrix) -> Result<f64> {
    value_of(x_bar, x, Some(mask))
}

pub fn recon_loss_full_value(x_bar: &[Tensor], x_prime: &[Tensor]) -> Result<f64> {
    value_of(x_bar, x_prime, None)
}

/// `recon + beta · graph`, or `recon` when there is no graph term yet.
pub fn total_loss(tape: &mut Tape, recon: Var, graph: Option<Var>, beta: f64) -> Result<Var> {
    match graph {
        None => Ok(recon),
        Some(g) => {
            let weighted = tape.scale(g, beta);
            tape.add(recon, weighted)
        }
    }
}

pub fn total_loss_value(recon: f64, graph: Option<f64>, beta: f64) -> f64 {
    recon + graph.map_or(0.0, |g| beta * g)
}
