use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Agreement between reverse-mode and central-difference gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    /// Max over entries of `|a − n| / max(1e-8, |a| + |n|)`.
    pub max_elementwise: f64,
    /// Per parameter tensor, `‖a − n‖ / max(1e-12, ‖a‖ + ‖n‖)`.
    pub per_tensor: Vec<f64>,
}

impl GradCheck {
    pub fn max_tensor(&self) -> f64 {
        self.per_tensor.iter().cloned().fold(0.0, f64::max)
    }
}

/// Compares reverse-mode gradients of a scalar function against central
/// differences with step `h`.
///
/// `f` receives a fresh tape and one leaf per entry of `params` and must
/// return a scalar.
pub fn grad_check_report<F>(f: F, params: &[Tensor], h: f64) -> Result<GradCheck>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |ps: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ps.iter().map(|p| tape.constant(p.clone())).collect();
        let out = f(&mut tape, &vars)?;
        let v = tape.value(out);
        if !v.is_scalar() {
            return Err(Error::Rank(v.shape().to_vec()));
        }
        Ok(v.data()[0])
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.leaf(p.clone())).collect();
    let out = f(&mut tape, &vars)?;
    tape.backward(out)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .zip(params)
        .map(|(&v, p)| {
            tape.grad(v)
                .cloned()
                .unwrap_or_else(|| Tensor::zeros(p.shape()))
        })
        .collect();

    let mut work = params.to_vec();
    let mut report = GradCheck {
        max_elementwise: 0.0,
        per_tensor: Vec::with_capacity(params.len()),
    };
    for (pi, grad) in analytic.iter().enumerate() {
        let (mut diff2, mut a2, mut n2) = (0.0, 0.0, 0.0);
        for k in 0..grad.numel() {
            let orig = work[pi].data()[k];
            work[pi].data_mut()[k] = orig + h;
            let plus = eval(&work)?;
            work[pi].data_mut()[k] = orig - h;
            let minus = eval(&work)?;
            work[pi].data_mut()[k] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let a = grad.data()[k];
            let err = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
            report.max_elementwise = report.max_elementwise.max(err);
            diff2 += (a - numeric) * (a - numeric);
            a2 += a * a;
            n2 += numeric * numeric;
        }
        report
            .per_tensor
            .push(diff2.sqrt() / (a2.sqrt() + n2.sqrt()).max(1e-12));
    }
    Ok(report)
}

/// Worst elementwise relative error, see [`grad_check_report`].
pub fn grad_check<F>(f: F, params: &[Tensor], h: f64) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    grad_check_report(f, params, h).map(|r| r.max_elementwise)
}
