//! Training objectives, as tape operations.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{Tape, Var};

/// Probability floor applied before the log in [`loss_inv`].
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub beta: f64,
    pub gamma: f64,
    pub rho: f64,
    pub alpha: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            beta: 0.01,
            gamma: 10.0,
            rho: 1.0,
            alpha: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("beta", self.beta), ("gamma", self.gamma), ("rho", self.rho), ("alpha", self.alpha)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Config(format!("{name} must be a finite value >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Mean over samples and variables of the squared reconstruction error.
/// `h[k]` and `h_hat[k]` are the `B × D_k` slices of variable `k`.
pub fn loss_rec(tape: &mut Tape, h: &[Var], h_hat: &[Var]) -> Result<Var> {
    if h.len() != h_hat.len() || h.is_empty() {
        return Err(Error::Dimension(format!(
            "loss_rec: {} targets vs {} reconstructions",
            h.len(),
            h_hat.len()
        )));
    }
    let b = tape.value(h[0]).rows();
    let mut total: Option<Var> = None;
    for (&x, &y) in h.iter().zip(h_hat) {
        if tape.value(x).shape() != tape.value(y).shape() {
            return Err(Error::Dimension(format!(
                "loss_rec: shapes {:?} and {:?}",
                tape.value(x).shape(),
                tape.value(y).shape()
            )));
        }
        let d = tape.sub(x, y)?;
        let sq = tape.frobenius_sq(d);
        total = Some(match total {
            None => sq,
            Some(t) => tape.add(t, sq)?,
        });
    }
    let total = total.expect("nonempty");
    Ok(tape.scale(total, 1.0 / (b.max(1) * h.len()) as f64))
}

/// `(Tr e^{A⊙A} − d)²`.
pub fn loss_acy(tape: &mut Tape, a: Var) -> Result<Var> {
    let d = tape.value(a).rows();
    let tr = tape.expm_trace(a)?;
    let shift = tape.constant(crate::numcore::Tensor::scalar(d as f64));
    let dev = tape.sub(tr, shift)?;
    tape.mul(dev, dev)
}

/// `(ρ/2)·acy² + α·acy`.
pub fn loss_dag_from_acy(tape: &mut Tape, acy: Var, w: &LossWeights) -> Result<Var> {
    let sq = tape.mul(acy, acy)?;
    let quad = tape.scale(sq, w.rho / 2.0);
    let lin = tape.scale(acy, w.alpha);
    tape.add(quad, lin)
}

pub fn loss_dag(tape: &mut Tape, a: Var, w: &LossWeights) -> Result<Var> {
    let acy = loss_acy(tape, a)?;
    loss_dag_from_acy(tape, acy, w)
}

/// Mean cross-entropy between one-hot targets and predicted probabilities.
pub fn loss_inv(tape: &mut Tape, y: Var, y_hat: Var) -> Result<Var> {
    if tape.value(y).shape() != tape.value(y_hat).shape() {
        return Err(Error::Dimension(format!(
            "loss_inv: targets {:?} vs predictions {:?}",
            tape.value(y).shape(),
            tape.value(y_hat).shape()
        )));
    }
    let b = tape.value(y).rows().max(1);
    let logp = tape.log_clamped(y_hat, PROB_FLOOR);
    let picked = tape.mul(y, logp)?;
    let s = tape.sum(picked);
    Ok(tape.scale(s, -1.0 / b as f64))
}

/// `inv + β·rec + γ·dag`. A zero weight drops its term from the graph.
pub fn loss_joint(tape: &mut Tape, inv: Var, rec: Var, dag: Var, w: &LossWeights) -> Result<Var> {
    let mut total = inv;
    if w.beta != 0.0 {
        let r = tape.scale(rec, w.beta);
        total = tape.add(total, r)?;
    }
    if w.gamma != 0.0 {
        let d = tape.scale(dag, w.gamma);
        total = tape.add(total, d)?;
    }
    Ok(total)
}

/// Value of [`loss_acy`] for a plain matrix.
pub fn acyclicity(a: &crate::numcore::Tensor) -> Result<f64> {
    let mut tape = Tape::new();
    let v = tape.constant(a.clone());
    let l = loss_acy(&mut tape, v)?;
    Ok(tape.value(l).item())
}
