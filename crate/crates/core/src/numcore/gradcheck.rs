//! Central-difference gradient verification.

use crate::error::{Error, Result};
use crate::exec::Exec;

use super::tape::{Tape, Var};
use super::tensor::Tensor;

/// Relative-error floor in the denominator.
pub const REL_ERR_FLOOR: f64 = 1e-8;

/// Max relative error between the tape gradient of `f` at `x` and its
/// central-difference estimate.
pub fn finite_diff_check<F>(f: F, x: &Tensor, eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var> + Sync,
{
    let errs = finite_diff_check_many(
        |tape, vars| f(tape, vars[0]),
        std::slice::from_ref(x),
        eps,
        Exec::Sequential,
    )?;
    Ok(errs[0])
}

/// Per-input max relative error for a function of several tensors.
pub fn finite_diff_check_many<F>(f: F, xs: &[Tensor], eps: f64, exec: Exec) -> Result<Vec<f64>>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var> + Sync,
{
    if !(eps > 0.0) {
        return Err(Error::Contract(format!("finite-difference eps must be > 0, got {eps}")));
    }
    let mut tape = Tape::new();
    let vars: Vec<Var> = xs.iter().map(|x| tape.param(x.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let value = tape.value(out).item();
    if !value.is_finite() {
        return Err(Error::Numeric(format!("function value {value} at the base point")));
    }
    let grads = tape.backward(out)?;
    let analytic: Vec<Tensor> = vars
        .iter()
        .map(|v| grads.get(*v).cloned().unwrap_or_else(|| Tensor::zeros(tape.value(*v).shape())))
        .collect();

    let eval = |inputs: &[Tensor]| -> Result<f64> {
        let mut t = Tape::new();
        let vs: Vec<Var> = inputs.iter().map(|x| t.constant(x.clone())).collect();
        let o = f(&mut t, &vs)?;
        let v = t.value(o).item();
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::Numeric(format!("function value {v} at a probe point")))
        }
    };

    let probes: Vec<(usize, usize)> = xs
        .iter()
        .enumerate()
        .flat_map(|(g, x)| (0..x.len()).map(move |i| (g, i)))
        .collect();
    let rel_errs = exec.map_slice(&probes, |&(g, i)| -> Result<f64> {
        let mut plus = xs.to_vec();
        plus[g].data_mut()[i] += eps;
        let mut minus = xs.to_vec();
        minus[g].data_mut()[i] -= eps;
        let numeric = (eval(&plus)? - eval(&minus)?) / (2.0 * eps);
        let a = analytic[g].data()[i];
        Ok((a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_ERR_FLOOR))
    });

    let mut worst = vec![0.0f64; xs.len()];
    for (&(g, _), e) in probes.iter().zip(rel_errs) {
        worst[g] = worst[g].max(e?);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_nonpositive_eps() {
        let x = Tensor::scalar(1.0);
        assert!(finite_diff_check(|t, v| Ok(t.sum(v)), &x, 0.0).is_err());
    }

    #[test]
    fn non_finite_probe_is_numeric_error() {
        let x = Tensor::scalar(0.0);
        // ln at the floor boundary goes to -inf for a zero floor
        let r = finite_diff_check(|t, v| Ok(t.log_clamped(v, 0.0)), &x, 1e-5);
        assert!(matches!(r, Err(Error::Numeric(_))));
    }

    #[test]
    fn detects_a_wrong_gradient() {
        // relu at an exact kink: one-sided analytic gradient 0 vs numeric 0.5
        let x = Tensor::scalar(0.0);
        let err = finite_diff_check(|t, v| Ok(t.relu(v)), &x, 1e-5).unwrap();
        assert!(err > 0.1);
    }
}
