//! Matrix exponential by scaling and squaring, and the acyclicity trace
//! `Tr(e^{A⊙A})`.

use crate::error::{Error, Result};

use super::tensor::Tensor;

/// Number of Taylor terms summed after scaling.
pub const TAYLOR_TERMS: usize = 18;
/// Infinity-norm bound the scaled matrix must satisfy.
pub const SCALED_NORM_BOUND: f64 = 0.5;

fn inf_norm(t: &Tensor) -> f64 {
    let (r, _) = t.dims2();
    (0..r)
        .map(|i| t.row(i).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// `e^M` for a square matrix.
pub fn expm(m: &Tensor) -> Result<Tensor> {
    let (r, c) = m.dims2();
    if r != c {
        return Err(Error::Dimension(format!(
            "matrix exponential of non-square {:?}",
            m.shape()
        )));
    }
    if !m.is_finite() {
        return Err(Error::Numeric("matrix exponential of non-finite input".into()));
    }
    let norm = inf_norm(m);
    let mut squarings = 0u32;
    while norm / 2f64.powi(squarings as i32) > SCALED_NORM_BOUND {
        squarings += 1;
    }
    let scaled = m.scale(1.0 / 2f64.powi(squarings as i32));

    let mut sum = Tensor::eye(r);
    let mut term = Tensor::eye(r);
    for k in 1..=TAYLOR_TERMS {
        term = term.matmul(&scaled)?.scale(1.0 / k as f64);
        sum.add_assign(&term);
    }
    for _ in 0..squarings {
        sum = sum.matmul(&sum)?;
    }
    if !sum.is_finite() {
        return Err(Error::Numeric(format!(
            "matrix exponential overflowed (input norm {norm:e})"
        )));
    }
    Ok(sum)
}

/// `(Tr(e^{A⊙A}), (e^{A⊙A})ᵀ ⊙ 2A)`.
pub fn expm_with_trace_grad(a: &Tensor) -> Result<(f64, Tensor)> {
    let (r, c) = a.dims2();
    if r != c {
        return Err(Error::Dimension(format!(
            "expm_trace of non-square {:?}",
            a.shape()
        )));
    }
    let sq = a.map(|v| v * v);
    let e = expm(&sq)?;
    let trace = e.trace()?;
    let grad = e
        .transpose()
        .zip_map(&a.clone().reshape(vec![r, c])?, |x, y| 2.0 * x * y)?
        .reshape(a.shape().to_vec())?;
    Ok((trace, grad))
}

/// `Tr(e^{A⊙A})` without gradient bookkeeping.
pub fn expm_trace_value(a: &Tensor) -> Result<f64> {
    Ok(expm_with_trace_grad(a)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::gradcheck::finite_diff_check;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Plain 30-term Taylor series with no scaling.
    fn taylor_trace_oracle(b: &Tensor, terms: usize) -> f64 {
        let n = b.rows();
        let mut term = Tensor::eye(n);
        let mut total = term.trace().unwrap();
        for k in 1..=terms {
            term = term.matmul(b).unwrap().scale(1.0 / k as f64);
            total += term.trace().unwrap();
        }
        total
    }

    fn has_cycle(adj: &[Vec<bool>]) -> bool {
        // reachability closure; a cycle exists iff some node reaches itself
        let n = adj.len();
        let mut reach = adj.to_vec();
        for k in 0..n {
            for i in 0..n {
                for j in 0..n {
                    if reach[i][k] && reach[k][j] {
                        reach[i][j] = true;
                    }
                }
            }
        }
        (0..n).any(|i| reach[i][i])
    }

    #[test]
    fn zero_matrix_gives_dimension() {
        assert_eq!(expm_trace_value(&Tensor::zeros(&[3, 3])).unwrap(), 3.0);
    }

    #[test]
    fn strictly_upper_triangular_is_nilpotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut a = Tensor::zeros(&[4, 4]);
        for i in 0..4 {
            for j in i + 1..4 {
                a.set(i, j, rng.random_range(-3.0..3.0));
            }
        }
        assert!((expm_trace_value(&a).unwrap() - 4.0).abs() < 1e-12);
    }

    #[test]
    fn two_cycle_closed_form() {
        let mut a = Tensor::zeros(&[3, 3]);
        a.set(0, 1, 1.0);
        a.set(1, 0, 1.0);
        let oracle = taylor_trace_oracle(&a.map(|v| v * v), 30);
        let closed = std::f64::consts::E + (-1.0f64).exp() + 1.0;
        assert!((oracle - closed).abs() < 1e-12);
        assert!((oracle - 4.086161).abs() < 1e-6);
        assert!((expm_trace_value(&a).unwrap() - oracle).abs() < 1e-9);
    }

    #[test]
    fn matches_unscaled_taylor_on_small_norms() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let a = Tensor::matrix(5, 5, (0..25).map(|_| rng.random_range(-0.6..0.6)).collect())
                .unwrap();
            let oracle = taylor_trace_oracle(&a.map(|v| v * v), 60);
            let got = expm_trace_value(&a).unwrap();
            assert!((got - oracle).abs() < 1e-10 * oracle, "{got} vs {oracle}");
        }
    }

    #[test]
    fn non_square_rejected() {
        assert!(matches!(
            expm_trace_value(&Tensor::zeros(&[2, 3])),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn random_5x5_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let a = Tensor::matrix(5, 5, (0..25).map(|_| rng.random_range(-1.0..1.0)).collect())
            .unwrap();
        let err = finite_diff_check(|tape, v| tape.expm_trace(v), &a, 1e-5).unwrap();
        assert!(err < 1e-4, "{err}");
    }

    #[test]
    fn binary_3x3_exhaustive_against_cycle_oracle() {
        for mask in 0u32..512 {
            let mut a = Tensor::zeros(&[3, 3]);
            let mut adj = vec![vec![false; 3]; 3];
            for bit in 0..9 {
                if mask & (1 << bit) != 0 {
                    a.set(bit / 3, bit % 3, 1.0);
                    adj[bit / 3][bit % 3] = true;
                }
            }
            let tr = expm_trace_value(&a).unwrap();
            assert!(tr >= 3.0 - 1e-12);
            let excess = tr - 3.0;
            if has_cycle(&adj) {
                assert!(excess > 0.5, "mask {mask:b}: {excess}");
            } else {
                assert!(excess.abs() < 1e-12, "mask {mask:b}: {excess}");
            }
        }
    }
}
