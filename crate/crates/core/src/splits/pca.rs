//! Principal components via a cyclic Jacobi eigensolver.

use crate::error::{Error, Result};
use crate::numcore::Tensor;

const MAX_SWEEPS: usize = 100;

/// Eigenvalues (descending) and matching unit eigenvectors (as columns) of
/// a symmetric matrix.
pub fn symmetric_eigen(m: &Tensor) -> Result<(Vec<f64>, Tensor)> {
    let (n, c) = m.dims2();
    if n != c {
        return Err(Error::Dimension(format!("eigen: matrix is {n}×{c}")));
    }
    let mut a = m.data().to_vec();
    let mut v = Tensor::eye(n).data().to_vec();
    let scale: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let tol = 1e-15 * scale.max(f64::MIN_POSITIVE);
    for _ in 0..MAX_SWEEPS {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i * n + j] * a[i * n + j])
            .sum::<f64>()
            .sqrt();
        if off <= tol {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq.abs() <= f64::MIN_POSITIVE {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let cs = 1.0 / (t * t + 1.0).sqrt();
                let sn = t * cs;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = cs * akp - sn * akq;
                    a[k * n + q] = sn * akp + cs * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = cs * apk - sn * aqk;
                    a[q * n + k] = sn * apk + cs * aqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = cs * vkp - sn * vkq;
                    v[k * n + q] = sn * vkp + cs * vkq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| a[y * n + y].total_cmp(&a[x * n + x]).then(x.cmp(&y)));
    let values = order.iter().map(|&i| a[i * n + i]).collect();
    let mut vecs = Tensor::zeros(&[n, n]);
    for (col, &src) in order.iter().enumerate() {
        for row in 0..n {
            vecs.set(row, col, v[row * n + src]);
        }
    }
    Ok((values, vecs))
}

#[derive(Debug, Clone)]
pub struct Pca {
    pub mean: Vec<f64>,
    /// Indices of the input columns that carry variance.
    pub kept: Vec<usize>,
    /// Eigenvalues of the covariance, descending, for every kept column.
    pub eigenvalues: Vec<f64>,
    /// `kept × k` loading matrix.
    pub components: Tensor,
}

impl Pca {
    /// Fits on the rows of `x`, keeping up to `n_components` directions of
    /// nonzero variance. Constant columns are dropped.
    pub fn fit(x: &Tensor, n_components: usize) -> Result<Self> {
        let (n, f) = x.dims2();
        if n < 2 {
            return Err(Error::Degenerate(format!("PCA needs at least 2 rows, got {n}")));
        }
        let mean: Vec<f64> = (0..f).map(|j| (0..n).map(|i| x.get(i, j)).sum::<f64>() / n as f64).collect();
        let kept: Vec<usize> = (0..f)
            .filter(|&j| (0..n).any(|i| x.get(i, j) != x.get(0, j)))
            .collect();
        let centered = center(x, &mean, &kept);
        let d = kept.len();
        let mut cov = vec![0.0; d * d];
        crate::numcore::tensor::gemm(d, n, d, centered.data(), true, centered.data(), false, &mut cov);
        let cov = Tensor::matrix(d, d, cov.into_iter().map(|v| v / (n - 1) as f64).collect())?;
        let (eigenvalues, vecs) = symmetric_eigen(&cov)?;
        let top = eigenvalues.first().copied().unwrap_or(0.0);
        let rank = eigenvalues
            .iter()
            .filter(|&&e| e > top * 1e-12 * d.max(1) as f64 && e > 0.0)
            .count();
        let k = n_components.min(rank);
        let mut components = Tensor::zeros(&[d, k]);
        for c in 0..k {
            let mut best = 0;
            for r in 1..d {
                if vecs.get(r, c).abs() > vecs.get(best, c).abs() {
                    best = r;
                }
            }
            let sign = if vecs.get(best, c) < 0.0 { -1.0 } else { 1.0 };
            for r in 0..d {
                components.set(r, c, sign * vecs.get(r, c));
            }
        }
        Ok(Pca {
            mean,
            kept,
            eigenvalues,
            components,
        })
    }

    pub fn num_components(&self) -> usize {
        self.components.cols()
    }

    pub fn transform(&self, x: &Tensor) -> Result<Tensor> {
        if x.cols() != self.mean.len() {
            return Err(Error::Dimension(format!(
                "PCA fitted on {} columns, got {}",
                self.mean.len(),
                x.cols()
            )));
        }
        center(x, &self.mean, &self.kept).matmul(&self.components)
    }
}

fn center(x: &Tensor, mean: &[f64], kept: &[usize]) -> Tensor {
    let n = x.rows();
    let mut out = Tensor::zeros(&[n, kept.len()]);
    for i in 0..n {
        for (c, &j) in kept.iter().enumerate() {
            out.set(i, c, x.get(i, j) - mean[j]);
        }
    }
    out
}
