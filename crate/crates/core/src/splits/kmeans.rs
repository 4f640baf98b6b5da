//! Lloyd's algorithm with k-means++ seeding.

use rand::Rng;

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::numcore::Tensor;
use crate::rng;

pub const MAX_ITERS: usize = 300;

#[derive(Debug, Clone)]
pub struct KMeans {
    pub assignment: Vec<usize>,
    pub centroids: Tensor,
    pub inertia: f64,
    /// Objective after every assignment step.
    pub inertia_history: Vec<f64>,
    pub iterations: usize,
}

impl KMeans {
    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.centroids.rows()];
        for &a in &self.assignment {
            sizes[a] += 1;
        }
        sizes
    }
}

/// Columns shifted to zero mean and scaled to unit variance. Constant
/// columns become zero.
pub fn standardize(x: &Tensor) -> Tensor {
    let (n, f) = x.dims2();
    let mut out = x.clone();
    for j in 0..f {
        let mean = (0..n).map(|i| x.get(i, j)).sum::<f64>() / n.max(1) as f64;
        let var = (0..n).map(|i| (x.get(i, j) - mean).powi(2)).sum::<f64>() / n.max(1) as f64;
        let sd = var.sqrt();
        for i in 0..n {
            out.set(i, j, if sd > 0.0 { (x.get(i, j) - mean) / sd } else { 0.0 });
        }
    }
    out
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: &[f64], centroids: &Tensor) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for c in 0..centroids.rows() {
        let d = sq_dist(point, centroids.row(c));
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn seed_centroids<R: Rng>(x: &Tensor, k: usize, rng: &mut R) -> Result<Tensor> {
    let n = x.rows();
    let mut chosen = vec![rng.random_range(0..n)];
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(x.row(i), x.row(chosen[0]))).collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        if total <= 0.0 {
            return Err(Error::Degenerate(format!(
                "fewer than {k} distinct rows; cannot seed {k} clusters"
            )));
        }
        let mut target = rng.random_range(0.0..total);
        let mut pick = n - 1;
        for (i, &w) in d2.iter().enumerate() {
            if w > 0.0 && target < w {
                pick = i;
                break;
            }
            target -= w;
        }
        while d2[pick] == 0.0 {
            pick -= 1;
        }
        chosen.push(pick);
        for i in 0..n {
            d2[i] = d2[i].min(sq_dist(x.row(i), x.row(pick)));
        }
    }
    let rows: Vec<Vec<f64>> = chosen.iter().map(|&i| x.row(i).to_vec()).collect();
    Tensor::from_rows(&rows)
}

/// Clusters the rows of `x` (used as given, no scaling).
pub fn kmeans(x: &Tensor, k: usize, seed: u64, exec: Exec) -> Result<KMeans> {
    let (n, f) = x.dims2();
    if k == 0 || n < k {
        return Err(Error::Degenerate(format!("cannot form {k} clusters from {n} rows")));
    }
    if !x.is_finite() {
        return Err(Error::Numeric("k-means input has non-finite entries".into()));
    }
    let mut r = rng::substream(seed, rng::KMEANS);
    let mut centroids = seed_centroids(x, k, &mut r)?;
    let mut assignment: Vec<usize> = Vec::new();
    let mut history = Vec::new();
    let mut iterations = 0;
    loop {
        let step = exec.map_range(n, |i| nearest(x.row(i), &centroids));
        let new_assign: Vec<usize> = step.iter().map(|s| s.0).collect();
        history.push(step.iter().map(|s| s.1).sum());
        let done = new_assign == assignment || iterations == MAX_ITERS;
        assignment = new_assign;
        if done {
            break;
        }
        iterations += 1;
        let mut sums = Tensor::zeros(&[k, f]);
        let mut counts = vec![0usize; k];
        for (i, &a) in assignment.iter().enumerate() {
            counts[a] += 1;
            for j in 0..f {
                sums.set(a, j, sums.get(a, j) + x.get(i, j));
            }
        }
        for c in 0..k {
            if counts[c] == 0 {
                // reseed an empty cluster at the point farthest from its centroid
                let far = (0..n)
                    .max_by(|&a, &b| step[a].1.total_cmp(&step[b].1).then(b.cmp(&a)))
                    .unwrap();
                for j in 0..f {
                    centroids.set(c, j, x.get(far, j));
                }
            } else {
                for j in 0..f {
                    centroids.set(c, j, sums.get(c, j) / counts[c] as f64);
                }
            }
        }
    }
    Ok(KMeans {
        inertia: *history.last().unwrap(),
        assignment,
        centroids,
        inertia_history: history,
        iterations,
    })
}

/// Two clusters over standardized columns.
pub fn kmeans2(x: &Tensor, seed: u64, exec: Exec) -> Result<KMeans> {
    let n = x.rows();
    if n < 2 || (1..n).all(|i| x.row(i) == x.row(0)) {
        return Err(Error::Degenerate("k-means needs at least 2 distinct rows".into()));
    }
    kmeans(&standardize(x), 2, seed, exec)
}
