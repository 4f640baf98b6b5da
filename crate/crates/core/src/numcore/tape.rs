//! Reverse-mode automatic differentiation over [`Tensor`] values.
//!
//! A [`Tape`] records every operation in order; [`Tape::backward`] walks the
//! record in reverse and accumulates gradients into the leaves that asked
//! for them. Handles ([`Var`]) are plain indices into the tape.

use crate::error::{Error, Result};

use super::expm::expm_with_trace_grad;
use super::tensor::{gemm, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    /// `a + b`, `b` possibly a broadcast row vector.
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    /// Matrix times a scalar variable.
    ScaleBy(Var, Var),
    Relu(Var),
    Sigmoid(Var),
    SoftmaxRows(Var),
    LogClamped(Var, f64),
    MeanRows(Var),
    Sum(Var),
    FrobeniusSq(Var),
    /// Analytic gradient `(e^{A⊙A})ᵀ ⊙ 2A` stored at record time.
    ExpmTrace(Var, Tensor),
    Entry(Var, usize, usize),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Operation record for one forward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`], indexed by leaf handle.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    visit_order: Vec<usize>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }

    /// Node indices in the order the backward pass processed them.
    pub fn visit_order(&self) -> &[usize] {
        &self.visit_order
    }
}

fn is_row_broadcast(a: &Tensor, b: &Tensor) -> bool {
    let (ar, ac) = a.dims2();
    let (br, bc) = b.dims2();
    br == 1 && bc == ac && ar != 1
}

fn column_sums(g: &Tensor) -> Tensor {
    let (r, c) = g.dims2();
    let mut out = vec![0.0; c];
    for i in 0..r {
        for (o, v) in out.iter_mut().zip(g.row(i)) {
            *o += v;
        }
    }
    Tensor::matrix(1, c, out).expect("column sums")
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Records a leaf; it is differentiated iff `t.requires_grad()`.
    pub fn leaf(&mut self, t: Tensor) -> Var {
        let rg = t.requires_grad();
        self.push(t, Op::Leaf, rg)
    }

    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    fn broadcast_zip(&self, a: Var, b: Var, op: &str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let ta = self.value(a);
        let tb = self.value(b);
        if ta.dims2() == tb.dims2() {
            return ta.zip_map(tb, f);
        }
        if is_row_broadcast(ta, tb) {
            let (r, c) = ta.dims2();
            let mut out = ta.clone().with_requires_grad(false);
            let data = out.data_mut();
            for i in 0..r {
                for j in 0..c {
                    data[i * c + j] = f(data[i * c + j], tb.data()[j]);
                }
            }
            return Ok(out);
        }
        Err(Error::Dimension(format!(
            "{op}: shapes {:?} and {:?} are incompatible",
            ta.shape(),
            tb.shape()
        )))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.broadcast_zip(a, b, "add", |x, y| x + y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.broadcast_zip(a, b, "sub", |x, y| x - y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Sub(a, b), rg))
    }

    /// Hadamard product; shapes must agree.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).scale(s);
        let rg = self.rg(a);
        self.push(out, Op::Scale(a, s), rg)
    }

    pub fn scale_by(&mut self, a: Var, s: Var) -> Result<Var> {
        if self.value(s).len() != 1 {
            return Err(Error::Dimension(format!(
                "scale_by expects a scalar factor, got {:?}",
                self.value(s).shape()
            )));
        }
        let out = self.value(a).scale(self.value(s).item());
        let rg = self.rg(a) || self.rg(s);
        Ok(self.push(out, Op::ScaleBy(a, s), rg))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|v| v.max(0.0));
        let rg = self.rg(a);
        self.push(out, Op::Relu(a), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|v| 1.0 / (1.0 + (-v).exp()));
        let rg = self.rg(a);
        self.push(out, Op::Sigmoid(a), rg)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let (r, c) = t.dims2();
        let mut out = t.clone().with_requires_grad(false);
        let data = out.data_mut();
        for i in 0..r {
            let row = &mut data[i * c..(i + 1) * c];
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                z += *v;
            }
            for v in row.iter_mut() {
                *v /= z;
            }
        }
        let rg = self.rg(a);
        self.push(out, Op::SoftmaxRows(a), rg)
    }

    /// `ln(max(x, floor))`; zero gradient where the floor is active.
    pub fn log_clamped(&mut self, a: Var, floor: f64) -> Var {
        let out = self.value(a).map(|v| v.max(floor).ln());
        let rg = self.rg(a);
        self.push(out, Op::LogClamped(a, floor), rg)
    }

    /// Mean over rows (`m×n → 1×n`). Each column is summed in sorted order
    /// so the result does not depend on row order.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let out = mean_rows_sorted(self.value(a));
        let rg = self.rg(a);
        self.push(out, Op::MeanRows(a), rg)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        let rg = self.rg(a);
        self.push(out, Op::Sum(a), rg)
    }

    /// Squared Frobenius norm.
    pub fn frobenius_sq(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).data().iter().map(|v| v * v).sum());
        let rg = self.rg(a);
        self.push(out, Op::FrobeniusSq(a), rg)
    }

    /// `Tr(e^{A⊙A})` with its analytic gradient.
    pub fn expm_trace(&mut self, a: Var) -> Result<Var> {
        let (trace, grad) = expm_with_trace_grad(self.value(a))?;
        let rg = self.rg(a);
        Ok(self.push(Tensor::scalar(trace), Op::ExpmTrace(a, grad), rg))
    }

    /// Scalar view of entry `(r, c)`.
    pub fn entry(&mut self, a: Var, r: usize, c: usize) -> Result<Var> {
        let t = self.value(a);
        let (rows, cols) = t.dims2();
        if r >= rows || c >= cols {
            return Err(Error::Dimension(format!(
                "entry ({r}, {c}) out of range for {:?}",
                t.shape()
            )));
        }
        let out = Tensor::scalar(t.get(r, c));
        let rg = self.rg(a);
        Ok(self.push(out, Op::Entry(a, r, c), rg))
    }

    /// Reverse pass from a scalar output.
    ///
    /// Afterwards every differentiable leaf that precedes `out` has a
    /// gradient of its own shape (zeros when unreachable).
    pub fn backward(&self, out: Var) -> Result<Gradients> {
        if self.value(out).len() != 1 {
            return Err(Error::Dimension(format!(
                "backward needs a scalar output, got {:?}",
                self.value(out).shape()
            )));
        }
        let n = out.0 + 1;
        let mut grads: Vec<Option<Tensor>> = vec![None; n];
        let mut visit_order = Vec::new();
        if self.rg(out) {
            grads[out.0] = Some(Tensor::filled(self.value(out).shape(), 1.0));
        }

        for idx in (0..n).rev() {
            let node = &self.nodes[idx];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            visit_order.push(idx);
            self.propagate(node, &g, &mut grads);
        }

        for (idx, node) in self.nodes[..n].iter().enumerate() {
            if matches!(node.op, Op::Leaf) && node.requires_grad && grads[idx].is_none() {
                grads[idx] = Some(Tensor::zeros(node.value.shape()));
            }
            if !matches!(node.op, Op::Leaf) {
                grads[idx] = None;
            }
        }
        Ok(Gradients { grads, visit_order })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.rg(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => {
                let shape = self.value(v).shape().to_vec();
                *slot = Some(g.reshape(shape).expect("gradient shape"));
            }
        }
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let ta = self.value(*a);
                let tb = self.value(*b);
                let (m, k) = ta.dims2();
                let n = tb.cols();
                if self.rg(*a) {
                    let mut da = vec![0.0; m * k];
                    gemm(m, n, k, g.data(), false, tb.data(), true, &mut da);
                    self.accumulate(grads, *a, Tensor::matrix(m, k, da).unwrap());
                }
                if self.rg(*b) {
                    let mut db = vec![0.0; k * n];
                    gemm(k, m, n, ta.data(), true, g.data(), false, &mut db);
                    self.accumulate(grads, *b, Tensor::matrix(k, n, db).unwrap());
                }
            }
            Op::Add(a, b) | Op::Sub(a, b) => {
                let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                self.accumulate(grads, *a, g.clone());
                if self.rg(*b) {
                    let gb = if is_row_broadcast(self.value(*a), self.value(*b)) {
                        column_sums(g)
                    } else {
                        g.clone()
                    };
                    self.accumulate(grads, *b, gb.scale(sign));
                }
            }
            Op::Mul(a, b) => {
                if self.rg(*a) {
                    let ga = g.zip_map(self.value(*b), |x, y| x * y).unwrap();
                    self.accumulate(grads, *a, ga);
                }
                if self.rg(*b) {
                    let gb = g.zip_map(self.value(*a), |x, y| x * y).unwrap();
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Scale(a, s) => self.accumulate(grads, *a, g.scale(*s)),
            Op::ScaleBy(a, s) => {
                let factor = self.value(*s).item();
                if self.rg(*a) {
                    self.accumulate(grads, *a, g.scale(factor));
                }
                if self.rg(*s) {
                    let ds: f64 = g
                        .data()
                        .iter()
                        .zip(self.value(*a).data())
                        .map(|(x, y)| x * y)
                        .sum();
                    self.accumulate(grads, *s, Tensor::scalar(ds));
                }
            }
            Op::Relu(a) => {
                let ga = g
                    .zip_map(self.value(*a), |gv, x| if x > 0.0 { gv } else { 0.0 })
                    .unwrap();
                self.accumulate(grads, *a, ga);
            }
            Op::Sigmoid(a) => {
                let ga = g.zip_map(&node.value, |gv, y| gv * y * (1.0 - y)).unwrap();
                self.accumulate(grads, *a, ga);
            }
            Op::SoftmaxRows(a) => {
                let y = &node.value;
                let (r, c) = y.dims2();
                let mut out = vec![0.0; r * c];
                for i in 0..r {
                    let yr = y.row(i);
                    let gr = g.row(i);
                    let dot: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                    for j in 0..c {
                        out[i * c + j] = yr[j] * (gr[j] - dot);
                    }
                }
                self.accumulate(grads, *a, Tensor::matrix(r, c, out).unwrap());
            }
            Op::LogClamped(a, floor) => {
                let ga = g
                    .zip_map(self.value(*a), |gv, x| if x > *floor { gv / x } else { 0.0 })
                    .unwrap();
                self.accumulate(grads, *a, ga);
            }
            Op::MeanRows(a) => {
                let (r, c) = self.value(*a).dims2();
                let inv = 1.0 / r as f64;
                let mut out = vec![0.0; r * c];
                for row in out.chunks_mut(c) {
                    for (o, gv) in row.iter_mut().zip(g.data()) {
                        *o = gv * inv;
                    }
                }
                self.accumulate(grads, *a, Tensor::matrix(r, c, out).unwrap());
            }
            Op::Sum(a) => {
                let gv = g.item();
                self.accumulate(grads, *a, Tensor::filled(self.value(*a).shape(), gv));
            }
            Op::FrobeniusSq(a) => {
                let gv = g.item();
                self.accumulate(grads, *a, self.value(*a).scale(2.0 * gv));
            }
            Op::ExpmTrace(a, grad) => {
                self.accumulate(grads, *a, grad.scale(g.item()));
            }
            Op::Entry(a, r, c) => {
                let mut ga = Tensor::zeros(self.value(*a).shape());
                ga.set(*r, *c, g.item());
                self.accumulate(grads, *a, ga);
            }
        }
    }
}

pub(crate) fn mean_rows_sorted(t: &Tensor) -> Tensor {
    let (r, c) = t.dims2();
    let mut col = Vec::with_capacity(r);
    let mut out = vec![0.0; c];
    for (j, o) in out.iter_mut().enumerate() {
        col.clear();
        col.extend((0..r).map(|i| t.data()[i * c + j]));
        col.sort_by(f64::total_cmp);
        *o = col.iter().sum::<f64>() / r.max(1) as f64;
    }
    Tensor::matrix(1, c, out).unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::gradcheck::finite_diff_check;
    use proptest::prelude::*;

    fn m(rows: &[Vec<f64>]) -> Tensor {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn relu_sign_cases() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new(vec![3], vec![-1.0, 0.0, 2.0]).unwrap());
        let y = tape.relu(x);
        assert_eq!(tape.value(y).data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn softmax_symmetric() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new(vec![2], vec![0.0, 0.0]).unwrap());
        let y = tape.softmax_rows(x);
        assert_eq!(tape.value(y).data(), &[0.5, 0.5]);
    }

    #[test]
    fn frobenius_of_identical_difference_is_zero() {
        let mut tape = Tape::new();
        let a = tape.constant(m(&[vec![1.0, 2.0], vec![3.0, 4.0]]));
        let b = tape.constant(m(&[vec![1.0, 2.0], vec![3.0, 4.0]]));
        let d = tape.sub(a, b).unwrap();
        let f = tape.frobenius_sq(d);
        assert_eq!(tape.value(f).item(), 0.0);
    }

    #[test]
    fn incompatible_add_is_dimension_error() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[2, 2]));
        assert!(matches!(tape.add(a, b), Err(Error::Dimension(_))));
        // column vector does not broadcast
        let c = tape.constant(Tensor::zeros(&[2, 1]));
        assert!(tape.add(a, c).is_err());
    }

    #[test]
    fn backward_visits_in_reverse_recording_order() {
        let mut tape = Tape::new();
        let x = tape.param(m(&[vec![1.0, -2.0]]));
        let w = tape.param(m(&[vec![0.5], vec![0.25]]));
        let y = tape.matmul(x, w).unwrap();
        let z = tape.sigmoid(y);
        let s = tape.sum(z);
        let grads = tape.backward(s).unwrap();
        assert_eq!(grads.visit_order(), &[s.index(), z.index(), y.index()]);
        assert_eq!(grads.get(x).unwrap().shape(), &[1, 2]);
        assert_eq!(grads.get(w).unwrap().shape(), &[2, 1]);
    }

    #[test]
    fn unreachable_leaf_gets_zero_gradient() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::scalar(2.0));
        let unused = tape.param(Tensor::zeros(&[2, 2]));
        let y = tape.mul(x, x).unwrap();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.get(x).unwrap().item(), 4.0);
        assert_eq!(g.get(unused).unwrap().data(), &[0.0; 4]);
    }

    #[test]
    fn row_broadcast_gradient_sums_columns() {
        let mut tape = Tape::new();
        let a = tape.param(Tensor::zeros(&[3, 2]));
        let b = tape.param(Tensor::new(vec![2], vec![1.0, 2.0]).unwrap());
        let c = tape.add(a, b).unwrap();
        let s = tape.sum(c);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(b).unwrap().data(), &[3.0, 3.0]);
        assert_eq!(g.get(b).unwrap().shape(), &[2]);
    }

    #[test]
    fn sum_of_squares_gradcheck() {
        let x = Tensor::new(vec![2], vec![1.0, 2.0]).unwrap();
        let err = finite_diff_check(
            |tape, v| {
                let sq = tape.mul(v, v)?;
                Ok(tape.sum(sq))
            },
            &x,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "{err}");
    }

    fn arb_matrix(r: usize, c: usize) -> impl Strategy<Value = Tensor> {
        proptest::collection::vec(-2.0f64..2.0, r * c)
            .prop_map(move |d| Tensor::matrix(r, c, d).unwrap())
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn softmax_rows_are_distributions(t in arb_matrix(4, 5)) {
            let mut tape = Tape::new();
            let x = tape.constant(t);
            let y = tape.softmax_rows(x);
            let y = tape.value(y);
            for i in 0..4 {
                let row = y.row(i);
                prop_assert!(row.iter().all(|&p| p >= 0.0));
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            }
        }

        #[test]
        fn mean_rows_is_permutation_invariant(t in arb_matrix(6, 3), seed in 0u64..1000) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let mut order: Vec<usize> = (0..6).collect();
            order.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let shuffled = t.select_rows(&order);
            let mut tape = Tape::new();
            let a = tape.constant(t);
            let b = tape.constant(shuffled);
            let ma = tape.mean_rows(a);
            let mb = tape.mean_rows(b);
            prop_assert_eq!(tape.value(ma).data(), tape.value(mb).data());
        }

        // Every differentiable op, composed on a small graph, agrees with
        // central differences.
        #[test]
        fn composite_ops_gradcheck(
            x in arb_matrix(3, 4),
            w in arb_matrix(4, 2),
            b in arb_matrix(1, 2),
        ) {
            let err = finite_diff_check(
                |tape, v| {
                    let wv = tape.constant(w.clone());
                    let bv = tape.constant(b.clone());
                    let h = tape.matmul(v, wv)?;
                    let h = tape.add(h, bv)?;
                    let s = tape.sigmoid(h);
                    let r = tape.relu(h);
                    let p = tape.softmax_rows(h);
                    let lp = tape.log_clamped(p, 1e-12);
                    let q = tape.mul(s, lp)?;
                    let q = tape.sub(q, r)?;
                    let mr = tape.mean_rows(q);
                    let e = tape.entry(v, 1, 2)?;
                    let sc = tape.scale_by(mr, e)?;
                    let f1 = tape.frobenius_sq(sc);
                    let f2 = tape.sum(q);
                    let f2 = tape.scale(f2, 0.5);
                    tape.add(f1, f2)
                },
                &x,
                1e-5,
            ).unwrap();
            prop_assert!(err <= 1e-4, "rel err {}", err);
        }
    }
}
