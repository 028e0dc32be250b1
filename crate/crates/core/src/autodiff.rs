//! Reverse-mode automatic differentiation over dense row-major matrices.
//!
//! A [`Tape`] records every operation of one forward pass. Model parameters
//! are bound first and borrowed, so `Var(i)` for `i < params.len()` is
//! parameter `i`. Calling [`Tape::backward`] walks the record in reverse and
//! returns gradients for every leaf that requires them.

use std::ops::Range;

use ndarray::{s, Array1, Array2, ArrayView2, Axis, CowArray, Ix2, Zip};

use crate::error::{Error, Result};
use crate::params::ParamSet;
use crate::scalar::Scalar;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<S> {
    Leaf,
    MatMul(Var, Var),
    /// `a · bᵀ`
    MatMulNt(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, S),
    Offset(Var),
    Tanh(Var),
    Relu(Var),
    Exp(Var),
    Square(Var),
    Sum(Var),
    Mean(Var),
    CausalSoftmax(Var),
    LayerNorm(Var, Array1<S>),
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    SliceRows(Var, usize),
    ConcatRows(Vec<Var>),
    SegmentMean(Var, Vec<Range<usize>>),
}

struct Node<'p, S> {
    value: CowArray<'p, S, Ix2>,
    op: Op<S>,
    tracked: bool,
}

/// One forward pass worth of recorded operations.
pub struct Tape<'p, S: Scalar> {
    nodes: Vec<Node<'p, S>>,
    n_params: usize,
}

/// Gradients of a scalar output with respect to tracked leaves.
pub struct Gradients<S> {
    grads: Vec<Option<Array2<S>>>,
}

impl<S: Scalar> Gradients<S> {
    pub fn get(&self, v: Var) -> Option<&Array2<S>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient for `v`, or zeros of the given shape if nothing flowed into it.
    pub fn get_or_zeros(&self, v: Var, shape: (usize, usize)) -> Array2<S> {
        self.get(v).cloned().unwrap_or_else(|| Array2::zeros(shape))
    }

    /// Parameter gradients in [`ParamSet`] order.
    pub fn param_grads(&self, params: &ParamSet<S>) -> Vec<Array2<S>> {
        params
            .iter()
            .enumerate()
            .map(|(i, (_, p))| self.get_or_zeros(Var(i), p.dim()))
            .collect()
    }
}

impl<'p, S: Scalar> Tape<'p, S> {
    /// Empty tape with no parameters.
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            n_params: 0,
        }
    }

    /// Tape with every tensor in `params` bound as a tracked leaf.
    pub fn with_params(params: &'p ParamSet<S>) -> Self {
        let nodes = params
            .iter()
            .map(|(_, p)| Node {
                value: CowArray::from(p.view()),
                op: Op::Leaf,
                tracked: true,
            })
            .collect::<Vec<_>>();
        let n_params = nodes.len();
        Tape { nodes, n_params }
    }

    /// Tape with params bound but untracked; for inference.
    pub fn frozen(params: &'p ParamSet<S>) -> Self {
        let mut t = Self::with_params(params);
        for n in &mut t.nodes {
            n.tracked = false;
        }
        t
    }

    /// Var of the `i`-th bound parameter.
    pub fn param(&self, i: usize) -> Var {
        assert!(i < self.n_params, "parameter {i} not bound on this tape");
        Var(i)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Untracked input.
    pub fn constant(&mut self, value: Array2<S>) -> Var {
        self.push_leaf(value, false)
    }

    /// Leaf whose gradient is reported by [`Tape::backward`].
    pub fn variable(&mut self, value: Array2<S>) -> Var {
        self.push_leaf(value, true)
    }

    fn push_leaf(&mut self, value: Array2<S>, tracked: bool) -> Var {
        self.nodes.push(Node {
            value: CowArray::from(value),
            op: Op::Leaf,
            tracked,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> ArrayView2<'_, S> {
        self.nodes[v.0].value.view()
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dim()
    }

    /// Scalar value of a 1×1 node.
    pub fn scalar(&self, v: Var) -> S {
        let val = self.value(v);
        debug_assert_eq!(val.dim(), (1, 1));
        val[[0, 0]]
    }

    /// Fails with a numeric error naming `stage` if `v` holds a non-finite entry.
    pub fn ensure_finite(&self, v: Var, stage: &str) -> Result<()> {
        if self.value(v).iter().all(|x| x.is_finite()) {
            Ok(())
        } else {
            Err(Error::Numeric {
                stage: stage.to_string(),
            })
        }
    }

    fn push(&mut self, value: Array2<S>, op: Op<S>, inputs: &[Var]) -> Var {
        let tracked = inputs.iter().any(|v| self.nodes[v.0].tracked);
        self.nodes.push(Node {
            value: CowArray::from(value),
            op,
            tracked,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(&self.value(b));
        self.push(v, Op::MatMul(a, b), &[a, b])
    }

    /// `a · bᵀ`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(&self.value(b).t());
        self.push(v, Op::MatMulNt(a, b), &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = &self.value(a) + &self.value(b);
        self.push(v, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = &self.value(a) - &self.value(b);
        self.push(v, Op::Sub(a, b), &[a, b])
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = &self.value(a) * &self.value(b);
        self.push(v, Op::Mul(a, b), &[a, b])
    }

    /// Adds the 1×n row `row` to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        debug_assert_eq!(self.shape(row).0, 1);
        let v = &self.value(a) + &self.value(row);
        self.push(v, Op::AddRow(a, row), &[a, row])
    }

    /// Multiplies every row of `a` elementwise by the 1×n row `row`.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        debug_assert_eq!(self.shape(row).0, 1);
        let v = &self.value(a) * &self.value(row);
        self.push(v, Op::MulRow(a, row), &[a, row])
    }

    pub fn scale(&mut self, a: Var, c: S) -> Var {
        let v = self.value(a).mapv(|x| x * c);
        self.push(v, Op::Scale(a, c), &[a])
    }

    /// `a + c` elementwise.
    pub fn offset(&mut self, a: Var, c: S) -> Var {
        let v = self.value(a).mapv(|x| x + c);
        self.push(v, Op::Offset(a), &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| x.tanh());
        self.push(v, Op::Tanh(a), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| x.max(S::zero()));
        self.push(v, Op::Relu(a), &[a])
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| x.exp());
        self.push(v, Op::Exp(a), &[a])
    }

    pub fn square(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| x * x);
        self.push(v, Op::Square(a), &[a])
    }

    /// Sum of all entries as a 1×1 node.
    pub fn sum(&mut self, a: Var) -> Var {
        let v = Array2::from_elem((1, 1), self.value(a).sum());
        self.push(v, Op::Sum(a), &[a])
    }

    /// Mean of all entries as a 1×1 node.
    pub fn mean(&mut self, a: Var) -> Var {
        let val = self.value(a);
        let n = S::of(val.len() as f64);
        let v = Array2::from_elem((1, 1), val.sum() / n);
        self.push(v, Op::Mean(a), &[a])
    }

    /// Row softmax of a square score matrix where row `i` only sees columns `0..=i`.
    /// Masked entries are exactly zero and never read.
    pub fn causal_softmax(&mut self, a: Var) -> Var {
        let scores = self.value(a);
        let (rows, cols) = scores.dim();
        assert_eq!(rows, cols, "causal softmax needs a square score matrix");
        let mut out = Array2::zeros((rows, cols));
        for i in 0..rows {
            let row = scores.slice(s![i, ..=i]);
            let m = row.iter().fold(S::neg_infinity(), |m, &x| m.max(x));
            let mut z = S::zero();
            for j in 0..=i {
                let e = (row[j] - m).exp();
                out[[i, j]] = e;
                z = z + e;
            }
            for j in 0..=i {
                out[[i, j]] = out[[i, j]] / z;
            }
        }
        self.push(out, Op::CausalSoftmax(a), &[a])
    }

    /// Per-row standardization `(x - mean) / sqrt(var + eps)` without affine terms.
    pub fn layer_norm(&mut self, a: Var, eps: S) -> Var {
        let x = self.value(a);
        let (rows, cols) = x.dim();
        let n = S::of(cols as f64);
        let mut out = Array2::zeros((rows, cols));
        let mut inv_std = Array1::zeros(rows);
        for (i, row) in x.outer_iter().enumerate() {
            let mean = row.sum() / n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<S>() / n;
            let inv = S::one() / (var + eps).sqrt();
            inv_std[i] = inv;
            for (o, &v) in out.row_mut(i).iter_mut().zip(row.iter()) {
                *o = (v - mean) * inv;
            }
        }
        self.push(out, Op::LayerNorm(a, inv_std), &[a])
    }

    pub fn slice_cols(&mut self, a: Var, cols: Range<usize>) -> Var {
        let v = self.value(a).slice(s![.., cols.clone()]).to_owned();
        self.push(v, Op::SliceCols(a, cols.start), &[a])
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views = parts.iter().map(|&p| self.value(p)).collect::<Vec<_>>();
        let v = ndarray::concatenate(Axis(1), &views).expect("concat_cols: row counts differ");
        self.push(v, Op::ConcatCols(parts.to_vec()), parts)
    }

    pub fn slice_rows(&mut self, a: Var, rows: Range<usize>) -> Var {
        let v = self.value(a).slice(s![rows.clone(), ..]).to_owned();
        self.push(v, Op::SliceRows(a, rows.start), &[a])
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let views = parts.iter().map(|&p| self.value(p)).collect::<Vec<_>>();
        let v = ndarray::concatenate(Axis(0), &views).expect("concat_rows: column counts differ");
        self.push(v, Op::ConcatRows(parts.to_vec()), parts)
    }

    /// Row `k` of the result is the mean of the rows of `a` in `segments[k]`.
    pub fn segment_mean(&mut self, a: Var, segments: &[Range<usize>]) -> Var {
        let x = self.value(a);
        let cols = x.ncols();
        let mut out = Array2::zeros((segments.len(), cols));
        for (k, seg) in segments.iter().enumerate() {
            let n = S::of(seg.len() as f64);
            let mut acc = out.row_mut(k);
            for r in seg.clone() {
                acc += &x.row(r);
            }
            acc.mapv_inplace(|v| v / n);
        }
        self.push(out, Op::SegmentMean(a, segments.to_vec()), &[a])
    }

    /// Gradients of the 1×1 node `output` with respect to all tracked leaves.
    pub fn backward(&self, output: Var) -> Gradients<S> {
        assert_eq!(self.shape(output), (1, 1), "backward needs a scalar output");
        self.backward_seeded(&[(output, Array2::from_elem((1, 1), S::one()))])
    }

    /// Reverse pass starting from explicit output cotangents.
    pub fn backward_seeded(&self, seeds: &[(Var, Array2<S>)]) -> Gradients<S> {
        let mut grads: Vec<Option<Array2<S>>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut start = 0;
        for (v, g) in seeds {
            accumulate(&mut grads, *v, g.clone());
            start = start.max(v.0 + 1);
        }
        for i in (0..start).rev() {
            let node = &self.nodes[i];
            if !node.tracked || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, g, &mut grads);
        }
        Gradients { grads }
    }

    fn tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    fn propagate(&self, i: usize, g: Array2<S>, grads: &mut [Option<Array2<S>>]) {
        let y = self.nodes[i].value.view();
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.tracked(*a) {
                    accumulate(grads, *a, g.dot(&self.value(*b).t()));
                }
                if self.tracked(*b) {
                    accumulate(grads, *b, self.value(*a).t().dot(&g));
                }
            }
            Op::MatMulNt(a, b) => {
                if self.tracked(*a) {
                    accumulate(grads, *a, g.dot(&self.value(*b)));
                }
                if self.tracked(*b) {
                    accumulate(grads, *b, g.t().dot(&self.value(*a)));
                }
            }
            Op::Add(a, b) => {
                if self.tracked(*b) {
                    accumulate(grads, *b, g.clone());
                }
                if self.tracked(*a) {
                    accumulate(grads, *a, g);
                }
            }
            Op::Sub(a, b) => {
                if self.tracked(*b) {
                    accumulate(grads, *b, g.mapv(|x| -x));
                }
                if self.tracked(*a) {
                    accumulate(grads, *a, g);
                }
            }
            Op::Mul(a, b) => {
                if self.tracked(*a) {
                    accumulate(grads, *a, &g * &self.value(*b));
                }
                if self.tracked(*b) {
                    accumulate(grads, *b, &g * &self.value(*a));
                }
            }
            Op::AddRow(a, r) => {
                if self.tracked(*r) {
                    accumulate(grads, *r, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
                if self.tracked(*a) {
                    accumulate(grads, *a, g);
                }
            }
            Op::MulRow(a, r) => {
                if self.tracked(*r) {
                    let gr = (&g * &self.value(*a)).sum_axis(Axis(0)).insert_axis(Axis(0));
                    accumulate(grads, *r, gr);
                }
                if self.tracked(*a) {
                    accumulate(grads, *a, &g * &self.value(*r));
                }
            }
            Op::Scale(a, c) => {
                let c = *c;
                accumulate(grads, *a, g.mapv(|x| x * c));
            }
            Op::Offset(a) => accumulate(grads, *a, g),
            Op::Tanh(a) => {
                let mut ga = g;
                Zip::from(&mut ga).and(&y).for_each(|gv, &yv| *gv = *gv * (S::one() - yv * yv));
                accumulate(grads, *a, ga);
            }
            Op::Relu(a) => {
                let mut ga = g;
                Zip::from(&mut ga).and(&self.value(*a)).for_each(|gv, &xv| {
                    if xv <= S::zero() {
                        *gv = S::zero();
                    }
                });
                accumulate(grads, *a, ga);
            }
            Op::Exp(a) => accumulate(grads, *a, &g * &y),
            Op::Square(a) => {
                let two = S::of(2.0);
                let mut ga = g;
                Zip::from(&mut ga).and(&self.value(*a)).for_each(|gv, &xv| *gv = *gv * two * xv);
                accumulate(grads, *a, ga);
            }
            Op::Sum(a) => {
                let gv = g[[0, 0]];
                accumulate(grads, *a, Array2::from_elem(self.shape(*a), gv));
            }
            Op::Mean(a) => {
                let shape = self.shape(*a);
                let gv = g[[0, 0]] / S::of((shape.0 * shape.1) as f64);
                accumulate(grads, *a, Array2::from_elem(shape, gv));
            }
            Op::CausalSoftmax(a) => {
                let rows = y.nrows();
                let mut ga = Array2::zeros(y.dim());
                for r in 0..rows {
                    let mut dot = S::zero();
                    for c in 0..=r {
                        dot = dot + y[[r, c]] * g[[r, c]];
                    }
                    for c in 0..=r {
                        ga[[r, c]] = y[[r, c]] * (g[[r, c]] - dot);
                    }
                }
                accumulate(grads, *a, ga);
            }
            Op::LayerNorm(a, inv_std) => {
                let cols = S::of(y.ncols() as f64);
                let mut ga = Array2::zeros(y.dim());
                for r in 0..y.nrows() {
                    let gr = g.row(r);
                    let yr = y.row(r);
                    let mean_g = gr.sum() / cols;
                    let mean_gy = gr.iter().zip(yr.iter()).map(|(&a, &b)| a * b).sum::<S>() / cols;
                    let inv = inv_std[r];
                    for ((o, &gv), &yv) in ga.row_mut(r).iter_mut().zip(gr.iter()).zip(yr.iter()) {
                        *o = inv * (gv - mean_g - yv * mean_gy);
                    }
                }
                accumulate(grads, *a, ga);
            }
            Op::SliceCols(a, start) => {
                let mut ga = Array2::zeros(self.shape(*a));
                ga.slice_mut(s![.., *start..*start + g.ncols()]).assign(&g);
                accumulate(grads, *a, ga);
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for p in parts {
                    let w = self.shape(*p).1;
                    if self.tracked(*p) {
                        accumulate(grads, *p, g.slice(s![.., off..off + w]).to_owned());
                    }
                    off += w;
                }
            }
            Op::SliceRows(a, start) => {
                let mut ga = Array2::zeros(self.shape(*a));
                ga.slice_mut(s![*start..*start + g.nrows(), ..]).assign(&g);
                accumulate(grads, *a, ga);
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for p in parts {
                    let h = self.shape(*p).0;
                    if self.tracked(*p) {
                        accumulate(grads, *p, g.slice(s![off..off + h, ..]).to_owned());
                    }
                    off += h;
                }
            }
            Op::SegmentMean(a, segments) => {
                let mut ga = Array2::zeros(self.shape(*a));
                for (k, seg) in segments.iter().enumerate() {
                    let inv = S::one() / S::of(seg.len() as f64);
                    let gk = g.row(k).mapv(|v| v * inv);
                    for r in seg.clone() {
                        ga.row_mut(r).assign(&gk);
                    }
                }
                accumulate(grads, *a, ga);
            }
        }
    }
}

impl<S: Scalar> Default for Tape<'_, S> {
    fn default() -> Self {
        Self::new()
    }
}

fn accumulate<S: Scalar>(grads: &mut [Option<Array2<S>>], v: Var, delta: Array2<S>) {
    match &mut grads[v.0] {
        Some(existing) => *existing += &delta,
        slot @ None => *slot = Some(delta),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    /// Central-difference check of d(sum(f(x) * w))/dx for a unary tape program.
    fn check_unary(f: impl Fn(&mut Tape<f64>, Var) -> Var, x: Array2<f64>) {
        let eval = |x: &Array2<f64>| -> f64 {
            let mut t = Tape::new();
            let xv = t.constant(x.clone());
            let y = f(&mut t, xv);
            let w = t.constant(weights_for(t.shape(y)));
            let p = t.mul(y, w);
            let s = t.sum(p);
            t.scalar(s)
        };
        let mut t = Tape::new();
        let xv = t.variable(x.clone());
        let y = f(&mut t, xv);
        let w = t.constant(weights_for(t.shape(y)));
        let p = t.mul(y, w);
        let s = t.sum(p);
        let g = t.backward(s);
        let ga = g.get(xv).cloned().unwrap_or_else(|| Array2::zeros(x.dim()));
        let h = 1e-6;
        for idx in 0..x.len() {
            let (r, c) = (idx / x.ncols(), idx % x.ncols());
            let mut xp = x.clone();
            xp[[r, c]] += h;
            let mut xm = x.clone();
            xm[[r, c]] -= h;
            let fd = (eval(&xp) - eval(&xm)) / (2.0 * h);
            let an = ga[[r, c]];
            assert!(
                (fd - an).abs() <= 1e-6 * (1.0 + fd.abs()),
                "entry ({r},{c}): analytic {an} vs fd {fd}"
            );
        }
    }

    fn weights_for(shape: (usize, usize)) -> Array2<f64> {
        Array2::from_shape_fn(shape, |(r, c)| 0.3 + 0.17 * r as f64 - 0.11 * c as f64)
    }

    fn sample() -> Array2<f64> {
        array![[0.3, -1.2, 0.7, 0.05], [1.1, 0.4, -0.6, 2.0], [-0.9, 0.25, 0.8, -1.4]]
    }

    #[test]
    fn elementwise_ops_match_finite_differences() {
        check_unary(|t, x| t.tanh(x), sample());
        check_unary(|t, x| t.exp(x), sample());
        check_unary(|t, x| t.square(x), sample());
        check_unary(|t, x| t.relu(x), sample());
        check_unary(|t, x| t.scale(x, -2.5), sample());
        check_unary(|t, x| t.offset(x, 3.0), sample());
        check_unary(|t, x| t.mean(x), sample());
    }

    #[test]
    fn structural_ops_match_finite_differences() {
        check_unary(|t, x| t.layer_norm(x, 1e-5), sample());
        check_unary(
            |t, x| {
                let sq = t.slice_cols(x, 0..3);
                t.causal_softmax(sq)
            },
            sample(),
        );
        check_unary(
            |t, x| {
                let a = t.slice_cols(x, 1..3);
                let b = t.slice_rows(x, 0..2);
                let bb = t.slice_cols(b, 0..2);
                let c = t.concat_rows(&[a, bb]);
                let d = t.concat_cols(&[c, c]);
                t.tanh(d)
            },
            sample(),
        );
        check_unary(|t, x| t.segment_mean(x, &[0..2, 2..3]), sample());
    }

    #[test]
    fn binary_ops_match_finite_differences() {
        let other = array![[0.5, 0.1, -0.3], [0.2, -0.7, 0.9], [1.3, 0.0, 0.4], [-0.2, 0.6, 0.8]];
        let o = other.clone();
        check_unary(
            move |t, x| {
                let w = t.constant(o.clone());
                t.matmul(x, w)
            },
            sample(),
        );
        check_unary(
            |t, x| {
                let y = t.tanh(x);
                let z = t.matmul_nt(x, y);
                let q = t.mul(z, z);
                t.sub(q, z)
            },
            sample(),
        );
        check_unary(
            |t, x| {
                let r = t.slice_rows(x, 1..2);
                let a = t.add_row(x, r);
                let m = t.mul_row(a, r);
                t.add(m, x)
            },
            sample(),
        );
    }

    #[test]
    fn causal_softmax_rows_are_distributions_over_the_past() {
        let mut t: Tape<f64> = Tape::new();
        let x = t.constant(Array2::from_shape_fn((4, 4), |(r, c)| (r * 4 + c) as f64 * 0.3));
        let p = t.causal_softmax(x);
        let v = t.value(p);
        for r in 0..4 {
            assert!((v.row(r).sum() - 1.0).abs() < 1e-12);
            for c in r + 1..4 {
                assert_eq!(v[[r, c]], 0.0);
            }
        }
    }

    #[test]
    fn untracked_graph_yields_no_gradients() {
        let mut t: Tape<f64> = Tape::new();
        let x = t.constant(sample());
        let y = t.sum(x);
        let g = t.backward(y);
        assert!(g.get(x).is_none());
    }
}
