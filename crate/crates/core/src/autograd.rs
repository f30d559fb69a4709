//! Minimal reverse-mode autodiff over dense row-major matrices.
//!
//! A [`Tape`] records every operation of one forward pass. Leaves created
//! with [`Tape::param`] receive gradients; leaves created with
//! [`Tape::constant`] never do, and no gradient work is spent on subgraphs
//! that only depend on constants.

use alloc::vec;
use alloc::vec::Vec;

use crate::math::{exp, sqrt, tanh};

#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix buffer length");
        Self { rows, cols, data }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    /// `self · other`.
    pub fn matmul(&self, other: &Mat) -> Mat {
        assert_eq!(self.cols, other.rows, "matmul inner dimension");
        let mut out = Mat::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let dst = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let src = &other.data[k * other.cols..(k + 1) * other.cols];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += a * s;
                }
            }
        }
        out
    }

    /// `self · otherᵀ`.
    pub fn matmul_bt(&self, other: &Mat) -> Mat {
        assert_eq!(self.cols, other.cols, "matmul_bt inner dimension");
        let mut out = Mat::zeros(self.rows, other.rows);
        for i in 0..self.rows {
            let a = self.row(i);
            for j in 0..other.rows {
                out.data[i * other.rows + j] = crate::math::dot(a, other.row(j));
            }
        }
        out
    }

    /// `selfᵀ · other`.
    pub fn matmul_at(&self, other: &Mat) -> Mat {
        assert_eq!(self.rows, other.rows, "matmul_at inner dimension");
        let mut out = Mat::zeros(self.cols, other.cols);
        for k in 0..self.rows {
            let b = other.row(k);
            for i in 0..self.cols {
                let a = self.data[k * self.cols + i];
                if a == 0.0 {
                    continue;
                }
                let dst = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (d, s) in dst.iter_mut().zip(b) {
                    *d += a * s;
                }
            }
        }
        out
    }

    fn add_assign(&mut self, other: &Mat) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulBT(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    AddConst(Var),
    Silu(Var),
    Gelu(Var),
    LayerNorm(Var, Vec<f64>),
    SoftmaxRows(Var),
    ConcatRows(Vec<Var>),
    SliceRows(Var, usize),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    Mse(Var, Mat),
}

#[derive(Debug, Clone)]
struct Node {
    value: Mat,
    op: Op,
    needs_grad: bool,
}

pub const LAYER_NORM_EPS: f64 = 1e-6;

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Mat, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    pub fn param(&mut self, value: Mat) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn constant(&mut self, value: Mat) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul(self.value(b));
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::MatMul(a, b), ng)
    }

    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul_bt(self.value(b));
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::MatMulBT(a, b), ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!((x.rows, x.cols), (y.rows, y.cols), "add shapes");
        let data = x.data.iter().zip(&y.data).map(|(p, q)| p + q).collect();
        let v = Mat::from_vec(x.rows, x.cols, data);
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::Add(a, b), ng)
    }

    /// Adds a `1 × cols` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (x, r) = (self.value(a), self.value(row));
        assert_eq!((r.rows, r.cols), (1, x.cols), "add_row shapes");
        let mut v = x.clone();
        for chunk in v.data.chunks_mut(x.cols) {
            for (d, s) in chunk.iter_mut().zip(&r.data) {
                *d += s;
            }
        }
        let ng = self.ng(a) || self.ng(row);
        self.push(v, Op::AddRow(a, row), ng)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (x, y) = (self.value(a), self.value(b));
        assert_eq!((x.rows, x.cols), (y.rows, y.cols), "mul shapes");
        let data = x.data.iter().zip(&y.data).map(|(p, q)| p * q).collect();
        let v = Mat::from_vec(x.rows, x.cols, data);
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::Mul(a, b), ng)
    }

    /// Multiplies every row of `a` elementwise by a `1 × cols` row.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        let (x, r) = (self.value(a), self.value(row));
        assert_eq!((r.rows, r.cols), (1, x.cols), "mul_row shapes");
        let mut v = x.clone();
        for chunk in v.data.chunks_mut(x.cols) {
            for (d, s) in chunk.iter_mut().zip(&r.data) {
                *d *= s;
            }
        }
        let ng = self.ng(a) || self.ng(row);
        self.push(v, Op::MulRow(a, row), ng)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let x = self.value(a);
        let v = Mat::from_vec(x.rows, x.cols, x.data.iter().map(|p| p * s).collect());
        let ng = self.ng(a);
        self.push(v, Op::Scale(a, s), ng)
    }

    pub fn add_const(&mut self, a: Var, s: f64) -> Var {
        let x = self.value(a);
        let v = Mat::from_vec(x.rows, x.cols, x.data.iter().map(|p| p + s).collect());
        let ng = self.ng(a);
        self.push(v, Op::AddConst(a), ng)
    }

    pub fn silu(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let v = Mat::from_vec(x.rows, x.cols, x.data.iter().map(|&p| p * sigmoid(p)).collect());
        let ng = self.ng(a);
        self.push(v, Op::Silu(a), ng)
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let v = Mat::from_vec(x.rows, x.cols, x.data.iter().map(|&p| gelu(p)).collect());
        let ng = self.ng(a);
        self.push(v, Op::Gelu(a), ng)
    }

    /// Per-row standardisation without affine parameters.
    pub fn layer_norm(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut v = x.clone();
        let mut rstds = Vec::with_capacity(x.rows);
        for chunk in v.data.chunks_mut(x.cols) {
            let n = chunk.len() as f64;
            let mean = chunk.iter().sum::<f64>() / n;
            let var = chunk.iter().map(|p| (p - mean) * (p - mean)).sum::<f64>() / n;
            let rstd = 1.0 / sqrt(var + LAYER_NORM_EPS);
            for p in chunk.iter_mut() {
                *p = (*p - mean) * rstd;
            }
            rstds.push(rstd);
        }
        let ng = self.ng(a);
        self.push(v, Op::LayerNorm(a, rstds), ng)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut v = x.clone();
        for chunk in v.data.chunks_mut(x.cols) {
            softmax_in_place(chunk);
        }
        let ng = self.ng(a);
        self.push(v, Op::SoftmaxRows(a), ng)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let cols = self.value(parts[0]).cols;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let m = self.value(p);
            assert_eq!(m.cols, cols, "concat_rows column mismatch");
            data.extend_from_slice(&m.data);
            rows += m.rows;
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(Mat::from_vec(rows, cols, data), Op::ConcatRows(parts.to_vec()), ng)
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Var {
        let x = self.value(a);
        let v = Mat::from_vec(end - start, x.cols, x.data[start * x.cols..end * x.cols].to_vec());
        let ng = self.ng(a);
        self.push(v, Op::SliceRows(a, start), ng)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows;
        let cols: usize = parts.iter().map(|&p| self.value(p).cols).sum();
        let mut v = Mat::zeros(rows, cols);
        let mut off = 0;
        for &p in parts {
            let m = self.value(p);
            assert_eq!(m.rows, rows, "concat_cols row mismatch");
            for r in 0..rows {
                v.data[r * cols + off..r * cols + off + m.cols].copy_from_slice(m.row(r));
            }
            off += m.cols;
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(v, Op::ConcatCols(parts.to_vec()), ng)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let x = self.value(a);
        let w = end - start;
        let mut v = Mat::zeros(x.rows, w);
        for r in 0..x.rows {
            v.data[r * w..(r + 1) * w].copy_from_slice(&x.row(r)[start..end]);
        }
        let ng = self.ng(a);
        self.push(v, Op::SliceCols(a, start), ng)
    }

    /// Mean squared error against a constant target, as a `1 × 1` value.
    pub fn mse(&mut self, a: Var, target: Mat) -> Var {
        let x = self.value(a);
        assert_eq!((x.rows, x.cols), (target.rows, target.cols), "mse shapes");
        let n = x.data.len().max(1) as f64;
        let loss = x.data.iter().zip(&target.data).map(|(p, q)| (p - q) * (p - q)).sum::<f64>() / n;
        let ng = self.ng(a);
        self.push(Mat::from_vec(1, 1, vec![loss]), Op::Mse(a, target), ng)
    }

    /// Gradients of the scalar `root` with respect to every node.
    pub fn backward(&self, root: Var) -> Gradients {
        let mut grads: Vec<Option<Mat>> = vec![None; self.nodes.len()];
        let seed = self.value(root);
        grads[root.0] = Some(Mat::from_vec(seed.rows, seed.cols, vec![1.0; seed.data.len()]));
        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            self.propagate(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        Gradients { grads }
    }

    fn propagate(&self, node: &Node, g: &Mat, grads: &mut [Option<Mat>]) {
        let mut acc = |v: Var, d: Mat| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&d),
                slot => *slot = Some(d),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (x, y) = (self.value(*a), self.value(*b));
                if self.ng(*a) {
                    acc(*a, g.matmul_bt(y));
                }
                if self.ng(*b) {
                    acc(*b, x.matmul_at(g));
                }
            }
            Op::MatMulBT(a, b) => {
                let (x, y) = (self.value(*a), self.value(*b));
                if self.ng(*a) {
                    acc(*a, g.matmul(y));
                }
                if self.ng(*b) {
                    acc(*b, g.matmul_at(x));
                }
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::AddRow(a, row) => {
                acc(*a, g.clone());
                if self.ng(*row) {
                    let mut r = Mat::zeros(1, g.cols);
                    for chunk in g.data.chunks(g.cols) {
                        for (d, s) in r.data.iter_mut().zip(chunk) {
                            *d += s;
                        }
                    }
                    acc(*row, r);
                }
            }
            Op::Mul(a, b) => {
                let (x, y) = (self.value(*a), self.value(*b));
                if self.ng(*a) {
                    let d = g.data.iter().zip(&y.data).map(|(p, q)| p * q).collect();
                    acc(*a, Mat::from_vec(g.rows, g.cols, d));
                }
                if self.ng(*b) {
                    let d = g.data.iter().zip(&x.data).map(|(p, q)| p * q).collect();
                    acc(*b, Mat::from_vec(g.rows, g.cols, d));
                }
            }
            Op::MulRow(a, row) => {
                let (x, r) = (self.value(*a), self.value(*row));
                if self.ng(*a) {
                    let mut d = g.clone();
                    for chunk in d.data.chunks_mut(g.cols) {
                        for (p, s) in chunk.iter_mut().zip(&r.data) {
                            *p *= s;
                        }
                    }
                    acc(*a, d);
                }
                if self.ng(*row) {
                    let mut d = Mat::zeros(1, g.cols);
                    for (gc, xc) in g.data.chunks(g.cols).zip(x.data.chunks(g.cols)) {
                        for ((p, gv), xv) in d.data.iter_mut().zip(gc).zip(xc) {
                            *p += gv * xv;
                        }
                    }
                    acc(*row, d);
                }
            }
            Op::Scale(a, s) => {
                acc(*a, Mat::from_vec(g.rows, g.cols, g.data.iter().map(|p| p * s).collect()));
            }
            Op::AddConst(a) => acc(*a, g.clone()),
            Op::Silu(a) => {
                let x = self.value(*a);
                let d = g
                    .data
                    .iter()
                    .zip(&x.data)
                    .map(|(gv, &xv)| {
                        let s = sigmoid(xv);
                        gv * s * (1.0 + xv * (1.0 - s))
                    })
                    .collect();
                acc(*a, Mat::from_vec(g.rows, g.cols, d));
            }
            Op::Gelu(a) => {
                let x = self.value(*a);
                let d = g.data.iter().zip(&x.data).map(|(gv, &xv)| gv * gelu_grad(xv)).collect();
                acc(*a, Mat::from_vec(g.rows, g.cols, d));
            }
            Op::LayerNorm(a, rstds) => {
                let y = &node.value;
                let n = g.cols as f64;
                let mut d = Mat::zeros(g.rows, g.cols);
                for r in 0..g.rows {
                    let (gr, yr) = (g.row(r), y.row(r));
                    let mean_g = gr.iter().sum::<f64>() / n;
                    let mean_gy = gr.iter().zip(yr).map(|(p, q)| p * q).sum::<f64>() / n;
                    for c in 0..g.cols {
                        d.data[r * g.cols + c] = rstds[r] * (gr[c] - mean_g - yr[c] * mean_gy);
                    }
                }
                acc(*a, d);
            }
            Op::SoftmaxRows(a) => {
                let y = &node.value;
                let mut d = Mat::zeros(g.rows, g.cols);
                for r in 0..g.rows {
                    let (gr, yr) = (g.row(r), y.row(r));
                    let dot: f64 = gr.iter().zip(yr).map(|(p, q)| p * q).sum();
                    for c in 0..g.cols {
                        d.data[r * g.cols + c] = yr[c] * (gr[c] - dot);
                    }
                }
                acc(*a, d);
            }
            Op::ConcatRows(parts) => {
                let mut start = 0;
                for &p in parts {
                    let rows = self.value(p).rows;
                    if self.ng(p) {
                        let d = g.data[start * g.cols..(start + rows) * g.cols].to_vec();
                        acc(p, Mat::from_vec(rows, g.cols, d));
                    }
                    start += rows;
                }
            }
            Op::SliceRows(a, start) => {
                let x = self.value(*a);
                let mut d = Mat::zeros(x.rows, x.cols);
                d.data[start * x.cols..(start + g.rows) * x.cols].copy_from_slice(&g.data);
                acc(*a, d);
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let cols = self.value(p).cols;
                    if self.ng(p) {
                        let mut d = Mat::zeros(g.rows, cols);
                        for r in 0..g.rows {
                            d.data[r * cols..(r + 1) * cols].copy_from_slice(&g.row(r)[off..off + cols]);
                        }
                        acc(p, d);
                    }
                    off += cols;
                }
            }
            Op::SliceCols(a, start) => {
                let x = self.value(*a);
                let mut d = Mat::zeros(x.rows, x.cols);
                for r in 0..g.rows {
                    d.data[r * x.cols + start..r * x.cols + start + g.cols].copy_from_slice(g.row(r));
                }
                acc(*a, d);
            }
            Op::Mse(a, target) => {
                let x = self.value(*a);
                let n = x.data.len().max(1) as f64;
                let s = 2.0 * g.data[0] / n;
                let d = x.data.iter().zip(&target.data).map(|(p, q)| s * (p - q)).collect();
                acc(*a, Mat::from_vec(x.rows, x.cols, d));
            }
        }
    }
}

pub struct Gradients {
    grads: Vec<Option<Mat>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Mat> {
        self.grads[v.0].as_ref()
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + exp(-x))
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)

#[inline]
fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + tanh(GELU_C * (x + 0.044715 * x * x * x)))
}

#[inline]
fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let t = tanh(u);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for p in row.iter_mut() {
        *p = exp(*p - max);
        total += *p;
    }
    for p in row.iter_mut() {
        *p /= total;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn rand_mat(seed: u64, rows: usize, cols: usize) -> Mat {
        Mat::from_vec(rows, cols, rng::normal_vec(&mut rng::stream(seed, 0), rows * cols))
    }

    /// Central-difference check of d(loss)/d(param) for a composite graph
    /// that exercises every op.
    #[test]
    fn gradients_match_finite_differences() {
        let a0 = rand_mat(1, 3, 4);
        let w0 = rand_mat(2, 4, 5);
        let r0 = rand_mat(3, 1, 5);
        let target = rand_mat(4, 5, 2);
        let build = |a: &Mat, w: &Mat, r: &Mat, tape: &mut Tape| -> (Var, Var, Var, Var) {
            let av = tape.param(a.clone());
            let wv = tape.param(w.clone());
            let rv = tape.param(r.clone());
            let h = tape.matmul(av, wv);
            let h = tape.add_row(h, rv);
            let h = tape.layer_norm(h);
            let h = tape.mul_row(h, rv);
            let h = tape.silu(h);
            let g = tape.gelu(h);
            let s = tape.matmul_bt(g, h);
            let s = tape.scale(s, 0.5);
            let p = tape.softmax_rows(s);
            let o = tape.matmul(p, g);
            let o = tape.add_const(o, 0.1);
            let left = tape.slice_cols(o, 0, 2);
            let right = tape.slice_cols(o, 2, 4);
            let m = tape.mul(left, right);
            let top = tape.slice_rows(m, 0, 2);
            let both = tape.concat_rows(&[m, top]);
            let both2 = tape.concat_cols(&[both, both]);
            let sq = tape.slice_cols(both2, 1, 3);
            let sum = tape.add(sq, sq);
            let loss = tape.mse(sum, target.clone());
            (av, wv, rv, loss)
        };
        let mut tape = Tape::new();
        let (av, wv, rv, loss) = build(&a0, &w0, &r0, &mut tape);
        let grads = tape.backward(loss);
        let eval = |a: &Mat, w: &Mat, r: &Mat| {
            let mut t = Tape::new();
            let (_, _, _, l) = build(a, w, r, &mut t);
            t.value(l).data[0]
        };
        let eps = 1e-6;
        for which in 0..3 {
            let base = [&a0, &w0, &r0][which];
            let g = grads.get([av, wv, rv][which]).unwrap();
            for i in 0..base.data.len() {
                let mut plus = [a0.clone(), w0.clone(), r0.clone()];
                let mut minus = plus.clone();
                plus[which].data[i] += eps;
                minus[which].data[i] -= eps;
                let fd = (eval(&plus[0], &plus[1], &plus[2]) - eval(&minus[0], &minus[1], &minus[2])) / (2.0 * eps);
                let an = g.data[i];
                let err = (fd - an).abs() / (fd.abs().max(an.abs()).max(1e-6));
                assert!(err < 1e-5, "param {which}[{i}]: fd {fd} vs analytic {an}");
            }
        }
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut tape = Tape::new();
        let c = tape.constant(rand_mat(1, 2, 2));
        let p = tape.param(rand_mat(2, 2, 2));
        let y = tape.matmul(c, p);
        let loss = tape.mse(y, Mat::zeros(2, 2));
        let g = tape.backward(loss);
        assert!(g.get(c).is_none());
        assert!(g.get(p).is_some());
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut tape = Tape::new();
        let x = tape.constant(rand_mat(5, 4, 7));
        let s = tape.softmax_rows(x);
        for r in 0..4 {
            assert!((tape.value(s).row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
