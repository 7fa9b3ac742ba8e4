//! Reverse-mode automatic differentiation over 2-D tensors.
//!
//! A [`Graph`] is a tape: every operation evaluates eagerly and appends a node,
//! so node order is already a topological order. [`Graph::backward`] walks the
//! tape in reverse from one or more seeded outputs.
//!
//! GELU uses the tanh approximation
//! `0.5·x·(1 + tanh(√(2/π)·(x + 0.044715·x³)))`.

use std::sync::Arc;

use super::tensor::{gemm_acc, gemm_at_acc, gemm_bt_acc, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Input,
    Constant,
    Param(usize),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    AddConst(Var),
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Transpose(Var),
    SoftmaxRows(Var),
    LayerNormRows(Var, Vec<f64>),
    Gelu(Var),
    Tanh(Var),
    Square(Var),
    Sqrt(Var),
    Hinge(Var),
    Sum(Var),
    Mean(Var),
    MeanRows(Var),
    GatherRows(Var, Vec<usize>),
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
}

#[derive(Debug)]
struct Node {
    value: Arc<Tensor>,
    op: Op,
    /// Whether any differentiable leaf feeds this node.
    live: bool,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Per-node gradients produced by [`Graph::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn of(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }
}

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const GELU_C: f64 = 0.044_715;

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    assert_eq!(a.shape(), b.shape(), "elementwise shapes");
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::matrix(a.rows(), a.cols(), data)
}

fn as_matrix(t: Tensor) -> Tensor {
    if t.is_matrix() {
        t
    } else {
        let (r, c) = (t.rows(), t.cols());
        t.reshape(vec![r, c]).expect("reshape to matrix")
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.push_arc(Arc::new(value), op)
    }

    fn push_arc(&mut self, value: Arc<Tensor>, op: Op) -> Var {
        let live = match &op {
            Op::Input | Op::Param(_) => true,
            Op::Constant => false,
            other => other.parents().iter().any(|p| self.nodes[p.0].live),
        };
        self.nodes.push(Node { value, op, live });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v).data()[0]
    }

    /// Constant leaf (receives a gradient but is not a parameter).
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(as_matrix(t), Op::Input)
    }

    /// Leaf that never receives a gradient; backward work into it is skipped.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(as_matrix(t), Op::Constant)
    }

    /// Shared constant leaf.
    pub fn constant_arc(&mut self, t: Arc<Tensor>) -> Var {
        let t = if t.is_matrix() {
            t
        } else {
            Arc::new(as_matrix((*t).clone()))
        };
        self.push_arc(t, Op::Constant)
    }

    /// Parameter leaf; `index` identifies it in [`Graph::param_grads`].
    pub fn param(&mut self, index: usize, t: Arc<Tensor>) -> Var {
        let t = if t.is_matrix() {
            t
        } else {
            Arc::new(as_matrix((*t).clone()))
        };
        self.push_arc(t, Op::Param(index))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = zip_map(self.value(a), self.value(b), |x, y| x + y);
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = zip_map(self.value(a), self.value(b), |x, y| x - y);
        self.push(v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = zip_map(self.value(a), self.value(b), |x, y| x * y);
        self.push(v, Op::Mul(a, b))
    }

    /// Adds a `1×c` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (x, r) = (self.value(a), self.value(row));
        assert_eq!(r.rows(), 1, "add_row expects a single row");
        assert_eq!(r.cols(), x.cols(), "add_row width");
        let mut out = x.clone();
        for i in 0..out.rows() {
            for (o, b) in out.row_mut(i).iter_mut().zip(r.data()) {
                *o += b;
            }
        }
        self.push(out, Op::AddRow(a, row))
    }

    /// Multiplies every row of `a` elementwise by a `1×c` row.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        let (x, r) = (self.value(a), self.value(row));
        assert_eq!(r.rows(), 1, "mul_row expects a single row");
        assert_eq!(r.cols(), x.cols(), "mul_row width");
        let mut out = x.clone();
        for i in 0..out.rows() {
            for (o, g) in out.row_mut(i).iter_mut().zip(r.data()) {
                *o *= g;
            }
        }
        self.push(out, Op::MulRow(a, row))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a).scale(s);
        self.push(v, Op::Scale(a, s))
    }

    pub fn add_const(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).map(|x| x + c);
        self.push(v, Op::AddConst(a))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    /// `a · bᵀ`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul_t(self.value(b));
        self.push(v, Op::MatMulT(a, b))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).transpose();
        self.push(v, Op::Transpose(a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        for i in 0..out.rows() {
            let row = out.row_mut(i);
            let max = row.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x));
            let mut total = 0.0;
            for x in row.iter_mut() {
                *x = (*x - max).exp();
                total += *x;
            }
            row.iter_mut().for_each(|x| *x /= total);
        }
        self.push(out, Op::SoftmaxRows(a))
    }

    /// Row-wise normalisation to zero mean and unit (population) variance.
    pub fn layer_norm_rows(&mut self, a: Var, eps: f64) -> Var {
        let mut out = self.value(a).clone();
        let c = out.cols() as f64;
        let mut rstds = Vec::with_capacity(out.rows());
        for i in 0..out.rows() {
            let row = out.row_mut(i);
            let mean = row.iter().sum::<f64>() / c;
            let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / c;
            let rstd = 1.0 / (var + eps).sqrt();
            row.iter_mut().for_each(|x| *x = (*x - mean) * rstd);
            rstds.push(rstd);
        }
        self.push(out, Op::LayerNormRows(a, rstds))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let v = self
            .value(a)
            .map(|x| 0.5 * x * (1.0 + (SQRT_2_OVER_PI * (x + GELU_C * x * x * x)).tanh()));
        self.push(v, Op::Gelu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::tanh);
        self.push(v, Op::Tanh(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x * x);
        self.push(v, Op::Square(a))
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::sqrt);
        self.push(v, Op::Sqrt(a))
    }

    /// `max(0, x)` elementwise.
    pub fn hinge(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.max(0.0));
        self.push(v, Op::Hinge(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let s = t.data().iter().sum::<f64>() / t.len() as f64;
        self.push(Tensor::scalar(s), Op::Mean(a))
    }

    /// Column means as a `1×c` row.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let m = self.value(a).column_means();
        let c = m.len();
        self.push(Tensor::matrix(1, c, m), Op::MeanRows(a))
    }

    /// Rows of `a` at `idx` (repeats allowed).
    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Var {
        let v = self.value(a).select_rows(idx);
        self.push(v, Op::GatherRows(a, idx.to_vec()))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let x = self.value(a);
        assert!(start + len <= x.cols(), "slice_cols out of range");
        let mut data = Vec::with_capacity(x.rows() * len);
        for i in 0..x.rows() {
            data.extend_from_slice(&x.row(i)[start..start + len]);
        }
        let v = Tensor::matrix(x.rows(), len, data);
        self.push(v, Op::SliceCols(a, start))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let tensors: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let v = Tensor::hstack(&tensors).expect("concat_cols row counts");
        self.push(v, Op::ConcatCols(parts.to_vec()))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let cols = self.value(parts[0]).cols();
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let t = self.value(p);
            assert_eq!(t.cols(), cols, "concat_rows widths");
            data.extend_from_slice(t.data());
            rows += t.rows();
        }
        self.push(Tensor::matrix(rows, cols, data), Op::ConcatRows(parts.to_vec()))
    }

    /// Backpropagates from `seeds` (output node, upstream gradient) pairs.
    pub fn backward(&self, seeds: &[(Var, Tensor)]) -> Gradients {
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut last = 0;
        for (v, g) in seeds {
            assert_eq!(
                self.value(*v).len(),
                g.len(),
                "seed gradient must match node size"
            );
            let g = Tensor::matrix(self.value(*v).rows(), self.value(*v).cols(), g.data().to_vec());
            self.acc(&mut grads, v.0, g);
            last = last.max(v.0);
        }
        for id in (0..=last).rev() {
            if !self.nodes[id].live {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            self.propagate(id, &g, &mut grads);
            grads[id] = Some(g);
        }
        Gradients { grads }
    }

    /// Backpropagates a scalar output with unit seed.
    pub fn backward_scalar(&self, out: Var) -> Gradients {
        self.backward(&[(out, Tensor::scalar(1.0))])
    }

    /// Gradients of parameter leaves, indexed by parameter index.
    pub fn param_grads(&self, grads: &Gradients, n_params: usize) -> Vec<Option<Tensor>> {
        let mut out: Vec<Option<Tensor>> = (0..n_params).map(|_| None).collect();
        for (i, node) in self.nodes.iter().enumerate() {
            if let Op::Param(p) = node.op {
                if let Some(g) = &grads.grads[i] {
                    accumulate(&mut out[p], g.clone());
                }
            }
        }
        out
    }

    fn propagate(&self, id: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let out = &self.nodes[id].value;
        match &self.nodes[id].op {
            Op::Input | Op::Constant | Op::Param(_) => {}
            Op::Add(a, b) => {
                self.acc(grads, a.0, g.clone());
                self.acc(grads, b.0, g.clone());
            }
            Op::Sub(a, b) => {
                self.acc(grads, a.0, g.clone());
                self.acc(grads, b.0, g.scale(-1.0));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                self.acc(grads, a.0, zip_map(g, vb, |x, y| x * y));
                self.acc(grads, b.0, zip_map(g, va, |x, y| x * y));
            }
            Op::AddRow(a, row) => {
                self.acc(grads, a.0, g.clone());
                let s = column_sums(g);
                self.acc(grads, row.0, s);
            }
            Op::MulRow(a, row) => {
                let (va, vr) = (self.value(*a), self.value(*row));
                let mut ga = g.clone();
                let mut gr = vec![0.0; vr.cols()];
                for i in 0..ga.rows() {
                    let xa = va.row(i);
                    for (j, x) in ga.row_mut(i).iter_mut().enumerate() {
                        gr[j] += *x * xa[j];
                        *x *= vr.data()[j];
                    }
                }
                self.acc(grads, a.0, ga);
                self.acc(grads, row.0, Tensor::matrix(1, vr.cols(), gr));
            }
            Op::Scale(a, s) => self.acc(grads, a.0, g.scale(*s)),
            Op::AddConst(a) => self.acc(grads, a.0, g.clone()),
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                let (n, k, m) = (va.rows(), va.cols(), vb.cols());
                if self.nodes[a.0].live {
                    let mut ga = vec![0.0; n * k];
                    gemm_bt_acc(g.data(), vb.data(), &mut ga, n, m, k);
                    self.acc(grads, a.0, Tensor::matrix(n, k, ga));
                }
                if self.nodes[b.0].live {
                    let mut gb = vec![0.0; k * m];
                    gemm_at_acc(va.data(), g.data(), &mut gb, n, k, m);
                    self.acc(grads, b.0, Tensor::matrix(k, m, gb));
                }
            }
            Op::MatMulT(a, b) => {
                // C = A·Bᵀ: dA = dC·B, dB = dCᵀ·A.
                let (va, vb) = (self.value(*a), self.value(*b));
                let (n, k, m) = (va.rows(), va.cols(), vb.rows());
                if self.nodes[a.0].live {
                    let mut ga = vec![0.0; n * k];
                    gemm_acc(g.data(), vb.data(), &mut ga, n, m, k);
                    self.acc(grads, a.0, Tensor::matrix(n, k, ga));
                }
                if self.nodes[b.0].live {
                    let mut gb = vec![0.0; m * k];
                    gemm_at_acc(g.data(), va.data(), &mut gb, n, m, k);
                    self.acc(grads, b.0, Tensor::matrix(m, k, gb));
                }
            }
            Op::Transpose(a) => self.acc(grads, a.0, g.transpose()),
            Op::SoftmaxRows(a) => {
                let mut ga = g.clone();
                for i in 0..ga.rows() {
                    let y = out.row(i);
                    let dotp: f64 = ga.row(i).iter().zip(y).map(|(d, y)| d * y).sum();
                    for (d, &yv) in ga.row_mut(i).iter_mut().zip(y) {
                        *d = yv * (*d - dotp);
                    }
                }
                self.acc(grads, a.0, ga);
            }
            Op::LayerNormRows(a, rstds) => {
                let mut ga = g.clone();
                let c = ga.cols() as f64;
                for i in 0..ga.rows() {
                    let y = out.row(i);
                    let gm = ga.row(i).iter().sum::<f64>() / c;
                    let gy = ga.row(i).iter().zip(y).map(|(d, y)| d * y).sum::<f64>() / c;
                    let r = rstds[i];
                    for (d, &yv) in ga.row_mut(i).iter_mut().zip(y) {
                        *d = r * (*d - gm - yv * gy);
                    }
                }
                self.acc(grads, a.0, ga);
            }
            Op::Gelu(a) => {
                let ga = zip_map(g, self.value(*a), |d, x| {
                    let u = SQRT_2_OVER_PI * (x + GELU_C * x * x * x);
                    let t = u.tanh();
                    let du = SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_C * x * x);
                    d * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du)
                });
                self.acc(grads, a.0, ga);
            }
            Op::Tanh(a) => self.acc(grads, a.0, zip_map(g, out, |d, y| d * (1.0 - y * y))),
            Op::Square(a) => {
                self.acc(grads, a.0, zip_map(g, self.value(*a), |d, x| 2.0 * d * x))
            }
            Op::Sqrt(a) => self.acc(grads, a.0, zip_map(g, out, |d, y| 0.5 * d / y)),
            Op::Hinge(a) => self.acc(grads, a.0, zip_map(g, self.value(*a), |d, x| if x > 0.0 { d } else { 0.0 }),
            ),
            Op::Sum(a) => {
                let x = self.value(*a);
                self.acc(grads, a.0, Tensor::filled(&[x.rows(), x.cols()], g.data()[0]));
            }
            Op::Mean(a) => {
                let x = self.value(*a);
                let v = g.data()[0] / x.len() as f64;
                self.acc(grads, a.0, Tensor::filled(&[x.rows(), x.cols()], v));
            }
            Op::MeanRows(a) => {
                let x = self.value(*a);
                let n = x.rows();
                let mut ga = Tensor::zeros(&[n, x.cols()]);
                for i in 0..n {
                    for (o, d) in ga.row_mut(i).iter_mut().zip(g.data()) {
                        *o = d / n as f64;
                    }
                }
                self.acc(grads, a.0, ga);
            }
            Op::GatherRows(a, idx) => {
                let x = self.value(*a);
                let mut ga = Tensor::zeros(&[x.rows(), x.cols()]);
                for (k, &i) in idx.iter().enumerate() {
                    for (o, d) in ga.row_mut(i).iter_mut().zip(g.row(k)) {
                        *o += d;
                    }
                }
                self.acc(grads, a.0, ga);
            }
            Op::SliceCols(a, start) => {
                let x = self.value(*a);
                let len = g.cols();
                let mut ga = Tensor::zeros(&[x.rows(), x.cols()]);
                for i in 0..x.rows() {
                    ga.row_mut(i)[*start..*start + len].copy_from_slice(g.row(i));
                }
                self.acc(grads, a.0, ga);
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for p in parts {
                    let w = self.value(*p).cols();
                    let mut gp = Vec::with_capacity(g.rows() * w);
                    for i in 0..g.rows() {
                        gp.extend_from_slice(&g.row(i)[offset..offset + w]);
                    }
                    self.acc(grads, p.0, Tensor::matrix(g.rows(), w, gp));
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                let c = g.cols();
                for p in parts {
                    let r = self.value(*p).rows();
                    let gp = g.data()[offset * c..(offset + r) * c].to_vec();
                    self.acc(grads, p.0, Tensor::matrix(r, c, gp));
                    offset += r;
                }
            }
        }
    }
}

impl Op {
    fn parents(&self) -> Vec<Var> {
        match self {
            Op::Input | Op::Constant | Op::Param(_) => vec![],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::AddRow(a, b) | Op::MulRow(a, b) => vec![*a, *b],
            Op::MatMul(a, b) | Op::MatMulT(a, b) => vec![*a, *b],
            Op::Scale(a, _)
            | Op::AddConst(a)
            | Op::Transpose(a)
            | Op::SoftmaxRows(a)
            | Op::LayerNormRows(a, _)
            | Op::Gelu(a)
            | Op::Tanh(a)
            | Op::Square(a)
            | Op::Sqrt(a)
            | Op::Hinge(a)
            | Op::Sum(a)
            | Op::Mean(a)
            | Op::MeanRows(a)
            | Op::GatherRows(a, _)
            | Op::SliceCols(a, _) => vec![*a],
            Op::ConcatCols(parts) | Op::ConcatRows(parts) => parts.clone(),
        }
    }
}

fn column_sums(g: &Tensor) -> Tensor {
    let mut s = vec![0.0; g.cols()];
    for i in 0..g.rows() {
        for (a, b) in s.iter_mut().zip(g.row(i)) {
            *a += b;
        }
    }
    Tensor::matrix(1, g.cols(), s)
}

impl Graph {
    fn acc(&self, grads: &mut [Option<Tensor>], id: usize, g: Tensor) {
        if self.nodes[id].live {
            accumulate(&mut grads[id], g);
        }
    }
}

fn accumulate(slot: &mut Option<Tensor>, g: Tensor) {
    match slot {
        Some(existing) => existing.add_assign(&g),
        None => *slot = Some(g),
    }
}

/// A differentiable computation from a fixed list of parameter tensors to a
/// scalar, replayable against any parameter values of the recorded shapes.
pub struct GradProgram<F>
where
    F: Fn(&mut Graph, &[Var]) -> Var,
{
    shapes: Vec<Vec<usize>>,
    build: F,
}

impl<F> GradProgram<F>
where
    F: Fn(&mut Graph, &[Var]) -> Var,
{
    pub fn new(shapes: Vec<Vec<usize>>, build: F) -> Self {
        Self { shapes, build }
    }

    fn check(&self, params: &[Tensor]) -> Result<()> {
        if params.len() != self.shapes.len() {
            return Err(Error::Shape {
                context: "GradProgram parameter count",
                expected: vec![self.shapes.len()],
                actual: vec![params.len()],
            });
        }
        for (p, s) in params.iter().zip(&self.shapes) {
            if p.shape() != s.as_slice() {
                return Err(Error::Shape {
                    context: "GradProgram parameter",
                    expected: s.clone(),
                    actual: p.shape().to_vec(),
                });
            }
        }
        Ok(())
    }

    fn record(&self, params: &[Tensor]) -> (Graph, Var, Vec<Var>) {
        let mut g = Graph::new();
        let vars: Vec<Var> = params
            .iter()
            .enumerate()
            .map(|(i, p)| g.param(i, Arc::new(p.clone())))
            .collect();
        let out = (self.build)(&mut g, &vars);
        (g, out, vars)
    }

    /// Forward value only.
    pub fn eval(&self, params: &[Tensor]) -> Result<f64> {
        self.check(params)?;
        let (g, out, _) = self.record(params);
        Ok(g.scalar(out))
    }
}

/// Loss value and one gradient per parameter (zeros where the loss does not depend on it).
pub fn grad<F>(program: &GradProgram<F>, params: &[Tensor]) -> Result<(f64, Vec<Tensor>)>
where
    F: Fn(&mut Graph, &[Var]) -> Var,
{
    program.check(params)?;
    let (g, out, _) = program.record(params);
    if g.value(out).len() != 1 {
        return Err(Error::invalid("GradProgram must produce a scalar"));
    }
    let grads = g.backward_scalar(out);
    let per_param = g.param_grads(&grads, params.len());
    let grads = per_param
        .into_iter()
        .zip(params)
        .map(|(gp, p)| match gp {
            Some(t) => t.reshape(p.shape().to_vec()).expect("gradient shape"),
            None => Tensor::zeros(p.shape()),
        })
        .collect();
    Ok((g.scalar(out), grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ndcore::RngStream;

    /// Central finite differences over every coordinate.
    fn numeric_grad<F>(p: &GradProgram<F>, params: &[Tensor], h: f64) -> Vec<Tensor>
    where
        F: Fn(&mut Graph, &[Var]) -> Var,
    {
        let mut out = Vec::new();
        for i in 0..params.len() {
            let mut gi = Tensor::zeros(params[i].shape());
            for j in 0..params[i].len() {
                let mut plus = params.to_vec();
                plus[i].data_mut()[j] += h;
                let mut minus = params.to_vec();
                minus[i].data_mut()[j] -= h;
                gi.data_mut()[j] = (p.eval(&plus).unwrap() - p.eval(&minus).unwrap()) / (2.0 * h);
            }
            out.push(gi);
        }
        out
    }

    fn max_rel_err(a: &[Tensor], b: &[Tensor]) -> f64 {
        a.iter()
            .zip(b)
            .flat_map(|(x, y)| x.data().iter().zip(y.data()))
            .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-6))
            .fold(0.0, f64::max)
    }

    fn random(rng: &mut RngStream, r: usize, c: usize) -> Tensor {
        Tensor::matrix(r, c, (0..r * c).map(|_| rng.normal()).collect())
    }

    fn check_program<F>(shapes: Vec<Vec<usize>>, seed: u64, tol: f64, build: F)
    where
        F: Fn(&mut Graph, &[Var]) -> Var,
    {
        let mut rng = RngStream::new(seed);
        let params: Vec<Tensor> = shapes.iter().map(|s| random(&mut rng, s[0], s[1])).collect();
        let prog = GradProgram::new(shapes, build);
        let (_, analytic) = grad(&prog, &params).unwrap();
        let numeric = numeric_grad(&prog, &params, 1e-5);
        let err = max_rel_err(&analytic, &numeric);
        assert!(err < tol, "relative error {err}");
    }

    #[test]
    fn square_at_three() {
        let prog = GradProgram::new(vec![vec![1, 1]], |g, p| {
            let s = g.square(p[0]);
            g.sum(s)
        });
        let (v, gr) = grad(&prog, &[Tensor::scalar(3.0)]).unwrap();
        assert_eq!(v, 9.0);
        assert_eq!(gr[0].data(), &[6.0]);
    }

    #[test]
    fn product_of_two() {
        let prog = GradProgram::new(vec![vec![1, 1], vec![1, 1]], |g, p| {
            let m = g.mul(p[0], p[1]);
            g.sum(m)
        });
        let (_, gr) = grad(&prog, &[Tensor::scalar(2.0), Tensor::scalar(3.0)]).unwrap();
        assert_eq!(gr[0].data(), &[3.0]);
        assert_eq!(gr[1].data(), &[2.0]);
    }

    #[test]
    fn softmax_mse_composite() {
        let target = Tensor::matrix(1, 4, vec![0.1, 0.2, 0.3, 0.4]);
        check_program(vec![vec![1, 4]], 1, 1e-5, move |g, p| {
            let s = g.softmax_rows(p[0]);
            let t = g.input(target.clone());
            let d = g.sub(s, t);
            let sq = g.square(d);
            g.mean(sq)
        });
    }

    #[test]
    fn every_primitive_matches_finite_differences() {
        check_program(vec![vec![3, 4], vec![4, 2]], 2, 1e-4, |g, p| {
            let m = g.matmul(p[0], p[1]);
            g.sum(m)
        });
        check_program(vec![vec![3, 4], vec![2, 4]], 3, 1e-4, |g, p| {
            let m = g.matmul_t(p[0], p[1]);
            let s = g.square(m);
            g.sum(s)
        });
        check_program(vec![vec![3, 5]], 4, 1e-4, |g, p| {
            let y = g.layer_norm_rows(p[0], 1e-5);
            let w = g.input(Tensor::matrix(3, 5, (0..15).map(|i| i as f64 * 0.1).collect()));
            let m = g.mul(y, w);
            g.sum(m)
        });
        check_program(vec![vec![3, 5]], 5, 1e-4, |g, p| {
            let y = g.gelu(p[0]);
            let t = g.tanh(y);
            g.mean(t)
        });
        check_program(vec![vec![3, 5]], 6, 1e-4, |g, p| {
            let sq = g.square(p[0]);
            let sh = g.add_const(sq, 0.5);
            let r = g.sqrt(sh);
            let n = g.scale(r, -1.0);
            let c = g.add_const(n, 1.5);
            let h = g.hinge(c);
            g.sum(h)
        });
        check_program(vec![vec![4, 3], vec![1, 3], vec![1, 3]], 7, 1e-4, |g, p| {
            let a = g.add_row(p[0], p[1]);
            let b = g.mul_row(a, p[2]);
            let m = g.mean_rows(b);
            let s = g.square(m);
            g.sum(s)
        });
        check_program(vec![vec![4, 6]], 8, 1e-4, |g, p| {
            let a = g.slice_cols(p[0], 1, 3);
            let b = g.slice_cols(p[0], 4, 2);
            let c = g.concat_cols(&[b, a]);
            let r = g.gather_rows(c, &[3, 0, 0]);
            let t = g.transpose(r);
            let cr = g.concat_rows(&[t, t]);
            let sq = g.square(cr);
            let sm = g.softmax_rows(sq);
            let x = g.mul(sm, sm);
            let y = g.sub(x, sm);
            let z = g.add(y, y);
            g.sum(z)
        });
    }

    #[test]
    fn mismatched_params_are_rejected() {
        let prog = GradProgram::new(vec![vec![2, 2]], |g, p| g.sum(p[0]));
        assert!(grad(&prog, &[Tensor::zeros(&[2, 3])]).is_err());
        assert!(grad(&prog, &[]).is_err());
    }

    #[test]
    fn multiple_seeds_accumulate() {
        let mut g = Graph::new();
        let x = g.param(0, Arc::new(Tensor::matrix(1, 2, vec![1.0, 2.0])));
        let a = g.scale(x, 3.0);
        let b = g.square(x);
        let grads = g.backward(&[
            (a, Tensor::matrix(1, 2, vec![1.0, 1.0])),
            (b, Tensor::matrix(1, 2, vec![1.0, 0.5])),
        ]);
        assert_eq!(grads.of(x).unwrap().data(), &[5.0, 5.0]);
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut g = Graph::new();
        let c = g.constant(Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]));
        let w = g.param(0, Arc::new(Tensor::matrix(2, 1, vec![0.5, -1.0])));
        let y = g.matmul(c, w);
        let s = g.sum(y);
        let grads = g.backward_scalar(s);
        assert!(grads.of(c).is_none());
        // d/dw Σ(C·w) = column sums of C.
        assert_eq!(grads.of(w).unwrap().data(), &[4.0, 6.0]);
    }
}
