//! Reverse-mode differentiation over dense matrix primitives.
//!
//! A [`Tape`] records every primitive applied to [`Var`] handles together with
//! its forward value. [`Tape::backward`] walks the record in reverse and
//! accumulates adjoints. Manifold maps are recorded as single fused primitives
//! with hand-derived adjoints rather than being expanded into scalar arithmetic.
//!
//! The set of primitives that may be differentiated lives in an
//! [`AdjointRegistry`]; removing an entry makes `backward` fail with the
//! primitive's name, and a scale factor can be attached to one primitive to
//! corrupt its adjoint for negative-control testing.

use std::collections::HashMap;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::manifold::{
    self, clamp_atanh, dot, max_norm, norm, sigmoid, softplus, ATANH_MAX, MIN_CURVATURE,
};
use crate::sparse::CsrMatrix;
use crate::tensor::Tensor;

/// Lower and upper clamp applied to Fermi-Dirac probabilities inside the loss.
pub const PROB_CLAMP: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Primitive {
    Add,
    AddRow,
    Sub,
    Mul,
    MulRow,
    MulCol,
    Scale,
    MatMulT,
    Tanh,
    Sigmoid,
    LeakyRelu,
    Curvature,
    ExpMap0,
    LogMap0,
    Project,
    MobiusAdd,
    DiffDist,
    RowNorm,
    GatherRows,
    SliceRow,
    SliceCol,
    ConcatCols,
    RowSoftmax,
    SparseAttention,
    FermiDiracNll,
    Sum,
    Mean,
}

impl Primitive {
    pub const ALL: [Primitive; 27] = [
        Primitive::Add,
        Primitive::AddRow,
        Primitive::Sub,
        Primitive::Mul,
        Primitive::MulRow,
        Primitive::MulCol,
        Primitive::Scale,
        Primitive::MatMulT,
        Primitive::Tanh,
        Primitive::Sigmoid,
        Primitive::LeakyRelu,
        Primitive::Curvature,
        Primitive::ExpMap0,
        Primitive::LogMap0,
        Primitive::Project,
        Primitive::MobiusAdd,
        Primitive::DiffDist,
        Primitive::RowNorm,
        Primitive::GatherRows,
        Primitive::SliceRow,
        Primitive::SliceCol,
        Primitive::ConcatCols,
        Primitive::RowSoftmax,
        Primitive::SparseAttention,
        Primitive::FermiDiracNll,
        Primitive::Sum,
        Primitive::Mean,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Primitive::Add => "add",
            Primitive::AddRow => "add_row",
            Primitive::Sub => "sub",
            Primitive::Mul => "mul",
            Primitive::MulRow => "mul_row",
            Primitive::MulCol => "mul_col",
            Primitive::Scale => "scale",
            Primitive::MatMulT => "matmul_t",
            Primitive::Tanh => "tanh",
            Primitive::Sigmoid => "sigmoid",
            Primitive::LeakyRelu => "leaky_relu",
            Primitive::Curvature => "curvature",
            Primitive::ExpMap0 => "expmap0",
            Primitive::LogMap0 => "logmap0",
            Primitive::Project => "project",
            Primitive::MobiusAdd => "mobius_add",
            Primitive::DiffDist => "diff_dist",
            Primitive::RowNorm => "row_norm",
            Primitive::GatherRows => "gather_rows",
            Primitive::SliceRow => "slice_row",
            Primitive::SliceCol => "slice_col",
            Primitive::ConcatCols => "concat_cols",
            Primitive::RowSoftmax => "row_softmax",
            Primitive::SparseAttention => "sparse_attention",
            Primitive::FermiDiracNll => "fermi_dirac_nll",
            Primitive::Sum => "sum",
            Primitive::Mean => "mean",
        }
    }

    pub fn from_name(name: &str) -> Option<Primitive> {
        Primitive::ALL.into_iter().find(|p| p.name() == name)
    }
}

/// Which primitives have an adjoint, and an optional deliberate corruption.
#[derive(Clone, Debug, Default)]
pub struct AdjointRegistry {
    removed: Vec<Primitive>,
    corrupted: HashMap<Primitive, f64>,
}

impl AdjointRegistry {
    pub fn unregister(&mut self, p: Primitive) {
        if !self.removed.contains(&p) {
            self.removed.push(p);
        }
    }

    /// Multiplies the upstream adjoint of `p` by `factor` before propagation.
    pub fn corrupt(&mut self, p: Primitive, factor: f64) {
        self.corrupted.insert(p, factor);
    }

    pub fn is_registered(&self, p: Primitive) -> bool {
        !self.removed.contains(&p)
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MulRow(Var, Var),
    MulCol(Var, Var),
    Scale(Var, f64),
    MatMulT(Var, Var),
    Tanh(Var),
    Sigmoid(Var),
    LeakyRelu(Var, f64),
    Curvature(Var),
    ExpMap0(Var, Var),
    LogMap0(Var, Var),
    Project(Var, Var),
    MobiusAdd(Var, Var, Var),
    DiffDist(Var, Var),
    RowNorm(Var),
    GatherRows(Var, Arc<Vec<usize>>),
    SliceRow(Var, usize),
    SliceCol(Var, usize),
    ConcatCols(Vec<Var>),
    RowSoftmax(Var),
    SparseAttention {
        u: Var,
        att: Var,
        adj: Arc<CsrMatrix>,
        slope: f64,
    },
    FermiDiracNll {
        d: Var,
        r: f64,
        s: f64,
        positive: bool,
    },
    Sum(Var),
    Mean(Var),
}

impl Op {
    fn primitive(&self) -> Option<Primitive> {
        Some(match self {
            Op::Leaf => return None,
            Op::Add(..) => Primitive::Add,
            Op::AddRow(..) => Primitive::AddRow,
            Op::Sub(..) => Primitive::Sub,
            Op::Mul(..) => Primitive::Mul,
            Op::MulRow(..) => Primitive::MulRow,
            Op::MulCol(..) => Primitive::MulCol,
            Op::Scale(..) => Primitive::Scale,
            Op::MatMulT(..) => Primitive::MatMulT,
            Op::Tanh(..) => Primitive::Tanh,
            Op::Sigmoid(..) => Primitive::Sigmoid,
            Op::LeakyRelu(..) => Primitive::LeakyRelu,
            Op::Curvature(..) => Primitive::Curvature,
            Op::ExpMap0(..) => Primitive::ExpMap0,
            Op::LogMap0(..) => Primitive::LogMap0,
            Op::Project(..) => Primitive::Project,
            Op::MobiusAdd(..) => Primitive::MobiusAdd,
            Op::DiffDist(..) => Primitive::DiffDist,
            Op::RowNorm(..) => Primitive::RowNorm,
            Op::GatherRows(..) => Primitive::GatherRows,
            Op::SliceRow(..) => Primitive::SliceRow,
            Op::SliceCol(..) => Primitive::SliceCol,
            Op::ConcatCols(..) => Primitive::ConcatCols,
            Op::RowSoftmax(..) => Primitive::RowSoftmax,
            Op::SparseAttention { .. } => Primitive::SparseAttention,
            Op::FermiDiracNll { .. } => Primitive::FermiDiracNll,
            Op::Sum(..) => Primitive::Sum,
            Op::Mean(..) => Primitive::Mean,
        })
    }

    fn parents(&self) -> Vec<Var> {
        match self {
            Op::Leaf => vec![],
            Op::Add(a, b)
            | Op::AddRow(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::MulRow(a, b)
            | Op::MulCol(a, b)
            | Op::MatMulT(a, b)
            | Op::ExpMap0(a, b)
            | Op::LogMap0(a, b)
            | Op::Project(a, b)
            | Op::DiffDist(a, b) => vec![*a, *b],
            Op::MobiusAdd(a, b, c) => vec![*a, *b, *c],
            Op::Scale(a, _)
            | Op::Tanh(a)
            | Op::Sigmoid(a)
            | Op::LeakyRelu(a, _)
            | Op::Curvature(a)
            | Op::RowNorm(a)
            | Op::GatherRows(a, _)
            | Op::SliceRow(a, _)
            | Op::SliceCol(a, _)
            | Op::RowSoftmax(a)
            | Op::Sum(a)
            | Op::Mean(a) => vec![*a],
            Op::ConcatCols(vs) => vs.clone(),
            Op::SparseAttention { u, att, .. } => vec![*u, *att],
            Op::FermiDiracNll { d, .. } => vec![*d],
        }
    }
}

struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    registry: AdjointRegistry,
}

/// Adjoints for every node that received one during [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// The adjoint of `v`, or zeros of its shape when none flowed into it.
    pub fn wrt(&self, v: Var) -> Tensor {
        match self.get(v) {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[v.0];
                Tensor::zeros(r, c)
            }
        }
    }
}

fn leaky(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        slope * x
    }
}

fn leaky_grad(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        slope
    }
}

fn expmap_psi(z: f64) -> (f64, f64) {
    // φ(z) = tanh(z)/z and ψ(z) = φ'(z)/z
    if z < 1e-4 {
        let z2 = z * z;
        (1.0 - z2 / 3.0, -2.0 / 3.0 + 8.0 * z2 / 15.0)
    } else {
        let t = z.tanh();
        let phi = t / z;
        let dphi = ((1.0 - t * t) * z - t) / (z * z);
        (phi, dphi / z)
    }
}

fn logmap_psi(z: f64) -> (f64, f64) {
    // φ(z) = atanh(z)/z with the clamp, ψ(z) = φ'(z)/z
    if z < 1e-4 {
        let z2 = z * z;
        (1.0 + z2 / 3.0, 2.0 / 3.0 + 4.0 * z2 / 5.0)
    } else {
        let a = clamp_atanh(z);
        let da = if z < ATANH_MAX { 1.0 / (1.0 - z * z) } else { 0.0 };
        let phi = a / z;
        let dphi = (da * z - a) / (z * z);
        (phi, dphi / z)
    }
}

fn fermi_dirac_prob(d: f64, r: f64, s: f64) -> f64 {
    sigmoid((r - d) / s)
}

fn sparse_attention_weights(
    u: &Tensor,
    att: &[f64],
    adj: &CsrMatrix,
    slope: f64,
    i: usize,
) -> Vec<f64> {
    let d = u.cols();
    let (cols, vals) = adj.row(i);
    let p = dot(&att[..d], u.row_slice(i));
    let scores: Vec<f64> = cols
        .iter()
        .map(|&j| leaky(p + dot(&att[d..], u.row_slice(j)), slope))
        .collect();
    let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut w: Vec<f64> = scores
        .iter()
        .zip(vals)
        .map(|(e, a)| a * (e - m).exp())
        .collect();
    let total: f64 = w.iter().sum();
    if total > 0.0 {
        for x in w.iter_mut() {
            *x /= total;
        }
    }
    w
}

fn compute(op: &Op, vals: &[Node]) -> Tensor {
    let v = |x: &Var| &vals[x.0].value;
    match op {
        Op::Leaf => unreachable!("leaves are not recomputed"),
        Op::Add(a, b) => {
            let mut out = v(a).clone();
            out.add_assign(v(b));
            out
        }
        Op::AddRow(a, r) => {
            let mut out = v(a).clone();
            let row = v(r).data();
            for i in 0..out.rows() {
                for (o, x) in out.row_mut(i).iter_mut().zip(row) {
                    *o += x;
                }
            }
            out
        }
        Op::Sub(a, b) => {
            let (x, y) = (v(a), v(b));
            let data = x.data().iter().zip(y.data()).map(|(p, q)| p - q).collect();
            Tensor::from_vec(x.rows(), x.cols(), data)
        }
        Op::Mul(a, b) => {
            let (x, y) = (v(a), v(b));
            let data = x.data().iter().zip(y.data()).map(|(p, q)| p * q).collect();
            Tensor::from_vec(x.rows(), x.cols(), data)
        }
        Op::MulRow(a, r) => {
            let mut out = v(a).clone();
            let row = v(r).data();
            for i in 0..out.rows() {
                for (o, x) in out.row_mut(i).iter_mut().zip(row) {
                    *o *= x;
                }
            }
            out
        }
        Op::MulCol(a, w) => {
            let mut out = v(a).clone();
            let col = v(w).data();
            for (i, &k) in col.iter().enumerate() {
                for o in out.row_mut(i) {
                    *o *= k;
                }
            }
            out
        }
        Op::Scale(a, k) => v(a).map(|x| x * k),
        Op::MatMulT(a, b) => v(a).matmul_t(v(b)),
        Op::Tanh(a) => v(a).map(f64::tanh),
        Op::Sigmoid(a) => v(a).map(sigmoid),
        Op::LeakyRelu(a, slope) => v(a).map(|x| leaky(x, *slope)),
        Op::Curvature(a) => v(a).map(|x| softplus(x) + MIN_CURVATURE),
        Op::ExpMap0(x, c) => row_map(v(x), v(c).item(), manifold::expmap0_into),
        Op::LogMap0(x, c) => row_map(v(x), v(c).item(), manifold::logmap0_into),
        Op::Project(x, c) => row_map(v(x), v(c).item(), manifold::project_into),
        Op::MobiusAdd(x, y, c) => {
            let (xv, yv, c) = (v(x), v(y), v(c).item());
            let mut out = Tensor::zeros(xv.rows(), xv.cols());
            for i in 0..xv.rows() {
                let yr = if yv.rows() == 1 { yv.row_slice(0) } else { yv.row_slice(i) };
                manifold::mobius_add_into(xv.row_slice(i), yr, c, out.row_mut(i));
            }
            out
        }
        Op::DiffDist(w, c) => {
            let (wv, c) = (v(w), v(c).item());
            let data = (0..wv.rows())
                .map(|i| manifold::dist_from_diff(wv.row_slice(i), c))
                .collect();
            Tensor::from_vec(wv.rows(), 1, data)
        }
        Op::RowNorm(a) => {
            let x = v(a);
            let data = (0..x.rows()).map(|i| norm(x.row_slice(i))).collect();
            Tensor::from_vec(x.rows(), 1, data)
        }
        Op::GatherRows(a, idx) => {
            let x = v(a);
            let mut out = Tensor::zeros(idx.len(), x.cols());
            for (k, &i) in idx.iter().enumerate() {
                out.row_mut(k).copy_from_slice(x.row_slice(i));
            }
            out
        }
        Op::SliceRow(a, r) => Tensor::row(v(a).row_slice(*r).to_vec()),
        Op::SliceCol(a, j) => {
            let x = v(a);
            let data = (0..x.rows()).map(|i| x.get(i, *j)).collect();
            Tensor::from_vec(x.rows(), 1, data)
        }
        Op::ConcatCols(vs) => {
            let rows = v(&vs[0]).rows();
            let cols: usize = vs.iter().map(|p| v(p).cols()).sum();
            let mut out = Tensor::zeros(rows, cols);
            for i in 0..rows {
                let mut off = 0;
                for p in vs {
                    let src = v(p).row_slice(i);
                    out.row_mut(i)[off..off + src.len()].copy_from_slice(src);
                    off += src.len();
                }
            }
            out
        }
        Op::RowSoftmax(a) => {
            let mut out = v(a).clone();
            for i in 0..out.rows() {
                let row = out.row_mut(i);
                let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for x in row.iter_mut() {
                    *x = (*x - m).exp();
                    total += *x;
                }
                for x in row.iter_mut() {
                    *x /= total;
                }
            }
            out
        }
        Op::SparseAttention { u, att, adj, slope } => {
            let (uv, a) = (v(u), v(att).data());
            let mut out = Tensor::zeros(uv.rows(), uv.cols());
            for i in 0..uv.rows() {
                let w = sparse_attention_weights(uv, a, adj, *slope, i);
                let (cols, _) = adj.row(i);
                let row = out.row_mut(i);
                if cols.is_empty() {
                    row.copy_from_slice(uv.row_slice(i));
                    continue;
                }
                for (&j, wij) in cols.iter().zip(&w) {
                    for (o, x) in row.iter_mut().zip(uv.row_slice(j)) {
                        *o += wij * x;
                    }
                }
            }
            out
        }
        Op::FermiDiracNll { d, r, s, positive } => v(d).map(|dist| {
            let p = fermi_dirac_prob(dist, *r, *s).clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            if *positive {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        }),
        Op::Sum(a) => Tensor::scalar(v(a).data().iter().sum()),
        Op::Mean(a) => {
            let x = v(a);
            Tensor::scalar(x.data().iter().sum::<f64>() / x.len() as f64)
        }
    }
}

fn row_map(x: &Tensor, c: f64, f: fn(&[f64], f64, &mut [f64])) -> Tensor {
    let mut out = Tensor::zeros(x.rows(), x.cols());
    for i in 0..x.rows() {
        f(x.row_slice(i), c, out.row_mut(i));
    }
    out
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn registry_mut(&mut self) -> &mut AdjointRegistry {
        &mut self.registry
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A differentiable input.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, true)
    }

    /// A non-differentiable input.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, false)
    }

    fn push_leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            op: Op::Leaf,
            value,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, op: Op) -> Var {
        let value = compute(&op, &self.nodes);
        let requires_grad = op.parents().iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) {
        assert_eq!(self.shape(a), self.shape(b), "{what}: operand shapes differ");
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b, "add");
        self.push(Op::Add(a, b))
    }

    /// Adds a `1 × d` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        assert_eq!(self.shape(row), (1, self.shape(a).1), "add_row: bad row shape");
        self.push(Op::AddRow(a, row))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b, "sub");
        self.push(Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.same_shape(a, b, "mul");
        self.push(Op::Mul(a, b))
    }

    /// Scales every row of `a` elementwise by the `1 × d` row `row`.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        assert_eq!(self.shape(row), (1, self.shape(a).1), "mul_row: bad row shape");
        self.push(Op::MulRow(a, row))
    }

    /// Scales row `i` of `a` by entry `i` of the `N × 1` column `col`.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Var {
        assert_eq!(self.shape(col), (self.shape(a).0, 1), "mul_col: bad column shape");
        self.push(Op::MulCol(a, col))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        self.push(Op::Scale(a, k))
    }

    /// `a · bᵀ`; with `b` a `d × d` weight this applies `W` to every row of `a`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a).1, self.shape(b).1, "matmul_t: inner dimensions differ");
        self.push(Op::MatMulT(a, b))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.push(Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.push(Op::Sigmoid(a))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        self.push(Op::LeakyRelu(a, slope))
    }

    /// Positive curvature `softplus(raw) + 1e-6` from a `1 × 1` raw parameter.
    pub fn curvature(&mut self, raw: Var) -> Var {
        assert_eq!(self.shape(raw), (1, 1), "curvature: raw must be 1 x 1");
        self.push(Op::Curvature(raw))
    }

    pub fn expmap0(&mut self, v: Var, c: Var) -> Var {
        self.push(Op::ExpMap0(v, c))
    }

    pub fn logmap0(&mut self, y: Var, c: Var) -> Var {
        self.push(Op::LogMap0(y, c))
    }

    pub fn project(&mut self, x: Var, c: Var) -> Var {
        self.push(Op::Project(x, c))
    }

    /// Row-wise Möbius addition; `y` may be a single broadcast row.
    pub fn mobius_add(&mut self, x: Var, y: Var, c: Var) -> Var {
        let (xs, ys) = (self.shape(x), self.shape(y));
        assert!(
            xs.1 == ys.1 && (ys.0 == xs.0 || ys.0 == 1),
            "mobius_add: incompatible shapes {xs:?} and {ys:?}"
        );
        self.push(Op::MobiusAdd(x, y, c))
    }

    /// Geodesic distance per row given the Möbius difference `w = (-x) ⊕ y`.
    pub fn diff_dist(&mut self, w: Var, c: Var) -> Var {
        self.push(Op::DiffDist(w, c))
    }

    pub fn row_norm(&mut self, a: Var) -> Var {
        self.push(Op::RowNorm(a))
    }

    pub fn gather_rows(&mut self, a: Var, idx: Arc<Vec<usize>>) -> Var {
        let n = self.shape(a).0;
        assert!(idx.iter().all(|&i| i < n), "gather_rows: index out of range");
        self.push(Op::GatherRows(a, idx))
    }

    pub fn slice_row(&mut self, a: Var, r: usize) -> Var {
        assert!(r < self.shape(a).0);
        self.push(Op::SliceRow(a, r))
    }

    pub fn slice_col(&mut self, a: Var, j: usize) -> Var {
        assert!(j < self.shape(a).1);
        self.push(Op::SliceCol(a, j))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let rows = self.shape(parts[0]).0;
        assert!(parts.iter().all(|p| self.shape(*p).0 == rows));
        self.push(Op::ConcatCols(parts.to_vec()))
    }

    pub fn row_softmax(&mut self, a: Var) -> Var {
        self.push(Op::RowSoftmax(a))
    }

    /// Attention-weighted neighbor sum: for row `i`,
    /// `Σ_j α_ij u_j` with `α_ij ∝ A_ij exp(leaky(att[..d]·u_i + att[d..]·u_j))`
    /// over the nonzero columns `j` of row `i` of `adj`.
    pub fn sparse_attention(&mut self, u: Var, att: Var, adj: Arc<CsrMatrix>, slope: f64) -> Var {
        let (n, d) = self.shape(u);
        assert_eq!(self.shape(att), (1, 2 * d), "sparse_attention: att must be 1 x 2d");
        assert_eq!((adj.n_rows(), adj.n_cols()), (n, n), "sparse_attention: adjacency size");
        self.push(Op::SparseAttention { u, att, adj, slope })
    }

    /// Per-row `-ln p` (positives) or `-ln(1 - p)` (negatives) with `p` the
    /// clamped Fermi-Dirac probability of distance `d`.
    pub fn fermi_dirac_nll(&mut self, d: Var, r: f64, s: f64, positive: bool) -> Var {
        self.push(Op::FermiDiracNll { d, r, s, positive })
    }

    pub fn sum(&mut self, a: Var) -> Var {
        self.push(Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        assert!(!self.value(a).is_empty(), "mean of an empty tensor");
        self.push(Op::Mean(a))
    }

    /// Recomputes every recorded primitive from its recorded inputs and checks
    /// the result is bit-identical to the stored value.
    pub fn replay(&self) -> std::result::Result<(), usize> {
        for (i, node) in self.nodes.iter().enumerate() {
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let again = compute(&node.op, &self.nodes);
            let same = again.shape() == node.value.shape()
                && again
                    .data()
                    .iter()
                    .zip(node.value.data())
                    .all(|(a, b)| a.to_bits() == b.to_bits());
            if !same {
                return Err(i);
            }
        }
        Ok(())
    }

    /// Reverse sweep from `output`, seeded with ones of its shape.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        let n = output.0 + 1;
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        let (r, c) = self.shape(output);
        grads[output.0] = Some(Tensor::from_vec(r, c, vec![1.0; r * c]));
        for i in (0..n).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(mut g) = grads[i].take() else {
                continue;
            };
            let Some(prim) = node.op.primitive() else {
                grads[i] = Some(g);
                continue;
            };
            if !self.registry.is_registered(prim) {
                return Err(Error::UnregisteredPrimitive(prim.name()));
            }
            if let Some(k) = self.registry.corrupted.get(&prim) {
                g = g.map(|x| x * k);
            }
            self.propagate(node, &g, &mut grads);
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape()).collect();
        Ok(Gradients { grads, shapes })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], v: Var, t: Tensor) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_assign(&t),
            slot => *slot = Some(t),
        }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let val = |x: &Var| &self.nodes[x.0].value;
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::AddRow(a, r) => {
                self.accumulate(grads, *a, g.clone());
                if self.wants(*r) {
                    self.accumulate(grads, *r, column_sums(g));
                }
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                if self.wants(*b) {
                    self.accumulate(grads, *b, g.map(|x| -x));
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(a), val(b));
                if self.wants(*a) {
                    self.accumulate(grads, *a, hadamard(g, bv));
                }
                if self.wants(*b) {
                    self.accumulate(grads, *b, hadamard(g, av));
                }
            }
            Op::MulRow(a, r) => {
                let (av, rv) = (val(a), val(r));
                if self.wants(*a) {
                    let mut ga = g.clone();
                    for i in 0..ga.rows() {
                        for (o, k) in ga.row_mut(i).iter_mut().zip(rv.data()) {
                            *o *= k;
                        }
                    }
                    self.accumulate(grads, *a, ga);
                }
                if self.wants(*r) {
                    self.accumulate(grads, *r, column_sums(&hadamard(g, av)));
                }
            }
            Op::MulCol(a, w) => {
                let (av, wv) = (val(a), val(w));
                if self.wants(*a) {
                    let mut ga = g.clone();
                    for (i, &k) in wv.data().iter().enumerate() {
                        for o in ga.row_mut(i) {
                            *o *= k;
                        }
                    }
                    self.accumulate(grads, *a, ga);
                }
                if self.wants(*w) {
                    let data = (0..av.rows())
                        .map(|i| dot(g.row_slice(i), av.row_slice(i)))
                        .collect();
                    self.accumulate(grads, *w, Tensor::from_vec(av.rows(), 1, data));
                }
            }
            Op::Scale(a, k) => self.accumulate(grads, *a, g.map(|x| x * k)),
            Op::MatMulT(a, b) => {
                let (av, bv) = (val(a), val(b));
                if self.wants(*a) {
                    // g (N×P) · b (P×m)
                    let mut ga = Tensor::zeros(av.rows(), av.cols());
                    for i in 0..av.rows() {
                        let gi = g.row_slice(i);
                        let out = ga.row_mut(i);
                        for (p, &gp) in gi.iter().enumerate() {
                            if gp != 0.0 {
                                for (o, bx) in out.iter_mut().zip(bv.row_slice(p)) {
                                    *o += gp * bx;
                                }
                            }
                        }
                    }
                    self.accumulate(grads, *a, ga);
                }
                if self.wants(*b) {
                    // gᵀ (P×N) · a (N×m)
                    let mut gb = Tensor::zeros(bv.rows(), bv.cols());
                    for i in 0..av.rows() {
                        let ai = av.row_slice(i);
                        for (p, &gp) in g.row_slice(i).iter().enumerate() {
                            if gp != 0.0 {
                                for (o, ax) in gb.row_mut(p).iter_mut().zip(ai) {
                                    *o += gp * ax;
                                }
                            }
                        }
                    }
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Tanh(a) => {
                let data = g.data().iter().zip(y.data()).map(|(gi, t)| gi * (1.0 - t * t)).collect();
                self.accumulate(grads, *a, Tensor::from_vec(y.rows(), y.cols(), data));
            }
            Op::Sigmoid(a) => {
                let data = g.data().iter().zip(y.data()).map(|(gi, s)| gi * s * (1.0 - s)).collect();
                self.accumulate(grads, *a, Tensor::from_vec(y.rows(), y.cols(), data));
            }
            Op::LeakyRelu(a, slope) => {
                let x = val(a);
                let data = g
                    .data()
                    .iter()
                    .zip(x.data())
                    .map(|(gi, xi)| gi * leaky_grad(*xi, *slope))
                    .collect();
                self.accumulate(grads, *a, Tensor::from_vec(y.rows(), y.cols(), data));
            }
            Op::Curvature(a) => {
                let raw = val(a).item();
                self.accumulate(grads, *a, Tensor::scalar(g.item() * sigmoid(raw)));
            }
            Op::ExpMap0(x, c) => self.map_adjoint(*x, *c, g, expmap_psi, grads),
            Op::LogMap0(x, c) => self.map_adjoint(*x, *c, g, logmap_psi, grads),
            Op::Project(x, cv) => {
                let (xv, c) = (val(x), val(cv).item());
                let m = max_norm(c);
                let mut gx = g.clone();
                let mut gc = 0.0;
                for i in 0..xv.rows() {
                    let xi = xv.row_slice(i);
                    let n = norm(xi);
                    if n > m {
                        let gi = g.row_slice(i);
                        let gh = dot(gi, xi) / n;
                        for ((o, gk), xk) in gx.row_mut(i).iter_mut().zip(gi).zip(xi) {
                            *o = m / n * (gk - xk / n * gh);
                        }
                        gc += gh * (-m / (2.0 * c));
                    }
                }
                self.accumulate(grads, *x, gx);
                self.accumulate(grads, *cv, Tensor::scalar(gc));
            }
            Op::MobiusAdd(x, yv, cv) => self.mobius_adjoint(*x, *yv, *cv, g, grads),
            Op::DiffDist(w, cv) => {
                let (wv, c) = (val(w), val(cv).item());
                let sc = c.sqrt();
                let mut gw = Tensor::zeros(wv.rows(), wv.cols());
                let mut gc = 0.0;
                for i in 0..wv.rows() {
                    let wi = wv.row_slice(i);
                    let n = norm(wi);
                    let z = sc * n;
                    let a = clamp_atanh(z);
                    let da = if z < ATANH_MAX { 1.0 / (1.0 - z * z) } else { 0.0 };
                    let gi = g.get(i, 0);
                    if n > 0.0 {
                        let k = gi * 2.0 * da / n;
                        for (o, wk) in gw.row_mut(i).iter_mut().zip(wi) {
                            *o = k * wk;
                        }
                    }
                    gc += gi * (da * n / c - a / (c * sc));
                }
                self.accumulate(grads, *w, gw);
                self.accumulate(grads, *cv, Tensor::scalar(gc));
            }
            Op::RowNorm(a) => {
                let x = val(a);
                let mut gx = Tensor::zeros(x.rows(), x.cols());
                for i in 0..x.rows() {
                    let n = y.get(i, 0);
                    if n > 0.0 {
                        let k = g.get(i, 0) / n;
                        for (o, xk) in gx.row_mut(i).iter_mut().zip(x.row_slice(i)) {
                            *o = k * xk;
                        }
                    }
                }
                self.accumulate(grads, *a, gx);
            }
            Op::GatherRows(a, idx) => {
                let x = val(a);
                let mut gx = Tensor::zeros(x.rows(), x.cols());
                for (k, &i) in idx.iter().enumerate() {
                    for (o, gk) in gx.row_mut(i).iter_mut().zip(g.row_slice(k)) {
                        *o += gk;
                    }
                }
                self.accumulate(grads, *a, gx);
            }
            Op::SliceRow(a, r) => {
                let x = val(a);
                let mut gx = Tensor::zeros(x.rows(), x.cols());
                gx.row_mut(*r).copy_from_slice(g.data());
                self.accumulate(grads, *a, gx);
            }
            Op::SliceCol(a, j) => {
                let x = val(a);
                let mut gx = Tensor::zeros(x.rows(), x.cols());
                for i in 0..x.rows() {
                    gx.set(i, *j, g.get(i, 0));
                }
                self.accumulate(grads, *a, gx);
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for p in parts {
                    let (rows, cols) = val(p).shape();
                    if self.wants(*p) {
                        let mut gp = Tensor::zeros(rows, cols);
                        for i in 0..rows {
                            gp.row_mut(i).copy_from_slice(&g.row_slice(i)[off..off + cols]);
                        }
                        self.accumulate(grads, *p, gp);
                    }
                    off += cols;
                }
            }
            Op::RowSoftmax(a) => {
                let mut gx = Tensor::zeros(y.rows(), y.cols());
                for i in 0..y.rows() {
                    let (yi, gi) = (y.row_slice(i), g.row_slice(i));
                    let inner = dot(yi, gi);
                    for ((o, yk), gk) in gx.row_mut(i).iter_mut().zip(yi).zip(gi) {
                        *o = yk * (gk - inner);
                    }
                }
                self.accumulate(grads, *a, gx);
            }
            Op::SparseAttention { u, att, adj, slope } => {
                self.attention_adjoint(*u, *att, adj, *slope, g, grads)
            }
            Op::FermiDiracNll { d, r, s, positive } => {
                let dv = val(d);
                let data = g
                    .data()
                    .iter()
                    .zip(dv.data())
                    .map(|(gi, &dist)| {
                        let p = fermi_dirac_prob(dist, *r, *s);
                        if !(PROB_CLAMP..=1.0 - PROB_CLAMP).contains(&p) {
                            0.0
                        } else if *positive {
                            gi * (1.0 - p) / s
                        } else {
                            -gi * p / s
                        }
                    })
                    .collect();
                self.accumulate(grads, *d, Tensor::from_vec(dv.rows(), 1, data));
            }
            Op::Sum(a) => {
                let (r, c) = val(a).shape();
                self.accumulate(grads, *a, Tensor::from_vec(r, c, vec![g.item(); r * c]));
            }
            Op::Mean(a) => {
                let (r, c) = val(a).shape();
                let k = g.item() / (r * c) as f64;
                self.accumulate(grads, *a, Tensor::from_vec(r, c, vec![k; r * c]));
            }
        }
    }

    /// Shared adjoint of the origin maps `out = φ(√c‖v‖) v`.
    fn map_adjoint(
        &self,
        x: Var,
        cv: Var,
        g: &Tensor,
        psi: fn(f64) -> (f64, f64),
        grads: &mut [Option<Tensor>],
    ) {
        let xv = &self.nodes[x.0].value;
        let c = self.nodes[cv.0].value.item();
        let sc = c.sqrt();
        let mut gx = Tensor::zeros(xv.rows(), xv.cols());
        let mut gc = 0.0;
        for i in 0..xv.rows() {
            let vi = xv.row_slice(i);
            let gi = g.row_slice(i);
            let n = norm(vi);
            let (phi, psi) = psi(sc * n);
            let gv = dot(gi, vi);
            for ((o, gk), vk) in gx.row_mut(i).iter_mut().zip(gi).zip(vi) {
                *o = phi * gk + gv * psi * c * vk;
            }
            gc += gv * psi * n * n / 2.0;
        }
        self.accumulate(grads, x, gx);
        self.accumulate(grads, cv, Tensor::scalar(gc));
    }

    fn mobius_adjoint(&self, x: Var, y: Var, cv: Var, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let xv = &self.nodes[x.0].value;
        let yv = &self.nodes[y.0].value;
        let c = self.nodes[cv.0].value.item();
        let d = xv.cols();
        let mut gx = Tensor::zeros(xv.rows(), d);
        let mut gy = Tensor::zeros(yv.rows(), d);
        let mut gc = 0.0;
        for i in 0..xv.rows() {
            let xi = xv.row_slice(i);
            let yr = if yv.rows() == 1 { 0 } else { i };
            let yi = yv.row_slice(yr);
            let a = dot(xi, yi);
            let xx = dot(xi, xi);
            let yy = dot(yi, yi);
            let alpha = 1.0 + 2.0 * c * a + c * yy;
            let beta = 1.0 - c * xx;
            let den = 1.0 + 2.0 * c * a + c * c * xx * yy;
            let big_g: Vec<f64> = g.row_slice(i).iter().map(|v| v / den).collect();
            let o: Vec<f64> = xi
                .iter()
                .zip(yi)
                .map(|(p, q)| (alpha * p + beta * q) / den)
                .collect();
            let g_x = dot(&big_g, xi);
            let g_y = dot(&big_g, yi);
            let g_o = dot(&big_g, &o);
            for k in 0..d {
                gx.row_mut(i)[k] += alpha * big_g[k] + g_x * 2.0 * c * yi[k]
                    - g_y * 2.0 * c * xi[k]
                    - g_o * (2.0 * c * yi[k] + 2.0 * c * c * yy * xi[k]);
                gy.row_mut(yr)[k] += beta * big_g[k] + g_x * (2.0 * c * xi[k] + 2.0 * c * yi[k])
                    - g_o * (2.0 * c * xi[k] + 2.0 * c * c * xx * yi[k]);
            }
            gc += g_x * (2.0 * a + yy) - g_y * xx - g_o * (2.0 * a + 2.0 * c * xx * yy);
        }
        self.accumulate(grads, x, gx);
        self.accumulate(grads, y, gy);
        self.accumulate(grads, cv, Tensor::scalar(gc));
    }

    fn attention_adjoint(
        &self,
        u: Var,
        att: Var,
        adj: &CsrMatrix,
        slope: f64,
        g: &Tensor,
        grads: &mut [Option<Tensor>],
    ) {
        let uv = &self.nodes[u.0].value;
        let a = self.nodes[att.0].value.data();
        let (n, d) = uv.shape();
        let mut gu = Tensor::zeros(n, d);
        // adjoints of the per-node source and target scores
        let mut gp = vec![0.0; n];
        let mut gq = vec![0.0; n];
        for i in 0..n {
            let (cols, _) = adj.row(i);
            let gi = g.row_slice(i);
            if cols.is_empty() {
                for (o, x) in gu.row_mut(i).iter_mut().zip(gi) {
                    *o += x;
                }
                continue;
            }
            let w = sparse_attention_weights(uv, a, adj, slope, i);
            let dw: Vec<f64> = cols.iter().map(|&j| dot(gi, uv.row_slice(j))).collect();
            let inner: f64 = w.iter().zip(&dw).map(|(p, q)| p * q).sum();
            let p = dot(&a[..d], uv.row_slice(i));
            for (k, &j) in cols.iter().enumerate() {
                for (o, x) in gu.row_mut(j).iter_mut().zip(gi) {
                    *o += w[k] * x;
                }
                let pre = p + dot(&a[d..], uv.row_slice(j));
                let de = w[k] * (dw[k] - inner) * leaky_grad(pre, slope);
                gp[i] += de;
                gq[j] += de;
            }
        }
        let mut ga = Tensor::zeros(1, 2 * d);
        for i in 0..n {
            let ui = uv.row_slice(i);
            for k in 0..d {
                gu.row_mut(i)[k] += gp[i] * a[k] + gq[i] * a[d + k];
                ga.row_mut(0)[k] += gp[i] * ui[k];
                ga.row_mut(0)[d + k] += gq[i] * ui[k];
            }
        }
        self.accumulate(grads, u, gu);
        if self.wants(att) {
            self.accumulate(grads, att, ga);
        }
    }
}

fn column_sums(g: &Tensor) -> Tensor {
    let mut out = Tensor::zeros(1, g.cols());
    for i in 0..g.rows() {
        for (o, x) in out.row_mut(0).iter_mut().zip(g.row_slice(i)) {
            *o += x;
        }
    }
    out
}

fn hadamard(a: &Tensor, b: &Tensor) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(p, q)| p * q).collect();
    Tensor::from_vec(a.rows(), a.cols(), data)
}
