//! Network blocks: hyperbolic linear/aggregation/activation, diffusion graph
//! convolution over adjacency powers, gated dilated causal convolution over
//! snapshot history, and the tangent-space GRU cell.
//!
//! Every block is written once against the [`Tape`] and operates on whole
//! `N × d` node matrices. The point-level functions re-exported here wrap the
//! same code with constant inputs for single-shot use.

mod hdcc;
mod hgcn;
mod hgru;

pub use hdcc::{
    gated_hdcc_layer, gated_hdcc_stack, gated_hdcc_stack_t, hdcc_apply, history_attention_t, GatedHdccLayer,
    GatedHdccStack, GatedLayerVars, HdccKernel,
};
pub use hgcn::{
    hdgc_forward, hdgc_forward_t, hdgc_layer, hdgc_layer_t, hdgc_step, hdgc_step_t, hyperbolic_activation,
    hyperbolic_activation_t, hyperbolic_linear, hyperbolic_linear_t, neighbor_aggregate, neighbor_aggregate_t,
    HdgcLayerParams, HdgcLayerVars, HdgcStepParams, HdgcStepVars,
};
pub use hgru::{hgru_cell, hgru_t, HgruParams, HgruVars};

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::manifold::{Curvature, PoincarePoint};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Negative slope of every leaky-ReLU in the network.
pub const LEAKY_SLOPE: f64 = 0.2;

/// The geometry a node matrix lives in: a Poincaré ball whose curvature is a
/// recorded scalar, or flat Euclidean space.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Space {
    Ball(Var),
    Flat,
}

impl Space {
    /// A ball of fixed curvature `c`.
    pub fn fixed(tape: &mut Tape, c: f64) -> Space {
        Space::Ball(tape.constant(Tensor::scalar(c)))
    }

    /// `exp_o` followed by the boundary clamp.
    pub fn exp(self, tape: &mut Tape, v: Var) -> Var {
        match self {
            Space::Ball(c) => {
                let e = tape.expmap0(v, c);
                tape.project(e, c)
            }
            Space::Flat => v,
        }
    }

    pub fn log(self, tape: &mut Tape, y: Var) -> Var {
        match self {
            Space::Ball(c) => tape.logmap0(y, c),
            Space::Flat => y,
        }
    }

    /// Re-expresses points of `from` in this space through the origin tangent space.
    pub fn transport(self, tape: &mut Tape, from: Space, x: Var) -> Var {
        if self == from {
            return x;
        }
        let u = from.log(tape, x);
        self.exp(tape, u)
    }

    /// Row-wise `x ⊕ y` (projected); `y` may be a single broadcast row.
    pub fn add(self, tape: &mut Tape, x: Var, y: Var) -> Var {
        match self {
            Space::Ball(c) => {
                let s = tape.mobius_add(x, y, c);
                tape.project(s, c)
            }
            Space::Flat => {
                if tape.value(y).rows() == 1 && tape.value(x).rows() != 1 {
                    tape.add_row(x, y)
                } else {
                    tape.add(x, y)
                }
            }
        }
    }

    /// `W ⊗ x` applied to every row.
    pub fn matvec(self, tape: &mut Tape, w: Var, x: Var) -> Var {
        let u = self.log(tape, x);
        let m = tape.matmul_t(u, w);
        self.exp(tape, m)
    }

    /// Row-wise distances `d(x_i, y_i)` as an `N × 1` column.
    pub fn dist(self, tape: &mut Tape, x: Var, y: Var) -> Var {
        match self {
            Space::Ball(c) => {
                let nx = tape.scale(x, -1.0);
                let w = tape.mobius_add(nx, y, c);
                tape.diff_dist(w, c)
            }
            Space::Flat => {
                let diff = tape.sub(x, y);
                tape.row_norm(diff)
            }
        }
    }
}

/// Records parameter tensors on a tape under stable names.
pub struct Binder<'t> {
    pub tape: &'t mut Tape,
    trainable: bool,
    euclidean: bool,
    bound: Vec<(String, Var)>,
}

impl<'t> Binder<'t> {
    /// Tensors become differentiable inputs when `trainable`, constants otherwise.
    pub fn new(tape: &'t mut Tape, trainable: bool, euclidean: bool) -> Self {
        Binder {
            tape,
            trainable,
            euclidean,
            bound: Vec::new(),
        }
    }

    pub fn euclidean(&self) -> bool {
        self.euclidean
    }

    pub fn tensor(&mut self, name: String, t: &Tensor) -> Var {
        let v = if self.trainable {
            self.tape.param(t.clone())
        } else {
            self.tape.constant(t.clone())
        };
        self.bound.push((name, v));
        v
    }

    /// A ball whose curvature is `softplus(raw) + 1e-6`; flat in Euclidean mode,
    /// where the raw parameter is not recorded at all.
    pub fn curvature(&mut self, name: String, raw: &Tensor) -> Space {
        if self.euclidean {
            return Space::Flat;
        }
        let r = self.tensor(name, raw);
        Space::Ball(self.tape.curvature(r))
    }

    /// A ball of fixed curvature, or flat in Euclidean mode.
    pub fn fixed(&mut self, c: Curvature) -> Space {
        if self.euclidean {
            Space::Flat
        } else {
            Space::fixed(self.tape, c.c())
        }
    }

    pub fn bound(&self) -> &[(String, Var)] {
        &self.bound
    }

    pub fn into_bound(self) -> Vec<(String, Var)> {
        self.bound
    }
}

/// Uniform Glorot initialization.
pub fn xavier<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Tensor {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    Tensor::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(-bound..bound)).collect())
}

pub fn normal<R: Rng>(rows: usize, cols: usize, std: f64, rng: &mut R) -> Tensor {
    let dist = Normal::new(0.0, std).expect("finite standard deviation");
    Tensor::from_vec(rows, cols, (0..rows * cols).map(|_| dist.sample(rng)).collect())
}

/// Stacks points of one curvature into an `N × d` matrix.
pub(crate) fn points_to_tensor(points: &[PoincarePoint]) -> Tensor {
    let d = points.first().map_or(0, |p| p.dim());
    let rows: Vec<Vec<f64>> = points.iter().map(|p| p.coords().to_vec()).collect();
    if rows.is_empty() {
        return Tensor::zeros(0, d);
    }
    Tensor::from_rows(&rows)
}

pub(crate) fn tensor_to_points(t: &Tensor, c: Curvature) -> Vec<PoincarePoint> {
    (0..t.rows())
        .map(|i| PoincarePoint::new(t.row_slice(i).to_vec(), c).expect("layer outputs are finite"))
        .collect()
}
