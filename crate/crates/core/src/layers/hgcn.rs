use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{normal, points_to_tensor, tensor_to_points, xavier, Binder, Space, LEAKY_SLOPE};
use crate::graph_data::DiffusionStack;
use crate::manifold::{raw_for_value, Curvature, PoincarePoint};
use crate::sparse::CsrMatrix;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Standard deviation of the initial tangent-space step biases.
const BIAS_INIT_STD: f64 = 0.01;

/// One diffusion step: weight `W` (`d × d`), bias `b` stored as a tangent
/// vector at the origin (`1 × d`), and the raw step curvature.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HdgcStepParams {
    pub weight: Tensor,
    pub bias: Tensor,
    pub raw_curvature: Tensor,
}

impl HdgcStepParams {
    pub fn init<R: Rng>(d: usize, rng: &mut R) -> Self {
        HdgcStepParams {
            weight: xavier(d, d, rng),
            bias: normal(1, d, BIAS_INIT_STD, rng),
            raw_curvature: Tensor::scalar(raw_for_value(1.0)),
        }
    }

    /// `W = I`, zero bias, unit curvature.
    pub fn identity(d: usize) -> Self {
        HdgcStepParams {
            weight: Tensor::identity(d),
            bias: Tensor::zeros(1, d),
            raw_curvature: Tensor::scalar(raw_for_value(1.0)),
        }
    }

    pub fn curvature(&self) -> Curvature {
        Curvature::from_raw(self.raw_curvature.item())
    }
}

/// One HDGC layer: `K + 1` steps sharing the neighbor-attention vector
/// `a_nbr` (`1 × 2d`) and the step-attention vector `a_step` (`1 × d`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HdgcLayerParams {
    pub steps: Vec<HdgcStepParams>,
    pub a_nbr: Tensor,
    pub a_step: Tensor,
}

impl HdgcLayerParams {
    pub fn init<R: Rng>(d: usize, num_steps: usize, rng: &mut R) -> Self {
        HdgcLayerParams {
            steps: (0..num_steps).map(|_| HdgcStepParams::init(d, rng)).collect(),
            a_nbr: xavier(1, 2 * d, rng),
            a_step: xavier(1, d, rng),
        }
    }

    pub fn identity(d: usize, num_steps: usize) -> Self {
        HdgcLayerParams {
            steps: (0..num_steps).map(|_| HdgcStepParams::identity(d)).collect(),
            a_nbr: Tensor::zeros(1, 2 * d),
            a_step: Tensor::zeros(1, d),
        }
    }

    pub fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        for (k, s) in self.steps.iter().enumerate() {
            out.push((format!("{prefix}step{k}.weight"), &s.weight));
            out.push((format!("{prefix}step{k}.bias"), &s.bias));
            out.push((format!("{prefix}step{k}.curvature"), &s.raw_curvature));
        }
        out.push((format!("{prefix}a_nbr"), &self.a_nbr));
        out.push((format!("{prefix}a_step"), &self.a_step));
    }

    pub fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>) {
        for (k, s) in self.steps.iter_mut().enumerate() {
            out.push((format!("{prefix}step{k}.weight"), &mut s.weight));
            out.push((format!("{prefix}step{k}.bias"), &mut s.bias));
            out.push((format!("{prefix}step{k}.curvature"), &mut s.raw_curvature));
        }
        out.push((format!("{prefix}a_nbr"), &mut self.a_nbr));
        out.push((format!("{prefix}a_step"), &mut self.a_step));
    }

    pub fn bind(&self, b: &mut Binder, prefix: &str, out: Space) -> HdgcLayerVars {
        let steps = self
            .steps
            .iter()
            .enumerate()
            .map(|(k, s)| HdgcStepVars {
                weight: b.tensor(format!("{prefix}step{k}.weight"), &s.weight),
                bias: b.tensor(format!("{prefix}step{k}.bias"), &s.bias),
                space: b.curvature(format!("{prefix}step{k}.curvature"), &s.raw_curvature),
            })
            .collect();
        HdgcLayerVars {
            steps,
            a_nbr: b.tensor(format!("{prefix}a_nbr"), &self.a_nbr),
            a_step: b.tensor(format!("{prefix}a_step"), &self.a_step),
            out,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct HdgcStepVars {
    pub weight: Var,
    pub bias: Var,
    pub space: Space,
}

#[derive(Clone, Debug)]
pub struct HdgcLayerVars {
    pub steps: Vec<HdgcStepVars>,
    pub a_nbr: Var,
    pub a_step: Var,
    pub out: Space,
}

/// `(W ⊗ x) ⊕ b` with `b` a point (single row, broadcast over nodes).
pub fn hyperbolic_linear_t(tape: &mut Tape, space: Space, w: Var, b: Var, x: Var) -> Var {
    let m = space.matvec(tape, w, x);
    space.add(tape, m, b)
}

/// Attention-weighted tangent aggregation over the nonzero pattern of `adj`.
pub fn neighbor_aggregate_t(
    tape: &mut Tape,
    input: Space,
    output: Space,
    adj: &Arc<CsrMatrix>,
    a_nbr: Var,
    h: Var,
) -> Var {
    let u = input.log(tape, h);
    let agg = tape.sparse_attention(u, a_nbr, adj.clone(), LEAKY_SLOPE);
    output.exp(tape, agg)
}

pub fn hyperbolic_activation_t(tape: &mut Tape, input: Space, output: Space, y: Var) -> Var {
    let u = input.log(tape, y);
    let a = tape.leaky_relu(u, LEAKY_SLOPE);
    output.exp(tape, a)
}

/// Linear map, aggregation over `adj` and activation, all in the step's ball.
/// The input matrix is first re-expressed in that ball.
pub fn hdgc_step_t(
    tape: &mut Tape,
    input: Space,
    step: &HdgcStepVars,
    a_nbr: Var,
    adj: &Arc<CsrMatrix>,
    x: Var,
) -> Var {
    let sp = step.space;
    let xk = sp.transport(tape, input, x);
    let b = sp.exp(tape, step.bias);
    let h = hyperbolic_linear_t(tape, sp, step.weight, b, xk);
    let agg = neighbor_aggregate_t(tape, sp, sp, adj, a_nbr, h);
    hyperbolic_activation_t(tape, sp, sp, agg)
}

/// Runs every step (step `k` over `adjs[k]`) and fuses their tangent vectors
/// with a per-node softmax over steps scored by `a_step`.
pub fn hdgc_layer_t(tape: &mut Tape, input: Space, layer: &HdgcLayerVars, adjs: &[Arc<CsrMatrix>], x: Var) -> Var {
    assert_eq!(adjs.len(), layer.steps.len(), "one adjacency per diffusion step");
    let tangents: Vec<Var> = layer
        .steps
        .iter()
        .zip(adjs)
        .map(|(step, adj)| {
            let xk = hdgc_step_t(tape, input, step, layer.a_nbr, adj, x);
            step.space.log(tape, xk)
        })
        .collect();
    let scores: Vec<Var> = tangents.iter().map(|&t| tape.matmul_t(t, layer.a_step)).collect();
    let cat = tape.concat_cols(&scores);
    let weights = tape.row_softmax(cat);
    let mut acc: Option<Var> = None;
    for (k, &t) in tangents.iter().enumerate() {
        let wk = tape.slice_col(weights, k);
        let term = tape.mul_col(t, wk);
        acc = Some(match acc {
            Some(a) => tape.add(a, term),
            None => term,
        });
    }
    let fused = acc.expect("at least one diffusion step");
    layer.out.exp(tape, fused)
}

/// `layers` applied in sequence, each reading the powers `adjs[..=K]`.
pub fn hdgc_forward_t(tape: &mut Tape, input: Space, layers: &[HdgcLayerVars], adjs: &[Arc<CsrMatrix>], x: Var) -> Var {
    let mut space = input;
    let mut h = x;
    for layer in layers {
        h = hdgc_layer_t(tape, space, layer, &adjs[..layer.steps.len()], h);
        space = layer.out;
    }
    h
}

fn curvature_of(points: &[PoincarePoint]) -> Curvature {
    points.first().map_or(Curvature::unit(), |p| p.curvature())
}

pub fn hyperbolic_linear(x: &PoincarePoint, w: &Tensor, b: &PoincarePoint) -> PoincarePoint {
    let c = x.curvature();
    let mut tape = Tape::new();
    let space = Space::fixed(&mut tape, c.c());
    let xv = tape.constant(Tensor::row(x.coords().to_vec()));
    let wv = tape.constant(w.clone());
    let bv = tape.constant(Tensor::row(b.coords().to_vec()));
    let out = hyperbolic_linear_t(&mut tape, space, wv, bv, xv);
    tensor_to_points(tape.value(out), c).remove(0)
}

pub fn neighbor_aggregate(h: &[PoincarePoint], adj: &CsrMatrix, a_nbr: &[f64], c_out: Curvature) -> Vec<PoincarePoint> {
    let mut tape = Tape::new();
    let input = Space::fixed(&mut tape, curvature_of(h).c());
    let output = Space::fixed(&mut tape, c_out.c());
    let hv = tape.constant(points_to_tensor(h));
    let av = tape.constant(Tensor::row(a_nbr.to_vec()));
    let out = neighbor_aggregate_t(&mut tape, input, output, &Arc::new(adj.clone()), av, hv);
    tensor_to_points(tape.value(out), c_out)
}

pub fn hyperbolic_activation(y: &PoincarePoint, c_out: Curvature) -> PoincarePoint {
    let mut tape = Tape::new();
    let input = Space::fixed(&mut tape, y.curvature().c());
    let output = Space::fixed(&mut tape, c_out.c());
    let yv = tape.constant(Tensor::row(y.coords().to_vec()));
    let out = hyperbolic_activation_t(&mut tape, input, output, yv);
    tensor_to_points(tape.value(out), c_out).remove(0)
}

fn bind_constant_layer(tape: &mut Tape, layer: &HdgcLayerParams, out: Curvature) -> HdgcLayerVars {
    let out_space = Space::fixed(tape, out.c());
    let mut b = Binder::new(tape, false, false);
    layer.bind(&mut b, "", out_space)
}

/// Output points live in the step's ball.
pub fn hdgc_step(adj: &CsrMatrix, x_prev: &[PoincarePoint], step: &HdgcStepParams, a_nbr: &[f64]) -> Vec<PoincarePoint> {
    let mut tape = Tape::new();
    let input = Space::fixed(&mut tape, curvature_of(x_prev).c());
    let mut b = Binder::new(&mut tape, false, false);
    let vars = HdgcStepVars {
        weight: b.tensor("weight".into(), &step.weight),
        bias: b.tensor("bias".into(), &step.bias),
        space: b.curvature("curvature".into(), &step.raw_curvature),
    };
    let a = b.tensor("a_nbr".into(), &Tensor::row(a_nbr.to_vec()));
    let x = tape.constant(points_to_tensor(x_prev));
    let out = hdgc_step_t(&mut tape, input, &vars, a, &Arc::new(adj.clone()), x);
    tensor_to_points(tape.value(out), step.curvature())
}

/// Step `k` uses `adjs[k]`; the result lives in a ball of curvature `out`.
pub fn hdgc_layer(adjs: &[Arc<CsrMatrix>], x_prev: &[PoincarePoint], layer: &HdgcLayerParams, out: Curvature) -> Vec<PoincarePoint> {
    let mut tape = Tape::new();
    let input = Space::fixed(&mut tape, curvature_of(x_prev).c());
    let vars = bind_constant_layer(&mut tape, layer, out);
    let x = tape.constant(points_to_tensor(x_prev));
    let y = hdgc_layer_t(&mut tape, input, &vars, adjs, x);
    tensor_to_points(tape.value(y), out)
}

/// Every layer maps into a ball of curvature `out`.
pub fn hdgc_forward(
    stack: &DiffusionStack,
    x_in: &[PoincarePoint],
    layers: &[HdgcLayerParams],
    out: Curvature,
) -> Vec<PoincarePoint> {
    let mut tape = Tape::new();
    let input = Space::fixed(&mut tape, curvature_of(x_in).c());
    let vars: Vec<HdgcLayerVars> = layers.iter().map(|l| bind_constant_layer(&mut tape, l, out)).collect();
    let x = tape.constant(points_to_tensor(x_in));
    let y = hdgc_forward_t(&mut tape, input, &vars, stack.powers(), x);
    tensor_to_points(tape.value(y), out)
}
