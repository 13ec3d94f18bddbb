use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{xavier, Binder, Space};
use crate::manifold::{Curvature, PoincarePoint};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Depthwise causal kernel: row `s` of `taps` (`S × d`) scales the entry
/// `dilation · s` steps back, channel by channel.
#[derive(Clone, Debug, PartialEq)]
pub struct HdccKernel {
    pub taps: Tensor,
    pub dilation: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GatedHdccLayer {
    pub filter: Tensor,
    pub gate: Tensor,
    pub dilation: usize,
}

/// `D′` gated layers whose dilations cycle through `S⁰ … S^{D−1}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GatedHdccStack {
    pub layers: Vec<GatedHdccLayer>,
    pub kernel_size: usize,
    pub cycle: usize,
}

impl GatedHdccStack {
    pub fn init<R: Rng>(d: usize, kernel_size: usize, cycle: usize, num_layers: usize, rng: &mut R) -> Self {
        let layers = (0..num_layers)
            .map(|l| GatedHdccLayer {
                filter: xavier(kernel_size, d, rng),
                gate: xavier(kernel_size, d, rng),
                dilation: kernel_size.pow((l % cycle) as u32),
            })
            .collect();
        GatedHdccStack {
            layers,
            kernel_size,
            cycle,
        }
    }

    pub fn zeros(d: usize, kernel_size: usize, cycle: usize, num_layers: usize) -> Self {
        let layers = (0..num_layers)
            .map(|l| GatedHdccLayer {
                filter: Tensor::zeros(kernel_size, d),
                gate: Tensor::zeros(kernel_size, d),
                dilation: kernel_size.pow((l % cycle) as u32),
            })
            .collect();
        GatedHdccStack {
            layers,
            kernel_size,
            cycle,
        }
    }

    /// Number of past snapshots the stack reads: `S^D`.
    pub fn window(&self) -> usize {
        self.kernel_size.pow(self.cycle as u32)
    }

    pub fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        for (l, layer) in self.layers.iter().enumerate() {
            out.push((format!("{prefix}layer{l}.filter"), &layer.filter));
            out.push((format!("{prefix}layer{l}.gate"), &layer.gate));
        }
    }

    pub fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>) {
        for (l, layer) in self.layers.iter_mut().enumerate() {
            out.push((format!("{prefix}layer{l}.filter"), &mut layer.filter));
            out.push((format!("{prefix}layer{l}.gate"), &mut layer.gate));
        }
    }

    pub fn bind(&self, b: &mut Binder, prefix: &str) -> Vec<GatedLayerVars> {
        self.layers
            .iter()
            .enumerate()
            .map(|(l, layer)| GatedLayerVars {
                filter: b.tensor(format!("{prefix}layer{l}.filter"), &layer.filter),
                gate: b.tensor(format!("{prefix}layer{l}.gate"), &layer.gate),
                dilation: layer.dilation,
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug)]
pub struct GatedLayerVars {
    pub filter: Var,
    pub gate: Var,
    pub dilation: usize,
}

/// `Σ_s F_s ⊙ inputs[pos − dilation·s]` over positions that exist.
fn causal_sum(tape: &mut Tape, taps: &[Var], dilation: usize, inputs: &[Option<Var>], pos: usize) -> Option<Var> {
    let mut acc: Option<Var> = None;
    for (s, &tap) in taps.iter().enumerate() {
        let Some(p) = pos.checked_sub(dilation * s) else {
            break;
        };
        let Some(x) = inputs[p] else {
            continue;
        };
        let term = tape.mul_row(x, tap);
        acc = Some(match acc {
            Some(a) => tape.add(a, term),
            None => term,
        });
    }
    acc
}

fn tap_rows(tape: &mut Tape, kernel: Var) -> Vec<Var> {
    (0..tape.value(kernel).rows()).map(|s| tape.slice_row(kernel, s)).collect()
}

/// Point-valued HDCC output as a tangent vector: `log(exp(Σ F_s ⊙ x))`.
fn hdcc_tangent(tape: &mut Tape, space: Space, taps: &[Var], dilation: usize, inputs: &[Option<Var>], pos: usize, zero: Var) -> Var {
    let sum = causal_sum(tape, taps, dilation, inputs, pos).unwrap_or(zero);
    let p = space.exp(tape, sum);
    space.log(tape, p)
}

/// Hidden state for the newest position of `history` (points, oldest first).
///
/// Each layer computes `tanh(filter) ⊙ σ(gate)` in the tangent space; the
/// layer's output is added to its input (residual) and to a running skip sum
/// whose exponential map is the result. Positions before the start of
/// `history` read as zero tangent vectors.
pub fn gated_hdcc_stack_t(tape: &mut Tape, space: Space, layers: &[GatedLayerVars], history: &[Var]) -> Var {
    let w = history.len();
    assert!(w > 0, "history must hold at least one entry");
    let (n, d) = tape.value(history[0]).shape();
    let zero = tape.constant(Tensor::zeros(n, d));

    // positions each layer must produce, working back from the newest
    let mut needed = vec![vec![false; w]; layers.len() + 1];
    needed[layers.len()][w - 1] = true;
    for l in (0..layers.len()).rev() {
        needed[l][w - 1] = true;
        let taps = tape.value(layers[l].filter).rows();
        for p in 0..w {
            if needed[l + 1][p] {
                needed[l][p] = true;
                for s in 0..taps {
                    if let Some(q) = p.checked_sub(layers[l].dilation * s) {
                        needed[l][q] = true;
                    }
                }
            }
        }
    }

    let mut inputs: Vec<Option<Var>> = (0..w)
        .map(|p| needed[0][p].then(|| space.log(tape, history[p])))
        .collect();
    let mut skip: Option<Var> = None;
    for (l, layer) in layers.iter().enumerate() {
        let f_taps = tap_rows(tape, layer.filter);
        let g_taps = tap_rows(tape, layer.gate);
        let mut next: Vec<Option<Var>> = vec![None; w];
        for p in 0..w {
            if !(needed[l + 1][p] || p == w - 1) {
                continue;
            }
            let f = hdcc_tangent(tape, space, &f_taps, layer.dilation, &inputs, p, zero);
            let g = hdcc_tangent(tape, space, &g_taps, layer.dilation, &inputs, p, zero);
            let ft = tape.tanh(f);
            let gs = tape.sigmoid(g);
            let gated = tape.mul(ft, gs);
            let out_pt = space.exp(tape, gated);
            let out = space.log(tape, out_pt);
            next[p] = Some(match inputs[p] {
                Some(x) => tape.add(x, out),
                None => out,
            });
            if p == w - 1 {
                skip = Some(match skip {
                    Some(s) => tape.add(s, out),
                    None => out,
                });
            }
        }
        inputs = next;
    }
    let total = skip.unwrap_or(zero);
    space.exp(tape, total)
}

/// Softmax attention over the history entries scored by `a_hist · log(Z)`,
/// used in place of the convolution stack.
pub fn history_attention_t(tape: &mut Tape, space: Space, a_hist: Var, history: &[Var]) -> Var {
    let tangents: Vec<Var> = history.iter().map(|&h| space.log(tape, h)).collect();
    let scores: Vec<Var> = tangents.iter().map(|&t| tape.matmul_t(t, a_hist)).collect();
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
    space.exp(tape, acc.expect("nonempty history"))
}

fn single_row_history(tape: &mut Tape, history: &[PoincarePoint], first: isize, t: usize) -> Vec<Option<Var>> {
    let d = history[0].dim();
    (first..=t as isize)
        .map(|time| {
            let coords = if time < 0 {
                vec![0.0; d]
            } else {
                history[time as usize].coords().to_vec()
            };
            Some(tape.constant(Tensor::row(coords)))
        })
        .collect()
}

fn history_curvature(history: &[PoincarePoint]) -> Curvature {
    history.first().expect("nonempty history").curvature()
}

/// `exp(Σ_s F_s ⊙ log(Z_{t − dilation·s}))` for one node whose history is
/// indexed by time; times before 0 read as the origin.
pub fn hdcc_apply(history: &[PoincarePoint], kernel: &HdccKernel, t: usize) -> PoincarePoint {
    let c = history_curvature(history);
    let mut tape = Tape::new();
    let space = Space::fixed(&mut tape, c.c());
    let s = kernel.taps.rows();
    let first = t as isize - (kernel.dilation * (s - 1)) as isize;
    let points = single_row_history(&mut tape, history, first, t);
    let inputs: Vec<Option<Var>> = points.iter().map(|p| p.map(|v| space.log(&mut tape, v))).collect();
    let kv = tape.constant(kernel.taps.clone());
    let taps = tap_rows(&mut tape, kv);
    let zero = tape.constant(Tensor::zeros(1, history[0].dim()));
    let sum = causal_sum(&mut tape, &taps, kernel.dilation, &inputs, inputs.len() - 1).unwrap_or(zero);
    let out = space.exp(&mut tape, sum);
    PoincarePoint::new(tape.value(out).data().to_vec(), c).expect("finite output")
}

/// One gated layer evaluated at time `t`.
pub fn gated_hdcc_layer(history: &[PoincarePoint], filter: &Tensor, gate: &Tensor, dilation: usize, t: usize) -> PoincarePoint {
    let f = hdcc_apply(history, &HdccKernel { taps: filter.clone(), dilation }, t);
    let g = hdcc_apply(history, &HdccKernel { taps: gate.clone(), dilation }, t);
    let c = history_curvature(history);
    let mut tape = Tape::new();
    let space = Space::fixed(&mut tape, c.c());
    let fv = tape.constant(Tensor::row(f.coords().to_vec()));
    let gv = tape.constant(Tensor::row(g.coords().to_vec()));
    let ft = space.log(&mut tape, fv);
    let gt = space.log(&mut tape, gv);
    let a = tape.tanh(ft);
    let b = tape.sigmoid(gt);
    let m = tape.mul(a, b);
    let out = space.exp(&mut tape, m);
    PoincarePoint::new(tape.value(out).data().to_vec(), c).expect("finite output")
}

/// Hidden state at time `t` from the last `S^D` entries of one node's history.
pub fn gated_hdcc_stack(history: &[PoincarePoint], stack: &GatedHdccStack, t: usize) -> PoincarePoint {
    let c = history_curvature(history);
    let mut tape = Tape::new();
    let space = Space::fixed(&mut tape, c.c());
    let first = t as isize + 1 - stack.window() as isize;
    let window: Vec<Var> = single_row_history(&mut tape, history, first, t)
        .into_iter()
        .map(|v| v.unwrap())
        .collect();
    let mut b = Binder::new(&mut tape, false, false);
    let vars = stack.bind(&mut b, "");
    let h = gated_hdcc_stack_t(&mut tape, space, &vars, &window);
    PoincarePoint::new(tape.value(h).data().to_vec(), c).expect("finite output")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifold::{exp_map_origin, log_map_origin, TangentVector};

    fn pt(v: &[f64]) -> PoincarePoint {
        PoincarePoint::new(v.to_vec(), Curvature::unit()).unwrap()
    }

    fn history() -> Vec<PoincarePoint> {
        (0..10).map(|t| pt(&[0.05 * t as f64 - 0.2, 0.3 - 0.04 * t as f64])).collect()
    }

    #[test]
    fn zero_kernel_gives_origin() {
        let k = HdccKernel { taps: Tensor::zeros(2, 2), dilation: 1 };
        assert_eq!(hdcc_apply(&history(), &k, 5).coords(), &[0.0, 0.0]);
    }

    #[test]
    fn identity_tap_returns_current_entry() {
        let taps = Tensor::from_rows(&[vec![1.0, 1.0], vec![0.0, 0.0]]);
        let h = history();
        let out = hdcc_apply(&h, &HdccKernel { taps, dilation: 2 }, 6);
        for (a, b) in out.coords().iter().zip(h[6].coords()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn convex_taps_on_equal_points() {
        let h = vec![pt(&[0.5, 0.0]), pt(&[0.5, 0.0])];
        let taps = Tensor::from_rows(&[vec![0.5, 0.5], vec![0.5, 0.5]]);
        let out = hdcc_apply(&h, &HdccKernel { taps, dilation: 1 }, 1);
        assert!((out.coords()[0] - 0.5).abs() < 1e-12 && out.coords()[1].abs() < 1e-15);
    }

    #[test]
    fn gate_zero_halves_filter() {
        let h = history();
        let f = Tensor::from_rows(&[vec![0.7, -1.2], vec![0.4, 0.9]]);
        let out = gated_hdcc_layer(&h, &f, &Tensor::zeros(2, 2), 1, 4);
        let filt = hdcc_apply(&h, &HdccKernel { taps: f.clone(), dilation: 1 }, 4);
        let v: Vec<f64> = log_map_origin(&filt).coords.iter().map(|x| 0.5 * x.tanh()).collect();
        let expect = exp_map_origin(&TangentVector::new(v), Curvature::unit());
        for (a, b) in out.coords().iter().zip(expect.coords()) {
            assert!((a - b).abs() < 1e-12);
        }
        let zero = gated_hdcc_layer(&h, &Tensor::zeros(2, 2), &f, 1, 4);
        assert_eq!(zero.coords(), &[0.0, 0.0]);
    }

    #[test]
    fn zero_stack_gives_origin() {
        let stack = GatedHdccStack::zeros(2, 2, 3, 4);
        assert_eq!(stack.window(), 8);
        assert_eq!(stack.layers.iter().map(|l| l.dilation).collect::<Vec<_>>(), vec![1, 2, 4, 1]);
        let h = vec![PoincarePoint::origin(2, Curvature::unit())];
        assert_eq!(gated_hdcc_stack(&h, &stack, 0).coords(), &[0.0, 0.0]);
    }

    #[test]
    fn stack_window_bounds_influence() {
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(9);
        let stack = GatedHdccStack::init(2, 2, 3, 4, &mut rng);
        let h = history();
        let base = gated_hdcc_stack(&h, &stack, 9);
        let mut old = h.clone();
        old[1] = pt(&[-0.6, 0.6]);
        assert_eq!(gated_hdcc_stack(&old, &stack, 9).coords(), base.coords());
        let mut recent = h.clone();
        recent[2] = pt(&[-0.6, 0.6]);
        assert_ne!(gated_hdcc_stack(&recent, &stack, 9).coords(), base.coords());
        let mut now = h;
        now[9] = pt(&[-0.6, 0.6]);
        assert_ne!(gated_hdcc_stack(&now, &stack, 9).coords(), base.coords());
    }
}
