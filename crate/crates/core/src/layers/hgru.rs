use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{xavier, Binder, Space};
use crate::manifold::{raw_for_value, Curvature, PoincarePoint};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// GRU weights acting on origin tangent vectors. `w_*` multiply the input,
/// `u_*` the previous hidden state; biases are `1 × d` rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HgruParams {
    pub w_z: Tensor,
    pub u_z: Tensor,
    pub b_z: Tensor,
    pub w_r: Tensor,
    pub u_r: Tensor,
    pub b_r: Tensor,
    pub w_h: Tensor,
    pub u_h: Tensor,
    pub b_h: Tensor,
    pub raw_curvature: Tensor,
}

impl HgruParams {
    pub fn init<R: Rng>(d: usize, rng: &mut R) -> Self {
        HgruParams {
            w_z: xavier(d, d, rng),
            u_z: xavier(d, d, rng),
            b_z: Tensor::zeros(1, d),
            w_r: xavier(d, d, rng),
            u_r: xavier(d, d, rng),
            b_r: Tensor::zeros(1, d),
            w_h: xavier(d, d, rng),
            u_h: xavier(d, d, rng),
            b_h: Tensor::zeros(1, d),
            raw_curvature: Tensor::scalar(raw_for_value(1.0)),
        }
    }

    pub fn zeros(d: usize) -> Self {
        HgruParams {
            w_z: Tensor::zeros(d, d),
            u_z: Tensor::zeros(d, d),
            b_z: Tensor::zeros(1, d),
            w_r: Tensor::zeros(d, d),
            u_r: Tensor::zeros(d, d),
            b_r: Tensor::zeros(1, d),
            w_h: Tensor::zeros(d, d),
            u_h: Tensor::zeros(d, d),
            b_h: Tensor::zeros(1, d),
            raw_curvature: Tensor::scalar(raw_for_value(1.0)),
        }
    }

    pub fn curvature(&self) -> Curvature {
        Curvature::from_raw(self.raw_curvature.item())
    }

    fn fields(&self) -> [(&'static str, &Tensor); 9] {
        [
            ("w_z", &self.w_z),
            ("u_z", &self.u_z),
            ("b_z", &self.b_z),
            ("w_r", &self.w_r),
            ("u_r", &self.u_r),
            ("b_r", &self.b_r),
            ("w_h", &self.w_h),
            ("u_h", &self.u_h),
            ("b_h", &self.b_h),
        ]
    }

    pub fn visit<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Tensor)>) {
        for (name, t) in self.fields() {
            out.push((format!("{prefix}{name}"), t));
        }
        out.push((format!("{prefix}curvature"), &self.raw_curvature));
    }

    pub fn visit_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor)>) {
        let HgruParams {
            w_z,
            u_z,
            b_z,
            w_r,
            u_r,
            b_r,
            w_h,
            u_h,
            b_h,
            raw_curvature,
        } = self;
        let named: [(&str, &'a mut Tensor); 10] = [
            ("w_z", w_z),
            ("u_z", u_z),
            ("b_z", b_z),
            ("w_r", w_r),
            ("u_r", u_r),
            ("b_r", b_r),
            ("w_h", w_h),
            ("u_h", u_h),
            ("b_h", b_h),
            ("curvature", raw_curvature),
        ];
        for (name, t) in named {
            out.push((format!("{prefix}{name}"), t));
        }
    }

    /// Binds the weights; the returned space is the ball of the cell's output.
    pub fn bind(&self, b: &mut Binder, prefix: &str) -> (HgruVars, Space) {
        let v: Vec<Var> = self
            .fields()
            .iter()
            .map(|(name, t)| b.tensor(format!("{prefix}{name}"), t))
            .collect();
        let space = b.curvature(format!("{prefix}curvature"), &self.raw_curvature);
        let vars = HgruVars {
            w_z: v[0],
            u_z: v[1],
            b_z: v[2],
            w_r: v[3],
            u_r: v[4],
            b_r: v[5],
            w_h: v[6],
            u_h: v[7],
            b_h: v[8],
        };
        (vars, space)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct HgruVars {
    pub w_z: Var,
    pub u_z: Var,
    pub b_z: Var,
    pub w_r: Var,
    pub u_r: Var,
    pub b_r: Var,
    pub w_h: Var,
    pub u_h: Var,
    pub b_h: Var,
}

fn affine(tape: &mut Tape, w: Var, x: Var, u: Var, h: Var, b: Var) -> Var {
    let wx = tape.matmul_t(x, w);
    let uh = tape.matmul_t(h, u);
    let s = tape.add(wx, uh);
    tape.add_row(s, b)
}

/// GRU update in the origin tangent space; `x` lives in `x_space`, `h` in
/// `h_space`, and the new state is mapped into `out`.
pub fn hgru_t(tape: &mut Tape, p: &HgruVars, x_space: Space, h_space: Space, out: Space, x: Var, h: Var) -> Var {
    let u = x_space.log(tape, x);
    let hv = h_space.log(tape, h);
    let za = affine(tape, p.w_z, u, p.u_z, hv, p.b_z);
    let z = tape.sigmoid(za);
    let ra = affine(tape, p.w_r, u, p.u_r, hv, p.b_r);
    let r = tape.sigmoid(ra);
    let rh = tape.mul(r, hv);
    let ca = affine(tape, p.w_h, u, p.u_h, rh, p.b_h);
    let cand = tape.tanh(ca);
    // (1 − z) ⊙ h + z ⊙ h̃ = h + z ⊙ (h̃ − h)
    let diff = tape.sub(cand, hv);
    let step = tape.mul(z, diff);
    let next = tape.add(hv, step);
    out.exp(tape, next)
}

/// One cell update for a single node.
pub fn hgru_cell(x: &PoincarePoint, h_prev: &PoincarePoint, params: &HgruParams) -> PoincarePoint {
    let mut tape = Tape::new();
    let xs = Space::fixed(&mut tape, x.curvature().c());
    let hs = Space::fixed(&mut tape, h_prev.curvature().c());
    let xv = tape.constant(Tensor::row(x.coords().to_vec()));
    let hv = tape.constant(Tensor::row(h_prev.coords().to_vec()));
    let mut b = Binder::new(&mut tape, false, false);
    let (vars, out) = params.bind(&mut b, "");
    let z = hgru_t(&mut tape, &vars, xs, hs, out, xv, hv);
    PoincarePoint::new(tape.value(z).data().to_vec(), params.curvature()).expect("finite output")
}
