//! Poincaré-ball geometry with curvature `-c`.
//!
//! All maps are taken at the origin. The slice kernels (`*_into`) are shared by
//! the typed API below and by the tape primitives, so the forward values seen
//! during training and during point-level inspection are bit-identical.
//!
//! Every operation that produces a point clamps it to the radius
//! `(1 - BALL_EPS) / sqrt(c)`; `atanh` arguments are clamped to `ATANH_MAX`.

use crate::error::{Error, Result};

/// Relative margin kept between a point and the ball boundary.
pub const BALL_EPS: f64 = 1e-5;
/// Upper clamp for `atanh` arguments.
pub const ATANH_MAX: f64 = 1.0 - 1e-15;
/// Floor added to `softplus(raw)` so that `c` never reaches zero.
pub const MIN_CURVATURE: f64 = 1e-6;

pub(crate) fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// A trainable positive curvature, stored through its softplus pre-image.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Curvature {
    raw: f64,
}

impl Curvature {
    pub fn from_raw(raw: f64) -> Self {
        Curvature { raw }
    }

    /// Curvature with `c() == value`. `value` must exceed the floor.
    pub fn from_value(value: f64) -> Result<Self> {
        if !(value.is_finite() && value > MIN_CURVATURE) {
            return Err(Error::config(
                "curvature",
                format!("must be finite and > {MIN_CURVATURE}, got {value}"),
            ));
        }
        Ok(Curvature {
            raw: raw_for_value(value),
        })
    }

    /// The unit curvature all parameters start from.
    pub fn unit() -> Self {
        Curvature {
            raw: raw_for_value(1.0),
        }
    }

    pub fn raw(&self) -> f64 {
        self.raw
    }

    pub fn c(&self) -> f64 {
        softplus(self.raw) + MIN_CURVATURE
    }
}

/// Inverse of `softplus(raw) + MIN_CURVATURE`.
pub fn raw_for_value(value: f64) -> f64 {
    let y = value - MIN_CURVATURE;
    if y > 30.0 {
        y + (-(-y).exp_m1()).ln()
    } else {
        y.exp_m1().ln()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PoincarePoint {
    coords: Vec<f64>,
    curvature: Curvature,
}

impl PoincarePoint {
    pub fn origin(dim: usize, curvature: Curvature) -> Self {
        PoincarePoint {
            coords: vec![0.0; dim],
            curvature,
        }
    }

    /// Builds a point from raw coordinates, clamping into the ball.
    pub fn new(coords: Vec<f64>, curvature: Curvature) -> Result<Self> {
        project_to_ball(&coords, curvature)
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn curvature(&self) -> Curvature {
        self.curvature
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn into_coords(self) -> Vec<f64> {
        self.coords
    }

    fn from_clamped(mut coords: Vec<f64>, curvature: Curvature) -> Self {
        let raw = coords.clone();
        project_into(&raw, curvature.c(), &mut coords);
        PoincarePoint { coords, curvature }
    }
}

impl std::ops::Neg for &PoincarePoint {
    type Output = PoincarePoint;

    fn neg(self) -> PoincarePoint {
        PoincarePoint {
            coords: self.coords.iter().map(|v| -v).collect(),
            curvature: self.curvature,
        }
    }
}

/// A vector in the tangent space at the origin.
#[derive(Clone, Debug, PartialEq)]
pub struct TangentVector {
    pub coords: Vec<f64>,
}

impl TangentVector {
    pub fn new(coords: Vec<f64>) -> Self {
        TangentVector { coords }
    }

    pub fn zeros(dim: usize) -> Self {
        TangentVector {
            coords: vec![0.0; dim],
        }
    }

    pub fn norm(&self) -> f64 {
        norm(&self.coords)
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub(crate) fn max_norm(c: f64) -> f64 {
    (1.0 - BALL_EPS) / c.sqrt()
}

pub(crate) fn clamp_atanh(z: f64) -> f64 {
    z.clamp(0.0, ATANH_MAX).atanh()
}

pub(crate) fn expmap0_into(v: &[f64], c: f64, out: &mut [f64]) {
    let sc = c.sqrt();
    let n = norm(v);
    let z = sc * n;
    let scale = if z > 0.0 { z.tanh() / z } else { 1.0 };
    for (o, x) in out.iter_mut().zip(v) {
        *o = scale * x;
    }
}

pub(crate) fn logmap0_into(y: &[f64], c: f64, out: &mut [f64]) {
    let sc = c.sqrt();
    let n = norm(y);
    let z = sc * n;
    let scale = if z > 0.0 { clamp_atanh(z) / z } else { 1.0 };
    for (o, x) in out.iter_mut().zip(y) {
        *o = scale * x;
    }
}

pub(crate) fn project_into(x: &[f64], c: f64, out: &mut [f64]) {
    let n = norm(x);
    let m = max_norm(c);
    let scale = if n > m { m / n } else { 1.0 };
    for (o, v) in out.iter_mut().zip(x) {
        *o = scale * v;
    }
}

pub(crate) fn mobius_add_into(x: &[f64], y: &[f64], c: f64, out: &mut [f64]) {
    let xy = dot(x, y);
    let xx = dot(x, x);
    let yy = dot(y, y);
    let alpha = 1.0 + 2.0 * c * xy + c * yy;
    let beta = 1.0 - c * xx;
    let den = 1.0 + 2.0 * c * xy + c * c * xx * yy;
    for ((o, a), b) in out.iter_mut().zip(x).zip(y) {
        *o = (alpha * a + beta * b) / den;
    }
}

/// `(2/sqrt c) atanh(sqrt c * |w|)` where `w = (-x) ⊕ y`.
pub(crate) fn dist_from_diff(w: &[f64], c: f64) -> f64 {
    let sc = c.sqrt();
    2.0 / sc * clamp_atanh(sc * norm(w))
}

pub(crate) fn dist_slices(x: &[f64], y: &[f64], c: f64) -> f64 {
    let neg: Vec<f64> = x.iter().map(|v| -v).collect();
    let mut w = vec![0.0; x.len()];
    mobius_add_into(&neg, y, c, &mut w);
    dist_from_diff(&w, c)
}

pub fn conformal_factor(x: &PoincarePoint) -> f64 {
    let c = x.curvature.c();
    2.0 / (1.0 - c * dot(&x.coords, &x.coords))
}

pub fn mobius_add(x: &PoincarePoint, y: &PoincarePoint) -> PoincarePoint {
    debug_assert_eq!(x.dim(), y.dim());
    let mut out = vec![0.0; x.dim()];
    mobius_add_into(&x.coords, &y.coords, x.curvature.c(), &mut out);
    PoincarePoint::from_clamped(out, x.curvature)
}

pub fn distance(x: &PoincarePoint, y: &PoincarePoint) -> f64 {
    dist_slices(&x.coords, &y.coords, x.curvature.c())
}

pub fn exp_map_origin(v: &TangentVector, curvature: Curvature) -> PoincarePoint {
    let mut out = vec![0.0; v.coords.len()];
    expmap0_into(&v.coords, curvature.c(), &mut out);
    PoincarePoint::from_clamped(out, curvature)
}

pub fn log_map_origin(y: &PoincarePoint) -> TangentVector {
    let mut out = vec![0.0; y.dim()];
    logmap0_into(&y.coords, y.curvature.c(), &mut out);
    TangentVector { coords: out }
}

/// `M ⊗ x = exp_o(M log_o(x))` for a row-major `d × d` matrix.
pub fn mobius_matvec(matrix: &[f64], x: &PoincarePoint) -> PoincarePoint {
    let d = x.dim();
    assert_eq!(matrix.len(), d * d, "matrix must be d x d");
    let u = log_map_origin(x);
    let mu: Vec<f64> = matrix.chunks(d).map(|row| dot(row, &u.coords)).collect();
    exp_map_origin(&TangentVector { coords: mu }, x.curvature)
}

/// Rescales `x` onto the clamp radius when it lies outside it.
pub fn project_to_ball(x: &[f64], curvature: Curvature) -> Result<PoincarePoint> {
    if let Some(bad) = x.iter().find(|v| !v.is_finite()) {
        return Err(Error::Divergence(format!(
            "non-finite coordinate {bad} reached the ball projection"
        )));
    }
    let mut coords = vec![0.0; x.len()];
    project_into(x, curvature.c(), &mut coords);
    Ok(PoincarePoint { coords, curvature })
}
