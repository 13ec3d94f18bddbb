//! Shared fixtures and an independent dense implementation of the diffusion
//! graph convolution, written with plain loops over `Vec<Vec<f64>>`.

#![allow(dead_code)]

use hgwavenet::graph_data::Snapshot;
use hgwavenet::layers::HdgcLayerParams;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Mat = Vec<Vec<f64>>;

const BALL_EPS: f64 = 1e-5;
const ATANH_MAX: f64 = 1.0 - 1e-15;
const SLOPE: f64 = 0.2;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Erdős–Rényi snapshot on `n` nodes with edge probability `p`.
pub fn random_snapshot(n: usize, p: f64, rng: &mut impl Rng) -> Snapshot {
    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            if rng.random_bool(p) {
                edges.push((i, j));
            }
        }
    }
    Snapshot::new(0, n, edges).unwrap()
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

pub fn curvature_from_raw(raw: f64) -> f64 {
    softplus(raw) + 1e-6
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for k in 0..a.len() {
        s += a[k] * b[k];
    }
    s
}

pub fn expmap(v: &[f64], c: f64) -> Vec<f64> {
    let z = c.sqrt() * norm(v);
    let scale = if z > 0.0 { z.tanh() / z } else { 1.0 };
    let mut out: Vec<f64> = v.iter().map(|x| x * scale).collect();
    let n = norm(&out);
    let max = (1.0 - BALL_EPS) / c.sqrt();
    if n > max {
        for x in out.iter_mut() {
            *x *= max / n;
        }
    }
    out
}

pub fn logmap(y: &[f64], c: f64) -> Vec<f64> {
    let z = c.sqrt() * norm(y);
    let scale = if z > 0.0 { z.min(ATANH_MAX).atanh() / z } else { 1.0 };
    y.iter().map(|x| x * scale).collect()
}

fn project(x: Vec<f64>, c: f64) -> Vec<f64> {
    let n = norm(&x);
    let max = (1.0 - BALL_EPS) / c.sqrt();
    if n > max {
        x.iter().map(|v| v * max / n).collect()
    } else {
        x
    }
}

pub fn mobius_add(x: &[f64], y: &[f64], c: f64) -> Vec<f64> {
    let xy = dot(x, y);
    let xx = dot(x, x);
    let yy = dot(y, y);
    let den = 1.0 + 2.0 * c * xy + c * c * xx * yy;
    (0..x.len())
        .map(|k| ((1.0 + 2.0 * c * xy + c * yy) * x[k] + (1.0 - c * xx) * y[k]) / den)
        .collect()
}

/// Row-normalized `A + I` over the undirected edges.
pub fn dense_adjacency(s: &Snapshot) -> Mat {
    let n = s.num_nodes();
    let mut a = vec![vec![0.0; n]; n];
    for i in 0..n {
        a[i][i] = 1.0;
    }
    for &(i, j) in s.edges() {
        a[i][j] = 1.0;
        a[j][i] = 1.0;
    }
    for row in a.iter_mut() {
        let total: f64 = row.iter().sum();
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    a
}

pub fn dense_matmul(a: &Mat, b: &Mat) -> Mat {
    let n = a.len();
    let m = b[0].len();
    let mut out = vec![vec![0.0; m]; n];
    for i in 0..n {
        for k in 0..b.len() {
            for j in 0..m {
                out[i][j] += a[i][k] * b[k][j];
            }
        }
    }
    out
}

/// `[I, A, A², …, A^k]`.
pub fn dense_powers(s: &Snapshot, k: usize) -> Vec<Mat> {
    let n = s.num_nodes();
    let a = dense_adjacency(s);
    let mut id = vec![vec![0.0; n]; n];
    for (i, row) in id.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    let mut out = vec![id];
    for _ in 0..k {
        let next = dense_matmul(out.last().unwrap(), &a);
        out.push(next);
    }
    out
}

fn leaky(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        SLOPE * x
    }
}

fn oracle_step(adj: &Mat, x: &Mat, c_in: f64, layer: &HdgcLayerParams, k: usize) -> Mat {
    let step = &layer.steps[k];
    let c = curvature_from_raw(step.raw_curvature.item());
    let n = x.len();
    let d = x[0].len();
    let w = &step.weight;
    let bias_point = expmap(step.bias.data(), c);
    let a = layer.a_nbr.data();
    // linear map, computed per node
    let mut h = Vec::with_capacity(n);
    for row in x {
        let xk = expmap(&logmap(row, c_in), c);
        let u = logmap(&xk, c);
        let mut wu = vec![0.0; d];
        for r in 0..d {
            for q in 0..d {
                wu[r] += w.get(r, q) * u[q];
            }
        }
        let m = expmap(&wu, c);
        h.push(project(mobius_add(&m, &bias_point, c), c));
    }
    // attention over the nonzero pattern of `adj`
    let u: Mat = h.iter().map(|p| logmap(p, c)).collect();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut scores = Vec::new();
        for j in 0..n {
            if adj[i][j] != 0.0 {
                scores.push((j, leaky(dot(&a[..d], &u[i]) + dot(&a[d..], &u[j]))));
            }
        }
        let max = scores.iter().map(|s| s.1).fold(f64::NEG_INFINITY, f64::max);
        let mut weights: Vec<(usize, f64)> = scores.iter().map(|&(j, e)| (j, adj[i][j] * (e - max).exp())).collect();
        let total: f64 = weights.iter().map(|w| w.1).sum();
        for w in weights.iter_mut() {
            w.1 /= total;
        }
        let mut agg = vec![0.0; d];
        for &(j, wij) in &weights {
            for q in 0..d {
                agg[q] += wij * u[j][q];
            }
        }
        let p = expmap(&agg, c);
        let act: Vec<f64> = logmap(&p, c).into_iter().map(leaky).collect();
        out.push(expmap(&act, c));
    }
    out
}

/// Dense evaluation of the stacked diffusion graph convolution; every layer
/// maps into the unit ball.
pub fn dense_hdgc_forward(s: &Snapshot, x: &Mat, c_in: f64, layers: &[HdgcLayerParams]) -> Mat {
    let max_k = layers.iter().map(|l| l.steps.len()).max().unwrap_or(1) - 1;
    let powers = dense_powers(s, max_k.max(1));
    let mut h = x.clone();
    let mut c_prev = c_in;
    for layer in layers {
        let n = h.len();
        let d = h[0].len();
        let tangents: Vec<Mat> = (0..layer.steps.len())
            .map(|k| {
                let c = curvature_from_raw(layer.steps[k].raw_curvature.item());
                oracle_step(&powers[k], &h, c_prev, layer, k)
                    .iter()
                    .map(|p| logmap(p, c))
                    .collect()
            })
            .collect();
        let mut next = Vec::with_capacity(n);
        for i in 0..n {
            let scores: Vec<f64> = tangents.iter().map(|t| dot(&t[i], layer.a_step.data())).collect();
            let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
            let total: f64 = exps.iter().sum();
            let mut fused = vec![0.0; d];
            for (k, t) in tangents.iter().enumerate() {
                for q in 0..d {
                    fused[q] += exps[k] / total * t[i][q];
                }
            }
            next.push(expmap(&fused, 1.0));
        }
        h = next;
        c_prev = 1.0;
    }
    h
}

pub fn max_abs_diff(a: &Mat, b: &Mat) -> f64 {
    let mut m: f64 = 0.0;
    for (ra, rb) in a.iter().zip(b) {
        for (x, y) in ra.iter().zip(rb) {
            m = m.max((x - y).abs());
        }
    }
    m
}
