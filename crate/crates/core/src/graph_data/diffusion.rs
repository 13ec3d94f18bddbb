use std::sync::Arc;

use super::Snapshot;
use crate::error::{Error, Result};
use crate::sparse::CsrMatrix;
use crate::tensor::Tensor;

/// Powers `A⁰ … A^K` of a snapshot's normalized adjacency.
#[derive(Clone, Debug)]
pub struct DiffusionStack {
    powers: Vec<Arc<CsrMatrix>>,
}

impl DiffusionStack {
    pub fn k(&self) -> usize {
        self.powers.len() - 1
    }

    pub fn power(&self, k: usize) -> &Arc<CsrMatrix> {
        &self.powers[k]
    }

    pub fn powers(&self) -> &[Arc<CsrMatrix>] {
        &self.powers
    }

    pub fn num_nodes(&self) -> usize {
        self.powers[0].n_rows()
    }
}

/// Row-normalized symmetric adjacency with self-loops.
pub fn normalized_adjacency(s: &Snapshot) -> CsrMatrix {
    let n = s.num_nodes();
    let mut triplets: Vec<(usize, usize, f64)> = (0..n).map(|i| (i, i, 1.0)).collect();
    for (i, j) in s.undirected_edges() {
        triplets.push((i, j, 1.0));
        triplets.push((j, i, 1.0));
    }
    let pattern = CsrMatrix::from_triplets(n, n, &triplets);
    let sums = pattern.row_sums();
    let scaled: Vec<(usize, usize, f64)> = (0..n)
        .flat_map(|i| {
            let (cols, _) = pattern.row(i);
            let d = sums[i];
            cols.iter().map(move |&j| (i, j, 1.0 / d)).collect::<Vec<_>>()
        })
        .collect();
    CsrMatrix::from_triplets(n, n, &scaled)
}

pub fn build_diffusion_stack(s: &Snapshot, k: usize) -> Result<DiffusionStack> {
    if k < 1 {
        return Err(Error::config("K", "diffusion step must be at least 1"));
    }
    let a = normalized_adjacency(s);
    let mut powers = vec![Arc::new(CsrMatrix::identity(s.num_nodes())), Arc::new(a.clone())];
    for _ in 2..=k {
        let next = powers.last().unwrap().matmul(&a);
        powers.push(Arc::new(next));
    }
    Ok(DiffusionStack { powers })
}

/// `Σ_{k=0}^{K} α(1−α)ᵏ Aᵏ` for a dense row-stochastic `A`.
///
/// The model learns its own per-step weights; this closed form serves as a
/// reference for the random-walk interpretation of the powers.
pub fn stationary_truncation(a: &Tensor, alpha: f64, k: usize) -> Tensor {
    let n = a.rows();
    assert_eq!(n, a.cols(), "stationary_truncation needs a square matrix");
    let mut out = Tensor::zeros(n, n);
    let mut power = Tensor::identity(n);
    let mut weight = alpha;
    for step in 0..=k {
        for (o, p) in out.data_mut().iter_mut().zip(power.data()) {
            *o += weight * p;
        }
        if step < k {
            // power · A, via A's transpose rows
            let at = transpose(a);
            power = power.matmul_t(&at);
            weight *= 1.0 - alpha;
        }
    }
    out
}

fn transpose(a: &Tensor) -> Tensor {
    let mut t = Tensor::zeros(a.cols(), a.rows());
    for i in 0..a.rows() {
        for j in 0..a.cols() {
            t.set(j, i, a.get(i, j));
        }
    }
    t
}
