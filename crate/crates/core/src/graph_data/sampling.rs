use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Snapshot;
use crate::error::{Error, Result};

/// Rejection budget per requested negative.
pub const MAX_REJECTIONS_PER_SAMPLE: usize = 1000;

/// Positive edges of a snapshot paired with as many sampled non-edges.
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeSampleBatch {
    pub positives: Vec<(usize, usize)>,
    pub negatives: Vec<(usize, usize)>,
    pub seed: u64,
}

/// Uniform rejection sampling of ordered pairs `(i, j)`, `i ≠ j`, such that
/// neither orientation appears in `exclude`.
pub fn sample_negative_pairs<R: Rng>(exclude: &Snapshot, count: usize, rng: &mut R) -> Result<Vec<(usize, usize)>> {
    let n = exclude.num_nodes();
    let capacity = (n * n).saturating_sub(exclude.num_edges() + n);
    if count > capacity {
        return Err(Error::SamplingInfeasible(format!(
            "{count} negatives requested but at most {capacity} non-edges exist"
        )));
    }
    let mut out = Vec::with_capacity(count);
    let budget = MAX_REJECTIONS_PER_SAMPLE * count.max(1);
    let mut rejections = 0;
    while out.len() < count {
        let i = rng.random_range(0..n);
        let j = rng.random_range(0..n);
        if i == j || exclude.connects(i, j) {
            rejections += 1;
            if rejections > budget {
                return Err(Error::SamplingInfeasible(format!(
                    "more than {budget} rejections while drawing {count} negatives"
                )));
            }
            continue;
        }
        out.push((i, j));
    }
    Ok(out)
}

/// One negative per positive edge of `s`, deterministic in `seed`.
pub fn sample_negative_edges(s: &Snapshot, count: usize, seed: u64) -> Result<EdgeSampleBatch> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let negatives = sample_negative_pairs(s, count, &mut rng)?;
    Ok(EdgeSampleBatch {
        positives: s.edges().to_vec(),
        negatives,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn only_candidate_pair() {
        let s = Snapshot::new(0, 2, []).unwrap();
        let b = sample_negative_edges(&s, 1, 3).unwrap();
        assert!(b.negatives == vec![(0, 1)] || b.negatives == vec![(1, 0)]);
    }

    #[test]
    fn complete_triangle_is_infeasible() {
        let s = Snapshot::new(0, 3, [(0, 1), (1, 2), (0, 2)]).unwrap();
        assert!(matches!(
            sample_negative_edges(&s, 1, 0),
            Err(Error::SamplingInfeasible(_))
        ));
    }

    #[test]
    fn deterministic_and_disjoint() {
        let s = Snapshot::new(0, 30, (0..29).map(|i| (i, i + 1))).unwrap();
        let a = sample_negative_edges(&s, s.num_edges(), 11).unwrap();
        let b = sample_negative_edges(&s, s.num_edges(), 11).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.negatives.len(), a.positives.len());
        assert!(a.negatives.iter().all(|&(i, j)| i != j && !s.connects(i, j)));
    }
}
