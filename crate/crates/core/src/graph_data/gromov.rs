use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Snapshot;

/// Undirected neighbor lists of a snapshot.
fn adjacency_lists(s: &Snapshot) -> Vec<Vec<usize>> {
    let mut adj = vec![Vec::new(); s.num_nodes()];
    for (i, j) in s.undirected_edges() {
        adj[i].push(j);
        adj[j].push(i);
    }
    adj
}

/// Hop distances from `source`; `usize::MAX` marks unreachable nodes.
pub fn bfs_distances(adj: &[Vec<usize>], source: usize) -> Vec<usize> {
    let mut dist = vec![usize::MAX; adj.len()];
    let mut queue = VecDeque::from([source]);
    dist[source] = 0;
    while let Some(u) = queue.pop_front() {
        for &v in &adj[u] {
            if dist[v] == usize::MAX {
                dist[v] = dist[u] + 1;
                queue.push_back(v);
            }
        }
    }
    dist
}

/// Nodes of the largest connected component of the undirected graph, sorted.
/// Ties go to the component containing the smallest node id.
pub fn largest_component(s: &Snapshot) -> Vec<usize> {
    let adj = adjacency_lists(s);
    let mut seen = vec![false; adj.len()];
    let mut best: Vec<usize> = Vec::new();
    for start in 0..adj.len() {
        if seen[start] {
            continue;
        }
        let d = bfs_distances(&adj, start);
        let comp: Vec<usize> = (0..adj.len()).filter(|&v| d[v] != usize::MAX).collect();
        for &v in &comp {
            seen[v] = true;
        }
        if comp.len() > best.len() {
            best = comp;
        }
    }
    best
}

fn binomial4(n: usize) -> u128 {
    if n < 4 {
        return 0;
    }
    let n = n as u128;
    n * (n - 1) * (n - 2) * (n - 3) / 24
}

fn four_point(d: &[Vec<u32>], w: usize, x: usize, y: usize, z: usize) -> u32 {
    let mut s = [d[w][x] + d[y][z], d[w][y] + d[x][z], d[w][z] + d[x][y]];
    s.sort_unstable();
    // half of (largest - second largest), stored doubled
    s[2] - s[1]
}

/// Four-point Gromov δ on the largest connected component.
///
/// Exhaustive over all quadruples when there are at most `num_quadruples` of
/// them; otherwise the maximum over the first `num_quadruples` quadruples drawn
/// from a generator seeded with `seed`, so larger budgets extend smaller ones.
pub fn gromov_delta_estimate(s: &Snapshot, num_quadruples: u64, seed: u64) -> f64 {
    let comp = largest_component(s);
    let n = comp.len();
    if n < 4 {
        log::warn!("largest component has {n} nodes; gromov delta reported as 0");
        return 0.0;
    }
    let adj = adjacency_lists(s);
    let d: Vec<Vec<u32>> = comp
        .iter()
        .map(|&u| {
            let full = bfs_distances(&adj, u);
            comp.iter().map(|&v| full[v] as u32).collect()
        })
        .collect();
    let mut best = 0u32;
    if binomial4(n) <= num_quadruples as u128 {
        for w in 0..n {
            for x in w + 1..n {
                for y in x + 1..n {
                    for z in y + 1..n {
                        best = best.max(four_point(&d, w, x, y, z));
                    }
                }
            }
        }
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..num_quadruples {
            let q = distinct4(&mut rng, n);
            best = best.max(four_point(&d, q[0], q[1], q[2], q[3]));
        }
    }
    best as f64 / 2.0
}

fn distinct4<R: Rng>(rng: &mut R, n: usize) -> [usize; 4] {
    let mut q = [0usize; 4];
    let mut k = 0;
    while k < 4 {
        let v = rng.random_range(0..n);
        if !q[..k].contains(&v) {
            q[k] = v;
            k += 1;
        }
    }
    q
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tree_has_zero_delta() {
        let s = Snapshot::new(0, 7, [(0, 1), (0, 2), (1, 3), (1, 4), (2, 5), (2, 6)]).unwrap();
        assert_eq!(gromov_delta_estimate(&s, 1_000_000, 0), 0.0);
    }

    #[test]
    fn four_cycle_has_unit_delta() {
        let s = Snapshot::new(0, 4, [(0, 1), (1, 2), (2, 3), (3, 0)]).unwrap();
        assert_eq!(gromov_delta_estimate(&s, 1_000_000, 0), 1.0);
    }

    #[test]
    fn tiny_component_is_zero() {
        let s = Snapshot::new(0, 6, [(0, 1), (1, 2), (3, 4)]).unwrap();
        assert_eq!(gromov_delta_estimate(&s, 10, 0), 0.0);
    }

    #[test]
    fn component_selection() {
        let s = Snapshot::new(0, 7, [(0, 1), (2, 3), (3, 4), (4, 5)]).unwrap();
        assert_eq!(largest_component(&s), vec![2, 3, 4, 5]);
    }
}
