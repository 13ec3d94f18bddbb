mod common;

use hgwavenet::config::{ModelConfig, RunConfig};
use hgwavenet::graph_data::{DynamicGraph, Snapshot};
use hgwavenet::model::Model;
use hgwavenet::synthetic::{hierarchical_dynamic_graph, SyntheticConfig};
use hgwavenet::training::grad_check;
use hgwavenet::training::{average_precision, evaluate, roc_auc, roll_representations, EvalTask};
use proptest::prelude::*;

fn pair_count_auc(pos: &[f64], neg: &[f64]) -> f64 {
    let mut wins = 0.0;
    for p in pos {
        for n in neg {
            if p > n {
                wins += 1.0;
            } else if p == n {
                wins += 0.5;
            }
        }
    }
    wins / (pos.len() * neg.len()) as f64
}

fn setup() -> (Model, DynamicGraph, RunConfig) {
    let graph = hierarchical_dynamic_graph(&SyntheticConfig {
        num_nodes: 16,
        num_snapshots: 8,
        edges_per_snapshot: 24,
        split: 5,
        seed: 21,
        ..SyntheticConfig::default()
    })
    .unwrap();
    let mut cfg = RunConfig::default();
    cfg.model = ModelConfig {
        dim: 4,
        diffusion_steps: 2,
        kernel_size: 2,
        dilation_cycle: 2,
        hdcc_layers: 2,
        ..ModelConfig::default()
    };
    let model = Model::init(&cfg.model, 16, 3).unwrap();
    (model, graph, cfg)
}

fn perturb_after(graph: &DynamicGraph, t: usize) -> DynamicGraph {
    let n = graph.num_nodes();
    let snaps: Vec<Snapshot> = graph
        .snapshots()
        .iter()
        .map(|s| {
            if s.index > t {
                Snapshot::new(s.index, n, (1..n).map(|j| (0, j))).unwrap()
            } else {
                s.clone()
            }
        })
        .collect();
    DynamicGraph::new(snaps, graph.split()).unwrap()
}

#[test]
fn evaluation_leaves_model_untouched() {
    let (model, graph, cfg) = setup();
    let before = model.checksum();
    evaluate(&model, &graph, &cfg).unwrap();
    assert_eq!(model.checksum(), before);
}

#[test]
fn evaluation_is_causal() {
    let (model, graph, cfg) = setup();
    let t = 5;
    let changed = perturb_after(&graph, t);
    let a = roll_representations(&model, &graph, graph.len(), 0).unwrap();
    let b = roll_representations(&model, &changed, changed.len(), 0).unwrap();
    for k in 0..=t {
        assert_eq!(a[k], b[k], "representation {k}");
    }
    let ra = evaluate(&model, &graph, &cfg).unwrap();
    let rb = evaluate(&model, &changed, &cfg).unwrap();
    let upto = |r: &hgwavenet::training::EvalReport| {
        r.per_snapshot.iter().filter(|m| m.snapshot <= t).cloned().collect::<Vec<_>>()
    };
    assert!(!upto(&ra).is_empty());
    assert_eq!(upto(&ra), upto(&rb));
    assert_ne!(ra.per_snapshot, rb.per_snapshot);
}

#[test]
fn evaluation_is_deterministic() {
    let (model, graph, cfg) = setup();
    let a = evaluate(&model, &graph, &cfg).unwrap().without_timing();
    let b = evaluate(&model, &graph, &cfg).unwrap().without_timing();
    assert_eq!(a, b);
    let tasks: Vec<EvalTask> = a.per_snapshot.iter().map(|m| m.task).collect();
    assert!(tasks.contains(&EvalTask::Link) && tasks.contains(&EvalTask::NewLink));
    assert!(a.per_snapshot.iter().all(|m| m.snapshot >= graph.split()));
}

#[test]
fn euclidean_gradients_match_finite_differences() {
    let r = grad_check(true, None).unwrap();
    assert!(r.max_error() < 1e-4, "{:#?}", r.groups);
}

proptest! {
    #[test]
    fn auc_matches_pair_counting(
        pos in prop::collection::vec(0i32..20, 1..200),
        neg in prop::collection::vec(0i32..20, 1..200),
    ) {
        let pos: Vec<f64> = pos.into_iter().map(f64::from).collect();
        let neg: Vec<f64> = neg.into_iter().map(f64::from).collect();
        let auc = roc_auc(&pos, &neg).unwrap();
        prop_assert!((auc - pair_count_auc(&pos, &neg)).abs() < 1e-12);
    }

    #[test]
    fn ap_is_rank_invariant(
        pos in prop::collection::vec(-10i32..10, 1..100),
        neg in prop::collection::vec(-10i32..10, 1..100),
    ) {
        let f = |v: i32| {
            let x = f64::from(v);
            x * x * x + 5.0 * x
        };
        let raw_pos: Vec<f64> = pos.iter().map(|&v| f64::from(v)).collect();
        let raw_neg: Vec<f64> = neg.iter().map(|&v| f64::from(v)).collect();
        let t_pos: Vec<f64> = pos.iter().map(|&v| f(v)).collect();
        let t_neg: Vec<f64> = neg.iter().map(|&v| f(v)).collect();
        let a = average_precision(&raw_pos, &raw_neg).unwrap();
        let b = average_precision(&t_pos, &t_neg).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
        prop_assert!(a > 0.0 && a <= 1.0);
        let auc_a = roc_auc(&raw_pos, &raw_neg).unwrap();
        let auc_b = roc_auc(&t_pos, &t_neg).unwrap();
        prop_assert!((auc_a - auc_b).abs() < 1e-12);
    }
}
