use std::collections::BTreeMap;

use serde::Serialize;

use super::{named_gradients, sequence_loss};
use crate::config::{ModelConfig, RunConfig};
use crate::error::Result;
use crate::graph_data::DynamicGraph;
use crate::model::Model;
use crate::synthetic::{hierarchical_dynamic_graph, SyntheticConfig};
use crate::tape::{Primitive, Tape};
use crate::tensor::Tensor;

/// Central-difference step.
pub const GRADCHECK_STEP: f64 = 1e-5;
/// A group above this error fails the check.
pub const GRADCHECK_TOLERANCE: f64 = 1e-3;

/// Agreement between analytic and finite-difference gradients for one
/// parameter tensor: `‖g − ĝ‖ / max(‖ĝ‖, 1e-8)`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GroupError {
    pub name: String,
    pub size: usize,
    pub rel_error: f64,
    pub analytic_norm: f64,
    pub fd_norm: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub groups: Vec<GroupError>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn max_error(&self) -> f64 {
        self.groups.iter().map(|g| g.rel_error).fold(0.0, f64::max)
    }

    /// Names of groups whose error is not below `tol`.
    pub fn failing(&self, tol: f64) -> Vec<&str> {
        self.groups
            .iter()
            .filter(|g| !(g.rel_error < tol))
            .map(|g| g.name.as_str())
            .collect()
    }

    pub fn passed(&self) -> bool {
        self.failing(self.tolerance).is_empty()
    }
}

/// Compares `analytic` against central differences of `loss` around `params`.
pub fn finite_difference_check<F>(
    params: &[(String, Tensor)],
    analytic: &BTreeMap<String, Tensor>,
    mut loss: F,
) -> Result<GradCheckReport>
where
    F: FnMut(&[(String, Tensor)]) -> Result<f64>,
{
    let mut work: Vec<(String, Tensor)> = params.to_vec();
    let mut groups = Vec::with_capacity(params.len());
    for g in 0..work.len() {
        let (rows, cols) = work[g].1.shape();
        let mut fd = Tensor::zeros(rows, cols);
        for i in 0..fd.len() {
            let orig = work[g].1.data()[i];
            work[g].1.data_mut()[i] = orig + GRADCHECK_STEP;
            let up = loss(&work)?;
            work[g].1.data_mut()[i] = orig - GRADCHECK_STEP;
            let down = loss(&work)?;
            work[g].1.data_mut()[i] = orig;
            fd.data_mut()[i] = (up - down) / (2.0 * GRADCHECK_STEP);
        }
        let name = work[g].0.clone();
        let an = analytic.get(&name).cloned().unwrap_or_else(|| Tensor::zeros(rows, cols));
        let diff: f64 = an
            .data()
            .iter()
            .zip(fd.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let fd_norm = fd.frobenius();
        groups.push(GroupError {
            name,
            size: fd.len(),
            rel_error: diff / fd_norm.max(1e-8),
            analytic_norm: an.frobenius(),
            fd_norm,
        });
    }
    Ok(GradCheckReport {
        groups,
        tolerance: GRADCHECK_TOLERANCE,
    })
}

fn model_loss(model: &Model, graph: &DynamicGraph, config: &RunConfig, tape: &mut Tape, trainable: bool) -> Result<(crate::model::BoundModel, crate::tape::Var)> {
    let ops = model.operators(graph)?;
    let bound = model.bind(tape, trainable);
    let mut buffer = model.new_buffer(config.train.seed_init);
    let l = sequence_loss(model, tape, &bound, &ops, graph, config, &mut buffer, 1..graph.len(), None, 0)?;
    Ok((bound, l.total))
}

/// Checks every parameter tensor of `model` on the loss over all snapshots of
/// `graph`. `corrupt` scales one primitive's adjoint, as a negative control.
pub fn model_grad_check(
    model: &Model,
    graph: &DynamicGraph,
    config: &RunConfig,
    corrupt: Option<(Primitive, f64)>,
) -> Result<GradCheckReport> {
    let mut tape = Tape::new();
    if let Some((p, factor)) = corrupt {
        tape.registry_mut().corrupt(p, factor);
    }
    let (bound, loss) = model_loss(model, graph, config, &mut tape, true)?;
    let analytic = named_gradients(&tape, &bound, loss)?;
    let params: Vec<(String, Tensor)> = model
        .params()
        .named()
        .into_iter()
        .map(|(n, t)| (n, t.clone()))
        .collect();
    let mut probe = model.clone();
    finite_difference_check(&params, &analytic, |values| {
        for ((_, slot), (_, v)) in probe.params_mut().named_mut().into_iter().zip(values) {
            slot.data_mut().copy_from_slice(v.data());
        }
        let mut tape = Tape::new();
        let (_, loss) = model_loss(&probe, graph, config, &mut tape, false)?;
        Ok(tape.value(loss).item())
    })
}

/// Factor applied to the initial embeddings of the standard fixture.
pub const FIXTURE_EMBEDDING_SCALE: f64 = 5.0;

/// Configuration of the standard check: `d=4, K=1, S=2, D=2, D′=2`.
pub fn fixture_config(euclidean: bool) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.model = ModelConfig {
        dim: 4,
        diffusion_steps: 1,
        kernel_size: 2,
        dilation_cycle: 2,
        hdcc_layers: 2,
        euclidean,
        ..ModelConfig::default()
    };
    cfg.data.snapshots = 3;
    cfg
}

/// The standard check: 10 nodes, 3 snapshots.
pub fn standard_fixture(euclidean: bool) -> Result<(Model, DynamicGraph, RunConfig)> {
    let cfg = fixture_config(euclidean);
    let graph = hierarchical_dynamic_graph(&SyntheticConfig {
        num_nodes: 10,
        num_snapshots: 3,
        edges_per_snapshot: 12,
        split: 2,
        seed: 11,
        ..SyntheticConfig::default()
    })?;
    let mut model = Model::init(&cfg.model, graph.num_nodes(), cfg.train.seed_init)?;
    // Near the origin curvature barely moves the loss, leaving curvature
    // gradients under the finite-difference noise floor.
    let emb = &mut model.params_mut().embeddings;
    *emb = emb.map(|v| v * FIXTURE_EMBEDDING_SCALE);
    Ok((model, graph, cfg))
}

/// Gradient check on the standard fixture.
pub fn grad_check(euclidean: bool, corrupt: Option<(Primitive, f64)>) -> Result<GradCheckReport> {
    let (model, graph, cfg) = standard_fixture(euclidean)?;
    model_grad_check(&model, &graph, &cfg, corrupt)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_parameter_set_passes() {
        let r = finite_difference_check(&[], &BTreeMap::new(), |_| Ok(1.0)).unwrap();
        assert!(r.groups.is_empty() && r.passed());
    }

    #[test]
    fn quadratic_gradient() {
        let p = vec![("x".to_string(), Tensor::from_vec(1, 2, vec![1.0, -3.0]))];
        let an = BTreeMap::from([("x".to_string(), Tensor::from_vec(1, 2, vec![2.0, -6.0]))]);
        let r = finite_difference_check(&p, &an, |v| Ok(v[0].1.data().iter().map(|x| x * x).sum())).unwrap();
        assert!(r.max_error() < 1e-8);
        let wrong = BTreeMap::from([("x".to_string(), Tensor::from_vec(1, 2, vec![2.0, 6.0]))]);
        let r = finite_difference_check(&p, &wrong, |v| Ok(v[0].1.data().iter().map(|x| x * x).sum())).unwrap();
        assert_eq!(r.failing(1e-3), vec!["x"]);
    }

    #[test]
    fn standard_fixture_passes() {
        let r = grad_check(false, None).unwrap();
        assert!(r.max_error() < 1e-4, "{:#?}", r.groups);
    }

    #[test]
    fn euclidean_fixture_passes() {
        let r = grad_check(true, None).unwrap();
        for g in r.groups.iter().filter(|g| g.name.ends_with("curvature")) {
            assert_eq!((g.fd_norm, g.analytic_norm), (0.0, 0.0), "{}", g.name);
        }
        assert!(r.max_error() < 1e-4, "{:#?}", r.groups);
    }

    #[test]
    fn corruption_detected() {
        let r = grad_check(false, Some((Primitive::MobiusAdd, 1.5))).unwrap();
        assert!(!r.passed());
    }
}
