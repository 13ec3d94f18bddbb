//! The full network: per snapshot, node embeddings pass through the diffusion
//! graph convolution, the temporal stack summarizes earlier outputs, and a
//! GRU cell merges both into the next node representations. Also hosts the
//! Fermi-Dirac decoder, the loss terms and checkpoint I/O.

use std::collections::hash_map::DefaultHasher;
use std::collections::{BTreeMap, VecDeque};
use std::hash::{Hash, Hasher};
use std::path::Path;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ModelConfig, Padding, RunConfig};
use crate::error::{Error, Result};
use crate::graph_data::{build_diffusion_stack, DynamicGraph, EdgeSampleBatch};
use crate::layers::{
    gated_hdcc_stack_t, hdgc_forward_t, hgru_t, history_attention_t, normal, xavier, Binder, GatedHdccStack,
    GatedLayerVars, HdgcLayerParams, HdgcLayerVars, HgruParams, HgruVars, Space,
};
use crate::manifold::{self, sigmoid, Curvature, PoincarePoint, MIN_CURVATURE};
use crate::sparse::CsrMatrix;
use crate::tape::{Tape, Var, PROB_CLAMP};
use crate::tensor::Tensor;

/// Standard deviation of the initial tangent-space node embeddings.
pub const EMBEDDING_INIT_STD: f64 = 0.1;
/// Standard deviation of tangent vectors used for random history padding.
pub const PADDING_STD: f64 = 0.1;

const CHECKPOINT_FORMAT: &str = "hgwavenet-checkpoint-v1";
const PADDING_SEED_OFFSET: u64 = 0x9E37_79B9_7F4A_7C15;

/// Every trainable tensor of the network.
#[derive(Clone, Debug, PartialEq)]
pub struct HGWaveNetParams {
    /// `N × d` tangent vectors at the origin, mapped onto the ball per pass.
    pub embeddings: Tensor,
    pub hdgc: Vec<HdgcLayerParams>,
    /// The gated convolution stack; absent when replaced by history attention.
    pub temporal: Option<GatedHdccStack>,
    /// Scoring vector for history attention pooling.
    pub history_attention: Option<Tensor>,
    pub hgru: HgruParams,
}

impl HGWaveNetParams {
    pub fn named(&self) -> Vec<(String, &Tensor)> {
        let mut out = vec![("embeddings".to_string(), &self.embeddings)];
        for (l, layer) in self.hdgc.iter().enumerate() {
            layer.visit(&format!("hdgc.{l}."), &mut out);
        }
        if let Some(t) = &self.temporal {
            t.visit("hdcc.", &mut out);
        }
        if let Some(a) = &self.history_attention {
            out.push(("history_attention".to_string(), a));
        }
        self.hgru.visit("hgru.", &mut out);
        out
    }

    pub fn named_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = vec![("embeddings".to_string(), &mut self.embeddings)];
        for (l, layer) in self.hdgc.iter_mut().enumerate() {
            layer.visit_mut(&format!("hdgc.{l}."), &mut out);
        }
        if let Some(t) = &mut self.temporal {
            t.visit_mut("hdcc.", &mut out);
        }
        if let Some(a) = &mut self.history_attention {
            out.push(("history_attention".to_string(), a));
        }
        self.hgru.visit_mut("hgru.", &mut out);
        out
    }

    pub fn num_scalars(&self) -> usize {
        self.named().iter().map(|(_, t)| t.len()).sum()
    }
}

/// Adjacency operators read by the graph convolution for one snapshot.
pub type SnapshotOperators = Vec<Arc<CsrMatrix>>;

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    config: ModelConfig,
    num_nodes: usize,
    params: HGWaveNetParams,
}

/// Tape handles for every parameter of a [`Model`].
pub struct BoundModel {
    x0: Var,
    input_space: Space,
    hdgc: Vec<HdgcLayerVars>,
    temporal: Temporal,
    hgru: HgruVars,
    x_space: Space,
    z_space: Space,
    bindings: Vec<(String, Var)>,
}

enum Temporal {
    Stack(Vec<GatedLayerVars>),
    Attention(Var),
}

impl BoundModel {
    /// `(name, var)` for each recorded parameter, in binding order.
    pub fn bindings(&self) -> &[(String, Var)] {
        &self.bindings
    }

    /// Ball of the node representations `Z`.
    pub fn z_space(&self) -> Space {
        self.z_space
    }
}

/// Tape handles produced by one snapshot step.
#[derive(Clone, Copy, Debug)]
pub struct SnapshotVars {
    /// Spatial features from the graph convolution.
    pub x: Var,
    /// Temporal summary of earlier representations.
    pub h: Var,
    /// New node representations.
    pub z: Var,
}

/// Values of one snapshot step.
#[derive(Clone, Debug, PartialEq)]
pub struct SnapshotTensors {
    pub x: Tensor,
    pub h: Tensor,
    pub z: Tensor,
}

impl Model {
    /// Fresh parameters drawn from a generator seeded with `seed`.
    pub fn init(config: &ModelConfig, num_nodes: usize, seed: u64) -> Result<Model> {
        config.validate()?;
        if num_nodes == 0 {
            return Err(Error::EmptyInput("model needs at least one node".into()));
        }
        let d = config.dim;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let embeddings = normal(num_nodes, d, EMBEDDING_INIT_STD, &mut rng);
        let hdgc = if config.no_hdgc {
            vec![HdgcLayerParams::init(d, 1, &mut rng)]
        } else {
            (0..config.hdgc_layers)
                .map(|_| HdgcLayerParams::init(d, config.diffusion_steps + 1, &mut rng))
                .collect()
        };
        let (temporal, history_attention) = if config.no_hdcc {
            (None, Some(xavier(1, d, &mut rng)))
        } else {
            let stack = GatedHdccStack::init(d, config.kernel_size, config.dilation_cycle, config.hdcc_layers, &mut rng);
            (Some(stack), None)
        };
        let hgru = HgruParams::init(d, &mut rng);
        Ok(Model {
            config: config.clone(),
            num_nodes,
            params: HGWaveNetParams {
                embeddings,
                hdgc,
                temporal,
                history_attention,
                hgru,
            },
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn params(&self) -> &HGWaveNetParams {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut HGWaveNetParams {
        &mut self.params
    }

    pub fn window(&self) -> usize {
        self.config.window()
    }

    /// Curvature of the output ball, or `None` in Euclidean mode.
    pub fn z_curvature(&self) -> Option<f64> {
        (!self.config.euclidean).then(|| self.params.hgru.curvature().c())
    }

    /// Hash of every parameter bit pattern.
    pub fn checksum(&self) -> u64 {
        let mut h = DefaultHasher::new();
        for (name, t) in self.params.named() {
            name.hash(&mut h);
            t.shape().hash(&mut h);
            for v in t.data() {
                v.to_bits().hash(&mut h);
            }
        }
        h.finish()
    }

    /// Records the parameters on `tape`; `trainable` decides whether they
    /// receive gradients.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundModel {
        let euclidean = self.config.euclidean;
        let mut b = Binder::new(tape, trainable, euclidean);
        let unit = Curvature::unit();
        let input_space = b.fixed(unit);
        let emb = b.tensor("embeddings".into(), &self.params.embeddings);
        let mut hdgc = Vec::with_capacity(self.params.hdgc.len());
        for (l, layer) in self.params.hdgc.iter().enumerate() {
            let out = b.fixed(unit);
            hdgc.push(layer.bind(&mut b, &format!("hdgc.{l}."), out));
        }
        let x_space = hdgc.last().map_or(input_space, |l| l.out);
        let temporal = match (&self.params.temporal, &self.params.history_attention) {
            (Some(stack), _) => Temporal::Stack(stack.bind(&mut b, "hdcc.")),
            (None, Some(a)) => Temporal::Attention(b.tensor("history_attention".into(), a)),
            (None, None) => unreachable!("a temporal module is always present"),
        };
        let (hgru, z_space) = self.params.hgru.bind(&mut b, "hgru.");
        let bindings = b.into_bound();
        let x0 = input_space.exp(tape, emb);
        BoundModel {
            x0,
            input_space,
            hdgc,
            temporal,
            hgru,
            x_space,
            z_space,
            bindings,
        }
    }

    /// Per-snapshot adjacency operators: `A⁰ … A^K`, or just `A¹` for the
    /// shallow single-layer variant.
    pub fn operators(&self, graph: &DynamicGraph) -> Result<Vec<SnapshotOperators>> {
        if graph.num_nodes() != self.num_nodes {
            return Err(Error::Shape(format!(
                "graph has {} nodes but the model was built for {}",
                graph.num_nodes(),
                self.num_nodes
            )));
        }
        graph
            .snapshots()
            .iter()
            .map(|s| {
                let stack = build_diffusion_stack(s, self.config.diffusion_steps.max(1))?;
                Ok(if self.config.no_hdgc {
                    vec![stack.power(1).clone()]
                } else {
                    stack.powers().to_vec()
                })
            })
            .collect()
    }

    /// An empty history buffer; `seed` only matters for random padding.
    pub fn new_buffer(&self, seed: u64) -> HistoryBuffer {
        HistoryBuffer::new(
            self.window(),
            self.num_nodes,
            self.config.dim,
            self.config.padding,
            seed,
            !self.config.euclidean,
        )
    }

    /// One snapshot step: spatial features from `ops`, temporal summary from
    /// `buffer`, merged by the GRU cell. The new representations are pushed
    /// onto `buffer`.
    pub fn forward_snapshot(
        &self,
        tape: &mut Tape,
        bound: &BoundModel,
        ops: &SnapshotOperators,
        buffer: &mut HistoryBuffer,
    ) -> SnapshotVars {
        let x = hdgc_forward_t(tape, bound.input_space, &bound.hdgc, ops, bound.x0);
        let window = buffer.window_vars(tape);
        let h = match &bound.temporal {
            Temporal::Stack(layers) => gated_hdcc_stack_t(tape, bound.z_space, layers, &window),
            Temporal::Attention(a) => history_attention_t(tape, bound.z_space, *a, &window),
        };
        let z = hgru_t(tape, &bound.hgru, bound.x_space, bound.z_space, bound.z_space, x, h);
        buffer.push(tape.value(z).clone(), Some(z));
        SnapshotVars { x, h, z }
    }

    /// Runs the snapshot steps for `ops` in order without recording
    /// gradients, returning every step's values.
    pub fn roll(&self, ops: &[SnapshotOperators], buffer: &mut HistoryBuffer) -> Vec<SnapshotTensors> {
        ops.iter()
            .map(|op| {
                let mut tape = Tape::new();
                buffer.detach();
                let bound = self.bind(&mut tape, false);
                let v = self.forward_snapshot(&mut tape, &bound, op, buffer);
                SnapshotTensors {
                    x: tape.value(v.x).clone(),
                    h: tape.value(v.h).clone(),
                    z: tape.value(v.z).clone(),
                }
            })
            .collect()
    }
}

#[derive(Clone, Debug)]
struct Slot {
    value: Tensor,
    var: Option<Var>,
    real: bool,
}

/// The last `W` node-representation matrices, most recent first. Slots not
/// yet filled hold padding (origin, or seeded random points).
#[derive(Clone, Debug)]
pub struct HistoryBuffer {
    window: usize,
    slots: VecDeque<Slot>,
}

impl HistoryBuffer {
    pub fn new(window: usize, num_nodes: usize, dim: usize, padding: Padding, seed: u64, ball: bool) -> Self {
        assert!(window > 0, "history window must be positive");
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(PADDING_SEED_OFFSET));
        let slots = (0..window)
            .map(|_| {
                let value = match padding {
                    Padding::Origin => Tensor::zeros(num_nodes, dim),
                    Padding::Random => {
                        let mut t = normal(num_nodes, dim, PADDING_STD, &mut rng);
                        if ball {
                            for i in 0..num_nodes {
                                let mut p = vec![0.0; dim];
                                manifold::expmap0_into(t.row_slice(i), 1.0, &mut p);
                                manifold::project_into(&p, 1.0, t.row_mut(i));
                            }
                        }
                        t
                    }
                };
                Slot {
                    value,
                    var: None,
                    real: false,
                }
            })
            .collect();
        HistoryBuffer { window, slots }
    }

    pub fn window(&self) -> usize {
        self.window
    }

    /// Forgets tape handles so the buffer can be read from a new tape.
    pub fn detach(&mut self) {
        for s in &mut self.slots {
            s.var = None;
        }
    }

    /// Handles for the window, oldest first; untracked slots are recorded as
    /// constants.
    pub fn window_vars(&mut self, tape: &mut Tape) -> Vec<Var> {
        for s in &mut self.slots {
            if s.var.is_none() {
                s.var = Some(tape.constant(s.value.clone()));
            }
        }
        self.slots.iter().rev().map(|s| s.var.unwrap()).collect()
    }

    pub fn push(&mut self, value: Tensor, var: Option<Var>) {
        self.slots.push_front(Slot { value, var, real: true });
        self.slots.truncate(self.window);
    }

    /// The most recent pushed representation, if any.
    pub fn latest(&self) -> Option<&Tensor> {
        self.slots.front().filter(|s| s.real).map(|s| &s.value)
    }

    /// Tape handle of the most recent pushed representation, if tracked.
    pub fn latest_var(&self) -> Option<Var> {
        self.slots.front().filter(|s| s.real).and_then(|s| s.var)
    }

    /// Window contents, most recent first.
    pub fn values(&self) -> Vec<&Tensor> {
        self.slots.iter().map(|s| &s.value).collect()
    }
}

/// `1 / (exp((d − r)/s) + 1)`.
pub fn fermi_dirac_prob(d: f64, r: f64, s: f64) -> f64 {
    sigmoid((r - d) / s)
}

pub fn fermi_dirac_score(x: &PoincarePoint, y: &PoincarePoint, r: f64, s: f64) -> f64 {
    fermi_dirac_prob(manifold::distance(x, y), r, s)
}

/// Distance between rows `i` and `j` of `z`; Euclidean when `curvature` is `None`.
pub fn row_distance(z: &Tensor, i: usize, j: usize, curvature: Option<f64>) -> f64 {
    let (a, b) = (z.row_slice(i), z.row_slice(j));
    match curvature {
        Some(c) => manifold::dist_slices(a, b, c),
        None => a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt(),
    }
}

/// Fermi-Dirac probabilities for every pair, computed in parallel.
pub fn score_pairs(z: &Tensor, curvature: Option<f64>, pairs: &[(usize, usize)], r: f64, s: f64) -> Vec<f64> {
    pairs
        .par_iter()
        .map(|&(i, j)| fermi_dirac_prob(row_distance(z, i, j, curvature), r, s))
        .collect()
}

/// Mean negative log-likelihood of the decoder over `pairs`.
pub fn pair_nll_t(tape: &mut Tape, space: Space, z: Var, pairs: &[(usize, usize)], r: f64, s: f64, positive: bool) -> Var {
    let src = Arc::new(pairs.iter().map(|p| p.0).collect::<Vec<_>>());
    let dst = Arc::new(pairs.iter().map(|p| p.1).collect::<Vec<_>>());
    let a = tape.gather_rows(z, src);
    let b = tape.gather_rows(z, dst);
    let d = space.dist(tape, a, b);
    let nll = tape.fermi_dirac_nll(d, r, s, positive);
    tape.mean(nll)
}

/// Mean positive-edge loss plus mean negative-pair loss.
pub fn cross_entropy_t(
    tape: &mut Tape,
    space: Space,
    z: Var,
    positives: &[(usize, usize)],
    negatives: &[(usize, usize)],
    r: f64,
    s: f64,
) -> Result<Var> {
    if positives.is_empty() {
        return Err(Error::EmptyInput("cross-entropy needs at least one positive edge".into()));
    }
    let pos = pair_nll_t(tape, space, z, positives, r, s, true);
    if negatives.is_empty() {
        return Ok(pos);
    }
    let neg = pair_nll_t(tape, space, z, negatives, r, s, false);
    Ok(tape.add(pos, neg))
}

/// Mean distance between matching rows of consecutive representations.
pub fn htc_t(tape: &mut Tape, space: Space, prev: Var, curr: Var) -> Var {
    let d = space.dist(tape, prev, curr);
    tape.mean(d)
}

fn ball_of(points: &[PoincarePoint], tape: &mut Tape) -> (Space, Var) {
    let c = points.first().map_or(1.0, |p| p.curvature().c());
    let rows: Vec<Vec<f64>> = points.iter().map(|p| p.coords().to_vec()).collect();
    let space = Space::fixed(tape, c);
    let z = tape.constant(Tensor::from_rows(&rows));
    (space, z)
}

/// Decoder cross-entropy for a batch over node points `z`.
pub fn cross_entropy_loss(z: &[PoincarePoint], batch: &EdgeSampleBatch, r: f64, s: f64) -> Result<f64> {
    if z.is_empty() {
        return Err(Error::EmptyInput("no node representations".into()));
    }
    let mut tape = Tape::new();
    let (space, zv) = ball_of(z, &mut tape);
    let loss = cross_entropy_t(&mut tape, space, zv, &batch.positives, &batch.negatives, r, s)?;
    Ok(tape.value(loss).item())
}

pub fn htc_loss(prev: &[PoincarePoint], curr: &[PoincarePoint]) -> Result<f64> {
    if prev.len() != curr.len() || prev.is_empty() {
        return Err(Error::Shape(format!(
            "htc needs equal, nonzero node counts, got {} and {}",
            prev.len(),
            curr.len()
        )));
    }
    let mut tape = Tape::new();
    let (space, a) = ball_of(prev, &mut tape);
    let (_, b) = ball_of(curr, &mut tape);
    let l = htc_t(&mut tape, space, a, b);
    Ok(tape.value(l).item())
}

/// `Σ_t (ce_t + λ · htc_t)`.
pub fn total_loss(ce: &[f64], htc: &[f64], lambda: f64) -> Result<f64> {
    if ce.len() != htc.len() {
        return Err(Error::Shape(format!(
            "{} cross-entropy terms but {} consistency terms",
            ce.len(),
            htc.len()
        )));
    }
    Ok(ce.iter().zip(htc).map(|(c, h)| c + lambda * h).sum())
}

/// Probability clamp applied in the decoder loss.
pub const LOSS_PROB_CLAMP: f64 = PROB_CLAMP;
/// Smallest curvature any parameter can reach.
pub const CURVATURE_FLOOR: f64 = MIN_CURVATURE;

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    config: String,
    num_nodes: usize,
    tensors: BTreeMap<String, Tensor>,
}

/// Writes the model and the run config to a JSON checkpoint.
pub fn save_checkpoint(path: &Path, model: &Model, config: &RunConfig) -> Result<()> {
    let file = CheckpointFile {
        format: CHECKPOINT_FORMAT.to_string(),
        config: config.to_text(),
        num_nodes: model.num_nodes,
        tensors: model
            .params
            .named()
            .into_iter()
            .map(|(n, t)| (n, t.clone()))
            .collect(),
    };
    if file.tensors.values().any(|t| !t.is_finite()) {
        return Err(Error::Checkpoint("refusing to save non-finite parameters".into()));
    }
    let text = serde_json::to_string(&file)?;
    std::fs::write(path, text)?;
    Ok(())
}

/// Reads a checkpoint written by [`save_checkpoint`].
pub fn load_checkpoint(path: &Path) -> Result<(Model, RunConfig)> {
    let text = std::fs::read_to_string(path)?;
    let file: CheckpointFile = serde_json::from_str(&text)?;
    if file.format != CHECKPOINT_FORMAT {
        return Err(Error::Checkpoint(format!("unknown checkpoint format `{}`", file.format)));
    }
    let config = RunConfig::from_text(&file.config)?;
    let mut model = Model::init(&config.model, file.num_nodes, 0)?;
    let mut tensors = file.tensors;
    for (name, slot) in model.params.named_mut() {
        let t = tensors
            .remove(&name)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor `{name}`")))?;
        if t.shape() != slot.shape() {
            return Err(Error::Checkpoint(format!(
                "tensor `{name}` has shape {:?}, expected {:?}",
                t.shape(),
                slot.shape()
            )));
        }
        *slot = t;
    }
    if let Some(extra) = tensors.keys().next() {
        return Err(Error::Checkpoint(format!("unexpected tensor `{extra}`")));
    }
    Ok((model, config))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph_data::Snapshot;

    fn small_config() -> ModelConfig {
        ModelConfig {
            dim: 4,
            diffusion_steps: 1,
            kernel_size: 2,
            dilation_cycle: 2,
            hdcc_layers: 2,
            ..ModelConfig::default()
        }
    }

    fn graph() -> DynamicGraph {
        let snaps = (0..4)
            .map(|t| Snapshot::new(t, 6, (0..5).map(|i| (i, (i + t + 1) % 6))).unwrap())
            .collect();
        DynamicGraph::new(snaps, 3).unwrap()
    }

    #[test]
    fn decoder_values() {
        assert_eq!(fermi_dirac_prob(2.0, 2.0, 1.0), 0.5);
        assert!((fermi_dirac_prob(0.0, 2.0, 1.0) - 0.8807970779778823).abs() < 1e-12);
        let o = PoincarePoint::origin(2, Curvature::unit());
        assert!((fermi_dirac_score(&o, &o, 2.0, 1.0) - 0.8807970779778823).abs() < 1e-12);
    }

    #[test]
    fn cross_entropy_examples() {
        let c = Curvature::unit();
        // a point at distance exactly r = 2 from the origin: tanh(1) along x
        let far = PoincarePoint::new(vec![1f64.tanh(), 0.0], c).unwrap();
        let z = vec![PoincarePoint::origin(2, c), far];
        let batch = EdgeSampleBatch {
            positives: vec![(0, 1)],
            negatives: vec![(1, 0)],
            seed: 0,
        };
        let l = cross_entropy_loss(&z, &batch, 2.0, 1.0).unwrap();
        assert!((l - 2.0 * 2f64.ln()).abs() < 1e-9);
        let same = EdgeSampleBatch {
            positives: vec![(0, 0)],
            negatives: vec![],
            seed: 0,
        };
        let l = cross_entropy_loss(&z, &same, 2.0, 1.0).unwrap();
        assert!((l - 0.12692801104297263).abs() < 1e-9);
        let empty = EdgeSampleBatch {
            positives: vec![],
            negatives: vec![(0, 1)],
            seed: 0,
        };
        assert!(cross_entropy_loss(&z, &empty, 2.0, 1.0).is_err());
    }

    #[test]
    fn htc_examples() {
        let c = Curvature::unit();
        let o = vec![PoincarePoint::origin(2, c)];
        let p = vec![PoincarePoint::new(vec![0.5, 0.0], c).unwrap()];
        assert_eq!(htc_loss(&p, &p).unwrap(), 0.0);
        assert!((htc_loss(&o, &p).unwrap() - 1.0986122886681098).abs() < 1e-12);
        assert!((htc_loss(&p, &o).unwrap() - htc_loss(&o, &p).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn total_loss_examples() {
        assert_eq!(total_loss(&[1.0, 2.0], &[5.0, 5.0], 0.0).unwrap(), 3.0);
        assert_eq!(total_loss(&[1.0], &[0.5], 2.0).unwrap(), 2.0);
        assert!(total_loss(&[1.0], &[], 1.0).is_err());
    }

    #[test]
    fn forward_is_finite_and_in_ball() {
        let g = graph();
        let model = Model::init(&small_config(), 6, 7).unwrap();
        let ops = model.operators(&g).unwrap();
        let mut buf = model.new_buffer(0);
        let c = model.z_curvature().unwrap();
        for out in model.roll(&ops, &mut buf) {
            assert!(out.z.is_finite());
            for i in 0..6 {
                let n: f64 = out.z.row_slice(i).iter().map(|v| v * v).sum::<f64>().sqrt();
                assert!(n <= (1.0 - 1e-5) / c.sqrt() + 1e-12);
            }
        }
    }

    #[test]
    fn buffer_changes_output() {
        let g = graph();
        let model = Model::init(&small_config(), 6, 7).unwrap();
        let ops = model.operators(&g).unwrap();
        let mut buf = model.new_buffer(0);
        let same = vec![ops[0].clone(), ops[0].clone()];
        let outs = model.roll(&same, &mut buf);
        assert_ne!(outs[0].z, outs[1].z);
        assert_eq!(outs[0].x, outs[1].x);
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        let mut cfg = RunConfig::default();
        cfg.model = small_config();
        let model = Model::init(&cfg.model, 6, 3).unwrap();
        save_checkpoint(&path, &model, &cfg).unwrap();
        let (back, back_cfg) = load_checkpoint(&path).unwrap();
        assert_eq!(back, model);
        assert_eq!(back_cfg, cfg);
        let g = graph();
        let ops = model.operators(&g).unwrap();
        let a = model.roll(&ops, &mut model.new_buffer(0));
        let b = back.roll(&ops, &mut back.new_buffer(0));
        assert_eq!(a, b);
    }

    #[test]
    fn ablations_change_parameter_sets() {
        let base = Model::init(&small_config(), 6, 0).unwrap();
        let names: Vec<String> = base.params().named().into_iter().map(|(n, _)| n).collect();
        assert!(names.iter().any(|n| n.starts_with("hdcc.")));
        let mut cfg = small_config();
        cfg.no_hdcc = true;
        cfg.no_hdgc = true;
        let ab = Model::init(&cfg, 6, 0).unwrap();
        let names: Vec<String> = ab.params().named().into_iter().map(|(n, _)| n).collect();
        assert!(names.contains(&"history_attention".to_string()));
        assert!(!names.iter().any(|n| n.starts_with("hdcc.") || n.starts_with("hdgc.1")));
    }
}
