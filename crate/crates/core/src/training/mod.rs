//! Optimization and evaluation protocols.
//!
//! Training feeds snapshot `G_{t−1}` to the network and scores the edges of
//! `G_t` against sampled non-edges. Evaluation rolls the trained network
//! forward without updates and ranks the edges of each test snapshot.

mod gradcheck;
mod metrics;
mod optimizer;

use std::collections::BTreeMap;
use std::fmt;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

pub use gradcheck::{
    finite_difference_check, fixture_config, grad_check, model_grad_check, standard_fixture, GradCheckReport,
    GroupError, GRADCHECK_STEP, GRADCHECK_TOLERANCE,
};
pub use metrics::{average_precision, roc_auc};
pub use optimizer::Adam;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::graph_data::{sample_negative_pairs, DynamicGraph, Snapshot};
use crate::model::{cross_entropy_t, htc_t, score_pairs, BoundModel, HistoryBuffer, Model, SnapshotOperators};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Derives an independent stream seed from a base seed and two indices.
pub fn mix_seed(base: u64, a: u64, b: u64) -> u64 {
    let mut z = base
        ^ a.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ b.wrapping_add(1).wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Link-prediction positives for snapshot `t`: its undirected edges.
pub fn link_positives(graph: &DynamicGraph, t: usize) -> Vec<(usize, usize)> {
    graph.snapshot(t).undirected_edges()
}

/// New-link positives for snapshot `t ≥ 1`: edges absent from `G_{t−1}`.
pub fn new_link_positives(graph: &DynamicGraph, t: usize) -> Vec<(usize, usize)> {
    let prev = graph.snapshot(t - 1);
    graph
        .snapshot(t)
        .undirected_edges()
        .into_iter()
        .filter(|&(i, j)| !prev.connects(i, j))
        .collect()
}

fn negatives_for(s: &Snapshot, count: usize, seed: u64) -> Result<Vec<(usize, usize)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_negative_pairs(s, count, &mut rng)
}

/// Loss handles for one pass over a run of snapshots.
pub struct SequenceLoss {
    pub total: Var,
    pub ce: Vec<Var>,
    pub htc: Vec<Var>,
}

/// Records `Σ_t (ce_t + λ·htc_t)` for targets `t ∈ [first, end)`, feeding
/// `G_{t−1}` and scoring `G_t`. The consistency term needs the previous
/// step's output, so it starts at the second target; `prev` supplies it for
/// the first target when known.
#[allow(clippy::too_many_arguments)]
pub fn sequence_loss(
    model: &Model,
    tape: &mut Tape,
    bound: &BoundModel,
    ops: &[SnapshotOperators],
    graph: &DynamicGraph,
    config: &RunConfig,
    buffer: &mut HistoryBuffer,
    targets: std::ops::Range<usize>,
    mut prev: Option<Var>,
    epoch: u64,
) -> Result<SequenceLoss> {
    let m = &config.model;
    let space = bound.z_space();
    let mut total: Option<Var> = None;
    let (mut ces, mut htcs) = (Vec::new(), Vec::new());
    for t in targets {
        let out = model.forward_snapshot(tape, bound, &ops[t - 1], buffer);
        let mut term: Option<Var> = None;
        let positives = link_positives(graph, t);
        if positives.is_empty() {
            log::warn!("training snapshot {t} has no edges; skipping its cross-entropy term");
        } else {
            let seed = mix_seed(config.train.seed_neg_train, epoch, t as u64);
            let negatives = negatives_for(graph.snapshot(t), positives.len(), seed)?;
            let ce = cross_entropy_t(tape, space, out.z, &positives, &negatives, m.r, m.s)?;
            ces.push(ce);
            term = Some(ce);
        }
        if let Some(p) = prev {
            let h = htc_t(tape, space, p, out.z);
            htcs.push(h);
            let weighted = tape.scale(h, m.lambda);
            term = Some(match term {
                Some(ce) => tape.add(ce, weighted),
                None => weighted,
            });
        }
        if let Some(term) = term {
            total = Some(match total {
                Some(acc) => tape.add(acc, term),
                None => term,
            });
        }
        prev = Some(out.z);
    }
    let total = match total {
        Some(v) => v,
        None => tape.constant(Tensor::scalar(0.0)),
    };
    Ok(SequenceLoss { total, ce: ces, htc: htcs })
}

/// Gradients of `loss` keyed by parameter name.
pub fn named_gradients(tape: &Tape, bound: &BoundModel, loss: Var) -> Result<BTreeMap<String, Tensor>> {
    let grads = tape.backward(loss)?;
    Ok(bound
        .bindings()
        .iter()
        .map(|(name, v)| (name.clone(), grads.wrt(*v)))
        .collect())
}

/// One row of the loss trace.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub ce: f64,
    pub htc: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters with the lowest recorded training loss.
    pub model: Model,
    pub trace: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    pub stopped_early: bool,
}

/// A training run that had to stop, with the last parameters that produced a
/// finite loss.
#[derive(Debug)]
pub struct TrainFailure {
    pub error: Error,
    pub last_good: Model,
    pub trace: Vec<EpochRecord>,
}

impl fmt::Display for TrainFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "training aborted after {} epochs: {}", self.trace.len(), self.error)
    }
}

impl std::error::Error for TrainFailure {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

impl From<Box<TrainFailure>> for Error {
    fn from(f: Box<TrainFailure>) -> Error {
        f.error
    }
}

/// Trains a freshly initialized model.
pub fn train(graph: &DynamicGraph, config: &RunConfig) -> Result<TrainOutcome, Box<TrainFailure>> {
    let fail = |error: Error, model: Model| Box::new(TrainFailure { error, last_good: model, trace: Vec::new() });
    let model = match Model::init(&config.model, graph.num_nodes(), config.train.seed_init) {
        Ok(m) => m,
        Err(e) => {
            return Err(Box::new(TrainFailure {
                error: e,
                last_good: Model::init(&Default::default(), 1, 0).expect("default model"),
                trace: Vec::new(),
            }))
        }
    };
    if let Err(e) = config.train.validate() {
        return Err(fail(e, model));
    }
    train_model(model, graph, config)
}

fn scalar(tape: &Tape, vars: &[Var]) -> f64 {
    vars.iter().map(|v| tape.value(*v).item()).sum()
}

/// Trains `model` in place of a fresh initialization.
pub fn train_model(model: Model, graph: &DynamicGraph, config: &RunConfig) -> Result<TrainOutcome, Box<TrainFailure>> {
    let mut model = model;
    let mut trace: Vec<EpochRecord> = Vec::new();
    let mut best = model.clone();
    let mut best_loss = f64::INFINITY;
    let mut best_epoch = None;
    let mut since_best = 0;
    let mut stopped_early = false;

    macro_rules! bail {
        ($err:expr) => {
            return Err(Box::new(TrainFailure {
                error: $err,
                last_good: model,
                trace,
            }))
        };
    }

    let ops = match model.operators(graph) {
        Ok(o) => o,
        Err(e) => bail!(e),
    };
    let mut opt = Adam::new(config.train.lr);
    let split = graph.split();
    for epoch in 0..config.train.epochs {
        let start_params = model.clone();
        let record = if config.train.per_snapshot_step {
            per_snapshot_epoch(&mut model, &mut opt, &ops, graph, config, epoch)
        } else {
            full_sequence_epoch(&mut model, &mut opt, &ops, graph, config, epoch, split)
        };
        let record = match record {
            Ok(r) => r,
            Err(e) => {
                model = start_params;
                bail!(e)
            }
        };
        log::debug!("epoch {epoch}: loss {:.6}", record.loss);
        let loss = record.loss;
        trace.push(record);
        if loss < best_loss {
            best_loss = loss;
            best = start_params;
            best_epoch = Some(epoch);
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.train.patience {
                stopped_early = true;
                break;
            }
        }
    }
    Ok(TrainOutcome {
        model: if best_epoch.is_some() { best } else { model },
        trace,
        best_epoch,
        stopped_early,
    })
}

fn check_finite(loss: f64, epoch: usize) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::Divergence(format!("loss became {loss} in epoch {epoch}")))
    }
}

fn full_sequence_epoch(
    model: &mut Model,
    opt: &mut Adam,
    ops: &[SnapshotOperators],
    graph: &DynamicGraph,
    config: &RunConfig,
    epoch: usize,
    split: usize,
) -> Result<EpochRecord> {
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape, true);
    let mut buffer = model.new_buffer(config.train.seed_init);
    let l = sequence_loss(
        model,
        &mut tape,
        &bound,
        ops,
        graph,
        config,
        &mut buffer,
        1..split,
        None,
        epoch as u64,
    )?;
    let record = EpochRecord {
        epoch,
        loss: tape.value(l.total).item(),
        ce: scalar(&tape, &l.ce),
        htc: scalar(&tape, &l.htc),
    };
    check_finite(record.loss, epoch)?;
    let grads = named_gradients(&tape, &bound, l.total)?;
    opt.step(model.params_mut().named_mut(), &grads)?;
    Ok(record)
}

fn per_snapshot_epoch(
    model: &mut Model,
    opt: &mut Adam,
    ops: &[SnapshotOperators],
    graph: &DynamicGraph,
    config: &RunConfig,
    epoch: usize,
) -> Result<EpochRecord> {
    let mut buffer = model.new_buffer(config.train.seed_init);
    let mut prev: Option<Tensor> = None;
    let mut record = EpochRecord {
        epoch,
        loss: 0.0,
        ce: 0.0,
        htc: 0.0,
    };
    for t in 1..graph.split() {
        let mut tape = Tape::new();
        buffer.detach();
        let bound = model.bind(&mut tape, true);
        let prev_var = prev.take().map(|p| tape.constant(p));
        let l = sequence_loss(
            model,
            &mut tape,
            &bound,
            ops,
            graph,
            config,
            &mut buffer,
            t..t + 1,
            prev_var,
            epoch as u64,
        )?;
        let loss = tape.value(l.total).item();
        check_finite(loss, epoch)?;
        record.loss += loss;
        record.ce += scalar(&tape, &l.ce);
        record.htc += scalar(&tape, &l.htc);
        prev = buffer.latest().cloned();
        let grads = named_gradients(&tape, &bound, l.total)?;
        opt.step(model.params_mut().named_mut(), &grads)?;
    }
    Ok(record)
}

/// Node representations `Z` after feeding each of the first `count`
/// snapshots, with no parameter updates.
pub fn roll_representations(model: &Model, graph: &DynamicGraph, count: usize, seed: u64) -> Result<Vec<Tensor>> {
    let ops = model.operators(graph)?;
    let mut buffer = model.new_buffer(seed);
    Ok(model
        .roll(&ops[..count.min(ops.len())], &mut buffer)
        .into_iter()
        .map(|o| o.z)
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalTask {
    Link,
    NewLink,
}

impl fmt::Display for EvalTask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EvalTask::Link => "link",
            EvalTask::NewLink => "new_link",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SnapshotMetrics {
    pub task: EvalTask,
    pub snapshot: usize,
    pub auc: f64,
    pub ap: f64,
    pub positives: usize,
    pub negatives: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TaskSummary {
    pub auc: f64,
    pub ap: f64,
    /// Number of test snapshots averaged.
    pub snapshots: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub per_snapshot: Vec<SnapshotMetrics>,
    pub link: Option<TaskSummary>,
    pub new_link: Option<TaskSummary>,
    pub seed_init: u64,
    pub seed_neg_eval: u64,
    pub skipped: Vec<String>,
    pub seconds: f64,
}

impl EvalReport {
    pub fn summary(&self, task: EvalTask) -> Option<&TaskSummary> {
        match task {
            EvalTask::Link => self.link.as_ref(),
            EvalTask::NewLink => self.new_link.as_ref(),
        }
    }

    /// The report with the wall-clock time zeroed, for exact comparisons.
    pub fn without_timing(&self) -> EvalReport {
        EvalReport {
            seconds: 0.0,
            ..self.clone()
        }
    }
}

fn summarize(rows: &[SnapshotMetrics], task: EvalTask) -> Option<TaskSummary> {
    let sel: Vec<&SnapshotMetrics> = rows.iter().filter(|r| r.task == task).collect();
    if sel.is_empty() {
        return None;
    }
    let n = sel.len() as f64;
    Some(TaskSummary {
        auc: sel.iter().map(|r| r.auc).sum::<f64>() / n,
        ap: sel.iter().map(|r| r.ap).sum::<f64>() / n,
        snapshots: sel.len(),
    })
}

/// Scores every test snapshot `t` from the representations produced by
/// `G_0 … G_{t−1}`, for the tasks selected in `config.task`.
pub fn evaluate(model: &Model, graph: &DynamicGraph, config: &RunConfig) -> Result<EvalReport> {
    let started = Instant::now();
    let zs = roll_representations(model, graph, graph.len() - 1, config.train.seed_init)?;
    let curvature = model.z_curvature();
    let (r, s) = (config.model.r, config.model.s);
    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    let mut tasks = Vec::new();
    if config.task.includes_link() {
        tasks.push(EvalTask::Link);
    }
    if config.task.includes_new_link() {
        tasks.push(EvalTask::NewLink);
    }
    for t in graph.test_range() {
        let z = &zs[t - 1];
        for &task in &tasks {
            let positives = match task {
                EvalTask::Link => link_positives(graph, t),
                EvalTask::NewLink => new_link_positives(graph, t),
            };
            if positives.is_empty() {
                let msg = format!("{task}: test snapshot {t} has no positive edges, skipped");
                log::warn!("{msg}");
                skipped.push(msg);
                continue;
            }
            let tag = match task {
                EvalTask::Link => 0,
                EvalTask::NewLink => 1,
            };
            let seed = mix_seed(config.train.seed_neg_eval, t as u64, tag);
            let negatives = negatives_for(graph.snapshot(t), positives.len(), seed)?;
            let pos = score_pairs(z, curvature, &positives, r, s);
            let neg = score_pairs(z, curvature, &negatives, r, s);
            rows.push(SnapshotMetrics {
                task,
                snapshot: t,
                auc: roc_auc(&pos, &neg).expect("both classes present"),
                ap: average_precision(&pos, &neg).expect("positives present"),
                positives: pos.len(),
                negatives: neg.len(),
            });
        }
    }
    Ok(EvalReport {
        link: summarize(&rows, EvalTask::Link),
        new_link: summarize(&rows, EvalTask::NewLink),
        per_snapshot: rows,
        seed_init: config.train.seed_init,
        seed_neg_eval: config.train.seed_neg_eval,
        skipped,
        seconds: started.elapsed().as_secs_f64(),
    })
}
