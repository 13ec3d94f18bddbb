//! Dataset loading, statistics, repeated runs and parameter sweeps.

use rayon::prelude::*;
use serde::Serialize;

use crate::config::{DataConfig, RunConfig};
use crate::error::{Error, Result};
use crate::graph_data::{gromov_delta_estimate, load_edge_file, load_snapshot_dir, partition_snapshots, DataFormat, DynamicGraph};
use crate::training::{evaluate, train, EvalReport, EvalTask, TrainOutcome};

/// Reads the dataset named by `data`.
pub fn load_graph(data: &DataConfig) -> Result<DynamicGraph> {
    let path = data
        .path
        .as_ref()
        .ok_or_else(|| Error::config("data", "no dataset path given"))?;
    match data.format {
        DataFormat::Tsv => partition_snapshots(&load_edge_file(path)?, data.snapshots, data.split),
        DataFormat::Snapshots => load_snapshot_dir(path, data.split),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DatasetStats {
    pub nodes: usize,
    /// Distinct undirected node pairs over all snapshots.
    pub edges: usize,
    pub snapshots: usize,
    pub split: usize,
    /// Gromov δ of the largest component of the union graph.
    pub delta: f64,
    pub snapshot_edges: Vec<usize>,
    pub warnings: Vec<String>,
}

pub fn dataset_stats(graph: &DynamicGraph, quadruples: u64, seed: u64) -> DatasetStats {
    let union = graph.union();
    DatasetStats {
        nodes: graph.num_nodes(),
        edges: union.undirected_edges().len(),
        snapshots: graph.len(),
        split: graph.split(),
        delta: gromov_delta_estimate(&union, quadruples, seed),
        snapshot_edges: graph.snapshots().iter().map(|s| s.undirected_edges().len()).collect(),
        warnings: graph.warnings().to_vec(),
    }
}

#[derive(Clone, Debug)]
pub struct RunResult {
    pub run: usize,
    pub config: RunConfig,
    pub outcome: TrainOutcome,
    pub report: EvalReport,
}

/// Trains and evaluates one configuration.
pub fn train_and_evaluate(graph: &DynamicGraph, config: &RunConfig, run: usize) -> Result<RunResult> {
    let outcome = train(graph, config)?;
    let report = evaluate(&outcome.model, graph, config)?;
    Ok(RunResult {
        run,
        config: config.clone(),
        outcome,
        report,
    })
}

/// `config.runs` repetitions with shifted seeds, optionally in parallel.
pub fn run_repetitions(graph: &DynamicGraph, config: &RunConfig, parallel: bool) -> Result<Vec<RunResult>> {
    config.validate()?;
    let job = |i: usize| train_and_evaluate(graph, &config.for_run(i), i);
    if parallel {
        (0..config.runs).into_par_iter().map(job).collect()
    } else {
        (0..config.runs).map(job).collect()
    }
}

/// Mean and sample standard deviation; zero deviation for a single value.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Averaged AUC over runs for `task`, skipping runs without that task.
pub fn mean_auc(results: &[RunResult], task: EvalTask) -> Option<f64> {
    let v: Vec<f64> = results
        .iter()
        .filter_map(|r| r.report.summary(task).map(|s| s.auc))
        .collect();
    (!v.is_empty()).then(|| mean_std(&v).0)
}

/// Splits `key=v1,v2,…`.
pub fn parse_sweep(spec: &str) -> Result<(String, Vec<String>)> {
    let (key, list) = spec
        .split_once('=')
        .ok_or_else(|| Error::config("sweep", format!("expected `param=v1,v2,...`, got `{spec}`")))?;
    let key = key.trim().to_string();
    if !RunConfig::KEYS.contains(&key.as_str()) {
        return Err(Error::config("sweep", format!("unknown parameter `{key}`")));
    }
    if matches!(key.as_str(), "data" | "format" | "snapshots" | "split" | "runs") {
        return Err(Error::config("sweep", format!("`{key}` cannot be swept")));
    }
    let values: Vec<String> = list
        .split(',')
        .map(|v| v.trim().to_string())
        .filter(|v| !v.is_empty())
        .collect();
    if values.is_empty() {
        return Err(Error::config("sweep", "no values given"));
    }
    Ok((key, values))
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub param: String,
    pub value: String,
    pub run: usize,
    pub seed_init: u64,
    pub link_auc: Option<f64>,
    pub link_ap: Option<f64>,
    pub new_link_auc: Option<f64>,
    pub new_link_ap: Option<f64>,
    pub final_loss: Option<f64>,
    pub epochs: usize,
}

/// Column order of [`sweep_csv`].
pub const SWEEP_COLUMNS: [&str; 10] = [
    "param",
    "value",
    "run",
    "seed_init",
    "link_auc",
    "link_ap",
    "new_link_auc",
    "new_link_ap",
    "final_loss",
    "epochs",
];

impl SweepRow {
    pub fn from_result(param: &str, value: &str, r: &RunResult) -> SweepRow {
        SweepRow {
            param: param.to_string(),
            value: value.to_string(),
            run: r.run,
            seed_init: r.config.train.seed_init,
            link_auc: r.report.link.as_ref().map(|s| s.auc),
            link_ap: r.report.link.as_ref().map(|s| s.ap),
            new_link_auc: r.report.new_link.as_ref().map(|s| s.auc),
            new_link_ap: r.report.new_link.as_ref().map(|s| s.ap),
            final_loss: r.outcome.trace.last().map(|e| e.loss),
            epochs: r.outcome.trace.len(),
        }
    }
}

/// One training/evaluation per `(value, run)`, with the full report of each.
pub fn sweep(
    graph: &DynamicGraph,
    base: &RunConfig,
    key: &str,
    values: &[String],
    parallel: bool,
) -> Result<Vec<(SweepRow, EvalReport)>> {
    let mut jobs = Vec::new();
    for v in values {
        let mut cfg = base.clone();
        cfg.set(key, v)?;
        cfg.validate()?;
        for i in 0..cfg.runs {
            jobs.push((v.clone(), cfg.for_run(i), i));
        }
    }
    let job = |(v, cfg, i): &(String, RunConfig, usize)| -> Result<(SweepRow, EvalReport)> {
        let r = train_and_evaluate(graph, cfg, *i)?;
        Ok((SweepRow::from_result(key, v, &r), r.report))
    };
    if parallel {
        jobs.par_iter().map(job).collect()
    } else {
        jobs.iter().map(job).collect()
    }
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = SWEEP_COLUMNS.join(",");
    out.push('\n');
    for r in rows {
        let fields = [
            r.param.clone(),
            r.value.clone(),
            r.run.to_string(),
            r.seed_init.to_string(),
            cell(r.link_auc),
            cell(r.link_ap),
            cell(r.new_link_auc),
            cell(r.new_link_ap),
            cell(r.final_loss),
            r.epochs.to_string(),
        ];
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}
