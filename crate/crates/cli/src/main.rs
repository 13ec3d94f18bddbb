use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use hgwavenet::config::RunConfig;
use hgwavenet::experiment::{dataset_stats, load_graph, parse_sweep, sweep, sweep_csv, SweepRow};
use hgwavenet::model::{load_checkpoint, save_checkpoint};
use hgwavenet::tape::Primitive;
use hgwavenet::training::{self, EvalReport, EpochRecord, GRADCHECK_TOLERANCE};
use hgwavenet::Error;

const CHECKPOINT_FILE: &str = "checkpoint.json";
const LAST_GOOD_FILE: &str = "checkpoint-last-good.json";

#[derive(Parser)]
#[command(name = "hgwavenet", version, about = "Hyperbolic temporal link prediction on snapshot graphs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write a checkpoint, loss trace and resolved config.
    Train(TrainArgs),
    /// Evaluate a checkpoint, or train and evaluate a parameter sweep.
    Eval(EvalArgs),
    /// Dataset statistics: nodes, edges, snapshots and Gromov δ.
    Stats(StatsArgs),
    /// Compare analytic gradients with finite differences on a small fixture.
    Gradcheck(GradcheckArgs),
}

/// Configuration overrides shared by every command. Values are validated by
/// the configuration layer so errors name the offending field.
#[derive(Args, Default)]
struct ConfigArgs {
    /// Flat `key = value` configuration file applied before the flags.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: Option<String>,
    /// Input format: `tsv` (timestamped edges) or `snapshots` (directory).
    #[arg(long)]
    format: Option<String>,
    #[arg(long)]
    snapshots: Option<String>,
    /// `train:test` ratio or the index of the first test snapshot.
    #[arg(long)]
    split: Option<String>,
    #[arg(long)]
    dim: Option<String>,
    /// Truncated diffusion step.
    #[arg(long = "K")]
    k: Option<String>,
    /// Graph convolution layers.
    #[arg(long = "L")]
    l: Option<String>,
    /// Causal convolution kernel size.
    #[arg(long = "S")]
    s_kernel: Option<String>,
    /// Dilation cycle length.
    #[arg(long = "D")]
    d_cycle: Option<String>,
    /// Gated causal convolution layers.
    #[arg(long)]
    layers: Option<String>,
    #[arg(long)]
    r: Option<String>,
    #[arg(long)]
    s: Option<String>,
    #[arg(long)]
    lambda: Option<String>,
    #[arg(long)]
    lr: Option<String>,
    #[arg(long)]
    epochs: Option<String>,
    #[arg(long)]
    patience: Option<String>,
    #[arg(long)]
    seed_init: Option<String>,
    #[arg(long)]
    seed_neg_train: Option<String>,
    #[arg(long)]
    seed_neg_eval: Option<String>,
    #[arg(long)]
    runs: Option<String>,
    #[arg(long)]
    delta_quadruples: Option<String>,
    #[arg(long)]
    delta_seed: Option<String>,
    /// History padding: `origin` or `random`.
    #[arg(long)]
    padding: Option<String>,
    /// `link`, `new_link` or `both`.
    #[arg(long)]
    task: Option<String>,
    #[arg(long)]
    no_hdgc: bool,
    #[arg(long)]
    no_hdcc: bool,
    #[arg(long)]
    euclidean: bool,
    #[arg(long)]
    per_snapshot_step: bool,
}

impl ConfigArgs {
    fn overrides(&self) -> Vec<(&'static str, String)> {
        let values = [
            ("data", &self.data),
            ("format", &self.format),
            ("snapshots", &self.snapshots),
            ("split", &self.split),
            ("dim", &self.dim),
            ("K", &self.k),
            ("L", &self.l),
            ("S", &self.s_kernel),
            ("D", &self.d_cycle),
            ("layers", &self.layers),
            ("r", &self.r),
            ("s", &self.s),
            ("lambda", &self.lambda),
            ("lr", &self.lr),
            ("epochs", &self.epochs),
            ("patience", &self.patience),
            ("seed_init", &self.seed_init),
            ("seed_neg_train", &self.seed_neg_train),
            ("seed_neg_eval", &self.seed_neg_eval),
            ("runs", &self.runs),
            ("delta_quadruples", &self.delta_quadruples),
            ("delta_seed", &self.delta_seed),
            ("padding", &self.padding),
            ("task", &self.task),
        ];
        let mut out: Vec<(&'static str, String)> = values
            .into_iter()
            .filter_map(|(k, v)| v.clone().map(|v| (k, v)))
            .collect();
        let flags = [
            ("no_hdgc", self.no_hdgc),
            ("no_hdcc", self.no_hdcc),
            ("euclidean", self.euclidean),
            ("per_snapshot_step", self.per_snapshot_step),
        ];
        out.extend(flags.into_iter().filter(|f| f.1).map(|(k, _)| (k, "true".to_string())));
        out
    }

    fn apply(&self, cfg: &mut RunConfig) -> hgwavenet::Result<()> {
        if let Some(path) = &self.config {
            cfg.apply_text(&fs::read_to_string(path)?)?;
        }
        for (k, v) in self.overrides() {
            cfg.set(k, &v)?;
        }
        cfg.validate()
    }

    fn resolve(&self) -> hgwavenet::Result<RunConfig> {
        let mut cfg = RunConfig::default();
        self.apply(&mut cfg)?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Checkpoint to evaluate; required unless `--sweep` is given.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Train and evaluate once per value, e.g. `K=1,2,3,4`.
    #[arg(long)]
    sweep: Option<String>,
    /// Run sweep jobs in parallel.
    #[arg(long)]
    parallel: bool,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct StatsArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long)]
    euclidean: bool,
    /// Scale the adjoint of this primitive, to confirm the check catches it.
    #[arg(long)]
    corrupt_adjoint: Option<String>,
    #[arg(long, default_value_t = 1.5)]
    corrupt_factor: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn write_jsonl(path: &Path, rows: impl IntoIterator<Item = Value>) -> anyhow::Result<()> {
    let mut text = String::new();
    for row in rows {
        text.push_str(&serde_json::to_string(&row)?);
        text.push('\n');
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn create_out(dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn trace_rows(trace: &[EpochRecord]) -> impl Iterator<Item = Value> + '_ {
    trace.iter().map(|r| serde_json::to_value(r).expect("serializable"))
}

fn cmd_train(args: &TrainArgs) -> anyhow::Result<()> {
    let cfg = args.config.resolve()?;
    let graph = load_graph(&cfg.data)?;
    for w in graph.warnings() {
        log::warn!("{w}");
    }
    create_out(&args.out)?;
    fs::write(args.out.join("resolved-config.txt"), cfg.to_text())?;
    match training::train(&graph, &cfg) {
        Ok(outcome) => {
            write_jsonl(&args.out.join("trace.jsonl"), trace_rows(&outcome.trace))?;
            save_checkpoint(&args.out.join(CHECKPOINT_FILE), &outcome.model, &cfg)?;
            let last = outcome.trace.last().map_or(f64::NAN, |r| r.loss);
            println!(
                "trained {} epochs (best {:?}, early stop {}), final loss {last:.6}; wrote {}",
                outcome.trace.len(),
                outcome.best_epoch,
                outcome.stopped_early,
                args.out.display()
            );
            Ok(())
        }
        Err(failure) => {
            write_jsonl(&args.out.join("trace.jsonl"), trace_rows(&failure.trace))?;
            save_checkpoint(&args.out.join(LAST_GOOD_FILE), &failure.last_good, &cfg)?;
            Err(anyhow::Error::new(failure.error)
                .context(format!("training aborted; last good parameters saved to {LAST_GOOD_FILE}")))
        }
    }
}

fn report_rows(report: &EvalReport, param: &str, value: &str, run: usize) -> Vec<Value> {
    let mut rows: Vec<Value> = report
        .per_snapshot
        .iter()
        .map(|m| {
            json!({
                "kind": "snapshot", "param": param, "value": value, "run": run,
                "task": m.task, "snapshot": m.snapshot, "auc": m.auc, "ap": m.ap,
                "positives": m.positives, "negatives": m.negatives,
            })
        })
        .collect();
    for (task, summary) in [("link", &report.link), ("new_link", &report.new_link)] {
        if let Some(s) = summary {
            rows.push(json!({
                "kind": "summary", "param": param, "value": value, "run": run,
                "task": task, "auc": s.auc, "ap": s.ap, "snapshots": s.snapshots,
                "seed_init": report.seed_init, "seed_neg_eval": report.seed_neg_eval,
                "seconds": report.seconds,
            }));
        }
    }
    rows
}

/// Model keys given on the command line must agree with the checkpoint.
fn check_model_overrides(args: &ConfigArgs, ckpt: &RunConfig) -> anyhow::Result<()> {
    const MODEL_KEYS: [&str; 13] = [
        "dim", "K", "L", "S", "D", "layers", "r", "s", "lambda", "no_hdgc", "no_hdcc", "euclidean", "padding",
    ];
    let mut probe = ckpt.clone();
    args.apply(&mut probe)?;
    for key in MODEL_KEYS {
        if probe.get(key) != ckpt.get(key) {
            bail!(
                "checkpoint/config mismatch for `{key}`: checkpoint has {}, configuration asks for {}",
                ckpt.get(key).unwrap_or_default(),
                probe.get(key).unwrap_or_default()
            );
        }
    }
    Ok(())
}

fn cmd_eval(args: &EvalArgs) -> anyhow::Result<()> {
    create_out(&args.out)?;
    let mut rows = Vec::new();
    let mut csv_rows = Vec::new();
    if let Some(spec) = &args.sweep {
        let cfg = args.config.resolve()?;
        let (key, values) = parse_sweep(spec)?;
        let graph = load_graph(&cfg.data)?;
        fs::write(args.out.join("resolved-config.txt"), cfg.to_text())?;
        for (row, report) in sweep(&graph, &cfg, &key, &values, args.parallel)? {
            rows.extend(report_rows(&report, &row.param, &row.value, row.run));
            csv_rows.push(row);
        }
    } else {
        let path = args
            .checkpoint
            .as_ref()
            .ok_or_else(|| Error::config("checkpoint", "eval needs --checkpoint or --sweep"))?;
        let (model, ckpt_cfg) = load_checkpoint(path)?;
        check_model_overrides(&args.config, &ckpt_cfg)?;
        let mut cfg = ckpt_cfg;
        args.config.apply(&mut cfg)?;
        let graph = load_graph(&cfg.data)?;
        if graph.num_nodes() != model.num_nodes() {
            bail!(
                "checkpoint/config mismatch: checkpoint was trained on {} nodes, dataset has {}",
                model.num_nodes(),
                graph.num_nodes()
            );
        }
        fs::write(args.out.join("resolved-config.txt"), cfg.to_text())?;
        let report = training::evaluate(&model, &graph, &cfg)?;
        let value = path.display().to_string();
        rows.extend(report_rows(&report, "checkpoint", &value, 0));
        csv_rows.push(SweepRow {
            param: "checkpoint".into(),
            value,
            run: 0,
            seed_init: cfg.train.seed_init,
            link_auc: report.link.as_ref().map(|s| s.auc),
            link_ap: report.link.as_ref().map(|s| s.ap),
            new_link_auc: report.new_link.as_ref().map(|s| s.auc),
            new_link_ap: report.new_link.as_ref().map(|s| s.ap),
            final_loss: None,
            epochs: 0,
        });
    }
    for r in rows.iter().filter(|r| r["kind"] == "summary") {
        println!(
            "{}={} run {} {}: AUC {:.4} AP {:.4}",
            r["param"].as_str().unwrap_or_default(),
            r["value"].as_str().unwrap_or_default(),
            r["run"],
            r["task"].as_str().unwrap_or_default(),
            r["auc"].as_f64().unwrap_or(f64::NAN),
            r["ap"].as_f64().unwrap_or(f64::NAN)
        );
    }
    write_jsonl(&args.out.join("eval.jsonl"), rows)?;
    fs::write(args.out.join("sweep.csv"), sweep_csv(&csv_rows))?;
    Ok(())
}

fn cmd_stats(args: &StatsArgs) -> anyhow::Result<()> {
    let cfg = args.config.resolve()?;
    let graph = load_graph(&cfg.data)?;
    let stats = dataset_stats(&graph, cfg.delta_quadruples, cfg.delta_seed);
    create_out(&args.out)?;
    let row = serde_json::to_value(&stats)?;
    println!("{}", serde_json::to_string(&row)?);
    write_jsonl(&args.out.join("stats.jsonl"), [row])
}

/// Returns whether the check passed.
fn cmd_gradcheck(args: &GradcheckArgs) -> anyhow::Result<bool> {
    let corrupt = match &args.corrupt_adjoint {
        Some(name) => Some((
            Primitive::from_name(name).ok_or_else(|| Error::config("corrupt_adjoint", format!("unknown primitive `{name}`")))?,
            args.corrupt_factor,
        )),
        None => None,
    };
    let report = training::grad_check(args.euclidean, corrupt)?;
    for g in &report.groups {
        println!("{:<28} {:>4} params  rel error {:.3e}", g.name, g.size, g.rel_error);
    }
    let failing = report.failing(GRADCHECK_TOLERANCE);
    if let Some(dir) = &args.out {
        create_out(dir)?;
        let rows = report.groups.iter().map(|g| serde_json::to_value(g).expect("serializable"));
        write_jsonl(&dir.join("gradcheck.jsonl"), rows)?;
    }
    if failing.is_empty() {
        println!("PASS: max relative error {:.3e}", report.max_error());
        Ok(true)
    } else {
        println!("FAIL: groups above {GRADCHECK_TOLERANCE:e}: {}", failing.join(", "));
        Ok(false)
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Train(a) => cmd_train(a).map(|_| true),
        Command::Eval(a) => cmd_eval(a).map(|_| true),
        Command::Stats(a) => cmd_stats(a).map(|_| true),
        Command::Gradcheck(a) => cmd_gradcheck(a),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(3),
        Err(e) => {
            eprintln!("error: {e:#}");
            let usage = matches!(e.downcast_ref::<Error>(), Some(Error::Config { .. }));
            ExitCode::from(if usage { 2 } else { 1 })
        }
    }
}
