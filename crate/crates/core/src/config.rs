//! Run configuration with a flat `key = value` text form.
//!
//! [`RunConfig::to_text`] writes every key with its resolved value, and
//! [`RunConfig::from_text`] reads that output back to an identical config.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::graph_data::{DataFormat, SplitSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Padding {
    Origin,
    Random,
}

impl fmt::Display for Padding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Padding::Origin => "origin",
            Padding::Random => "random",
        })
    }
}

impl FromStr for Padding {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "origin" => Ok(Padding::Origin),
            "random" => Ok(Padding::Random),
            other => Err(Error::config("padding", format!("expected origin or random, got `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Task {
    Link,
    NewLink,
    Both,
}

impl Task {
    pub fn includes_link(self) -> bool {
        matches!(self, Task::Link | Task::Both)
    }

    pub fn includes_new_link(self) -> bool {
        matches!(self, Task::NewLink | Task::Both)
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Link => "link",
            Task::NewLink => "new_link",
            Task::Both => "both",
        })
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "link" => Ok(Task::Link),
            "new_link" => Ok(Task::NewLink),
            "both" => Ok(Task::Both),
            other => Err(Error::config("task", format!("expected link, new_link or both, got `{other}`"))),
        }
    }
}

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub dim: usize,
    /// Truncated diffusion step `K`.
    pub diffusion_steps: usize,
    /// Number of HDGC layers `L`.
    pub hdgc_layers: usize,
    /// HDCC kernel size `S`.
    pub kernel_size: usize,
    /// Dilation cycle length `D`; the history window is `S^D`.
    pub dilation_cycle: usize,
    /// Number of gated HDCC layers `D′`.
    pub hdcc_layers: usize,
    pub r: f64,
    pub s: f64,
    pub lambda: f64,
    pub no_hdgc: bool,
    pub no_hdcc: bool,
    pub euclidean: bool,
    pub padding: Padding,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            dim: 16,
            diffusion_steps: 2,
            hdgc_layers: 2,
            kernel_size: 2,
            dilation_cycle: 3,
            hdcc_layers: 4,
            r: 2.0,
            s: 1.0,
            lambda: 1.0,
            no_hdgc: false,
            no_hdcc: false,
            euclidean: false,
            padding: Padding::Origin,
        }
    }
}

impl ModelConfig {
    pub fn window(&self) -> usize {
        self.kernel_size.pow(self.dilation_cycle as u32)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("dim", self.dim),
            ("K", self.diffusion_steps),
            ("L", self.hdgc_layers),
            ("S", self.kernel_size),
            ("D", self.dilation_cycle),
            ("layers", self.hdcc_layers),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::config(name, "must be positive"));
            }
        }
        if self.window() > 4096 {
            return Err(Error::config("D", format!("history window S^D = {} is too large", self.window())));
        }
        if !(self.r.is_finite() && self.r > 0.0) {
            return Err(Error::config("r", "must be finite and positive"));
        }
        if !(self.s.is_finite() && self.s > 0.0) {
            return Err(Error::config("s", "must be finite and positive"));
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::config("lambda", "must be finite and non-negative"));
        }
        Ok(())
    }
}

/// Optimization schedule and seeds.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    /// Epochs without a new best training loss before stopping.
    pub patience: usize,
    pub seed_init: u64,
    pub seed_neg_train: u64,
    pub seed_neg_eval: u64,
    /// Take an optimizer step after every snapshot instead of once per epoch.
    pub per_snapshot_step: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.001,
            epochs: 200,
            patience: 30,
            seed_init: 0,
            seed_neg_train: 1,
            seed_neg_eval: 2,
            per_snapshot_step: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::config("lr", "must be finite and positive"));
        }
        if self.patience == 0 {
            return Err(Error::config("patience", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DataConfig {
    pub path: Option<PathBuf>,
    pub format: DataFormat,
    pub snapshots: usize,
    pub split: SplitSpec,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            path: None,
            format: DataFormat::Tsv,
            snapshots: 11,
            split: SplitSpec::Ratio(8, 3),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub task: Task,
    /// Independent repetitions; run `i` offsets every seed by `i`.
    pub runs: usize,
    pub delta_quadruples: u64,
    pub delta_seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data: DataConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            task: Task::Both,
            runs: 1,
            delta_quadruples: 1_000_000,
            delta_seed: 0,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::config(key, format!("cannot parse `{value}`")))
}

impl RunConfig {
    /// Every recognised key, in the order written by [`RunConfig::to_text`].
    pub const KEYS: [&'static str; 28] = [
        "data",
        "format",
        "snapshots",
        "split",
        "dim",
        "K",
        "L",
        "S",
        "D",
        "layers",
        "r",
        "s",
        "lambda",
        "no_hdgc",
        "no_hdcc",
        "euclidean",
        "padding",
        "lr",
        "epochs",
        "patience",
        "seed_init",
        "seed_neg_train",
        "seed_neg_eval",
        "per_snapshot_step",
        "task",
        "runs",
        "delta_quadruples",
        "delta_seed",
    ];

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "data" => self.data.path = if v.is_empty() { None } else { Some(PathBuf::from(v)) },
            "format" => self.data.format = v.parse()?,
            "snapshots" => self.data.snapshots = parse(key, v)?,
            "split" => self.data.split = v.parse()?,
            "dim" => self.model.dim = parse(key, v)?,
            "K" => self.model.diffusion_steps = parse(key, v)?,
            "L" => self.model.hdgc_layers = parse(key, v)?,
            "S" => self.model.kernel_size = parse(key, v)?,
            "D" => self.model.dilation_cycle = parse(key, v)?,
            "layers" => self.model.hdcc_layers = parse(key, v)?,
            "r" => self.model.r = parse(key, v)?,
            "s" => self.model.s = parse(key, v)?,
            "lambda" => self.model.lambda = parse(key, v)?,
            "no_hdgc" => self.model.no_hdgc = parse(key, v)?,
            "no_hdcc" => self.model.no_hdcc = parse(key, v)?,
            "euclidean" => self.model.euclidean = parse(key, v)?,
            "padding" => self.model.padding = v.parse()?,
            "lr" => self.train.lr = parse(key, v)?,
            "epochs" => self.train.epochs = parse(key, v)?,
            "patience" => self.train.patience = parse(key, v)?,
            "seed_init" => self.train.seed_init = parse(key, v)?,
            "seed_neg_train" => self.train.seed_neg_train = parse(key, v)?,
            "seed_neg_eval" => self.train.seed_neg_eval = parse(key, v)?,
            "per_snapshot_step" => self.train.per_snapshot_step = parse(key, v)?,
            "task" => self.task = v.parse()?,
            "runs" => self.runs = parse(key, v)?,
            "delta_quadruples" => self.delta_quadruples = parse(key, v)?,
            "delta_seed" => self.delta_seed = parse(key, v)?,
            other => return Err(Error::config(other, "unknown configuration key")),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "data" => self
                .data
                .path
                .as_ref()
                .map(|p| p.display().to_string())
                .unwrap_or_default(),
            "format" => self.data.format.to_string(),
            "snapshots" => self.data.snapshots.to_string(),
            "split" => self.data.split.to_string(),
            "dim" => self.model.dim.to_string(),
            "K" => self.model.diffusion_steps.to_string(),
            "L" => self.model.hdgc_layers.to_string(),
            "S" => self.model.kernel_size.to_string(),
            "D" => self.model.dilation_cycle.to_string(),
            "layers" => self.model.hdcc_layers.to_string(),
            "r" => self.model.r.to_string(),
            "s" => self.model.s.to_string(),
            "lambda" => self.model.lambda.to_string(),
            "no_hdgc" => self.model.no_hdgc.to_string(),
            "no_hdcc" => self.model.no_hdcc.to_string(),
            "euclidean" => self.model.euclidean.to_string(),
            "padding" => self.model.padding.to_string(),
            "lr" => self.train.lr.to_string(),
            "epochs" => self.train.epochs.to_string(),
            "patience" => self.train.patience.to_string(),
            "seed_init" => self.train.seed_init.to_string(),
            "seed_neg_train" => self.train.seed_neg_train.to_string(),
            "seed_neg_eval" => self.train.seed_neg_eval.to_string(),
            "per_snapshot_step" => self.train.per_snapshot_step.to_string(),
            "task" => self.task.to_string(),
            "runs" => self.runs.to_string(),
            "delta_quadruples" => self.delta_quadruples.to_string(),
            "delta_seed" => self.delta_seed.to_string(),
            _ => return None,
        })
    }

    /// Applies `key = value` lines on top of the defaults. Blank lines and
    /// `#` comments are ignored.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (k, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                line: k + 1,
                message: format!("expected `key = value`, got `{line}`"),
            })?;
            self.set(key.trim(), value)?;
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for key in Self::KEYS {
            out.push_str(key);
            out.push_str(" = ");
            out.push_str(&self.get(key).expect("listed key"));
            out.push('\n');
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        if self.data.snapshots < 2 {
            return Err(Error::config("snapshots", "at least 2 snapshots are required"));
        }
        if self.runs == 0 {
            return Err(Error::config("runs", "must be positive"));
        }
        Ok(())
    }

    /// The config for repetition `run`: every seed shifted by `run`.
    pub fn for_run(&self, run: usize) -> RunConfig {
        let mut c = self.clone();
        let k = run as u64;
        c.train.seed_init = c.train.seed_init.wrapping_add(k);
        c.train.seed_neg_train = c.train.seed_neg_train.wrapping_add(k);
        c.train.seed_neg_eval = c.train.seed_neg_eval.wrapping_add(k);
        c.runs = 1;
        c
    }
}
