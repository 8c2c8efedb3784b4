//! Scenario construction, the training loop, metrics and run orchestration.

mod fit;
mod metrics;
mod run;
mod split;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use fit::{evaluate, fit, loss_on, EpochStats, FitOutcome, LabeledSet};
pub use metrics::{compare_runs, metrics_from_predictions, Comparison, MetricsReport, Table1Row, Table2Row, MISSING};
pub use run::{eval_run, read_run_report, run_training, RunConfig, RunReport, CONFIG_FILE, CHECKPOINT_FILE, CONFUSION_FILE, CURVE_FILE, REPORT_FILE};
pub use split::{build_scenario, split_70_15_15, ScenarioSplit};

use crate::io::IoError;
use crate::model::{ModelError, TaskMode};
use crate::synth::Protocol;
use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error(transparent)]
    Io(#[from] IoError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("class {class} has {count} frames; at least 3 are needed to populate train, val and test")]
    SmallClass { class: String, count: usize },
    #[error("{kind} needs {need} scenario seeds, got {got}")]
    Seeds { kind: &'static str, need: &'static str, got: usize },
    #[error("scenario seed {0} is not in the manifest")]
    UnknownSeed(u64),
    #[error("no frames match the requested protocols and seeds")]
    NoFrames,
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("loss became non-finite at epoch {epoch}, batch {batch} ({detail}); lower the learning rate")]
    Diverged { epoch: usize, batch: usize, detail: String },
    #[error("nothing to evaluate")]
    Empty,
    #[error("{path}: {source}")]
    Json { path: String, source: serde_json::Error },
    #[error("{path}: {source}")]
    File { path: String, source: std::io::Error },
}

pub type Result<T, E = TrainError> = std::result::Result<T, E>;

/// Train-and-test same day, or on a pool of mixed days.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scenario {
    Ttsd,
    Ttmd,
}

impl Scenario {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "ttsd" => Some(Scenario::Ttsd),
            "ttmd" => Some(Scenario::Ttmd),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Scenario::Ttsd => "ttsd",
            Scenario::Ttmd => "ttmd",
        }
    }
}

/// Which frames a run sees and which heads it trains.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunMode {
    StlWifi,
    StlBt,
    Mtl,
}

impl RunMode {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "stl-wifi" => Some(RunMode::StlWifi),
            "stl-bt" => Some(RunMode::StlBt),
            "mtl" => Some(RunMode::Mtl),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            RunMode::StlWifi => "stl-wifi",
            RunMode::StlBt => "stl-bt",
            RunMode::Mtl => "mtl",
        }
    }

    pub fn protocols(self) -> &'static [Protocol] {
        match self {
            RunMode::StlWifi => &[Protocol::Wifi],
            RunMode::StlBt => &[Protocol::Bt],
            RunMode::Mtl => &Protocol::ALL,
        }
    }

    pub fn task(self) -> TaskMode {
        match self {
            RunMode::Mtl => TaskMode::MultiTask,
            _ => TaskMode::SingleTask,
        }
    }
}

/// Protocol-head class of a protocol: its position in [`Protocol::ALL`].
pub fn protocol_class(p: Protocol) -> usize {
    Protocol::ALL.iter().position(|&q| q == p).expect("protocol listed in ALL")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Weight of the fingerprint cross-entropy.
    pub lambda_f: f64,
    /// Weight of the protocol cross-entropy; ignored in single-task runs.
    pub lambda_p: f64,
    pub seed: u64,
    /// Compute each batch sequentially so results do not depend on the
    /// thread count.
    pub deterministic: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { lr: 0.1, momentum: 0.9, epochs: 150, batch_size: 32, lambda_f: 1.0, lambda_p: 1.0, seed: 0, deterministic: false }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(TrainError::Config(m.into()));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch size must be at least 1");
        }
        if self.lambda_f < 0.0 || self.lambda_p < 0.0 || self.lambda_f + self.lambda_p == 0.0 {
            return bad("task weights must be non-negative and not both zero");
        }
        Ok(())
    }
}
