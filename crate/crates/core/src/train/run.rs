//! A training run as a directory of artifacts.

use std::fmt::Write as _;
use std::fs;
use std::ops::ControlFlow;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::fit::{evaluate, fit, EpochStats, LabeledSet};
use super::metrics::MetricsReport;
use super::split::{build_scenario, ScenarioSplit};
use super::{protocol_class, Result, RunMode, Scenario, TrainConfig, TrainError};
use crate::io::{load_frames, DatasetManifest, MANIFEST_FILE};
use crate::model::{count_params, AnyModel, ModelKind, Network, Profile};
use crate::synth::Protocol;
use crate::tensor::{load_checkpoint, save_checkpoint, ParamStore};

pub const CONFIG_FILE: &str = "config.json";
pub const CURVE_FILE: &str = "loss_curve.csv";
pub const REPORT_FILE: &str = "report.json";
pub const CONFUSION_FILE: &str = "confusion.csv";
pub const CHECKPOINT_FILE: &str = "best.ckpt";

/// Everything that determines a run. Written to `config.json` with the
/// scenario seeds resolved.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    /// Dataset directory holding `manifest.json`.
    pub data: PathBuf,
    pub model: ModelKind,
    pub profile: Profile,
    pub mode: RunMode,
    pub scenario: Scenario,
    /// Scenario seeds to draw frames from. Empty means the first manifest
    /// seed for TTSD and every manifest seed for TTMD.
    pub seeds: Vec<u64>,
    /// Seed of the stratified split and the per-class cap.
    pub split_seed: u64,
    pub max_per_class: Option<usize>,
    pub train: TrainConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub model: ModelKind,
    pub profile: Profile,
    pub mode: RunMode,
    pub scenario: Scenario,
    pub seeds: Vec<u64>,
    /// Device ids in fingerprint-class order.
    pub classes: Vec<u32>,
    pub parameters: usize,
    pub train_frames: usize,
    pub val_frames: usize,
    pub test_frames: usize,
    pub test_seeds: Vec<u64>,
    pub epochs_run: usize,
    pub best_epoch: usize,
    pub test: MetricsReport,
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|source| TrainError::File { path: path.display().to_string(), source })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|source| TrainError::Json { path: path.display().to_string(), source })?;
    write_file(path, &(text + "\n"))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|source| TrainError::File { path: path.display().to_string(), source })?;
    serde_json::from_str(&text).map_err(|source| TrainError::Json { path: path.display().to_string(), source })
}

pub fn read_run_report(run_dir: &Path) -> Result<RunReport> {
    read_json(&run_dir.join(REPORT_FILE))
}

fn resolve_seeds(cfg: &RunConfig, manifest: &DatasetManifest) -> Vec<u64> {
    if !cfg.seeds.is_empty() {
        return cfg.seeds.clone();
    }
    match cfg.scenario {
        Scenario::Ttsd => manifest.scenarios.iter().take(1).copied().collect(),
        Scenario::Ttmd => manifest.scenarios.clone(),
    }
}

struct Prepared {
    manifest: DatasetManifest,
    split: ScenarioSplit,
    model: AnyModel,
    store: ParamStore<f32>,
    train: LabeledSet,
    val: LabeledSet,
    test: LabeledSet,
}

fn prepare(cfg: &RunConfig) -> Result<Prepared> {
    cfg.train.validate()?;
    let manifest = DatasetManifest::read(&cfg.data.join(MANIFEST_FILE))?;
    let seeds = resolve_seeds(cfg, &manifest);
    let split = build_scenario(&manifest, cfg.scenario, &seeds, cfg.mode, cfg.split_seed, cfg.max_per_class)?;

    let mut store = ParamStore::new();
    let protocol_head = (cfg.mode == RunMode::Mtl).then_some(Protocol::ALL.len());
    let model = AnyModel::build(cfg.model, cfg.profile, manifest.devices.len(), protocol_head, &mut store, cfg.train.seed)?;

    let labeled = |idx: &[usize]| -> Result<LabeledSet> {
        let sub = DatasetManifest { frames: idx.iter().map(|&i| manifest.frames[i].clone()).collect(), ..manifest.clone() };
        let frames = load_frames(&sub, &cfg.data)?;
        let views: Vec<&[_]> = frames.iter().map(|f| f.samples.as_slice()).collect();
        let fp = sub.frames.iter().map(|r| r.device).collect();
        let pp = sub.frames.iter().map(|r| protocol_class(manifest.protocol_of(r))).collect();
        LabeledSet::from_frames(&views, fp, pp, model.input_config())
    };
    let (train, val, test) = (labeled(&split.train)?, labeled(&split.val)?, labeled(&split.test)?);
    Ok(Prepared { manifest, split, model, store, train, val, test })
}

fn report_for(cfg: &RunConfig, p: &Prepared, parameters: usize, epochs_run: usize, best_epoch: usize, test: MetricsReport) -> RunReport {
    RunReport {
        model: cfg.model,
        profile: cfg.profile,
        mode: cfg.mode,
        scenario: cfg.scenario,
        seeds: p.split.seeds.clone(),
        classes: p.manifest.devices.clone(),
        parameters,
        train_frames: p.split.train.len(),
        val_frames: p.split.val.len(),
        test_frames: p.split.test.len(),
        test_seeds: ScenarioSplit::seeds_in(&p.manifest, &p.split.test),
        epochs_run,
        best_epoch,
        test,
    }
}

fn curve_csv(curve: &[EpochStats]) -> String {
    let mut s = String::from("epoch,train_loss,val_loss,val_acc_f,val_acc_p\n");
    for e in curve {
        let p = e.val_acc_p.map(|v| v.to_string()).unwrap_or_default();
        let _ = writeln!(s, "{},{},{},{},{}", e.epoch, e.train_loss, e.val_loss, e.val_acc_f, p);
    }
    s
}

fn confusion_csv(classes: &[u32], m: &[Vec<u64>]) -> String {
    let mut s = String::from("true\\pred");
    for c in classes {
        let _ = write!(s, ",{c}");
    }
    s.push('\n');
    for (c, row) in classes.iter().zip(m) {
        let _ = write!(s, "{c}");
        for v in row {
            let _ = write!(s, ",{v}");
        }
        s.push('\n');
    }
    s
}

/// Trains one configuration and writes its artifacts into `out`.
pub fn run_training(cfg: &RunConfig, out: &Path, on_epoch: impl FnMut(&EpochStats) -> ControlFlow<()>) -> Result<RunReport> {
    let mut p = prepare(cfg)?;
    fs::create_dir_all(out).map_err(|source| TrainError::File { path: out.display().to_string(), source })?;
    let effective = RunConfig { seeds: p.split.seeds.clone(), ..cfg.clone() };
    write_json(&out.join(CONFIG_FILE), &effective)?;

    let classes = p.manifest.devices.len();
    let task = cfg.mode.task();
    let outcome = fit(&p.model, &mut p.store, &p.train, &p.val, &cfg.train, task, classes, on_epoch)?;
    let test = evaluate(&p.model, &outcome.best, &p.test, task, classes)?;

    write_file(&out.join(CURVE_FILE), &curve_csv(&outcome.curve))?;
    save_checkpoint(&outcome.best, &out.join(CHECKPOINT_FILE))?;
    write_file(&out.join(CONFUSION_FILE), &confusion_csv(&p.manifest.devices, &test.confusion_fingerprint))?;
    let report = report_for(cfg, &p, count_params(&outcome.best), outcome.curve.len(), outcome.best_epoch, test);
    write_json(&out.join(REPORT_FILE), &report)?;
    Ok(report)
}

/// Re-scores a finished run's checkpoint on its test partition. `data`
/// overrides the dataset directory recorded in the run's config.
pub fn eval_run(run_dir: &Path, data: Option<&Path>) -> Result<RunReport> {
    let mut cfg: RunConfig = read_json(&run_dir.join(CONFIG_FILE))?;
    if let Some(d) = data {
        cfg.data = d.to_path_buf();
    }
    let mut p = prepare(&cfg)?;
    load_checkpoint(&mut p.store, &run_dir.join(CHECKPOINT_FILE))?;
    let prior = read_run_report(run_dir).ok();
    let test = evaluate(&p.model, &p.store, &p.test, cfg.mode.task(), p.manifest.devices.len())?;
    let (epochs, best) = prior.map_or((0, 0), |r| (r.epochs_run, r.best_epoch));
    Ok(report_for(&cfg, &p, count_params(&p.store), epochs, best, test))
}
