use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::run::RunReport;
use super::{Result, RunMode, Scenario, TrainError};
use crate::model::ModelKind;

/// Placeholder for a metric a run does not produce.
pub const MISSING: &str = "—";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub frames: usize,
    pub top1_fingerprint: f64,
    pub top1_protocol: Option<f64>,
    /// Row = true class, column = predicted class.
    pub confusion_fingerprint: Vec<Vec<u64>>,
    /// One-vs-rest fallout `FP / (FP + TN)` per fingerprint class.
    pub per_class_false_alarm: Vec<f64>,
    pub confusion_protocol: Option<Vec<Vec<u64>>>,
    pub mean_loss_fingerprint: f64,
    pub mean_loss_protocol: Option<f64>,
}

fn confusion(pred: &[usize], truth: &[usize], classes: usize) -> Result<Vec<Vec<u64>>> {
    let mut m = vec![vec![0u64; classes]; classes];
    for (&p, &t) in pred.iter().zip(truth) {
        if p >= classes || t >= classes {
            return Err(TrainError::Config(format!("label {} outside {classes} classes", p.max(t))));
        }
        m[t][p] += 1;
    }
    Ok(m)
}

fn accuracy(m: &[Vec<u64>]) -> f64 {
    let total: u64 = m.iter().flatten().sum();
    let hit: u64 = (0..m.len()).map(|i| m[i][i]).sum();
    hit as f64 / total as f64
}

/// Builds a report from predicted and true labels. `protocol` pairs
/// predictions with truth for the second head. Losses are left at zero.
pub fn metrics_from_predictions(pred: &[usize], truth: &[usize], classes: usize, protocol: Option<(&[usize], &[usize])>) -> Result<MetricsReport> {
    if pred.is_empty() {
        return Err(TrainError::Empty);
    }
    if pred.len() != truth.len() {
        return Err(TrainError::Config(format!("{} predictions for {} labels", pred.len(), truth.len())));
    }
    let cm = confusion(pred, truth, classes)?;
    let n = pred.len() as u64;
    let far = (0..classes)
        .map(|c| {
            let fp: u64 = (0..classes).filter(|&t| t != c).map(|t| cm[t][c]).sum();
            let negatives: u64 = n - cm[c].iter().sum::<u64>();
            if negatives == 0 {
                0.0
            } else {
                fp as f64 / negatives as f64
            }
        })
        .collect();
    let cp = match protocol {
        Some((p, t)) => Some(confusion(p, t, crate::synth::Protocol::ALL.len())?),
        None => None,
    };
    Ok(MetricsReport {
        frames: pred.len(),
        top1_fingerprint: accuracy(&cm),
        top1_protocol: cp.as_deref().map(accuracy),
        confusion_fingerprint: cm,
        per_class_false_alarm: far,
        confusion_protocol: cp,
        mean_loss_fingerprint: 0.0,
        mean_loss_protocol: None,
    })
}

/// Single-task fingerprint accuracy per scenario and waveform, one column per model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Table1Row {
    pub scenario: Scenario,
    pub waveform: String,
    pub xdom: Option<f64>,
    pub baseline: Option<f64>,
    pub runs: usize,
}

/// Protocol and fingerprint accuracy per scenario, model and mode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Table2Row {
    pub scenario: Scenario,
    pub model: ModelKind,
    pub mode: RunMode,
    pub protocol_acc: Option<f64>,
    pub fingerprint_acc: f64,
    pub runs: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub table1: Vec<Table1Row>,
    pub table2: Vec<Table2Row>,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| MISSING.to_string(), |x| format!("{x:.4}"))
}

/// Groups run reports and averages repeated runs (different seeds) of the
/// same configuration.
pub fn compare_runs(reports: &[RunReport]) -> Comparison {
    let mut t1: BTreeMap<(Scenario, RunMode), BTreeMap<ModelKind, Vec<f64>>> = BTreeMap::new();
    let mut t2: BTreeMap<(Scenario, ModelKind, RunMode), (Vec<f64>, Vec<f64>)> = BTreeMap::new();
    for r in reports {
        if r.mode != RunMode::Mtl {
            t1.entry((r.scenario, r.mode)).or_default().entry(r.model).or_default().push(r.test.top1_fingerprint);
        }
        let e = t2.entry((r.scenario, r.model, r.mode)).or_default();
        e.0.push(r.test.top1_fingerprint);
        if let Some(p) = r.test.top1_protocol {
            e.1.push(p);
        }
    }
    let table1 = t1
        .into_iter()
        .map(|((scenario, mode), by_model)| {
            let get = |k| by_model.get(&k).map(|v: &Vec<f64>| mean(v));
            Table1Row {
                scenario,
                waveform: if mode == RunMode::StlWifi { "wifi" } else { "bt" }.to_string(),
                xdom: get(ModelKind::Xdom),
                baseline: get(ModelKind::Baseline),
                runs: by_model.values().map(Vec::len).sum(),
            }
        })
        .collect();
    let table2 = t2
        .into_iter()
        .map(|((scenario, model, mode), (f, p))| Table2Row {
            scenario,
            model,
            mode,
            protocol_acc: (!p.is_empty()).then(|| mean(&p)),
            fingerprint_acc: mean(&f),
            runs: f.len(),
        })
        .collect();
    Comparison { table1, table2 }
}

impl Comparison {
    pub fn table1_csv(&self) -> String {
        let mut s = String::from("scenario,waveform,xdom,baseline,runs\n");
        for r in &self.table1 {
            let _ = writeln!(s, "{},{},{},{},{}", r.scenario.as_str(), r.waveform, cell(r.xdom), cell(r.baseline), r.runs);
        }
        s
    }

    pub fn table2_csv(&self) -> String {
        let mut s = String::from("scenario,model,mode,protocol_acc,fingerprint_acc,runs\n");
        for r in &self.table2 {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{}",
                r.scenario.as_str(),
                r.model.as_str(),
                r.mode.as_str(),
                cell(r.protocol_acc),
                cell(Some(r.fingerprint_acc)),
                r.runs
            );
        }
        s
    }
}
