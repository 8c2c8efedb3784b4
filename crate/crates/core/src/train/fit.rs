use std::ops::ControlFlow;

use num_complex::Complex32;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{metrics_from_predictions, MetricsReport};
use super::{Result, TrainConfig, TrainError};
use crate::model::{AnyModel, Features, InputConfig, Network, TaskMode};
use crate::synth::derive_seed;
use crate::tensor::{sgd_momentum_step, ParamGrads, ParamStore, Tape, TensorError, Var};

/// Network inputs with their labels.
#[derive(Clone, Debug, Default)]
pub struct LabeledSet {
    pub features: Vec<Features<f32>>,
    pub fingerprint: Vec<usize>,
    pub protocol: Vec<usize>,
}

impl LabeledSet {
    /// Extracts features for every frame, in order.
    pub fn from_frames(frames: &[&[Complex32]], fingerprint: Vec<usize>, protocol: Vec<usize>, cfg: &InputConfig) -> Result<Self> {
        let features = frames.par_iter().map(|f| Features::from_frame(f, cfg)).collect::<Result<Vec<_>, _>>()?;
        Ok(Self { features, fingerprint, protocol })
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    /// Accuracy of the fingerprint head on each training example at the
    /// moment it was visited.
    pub train_acc_f: f64,
    pub val_loss: f64,
    pub val_acc_f: f64,
    pub val_acc_p: Option<f64>,
}

pub struct FitOutcome {
    pub curve: Vec<EpochStats>,
    /// 1-based epoch whose parameters are in `best`.
    pub best_epoch: usize,
    pub best_score: f64,
    pub best: ParamStore<f32>,
}

fn argmax(p: &[f32]) -> usize {
    p.iter().enumerate().fold(0, |best, (i, &v)| if v > p[best] { i } else { best })
}

struct SampleOut {
    loss: f64,
    loss_f: f64,
    loss_p: f64,
    pred_f: usize,
    pred_p: Option<usize>,
}

/// Builds the weighted loss of one example on `tape`.
fn sample_loss(model: &AnyModel, tape: &mut Tape<'_, f32>, set: &LabeledSet, i: usize, task: TaskMode, lf: f32, lp: f32) -> Result<(Var, SampleOut)> {
    let heads = model.forward(tape, &set.features[i], task)?;
    let ce_f = tape.cross_entropy(heads.fingerprint, set.fingerprint[i])?;
    let mut loss = tape.scale(ce_f, lf)?;
    let mut out = SampleOut { loss: 0.0, loss_f: tape.value(ce_f)[0] as f64, loss_p: 0.0, pred_f: argmax(tape.value(heads.fingerprint)), pred_p: None };
    if let (TaskMode::MultiTask, Some(p)) = (task, heads.protocol) {
        let ce_p = tape.cross_entropy(p, set.protocol[i])?;
        out.loss_p = tape.value(ce_p)[0] as f64;
        out.pred_p = Some(argmax(tape.value(p)));
        let weighted = tape.scale(ce_p, lp)?;
        loss = tape.add(loss, weighted)?;
    }
    out.loss = tape.value(loss)[0] as f64;
    Ok((loss, out))
}

fn infer(model: &AnyModel, store: &ParamStore<f32>, set: &LabeledSet, i: usize, task: TaskMode) -> Result<SampleOut> {
    let mut tape = Tape::with_params(store);
    Ok(sample_loss(model, &mut tape, set, i, task, 1.0, 1.0)?.1)
}

/// Top-1 metrics of `set` under the current parameters.
pub fn evaluate(model: &AnyModel, store: &ParamStore<f32>, set: &LabeledSet, task: TaskMode, classes: usize) -> Result<MetricsReport> {
    if set.is_empty() {
        return Err(TrainError::Empty);
    }
    let outs = (0..set.len()).into_par_iter().map(|i| infer(model, store, set, i, task)).collect::<Result<Vec<_>>>()?;
    let pf: Vec<usize> = outs.iter().map(|o| o.pred_f).collect();
    let pp: Option<Vec<usize>> = outs.iter().map(|o| o.pred_p).collect();
    let mut report = metrics_from_predictions(&pf, &set.fingerprint, classes, pp.as_deref().map(|p| (p, set.protocol.as_slice())))?;
    let n = set.len() as f64;
    report.mean_loss_fingerprint = outs.iter().map(|o| o.loss_f).sum::<f64>() / n;
    report.mean_loss_protocol = pp.map(|_| outs.iter().map(|o| o.loss_p).sum::<f64>() / n);
    Ok(report)
}

/// Mean weighted loss of `set`, the quantity training minimizes.
pub fn loss_on(model: &AnyModel, store: &ParamStore<f32>, set: &LabeledSet, task: TaskMode, cfg: &TrainConfig, classes: usize) -> Result<f64> {
    let r = evaluate(model, store, set, task, classes)?;
    Ok(cfg.lambda_f * r.mean_loss_fingerprint + cfg.lambda_p * r.mean_loss_protocol.unwrap_or(0.0))
}

fn diverged(epoch: usize, batch: usize, e: TrainError) -> TrainError {
    match e {
        TrainError::Tensor(TensorError::NonFinite { op }) => TrainError::Diverged { epoch, batch, detail: format!("non-finite output of {op}") },
        TrainError::Model(crate::model::ModelError::Tensor(TensorError::NonFinite { op })) => {
            TrainError::Diverged { epoch, batch, detail: format!("non-finite output of {op}") }
        }
        other => other,
    }
}

/// Gradient of the summed, `scale`-weighted loss over `idx`, plus per-sample outputs.
#[allow(clippy::too_many_arguments)]
fn batch_grads(
    model: &AnyModel,
    store: &ParamStore<f32>,
    set: &LabeledSet,
    idx: &[usize],
    task: TaskMode,
    w: (f32, f32),
    scale: f32,
    acc: &mut ParamGrads<f32>,
) -> Result<Vec<SampleOut>> {
    let mut outs = Vec::with_capacity(idx.len());
    for &i in idx {
        let mut tape = Tape::with_params(store);
        let (loss, out) = sample_loss(model, &mut tape, set, i, task, w.0, w.1)?;
        tape.backward(loss)?.accumulate_into(acc, scale);
        outs.push(out);
    }
    Ok(outs)
}

/// Mini-batch SGD with momentum. The batch gradient is the mean of the
/// per-example gradients. After every epoch the validation set is scored
/// and the parameters with the best score (fingerprint accuracy, or the
/// mean of both heads' accuracies when multi-task) are kept; ties keep the
/// earlier epoch. `on_epoch` may stop training early.
#[allow(clippy::too_many_arguments)]
pub fn fit(
    model: &AnyModel,
    store: &mut ParamStore<f32>,
    train: &LabeledSet,
    val: &LabeledSet,
    cfg: &TrainConfig,
    task: TaskMode,
    classes: usize,
    mut on_epoch: impl FnMut(&EpochStats) -> ControlFlow<()>,
) -> Result<FitOutcome> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(TrainError::Empty);
    }
    let w = (cfg.lambda_f as f32, cfg.lambda_p as f32);
    let (lr, mu) = (cfg.lr as f32, cfg.momentum as f32);
    let threads = if cfg.deterministic { 1 } else { rayon::current_num_threads() };
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut acc = store.zeros_like_grads();
    let mut curve = Vec::with_capacity(cfg.epochs);
    let mut best = (0usize, f64::NEG_INFINITY, store.clone());

    for epoch in 1..=cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[cfg.seed, epoch as u64]));
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct) = (0.0f64, 0usize);
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let scale = 1.0 / batch.len() as f32;
            let frozen = &*store;
            let outs = if threads <= 1 || batch.len() < 2 * threads {
                batch_grads(model, frozen, train, batch, task, w, scale, &mut acc)
            } else {
                // contiguous slices, partial sums added back in slice order
                let per = batch.len().div_ceil(threads);
                let parts = batch
                    .par_chunks(per)
                    .map(|idx| {
                        let mut part = frozen.zeros_like_grads();
                        batch_grads(model, frozen, train, idx, task, w, scale, &mut part).map(|o| (part, o))
                    })
                    .collect::<Result<Vec<_>>>();
                parts.map(|parts| {
                    parts
                        .into_iter()
                        .flat_map(|(part, o)| {
                            acc.add_assign(&part);
                            o
                        })
                        .collect()
                })
            }
            .map_err(|e| diverged(epoch, b, e))?;
            for (o, &i) in outs.iter().zip(batch) {
                if !o.loss.is_finite() {
                    return Err(TrainError::Diverged { epoch, batch: b, detail: format!("loss {}", o.loss) });
                }
                loss_sum += o.loss;
                correct += usize::from(o.pred_f == train.fingerprint[i]);
            }
            store.accumulate(&acc, 1.0)?;
            sgd_momentum_step(store, lr, mu);
            acc.0.iter_mut().for_each(|g| g.iter_mut().for_each(|v| *v = 0.0));
        }

        let v = evaluate(model, store, val, task, classes).map_err(|e| diverged(epoch, 0, e))?;
        let stats = EpochStats {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            train_acc_f: correct as f64 / train.len() as f64,
            val_loss: cfg.lambda_f * v.mean_loss_fingerprint + cfg.lambda_p * v.mean_loss_protocol.unwrap_or(0.0),
            val_acc_f: v.top1_fingerprint,
            val_acc_p: v.top1_protocol,
        };
        let score = match stats.val_acc_p {
            Some(p) => 0.5 * (stats.val_acc_f + p),
            None => stats.val_acc_f,
        };
        if score > best.1 {
            best = (epoch, score, store.clone());
        }
        let flow = on_epoch(&stats);
        curve.push(stats);
        if flow.is_break() {
            break;
        }
    }
    Ok(FitOutcome { curve, best_epoch: best.0, best_score: best.1, best: best.2 })
}
