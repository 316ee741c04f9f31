use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::TrainConfig;
use super::data::{PatchSet, PatchStore};
use super::optim::Optimizer;
use super::split::SplitAssignment;
use crate::error::{Error, Result};
use crate::model::{ArchitectureConfig, Mode, Network, ProbabilityMatrix};

/// Salt separating the batch-order stream from weight initialisation.
const SHUFFLE_SALT: u64 = 0x5348_5546_464c_4531;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochMetrics {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    /// `None` when there is no validation data.
    pub val_loss: Option<f64>,
    pub val_acc: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainingRun {
    pub history: Vec<EpochMetrics>,
    /// Epoch whose weights were kept, by lowest validation loss (training
    /// loss without validation data). `None` if no epoch ran.
    pub best_epoch: Option<usize>,
    pub stopped_early: bool,
    /// Weights of `best_epoch`, or the initialisation.
    pub network: Network<f32>,
}

pub fn history_csv(history: &[EpochMetrics]) -> String {
    let mut out = String::from("epoch,train_loss,train_acc,val_loss,val_acc\n");
    let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
    for h in history {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            h.epoch,
            h.train_loss,
            h.train_acc,
            opt(h.val_loss),
            opt(h.val_acc)
        );
    }
    out
}

impl TrainingRun {
    pub fn history_csv(&self) -> String {
        history_csv(&self.history)
    }

    pub fn save_history(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.history_csv()).map_err(|e| Error::write(path, e))
    }
}

/// Trains on the train split's patches, validating on the val split's.
pub fn train(arch: &ArchitectureConfig, splits: &SplitAssignment, store: &PatchStore, config: &TrainConfig) -> Result<TrainingRun> {
    train_with(arch, splits, store, config, &mut |_| {})
}

pub fn train_with(
    arch: &ArchitectureConfig,
    splits: &SplitAssignment,
    store: &PatchStore,
    config: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochMetrics),
) -> Result<TrainingRun> {
    splits.validate()?;
    let train_set = store.gather(&splits.train_ids)?;
    let val_set = store.gather(&splits.val_ids)?;
    let held_out = store.gather(&splits.test_ids)?;
    splits.check_patch_leakage(
        train_set.sources().iter().map(String::as_str),
        val_set.sources().iter().chain(held_out.sources()).map(String::as_str),
    )?;
    let val = (!val_set.is_empty()).then_some(&val_set);
    train_on(arch, &train_set, val, config, on_epoch)
}

/// Training loop over explicit patch sets.
pub fn train_on(
    arch: &ArchitectureConfig,
    train_set: &PatchSet,
    val_set: Option<&PatchSet>,
    config: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochMetrics),
) -> Result<TrainingRun> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::TooFewSamples { needed: 1, got: 0 });
    }
    if let Some(&l) = train_set.labels().iter().chain(val_set.map_or(&[][..], |v| v.labels())).find(|&&l| l >= arch.num_classes) {
        return Err(Error::InvalidInput(format!("label {l} outside 0..{}", arch.num_classes)));
    }
    let mut net = Network::<f32>::new(arch, config.seed)?;
    let mut best_net = net.clone();
    let mut optimizer = Optimizer::new(config.optimizer, net.params());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ SHUFFLE_SALT);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = Vec::new();
    let mut best: Option<(f64, usize)> = None;
    let mut stale = 0;
    let mut stopped_early = false;
    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct) = (0.0, 0);
        for chunk in order.chunks(config.batch_size) {
            // Fixed in-batch order keeps batch statistics reproducible.
            let mut idx = chunk.to_vec();
            idx.sort_unstable();
            let trace = net.forward_trace(&train_set.batch(&idx), Mode::Train)?;
            let b = net.backward(trace, &train_set.batch_labels(&idx))?;
            if !b.loss.is_finite() {
                return Err(Error::Divergence { epoch });
            }
            optimizer.step(net.params_mut());
            loss_sum += b.loss * b.count as f64;
            correct += b.correct;
        }
        let n = train_set.len() as f64;
        let (val_loss, val_acc) = match val_set {
            Some(v) => {
                let e = evaluate_set(&net, v, config.batch_size)?;
                (Some(e.loss), Some(e.accuracy))
            }
            None => (None, None),
        };
        let m = EpochMetrics {
            epoch,
            train_loss: loss_sum / n,
            train_acc: correct as f64 / n,
            val_loss,
            val_acc,
        };
        if !m.train_loss.is_finite() || val_loss.is_some_and(|v| !v.is_finite()) {
            return Err(Error::Divergence { epoch });
        }
        on_epoch(&m);
        history.push(m);
        let score = val_loss.unwrap_or(m.train_loss);
        if best.is_none_or(|(b, _)| score < b) {
            best = Some((score, epoch));
            best_net = net.clone();
            stale = 0;
        } else {
            stale += 1;
        }
        if config.target_train_accuracy.is_some_and(|t| m.train_acc >= t) {
            break;
        }
        if config.early_stop_patience > 0 && stale >= config.early_stop_patience {
            stopped_early = true;
            break;
        }
    }
    Ok(TrainingRun {
        history,
        best_epoch: best.map(|(_, e)| e),
        stopped_early,
        network: best_net,
    })
}

/// Inference-mode predictions with mean cross-entropy and accuracy.
#[derive(Debug, Clone)]
pub struct SetEvaluation {
    pub probabilities: ProbabilityMatrix,
    pub loss: f64,
    pub accuracy: f64,
}

pub fn evaluate_set(net: &Network<f32>, set: &PatchSet, batch_size: usize) -> Result<SetEvaluation> {
    let k = net.num_classes();
    if set.is_empty() {
        return Ok(SetEvaluation {
            probabilities: ProbabilityMatrix::new(k, Vec::new())?,
            loss: f64::NAN,
            accuracy: f64::NAN,
        });
    }
    let mut probe = net.clone();
    let mut probs = Vec::with_capacity(set.len() * k);
    let (mut loss, mut correct) = (0.0, 0);
    let all: Vec<usize> = (0..set.len()).collect();
    for idx in all.chunks(batch_size.max(1)) {
        let trace = probe.forward_trace(&set.batch(idx), Mode::Eval)?;
        let b = probe.loss(&trace, &set.batch_labels(idx))?;
        loss += b.loss * b.count as f64;
        correct += b.correct;
        probs.extend_from_slice(probe.trace_output(&trace).as_slice());
    }
    let n = set.len() as f64;
    Ok(SetEvaluation {
        probabilities: ProbabilityMatrix::new(k, probs)?,
        loss: loss / n,
        accuracy: correct as f64 / n,
    })
}

/// Inference-mode class probabilities for every patch in `set`.
pub fn predict_set(net: &Network<f32>, set: &PatchSet, batch_size: usize) -> Result<ProbabilityMatrix> {
    let k = net.num_classes();
    let mut probs = Vec::with_capacity(set.len() * k);
    let all: Vec<usize> = (0..set.len()).collect();
    for idx in all.chunks(batch_size.max(1)) {
        probs.extend_from_slice(net.forward(&set.batch(idx))?.as_slice());
    }
    ProbabilityMatrix::new(k, probs)
}
