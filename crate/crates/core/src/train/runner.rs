use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::Checkpoint;
use crate::data::Split;
use crate::error::{Error, Result};
use crate::exec::{map_indexed, ExecMode};
use crate::io::write_atomic;
use crate::model::{argmax, Model, Network};
use crate::params::ParamSet;
use crate::train::dataset::Dataset;
use crate::train::optim::Sgd;
use crate::train::schedule::{lr_at, TrainRunConfig};

pub const METRICS_FILE: &str = "metrics.tsv";
pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const FINAL_CHECKPOINT: &str = "final.ckpt";
const METRICS_HEADER: &str = "epoch\tsplit\tloss\taccuracy\tlr";

/// One line of the metrics log. Train loss is the mean minibatch loss seen
/// during the epoch; train accuracy comes from a pass over the training set
/// after the epoch's last update.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub split: Split,
    pub loss: f64,
    pub accuracy: f64,
    pub lr: f64,
}

pub fn format_metrics(rows: &[EpochMetrics]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}",
            r.epoch, r.split, r.loss, r.accuracy, r.lr
        );
    }
    out
}

pub fn parse_metrics(text: &str) -> Result<Vec<EpochMetrics>> {
    let mut lines = text.lines();
    if lines.next() != Some(METRICS_HEADER) {
        return Err(Error::format("metrics log", "missing header"));
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let bad = |why: &str| Error::format("metrics log", format!("line {}: {why}", i + 2));
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 5 {
                return Err(bad("expected 5 fields"));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad("bad number"));
            Ok(EpochMetrics {
                epoch: f[0].parse().map_err(|_| bad("bad epoch"))?,
                split: f[1].parse().map_err(|_| bad("bad split"))?,
                loss: num(f[2])?,
                accuracy: num(f[3])?,
                lr: num(f[4])?,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub accuracy: f64,
    pub logits: Vec<Vec<f64>>,
    pub predictions: Vec<usize>,
}

/// Mean loss and top-1 accuracy of `model` on every example.
pub fn evaluate(model: &Model, data: &Dataset, mode: ExecMode) -> Result<Evaluation> {
    if data.is_empty() {
        return Err(Error::invalid("cannot evaluate on an empty dataset"));
    }
    let rows = map_indexed(mode, data.len(), |i| -> Result<(f64, Vec<f64>)> {
        let logits = model.network.logits(&model.params.bind_frozen(), &data.input(i))?;
        let loss = logits.cross_entropy(data.label(i))?.item()?;
        Ok((loss, logits.to_vec()))
    });
    let mut loss = 0.0;
    let mut correct = 0usize;
    let mut logits = Vec::with_capacity(rows.len());
    let mut predictions = Vec::with_capacity(rows.len());
    for (i, row) in rows.into_iter().enumerate() {
        let (l, z) = row?;
        let pred = argmax(&z);
        loss += l;
        correct += usize::from(pred == data.label(i));
        predictions.push(pred);
        logits.push(z);
    }
    let n = data.len() as f64;
    Ok(Evaluation {
        loss: loss / n,
        accuracy: correct as f64 / n,
        logits,
        predictions,
    })
}

/// Mean loss and mean gradient over the examples at `indices`.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchGradient {
    pub loss: f64,
    pub grads: Vec<Option<Vec<f64>>>,
}

/// Per-example gradients, possibly computed in parallel, reduced in index
/// order so the result does not depend on `mode`.
pub fn batch_gradient(
    network: &Network,
    params: &ParamSet,
    data: &Dataset,
    indices: &[usize],
    mode: ExecMode,
) -> Result<BatchGradient> {
    if indices.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let per_example = map_indexed(mode, indices.len(), |k| -> Result<(f64, Vec<Option<Vec<f64>>>)> {
        let i = indices[k];
        let p = params.bind();
        let loss = network.logits(&p, &data.input(i))?.cross_entropy(data.label(i))?;
        loss.backward()?;
        Ok((loss.item()?, p.grads()))
    });
    let mut total = 0.0;
    let mut sum: Vec<Option<Vec<f64>>> = vec![None; params.len()];
    for r in per_example {
        let (loss, grads) = r?;
        total += loss;
        for (acc, g) in sum.iter_mut().zip(grads) {
            match (acc.as_mut(), g) {
                (Some(a), Some(g)) => a.iter_mut().zip(&g).for_each(|(a, g)| *a += g),
                (None, Some(g)) => *acc = Some(g),
                (_, None) => {}
            }
        }
    }
    let scale = 1.0 / indices.len() as f64;
    for g in sum.iter_mut().flatten() {
        g.iter_mut().for_each(|v| *v *= scale);
    }
    Ok(BatchGradient {
        loss: total * scale,
        grads: sum,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub history: Vec<EpochMetrics>,
    /// Zero-based epoch whose parameters were kept as the best checkpoint.
    pub best_epoch: usize,
    pub best_accuracy: f64,
    pub best_params: ParamSet,
}

impl TrainReport {
    pub fn last(&self, split: Split) -> Option<&EpochMetrics> {
        self.history.iter().rev().find(|m| m.split == split)
    }
}

/// Train `model` in place. Model selection uses eval accuracy when `eval`
/// is non-empty and train accuracy otherwise; ties keep the earlier epoch.
///
/// With `out_dir` set, the metrics log is rewritten after every epoch and
/// the best and final checkpoints are written.
pub fn train(
    model: &mut Model,
    train: &Dataset,
    eval: &Dataset,
    cfg: &TrainRunConfig,
    out_dir: Option<&Path>,
    on_epoch: &mut dyn FnMut(&EpochMetrics),
) -> Result<TrainReport> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = Sgd::new(&model.params, cfg.momentum, cfg.weight_decay);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::new();
    let mut best: Option<(usize, f64, ParamSet)> = None;
    for epoch in 0..cfg.epochs {
        let lr = lr_at(epoch, cfg);
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let bg = batch_gradient(&model.network, &model.params, train, batch, cfg.exec)?;
            let finite = bg.loss.is_finite()
                && bg.grads.iter().flatten().all(|g| g.iter().all(|v| v.is_finite()));
            if !finite {
                return Err(Error::Diverged(format!(
                    "non-finite loss or gradient in epoch {epoch} at learning rate {lr}"
                )));
            }
            opt.step(&mut model.params, &bg.grads, lr)?;
            loss_sum += bg.loss * batch.len() as f64;
        }
        let train_eval = evaluate(model, train, cfg.exec)?;
        let mut rows = vec![EpochMetrics {
            epoch,
            split: Split::Train,
            loss: loss_sum / train.len() as f64,
            accuracy: train_eval.accuracy,
            lr,
        }];
        let mut select = train_eval.accuracy;
        if !eval.is_empty() {
            let e = evaluate(model, eval, cfg.exec)?;
            rows.push(EpochMetrics {
                epoch,
                split: Split::Eval,
                loss: e.loss,
                accuracy: e.accuracy,
                lr,
            });
            select = e.accuracy;
        }
        for r in &rows {
            on_epoch(r);
        }
        history.extend(rows);
        if best.as_ref().is_none_or(|b| select > b.1) {
            best = Some((epoch, select, model.params.clone()));
        }
        if let Some(dir) = out_dir {
            write_atomic(&dir.join(METRICS_FILE), format_metrics(&history).as_bytes())?;
        }
    }
    let (best_epoch, best_accuracy, best_params) = best.expect("at least one epoch");
    if let Some(dir) = out_dir {
        let final_ck = Checkpoint::from_model(model);
        final_ck.write(&dir.join(FINAL_CHECKPOINT), cfg.precision)?;
        Checkpoint {
            config: final_ck.config,
            params: best_params.clone(),
        }
        .write(&dir.join(BEST_CHECKPOINT), cfg.precision)?;
    }
    Ok(TrainReport {
        history,
        best_epoch,
        best_accuracy,
        best_params,
    })
}
