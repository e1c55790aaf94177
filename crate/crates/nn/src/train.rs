//! Training loop with per-epoch validation and best-epoch selection.

use std::io::Write;
use std::path::Path;

use flowpix_core::ident::rng_for;
use flowpix_core::imageio::read_entry;
use flowpix_core::split::ManifestEntry;
use flowpix_core::{ClassLabel, EncodedImage};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{NnError, Result};
use crate::layers::{Layer, Mode};
use crate::loss::{bce_with_logits, softmax_cross_entropy};
use crate::model::{Model, Prediction, Task};
use crate::optim::Sgd;
use crate::transform::transform_batch;

/// Random access to a labelled image collection; lets training stream
/// images from disk instead of holding the whole split in memory.
pub trait ImageSource {
    fn len(&self) -> usize;
    fn label(&self, index: usize) -> ClassLabel;
    fn load(&self, index: usize) -> Result<EncodedImage>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl ImageSource for [EncodedImage] {
    fn len(&self) -> usize {
        <[EncodedImage]>::len(self)
    }

    fn label(&self, index: usize) -> ClassLabel {
        self[index].label
    }

    fn load(&self, index: usize) -> Result<EncodedImage> {
        Ok(self[index].clone())
    }
}

impl ImageSource for Vec<EncodedImage> {
    fn len(&self) -> usize {
        self.as_slice().len()
    }

    fn label(&self, index: usize) -> ClassLabel {
        self[index].label
    }

    fn load(&self, index: usize) -> Result<EncodedImage> {
        Ok(self[index].clone())
    }
}

/// Images listed in a manifest, read from PNGs under `root` on demand.
pub struct ManifestImages<'a> {
    pub root: &'a Path,
    pub entries: Vec<&'a ManifestEntry>,
}

impl ImageSource for ManifestImages<'_> {
    fn len(&self) -> usize {
        self.entries.len()
    }

    fn label(&self, index: usize) -> ClassLabel {
        self.entries[index].label
    }

    fn load(&self, index: usize) -> Result<EncodedImage> {
        Ok(read_entry(self.root, self.entries[index])?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    /// Accuracy of the training-mode outputs seen during the epoch.
    pub train_acc: f64,
    pub val_acc: f64,
}

pub struct TrainOutcome {
    /// 1-based epoch of the kept weights.
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
    pub history: Vec<EpochRecord>,
}

/// Index of the best validation accuracy; the earliest epoch wins ties.
pub fn best_epoch(val_accuracy: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &a) in val_accuracy.iter().enumerate() {
        if best.is_none_or(|b| a > val_accuracy[b]) {
            best = Some(i);
        }
    }
    best
}

fn load_batch(source: &(impl ImageSource + ?Sized), indices: &[usize]) -> Result<Vec<EncodedImage>> {
    indices.iter().map(|&i| source.load(i)).collect()
}

/// Trains for exactly `config.epochs` epochs, then restores the weights of
/// the epoch with the best validation accuracy.
pub fn train(
    model: &mut Model,
    train_set: &(impl ImageSource + ?Sized),
    val_set: &(impl ImageSource + ?Sized),
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    if train_set.is_empty() {
        return Err(NnError::EmptySplit("training"));
    }
    if val_set.is_empty() {
        return Err(NnError::EmptySplit("validation"));
    }
    let config = model.config().clone();
    let task = config.task;
    let mut optimizer = Sgd::<f32>::new(config.learning_rate, config.momentum);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    let mut best: Option<(usize, f64, Vec<Vec<f32>>)> = None;

    for epoch in 1..=config.epochs {
        order.sort_unstable();
        order.shuffle(&mut rng_for(config.seed, &format!("shuffle/{epoch}")));
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for (b, indices) in order.chunks(config.batch_size).enumerate() {
            let images = load_batch(train_set, indices)?;
            let targets: Vec<usize> = images.iter().map(|im| task.target(im.label)).collect();
            let x = transform_batch::<f32>(&images, config.input_size);
            let net = model.net();
            net.zero_grad();
            let logits = net.forward(x, Mode::Train);
            let (loss, grad) = match task {
                Task::Binary => bce_with_logits(&logits, &targets),
                Task::Multiclass => softmax_cross_entropy(&logits, &targets),
            };
            if !loss.is_finite() {
                return Err(NnError::NonFiniteLoss { epoch, batch: b, loss });
            }
            correct += count_correct(task, logits.data(), config.num_outputs, &targets);
            loss_sum += loss * indices.len() as f64;
            net.backward(grad);
            optimizer.step(net);
        }

        let (_, val_acc) = evaluate(model, val_set)?;
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / train_set.len() as f64,
            train_acc: correct as f64 / train_set.len() as f64,
            val_acc,
        };
        log::info!(
            "epoch {epoch}/{}: loss {:.5} train acc {:.4} val acc {:.4}",
            config.epochs,
            record.train_loss,
            record.train_acc,
            record.val_acc
        );
        on_epoch(&record);
        history.push(record);
        if best.as_ref().is_none_or(|(_, acc, _)| val_acc > *acc) {
            best = Some((epoch, val_acc, model.state()));
        }
    }

    let (best_epoch, best_val_accuracy, state) = best.expect("at least one epoch");
    model.set_state(&state)?;
    Ok(TrainOutcome {
        best_epoch,
        best_val_accuracy,
        history,
    })
}

fn count_correct(task: Task, logits: &[f32], outputs: usize, targets: &[usize]) -> usize {
    logits
        .chunks_exact(outputs)
        .zip(targets)
        .filter(|(z, &t)| {
            let z: Vec<f64> = z.iter().map(|&v| v as f64).collect();
            let p = match task {
                Task::Binary => crate::model::decide_binary(z[0]),
                Task::Multiclass => crate::model::decide_multiclass(&z),
            };
            p.class == t
        })
        .count()
}

/// Eval-mode predictions over a source, in source order, plus accuracy
/// against the task targets.
pub fn evaluate(model: &mut Model, source: &(impl ImageSource + ?Sized)) -> Result<(Vec<Prediction>, f64)> {
    let task = model.config().task;
    let batch = model.config().batch_size;
    let mut predictions = Vec::with_capacity(source.len());
    let mut correct = 0usize;
    let indices: Vec<usize> = (0..source.len()).collect();
    for chunk in indices.chunks(batch) {
        let images = load_batch(source, chunk)?;
        for (p, im) in model.predict(&images).into_iter().zip(&images) {
            correct += (p.class == task.target(im.label)) as usize;
            predictions.push(p);
        }
    }
    let acc = if source.is_empty() {
        0.0
    } else {
        correct as f64 / source.len() as f64
    };
    Ok((predictions, acc))
}

/// Writes the history as `epoch,train_loss,train_acc,val_acc` rows.
pub fn write_history(history: &[EpochRecord], mut out: impl Write) -> std::io::Result<()> {
    writeln!(out, "epoch,train_loss,train_acc,val_acc")?;
    for r in history {
        writeln!(out, "{},{},{},{}", r.epoch, r.train_loss, r.train_acc, r.val_acc)?;
    }
    Ok(())
}
