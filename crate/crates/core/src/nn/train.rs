use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::Graph;

use super::network::{Network, ParamMode};
use super::optim::Optimizer;
use super::spec::OutputKind;

pub const DEFAULT_BATCH_SIZE: usize = 32;
pub const DEFAULT_CLASSIFIER_LR: f64 = 1e-3;

/// Loss recorded after one epoch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub loss: f64,
}

fn check_classifier<T: Scalar>(net: &Network<T>, data: &LabeledDataset<T>) -> Result<()> {
    if net.output_kind() != OutputKind::Probabilities {
        return Err(Error::Contract(format!(
            "network `{}` is not a classifier",
            net.name()
        )));
    }
    match net.class_count() {
        Some(k) if k == data.class_count() => Ok(()),
        k => Err(Error::Contract(format!(
            "network `{}` predicts {} classes but the dataset has {}",
            net.name(),
            k.unwrap_or(0),
            data.class_count()
        ))),
    }
}

/// One optimizer step on a batch of samples given by `indices`; returns the
/// batch loss.
pub fn classifier_step<T: Scalar>(
    net: &mut Network<T>,
    opt: &mut Optimizer<T>,
    data: &LabeledDataset<T>,
    indices: &[usize],
) -> Result<f64> {
    let labels: Vec<usize> = indices.iter().map(|&i| data.labels()[i]).collect();
    let mut g = Graph::new();
    let x = g.input(data.images().select(indices));
    let fwd = net.forward(&mut g, x, ParamMode::Train)?;
    let loss = g.softmax_cross_entropy(fwd.logits, &labels)?;
    g.backward(loss)?;
    net.accumulate_grads(&g, &fwd.params)?;
    opt.step(net)?;
    Ok(g.scalar(loss).as_f64())
}

/// One pass over `data` in shuffled mini-batches. Returns the mean batch loss.
pub fn train_epoch<T: Scalar>(
    net: &mut Network<T>,
    opt: &mut Optimizer<T>,
    data: &LabeledDataset<T>,
    batch_size: usize,
    rng: &mut Rng,
) -> Result<f64> {
    check_classifier(net, data)?;
    if batch_size == 0 {
        return Err(Error::Contract("batch size must be positive".into()));
    }
    if data.is_empty() {
        return Err(Error::Input("cannot train on an empty dataset".into()));
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.shuffle(rng);
    let mut total = 0.0;
    let mut batches = 0;
    for chunk in order.chunks(batch_size) {
        total += classifier_step(net, opt, data, chunk)?;
        batches += 1;
    }
    Ok(total / batches as f64)
}

/// Mean cross entropy of the network's predictions over `data`.
pub fn mean_loss<T: Scalar>(net: &Network<T>, data: &LabeledDataset<T>) -> Result<f64> {
    check_classifier(net, data)?;
    let logits = net.predict_logits(data.images())?;
    let mut g = Graph::new();
    let l = g.input(logits);
    let loss = g.softmax_cross_entropy(l, data.labels())?;
    Ok(g.scalar(loss).as_f64())
}

/// Index of the largest entry; the first one wins ties.
pub fn argmax<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

pub fn predict_classes<T: Scalar>(net: &Network<T>, images: &crate::tensor::Tensor<T>) -> Result<Vec<usize>> {
    let probs = net.predict(images)?;
    Ok((0..probs.shape()[0]).map(|i| argmax(probs.item(i))).collect())
}

/// Fraction of samples whose most probable class equals the label.
pub fn evaluate_accuracy<T: Scalar>(net: &Network<T>, data: &LabeledDataset<T>) -> Result<f64> {
    check_classifier(net, data)?;
    if data.is_empty() {
        return Err(Error::Input("accuracy of an empty dataset".into()));
    }
    let predicted = predict_classes(net, data.images())?;
    let correct = predicted.iter().zip(data.labels()).filter(|(p, l)| p == l).count();
    Ok(correct as f64 / data.len() as f64)
}
