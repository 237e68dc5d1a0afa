use blefp_core::features::FeatureTensor;
use blefp_core::fleet::LabeledDataset;
use blefp_core::seed::derive_seed;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{lr_schedule, NetworkConfig};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::tensor::Tensor;

const SHUFFLE_TAG: u64 = 0x5_4F1E;
const DROPOUT_TAG: u64 = 0xD_0907;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Mean training loss (dropout active) per epoch.
    pub epoch_losses: Vec<f64>,
    pub steps: u64,
}

/// Stacks feature tensors into one `(n, channels, length)` batch.
pub fn stack_features(items: &[&FeatureTensor]) -> Result<Tensor> {
    let first = items
        .first()
        .ok_or_else(|| Error::ShapeMismatch("no feature tensors".into()))?;
    let (c, l) = (first.channels, first.length);
    let mut data = Vec::with_capacity(items.len() * c * l);
    for t in items {
        if t.channels != c || t.length != l {
            return Err(Error::ShapeMismatch(format!(
                "feature tensors differ in shape: {c}x{l} vs {}x{}",
                t.channels, t.length
            )));
        }
        data.extend_from_slice(&t.data);
    }
    Tensor::new([items.len(), c, l], data)
}

/// Inputs and labels of a labelled feature dataset.
pub fn dataset_tensor(ds: &LabeledDataset<FeatureTensor>) -> Result<(Tensor, Vec<usize>)> {
    let items: Vec<&FeatureTensor> = ds.items.iter().map(|(t, _)| t).collect();
    let x = stack_features(&items)?;
    Ok((x, ds.items.iter().map(|(_, l)| *l as usize).collect()))
}

/// Mini-batch SGD with the exponential learning-rate schedule. Every
/// source of randomness (init, shuffling, dropout) derives from `cfg.seed`.
pub fn fit(x: &Tensor, labels: &[usize], cfg: &NetworkConfig) -> Result<(Model, TrainReport)> {
    if labels.len() != x.batch() {
        return Err(Error::ShapeMismatch(format!(
            "{} labels for {} examples",
            labels.len(),
            x.batch()
        )));
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= cfg.n_classes) {
        return Err(Error::LabelOutOfRange {
            label,
            n_classes: cfg.n_classes,
        });
    }
    if let Some(c) = (0..cfg.n_classes).find(|c| !labels.contains(c)) {
        return Err(Error::EmptyClass(c));
    }
    let mut model = Model::new(cfg, x.channels(), x.length())?;
    let mut velocity: Vec<Vec<f64>> = model.param_groups().iter().map(|g| vec![0.0; g.len()]).collect();
    let mut order: Vec<usize> = (0..x.batch()).collect();
    let mut step = 0u64;
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let m = cfg.bn_momentum;

    for epoch in 0..cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[SHUFFLE_TAG, epoch as u64]));
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let xb = x.select(batch);
            let yb: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
            let r = model.step(&xb, &yb, Some(derive_seed(cfg.seed, &[DROPOUT_TAG, step])))?;
            total += r.loss * batch.len() as f64;

            let lr = lr_schedule(step, cfg);
            for ((p, g), v) in model.param_groups_mut().into_iter().zip(&r.grads.0).zip(&mut velocity) {
                for ((pi, gi), vi) in p.iter_mut().zip(g).zip(v.iter_mut()) {
                    *vi = cfg.momentum * *vi - lr * gi;
                    *pi += *vi;
                }
            }
            for (blk, s) in model.blocks.iter_mut().zip(&r.batch_stats) {
                for (rm, bm) in blk.running_mean.iter_mut().zip(&s.mean) {
                    *rm = m * *rm + (1.0 - m) * bm;
                }
                for (rv, bv) in blk.running_var.iter_mut().zip(&s.var) {
                    *rv = m * *rv + (1.0 - m) * bv;
                }
            }
            step += 1;
        }
        let mean = total / x.batch() as f64;
        if !mean.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "training diverged at epoch {epoch} (loss {mean})"
            )));
        }
        epoch_losses.push(mean);
    }
    Ok((
        model,
        TrainReport {
            epoch_losses,
            steps: step,
        },
    ))
}

pub fn train(ds: &LabeledDataset<FeatureTensor>, cfg: &NetworkConfig) -> Result<Model> {
    let (x, y) = dataset_tensor(ds)?;
    Ok(fit(&x, &y, cfg)?.0)
}

/// Fraction of correct predictions.
pub fn accuracy(model: &Model, x: &Tensor, labels: &[usize]) -> Result<f64> {
    let pred = model.predict(x)?;
    let hits = pred.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / labels.len().max(1) as f64)
}
