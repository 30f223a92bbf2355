//! Mini-batch training with Adam and validation-based early stopping.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::layers::{backward, forward, predict, Mode, ModelParams, Network};
use super::loss::{loss_and_grad, LossKind};
use super::optim::{adam_step, AdamConfig, AdamState};
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub type TrainRng = ChaCha8Rng;

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub input: Vec<f64>,
    pub target: Vec<f64>,
}

/// Indexed training samples. Training draws pass an RNG so implementations can
/// augment; validation draws pass `None` and must be deterministic.
pub trait Dataset {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn sample(&self, index: usize, rng: Option<&mut TrainRng>) -> Result<Sample>;
}

impl Dataset for Vec<Sample> {
    fn len(&self) -> usize {
        self.as_slice().len()
    }

    fn sample(&self, index: usize, _rng: Option<&mut TrainRng>) -> Result<Sample> {
        Ok(self[index].clone())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub early_stop_patience: usize,
    pub seed: u64,
    pub loss_kind: LossKind,
    pub adam: AdamConfig,
    /// Random subset drawn each epoch instead of the full training set.
    pub samples_per_epoch: Option<usize>,
    /// Cap on validation samples (evenly spaced through the set).
    pub max_val_samples: Option<usize>,
    pub verbose: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 1000,
            batch_size: 256,
            early_stop_patience: 20,
            seed: 0,
            loss_kind: LossKind::WeightedMse,
            adam: AdamConfig::default(),
            samples_per_epoch: None,
            max_val_samples: None,
            verbose: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct History {
    pub records: Vec<EpochRecord>,
    pub best_epoch: usize,
}

impl History {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_loss\n");
        for r in &self.records {
            writeln!(out, "{},{:.10e},{:.10e}", r.epoch, r.train_loss, r.val_loss)
                .expect("string write");
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

fn stack(network: &Network, samples: &[Sample]) -> Result<(Tensor, Tensor)> {
    let n = samples.len();
    let in_len: usize = network.input_shape().iter().product();
    let out_shape = network.output_shape();
    let out_len: usize = out_shape.iter().product();
    let t_len = samples[0].target.len();
    let mut inputs = Vec::with_capacity(n * in_len);
    let mut targets = Vec::with_capacity(n * t_len);
    for s in samples {
        if s.input.len() != in_len || s.target.len() != t_len {
            return Err(Error::ShapeMismatch {
                expected: vec![in_len, t_len],
                actual: vec![s.input.len(), s.target.len()],
            });
        }
        inputs.extend_from_slice(&s.input);
        targets.extend_from_slice(&s.target);
    }
    let mut in_shape = vec![n];
    in_shape.extend_from_slice(network.input_shape());
    let target_shape = if t_len == out_len {
        let mut s = vec![n];
        s.extend_from_slice(out_shape);
        s
    } else {
        vec![n, t_len]
    };
    Ok((
        Tensor::new(in_shape, inputs)?,
        Tensor::new(target_shape, targets)?,
    ))
}

/// Mean loss over `indices` in inference mode.
pub fn evaluate_loss(
    params: &ModelParams,
    network: &Network,
    data: &dyn Dataset,
    indices: &[usize],
    loss_kind: LossKind,
    batch_size: usize,
) -> Result<f64> {
    let mut total = 0.0;
    for chunk in indices.chunks(batch_size.max(1)) {
        let samples = chunk
            .iter()
            .map(|&i| data.sample(i, None))
            .collect::<Result<Vec<_>>>()?;
        let (x, y) = stack(network, &samples)?;
        let out = predict(params, network, &x)?;
        let (loss, _) = loss_and_grad(loss_kind, &out, &y)?;
        total += loss * chunk.len() as f64;
    }
    Ok(total / indices.len() as f64)
}

/// Trains from a seeded initialization; returns the parameters with the lowest
/// validation loss and the per-epoch history.
pub fn train_model(
    network: &Network,
    train: &dyn Dataset,
    val: &dyn Dataset,
    config: &TrainConfig,
) -> Result<(ModelParams, History)> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let params = ModelParams::init(network, &mut rng);
    train_from(network, params, train, val, config, &mut rng)
}

pub fn train_from(
    network: &Network,
    mut params: ModelParams,
    train: &dyn Dataset,
    val: &dyn Dataset,
    config: &TrainConfig,
    rng: &mut TrainRng,
) -> Result<(ModelParams, History)> {
    if train.is_empty() || val.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if config.batch_size == 0 || config.early_stop_patience == 0 {
        return Err(Error::invalid(
            "batch_size and early_stop_patience must be at least 1",
        ));
    }
    let val_indices: Vec<usize> = match config.max_val_samples {
        Some(k) if k < val.len() => (0..k).map(|i| i * val.len() / k).collect(),
        _ => (0..val.len()).collect(),
    };
    let mut state = AdamState::new(&params);
    let mut history = History::default();
    let mut best: Option<(f64, ModelParams)> = None;
    let mut since_best = 0;
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 0..config.epochs {
        order.shuffle(rng);
        let take = config
            .samples_per_epoch
            .map_or(order.len(), |k| k.min(order.len()));
        let mut epoch_loss = 0.0;
        for chunk in order[..take].chunks(config.batch_size) {
            let samples = chunk
                .iter()
                .map(|&i| train.sample(i, Some(&mut *rng)))
                .collect::<Result<Vec<_>>>()?;
            let (x, y) = stack(network, &samples)?;
            let pass = forward(&params, network, &x, Mode::Train)?;
            let (loss, grad) = loss_and_grad(config.loss_kind, pass.output(), &y)?;
            if !loss.is_finite() {
                return Err(Error::Numerical {
                    layer: network.layers().len(),
                });
            }
            let grads = backward(&params, network, &pass, grad)?;
            adam_step(&mut params, &grads, &mut state, &config.adam);
            params.update_running_stats(&pass);
            epoch_loss += loss * chunk.len() as f64;
        }
        let train_loss = epoch_loss / take as f64;
        let val_loss = evaluate_loss(
            &params,
            network,
            val,
            &val_indices,
            config.loss_kind,
            config.batch_size,
        )?;
        history.records.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
        });
        if config.verbose {
            eprintln!("epoch {epoch:4} train {train_loss:.6} val {val_loss:.6}");
        }
        if best.as_ref().is_none_or(|(b, _)| val_loss < *b) {
            best = Some((val_loss, params.clone()));
            history.best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.early_stop_patience {
                break;
            }
        }
    }
    let params = best.map(|(_, p)| p).unwrap_or(params);
    Ok((params, history))
}
