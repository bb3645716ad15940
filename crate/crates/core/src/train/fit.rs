use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::eval::evaluate;
use super::optim::{Optimizer, OptimizerKind};
use super::Example;
use crate::autodiff::{DropoutRng, Tape};
use crate::error::{Error, Result};
use crate::model::{forward_on_tape, ModelParams};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub optimizer: OptimizerKind,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
    /// Stop after the first epoch whose validation accuracy reaches this.
    pub stop_at_val_acc: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            learning_rate: 0.001,
            batch_size: 64,
            optimizer: OptimizerKind::Adam,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
            stop_at_val_acc: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    /// Accuracy of the dropout-perturbed predictions seen during the epoch.
    pub train_acc: f64,
    pub val_loss: Option<f64>,
    pub val_acc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
}

impl History {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,train_acc,val_loss,val_acc\n");
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.17e}")).unwrap_or_default();
        for r in &self.epochs {
            s.push_str(&format!(
                "{},{:.17e},{:.17e},{},{}\n",
                r.epoch,
                r.train_loss,
                r.train_acc,
                opt(r.val_loss),
                opt(r.val_acc)
            ));
        }
        s
    }
}

#[derive(Debug, Clone)]
pub struct TrainedModel {
    /// Parameters from the epoch with the best validation accuracy (the
    /// earliest on ties), or the final ones without a validation set.
    pub best: ModelParams,
    pub last: ModelParams,
    pub best_epoch: usize,
    pub history: History,
}

/// Loss, probabilities and parameter gradients for one example.
pub fn example_gradient(
    params: &ModelParams,
    ex: &Example,
    training: bool,
    dropout_seed: u64,
) -> Result<(f64, Vec<f64>, Vec<Vec<f64>>)> {
    let tape = Tape::new();
    let rng = DropoutRng::new(dropout_seed);
    let fv = forward_on_tape(&tape, params, &ex.patches, training, &rng)?;
    let loss = fv.probs.bce(&ex.label.one_hot())?;
    tape.backward(loss)?;
    let grads = fv
        .params
        .iter()
        .map(|v| {
            v.grad()
                .map(|g| g.into_data())
                .ok_or_else(|| Error::Autodiff("parameter without gradient".into()))
        })
        .collect::<Result<_>>()?;
    Ok((
        loss.value().data()[0],
        fv.probs.value().into_data(),
        grads,
    ))
}

fn argmax(p: &[f64]) -> usize {
    usize::from(p[1] > p[0])
}

pub fn train(
    init: ModelParams,
    train_set: &[Example],
    val_set: &[Example],
    cfg: &TrainConfig,
) -> Result<TrainedModel> {
    train_with_progress(init, train_set, val_set, cfg, |_| {})
}

/// As [`train`], calling `progress` after every epoch.
pub fn train_with_progress(
    init: ModelParams,
    train_set: &[Example],
    val_set: &[Example],
    cfg: &TrainConfig,
    mut progress: impl FnMut(&EpochRecord),
) -> Result<TrainedModel> {
    if train_set.is_empty() {
        return Err(Error::Empty("training set is empty".into()));
    }
    if cfg.batch_size == 0 || cfg.epochs == 0 {
        return Err(Error::InvalidParameter(
            "epochs and batch size must be positive".into(),
        ));
    }
    if !(cfg.learning_rate >= 0.0 && cfg.learning_rate.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "learning rate {} must be finite and non-negative",
            cfg.learning_rate
        )));
    }
    let mut params = init;
    let mut opt = match cfg.optimizer {
        OptimizerKind::Adam => {
            Optimizer::adam(&params, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon)
        }
        OptimizerKind::Sgd => Optimizer::sgd(cfg.learning_rate),
    };
    let mut history = History::default();
    let mut best = params.clone();
    let mut best_epoch = 0;
    let mut best_acc = f64::NEG_INFINITY;
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 1..=cfg.epochs {
        let mut shuffle_rng =
            ChaCha8Rng::seed_from_u64(DropoutRng::derive(cfg.seed, &[0, epoch as u64]));
        order.shuffle(&mut shuffle_rng);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let mut grads = params.zeros_like();
            let mut batch_loss = 0.0;
            for &i in batch {
                let seed = DropoutRng::derive(cfg.seed, &[1, epoch as u64, i as u64]);
                let (loss, probs, g) = example_gradient(&params, &train_set[i], true, seed)?;
                batch_loss += loss;
                correct += usize::from(argmax(&probs) == train_set[i].label.index());
                for (acc, gi) in grads.iter_mut().zip(g) {
                    acc.iter_mut().zip(gi).for_each(|(a, v)| *a += v);
                }
            }
            if !batch_loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: b,
                    loss: batch_loss,
                });
            }
            let scale = 1.0 / batch.len() as f64;
            grads.iter_mut().flatten().for_each(|g| *g *= scale);
            opt.step(&mut params, &grads);
            loss_sum += batch_loss;
        }
        let (val_loss, val_acc) = if val_set.is_empty() {
            (None, None)
        } else {
            let ev = evaluate(&params, val_set)?;
            (Some(ev.mean_loss), Some(ev.accuracy()))
        };
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / train_set.len() as f64,
            train_acc: correct as f64 / train_set.len() as f64,
            val_loss,
            val_acc,
        };
        let score = val_acc.unwrap_or(f64::INFINITY);
        if val_acc.is_none() || score > best_acc {
            best_acc = score;
            best_epoch = epoch;
            best = params.clone();
        }
        progress(&record);
        history.epochs.push(record);
        if let (Some(target), Some(acc)) = (cfg.stop_at_val_acc, val_acc) {
            if acc >= target {
                break;
            }
        }
    }
    Ok(TrainedModel {
        best,
        last: params,
        best_epoch,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::Label;
    use crate::model::{init_params, ModelConfig};
    use crate::tfr::MelTfrImage;
    use rand::Rng;
    use std::sync::Arc;

    /// Class 0 bright on top, class 1 bright at the bottom, plus noise.
    pub(crate) fn half_bright(n: usize, seed: u64, patch: usize) -> Vec<Example> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| {
                let label = Label::from_index(i % 2);
                let pixels = (0..64 * 64 * 3)
                    .map(|j| {
                        let top = j / 3 / 64 < 32;
                        let bright = top == (label == Label::Healthy);
                        let base = if bright { 0.8 } else { 0.2 };
                        (base + rng.gen_range(-0.15..0.15f64)).clamp(0.0, 1.0)
                    })
                    .collect();
                let img = MelTfrImage {
                    pixels,
                    height: 64,
                    width: 64,
                    recording_id: Arc::from(format!("r{i}").as_str()),
                    frame_index: 0,
                };
                Example::from_image(&img, label, Arc::from("s"), patch).unwrap()
            })
            .collect()
    }

    fn one_block() -> ModelConfig {
        ModelConfig {
            n_blocks: 1,
            ..Default::default()
        }
    }

    #[test]
    fn separable_halves_are_learned_within_thirty_epochs() {
        let train_set = half_bright(32, 1, 8);
        let val_set = half_bright(20, 2, 8);
        let cfg = TrainConfig {
            epochs: 30,
            batch_size: 8,
            seed: 3,
            stop_at_val_acc: Some(0.95),
            ..Default::default()
        };
        let out = train(init_params(&one_block(), 4).unwrap(), &train_set, &val_set, &cfg).unwrap();
        let best = out
            .history
            .epochs
            .iter()
            .filter_map(|r| r.val_acc)
            .fold(0.0, f64::max);
        assert!(best >= 0.95, "best validation accuracy {best}");
        assert!(out.history.epochs.len() <= 30);
        let ev = evaluate(&out.best, &val_set).unwrap();
        assert!(ev.accuracy() >= 0.95);
    }

    #[test]
    fn zero_learning_rate_changes_nothing() {
        let data = half_bright(6, 5, 8);
        let init = init_params(&one_block(), 1).unwrap();
        for optimizer in [OptimizerKind::Adam, OptimizerKind::Sgd] {
            let cfg = TrainConfig {
                epochs: 1,
                batch_size: 4,
                learning_rate: 0.0,
                optimizer,
                ..Default::default()
            };
            let out = train(init.clone(), &data, &[], &cfg).unwrap();
            assert_eq!(out.last, init);
        }
    }

    #[test]
    fn same_seed_same_history_and_weights() {
        let data = half_bright(8, 6, 8);
        let val = half_bright(4, 7, 8);
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 4,
            seed: 11,
            ..Default::default()
        };
        let init = init_params(&one_block(), 2).unwrap();
        let a = train(init.clone(), &data, &val, &cfg).unwrap();
        let b = train(init.clone(), &data, &val, &cfg).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.best, b.best);
        assert_eq!(a.history.to_csv(), b.history.to_csv());
        let c = train(init, &data, &val, &TrainConfig { seed: 12, ..cfg }).unwrap();
        assert_ne!(a.last, c.last);
    }

    #[test]
    fn non_finite_loss_aborts() {
        let data = half_bright(4, 8, 8);
        let mut init = init_params(&one_block(), 3).unwrap();
        init.get_mut("head.kernel").unwrap().data_mut()[0] = f64::NAN;
        let cfg = TrainConfig {
            epochs: 1,
            batch_size: 2,
            ..Default::default()
        };
        let err = train(init, &data, &[], &cfg).unwrap_err();
        assert!(matches!(err, Error::NonFiniteLoss { epoch: 1, batch: 0, .. }), "{err}");
    }

    #[test]
    fn empty_training_set_rejected() {
        let init = init_params(&one_block(), 3).unwrap();
        assert!(matches!(
            train(init, &[], &[], &TrainConfig::default()),
            Err(Error::Empty(_))
        ));
    }

    #[test]
    fn history_csv_shape() {
        let h = History {
            epochs: vec![EpochRecord {
                epoch: 1,
                train_loss: 0.5,
                train_acc: 0.75,
                val_loss: None,
                val_acc: Some(1.0),
            }],
        };
        let csv = h.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "epoch,train_loss,train_acc,val_loss,val_acc");
        assert_eq!(lines[1].split(',').count(), 5);
        assert!(lines[1].contains(",,"));
    }
}
