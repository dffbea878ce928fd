use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{adamw_step, init_xavier, label_bits, loss_and_gradients, AdamState, LabeledData, MlpArchitecture, MlpModel};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub patience_epochs: usize,
    /// Validation improvement (bits per label) that resets patience.
    pub min_improvement: f64,
    pub max_epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            weight_decay: 1e-4,
            batch_size: 64,
            patience_epochs: 3,
            min_improvement: 5e-4,
            max_epochs: 500,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn with_seed(&self, seed: u64) -> Self {
        TrainConfig {
            seed,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = self.learning_rate > 0.0
            && self.weight_decay >= 0.0
            && self.batch_size > 0
            && self.patience_epochs >= 1
            && self.min_improvement >= 0.0
            && self.max_epochs >= 1
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0;
        if positive {
            Ok(())
        } else {
            Err(Error::TrainConfig(format!("{self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean mini-batch loss over the epoch, bits per label.
    pub train_bits: f64,
    pub val_bits: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch of the returned snapshot.
    pub best_epoch: usize,
    pub best_val_bits: f64,
    pub stopped_early: bool,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Trains from a fresh Xavier initialization and returns the snapshot with
/// the lowest validation loss.
pub fn train_until_converged(
    train: &LabeledData,
    val: &LabeledData,
    cfg: &TrainConfig,
    architecture: MlpArchitecture,
) -> Result<(MlpModel, TrainHistory)> {
    if train.is_empty() {
        return Err(Error::Empty("training set"));
    }
    if val.is_empty() {
        return Err(Error::Empty("validation set"));
    }
    cfg.validate()?;
    architecture.validate()?;
    let mut model = init_xavier(architecture, &mut rng::stream(cfg.seed, 0, "init"));
    // surfaces shape and label errors before any work
    label_bits(&model, &train.rows(0..1))?;
    label_bits(&model, &val.rows(0..1))?;

    let mut state = AdamState::new(&model);
    let mut best = model.clone();
    let mut history = TrainHistory {
        epochs: Vec::new(),
        best_epoch: 0,
        best_val_bits: f64::INFINITY,
        stopped_early: false,
    };
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut stale = 0;
    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng::stream(cfg.seed, epoch as u64, "epoch"));
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let part = train.select(batch);
            let (loss, grads) = loss_and_gradients(&model, part.x.view(), &part.y);
            loss_sum += loss * batch.len() as f64;
            adamw_step(&mut model, &grads, &mut state, cfg);
        }
        let val_bits = mean(&label_bits(&model, val)?);
        history.epochs.push(EpochRecord {
            epoch,
            train_bits: loss_sum / train.len() as f64 / std::f64::consts::LN_2,
            val_bits,
        });
        if val_bits < history.best_val_bits - cfg.min_improvement
            || history.best_val_bits.is_infinite()
        {
            history.best_val_bits = val_bits;
            history.best_epoch = epoch;
            best = model.clone();
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience_epochs {
                history.stopped_early = true;
                break;
            }
        }
    }
    Ok((best, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nnet::{accuracy, evaluate};
    use ndarray::{array, Array2};
    use rand::Rng;

    #[test]
    fn xor_is_learned() {
        let x = array![[0.0, 0.0], [0.0, 1.0], [1.0, 0.0], [1.0, 1.0]];
        let data = LabeledData::new(x, vec![0, 1, 1, 0]).unwrap();
        let cfg = TrainConfig {
            learning_rate: 0.01,
            batch_size: 4,
            patience_epochs: 200,
            min_improvement: 0.0,
            max_epochs: 3000,
            seed: 2,
            ..TrainConfig::default()
        };
        let (model, _) = train_until_converged(&data, &data, &cfg, MlpArchitecture::new(2, 8, 1)).unwrap();
        assert_eq!(accuracy(&model, &data).unwrap(), 1.0);
    }

    #[test]
    fn separable_points_are_fit() {
        let mut rng = rng::stream(4, 0, "toy");
        let x = Array2::from_shape_fn((200, 2), |_| rng.random_range(-1.0..1.0));
        let y = x
            .rows()
            .into_iter()
            .map(|r| usize::from(r[0] + 0.5 * r[1] > 0.0))
            .collect();
        let data = LabeledData::new(x, y).unwrap();
        let cfg = TrainConfig {
            learning_rate: 0.01,
            patience_epochs: 20,
            seed: 1,
            ..TrainConfig::default()
        };
        let (model, _) = train_until_converged(&data, &data, &cfg, MlpArchitecture::new(2, 16, 1)).unwrap();
        assert!(accuracy(&model, &data).unwrap() >= 0.99);
    }

    #[test]
    fn huge_threshold_stops_after_patience_plus_one() {
        let data = LabeledData::new(array![[0.0], [1.0], [2.0]], vec![0, 1, 1]).unwrap();
        let cfg = TrainConfig {
            min_improvement: 1e9,
            ..TrainConfig::default()
        };
        let (_, h) = train_until_converged(&data, &data, &cfg, MlpArchitecture::new(1, 4, 2)).unwrap();
        assert_eq!(h.epochs.len(), cfg.patience_epochs + 1);
        assert_eq!(h.best_epoch, 1);
        assert!(h.stopped_early);
    }

    #[test]
    fn training_is_deterministic_and_snapshot_is_best() {
        let mut rng = rng::stream(8, 0, "toy");
        let x = Array2::from_shape_fn((96, 3), |_| rng.random_range(-1.0..1.0));
        let y = x.rows().into_iter().map(|r| usize::from(r[0] * r[1] > 0.0)).collect();
        let data = LabeledData::new(x, y).unwrap();
        let cfg = TrainConfig {
            learning_rate: 0.005,
            seed: 3,
            max_epochs: 60,
            ..TrainConfig::default()
        };
        let arch = MlpArchitecture::new(3, 8, 2);
        let (a, ha) = train_until_converged(&data, &data, &cfg, arch).unwrap();
        let (b, hb) = train_until_converged(&data, &data, &cfg, arch).unwrap();
        assert_eq!(a, b);
        assert_eq!(ha, hb);
        let e = evaluate(&a, &data).unwrap();
        assert!((e.mean_bits - ha.best_val_bits).abs() < 1e-12);
        assert!(e.mean_bits <= ha.epochs[0].val_bits);
    }

    #[test]
    fn empty_sets_and_bad_config_are_rejected() {
        let data = LabeledData::new(array![[0.0]], vec![0]).unwrap();
        let empty = data.rows(0..0);
        let arch = MlpArchitecture::new(1, 2, 1);
        let cfg = TrainConfig::default();
        assert!(train_until_converged(&empty, &data, &cfg, arch).is_err());
        assert!(train_until_converged(&data, &empty, &cfg, arch).is_err());
        let bad = TrainConfig {
            patience_epochs: 0,
            ..cfg
        };
        assert!(train_until_converged(&data, &data, &bad, arch).is_err());
    }
}
