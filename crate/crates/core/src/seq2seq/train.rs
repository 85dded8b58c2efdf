use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::model::{Seq2SeqModel, Seq2SeqParams};
use crate::dataio::AugmentedWindow;
use crate::error::{Error, Result};
use crate::numerics::{mix_seed, RngState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Optimizer {
    #[default]
    Adam,
    Sgd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    #[serde(default)]
    pub optimizer: Optimizer,
    /// Global gradient-norm clip; non-positive disables clipping.
    pub clip: f64,
    pub seed: u64,
    /// Shuffle window order every epoch.
    pub shuffle: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            epochs: 50,
            batch_size: 32,
            optimizer: Optimizer::Adam,
            clip: 10.0,
            seed: 0,
            shuffle: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::invalid("learning rate must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be >= 1"));
        }
        Ok(())
    }
}

/// Per-epoch training record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    /// Mean window loss (training mode) for each epoch.
    pub epoch_losses: Vec<f64>,
}

const ADAM_B1: f64 = 0.9;
const ADAM_B2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    step: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    fn apply(&mut self, params: &mut Seq2SeqParams, grads: &Seq2SeqParams, lr: f64) {
        self.step += 1;
        let c1 = 1.0 - ADAM_B1.powi(self.step);
        let c2 = 1.0 - ADAM_B2.powi(self.step);
        let mut i = 0;
        for (p, g) in params.matrices_mut().into_iter().zip(grads.matrices()) {
            for (w, &g) in p.as_mut_slice().iter_mut().zip(g.as_slice()) {
                self.m[i] = ADAM_B1 * self.m[i] + (1.0 - ADAM_B1) * g;
                self.v[i] = ADAM_B2 * self.v[i] + (1.0 - ADAM_B2) * g * g;
                let mh = self.m[i] / c1;
                let vh = self.v[i] / c2;
                *w -= lr * mh / (vh.sqrt() + ADAM_EPS);
                i += 1;
            }
        }
    }
}

fn sgd(params: &mut Seq2SeqParams, grads: &Seq2SeqParams, lr: f64) {
    for (p, g) in params.matrices_mut().into_iter().zip(grads.matrices()) {
        for (w, &g) in p.as_mut_slice().iter_mut().zip(g.as_slice()) {
            *w -= lr * g;
        }
    }
}

/// Mean-over-batch loss and gradient. Per-window gradients are computed in
/// parallel and summed in batch order, so the result does not depend on
/// thread scheduling.
pub fn batch_loss_and_grad(
    model: &Seq2SeqModel,
    windows: &[&AugmentedWindow],
    dropout_seeds: Option<&[u64]>,
) -> Result<(f64, Seq2SeqParams)> {
    let parts: Vec<(f64, Seq2SeqParams)> = windows
        .par_iter()
        .enumerate()
        .map(|(i, w)| {
            let mut rng = dropout_seeds.map(|s| RngState::new(s[i]));
            model.loss_and_grad(w, rng.as_mut())
        })
        .collect::<Result<_>>()?;
    let mut grads = model.params.zeros_like();
    let mut loss = 0.0;
    for (l, g) in &parts {
        loss += l;
        grads.add_assign(g);
    }
    let n = windows.len().max(1) as f64;
    grads.scale(1.0 / n);
    Ok((loss / n, grads))
}

/// Mean inference-mode loss over `windows`.
pub fn mean_loss(model: &Seq2SeqModel, windows: &[AugmentedWindow]) -> Result<f64> {
    if windows.is_empty() {
        return Err(Error::InsufficientData("no windows to evaluate".into()));
    }
    let losses: Vec<f64> = windows
        .par_iter()
        .map(|w| model.loss(w))
        .collect::<Result<_>>()?;
    Ok(losses.iter().sum::<f64>() / windows.len() as f64)
}

/// Mini-batch training on the masked reconstruction loss. Deterministic for
/// a fixed `cfg.seed`.
pub fn train(
    model: &mut Seq2SeqModel,
    windows: &[AugmentedWindow],
    cfg: &TrainConfig,
) -> Result<TrainHistory> {
    cfg.validate()?;
    if windows.is_empty() {
        return Err(Error::InsufficientData("training needs at least one window".into()));
    }
    for w in windows {
        model.check_window(w)?;
    }
    let mut order: Vec<usize> = (0..windows.len()).collect();
    let mut shuffler = RngState::new(mix_seed(cfg.seed, 0x5eed));
    let mut adam = Adam::new(model.params.len());
    let mut history = TrainHistory {
        epoch_losses: Vec::with_capacity(cfg.epochs),
    };
    let use_dropout = model.config.dropout > 0.0;

    for epoch in 0..cfg.epochs {
        if cfg.shuffle {
            shuffler.shuffle(&mut order);
        }
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let refs: Vec<&AugmentedWindow> = batch.iter().map(|&i| &windows[i]).collect();
            let seeds: Vec<u64> = batch
                .iter()
                .map(|&i| mix_seed(mix_seed(cfg.seed, epoch as u64 + 1), i as u64))
                .collect();
            let (loss, mut grads) =
                batch_loss_and_grad(model, &refs, use_dropout.then_some(seeds.as_slice()))?;
            if !loss.is_finite() || !grads.is_finite() {
                return Err(Error::TrainingDiverged { epoch });
            }
            epoch_loss += loss * batch.len() as f64;
            if cfg.clip > 0.0 {
                let norm = grads.norm();
                if norm > cfg.clip {
                    grads.scale(cfg.clip / norm);
                }
            }
            match cfg.optimizer {
                Optimizer::Adam => adam.apply(&mut model.params, &grads, cfg.learning_rate),
                Optimizer::Sgd => sgd(&mut model.params, &grads, cfg.learning_rate),
            }
            if !model.params.is_finite() {
                return Err(Error::TrainingDiverged { epoch });
            }
        }
        history.epoch_losses.push(epoch_loss / windows.len() as f64);
    }
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Matrix;
    use crate::seq2seq::ModelConfig;

    fn sine_windows(n: usize, w: usize) -> Vec<AugmentedWindow> {
        (0..n)
            .map(|i| {
                let vals = (0..w).map(|t| (0.4 * (t + i) as f64).sin()).collect();
                AugmentedWindow::from_values(Matrix::from_vec(w, 1, vals).unwrap(), w + i)
            })
            .collect()
    }

    #[test]
    fn zero_epochs_leaves_parameters() {
        let mut m = Seq2SeqModel::new(ModelConfig::new(1, vec![3], 4), 1).unwrap();
        let before = m.params.clone();
        let cfg = TrainConfig {
            epochs: 0,
            ..Default::default()
        };
        let h = train(&mut m, &sine_windows(3, 4), &cfg).unwrap();
        assert!(h.epoch_losses.is_empty());
        assert_eq!(m.params, before);
    }

    #[test]
    fn single_sgd_step_on_output_bias() {
        // Zero GRU weights keep the state at zero, so only the output bias b
        // matters: loss = (x - b)^2 for a w = 1, k = 1 window, dL/db = -2(x - b).
        let mut m = Seq2SeqModel::zeros(ModelConfig::new(1, vec![1], 1)).unwrap();
        m.params.output.as_mut_slice().copy_from_slice(&[0.0, 0.3]);
        let win = AugmentedWindow::from_values(Matrix::from_vec(1, 1, vec![1.5]).unwrap(), 1);
        let cfg = TrainConfig {
            learning_rate: 0.1,
            epochs: 1,
            batch_size: 1,
            optimizer: Optimizer::Sgd,
            clip: 0.0,
            seed: 0,
            shuffle: false,
        };
        train(&mut m, &[win], &cfg).unwrap();
        let expect = 0.3 - 0.1 * (-2.0 * (1.5 - 0.3));
        assert!((m.params.output[(0, 1)] - expect).abs() < 1e-15);
    }

    #[test]
    fn training_is_deterministic() {
        let mut cfg_m = ModelConfig::new(1, vec![4], 6);
        cfg_m.dropout = 0.2;
        let data = sine_windows(10, 6);
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 4,
            learning_rate: 0.01,
            ..Default::default()
        };
        let mut a = Seq2SeqModel::new(cfg_m.clone(), 9).unwrap();
        let mut b = Seq2SeqModel::new(cfg_m, 9).unwrap();
        let ha = train(&mut a, &data, &cfg).unwrap();
        let hb = train(&mut b, &data, &cfg).unwrap();
        assert_eq!(ha, hb);
        assert_eq!(a.params, b.params);
    }

    #[test]
    fn divergence_is_reported_with_epoch() {
        let mut m = Seq2SeqModel::new(ModelConfig::new(1, vec![2], 3), 0).unwrap();
        m.params.output.fill(f64::MAX);
        let cfg = TrainConfig {
            epochs: 2,
            ..Default::default()
        };
        let err = train(&mut m, &sine_windows(2, 3), &cfg).unwrap_err();
        assert!(matches!(err, Error::TrainingDiverged { epoch: 0 }));
    }

    #[test]
    fn empty_window_set_rejected() {
        let mut m = Seq2SeqModel::new(ModelConfig::new(1, vec![2], 3), 0).unwrap();
        assert!(train(&mut m, &[], &TrainConfig::default()).is_err());
    }
}
