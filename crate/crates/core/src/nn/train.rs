use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{backward, mean_loss, LossSpec, NetSpec, Network, Samples};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    pub lr: f64,
    pub lr_drop_factor: f64,
    /// Epochs without a new best validation loss before the learning rate drops.
    pub plateau_patience: usize,
    /// A validation loss counts as a new best only if it beats the best by this relative margin.
    pub min_improvement: f64,
    /// Training stops once validation loss exceeds the best by this ratio.
    pub early_stop_ratio: f64,
    /// Training also stops after this many learning-rate drops.
    pub max_lr_drops: usize,
    pub max_epochs: usize,
    /// Seeds the per-epoch shuffling.
    pub shuffle_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> TrainConfig {
        TrainConfig {
            batch_size: 64,
            momentum: 0.9,
            weight_decay: 0.001,
            lr: 0.001,
            lr_drop_factor: 5.0,
            plateau_patience: 3,
            min_improvement: 1e-4,
            early_stop_ratio: 1.05,
            max_lr_drops: 3,
            max_epochs: 300,
            shuffle_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.batch_size == 0 || self.max_epochs == 0 || self.plateau_patience == 0 {
            return bad("batch_size, max_epochs and plateau_patience must be positive");
        }
        if !(self.lr > 0.0 && self.momentum >= 0.0 && self.momentum < 1.0 && self.weight_decay >= 0.0) {
            return bad("lr must be positive, momentum in [0, 1), weight_decay non-negative");
        }
        if self.lr_drop_factor.is_nan() || self.lr_drop_factor <= 1.0 {
            return bad("lr_drop_factor must exceed 1");
        }
        if !(self.early_stop_ratio >= 1.0 && self.min_improvement >= 0.0) {
            return bad("early_stop_ratio must be at least 1 and min_improvement non-negative");
        }
        Ok(())
    }
}

/// `v <- momentum v - lr (g + wd p)`, `p <- p + v`.
pub fn sgd_step(params: &mut [f64], grad: &[f64], velocity: &mut [f64], lr: f64, cfg: &TrainConfig) {
    for ((p, g), v) in params.iter_mut().zip(grad).zip(velocity.iter_mut()) {
        *v = cfg.momentum * *v - lr * (g + cfg.weight_decay * *p);
        *p += *v;
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub valid_loss: f64,
    pub lr: f64,
    pub lr_dropped: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainingHistory {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_valid_loss: f64,
    pub early_stopped: bool,
}

impl TrainingHistory {
    pub fn lr_drops(&self) -> usize {
        self.epochs.iter().filter(|e| e.lr_dropped).count()
    }
}

/// Trains a fresh network and returns the parameters of the best validation epoch.
pub fn fit(
    train: &Samples,
    valid: &Samples,
    spec: NetSpec,
    loss: &LossSpec,
    cfg: &TrainConfig,
) -> Result<(Network, TrainingHistory)> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Empty("training set"));
    }
    if valid.is_empty() {
        return Err(Error::Empty("validation set"));
    }
    let mut net = Network::init(spec)?;
    loss.check(&net.spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.shuffle_seed);
    let mut velocity = vec![0.0; net.params.len()];
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut lr = cfg.lr;

    let diverged = |epoch| move |e: Error| match e {
        Error::NonFiniteLoss { .. } => Error::Diverged { epoch },
        other => other,
    };

    let mut history = TrainingHistory { best_valid_loss: mean_loss(&net, valid, loss).map_err(diverged(0))?, ..Default::default() };
    let mut best = net.params.clone();
    let mut since_best = 0;
    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut train_total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let (l, g) = backward(&net, train, batch, loss).map_err(diverged(epoch))?;
            train_total += l * batch.len() as f64;
            sgd_step(&mut net.params, &g, &mut velocity, lr, cfg);
        }
        if net.params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Diverged { epoch });
        }
        let valid_loss = mean_loss(&net, valid, loss).map_err(diverged(epoch))?;
        let record_lr = lr;
        let mut lr_dropped = false;
        let mut stop = false;
        if valid_loss < history.best_valid_loss * (1.0 - cfg.min_improvement) {
            history.best_valid_loss = valid_loss;
            history.best_epoch = epoch;
            best.copy_from_slice(&net.params);
            since_best = 0;
        } else if valid_loss > history.best_valid_loss * cfg.early_stop_ratio {
            history.early_stopped = true;
            stop = true;
        } else {
            since_best += 1;
            if since_best >= cfg.plateau_patience {
                if history.lr_drops() >= cfg.max_lr_drops {
                    stop = true;
                } else {
                    lr /= cfg.lr_drop_factor;
                    lr_dropped = true;
                    since_best = 0;
                }
            }
        }
        history.epochs.push(EpochRecord {
            epoch,
            train_loss: train_total / train.len() as f64,
            valid_loss,
            lr: record_lr,
            lr_dropped,
        });
        if stop {
            break;
        }
    }
    net.params = best;
    Ok((net, history))
}
