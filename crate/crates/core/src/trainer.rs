//! Mini-batch training with RMSProp and momentum, plus quantized retraining.
//!
//! Every parameter `θ` keeps a squared-gradient average `r` and a velocity `v`:
//!
//! ```text
//! r ← ρ·r + (1-ρ)·g²
//! v ← μ·v - lr·g/√(r+ε)
//! θ ← θ + v
//! ```
//!
//! The learning rate is halved (`lr_decay`) after every epoch whose validation
//! error does not improve on the best so far. Training stops at `max_epochs`,
//! when `lr` falls below `lr_final`, or after `patience` consecutive epochs
//! without improvement, and returns the best-validation snapshot.
//!
//! During retraining, quantized groups run forward and backward with their
//! on-grid weights; the update lands on the floating-point shadow copy and the
//! exposed weights are re-quantized from it after every step. The quantizer
//! (`M`, `Δ`) stays fixed and biases train as ordinary floats.

use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{batches, Dataset, DatasetSplit};
use crate::error::{Error, Result};
use crate::nn::{argmax_rows, cross_entropy, Mode, Network};
use crate::quantizer::apply;
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr_init: f64,
    pub lr_final: f64,
    pub lr_decay: f64,
    pub momentum: f64,
    pub rmsprop_rho: f64,
    pub rmsprop_eps: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    /// Apply the network's dropout layers while training.
    pub dropout: bool,
    /// Fill the `seconds` log column with wall-clock time; off by default so
    /// logs are byte-reproducible.
    pub record_wall_time: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 128,
            lr_init: 1e-3,
            lr_final: 1e-6,
            lr_decay: 0.5,
            momentum: 0.9,
            rmsprop_rho: 0.9,
            rmsprop_eps: 1e-8,
            max_epochs: 50,
            patience: 5,
            seed: 0,
            dropout: true,
            record_wall_time: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(self.lr_init >= 0.0 && self.lr_final >= 0.0 && self.lr_final <= self.lr_init) {
            return bad(format!(
                "need 0 ≤ lr_final ≤ lr_init, got lr_init={} lr_final={}",
                self.lr_init, self.lr_final
            ));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad(format!("lr_decay must be in (0, 1], got {}", self.lr_decay));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must be in [0, 1), got {}", self.momentum));
        }
        if !(self.rmsprop_rho > 0.0 && self.rmsprop_rho < 1.0) {
            return bad(format!("rmsprop_rho must be in (0, 1), got {}", self.rmsprop_rho));
        }
        if !(self.rmsprop_eps > 0.0) {
            return bad(format!("rmsprop_eps must be positive, got {}", self.rmsprop_eps));
        }
        Ok(())
    }

    /// Retraining defaults: a tenth of the learning rate and half the epochs.
    pub fn for_retraining(&self) -> TrainConfig {
        let lr_init = self.lr_init / 10.0;
        TrainConfig {
            lr_init,
            lr_final: self.lr_final.min(lr_init),
            max_epochs: self.max_epochs / 2,
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 0 is the evaluation before any update.
    pub epoch: usize,
    /// Mean mini-batch loss; for epoch 0, the eval-mode loss on the training split.
    pub train_loss: f64,
    /// Validation error rate in percent.
    pub val_metric: f64,
    /// Learning rate used during the epoch.
    pub lr: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    /// Epoch of the returned snapshot (minimum validation error, earliest on ties).
    pub best_epoch: usize,
}

pub const LOG_HEADER: &str = "epoch,train_loss,val_metric,lr,seconds";

impl TrainLog {
    pub fn best(&self) -> Option<&EpochRecord> {
        self.epochs.iter().find(|e| e.epoch == self.best_epoch)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(LOG_HEADER);
        s.push('\n');
        for e in &self.epochs {
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                e.epoch, e.train_loss, e.val_metric, e.lr, e.seconds
            );
        }
        s
    }
}

/// Misclassification rate in percent (argmax, ties to the smallest class index).
pub fn evaluate(net: &Network, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Config("cannot evaluate on an empty split".into()));
    }
    let mut wrong = 0usize;
    let idx: Vec<usize> = (0..data.len()).collect();
    for chunk in idx.chunks(512) {
        let probs = net.predict(&data.features.select_rows(chunk))?;
        wrong += argmax_rows(&probs)
            .iter()
            .zip(chunk)
            .filter(|(p, &i)| **p != data.labels[i])
            .count();
    }
    Ok(100.0 * wrong as f64 / data.len() as f64)
}

fn mean_loss(net: &Network, data: &Dataset) -> Result<f64> {
    let idx: Vec<usize> = (0..data.len()).collect();
    let mut total = 0.0;
    for chunk in idx.chunks(512) {
        let probs = net.predict(&data.features.select_rows(chunk))?;
        let labels: Vec<usize> = chunk.iter().map(|&i| data.labels[i]).collect();
        total += cross_entropy(&probs, &labels) * chunk.len() as f64;
    }
    Ok(total / data.len() as f64)
}

struct Slot {
    r: Vec<f64>,
    v: Vec<f64>,
}

impl Slot {
    fn new(n: usize) -> Self {
        Self {
            r: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    fn step(&mut self, theta: &mut [f64], grad: &[f64], lr: f64, cfg: &TrainConfig) {
        let (rho, mu, eps) = (cfg.rmsprop_rho, cfg.momentum, cfg.rmsprop_eps);
        for i in 0..theta.len() {
            let g = grad[i];
            self.r[i] = rho * self.r[i] + (1.0 - rho) * g * g;
            self.v[i] = mu * self.v[i] - lr * g / (self.r[i] + eps).sqrt();
            theta[i] += self.v[i];
        }
    }
}

/// Floating-point training from the given initialization.
pub fn train_float(net: &Network, data: &DatasetSplit, cfg: &TrainConfig) -> Result<(Network, TrainLog)> {
    fit(net, data, cfg, false, |_, _| {})
}

/// Retrains a direct-quantized network; every quantized group needs shadow weights.
pub fn retrain_quantized(net: &Network, data: &DatasetSplit, cfg: &TrainConfig) -> Result<(Network, TrainLog)> {
    retrain_quantized_with(net, data, cfg, |_, _| {})
}

/// [`retrain_quantized`] with a callback after every epoch's updates.
pub fn retrain_quantized_with(
    net: &Network,
    data: &DatasetSplit,
    cfg: &TrainConfig,
    on_epoch: impl FnMut(usize, &Network),
) -> Result<(Network, TrainLog)> {
    for g in net.groups() {
        if g.quantizer.is_some() && g.shadow_weights.is_none() {
            return Err(Error::Usage(format!(
                "weight group {:?} is quantized but carries no shadow weights",
                g.name
            )));
        }
    }
    if !net.is_quantized() {
        return Err(Error::Usage("retraining needs a direct-quantized network".into()));
    }
    fit(net, data, cfg, true, on_epoch)
}

/// Whether every quantized group's exposed weights lie on its grid.
pub fn quantized_weights_on_grid(net: &Network) -> bool {
    net.groups().iter().all(|g| match &g.quantizer {
        Some(q) => g.weights.data().iter().all(|&w| q.on_grid(w)),
        None => true,
    })
}

fn fit(
    init: &Network,
    data: &DatasetSplit,
    cfg: &TrainConfig,
    quantized: bool,
    mut on_epoch: impl FnMut(usize, &Network),
) -> Result<(Network, TrainLog)> {
    cfg.validate()?;
    if data.train.is_empty() {
        return Err(Error::Config("training split is empty".into()));
    }
    let clock = cfg.record_wall_time.then(Instant::now);
    let elapsed = |c: &Option<Instant>| c.map_or(0.0, |t| t.elapsed().as_secs_f64());

    let mut net = init.clone();
    let base = Rng::new(cfg.seed);
    let mut shuffle_rng = base.fork(0x5348_5546);
    let mut dropout_rng = base.fork(0x4452_4f50);
    let mode = if cfg.dropout { Mode::Train } else { Mode::Eval };

    let mut slots: Vec<(Slot, Slot)> = net
        .groups()
        .iter()
        .map(|g| (Slot::new(g.weights.len()), Slot::new(g.bias.len())))
        .collect();

    let mut best_metric = evaluate(&net, &data.valid)?;
    let mut best = net.clone();
    let mut log = TrainLog {
        epochs: vec![EpochRecord {
            epoch: 0,
            train_loss: mean_loss(&net, &data.train)?,
            val_metric: best_metric,
            lr: cfg.lr_init,
            seconds: elapsed(&clock),
        }],
        best_epoch: 0,
    };

    let mut lr = cfg.lr_init;
    let mut stale = 0;
    for epoch in 1..=cfg.max_epochs {
        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        for batch in batches(&data.train, cfg.batch_size, true, &mut shuffle_rng) {
            let (probs, cache) = net.forward(&batch.features, mode, &mut dropout_rng)?;
            let loss = cross_entropy(&probs, &batch.labels);
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch, lr });
            }
            loss_sum += loss * batch.labels.len() as f64;
            seen += batch.labels.len();
            let grads = net.backward(&cache, &batch.labels)?;
            for ((g, gg), (sw, sb)) in net.groups_mut().iter_mut().zip(&grads.groups).zip(&mut slots) {
                match (&g.quantizer, quantized) {
                    (Some(q), true) => {
                        let shadow = g.shadow_weights.as_mut().expect("checked before training");
                        sw.step(shadow.data_mut(), gg.dw.data(), lr, cfg);
                        for (w, &s) in g.weights.data_mut().iter_mut().zip(shadow.data()) {
                            *w = apply(s, q);
                        }
                    }
                    _ => sw.step(g.weights.data_mut(), gg.dw.data(), lr, cfg),
                }
                sb.step(g.bias.data_mut(), gg.db.data(), lr, cfg);
            }
        }
        let train_loss = loss_sum / seen as f64;
        if !train_loss.is_finite() || net.groups().iter().any(|g| !g.weights.is_finite()) {
            return Err(Error::Divergence { epoch, lr });
        }
        on_epoch(epoch, &net);

        let val = evaluate(&net, &data.valid)?;
        log.epochs.push(EpochRecord {
            epoch,
            train_loss,
            val_metric: val,
            lr,
            seconds: elapsed(&clock),
        });
        if val < best_metric {
            best_metric = val;
            best = net.clone();
            log.best_epoch = epoch;
            stale = 0;
        } else {
            stale += 1;
            lr *= cfg.lr_decay;
            if stale >= cfg.patience || lr < cfg.lr_final {
                break;
            }
        }
    }
    Ok((best, log))
}
