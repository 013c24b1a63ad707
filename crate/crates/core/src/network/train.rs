use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::model::SatModel;
use crate::data::{make_batches, PointCloud};
use crate::error::{Error, Result};
use crate::evalbench::{miou_macc, ConfusionMatrix};
use crate::numcore::{no_grad, DiffTensor, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    /// Momentum SGD with L2 weight decay.
    Sgd,
    Adam,
}

impl OptimizerKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            _ => Err(Error::Config(format!("unknown optimizer `{s}` (expected sgd or adam)"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Stop after this many optimizer steps even mid-epoch.
    pub max_steps: Option<usize>,
    pub lr: f64,
    /// Epochs at which the learning rate is multiplied by `lr_decay`.
    pub milestones: Vec<usize>,
    pub lr_decay: f64,
    pub optimizer: OptimizerKind,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Scenes per optimizer step; gradients are averaged over them.
    pub batch_size: usize,
    pub max_points: usize,
    /// Rescale the gradient when its global L2 norm exceeds this.
    pub clip_grad_norm: Option<f64>,
    pub seed: u64,
}

impl TrainConfig {
    /// Milestones at 60% and 80% of the run.
    pub fn new(epochs: usize) -> Self {
        TrainConfig {
            epochs,
            max_steps: None,
            lr: 0.006,
            milestones: Self::default_milestones(epochs),
            lr_decay: 0.1,
            optimizer: OptimizerKind::Sgd,
            momentum: 0.9,
            weight_decay: 1e-4,
            batch_size: 1,
            max_points: 2048,
            clip_grad_norm: Some(1.0),
            seed: 0,
        }
    }

    pub fn default_milestones(epochs: usize) -> Vec<usize> {
        let mut m = vec![epochs * 6 / 10, epochs * 8 / 10];
        m.dedup();
        m.retain(|&e| e > 0);
        m
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        if self.milestones.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config(format!("milestones must ascend, got {:?}", self.milestones)));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.max_points == 0 {
            return Err(Error::Config("epochs, batch size and max points must be positive".into()));
        }
        if self.clip_grad_norm.is_some_and(|c| !(c > 0.0)) {
            return Err(Error::Config("gradient clip norm must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.momentum) || self.weight_decay < 0.0 {
            return Err(Error::Config("momentum must be in [0, 1) and weight decay >= 0".into()));
        }
        Ok(())
    }
}

/// Multi-step learning rate schedule.
#[derive(Debug, Clone)]
pub struct MultiStep {
    pub base: f64,
    pub milestones: Vec<usize>,
    pub gamma: f64,
}

impl MultiStep {
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let passed = self.milestones.iter().filter(|&&m| epoch >= m).count();
        self.base * self.gamma.powi(passed as i32)
    }
}

/// Optimizer state for a fixed parameter list.
pub struct Optimizer<T: Scalar> {
    kind: OptimizerKind,
    momentum: f64,
    weight_decay: f64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    t: i32,
}

impl<T: Scalar> Optimizer<T> {
    pub fn new(kind: OptimizerKind, momentum: f64, weight_decay: f64, params: &[(String, DiffTensor<T>)]) -> Self {
        let zeros = || params.iter().map(|(_, p)| vec![T::zero(); p.len()]).collect();
        Optimizer {
            kind,
            momentum,
            weight_decay,
            m: zeros(),
            v: if kind == OptimizerKind::Adam { zeros() } else { Vec::new() },
            t: 0,
        }
    }

    /// Applies one update from the accumulated gradients and clears them.
    pub fn step(&mut self, params: &[(String, DiffTensor<T>)], lr: f64) {
        self.t += 1;
        let (lr, wd, mu) = (T::of(lr), T::of(self.weight_decay), T::of(self.momentum));
        for (i, (_, p)) in params.iter().enumerate() {
            let Some(g) = p.grad() else {
                continue;
            };
            let m = &mut self.m[i];
            match self.kind {
                OptimizerKind::Sgd => p.update_data(|w| {
                    for j in 0..w.len() {
                        m[j] = mu * m[j] + g[j] + wd * w[j];
                        w[j] = w[j] - lr * m[j];
                    }
                }),
                OptimizerKind::Adam => {
                    let v = &mut self.v[i];
                    let (b1, b2) = (0.9, 0.999);
                    let c1 = T::of(1.0 - f64::powi(b1, self.t));
                    let c2 = T::of(1.0 - f64::powi(b2, self.t));
                    let (b1, b2) = (T::of(b1), T::of(b2));
                    let eps = T::of(1e-8);
                    p.update_data(|w| {
                        for j in 0..w.len() {
                            let gj = g[j] + wd * w[j];
                            m[j] = b1 * m[j] + (T::one() - b1) * gj;
                            v[j] = b2 * v[j] + (T::one() - b2) * gj * gj;
                            w[j] = w[j] - lr * (m[j] / c1) / ((v[j] / c2).sqrt() + eps);
                        }
                    });
                }
            }
            p.zero_grad();
        }
    }
}

/// One row of the training log.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub steps: usize,
    pub lr: f64,
    pub loss: f64,
    /// Point accuracy (%) over the epoch's training samples.
    pub train_acc: f64,
    pub val_acc: Option<f64>,
    pub val_miou: Option<f64>,
}

/// Scales all gradients so their joint L2 norm is at most `max`. Returns the
/// norm before clipping.
pub fn clip_grad_norm<T: Scalar>(params: &[(String, DiffTensor<T>)], max: f64) -> f64 {
    let sq: f64 = params
        .iter()
        .filter_map(|(_, p)| p.grad())
        .flat_map(|g| g.into_iter().map(|v| v.f64() * v.f64()))
        .sum();
    let norm = sq.sqrt();
    if norm > max {
        let s = T::of(max / norm);
        for (_, p) in params {
            p.with_grad_mut(|g| g.iter_mut().for_each(|v| *v = *v * s));
        }
    }
    norm
}

fn argmax_rows<T: Scalar>(logits: &DiffTensor<T>) -> Vec<usize> {
    let k = logits.cols();
    logits
        .data()
        .chunks(k)
        .map(|r| {
            let mut best = 0;
            for (j, v) in r.iter().enumerate() {
                if *v > r[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Predicted class per point.
pub fn predict<T: Scalar>(model: &SatModel<T>, cloud: &PointCloud) -> Result<Vec<usize>> {
    no_grad(|| Ok(argmax_rows(&model.forward(cloud)?)))
}

/// Confusion matrix of the model over whole clouds.
pub fn evaluate<T: Scalar>(model: &SatModel<T>, clouds: &[PointCloud]) -> Result<ConfusionMatrix> {
    let mut cm = ConfusionMatrix::new(model.config.num_classes);
    for c in clouds {
        cm.add_labels(&c.labels, &predict(model, c)?)?;
    }
    Ok(cm)
}

/// Trains in place. `on_epoch` sees every log row and may checkpoint.
pub fn train<T: Scalar>(
    model: &SatModel<T>,
    train_set: &[PointCloud],
    val_set: &[PointCloud],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog, &SatModel<T>) -> Result<()>,
) -> Result<Vec<EpochLog>> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    let k = model.config.num_classes;
    if let Some(c) = train_set.iter().chain(val_set).find(|c| c.num_classes != k) {
        return Err(Error::Config(format!(
            "model predicts {k} classes, data declares {}",
            c.num_classes
        )));
    }
    let schedule = MultiStep {
        base: cfg.lr,
        milestones: cfg.milestones.clone(),
        gamma: cfg.lr_decay,
    };
    let mut opt = Optimizer::new(cfg.optimizer, cfg.momentum, cfg.weight_decay, model.params());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut logs = Vec::new();
    let mut steps = 0;
    for epoch in 0..cfg.epochs {
        if cfg.max_steps.is_some_and(|m| steps >= m) {
            break;
        }
        let lr = schedule.lr_at(epoch);
        let samples = make_batches(train_set, cfg.max_points, cfg.seed.wrapping_add(epoch as u64 + 1));
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct, mut seen, mut n_loss) = (0.0, 0usize, 0usize, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            if cfg.max_steps.is_some_and(|m| steps >= m) {
                break;
            }
            let scale = T::of(1.0 / batch.len() as f64);
            for &i in batch {
                let s = &samples[i];
                let logits = model.forward(s)?;
                let loss = logits.cross_entropy(&s.labels)?;
                if !loss.item().is_finite() {
                    return Err(Error::NonFinite {
                        site: format!("loss at epoch {epoch}"),
                    });
                }
                loss_sum += loss.item().f64();
                n_loss += 1;
                correct += argmax_rows(&logits).iter().zip(&s.labels).filter(|(a, b)| a == b).count();
                seen += s.len();
                loss.scale(scale).backward()?;
            }
            if let Some(max) = cfg.clip_grad_norm {
                clip_grad_norm(model.params(), max);
            }
            opt.step(model.params(), lr);
            steps += 1;
        }
        let (val_acc, val_miou) = if val_set.is_empty() {
            (None, None)
        } else {
            let m = miou_macc(&evaluate(model, val_set)?)?;
            (Some(m.oa), Some(m.miou))
        };
        let log = EpochLog {
            epoch,
            steps,
            lr,
            loss: loss_sum / n_loss.max(1) as f64,
            train_acc: 100.0 * correct as f64 / seen.max(1) as f64,
            val_acc,
            val_miou,
        };
        on_epoch(&log, model)?;
        logs.push(log);
    }
    Ok(logs)
}
