use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::params::ParamStore;
use super::tensor::{Scalar, ShapeError, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SchedulerConfig {
    Constant,
    /// Multiply by `gamma` every `every` epochs.
    StepDecay { every: usize, gamma: f64 },
    /// Multiply by `factor` after `patience` epochs without validation improvement.
    ReduceOnPlateau { factor: f64, patience: usize },
    /// Cosine annealing to zero over `t_max` epochs.
    Cosine { t_max: usize },
    /// Cosine annealing restarted every `t0` epochs.
    CosineWarmRestarts { t0: usize },
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        SchedulerConfig::StepDecay { every: 4, gamma: 0.1 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub scheduler: SchedulerConfig,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self { kind: OptimizerKind::Adam, lr: 1e-3, scheduler: SchedulerConfig::default() }
    }
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// SGD (no momentum) or Adam over a [`ParamStore`].
pub struct Optimizer<T> {
    kind: OptimizerKind,
    lr: f64,
    step: u64,
    m: BTreeMap<String, Tensor<T>>,
    v: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> Optimizer<T> {
    pub fn new(kind: OptimizerKind, lr: f64) -> Self {
        Self { kind, lr, step: 0, m: BTreeMap::new(), v: BTreeMap::new() }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.lr = lr;
    }

    /// Applies one update. Parameters without a gradient entry are left
    /// untouched; gradients for unknown names are an error.
    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &BTreeMap<String, Tensor<T>>) -> Result<(), ShapeError> {
        for (name, g) in grads {
            let p = store.get(name).ok_or_else(|| ShapeError::new("optimizer", format!("unknown parameter `{name}`")))?;
            if p.shape != g.shape {
                return Err(ShapeError::new("optimizer", format!("`{name}`: {:?} vs grad {:?}", p.shape, g.shape)));
            }
        }
        self.step += 1;
        let lr = T::c(self.lr);
        match self.kind {
            OptimizerKind::Sgd => {
                for (name, g) in grads {
                    let p = store.get_mut(name).expect("checked");
                    for (x, &d) in p.data.iter_mut().zip(&g.data) {
                        *x -= lr * d;
                    }
                }
            }
            OptimizerKind::Adam => {
                let (b1, b2) = (T::c(ADAM_BETA1), T::c(ADAM_BETA2));
                let c1 = T::c(1.0 - ADAM_BETA1.powi(self.step as i32));
                let c2 = T::c(1.0 - ADAM_BETA2.powi(self.step as i32));
                let eps = T::c(ADAM_EPS);
                for (name, g) in grads {
                    let p = store.get_mut(name).expect("checked");
                    let m = self.m.entry(name.clone()).or_insert_with(|| Tensor::zeros(&g.shape));
                    let v = self.v.entry(name.clone()).or_insert_with(|| Tensor::zeros(&g.shape));
                    for i in 0..g.data.len() {
                        let d = g.data[i];
                        m.data[i] = b1 * m.data[i] + (T::one() - b1) * d;
                        v.data[i] = b2 * v.data[i] + (T::one() - b2) * d * d;
                        let mh = m.data[i] / c1;
                        let vh = v.data[i] / c2;
                        p.data[i] -= lr * mh / (vh.sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}

/// Epoch-level learning-rate schedule.
#[derive(Clone, Debug)]
pub struct Scheduler {
    cfg: SchedulerConfig,
    base_lr: f64,
    lr: f64,
    best: f64,
    bad_epochs: usize,
}

impl Scheduler {
    pub fn new(cfg: SchedulerConfig, base_lr: f64) -> Self {
        Self { cfg, base_lr, lr: base_lr, best: f64::INFINITY, bad_epochs: 0 }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    /// Learning rate for epoch `epoch + 1`, given the validation loss observed
    /// after `epoch` (0-based).
    pub fn after_epoch(&mut self, epoch: usize, val_loss: f64) -> f64 {
        let next = epoch + 1;
        self.lr = match self.cfg {
            SchedulerConfig::Constant => self.base_lr,
            SchedulerConfig::StepDecay { every, gamma } => self.base_lr * gamma.powi((next / every.max(1)) as i32),
            SchedulerConfig::ReduceOnPlateau { factor, patience } => {
                if val_loss < self.best {
                    self.best = val_loss;
                    self.bad_epochs = 0;
                    self.lr
                } else {
                    self.bad_epochs += 1;
                    if self.bad_epochs > patience {
                        self.bad_epochs = 0;
                        self.lr * factor
                    } else {
                        self.lr
                    }
                }
            }
            SchedulerConfig::Cosine { t_max } => {
                let t = next.min(t_max) as f64;
                0.5 * self.base_lr * (1.0 + (std::f64::consts::PI * t / t_max as f64).cos())
            }
            SchedulerConfig::CosineWarmRestarts { t0 } => {
                let t = (next % t0.max(1)) as f64;
                0.5 * self.base_lr * (1.0 + (std::f64::consts::PI * t / t0 as f64).cos())
            }
        };
        self.lr
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_param(v: f64) -> ParamStore<f64> {
        let mut s = ParamStore::new(0);
        s.insert("p", Tensor::scalar(v));
        s
    }

    fn grad(v: f64) -> BTreeMap<String, Tensor<f64>> {
        BTreeMap::from([("p".to_string(), Tensor::scalar(v))])
    }

    #[test]
    fn sgd_arithmetic() {
        let mut s = one_param(1.0);
        Optimizer::new(OptimizerKind::Sgd, 0.1).step(&mut s, &grad(0.5)).unwrap();
        assert!((s.get("p").unwrap().item() - 0.95).abs() < 1e-15);
    }

    #[test]
    fn zero_lr_leaves_parameters_unchanged() {
        for kind in [OptimizerKind::Sgd, OptimizerKind::Adam] {
            let mut s = one_param(1.0);
            Optimizer::new(kind, 0.0).step(&mut s, &grad(3.0)).unwrap();
            assert_eq!(s.get("p").unwrap().item(), 1.0);
        }
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut s = one_param(1.0);
        Optimizer::new(OptimizerKind::Adam, 0.01).step(&mut s, &grad(-7.0)).unwrap();
        assert!((s.get("p").unwrap().item() - 1.01).abs() < 1e-9);
    }

    #[test]
    fn unknown_gradient_is_rejected() {
        let mut s = one_param(1.0);
        let g = BTreeMap::from([("q".to_string(), Tensor::scalar(1.0))]);
        assert!(Optimizer::new(OptimizerKind::Sgd, 0.1).step(&mut s, &g).is_err());
    }

    #[test]
    fn step_decay_every_four_epochs() {
        let mut s = Scheduler::new(SchedulerConfig::default(), 1e-3);
        let lrs: Vec<f64> = (0..8).map(|e| s.after_epoch(e, 1.0)).collect();
        assert_eq!(lrs[2], 1e-3);
        assert!((lrs[3] - 1e-4).abs() < 1e-15);
        assert!((lrs[7] - 1e-5).abs() < 1e-15);
    }

    #[test]
    fn plateau_reduces_after_patience() {
        let mut s = Scheduler::new(SchedulerConfig::ReduceOnPlateau { factor: 0.5, patience: 1 }, 1.0);
        assert_eq!(s.after_epoch(0, 1.0), 1.0);
        assert_eq!(s.after_epoch(1, 1.0), 1.0);
        assert_eq!(s.after_epoch(2, 1.0), 0.5);
    }

    #[test]
    fn cosine_reaches_zero_and_restarts() {
        let mut c = Scheduler::new(SchedulerConfig::Cosine { t_max: 10 }, 1.0);
        assert!(c.after_epoch(9, 0.0).abs() < 1e-12);
        let mut w = Scheduler::new(SchedulerConfig::CosineWarmRestarts { t0: 10 }, 1.0);
        assert_eq!(w.after_epoch(9, 0.0), 1.0);
    }
}
