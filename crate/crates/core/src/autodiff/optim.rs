use serde::{Deserialize, Serialize};

use super::params::{ParamGrads, ParamStore};
use super::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled: `w -= lr * weight_decay * w` each step.
    pub weight_decay: f64,
    /// Global gradient-norm clip; `None` disables.
    pub clip_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-5,
            clip_norm: Some(5.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum StepOutcome {
    Applied { grad_norm: f64 },
    SkippedNonFinite,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub skipped: u64,
    /// Parameters left untouched by `step`, including weight decay.
    pub frozen: Vec<bool>,
}

impl Adam {
    pub fn new(config: AdamConfig, store: &ParamStore) -> Self {
        let zeros: Vec<Tensor> = store.iter().map(|(_, t)| Tensor::zeros(t.rows, t.cols)).collect();
        Self {
            config,
            step: 0,
            m: zeros.clone(),
            frozen: vec![false; store.len()],
            v: zeros,
            skipped: 0,
        }
    }

    /// Freezes every parameter whose name starts with none of `prefixes`.
    pub fn train_only(&mut self, store: &ParamStore, prefixes: &[&str]) {
        for (i, (name, _)) in store.iter().enumerate() {
            self.frozen[i] = !prefixes.iter().any(|p| name.starts_with(p));
        }
    }

    pub fn lr(&self) -> f64 {
        self.config.lr
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.config.lr = lr;
    }

    /// One update. Parameters without a gradient only receive weight decay.
    pub fn step(&mut self, store: &mut ParamStore, grads: &ParamGrads) -> StepOutcome {
        if !grads.is_finite() {
            self.skipped += 1;
            log::warn!("non-finite gradient, optimizer step {} skipped", self.step + 1);
            return StepOutcome::SkippedNonFinite;
        }
        let grad_norm = grads.norm();
        let clip = match self.config.clip_norm {
            Some(c) if grad_norm > c => c / grad_norm,
            _ => 1.0,
        };
        self.step += 1;
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        for id in store.ids().collect::<Vec<_>>() {
            let i = id.index();
            if self.frozen[i] {
                continue;
            }
            let w = store.get_mut(id);
            if c.weight_decay != 0.0 {
                w.scale_assign(1.0 - c.lr * c.weight_decay);
            }
            let Some(g) = grads.get(id) else { continue };
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for k in 0..w.len() {
                let gk = g.data[k] * clip;
                m.data[k] = c.beta1 * m.data[k] + (1.0 - c.beta1) * gk;
                v.data[k] = c.beta2 * v.data[k] + (1.0 - c.beta2) * gk * gk;
                let mh = m.data[k] / bc1;
                let vh = v.data[k] / bc2;
                w.data[k] -= c.lr * mh / (vh.sqrt() + c.eps);
            }
        }
        StepOutcome::Applied { grad_norm }
    }
}

/// Halves the learning rate after `patience` consecutive epochs without validation
/// improvement and signals early stopping after `stop_patience` such epochs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlateauSchedule {
    pub patience: u32,
    pub factor: f64,
    pub stop_patience: u32,
    pub best: f64,
    pub bad_epochs: u32,
    pub since_halving: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EpochDecision {
    Improved,
    Continue,
    HalveLr,
    Stop,
}

impl PlateauSchedule {
    pub fn new(patience: u32, stop_patience: u32) -> Self {
        Self {
            patience,
            factor: 0.5,
            stop_patience,
            best: f64::INFINITY,
            bad_epochs: 0,
            since_halving: 0,
        }
    }

    /// Records a validation loss (lower is better) and applies any halving to `adam`.
    pub fn observe(&mut self, valid_loss: f64, adam: &mut Adam) -> EpochDecision {
        if valid_loss < self.best {
            self.best = valid_loss;
            self.bad_epochs = 0;
            self.since_halving = 0;
            return EpochDecision::Improved;
        }
        self.bad_epochs += 1;
        self.since_halving += 1;
        if self.bad_epochs >= self.stop_patience {
            return EpochDecision::Stop;
        }
        if self.since_halving >= self.patience {
            self.since_halving = 0;
            adam.set_lr(adam.lr() * self.factor);
            return EpochDecision::HalveLr;
        }
        EpochDecision::Continue
    }
}

impl Default for PlateauSchedule {
    fn default() -> Self {
        Self::new(2, 6)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_param(w: f64) -> (ParamStore, super::super::ParamId) {
        let mut s = ParamStore::new();
        let id = s.add("w", Tensor::scalar(w));
        (s, id)
    }

    #[test]
    fn adam_descends_on_square() {
        let (mut s, id) = one_param(1.0);
        let mut adam = Adam::new(
            AdamConfig {
                lr: 0.1,
                ..AdamConfig::default()
            },
            &s,
        );
        let mut g = ParamGrads::zeros_like(&s);
        g.accumulate(id, &Tensor::scalar(2.0));
        adam.step(&mut s, &g);
        let w = s.get(id).data[0];
        assert!(w < 1.0);
        // first bias-corrected step moves by lr in the sign direction
        assert!((w - (1.0 * (1.0 - 0.1 * 1e-5) - 0.1)).abs() < 1e-6);
    }

    #[test]
    fn weight_decay_alone() {
        let (mut s, id) = one_param(3.0);
        let mut adam = Adam::new(AdamConfig::default(), &s);
        let none = ParamGrads::zeros_like(&s);
        adam.step(&mut s, &none);
        assert!((s.get(id).data[0] - 3.0 * (1.0 - 1e-3 * 1e-5)).abs() < 1e-15);
    }

    #[test]
    fn frozen_parameters_do_not_move() {
        let mut s = ParamStore::new();
        let a = s.add("unmix.w", Tensor::scalar(1.0));
        let b = s.add("extract.w", Tensor::scalar(1.0));
        let mut adam = Adam::new(AdamConfig::default(), &s);
        adam.train_only(&s, &["unmix."]);
        let mut g = ParamGrads::zeros_like(&s);
        g.accumulate(a, &Tensor::scalar(1.0));
        g.accumulate(b, &Tensor::scalar(1.0));
        adam.step(&mut s, &g);
        assert!(s.get(a).data[0] < 1.0);
        assert_eq!(s.get(b).data[0], 1.0);
    }

    #[test]
    fn non_finite_gradient_skips_step() {
        let (mut s, id) = one_param(1.0);
        let mut adam = Adam::new(AdamConfig::default(), &s);
        let mut g = ParamGrads::zeros_like(&s);
        g.accumulate(id, &Tensor::scalar(f64::NAN));
        assert_eq!(adam.step(&mut s, &g), StepOutcome::SkippedNonFinite);
        assert_eq!(s.get(id).data[0], 1.0);
        assert_eq!((adam.step, adam.skipped), (0, 1));
    }

    #[test]
    fn two_stale_epochs_halve_once() {
        let (s, _) = one_param(0.0);
        let mut adam = Adam::new(AdamConfig::default(), &s);
        let mut sched = PlateauSchedule::default();
        assert_eq!(sched.observe(1.0, &mut adam), EpochDecision::Improved);
        assert_eq!(sched.observe(1.1, &mut adam), EpochDecision::Continue);
        assert_eq!(adam.lr(), 1e-3);
        assert_eq!(sched.observe(1.2, &mut adam), EpochDecision::HalveLr);
        assert_eq!(adam.lr(), 5e-4);
        assert_eq!(sched.observe(0.9, &mut adam), EpochDecision::Improved);
        assert_eq!(adam.lr(), 5e-4);
    }

    #[test]
    fn early_stop_after_patience() {
        let (s, _) = one_param(0.0);
        let mut adam = Adam::new(AdamConfig::default(), &s);
        let mut sched = PlateauSchedule::new(2, 4);
        sched.observe(1.0, &mut adam);
        let d: Vec<_> = (0..4).map(|_| sched.observe(2.0, &mut adam)).collect();
        assert_eq!(
            d,
            vec![EpochDecision::Continue, EpochDecision::HalveLr, EpochDecision::Continue, EpochDecision::Stop]
        );
    }
}
