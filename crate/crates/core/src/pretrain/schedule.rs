use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Warmup plus polynomial decay learning-rate schedule and the size of one
/// update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSchedule {
    pub total_updates: u64,
    pub warmup_updates: u64,
    pub peak_lr: f64,
    #[serde(default)]
    pub end_lr: f64,
    #[serde(default = "default_power")]
    pub power: f64,
    /// Global batch in tokens (sequences x sequence length).
    pub tokens_per_update: u64,
    #[serde(default)]
    pub seed: u64,
}

fn default_power() -> f64 {
    1.0
}

impl TrainSchedule {
    /// 100k updates, 10k warmup, 8k sequences of 512 tokens per update.
    pub fn base() -> Self {
        TrainSchedule {
            total_updates: 100_000,
            warmup_updates: 10_000,
            peak_lr: 4e-4,
            end_lr: 0.0,
            power: 1.0,
            tokens_per_update: 8192 * 512,
            seed: 1,
        }
    }

    pub fn large() -> Self {
        TrainSchedule {
            peak_lr: 1.5e-4,
            ..Self::base()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.warmup_updates >= self.total_updates {
            return Err(Error::Config(format!(
                "warmup_updates ({}) must be below total_updates ({})",
                self.warmup_updates, self.total_updates
            )));
        }
        if !(self.peak_lr.is_finite() && self.end_lr >= 0.0 && self.peak_lr > self.end_lr) {
            return Err(Error::Config(format!(
                "need peak_lr > end_lr >= 0, got peak_lr={} end_lr={}",
                self.peak_lr, self.end_lr
            )));
        }
        if !(self.power > 0.0 && self.power.is_finite()) {
            return Err(Error::Config(format!("power must be positive, got {}", self.power)));
        }
        if self.tokens_per_update == 0 {
            return Err(Error::Config("tokens_per_update must be positive".into()));
        }
        Ok(())
    }

    /// Learning rate applied at update `step` (0-based).
    ///
    /// Linear from 0 to `peak_lr` over the warmup, then
    /// `end_lr + (peak_lr - end_lr) * ((total - step) / (total - warmup))^power`.
    pub fn lr_at(&self, step: u64) -> Result<f64> {
        if step > self.total_updates {
            return Err(Error::Input(format!(
                "step {step} is past total_updates {}",
                self.total_updates
            )));
        }
        if step < self.warmup_updates {
            return Ok(self.peak_lr * step as f64 / self.warmup_updates as f64);
        }
        if step == self.warmup_updates {
            return Ok(self.peak_lr);
        }
        let remaining = (self.total_updates - step) as f64 / (self.total_updates - self.warmup_updates) as f64;
        Ok(self.end_lr + (self.peak_lr - self.end_lr) * remaining.powf(self.power))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preset_landmarks() {
        let s = TrainSchedule::base();
        assert_eq!(s.lr_at(0).unwrap(), 0.0);
        assert_eq!(s.lr_at(10_000).unwrap(), 4e-4);
        assert!((s.lr_at(55_000).unwrap() - 2e-4).abs() < 1e-15);
        assert_eq!(s.lr_at(100_000).unwrap(), 0.0);
        assert!(s.lr_at(100_001).is_err());
        assert_eq!(TrainSchedule::large().lr_at(10_000).unwrap(), 1.5e-4);
    }

    #[test]
    fn end_lr_is_reached() {
        let s = TrainSchedule {
            end_lr: 1e-5,
            power: 2.0,
            ..TrainSchedule::base()
        };
        assert_eq!(s.lr_at(s.total_updates).unwrap(), 1e-5);
    }

    #[test]
    fn invalid_schedules() {
        let mut s = TrainSchedule::base();
        s.warmup_updates = s.total_updates;
        assert!(s.validate().is_err());
        let mut s = TrainSchedule::base();
        s.end_lr = s.peak_lr;
        assert!(s.validate().is_err());
        assert!(TrainSchedule::base().validate().is_ok());
    }
}
