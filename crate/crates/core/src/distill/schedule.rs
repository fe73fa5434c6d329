use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Learning rate as a function of the step index.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum LrSchedule {
    Constant {
        lr: f64,
    },
    /// Linear ramp from `start` to `peak` over `warmup_steps`, then continuous
    /// exponential decay by `decay_factor` every `decay_steps`.
    WarmupExpDecay {
        start: f64,
        peak: f64,
        warmup_steps: usize,
        decay_factor: f64,
        decay_steps: usize,
    },
}

impl LrSchedule {
    pub fn lr_at(&self, step: usize) -> f64 {
        match *self {
            LrSchedule::Constant { lr } => lr,
            LrSchedule::WarmupExpDecay {
                start,
                peak,
                warmup_steps,
                decay_factor,
                decay_steps,
            } => {
                if step < warmup_steps {
                    start + (peak - start) * step as f64 / warmup_steps as f64
                } else {
                    let t = (step - warmup_steps) as f64 / decay_steps.max(1) as f64;
                    peak * decay_factor.powf(t)
                }
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            LrSchedule::Constant { lr } => lr >= 0.0 && lr.is_finite(),
            LrSchedule::WarmupExpDecay {
                start,
                peak,
                decay_factor,
                decay_steps,
                ..
            } => {
                start >= 0.0
                    && peak >= 0.0
                    && decay_factor > 0.0
                    && decay_steps > 0
                    && peak.is_finite()
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::invalid(format!(
                "invalid learning-rate schedule {self:?}"
            )))
        }
    }
}

/// Optimizer loop settings shared by every training phase.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: LrSchedule,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Maximum random translation in pixels; 0 disables augmentation.
    pub augment_shift: usize,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid(format!(
                "momentum must be in [0, 1), got {}",
                self.momentum
            )));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::invalid("weight_decay must be >= 0"));
        }
        self.lr.validate()
    }
}

/// Soft/hard distillation loss settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KdConfig {
    pub temperature: f64,
    pub hard_weight: f64,
    pub train: TrainConfig,
}

impl KdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0) {
            return Err(Error::invalid(format!(
                "temperature must be > 0, got {}",
                self.temperature
            )));
        }
        if !(self.hard_weight >= 0.0) {
            return Err(Error::invalid("hard-label weight must be >= 0"));
        }
        self.train.validate()
    }
}

/// Cubic ramp to `final_sparsity` over `ramp_steps`, then held.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SparsitySchedule {
    pub final_sparsity: f64,
    pub ramp_steps: usize,
    pub hold_steps: usize,
    /// Mask recomputation interval during the ramp.
    pub update_every: usize,
}

impl SparsitySchedule {
    pub fn new(final_sparsity: f64, ramp_steps: usize, hold_steps: usize) -> Result<Self> {
        let s = SparsitySchedule {
            final_sparsity,
            ramp_steps,
            hold_steps,
            update_every: 100,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.final_sparsity) {
            return Err(Error::invalid(format!(
                "final sparsity must be in [0, 1), got {}",
                self.final_sparsity
            )));
        }
        if self.ramp_steps == 0 || self.update_every == 0 {
            return Err(Error::invalid("ramp_steps and update_every must be >= 1"));
        }
        Ok(())
    }

    pub fn total_steps(&self) -> usize {
        self.ramp_steps + self.hold_steps
    }

    /// Whether the mask is recomputed before step `t`.
    pub fn is_update_step(&self, t: usize) -> bool {
        t <= self.ramp_steps && (t.is_multiple_of(self.update_every) || t == self.ramp_steps)
    }
}

/// `s_f · (1 − (1 − min(t, T_r)/T_r)³)`.
pub fn sparsity_at_step(schedule: &SparsitySchedule, t: usize) -> f64 {
    let frac = t.min(schedule.ramp_steps) as f64 / schedule.ramp_steps as f64;
    schedule.final_sparsity * (1.0 - (1.0 - frac).powi(3))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ramp_endpoints_and_midpoint() {
        let s = SparsitySchedule::new(0.8, 1000, 500).unwrap();
        assert_eq!(sparsity_at_step(&s, 0), 0.0);
        assert_eq!(sparsity_at_step(&s, 1000), 0.8);
        assert_eq!(sparsity_at_step(&s, 5000), 0.8);
        assert!((sparsity_at_step(&s, 500) - 0.7).abs() < 1e-12);
    }

    #[test]
    fn ramp_is_monotone() {
        let s = SparsitySchedule::new(0.9, 333, 0).unwrap();
        let v: Vec<f64> = (0..400).map(|t| sparsity_at_step(&s, t)).collect();
        assert!(v.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn invalid_schedules() {
        assert!(SparsitySchedule::new(1.0, 10, 0).is_err());
        assert!(SparsitySchedule::new(0.5, 0, 0).is_err());
    }

    #[test]
    fn mask_updates_follow_cadence() {
        let s = SparsitySchedule::new(0.5, 250, 100).unwrap();
        let ups: Vec<usize> = (0..350).filter(|&t| s.is_update_step(t)).collect();
        assert_eq!(ups, vec![0, 100, 200, 250]);
    }

    #[test]
    fn warmup_then_decay() {
        let s = LrSchedule::WarmupExpDecay {
            start: 0.01,
            peak: 0.1,
            warmup_steps: 400,
            decay_factor: 0.1,
            decay_steps: 32_000,
        };
        assert!((s.lr_at(0) - 0.01).abs() < 1e-12);
        assert!((s.lr_at(200) - 0.055).abs() < 1e-12);
        assert!((s.lr_at(400) - 0.1).abs() < 1e-12);
        assert!((s.lr_at(32_400) - 0.01).abs() < 1e-12);
    }
}
