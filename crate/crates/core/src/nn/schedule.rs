use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Linear warmup from zero, cosine decay to a floor, then constant.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub peak_lr: f64,
    pub warmup_steps: u64,
    pub total_steps: u64,
    pub floor_lr: f64,
}

impl LrSchedule {
    pub fn new(peak_lr: f64, warmup_steps: u64, total_steps: u64, floor_lr: f64) -> Result<Self> {
        if total_steps == 0 {
            return Err(Error::Config("total_steps must be positive".into()));
        }
        if warmup_steps > total_steps {
            return Err(Error::Config(format!(
                "warmup_steps {warmup_steps} exceeds total_steps {total_steps}"
            )));
        }
        if !(0.0..=peak_lr).contains(&floor_lr) {
            return Err(Error::Config(format!(
                "floor_lr {floor_lr} must lie in [0, peak_lr={peak_lr}]"
            )));
        }
        Ok(LrSchedule {
            peak_lr,
            warmup_steps,
            total_steps,
            floor_lr,
        })
    }

    pub fn lr_at(&self, step: u64) -> f64 {
        if step >= self.total_steps {
            return self.floor_lr;
        }
        if step < self.warmup_steps {
            return self.peak_lr * step as f64 / self.warmup_steps as f64;
        }
        let span = (self.total_steps - self.warmup_steps) as f64;
        let progress = (step - self.warmup_steps) as f64 / span;
        self.floor_lr + (self.peak_lr - self.floor_lr) * 0.5 * (1.0 + (PI * progress).cos())
    }
}

pub fn lr_at(schedule: &LrSchedule, step: u64) -> f64 {
    schedule.lr_at(step)
}
