use super::{Result, TrainError};

/// Linear warmup to `lr_max` over `warmup` steps, then half-cosine decay
/// to zero at `total`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrSchedule {
    pub lr_max: f64,
    pub warmup: usize,
    pub total: usize,
}

impl LrSchedule {
    pub fn new(lr_max: f64, warmup: usize, total: usize) -> Result<Self> {
        let s = Self {
            lr_max,
            warmup,
            total,
        };
        s.validate()?;
        Ok(s)
    }

    /// Warmup of `fraction · total` steps, at least one and fewer than `total`.
    pub fn with_warmup_fraction(lr_max: f64, fraction: f64, total: usize) -> Result<Self> {
        if !(0.0..1.0).contains(&fraction) {
            return Err(TrainError::Config(format!(
                "warmup fraction must lie in [0, 1), got {fraction}"
            )));
        }
        let warmup =
            ((fraction * total as f64).round() as usize).clamp(1, total.saturating_sub(1).max(1));
        Self::new(lr_max, warmup, total)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr_max > 0.0 && self.lr_max.is_finite()) {
            return Err(TrainError::Config(format!(
                "lr_max must be positive, got {}",
                self.lr_max
            )));
        }
        if !(0 < self.warmup && self.warmup < self.total) {
            return Err(TrainError::Config(format!(
                "need 0 < warmup < total, got warmup={} total={}",
                self.warmup, self.total
            )));
        }
        Ok(())
    }

    /// Learning rate at (possibly fractional) step `t ∈ [0, total]`.
    pub fn lr_at(&self, t: f64) -> Result<f64> {
        let (w, total) = (self.warmup as f64, self.total as f64);
        if !(t >= 0.0) || t > total {
            return Err(TrainError::ScheduleExhausted {
                step: t,
                total: self.total,
            });
        }
        if t <= w {
            return Ok(self.lr_max * t / w);
        }
        let progress = (t - w) / (total - w);
        Ok(0.5 * (1.0 + (std::f64::consts::PI * progress).cos()) * self.lr_max)
    }
}
