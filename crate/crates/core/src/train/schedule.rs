/// Linear warmup from zero followed by per-iteration exponential decay.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LrSchedule {
    pub base: f64,
    pub warmup_iters: u64,
    pub decay: f64,
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self {
            base: 1e-3,
            warmup_iters: 10,
            decay: 0.999997,
        }
    }
}

impl LrSchedule {
    /// Learning rate at iteration `t` (the first update uses `t = 1`).
    pub fn lr_at(&self, t: u64) -> f64 {
        let ramp = if self.warmup_iters == 0 {
            1.0
        } else {
            (t as f64 / self.warmup_iters as f64).min(1.0)
        };
        let decay_steps = t.saturating_sub(self.warmup_iters);
        self.base * ramp * self.decay.powf(decay_steps as f64)
    }
}
