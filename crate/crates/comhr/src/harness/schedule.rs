//! Cosine annealing with warm restarts.

/// `lr(t) = min_lr + (peak - min_lr) * (1 + cos(pi * t_cur / period)) / 2`
/// where `t_cur` resets every `period` steps.
#[derive(Clone, Copy, Debug)]
pub struct CosineRestartSchedule {
    pub peak_lr: f64,
    pub min_lr: f64,
    pub period: usize,
}

impl CosineRestartSchedule {
    pub fn new(peak_lr: f64, min_lr: f64, period: usize) -> Self {
        assert!(period > 0, "restart period must be positive");
        CosineRestartSchedule {
            peak_lr,
            min_lr,
            period,
        }
    }

    pub fn lr_at(&self, step: usize) -> f64 {
        let t_cur = (step % self.period) as f64;
        let cos = (std::f64::consts::PI * t_cur / self.period as f64).cos();
        self.min_lr + (self.peak_lr - self.min_lr) * (1.0 + cos) / 2.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn restart_starts_back_at_peak() {
        let s = CosineRestartSchedule::new(0.1, 1e-4, 50);
        for restart in 0..5 {
            assert_eq!(s.lr_at(restart * 50), 0.1);
        }
    }

    #[test]
    fn never_below_min_lr_and_decays_within_period() {
        let s = CosineRestartSchedule::new(0.1, 1e-4, 37);
        let mut prev = f64::INFINITY;
        for step in 0..37 {
            let lr = s.lr_at(step);
            assert!(lr >= s.min_lr - 1e-15);
            assert!(lr <= s.peak_lr + 1e-15);
            assert!(lr <= prev, "monotone within one period");
            prev = lr;
        }
        // Last step of the period approaches min_lr.
        assert!(s.lr_at(36) < 0.001);
    }
}
