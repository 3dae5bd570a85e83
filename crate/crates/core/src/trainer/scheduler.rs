//! Reduce-on-plateau learning-rate schedule driven by the positive-sample
//! portion of the training loss.

/// Plateau schedule parameters. The rate is multiplied by `factor` after
/// `patience` consecutive epochs without a relative improvement of at
/// least `rel_tol`, never dropping below `min_lr`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SchedulerConfig {
    pub factor: f64,
    pub patience: u32,
    pub rel_tol: f64,
    pub min_lr: f64,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        SchedulerConfig {
            factor: 0.8,
            patience: 3,
            rel_tol: 1e-4,
            min_lr: 1e-6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PlateauScheduler {
    config: SchedulerConfig,
    learning_rate: f64,
    best: Option<f64>,
    bad_epochs: u32,
}

impl PlateauScheduler {
    pub fn new(initial_lr: f64, config: SchedulerConfig) -> Self {
        PlateauScheduler {
            config,
            learning_rate: initial_lr,
            best: None,
            bad_epochs: 0,
        }
    }

    pub fn learning_rate(&self) -> f64 {
        self.learning_rate
    }

    /// Feeds one epoch's positive-part loss and returns the rate to use
    /// next. The bad-epoch counter resets on each reduction.
    pub fn step(&mut self, positive_loss: f64) -> f64 {
        match self.best {
            None => {
                self.best = Some(positive_loss);
            }
            Some(best) if positive_loss < best * (1.0 - self.config.rel_tol) => {
                self.best = Some(positive_loss);
                self.bad_epochs = 0;
            }
            Some(_) => {
                self.bad_epochs += 1;
                if self.bad_epochs >= self.config.patience {
                    self.learning_rate =
                        (self.learning_rate * self.config.factor).max(self.config.min_lr);
                    self.bad_epochs = 0;
                }
            }
        }
        self.learning_rate
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn scheduler() -> PlateauScheduler {
        PlateauScheduler::new(0.001, SchedulerConfig::default())
    }

    #[test]
    fn improving_loss_keeps_the_rate() {
        let mut sched = scheduler();
        let mut loss = 1.0;
        for _ in 0..20 {
            sched.step(loss);
            loss *= 0.9;
        }
        assert_abs_diff_eq!(sched.learning_rate(), 0.001, epsilon = 1e-15);
    }

    #[test]
    fn constant_loss_reduces_once_after_patience() {
        let mut sched = scheduler();
        for _ in 0..4 {
            sched.step(1.0); // first call seeds best, then 3 bad epochs
        }
        assert_abs_diff_eq!(sched.learning_rate(), 0.0008, epsilon = 1e-15);
        // one more bad epoch must not reduce again yet
        sched.step(1.0);
        assert_abs_diff_eq!(sched.learning_rate(), 0.0008, epsilon = 1e-15);
    }

    #[test]
    fn constant_loss_reduces_twice_after_two_cycles() {
        let mut sched = scheduler();
        for _ in 0..8 {
            sched.step(1.0); // seed + 3 bad, then 3 bad + 1 spare
        }
        assert_abs_diff_eq!(sched.learning_rate(), 0.001 * 0.64, epsilon = 1e-15);
    }

    #[test]
    fn sub_tolerance_improvements_count_as_plateau() {
        let mut sched = scheduler();
        let mut loss = 1.0;
        for _ in 0..4 {
            sched.step(loss);
            loss *= 1.0 - 1e-6; // improves, but below rel_tol
        }
        assert_abs_diff_eq!(sched.learning_rate(), 0.0008, epsilon = 1e-15);
    }

    #[test]
    fn rate_never_drops_below_min() {
        let mut sched = PlateauScheduler::new(
            0.001,
            SchedulerConfig {
                min_lr: 0.0005,
                ..SchedulerConfig::default()
            },
        );
        for _ in 0..100 {
            sched.step(1.0);
        }
        assert_abs_diff_eq!(sched.learning_rate(), 0.0005, epsilon = 1e-15);
    }

    #[test]
    fn recovery_resets_the_counter() {
        let mut sched = scheduler();
        sched.step(1.0);
        sched.step(1.0);
        sched.step(1.0); // 2 bad epochs
        sched.step(0.5); // improvement resets
        sched.step(0.5);
        sched.step(0.5);
        assert_abs_diff_eq!(sched.learning_rate(), 0.001, epsilon = 1e-15);
        sched.step(0.5); // third consecutive bad epoch
        assert_abs_diff_eq!(sched.learning_rate(), 0.0008, epsilon = 1e-15);
    }
}
