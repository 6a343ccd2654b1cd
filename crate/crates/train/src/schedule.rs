/// Learning-rate schedule and loop constants:
/// lr(epoch) = base_lr · 0.5^⌊epoch / halve_every⌋.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSchedule {
    pub base_lr: f64,
    pub halve_every: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        TrainSchedule {
            base_lr: 2e-4,
            halve_every: 60,
            epochs: 120,
            batch_size: 8,
            seed: 0,
        }
    }
}

impl TrainSchedule {
    pub fn lr(&self, epoch: usize) -> f64 {
        self.base_lr * 0.5f64.powi((epoch / self.halve_every) as i32)
    }
}
