use std::f64::consts::PI;

/// Linear warm-up followed by cosine decay to `min_lr`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Schedule {
    pub base_lr: f64,
    pub min_lr: f64,
    pub warmup_steps: usize,
    pub total_steps: usize,
}

impl Schedule {
    pub fn new(base_lr: f64, min_lr: f64, warmup_steps: usize, total_steps: usize) -> Self {
        assert!(warmup_steps < total_steps, "warmup must be shorter than the run");
        assert!(min_lr <= base_lr, "min_lr must not exceed base_lr");
        Schedule { base_lr, min_lr, warmup_steps, total_steps }
    }
}

/// Learning rate at `step`. Steps past `total_steps` clamp to `min_lr`.
pub fn lr_at(s: &Schedule, step: usize) -> f64 {
    if step > s.total_steps {
        return s.min_lr;
    }
    if step < s.warmup_steps {
        return s.base_lr * step as f64 / s.warmup_steps as f64;
    }
    let progress = (step - s.warmup_steps) as f64 / (s.total_steps - s.warmup_steps) as f64;
    s.min_lr + 0.5 * (s.base_lr - s.min_lr) * (1.0 + (PI * progress).cos())
}
