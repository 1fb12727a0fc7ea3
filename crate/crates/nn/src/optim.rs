//! First-order optimizers. State is kept per parameter in the order the
//! parameters are handed over, so callers must pass a stable ordering.

use crate::tensor::Param;

/// Cosine decay from `base` to zero over `total` epochs.
pub fn cosine_lr(base: f32, epoch: usize, total: usize) -> f32 {
    if total == 0 {
        return base;
    }
    let progress = epoch.min(total) as f32 / total as f32;
    base * 0.5 * (1.0 + (std::f32::consts::PI * progress).cos())
}

/// SGD with heavy-ball momentum; L2 weight decay is folded into the gradient.
#[derive(Clone, Debug)]
pub struct Sgd {
    pub momentum: f32,
    pub weight_decay: f32,
    velocity: Vec<Vec<f32>>,
}

impl Sgd {
    pub fn new(momentum: f32, weight_decay: f32) -> Self {
        Self { momentum, weight_decay, velocity: Vec::new() }
    }

    pub fn step(&mut self, params: Vec<&mut Param>, lr: f32) {
        if self.velocity.len() != params.len() {
            self.velocity = params.iter().map(|p| vec![0.0; p.len()]).collect();
        }
        for (p, vel) in params.into_iter().zip(&mut self.velocity) {
            for ((w, g), v) in p.value.iter_mut().zip(&p.grad).zip(vel.iter_mut()) {
                let d = g + self.weight_decay * *w;
                *v = self.momentum * *v + d;
                *w -= lr * *v;
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    pub weight_decay: f32,
    t: u32,
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
}

impl Adam {
    pub fn new(lr: f32) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.0, t: 0, m: Vec::new(), v: Vec::new() }
    }

    pub fn step(&mut self, params: Vec<&mut Param>) {
        if self.m.len() != params.len() {
            self.m = params.iter().map(|p| vec![0.0; p.len()]).collect();
            self.v = self.m.clone();
        }
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for ((p, m), v) in params.into_iter().zip(&mut self.m).zip(&mut self.v) {
            for i in 0..p.value.len() {
                let g = p.grad[i] + self.weight_decay * p.value[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                p.value[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_schedule_endpoints() {
        assert_eq!(cosine_lr(0.1, 0, 10), 0.1);
        assert!(cosine_lr(0.1, 10, 10).abs() < 1e-7);
        assert!((cosine_lr(0.1, 5, 10) - 0.05).abs() < 1e-7);
    }

    #[test]
    fn sgd_minimizes_quadratic() {
        let mut p = Param::new(vec![3.0, -2.0]);
        let mut opt = Sgd::new(0.9, 0.0);
        for _ in 0..200 {
            p.grad = p.value.iter().map(|w| 2.0 * w).collect();
            opt.step(vec![&mut p], 0.05);
        }
        assert!(p.value.iter().all(|w| w.abs() < 1e-3));
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut p = Param::new(vec![1.0]);
        p.grad = vec![5.0];
        let mut opt = Adam::new(0.01);
        opt.step(vec![&mut p]);
        assert!((p.value[0] - 0.99).abs() < 1e-5);
    }
}
