//! Weight initializers.

use rand::Rng;
use rand_distr::{Distribution, Normal, Uniform};

/// He/Kaiming normal for layers followed by ReLU.
pub fn kaiming_normal<R: Rng + ?Sized>(len: usize, fan_in: usize, rng: &mut R) -> Vec<f32> {
    let std = (2.0 / fan_in.max(1) as f32).sqrt();
    let dist = Normal::new(0.0f32, std).expect("finite std");
    (0..len).map(|_| dist.sample(rng)).collect()
}

/// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`, the usual default for dense layers.
pub fn fan_in_uniform<R: Rng + ?Sized>(len: usize, fan_in: usize, rng: &mut R) -> Vec<f32> {
    let bound = 1.0 / (fan_in.max(1) as f32).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound).expect("valid bounds");
    (0..len).map(|_| dist.sample(rng)).collect()
}
