use std::collections::VecDeque;

use encodermi_nn::Sequential;
use rand::Rng;

use super::model::EncoderModel;
use crate::error::{Error, Result};

/// FIFO dictionary of key vectors with a fixed capacity.
#[derive(Clone, Debug)]
pub struct KeyQueue {
    dim: usize,
    capacity: usize,
    keys: VecDeque<Vec<f32>>,
}

impl KeyQueue {
    pub fn new(dim: usize, capacity: usize) -> Self {
        Self { dim, capacity, keys: VecDeque::with_capacity(capacity) }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    /// Oldest first.
    pub fn iter(&self) -> impl Iterator<Item = &Vec<f32>> {
        self.keys.iter()
    }

    /// Row-major `len x dim` copy in f64.
    pub fn to_flat_f64(&self) -> Vec<f64> {
        self.keys.iter().flatten().map(|&v| v as f64).collect()
    }
}

/// Enqueues `new_keys` at the tail, dropping the oldest keys beyond capacity.
pub fn queue_update(queue: &mut KeyQueue, new_keys: &[Vec<f32>]) -> Result<()> {
    if new_keys.len() > queue.capacity {
        return Err(Error::InvalidParameter(format!(
            "{} keys exceed queue capacity {}",
            new_keys.len(),
            queue.capacity
        )));
    }
    if let Some(bad) = new_keys.iter().find(|k| k.len() != queue.dim) {
        return Err(Error::DimensionMismatch { expected: queue.dim, got: bad.len() });
    }
    for key in new_keys {
        if queue.keys.len() == queue.capacity {
            queue.keys.pop_front();
        }
        queue.keys.push_back(key.clone());
    }
    Ok(())
}

/// `theta_m <- m * theta_m + (1 - m) * theta` for every parameter.
pub fn momentum_update(encoder: &EncoderModel, momentum_encoder: &mut EncoderModel, m: f32) -> Result<()> {
    if !(0.0..=1.0).contains(&m) {
        return Err(Error::InvalidParameter(format!("momentum coefficient {m} outside [0, 1]")));
    }
    if encoder.spec() != momentum_encoder.spec() || encoder.num_params() != momentum_encoder.num_params() {
        return Err(Error::ArchitectureMismatch(format!(
            "{:?} vs {:?}",
            encoder.spec(),
            momentum_encoder.spec()
        )));
    }
    for (src, dst) in encoder.params().into_iter().zip(momentum_encoder.params_mut()) {
        for (t, tm) in src.value.iter().zip(dst.value.iter_mut()) {
            *tm = m * *tm + (1.0 - m) * t;
        }
    }
    Ok(())
}

/// Query encoder, its slowly moving copy, and the negative-key queue.
#[derive(Clone, Debug)]
pub struct MoCoState {
    pub encoder: EncoderModel,
    pub momentum_encoder: EncoderModel,
    pub queue: KeyQueue,
    pub m: f32,
    pub tau: f64,
}

impl MoCoState {
    pub fn new(encoder: EncoderModel, queue_size: usize, m: f32, tau: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&m) || !(tau > 0.0) || queue_size == 0 {
            return Err(Error::InvalidParameter(format!("invalid MoCo settings K={queue_size} m={m} tau={tau}")));
        }
        let queue = KeyQueue::new(encoder.dim(), queue_size);
        Ok(Self { momentum_encoder: encoder.clone(), encoder, queue, m, tau })
    }
}

/// Encoder plus the projection head used only inside the loss.
#[derive(Clone, Debug)]
pub struct SimCLRState {
    pub encoder: EncoderModel,
    pub head: Sequential,
    pub tau: f64,
}

impl SimCLRState {
    pub fn new<R: Rng + ?Sized>(encoder: EncoderModel, hidden: usize, proj_dim: usize, tau: f64, rng: &mut R) -> Result<Self> {
        if !(tau > 0.0) || hidden == 0 || proj_dim == 0 {
            return Err(Error::InvalidParameter(format!("invalid SimCLR settings tau={tau}")));
        }
        let head = Sequential::mlp(&[encoder.dim(), hidden, proj_dim], rng);
        Ok(Self { encoder, head, tau })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contrastive::model::{Architecture, EncoderSpec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn key(v: f32) -> Vec<f32> {
        vec![v, 0.0]
    }

    #[test]
    fn queue_fifo() {
        let mut q = KeyQueue::new(2, 8);
        queue_update(&mut q, &(0..4).map(|i| key(i as f32)).collect::<Vec<_>>()).unwrap();
        assert_eq!(q.len(), 4);
        queue_update(&mut q, &(4..8).map(|i| key(i as f32)).collect::<Vec<_>>()).unwrap();
        queue_update(&mut q, &(8..12).map(|i| key(i as f32)).collect::<Vec<_>>()).unwrap();
        let firsts: Vec<f32> = q.iter().map(|k| k[0]).collect();
        assert_eq!(firsts, (4..12).map(|i| i as f32).collect::<Vec<_>>());
        queue_update(&mut q, &(20..28).map(|i| key(i as f32)).collect::<Vec<_>>()).unwrap();
        assert_eq!(q.iter().next().unwrap()[0], 20.0);
        assert!(queue_update(&mut q, &[vec![1.0]]).is_err());
        assert!(queue_update(&mut q, &vec![key(0.0); 9]).is_err());
    }

    #[test]
    fn momentum_extremes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let spec = EncoderSpec { arch: Architecture::SmallResnet, width: 2, dim: 4, resolution: (8, 8) };
        let h = EncoderModel::new(spec, &mut rng).unwrap();
        let mut hm = EncoderModel::new(spec, &mut rng).unwrap();
        let before = hm.flat_params();
        momentum_update(&h, &mut hm, 1.0).unwrap();
        assert_eq!(hm.flat_params(), before);
        momentum_update(&h, &mut hm, 0.0).unwrap();
        assert_eq!(hm.flat_params(), h.flat_params());

        let mut ones = h.clone();
        ones.load_flat_params(&vec![1.0; h.num_params()]).unwrap();
        let mut zeros = h.clone();
        zeros.load_flat_params(&vec![0.0; h.num_params()]).unwrap();
        momentum_update(&ones, &mut zeros, 0.999).unwrap();
        assert!(zeros.flat_params().iter().all(|v| (v - 0.001).abs() < 1e-7));

        let other = EncoderModel::new(EncoderSpec { arch: Architecture::SmallVgg, ..spec }, &mut rng).unwrap();
        assert!(matches!(momentum_update(&other, &mut hm, 0.5), Err(Error::ArchitectureMismatch(_))));
    }
}
