use std::fmt;
use std::path::Path;
use std::str::FromStr;

use encodermi_nn::{cosine_lr, Layer, Sgd, Tensor};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::checkpoint::{write_atomic, EncoderCheckpoint};
use super::loss::{moco_batch_loss, simclr_batch_loss};
use super::model::{EncoderModel, EncoderSpec};
use super::state::{momentum_update, queue_update, MoCoState, SimCLRState};
use crate::data::{AugmentationPipeline, Dataset, DatasetSplit, ImageTensor, SplitRole};
use crate::error::{Error, Result};
use crate::json_digest;
use crate::rng::child_rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    Moco,
    Simclr,
}

impl Algorithm {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Moco => "moco",
            Self::Simclr => "simclr",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "moco" => Ok(Self::Moco),
            "simclr" => Ok(Self::Simclr),
            other => Err(Error::UnknownAlgorithm(other.to_string())),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MocoConfig {
    pub queue_size: usize,
    pub momentum: f32,
    pub tau: f64,
}

impl Default for MocoConfig {
    fn default() -> Self {
        Self { queue_size: 4096, momentum: 0.999, tau: 0.07 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimclrConfig {
    pub tau: f64,
    pub proj_hidden: usize,
    pub proj_dim: usize,
}

impl Default for SimclrConfig {
    fn default() -> Self {
        Self { tau: 0.5, proj_hidden: 128, proj_dim: 64 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainConfig {
    pub encoder: EncoderSpec,
    pub algorithm: Algorithm,
    pub epochs: usize,
    pub batch_size: usize,
    /// Learning rate at batch size 256; scaled linearly with `batch_size`.
    pub base_lr: f32,
    pub sgd_momentum: f32,
    pub weight_decay: f32,
    /// Emit a checkpoint every this many epochs (0: final epoch only).
    pub checkpoint_every: usize,
    pub moco: MocoConfig,
    pub simclr: SimclrConfig,
    pub augmentation: AugmentationPipeline,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderSpec::default(),
            algorithm: Algorithm::Moco,
            epochs: 200,
            batch_size: 256,
            base_lr: 0.06,
            sgd_momentum: 0.9,
            weight_decay: 1e-4,
            checkpoint_every: 50,
            moco: MocoConfig::default(),
            simclr: SimclrConfig::default(),
            augmentation: AugmentationPipeline::contrastive_default(),
        }
    }
}

impl PretrainConfig {
    pub fn digest(&self) -> String {
        json_digest(self)
    }

    pub fn learning_rate(&self) -> f32 {
        self.base_lr * self.batch_size as f32 / 256.0
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::InvalidParameter("batch_size must be at least 2".into()));
        }
        if self.algorithm == Algorithm::Moco && self.batch_size > self.moco.queue_size {
            return Err(Error::InvalidParameter("MoCo batch_size exceeds queue_size".into()));
        }
        if !(self.base_lr > 0.0) {
            return Err(Error::InvalidParameter("base_lr must be positive".into()));
        }
        Ok(())
    }

    /// Epochs at which a checkpoint is emitted.
    pub fn checkpoint_epochs(&self) -> Vec<usize> {
        (1..=self.epochs)
            .filter(|&e| e == self.epochs || (self.checkpoint_every > 0 && e % self.checkpoint_every == 0))
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub loss: f64,
}

#[derive(Clone, Debug)]
pub struct PretrainOutcome {
    pub checkpoints: Vec<EncoderCheckpoint>,
    pub losses: Vec<EpochLoss>,
}

/// Loads split images at `resolution`, resizing when the source differs.
pub fn load_split_images(dataset: &dyn Dataset, split: &DatasetSplit, resolution: (usize, usize)) -> Result<Vec<ImageTensor>> {
    split
        .indices
        .iter()
        .map(|&id| {
            let img = dataset.image(id)?;
            Ok(if (img.height(), img.width()) == resolution { img } else { img.resize_bilinear(resolution.0, resolution.1) })
        })
        .collect()
}

fn to_f64(t: &Tensor) -> Vec<f64> {
    t.data().iter().map(|&v| v as f64).collect()
}

fn to_tensor(shape: &[usize], v: &[f64]) -> Tensor {
    Tensor::from_vec(shape, v.iter().map(|&x| x as f32).collect())
}

/// Contrastive pre-training on the images of `split`.
///
/// `on_checkpoint` sees each checkpoint as it is produced (e.g. to persist
/// it); all checkpoints are also returned.
pub fn pretrain_encoder(
    dataset: &dyn Dataset,
    split: &DatasetSplit,
    config: &PretrainConfig,
    seed: u64,
    on_checkpoint: &mut dyn FnMut(&EncoderCheckpoint) -> Result<()>,
) -> Result<PretrainOutcome> {
    if !matches!(split.role, SplitRole::PretrainMember | SplitRole::ShadowMember) {
        return Err(Error::InvalidParameter(format!("cannot pre-train on a {} split", split.role)));
    }
    if split.is_empty() {
        return Err(Error::EmptySplit(split.name.clone()));
    }
    config.validate()?;
    let images = load_split_images(dataset, split, config.encoder.resolution)?;
    pretrain_on_images(&images, config, seed, on_checkpoint)
}

/// Same as [`pretrain_encoder`] over images already in memory.
pub fn pretrain_on_images(
    images: &[ImageTensor],
    config: &PretrainConfig,
    seed: u64,
    on_checkpoint: &mut dyn FnMut(&EncoderCheckpoint) -> Result<()>,
) -> Result<PretrainOutcome> {
    if images.is_empty() {
        return Err(Error::EmptySplit("pre-training images".into()));
    }
    config.validate()?;
    let digest = config.digest();
    let encoder = EncoderModel::new(config.encoder, &mut child_rng(seed, "pretrain/init"))?;
    let mut trainer = match config.algorithm {
        Algorithm::Moco => Trainer::Moco(MoCoState::new(encoder, config.moco.queue_size, config.moco.momentum, config.moco.tau)?),
        Algorithm::Simclr => Trainer::Simclr(SimCLRState::new(
            encoder,
            config.simclr.proj_hidden,
            config.simclr.proj_dim,
            config.simclr.tau,
            &mut child_rng(seed, "pretrain/head"),
        )?),
    };
    let mut sgd = Sgd::new(config.sgd_momentum, config.weight_decay);
    let mut order_rng = child_rng(seed, "pretrain/order");
    let mut aug_rng = child_rng(seed, "pretrain/augment");
    let checkpoint_epochs = config.checkpoint_epochs();
    let mut outcome = PretrainOutcome { checkpoints: Vec::new(), losses: Vec::new() };
    let mut order: Vec<usize> = (0..images.len()).collect();
    for epoch in 1..=config.epochs {
        let lr = cosine_lr(config.learning_rate(), epoch - 1, config.epochs);
        order.shuffle(&mut order_rng);
        let mut total = 0.0;
        let mut batches = 0usize;
        for batch in order.chunks(config.batch_size) {
            if batch.len() < 2 {
                continue;
            }
            let mut views = Vec::with_capacity(2 * batch.len());
            for &i in batch {
                views.push(config.augmentation.apply(&images[i], &mut aug_rng));
                views.push(config.augmentation.apply(&images[i], &mut aug_rng));
            }
            total += trainer.step(&views, &mut sgd, lr)?;
            batches += 1;
        }
        let loss = if batches > 0 { total / batches as f64 } else { f64::NAN };
        log::debug!("epoch {epoch}: loss {loss:.4}");
        outcome.losses.push(EpochLoss { epoch, loss });
        if checkpoint_epochs.contains(&epoch) {
            let ck = EncoderCheckpoint { epoch, config_digest: digest.clone(), model: trainer.encoder().clone() };
            on_checkpoint(&ck)?;
            outcome.checkpoints.push(ck);
        }
    }
    Ok(outcome)
}

enum Trainer {
    Moco(MoCoState),
    Simclr(SimCLRState),
}

impl Trainer {
    fn encoder(&self) -> &EncoderModel {
        match self {
            Trainer::Moco(s) => &s.encoder,
            Trainer::Simclr(s) => &s.encoder,
        }
    }

    /// One optimisation step on interleaved views `(2t, 2t + 1)`.
    fn step(&mut self, views: &[ImageTensor], sgd: &mut Sgd, lr: f32) -> Result<f64> {
        match self {
            Trainer::Moco(s) => {
                let queries: Vec<ImageTensor> = views.iter().step_by(2).cloned().collect();
                let keys: Vec<ImageTensor> = views.iter().skip(1).step_by(2).cloned().collect();
                let d = s.encoder.dim();
                let n = queries.len();
                s.encoder.zero_grad();
                let q = s.encoder.forward_train(&s.encoder.input_tensor(&queries)?);
                let k = s.momentum_encoder.forward(&s.momentum_encoder.input_tensor(&keys)?);
                let k64 = to_f64(&k);
                let (loss, grad) = moco_batch_loss(&to_f64(&q), &k64, &s.queue.to_flat_f64(), d, s.tau)?;
                s.encoder.backward(&to_tensor(&[n, d], &grad));
                sgd.step(s.encoder.params_mut(), lr);
                momentum_update(&s.encoder, &mut s.momentum_encoder, s.m)?;
                let unit_keys: Vec<Vec<f32>> = k
                    .data()
                    .chunks(d)
                    .map(|row| {
                        let norm = row.iter().map(|v| v * v).sum::<f32>().sqrt().max(1e-12);
                        row.iter().map(|v| v / norm).collect()
                    })
                    .collect();
                queue_update(&mut s.queue, &unit_keys)?;
                Ok(loss)
            }
            Trainer::Simclr(s) => {
                s.encoder.zero_grad();
                s.head.zero_grad();
                let h = s.encoder.forward_train(&s.encoder.input_tensor(views)?);
                let z = s.head.forward_train(&h);
                let (rows, pd) = z.dims2();
                let (loss, grad) = simclr_batch_loss(&to_f64(&z), pd, s.tau)?;
                let dh = s.head.backward(&to_tensor(&[rows, pd], &grad));
                s.encoder.backward(&dh);
                let mut params = s.encoder.params_mut();
                params.extend(s.head.params_mut());
                sgd.step(params, lr);
                Ok(loss)
            }
        }
    }
}

/// Writes the per-epoch loss as CSV with header `epoch,loss`.
pub fn write_loss_log(path: &Path, losses: &[EpochLoss]) -> Result<()> {
    let mut text = String::from("epoch,loss\n");
    for l in losses {
        text.push_str(&format!("{},{}\n", l.epoch, l.loss));
    }
    write_atomic(path, text.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contrastive::model::Architecture;
    use crate::data::{synthetic_dataset, SyntheticFamily};

    fn tiny_config(algorithm: Algorithm) -> PretrainConfig {
        PretrainConfig {
            encoder: EncoderSpec { arch: Architecture::SmallResnet, width: 4, dim: 16, resolution: (12, 12) },
            algorithm,
            epochs: 4,
            batch_size: 8,
            base_lr: 0.5,
            checkpoint_every: 2,
            moco: MocoConfig { queue_size: 32, momentum: 0.9, tau: 0.2 },
            ..PretrainConfig::default()
        }
    }

    #[test]
    fn checkpoint_schedule() {
        let mut c = tiny_config(Algorithm::Moco);
        c.epochs = 200;
        c.checkpoint_every = 50;
        assert_eq!(c.checkpoint_epochs(), vec![50, 100, 150, 200]);
        c.epochs = 7;
        c.checkpoint_every = 3;
        assert_eq!(c.checkpoint_epochs(), vec![3, 6, 7]);
        c.checkpoint_every = 0;
        assert_eq!(c.checkpoint_epochs(), vec![7]);
    }

    #[test]
    fn runs_both_algorithms_deterministically() {
        let ds = synthetic_dataset(SyntheticFamily::Shapes, 20, 12, 0).unwrap();
        let split = DatasetSplit::new(SplitRole::PretrainMember, "s", (0..20).collect());
        for algo in [Algorithm::Moco, Algorithm::Simclr] {
            let cfg = tiny_config(algo);
            let mut seen = Vec::new();
            let out = pretrain_encoder(&ds, &split, &cfg, 5, &mut |ck| {
                seen.push(ck.epoch);
                Ok(())
            })
            .unwrap();
            assert_eq!(seen, vec![2, 4]);
            assert_eq!(out.losses.len(), 4);
            assert!(out.losses.iter().all(|l| l.loss.is_finite() && l.loss >= 0.0));
            let again = pretrain_encoder(&ds, &split, &cfg, 5, &mut |_| Ok(())).unwrap();
            assert_eq!(out.checkpoints[1].model.flat_params(), again.checkpoints[1].model.flat_params());
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let ds = synthetic_dataset(SyntheticFamily::Shapes, 4, 12, 0).unwrap();
        let cfg = tiny_config(Algorithm::Moco);
        let empty = DatasetSplit::new(SplitRole::PretrainMember, "s", vec![]);
        assert!(matches!(pretrain_encoder(&ds, &empty, &cfg, 0, &mut |_| Ok(())), Err(Error::EmptySplit(_))));
        let wrong = DatasetSplit::new(SplitRole::EvalNonmember, "s", vec![0, 1]);
        assert!(pretrain_encoder(&ds, &wrong, &cfg, 0, &mut |_| Ok(())).is_err());
        assert!(matches!("byol".parse::<Algorithm>(), Err(Error::UnknownAlgorithm(_))));
    }
}
