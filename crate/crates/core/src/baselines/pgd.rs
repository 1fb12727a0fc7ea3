//! Targeted projected gradient descent under an L-infinity budget.

use encodermi_nn::Tensor;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::classifiers::MlpClassifier;
use crate::contrastive::EncoderModel;
use crate::data::ImageTensor;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdvExampleConfig {
    /// Per-pixel L-infinity budget.
    pub epsilon: f32,
    /// Step size; `epsilon / 10` when absent.
    pub step: Option<f32>,
    pub iterations: usize,
    pub random_start: bool,
}

impl Default for AdvExampleConfig {
    fn default() -> Self {
        Self { epsilon: 8.0 / 255.0, step: None, iterations: 20, random_start: true }
    }
}

impl AdvExampleConfig {
    pub fn step_size(&self) -> f32 {
        self.step.unwrap_or(self.epsilon / 10.0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon >= 0.0) || !(self.step_size() >= 0.0) {
            return Err(Error::InvalidParameter(format!("invalid PGD config {self:?}")));
        }
        Ok(())
    }
}

/// Moves each image towards being classified as its target class by the
/// composition `head(model(x))`, staying within `epsilon` of the original
/// and inside `[0, 1]`. Best effort: no convergence check.
pub fn pgd_targeted<R: Rng + ?Sized>(
    model: &EncoderModel,
    head: &MlpClassifier,
    images: &[ImageTensor],
    targets: &[usize],
    cfg: &AdvExampleConfig,
    rng: &mut R,
) -> Result<Vec<ImageTensor>> {
    cfg.validate()?;
    if images.len() != targets.len() {
        return Err(Error::DimensionMismatch { expected: images.len(), got: targets.len() });
    }
    if images.is_empty() {
        return Ok(Vec::new());
    }
    let clean = model.input_tensor(images)?;
    let shape = clean.shape().to_vec();
    let (c, h, w) = (shape[1], shape[2], shape[3]);
    let eps = cfg.epsilon;
    let project = |x: &mut [f32]| {
        for (v, &o) in x.iter_mut().zip(clean.data()) {
            *v = v.clamp(o - eps, o + eps).clamp(0.0, 1.0);
        }
    };
    let mut adv: Vec<f32> = clean.data().to_vec();
    if cfg.random_start && eps > 0.0 {
        adv.iter_mut().for_each(|v| *v += rng.random_range(-eps..=eps));
        project(&mut adv);
    }
    let mut net = model.clone();
    let step = cfg.step_size();
    for _ in 0..cfg.iterations {
        let feats = net.forward_train(&Tensor::from_vec(&shape, adv.clone()));
        let rows: Vec<Vec<f32>> = feats.data().chunks(model.dim()).map(<[f32]>::to_vec).collect();
        let gfeat = head.input_gradient(&rows, targets)?;
        let gx = net.backward(&Tensor::from_vec(feats.shape(), gfeat.into_iter().flatten().collect()));
        net.zero_grad();
        for (v, g) in adv.iter_mut().zip(gx.data()) {
            if *g != 0.0 {
                *v -= step * g.signum();
            }
        }
        project(&mut adv);
    }
    let per = c * h * w;
    Ok(adv.chunks(per).map(|chunk| ImageTensor::from_chw(c, h, w, chunk)).collect())
}
