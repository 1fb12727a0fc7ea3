//! Stochastic augmentation pipeline.
//!
//! A pipeline is an ordered list of operations; `apply` is a pure function of
//! the image and the rng state it is handed. Every op preserves the input
//! dimensions.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::image::ImageTensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AugmentationKind {
    RandomResizedCrop,
    RandomGrayscale,
    RandomHorizontalFlip,
    ColorJitter,
    GaussianBlur,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum AugmentationOp {
    RandomResizedCrop {
        /// Fraction of the image area kept, sampled uniformly.
        scale: (f32, f32),
        /// Aspect ratio range, sampled log-uniformly.
        ratio: (f32, f32),
    },
    RandomGrayscale {
        p: f32,
    },
    RandomHorizontalFlip {
        p: f32,
    },
    ColorJitter {
        p: f32,
        brightness: f32,
        contrast: f32,
        saturation: f32,
        hue: f32,
    },
    GaussianBlur {
        p: f32,
        /// Odd kernel width in pixels.
        kernel: usize,
        sigma: (f32, f32),
    },
}

impl AugmentationOp {
    pub fn kind(&self) -> AugmentationKind {
        match self {
            Self::RandomResizedCrop { .. } => AugmentationKind::RandomResizedCrop,
            Self::RandomGrayscale { .. } => AugmentationKind::RandomGrayscale,
            Self::RandomHorizontalFlip { .. } => AugmentationKind::RandomHorizontalFlip,
            Self::ColorJitter { .. } => AugmentationKind::ColorJitter,
            Self::GaussianBlur { .. } => AugmentationKind::GaussianBlur,
        }
    }

    pub fn default_for(kind: AugmentationKind) -> Self {
        match kind {
            AugmentationKind::RandomResizedCrop => Self::RandomResizedCrop { scale: (0.2, 1.0), ratio: (0.75, 4.0 / 3.0) },
            AugmentationKind::RandomGrayscale => Self::RandomGrayscale { p: 0.2 },
            AugmentationKind::RandomHorizontalFlip => Self::RandomHorizontalFlip { p: 0.5 },
            AugmentationKind::ColorJitter => Self::ColorJitter {
                p: 0.8,
                brightness: 0.4,
                contrast: 0.4,
                saturation: 0.4,
                hue: 0.1,
            },
            AugmentationKind::GaussianBlur => Self::GaussianBlur { p: 0.5, kernel: 3, sigma: (0.1, 2.0) },
        }
    }

    fn validate(&self) -> Result<()> {
        let prob = |p: f32, name: &str| {
            if (0.0..=1.0).contains(&p) {
                Ok(())
            } else {
                Err(Error::InvalidParameter(format!("{name} probability {p} outside [0, 1]")))
            }
        };
        match *self {
            Self::RandomResizedCrop { scale, ratio } => {
                if !(scale.0 > 0.0 && scale.0 <= scale.1 && scale.1 <= 1.0) {
                    return Err(Error::InvalidParameter(format!("crop scale {scale:?} must satisfy 0 < lo <= hi <= 1")));
                }
                if !(ratio.0 > 0.0 && ratio.0 <= ratio.1) {
                    return Err(Error::InvalidParameter(format!("crop ratio {ratio:?} must satisfy 0 < lo <= hi")));
                }
                Ok(())
            }
            Self::RandomGrayscale { p } => prob(p, "grayscale"),
            Self::RandomHorizontalFlip { p } => prob(p, "flip"),
            Self::ColorJitter { p, brightness, contrast, saturation, hue } => {
                prob(p, "jitter")?;
                for (name, v) in [("brightness", brightness), ("contrast", contrast), ("saturation", saturation)] {
                    if !(0.0..=1.0).contains(&v) {
                        return Err(Error::InvalidParameter(format!("jitter {name} {v} outside [0, 1]")));
                    }
                }
                if !(0.0..=0.5).contains(&hue) {
                    return Err(Error::InvalidParameter(format!("jitter hue {hue} outside [0, 0.5]")));
                }
                Ok(())
            }
            Self::GaussianBlur { p, kernel, sigma } => {
                prob(p, "blur")?;
                if kernel == 0 || kernel % 2 == 0 {
                    return Err(Error::InvalidParameter(format!("blur kernel {kernel} must be odd")));
                }
                if !(sigma.0 > 0.0 && sigma.0 <= sigma.1) {
                    return Err(Error::InvalidParameter(format!("blur sigma {sigma:?} invalid")));
                }
                Ok(())
            }
        }
    }

    fn apply<R: Rng + ?Sized>(&self, img: ImageTensor, rng: &mut R) -> ImageTensor {
        match *self {
            Self::RandomResizedCrop { scale, ratio } => random_resized_crop(&img, scale, ratio, rng),
            Self::RandomGrayscale { p } => {
                if rng.random::<f32>() < p {
                    img.to_grayscale()
                } else {
                    img
                }
            }
            Self::RandomHorizontalFlip { p } => {
                if rng.random::<f32>() < p {
                    img.flip_horizontal()
                } else {
                    img
                }
            }
            Self::ColorJitter { p, brightness, contrast, saturation, hue } => {
                if rng.random::<f32>() < p {
                    color_jitter(img, brightness, contrast, saturation, hue, rng)
                } else {
                    img
                }
            }
            Self::GaussianBlur { p, kernel, sigma } => {
                if rng.random::<f32>() < p {
                    let s = rng.random_range(sigma.0..=sigma.1);
                    gaussian_blur(&img, kernel, s)
                } else {
                    img
                }
            }
        }
    }
}

/// Ordered, validated list of augmentation operations.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<AugmentationOp>", into = "Vec<AugmentationOp>")]
pub struct AugmentationPipeline {
    ops: Vec<AugmentationOp>,
}

impl TryFrom<Vec<AugmentationOp>> for AugmentationPipeline {
    type Error = Error;
    fn try_from(ops: Vec<AugmentationOp>) -> Result<Self> {
        Self::new(ops)
    }
}

impl From<AugmentationPipeline> for Vec<AugmentationOp> {
    fn from(p: AugmentationPipeline) -> Self {
        p.ops
    }
}

impl AugmentationPipeline {
    pub fn new(ops: Vec<AugmentationOp>) -> Result<Self> {
        for op in &ops {
            op.validate()?;
        }
        Ok(Self { ops })
    }

    pub fn identity() -> Self {
        Self { ops: Vec::new() }
    }

    /// Crop, colour jitter, grayscale, flip with the MoCo recipe parameters.
    pub fn contrastive_default() -> Self {
        Self::from_kinds(&[
            AugmentationKind::RandomResizedCrop,
            AugmentationKind::ColorJitter,
            AugmentationKind::RandomGrayscale,
            AugmentationKind::RandomHorizontalFlip,
        ])
    }

    /// Random resized crop only; used for querying when the training
    /// algorithm of the target is unknown.
    pub fn crop_only() -> Self {
        Self::from_kinds(&[AugmentationKind::RandomResizedCrop])
    }

    /// Default-parameterised ops of the given kinds, in order.
    pub fn from_kinds(kinds: &[AugmentationKind]) -> Self {
        Self { ops: kinds.iter().map(|&k| AugmentationOp::default_for(k)).collect() }
    }

    pub fn ops(&self) -> &[AugmentationOp] {
        &self.ops
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    /// Stable hex digest of the op list, used in cache keys.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(&self.ops).expect("ops serialize");
        hex::encode(&Sha256::digest(json)[..8])
    }

    pub fn apply<R: Rng + ?Sized>(&self, image: &ImageTensor, rng: &mut R) -> ImageTensor {
        self.ops.iter().fold(image.clone(), |img, op| op.apply(img, rng))
    }

    /// `n` independent augmented views of `image`.
    pub fn views<R: Rng + ?Sized>(&self, image: &ImageTensor, n: usize, rng: &mut R) -> Vec<ImageTensor> {
        (0..n).map(|_| self.apply(image, rng)).collect()
    }
}

/// Applies `pipeline` to `image` using `rng`.
pub fn augment<R: Rng + ?Sized>(image: &ImageTensor, pipeline: &AugmentationPipeline, rng: &mut R) -> ImageTensor {
    pipeline.apply(image, rng)
}

fn random_resized_crop<R: Rng + ?Sized>(
    img: &ImageTensor,
    scale: (f32, f32),
    ratio: (f32, f32),
    rng: &mut R,
) -> ImageTensor {
    let (h, w) = (img.height(), img.width());
    let area = (h * w) as f32;
    let (log_lo, log_hi) = (ratio.0.ln(), ratio.1.ln());
    for _ in 0..10 {
        let target_area = area * rng.random_range(scale.0..=scale.1);
        let aspect = rng.random_range(log_lo..=log_hi).exp();
        let cw = (target_area * aspect).sqrt().round() as usize;
        let ch = (target_area / aspect).sqrt().round() as usize;
        if cw > 0 && ch > 0 && cw <= w && ch <= h {
            let top = rng.random_range(0..=h - ch);
            let left = rng.random_range(0..=w - cw);
            return img.resample_region(top as f32, left as f32, ch as f32, cw as f32, h, w);
        }
    }
    // Fallback: central crop clamped to the ratio range.
    let in_ratio = w as f32 / h as f32;
    let (ch, cw) = if in_ratio < ratio.0 {
        (((w as f32) / ratio.0).round() as usize, w)
    } else if in_ratio > ratio.1 {
        (h, ((h as f32) * ratio.1).round() as usize)
    } else {
        (h, w)
    };
    let (ch, cw) = (ch.clamp(1, h), cw.clamp(1, w));
    let top = (h - ch) / 2;
    let left = (w - cw) / 2;
    img.resample_region(top as f32, left as f32, ch as f32, cw as f32, h, w)
}

fn blend(img: &mut ImageTensor, other: &[f32], factor: f32) {
    for (v, o) in img.pixels_mut().iter_mut().zip(other) {
        *v = (factor * *v + (1.0 - factor) * o).clamp(0.0, 1.0);
    }
}

fn color_jitter<R: Rng + ?Sized>(
    mut img: ImageTensor,
    brightness: f32,
    contrast: f32,
    saturation: f32,
    hue: f32,
    rng: &mut R,
) -> ImageTensor {
    let mut order = [0u8, 1, 2, 3];
    order.shuffle(rng);
    let factor = |s: f32, rng: &mut R| if s > 0.0 { rng.random_range((1.0 - s).max(0.0)..=1.0 + s) } else { 1.0 };
    for step in order {
        match step {
            0 => {
                let f = factor(brightness, rng);
                img.pixels_mut().iter_mut().for_each(|v| *v = (*v * f).clamp(0.0, 1.0));
            }
            1 => {
                let f = factor(contrast, rng);
                let luma = img.luma();
                let mean = luma.iter().sum::<f32>() / luma.len() as f32;
                let target = vec![mean; img.pixels().len()];
                blend(&mut img, &target, f);
            }
            2 => {
                let f = factor(saturation, rng);
                if img.channels() == 3 {
                    let gray = img.to_grayscale();
                    let gray_px = gray.pixels().to_vec();
                    blend(&mut img, &gray_px, f);
                }
            }
            _ => {
                if hue > 0.0 && img.channels() == 3 {
                    let shift = rng.random_range(-hue..=hue);
                    for px in img.pixels_mut().chunks_mut(3) {
                        let (h, s, v) = rgb_to_hsv(px[0], px[1], px[2]);
                        let (r, g, b) = hsv_to_rgb((h + shift).rem_euclid(1.0), s, v);
                        px[0] = r;
                        px[1] = g;
                        px[2] = b;
                    }
                }
            }
        }
    }
    img
}

fn rgb_to_hsv(r: f32, g: f32, b: f32) -> (f32, f32, f32) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let h = if delta <= 0.0 {
        0.0
    } else if max == r {
        ((g - b) / delta).rem_euclid(6.0) / 6.0
    } else if max == g {
        ((b - r) / delta + 2.0) / 6.0
    } else {
        ((r - g) / delta + 4.0) / 6.0
    };
    let s = if max <= 0.0 { 0.0 } else { delta / max };
    (h, s, max)
}

fn hsv_to_rgb(h: f32, s: f32, v: f32) -> (f32, f32, f32) {
    let h6 = h * 6.0;
    let i = h6.floor();
    let f = h6 - i;
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    let (r, g, b) = match (i as i32).rem_euclid(6) {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    };
    (r.clamp(0.0, 1.0), g.clamp(0.0, 1.0), b.clamp(0.0, 1.0))
}

/// Separable Gaussian blur with reflected borders.
fn gaussian_blur(img: &ImageTensor, kernel: usize, sigma: f32) -> ImageTensor {
    let radius = (kernel / 2) as isize;
    let weights: Vec<f32> = (-radius..=radius).map(|d| (-(d * d) as f32 / (2.0 * sigma * sigma)).exp()).collect();
    let norm: f32 = weights.iter().sum();
    let weights: Vec<f32> = weights.into_iter().map(|w| w / norm).collect();
    let (h, w, c) = img.dims();
    let reflect = |i: isize, n: usize| -> usize {
        let n = n as isize;
        if n == 1 {
            return 0;
        }
        let mut i = i;
        while i < 0 || i >= n {
            i = if i < 0 { -i } else { 2 * (n - 1) - i };
        }
        i as usize
    };
    let mut tmp = vec![0.0; h * w * c];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let mut acc = 0.0;
                for (k, wt) in weights.iter().enumerate() {
                    let sx = reflect(x as isize + k as isize - radius, w);
                    acc += wt * img.get(y, sx, ch);
                }
                tmp[(y * w + x) * c + ch] = acc;
            }
        }
    }
    let mut out = vec![0.0; h * w * c];
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let mut acc = 0.0;
                for (k, wt) in weights.iter().enumerate() {
                    let sy = reflect(y as isize + k as isize - radius, h);
                    acc += wt * tmp[(sy * w + x) * c + ch];
                }
                out[(y * w + x) * c + ch] = acc.clamp(0.0, 1.0);
            }
        }
    }
    ImageTensor::from_raw(h, w, c, out)
}
