//! Procedural labeled image datasets for running the pipeline without
//! downloaded data.
//!
//! `Shapes` draws one of ten filled shapes, in a hue tied to the class, on a
//! smooth random background; `Textures` mixes oriented sinusoids and blobs,
//! with the class set by the dominant orientation. The two families are
//! deliberately different distributions. Every record is a pure function of
//! `(family, seed, index)`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::dataset::InMemoryDataset;
use crate::error::Result;
use crate::rng::child_rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SyntheticFamily {
    Shapes,
    Textures,
}

impl SyntheticFamily {
    pub fn name(self) -> &'static str {
        match self {
            Self::Shapes => "shapes",
            Self::Textures => "textures",
        }
    }
}

pub const SYNTHETIC_CLASSES: usize = 10;

/// Generates `len` images of `side x side`. Labels cycle through the ten
/// classes so every prefix is close to balanced.
pub fn synthetic_dataset(family: SyntheticFamily, len: usize, side: usize, seed: u64) -> Result<InMemoryDataset> {
    let mut pixels = Vec::with_capacity(len * side * side * 3);
    let mut labels = Vec::with_capacity(len);
    for i in 0..len {
        let label = i % SYNTHETIC_CLASSES;
        let img = synthetic_image(family, label, side, seed, i);
        pixels.extend(img.iter().map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8));
        labels.push(label);
    }
    InMemoryDataset::new(format!("{}-{seed}", family.name()), side, side, pixels, Some(labels))
}

fn random_color(rng: &mut impl Rng) -> [f32; 3] {
    [rng.random(), rng.random(), rng.random()]
}

fn synthetic_image(family: SyntheticFamily, label: usize, side: usize, seed: u64, index: usize) -> Vec<f32> {
    let mut rng = child_rng(seed, &format!("synthetic/{}/{index}", family.name()));
    let mut img = vec![0.0f32; side * side * 3];
    match family {
        SyntheticFamily::Shapes => draw_shapes(&mut img, side, label, &mut rng),
        SyntheticFamily::Textures => draw_textures(&mut img, side, label, &mut rng),
    }
    let noise = 0.03 + 0.04 * rng.random::<f32>();
    for v in &mut img {
        *v = (*v + noise * (rng.random::<f32>() - 0.5) * 2.0).clamp(0.0, 1.0);
    }
    img
}

/// A saturated colour whose hue is set by `label`, with some jitter.
fn class_color(label: usize, rng: &mut impl Rng) -> [f32; 3] {
    let hue = (label as f32 + (rng.random::<f32>() - 0.5) * 0.5) / SYNTHETIC_CLASSES as f32;
    let sat = 0.6 + 0.4 * rng.random::<f32>();
    let val = 0.6 + 0.4 * rng.random::<f32>();
    let h6 = hue.rem_euclid(1.0) * 6.0;
    let f = h6 - h6.floor();
    let (p, q, t) = (val * (1.0 - sat), val * (1.0 - sat * f), val * (1.0 - sat * (1.0 - f)));
    match h6 as usize % 6 {
        0 => [val, t, p],
        1 => [q, val, p],
        2 => [p, val, t],
        3 => [p, q, val],
        4 => [t, p, val],
        _ => [val, p, q],
    }
}

fn draw_shapes(img: &mut [f32], side: usize, label: usize, rng: &mut impl Rng) {
    let s = side as f32;
    let c0 = random_color(rng);
    let c1 = random_color(rng);
    let angle: f32 = rng.random::<f32>() * std::f32::consts::TAU;
    let (ga, gb) = (angle.cos(), angle.sin());
    let freq = 1.0 + rng.random::<f32>() * 3.0;
    let phase = rng.random::<f32>() * std::f32::consts::TAU;
    let amp = 0.05 + 0.1 * rng.random::<f32>();
    let fg = class_color(label, rng);
    let cx = s * (0.3 + 0.4 * rng.random::<f32>());
    let cy = s * (0.3 + 0.4 * rng.random::<f32>());
    let r = s * (0.18 + 0.17 * rng.random::<f32>());
    let rot: f32 = rng.random::<f32>() * std::f32::consts::TAU;
    let (rc, rs) = (rot.cos(), rot.sin());
    for y in 0..side {
        for x in 0..side {
            let u = x as f32 / s - 0.5;
            let v = y as f32 / s - 0.5;
            let t = ((u * ga + v * gb) + 0.71) / 1.42;
            let wave = amp * (freq * std::f32::consts::TAU * (u * gb - v * ga) + phase).sin();
            let dx = (x as f32 + 0.5 - cx) / r;
            let dy = (y as f32 + 0.5 - cy) / r;
            let (px, py) = (dx * rc + dy * rs, -dx * rs + dy * rc);
            let inside = shape_mask(label, px, py);
            let o = (y * side + x) * 3;
            for c in 0..3 {
                let bg = c0[c] * (1.0 - t) + c1[c] * t + wave;
                img[o + c] = if inside { fg[c] } else { bg };
            }
        }
    }
}

/// Shape membership in the shape's own unit frame.
fn shape_mask(label: usize, x: f32, y: f32) -> bool {
    let d = (x * x + y * y).sqrt();
    match label {
        0 => d <= 1.0,
        1 => x.abs() <= 0.8 && y.abs() <= 0.8,
        2 => y <= 0.7 && y >= -0.9 + 1.6 * x.abs(),
        3 => (x.abs() <= 0.25 && y.abs() <= 1.0) || (y.abs() <= 0.25 && x.abs() <= 1.0),
        4 => (0.55..=1.0).contains(&d),
        5 => d <= 1.0 && (y * 3.0).rem_euclid(2.0) < 1.0,
        6 => x.abs() + y.abs() <= 1.0,
        7 => d <= 1.0 && ((x + y) * 2.5).rem_euclid(2.0) < 1.0,
        8 => x.abs() <= 0.9 && y.abs() <= 0.9 && ((x * 2.5).floor() + (y * 2.5).floor()).rem_euclid(2.0) < 1.0,
        _ => {
            let theta = y.atan2(x);
            d <= 0.55 + 0.45 * (5.0 * theta).cos().abs()
        }
    }
}

fn draw_textures(img: &mut [f32], side: usize, label: usize, rng: &mut impl Rng) {
    let s = side as f32;
    let base_angle = label as f32 * std::f32::consts::PI / SYNTHETIC_CLASSES as f32;
    let waves: Vec<(f32, f32, f32, f32)> = (0..3)
        .map(|k| {
            let jitter = (rng.random::<f32>() - 0.5) * 0.15;
            let angle = if k == 0 { base_angle + jitter } else { rng.random::<f32>() * std::f32::consts::PI };
            let freq = 2.0 + rng.random::<f32>() * 5.0;
            let weight = if k == 0 { 0.5 } else { 0.15 * rng.random::<f32>() };
            (angle, freq, rng.random::<f32>() * std::f32::consts::TAU, weight)
        })
        .collect();
    let blobs: Vec<(f32, f32, f32, [f32; 3])> = (0..4)
        .map(|_| (rng.random::<f32>() * s, rng.random::<f32>() * s, s * (0.08 + 0.15 * rng.random::<f32>()), random_color(rng)))
        .collect();
    let ca = random_color(rng);
    let cb = random_color(rng);
    for y in 0..side {
        for x in 0..side {
            let u = x as f32 / s;
            let v = y as f32 / s;
            let mut t = 0.0;
            for &(angle, freq, phase, weight) in &waves {
                t += weight * (std::f32::consts::TAU * freq * (u * angle.cos() + v * angle.sin()) + phase).sin();
            }
            let t = (t + 1.0) * 0.5;
            let o = (y * side + x) * 3;
            for c in 0..3 {
                img[o + c] = ca[c] * (1.0 - t) + cb[c] * t;
            }
            for &(bx, by, br, col) in &blobs {
                let d2 = ((x as f32 - bx).powi(2) + (y as f32 - by).powi(2)) / (br * br);
                let w = (-d2).exp() * 0.6;
                for c in 0..3 {
                    img[o + c] = img[o + c] * (1.0 - w) + col[c] * w;
                }
            }
        }
    }
}
