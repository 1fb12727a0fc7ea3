//! The `ImageTensor` type and the geometric/colour primitives the
//! augmentation pipeline is built from.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An `H x W x C` image with values in `[0, 1]`, stored row-major (HWC).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageTensor {
    height: usize,
    width: usize,
    channels: usize,
    pixels: Vec<f32>,
}

impl ImageTensor {
    pub fn new(height: usize, width: usize, channels: usize, pixels: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidImage(format!("empty image {height}x{width}")));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidImage(format!("{channels} channels, expected 1 or 3")));
        }
        if pixels.len() != height * width * channels {
            return Err(Error::InvalidImage(format!(
                "{} values for a {height}x{width}x{channels} image",
                pixels.len()
            )));
        }
        if let Some(bad) = pixels.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidImage(format!("pixel value {bad} outside [0, 1]")));
        }
        Ok(Self { height, width, channels, pixels })
    }

    /// Constant-colour RGB image.
    pub fn filled(height: usize, width: usize, rgb: [f32; 3]) -> Self {
        let pixels = (0..height * width).flat_map(|_| rgb).map(|v| v.clamp(0.0, 1.0)).collect();
        Self { height, width, channels: 3, pixels }
    }

    /// From interleaved 8-bit samples (`channels` per pixel). Grayscale input is
    /// replicated to three channels.
    pub fn from_u8(height: usize, width: usize, channels: usize, bytes: &[u8]) -> Result<Self> {
        let pixels = bytes.iter().map(|&b| b as f32 / 255.0).collect();
        Ok(Self::new(height, width, channels, pixels)?.into_rgb())
    }

    pub(crate) fn from_raw(height: usize, width: usize, channels: usize, pixels: Vec<f32>) -> Self {
        debug_assert_eq!(pixels.len(), height * width * channels);
        Self { height, width, channels, pixels }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f32 {
        self.pixels[(y * self.width + x) * self.channels + c]
    }

    /// Replicates a single channel to RGB; RGB images are returned unchanged.
    pub fn into_rgb(self) -> Self {
        if self.channels == 3 {
            return self;
        }
        let pixels = self.pixels.iter().flat_map(|&v| [v, v, v]).collect();
        Self { channels: 3, pixels, ..self }
    }

    /// Planar `C x H x W` copy, the layout the networks consume.
    pub fn to_chw(&self) -> Vec<f32> {
        let (h, w, c) = self.dims();
        let mut out = vec![0.0; h * w * c];
        for y in 0..h {
            for x in 0..w {
                for ch in 0..c {
                    out[(ch * h + y) * w + x] = self.pixels[(y * w + x) * c + ch];
                }
            }
        }
        out
    }

    /// Rounds every value to the nearest multiple of 1/255, as storing the
    /// image in an 8-bit format would.
    pub fn quantize_u8(&self) -> Self {
        let pixels = self.pixels.iter().map(|&v| (v * 255.0).round() / 255.0).collect();
        Self { pixels, ..self.clone() }
    }

    pub fn to_u8(&self) -> Vec<u8> {
        self.pixels.iter().map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8).collect()
    }

    /// Bilinear resize with pixel-centre alignment (no corner alignment).
    pub fn resize_bilinear(&self, out_h: usize, out_w: usize) -> Self {
        if out_h == self.height && out_w == self.width {
            return self.clone();
        }
        self.resample_region(0.0, 0.0, self.height as f32, self.width as f32, out_h, out_w)
    }

    /// Bilinearly samples the axis-aligned region starting at `(top, left)` of
    /// size `region_h x region_w` into an `out_h x out_w` image.
    pub fn resample_region(
        &self,
        top: f32,
        left: f32,
        region_h: f32,
        region_w: f32,
        out_h: usize,
        out_w: usize,
    ) -> Self {
        let c = self.channels;
        let sy = region_h / out_h as f32;
        let sx = region_w / out_w as f32;
        let max_y = (self.height - 1) as f32;
        let max_x = (self.width - 1) as f32;
        let mut pixels = vec![0.0; out_h * out_w * c];
        for oy in 0..out_h {
            let fy = (top + (oy as f32 + 0.5) * sy - 0.5).clamp(0.0, max_y);
            let y0 = fy.floor() as usize;
            let y1 = (y0 + 1).min(self.height - 1);
            let wy = fy - y0 as f32;
            for ox in 0..out_w {
                let fx = (left + (ox as f32 + 0.5) * sx - 0.5).clamp(0.0, max_x);
                let x0 = fx.floor() as usize;
                let x1 = (x0 + 1).min(self.width - 1);
                let wx = fx - x0 as f32;
                for ch in 0..c {
                    let top_v = self.get(y0, x0, ch) * (1.0 - wx) + self.get(y0, x1, ch) * wx;
                    let bot_v = self.get(y1, x0, ch) * (1.0 - wx) + self.get(y1, x1, ch) * wx;
                    pixels[(oy * out_w + ox) * c + ch] = (top_v * (1.0 - wy) + bot_v * wy).clamp(0.0, 1.0);
                }
            }
        }
        Self { height: out_h, width: out_w, channels: c, pixels }
    }

    /// Integer crop; panics if the window leaves the image.
    pub fn crop(&self, top: usize, left: usize, h: usize, w: usize) -> Self {
        assert!(top + h <= self.height && left + w <= self.width, "crop outside image");
        let c = self.channels;
        let mut pixels = Vec::with_capacity(h * w * c);
        for y in top..top + h {
            let start = (y * self.width + left) * c;
            pixels.extend_from_slice(&self.pixels[start..start + w * c]);
        }
        Self { height: h, width: w, channels: c, pixels }
    }

    pub fn flip_horizontal(&self) -> Self {
        let c = self.channels;
        let mut pixels = Vec::with_capacity(self.pixels.len());
        for y in 0..self.height {
            for x in (0..self.width).rev() {
                let start = (y * self.width + x) * c;
                pixels.extend_from_slice(&self.pixels[start..start + c]);
            }
        }
        Self { pixels, ..self.clone() }
    }

    /// ITU-R 601 luma, one value per pixel.
    pub fn luma(&self) -> Vec<f32> {
        if self.channels == 1 {
            return self.pixels.clone();
        }
        self.pixels
            .chunks(3)
            .map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2])
            .collect()
    }

    /// Luma replicated across the existing channel count.
    pub fn to_grayscale(&self) -> Self {
        let c = self.channels;
        let pixels = self.luma().into_iter().flat_map(|l| std::iter::repeat_n(l, c)).collect();
        Self { pixels, ..self.clone() }
    }

    pub(crate) fn pixels_mut(&mut self) -> &mut [f32] {
        &mut self.pixels
    }

    /// Side-by-side concatenation; both images must share height and channels.
    pub fn hconcat(&self, right: &Self) -> Result<Self> {
        if self.height != right.height || self.channels != right.channels {
            return Err(Error::InvalidImage(format!(
                "cannot concatenate {:?} with {:?}",
                self.dims(),
                right.dims()
            )));
        }
        let c = self.channels;
        let width = self.width + right.width;
        let mut pixels = Vec::with_capacity(self.height * width * c);
        for y in 0..self.height {
            pixels.extend_from_slice(&self.pixels[y * self.width * c..(y + 1) * self.width * c]);
            pixels.extend_from_slice(&right.pixels[y * right.width * c..(y + 1) * right.width * c]);
        }
        Ok(Self { height: self.height, width, channels: c, pixels })
    }

    /// Stacks images into an NCHW batch for the networks.
    pub fn batch_chw(images: &[ImageTensor]) -> (Vec<usize>, Vec<f32>) {
        let Some(first) = images.first() else { return (vec![0, 3, 0, 0], Vec::new()) };
        let (h, w, c) = first.dims();
        let mut data = Vec::with_capacity(images.len() * h * w * c);
        for img in images {
            assert_eq!(img.dims(), (h, w, c), "batch images must share dimensions");
            data.extend(img.to_chw());
        }
        (vec![images.len(), c, h, w], data)
    }

    /// Inverse of [`ImageTensor::to_chw`], clamping into `[0, 1]`.
    pub fn from_chw(c: usize, h: usize, w: usize, data: &[f32]) -> Self {
        let mut pixels = vec![0.0; c * h * w];
        for ch in 0..c {
            for y in 0..h {
                for x in 0..w {
                    pixels[(y * w + x) * c + ch] = data[(ch * h + y) * w + x].clamp(0.0, 1.0);
                }
            }
        }
        Self { height: h, width: w, channels: c, pixels }
    }
}
