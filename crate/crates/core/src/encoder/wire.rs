//! JSON wire format for remote encoders.
//!
//! Request: `{"images": ["<base64 PNG>", ...]}`.
//! Response: `{"features": [[f, ...], ...], "dim": d}`.
//! Images travel as 16-bit RGB PNG so quantisation stays far below feature
//! tolerance.

use std::io::Cursor;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use image::{ImageBuffer, ImageFormat, Rgb};
use serde::{Deserialize, Serialize};

use crate::data::ImageTensor;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbedRequest {
    pub images: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbedResponse {
    pub features: Vec<Vec<f32>>,
    pub dim: usize,
}

pub fn encode_png(img: &ImageTensor) -> Result<Vec<u8>> {
    let rgb = img.clone().into_rgb();
    let samples: Vec<u16> = rgb.pixels().iter().map(|&v| (v * 65535.0).round() as u16).collect();
    let buf: ImageBuffer<Rgb<u16>, Vec<u16>> = ImageBuffer::from_raw(rgb.width() as u32, rgb.height() as u32, samples)
        .ok_or_else(|| Error::InvalidImage("buffer size mismatch".into()))?;
    let mut out = Cursor::new(Vec::new());
    buf.write_to(&mut out, ImageFormat::Png)?;
    Ok(out.into_inner())
}

pub fn decode_png(bytes: &[u8]) -> Result<ImageTensor> {
    let img = image::load_from_memory(bytes)?.to_rgb32f();
    let (w, h) = img.dimensions();
    let pixels = img.into_raw().into_iter().map(|v| v.clamp(0.0, 1.0)).collect();
    ImageTensor::new(h as usize, w as usize, 3, pixels)
}

pub fn encode_request(images: &[ImageTensor]) -> Result<EmbedRequest> {
    let images = images.iter().map(|img| Ok(STANDARD.encode(encode_png(img)?))).collect::<Result<_>>()?;
    Ok(EmbedRequest { images })
}

pub fn decode_request(req: &EmbedRequest) -> Result<Vec<ImageTensor>> {
    req.images
        .iter()
        .map(|s| {
            let bytes = STANDARD.decode(s).map_err(|e| Error::Protocol(format!("bad base64 image: {e}")))?;
            decode_png(&bytes)
        })
        .collect()
}

/// Checks a response against the request size and declared dimension.
pub fn validate_response(resp: &EmbedResponse, expected_count: usize) -> Result<()> {
    if resp.features.len() != expected_count {
        return Err(Error::Protocol(format!(
            "server returned {} vectors for {expected_count} images",
            resp.features.len()
        )));
    }
    if let Some(bad) = resp.features.iter().find(|f| f.len() != resp.dim) {
        return Err(Error::Protocol(format!("vector of length {} but declared dim {}", bad.len(), resp.dim)));
    }
    if resp.features.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Protocol("non-finite feature value".into()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_roundtrip_is_near_lossless() {
        let img = ImageTensor::new(3, 5, 3, (0..45).map(|i| i as f32 / 44.0).collect()).unwrap();
        let back = decode_png(&encode_png(&img).unwrap()).unwrap();
        assert_eq!(back.dims(), img.dims());
        let err = back.pixels().iter().zip(img.pixels()).map(|(a, b)| (a - b).abs()).fold(0.0, f32::max);
        assert!(err <= 1.0 / 65535.0);
    }

    #[test]
    fn request_roundtrip_and_response_checks() {
        let imgs = vec![ImageTensor::filled(4, 4, [0.1, 0.2, 0.3]); 2];
        let req = encode_request(&imgs).unwrap();
        let json = serde_json::to_string(&req).unwrap();
        let back = decode_request(&serde_json::from_str(&json).unwrap()).unwrap();
        assert_eq!(back.len(), 2);
        let ok = EmbedResponse { features: vec![vec![1.0, 2.0]; 2], dim: 2 };
        validate_response(&ok, 2).unwrap();
        assert!(matches!(validate_response(&ok, 3), Err(Error::Protocol(_))));
        let ragged = EmbedResponse { features: vec![vec![1.0, 2.0], vec![1.0]], dim: 2 };
        assert!(validate_response(&ragged, 2).is_err());
    }
}
