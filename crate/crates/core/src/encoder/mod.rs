//! Black-box access to image encoders.
//!
//! Everything downstream of pre-training sees an encoder only through
//! [`BlackBoxEncoder`]: a batch of images in, a batch of `d`-vectors out.
//! [`LocalEncoder`] runs a checkpoint in-process; [`RemoteEncoder`] talks the
//! JSON wire protocol in [`wire`] to an HTTP endpoint.

mod remote;
mod server;
pub mod wire;

use std::path::Path;

use sha2::{Digest, Sha256};

pub use remote::{connect_remote, connect_remote_with, RemoteEncoder, RemoteOptions};
pub use server::{EncoderServer, QueryHandler};

use crate::contrastive::{EncoderCheckpoint, EncoderModel};
use crate::data::ImageTensor;
use crate::error::{Error, Result};

pub trait BlackBoxEncoder: Send + Sync {
    /// Output feature dimension.
    fn dim(&self) -> usize;

    /// `(height, width)` the encoder expects.
    fn resolution(&self) -> (usize, usize);

    /// Stable identity used to key feature caches.
    fn digest(&self) -> String;

    /// Raw query. Prefer [`embed_batch`], which validates the result.
    fn query(&self, images: &[ImageTensor]) -> Result<Vec<Vec<f32>>>;
}

impl<T: BlackBoxEncoder + ?Sized> BlackBoxEncoder for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn resolution(&self) -> (usize, usize) {
        (**self).resolution()
    }
    fn digest(&self) -> String {
        (**self).digest()
    }
    fn query(&self, images: &[ImageTensor]) -> Result<Vec<Vec<f32>>> {
        (**self).query(images)
    }
}

impl<T: BlackBoxEncoder + ?Sized> BlackBoxEncoder for std::sync::Arc<T> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn resolution(&self) -> (usize, usize) {
        (**self).resolution()
    }
    fn digest(&self) -> String {
        (**self).digest()
    }
    fn query(&self, images: &[ImageTensor]) -> Result<Vec<Vec<f32>>> {
        (**self).query(images)
    }
}

/// Queries `enc`, checking image sizes on the way in and the count and
/// dimension of the vectors on the way out.
pub fn embed_batch(enc: &dyn BlackBoxEncoder, images: &[ImageTensor]) -> Result<Vec<Vec<f32>>> {
    if images.is_empty() {
        return Ok(Vec::new());
    }
    let (h, w) = enc.resolution();
    if let Some(bad) = images.iter().find(|img| (img.height(), img.width()) != (h, w)) {
        return Err(Error::DimensionMismatch { expected: h * w, got: bad.height() * bad.width() });
    }
    let out = enc.query(images)?;
    if out.len() != images.len() {
        return Err(Error::Protocol(format!("encoder returned {} vectors for {} images", out.len(), images.len())));
    }
    let d = enc.dim();
    if let Some(bad) = out.iter().find(|v| v.len() != d) {
        return Err(Error::DimensionMismatch { expected: d, got: bad.len() });
    }
    Ok(out)
}

/// A checkpointed model evaluated in-process.
#[derive(Clone, Debug)]
pub struct LocalEncoder {
    model: EncoderModel,
    digest: String,
}

impl LocalEncoder {
    pub fn new(model: EncoderModel) -> Self {
        let mut hasher = Sha256::new();
        hasher.update(serde_json::to_vec(model.spec()).expect("spec serializes"));
        for p in model.flat_params() {
            hasher.update(p.to_le_bytes());
        }
        let digest = hex::encode(&hasher.finalize()[..8]);
        Self { model, digest }
    }

    pub fn model(&self) -> &EncoderModel {
        &self.model
    }
}

impl From<EncoderCheckpoint> for LocalEncoder {
    fn from(ckpt: EncoderCheckpoint) -> Self {
        Self::new(ckpt.model)
    }
}

impl BlackBoxEncoder for LocalEncoder {
    fn dim(&self) -> usize {
        self.model.dim()
    }

    fn resolution(&self) -> (usize, usize) {
        self.model.spec().resolution
    }

    fn digest(&self) -> String {
        self.digest.clone()
    }

    fn query(&self, images: &[ImageTensor]) -> Result<Vec<Vec<f32>>> {
        self.model.embed(images)
    }
}

pub fn load_local(path: &Path) -> Result<LocalEncoder> {
    Ok(EncoderCheckpoint::load(path)?.into())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contrastive::{Architecture, EncoderSpec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny() -> LocalEncoder {
        let spec = EncoderSpec { arch: Architecture::SmallResnet, width: 4, dim: 6, resolution: (8, 8) };
        LocalEncoder::new(EncoderModel::new(spec, &mut ChaCha8Rng::seed_from_u64(1)).unwrap())
    }

    #[test]
    fn local_shapes_and_determinism() {
        let enc = tiny();
        assert!(embed_batch(&enc, &[]).unwrap().is_empty());
        let img = ImageTensor::new(8, 8, 3, (0..192).map(|i| (i % 7) as f32 / 7.0).collect()).unwrap();
        let views = vec![img.clone(); 10];
        let out = embed_batch(&enc, &views).unwrap();
        assert_eq!(out.len(), 10);
        assert!(out.iter().all(|v| v.len() == 6 && v.iter().all(|x| x.is_finite())));
        assert_eq!(embed_batch(&enc, &[img.clone()]).unwrap(), embed_batch(&enc, &[img]).unwrap());
        assert!(matches!(
            embed_batch(&enc, &[ImageTensor::filled(4, 4, [0.0; 3])]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn load_local_reads_checkpoints() {
        let enc = tiny();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.ckpt");
        let ckpt = EncoderCheckpoint { epoch: 3, config_digest: "x".into(), model: enc.model().clone() };
        ckpt.save(&path).unwrap();
        let back = load_local(&path).unwrap();
        assert_eq!(back.dim(), 6);
        assert_eq!(back.digest(), enc.digest());
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() / 2]).unwrap();
        assert!(matches!(load_local(&path), Err(Error::CorruptCheckpoint(_))));
    }
}
