//! Encoder checkpoint container.
//!
//! Layout: the 8-byte magic `EMICKPT1`, a little-endian `u64` header length,
//! a JSON header, then the parameters as little-endian `f32`. The header
//! records the architecture, epoch, config digest, parameter count and the
//! SHA-256 of the parameter payload.

use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::model::{Architecture, EncoderModel, EncoderSpec};
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"EMICKPT1";

#[derive(Clone, Debug)]
pub struct EncoderCheckpoint {
    pub epoch: usize,
    pub config_digest: String,
    pub model: EncoderModel,
}

#[derive(Serialize, Deserialize)]
struct Header {
    arch: String,
    width: usize,
    dim: usize,
    resolution: (usize, usize),
    epoch: usize,
    config_digest: String,
    param_count: usize,
    payload_sha256: String,
}

impl EncoderCheckpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let params = self.model.flat_params();
        let payload: Vec<u8> = params.iter().flat_map(|v| v.to_le_bytes()).collect();
        let spec = self.model.spec();
        let header = Header {
            arch: spec.arch.to_string(),
            width: spec.width,
            dim: spec.dim,
            resolution: spec.resolution,
            epoch: self.epoch,
            config_digest: self.config_digest.clone(),
            param_count: params.len(),
            payload_sha256: hex::encode(Sha256::digest(&payload)),
        };
        let header = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(16 + header.len() + payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&payload);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let corrupt = |m: &str| Error::CorruptCheckpoint(m.to_string());
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(corrupt("missing magic"));
        }
        let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let header_end = 16usize.checked_add(header_len).filter(|&e| e <= bytes.len()).ok_or_else(|| corrupt("truncated header"))?;
        let header: Header =
            serde_json::from_slice(&bytes[16..header_end]).map_err(|e| corrupt(&format!("header: {e}")))?;
        let arch: Architecture = header.arch.parse()?;
        let payload = &bytes[header_end..];
        if payload.len() != header.param_count * 4 {
            return Err(corrupt(&format!("payload is {} bytes, expected {}", payload.len(), header.param_count * 4)));
        }
        if hex::encode(Sha256::digest(payload)) != header.payload_sha256 {
            return Err(corrupt("payload checksum mismatch"));
        }
        let spec = EncoderSpec { arch, width: header.width, dim: header.dim, resolution: header.resolution };
        let mut model = EncoderModel::new(spec, &mut rand_chacha::ChaCha8Rng::seed_from_u64(0))
            .map_err(|e| corrupt(&e.to_string()))?;
        let params: Vec<f32> = payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
        model.load_flat_params(&params)?;
        Ok(Self { epoch: header.epoch, config_digest: header.config_digest, model })
    }

    /// Writes atomically via a temporary file in the same directory.
    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

/// Writes `bytes` to `path` through a sibling temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir)?;
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("artifact");
    let tmp = dir.join(format!(".{name}.tmp"));
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> EncoderCheckpoint {
        let spec = EncoderSpec { arch: Architecture::SmallVgg, width: 2, dim: 5, resolution: (8, 8) };
        let model = EncoderModel::new(spec, &mut rand_chacha::ChaCha8Rng::seed_from_u64(3)).unwrap();
        EncoderCheckpoint { epoch: 7, config_digest: "abc".into(), model }
    }

    #[test]
    fn roundtrip() {
        let ck = sample();
        let back = EncoderCheckpoint::from_bytes(&ck.to_bytes().unwrap()).unwrap();
        assert_eq!(back.epoch, 7);
        assert_eq!(back.config_digest, "abc");
        assert_eq!(back.model.spec(), ck.model.spec());
        assert_eq!(back.model.flat_params(), ck.model.flat_params());
    }

    #[test]
    fn truncation_and_tampering_detected() {
        let bytes = sample().to_bytes().unwrap();
        for cut in [0, 10, 20, bytes.len() - 1] {
            assert!(matches!(EncoderCheckpoint::from_bytes(&bytes[..cut]), Err(Error::CorruptCheckpoint(_))), "cut {cut}");
        }
        let mut flipped = bytes.clone();
        *flipped.last_mut().unwrap() ^= 1;
        assert!(matches!(EncoderCheckpoint::from_bytes(&flipped), Err(Error::CorruptCheckpoint(_))));
    }

    #[test]
    fn unknown_architecture_reported() {
        let bytes = sample().to_bytes().unwrap();
        let text = String::from_utf8_lossy(&bytes[16..]).to_string();
        let start = text.find("small-vgg").unwrap();
        let mut patched = bytes.clone();
        patched[16 + start..16 + start + 9].copy_from_slice(b"small-xyz");
        assert!(matches!(EncoderCheckpoint::from_bytes(&patched), Err(Error::UnknownArchitecture(_))));
    }
}
