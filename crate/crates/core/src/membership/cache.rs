//! On-disk cache of extracted feature sets.
//!
//! One entry per (record ids, encoder, extraction config, seed): a flat
//! little-endian `f64` file of scores plus a JSON sidecar describing it.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::features::{extract_split, pair_count, ExtractionConfig, MembershipFeatureSet};
use super::similarity::SimilarityMetric;
use crate::contrastive::write_atomic;
use crate::data::{Dataset, DatasetSplit};
use crate::encoder::BlackBoxEncoder;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CacheEntryMeta {
    pub source: String,
    pub ids: Vec<usize>,
    pub encoder_digest: String,
    pub pipeline_digest: String,
    pub n: usize,
    pub metric: SimilarityMetric,
    pub seed: u64,
}

impl CacheEntryMeta {
    pub fn key(&self) -> String {
        crate::json_digest(self)
    }
}

#[derive(Clone, Debug)]
pub struct FeatureCache {
    dir: PathBuf,
}

impl FeatureCache {
    pub fn new(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(Self { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn paths(&self, key: &str) -> (PathBuf, PathBuf) {
        (self.dir.join(format!("{key}.bin")), self.dir.join(format!("{key}.json")))
    }

    pub fn get(&self, meta: &CacheEntryMeta) -> Result<Option<Vec<MembershipFeatureSet>>> {
        let (bin, json) = self.paths(&meta.key());
        if !bin.exists() || !json.exists() {
            return Ok(None);
        }
        let stored: CacheEntryMeta = serde_json::from_slice(&fs::read(&json)?)?;
        if &stored != meta {
            return Ok(None);
        }
        let bytes = fs::read(&bin)?;
        let per = pair_count(meta.n);
        if bytes.len() != meta.ids.len() * per * 8 {
            return Err(Error::Dataset(format!("feature cache entry {} is truncated", bin.display())));
        }
        let scores: Vec<f64> =
            bytes.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes"))).collect();
        let sets = if per == 0 {
            Vec::new()
        } else {
            scores
                .chunks(per)
                .map(|s| MembershipFeatureSet::new(s.to_vec(), meta.n, meta.metric))
                .collect::<Result<_>>()?
        };
        Ok(Some(sets))
    }

    /// Writes the score file before the sidecar so a reader never sees a
    /// sidecar without its data.
    pub fn put(&self, meta: &CacheEntryMeta, sets: &[MembershipFeatureSet]) -> Result<PathBuf> {
        if sets.len() != meta.ids.len() {
            return Err(Error::DimensionMismatch { expected: meta.ids.len(), got: sets.len() });
        }
        let (bin, json) = self.paths(&meta.key());
        let bytes: Vec<u8> = sets.iter().flat_map(|s| s.scores().iter().flat_map(|v| v.to_le_bytes())).collect();
        write_atomic(&bin, &bytes)?;
        write_atomic(&json, &serde_json::to_vec_pretty(meta)?)?;
        Ok(bin)
    }

    /// Returns cached features for `split`, extracting and storing them if
    /// absent.
    pub fn extract_split(
        &self,
        dataset: &dyn Dataset,
        split: &DatasetSplit,
        enc: &dyn BlackBoxEncoder,
        cfg: &ExtractionConfig,
        seed: u64,
    ) -> Result<Vec<MembershipFeatureSet>> {
        let meta = CacheEntryMeta {
            source: split.source.clone(),
            ids: split.indices.clone(),
            encoder_digest: enc.digest(),
            pipeline_digest: cfg.pipeline.digest(),
            n: cfg.n,
            metric: cfg.metric,
            seed,
        };
        if let Some(hit) = self.get(&meta)? {
            return Ok(hit);
        }
        let sets = extract_split(dataset, split, enc, cfg, seed)?;
        self.put(&meta, &sets)?;
        Ok(sets)
    }
}
