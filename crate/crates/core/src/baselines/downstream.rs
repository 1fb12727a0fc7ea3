use serde::{Deserialize, Serialize};

use crate::classifiers::{MlpClassifier, TrainConfig};
use crate::contrastive::load_split_images;
use crate::data::{Dataset, DatasetSplit, ImageTensor};
use crate::encoder::{embed_batch, BlackBoxEncoder};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DownstreamConfig {
    pub hidden: Vec<usize>,
    pub train: TrainConfig,
}

impl Default for DownstreamConfig {
    fn default() -> Self {
        Self { hidden: vec![512], train: TrainConfig { lr: 1e-3, epochs: 100, batch_size: 64, weight_decay: 0.0 } }
    }
}

/// A supervised head over the features of a frozen encoder.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DownstreamClassifier {
    /// Digest of the encoder the head was trained on.
    pub encoder_digest: String,
    pub head: MlpClassifier,
    pub test_accuracy: Option<f64>,
}

impl DownstreamClassifier {
    pub fn classes(&self) -> usize {
        self.head.classes()
    }

    /// Class probabilities for `images` through `enc` and the head.
    pub fn confidences(&self, enc: &dyn BlackBoxEncoder, images: &[ImageTensor]) -> Result<Vec<Vec<f32>>> {
        self.check_encoder(enc)?;
        self.head.probabilities(&embed_batch(enc, images)?)
    }

    pub fn predict(&self, enc: &dyn BlackBoxEncoder, images: &[ImageTensor]) -> Result<Vec<usize>> {
        self.check_encoder(enc)?;
        self.head.predict(&embed_batch(enc, images)?)
    }

    fn check_encoder(&self, enc: &dyn BlackBoxEncoder) -> Result<()> {
        if enc.digest() != self.encoder_digest {
            return Err(Error::ConfigMismatch(format!(
                "head trained on encoder {} but queried through {}",
                self.encoder_digest,
                enc.digest()
            )));
        }
        Ok(())
    }
}

/// Trains a `k`-class head on frozen features of `train_split`, scoring it
/// on `test_split` when that is non-empty.
pub fn train_downstream(
    enc: &dyn BlackBoxEncoder,
    dataset: &dyn Dataset,
    train_split: &DatasetSplit,
    test_split: &DatasetSplit,
    k: usize,
    cfg: &DownstreamConfig,
    seed: u64,
) -> Result<DownstreamClassifier> {
    let labels = dataset.labels(&train_split.indices)?;
    if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
        return Err(Error::LabelOutOfRange { label: bad, classes: k });
    }
    let feats = embed_batch(enc, &load_split_images(dataset, train_split, enc.resolution())?)?;
    let head = MlpClassifier::train(&feats, &labels, k, &cfg.hidden, &cfg.train, seed)?;
    let test_accuracy = if test_split.is_empty() {
        None
    } else {
        let test_labels = dataset.labels(&test_split.indices)?;
        let test_feats = embed_batch(enc, &load_split_images(dataset, test_split, enc.resolution())?)?;
        Some(head.accuracy(&test_feats, &test_labels)?)
    };
    Ok(DownstreamClassifier { encoder_digest: enc.digest(), head, test_accuracy })
}
