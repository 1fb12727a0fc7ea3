//! Comparison methods that do not use pairwise view similarity.
//!
//! | id | membership feature per input                                   |
//! |----|-----------------------------------------------------------------|
//! | A  | downstream confidence vector, sorted descending (`k`)           |
//! | B  | correctness bits on the input and `e` augmented views (`e + 1`) |
//! | C  | confidences of `k` targeted PGD examples, concatenated (`k^2`)  |
//! | D  | the raw encoder feature vector (`d`)                            |
//! | E  | mean cosine between the centre patch and every other patch (1)  |
//!
//! A to D train a vector classifier on shadow features; E fits a threshold.

mod downstream;
mod pgd;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use downstream::{train_downstream, DownstreamClassifier, DownstreamConfig};
pub use pgd::{pgd_targeted, AdvExampleConfig};

use crate::classifiers::{best_threshold, extended_f64, MlpClassifier, VectorConfig};
use crate::contrastive::EncoderModel;
use crate::data::{AugmentationPipeline, ImageTensor};
use crate::encoder::{embed_batch, BlackBoxEncoder};
use crate::error::{Error, Result};
use crate::membership::{similarity, view_rng, SimilarityMetric};
use crate::rng::child_rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BaselineId {
    #[serde(rename = "baseline-a")]
    A,
    #[serde(rename = "baseline-b")]
    B,
    #[serde(rename = "baseline-c")]
    C,
    #[serde(rename = "baseline-d")]
    D,
    #[serde(rename = "baseline-e")]
    E,
}

impl BaselineId {
    pub const ALL: [Self; 5] = [Self::A, Self::B, Self::C, Self::D, Self::E];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::A => "baseline-a",
            Self::B => "baseline-b",
            Self::C => "baseline-c",
            Self::D => "baseline-d",
            Self::E => "baseline-e",
        }
    }

    pub fn needs_downstream(self) -> bool {
        matches!(self, Self::A | Self::B | Self::C)
    }
}

impl fmt::Display for BaselineId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for BaselineId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.strip_prefix("baseline-").unwrap_or(s).to_ascii_lowercase();
        match key.as_str() {
            "a" => Ok(Self::A),
            "b" => Ok(Self::B),
            "c" => Ok(Self::C),
            "d" => Ok(Self::D),
            "e" => Ok(Self::E),
            _ => Err(Error::InvalidParameter(format!("unknown baseline `{s}`"))),
        }
    }
}

/// A `rows x cols` patch layout; remainder rows and columns are dropped.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct PatchGrid {
    pub rows: usize,
    pub cols: usize,
}

impl PatchGrid {
    pub const fn new(rows: usize, cols: usize) -> Self {
        Self { rows, cols }
    }

    /// Index of the centre cell in row-major order.
    pub fn center(&self) -> usize {
        self.rows * self.cols / 2
    }

    pub fn patches(&self, img: &ImageTensor) -> Result<Vec<ImageTensor>> {
        let (ph, pw) = (img.height() / self.rows, img.width() / self.cols);
        if ph == 0 || pw == 0 {
            return Err(Error::InvalidImage(format!(
                "{}x{} image too small for a {self} grid",
                img.height(),
                img.width()
            )));
        }
        let mut out = Vec::with_capacity(self.rows * self.cols);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.push(img.crop(r * ph, c * pw, ph, pw));
            }
        }
        Ok(out)
    }
}

impl fmt::Display for PatchGrid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.rows, self.cols)
    }
}

impl FromStr for PatchGrid {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidParameter(format!("patch grid must look like `3x3`, got `{s}`"));
        let (r, c) = s.split_once(['x', 'X', '×']).ok_or_else(bad)?;
        let rows: usize = r.trim().parse().map_err(|_| bad())?;
        let cols: usize = c.trim().parse().map_err(|_| bad())?;
        if rows == 0 || cols == 0 || rows * cols < 2 {
            return Err(bad());
        }
        Ok(Self { rows, cols })
    }
}

impl TryFrom<String> for PatchGrid {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<PatchGrid> for String {
    fn from(g: PatchGrid) -> Self {
        g.to_string()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaselineSettings {
    /// Augmented views per input for Baseline B.
    pub e: usize,
    /// Augmentation used by Baseline B.
    pub pipeline: AugmentationPipeline,
    pub adv: AdvExampleConfig,
    pub grid: PatchGrid,
    pub classifier: VectorConfig,
}

impl Default for BaselineSettings {
    fn default() -> Self {
        Self {
            e: 10,
            pipeline: AugmentationPipeline::contrastive_default(),
            adv: AdvExampleConfig::default(),
            grid: PatchGrid::new(3, 3),
            classifier: VectorConfig::default(),
        }
    }
}

/// Everything the baselines may use about one encoder (shadow or target).
#[derive(Clone, Copy)]
pub struct BaselineSide<'a> {
    pub encoder: &'a dyn BlackBoxEncoder,
    /// Parameters of the encoder, for gradient-based Baseline C.
    pub model: Option<&'a EncoderModel>,
    pub downstream: Option<&'a DownstreamClassifier>,
}

impl<'a> BaselineSide<'a> {
    fn downstream(&self, id: BaselineId) -> Result<&'a DownstreamClassifier> {
        self.downstream.ok_or_else(|| Error::MissingAsset(format!("{id} needs a downstream classifier")))
    }
}

/// Records to turn into baseline features.
#[derive(Clone, Copy)]
pub struct BaselineInputs<'a> {
    pub source: &'a str,
    pub ids: &'a [usize],
    /// Images at the encoder resolution.
    pub images: &'a [ImageTensor],
    pub labels: Option<&'a [usize]>,
}

fn sorted_desc(mut v: Vec<f32>) -> Vec<f32> {
    v.sort_by(|a, b| b.total_cmp(a));
    v
}

/// Per-input feature vectors of baseline `id`.
pub fn baseline_features(
    id: BaselineId,
    side: &BaselineSide<'_>,
    inputs: &BaselineInputs<'_>,
    settings: &BaselineSettings,
    seed: u64,
) -> Result<Vec<Vec<f32>>> {
    if inputs.images.len() != inputs.ids.len() {
        return Err(Error::DimensionMismatch { expected: inputs.ids.len(), got: inputs.images.len() });
    }
    if inputs.images.is_empty() {
        return Ok(Vec::new());
    }
    match id {
        BaselineId::A => {
            let conf = side.downstream(id)?.confidences(side.encoder, inputs.images)?;
            Ok(conf.into_iter().map(sorted_desc).collect())
        }
        BaselineId::B => correctness_bits(side, inputs, settings, seed),
        BaselineId::C => adversarial_confidences(side, inputs, settings, seed),
        BaselineId::D => embed_batch(side.encoder, inputs.images),
        BaselineId::E => inputs
            .images
            .iter()
            .map(|img| Ok(vec![patch_similarity(side.encoder, img, settings.grid)? as f32]))
            .collect(),
    }
}

fn correctness_bits(
    side: &BaselineSide<'_>,
    inputs: &BaselineInputs<'_>,
    settings: &BaselineSettings,
    seed: u64,
) -> Result<Vec<Vec<f32>>> {
    let head = side.downstream(BaselineId::B)?;
    let labels = inputs.labels.ok_or(Error::MissingLabel(inputs.ids[0]))?;
    let per = settings.e + 1;
    let mut views = Vec::with_capacity(inputs.images.len() * per);
    for (img, &id) in inputs.images.iter().zip(inputs.ids) {
        views.push(img.clone());
        let mut rng = view_rng(seed, &format!("baseline-b/{}", inputs.source), id);
        views.extend(settings.pipeline.views(img, settings.e, &mut rng));
    }
    let pred = head.predict(side.encoder, &views)?;
    Ok(pred
        .chunks(per)
        .zip(labels)
        .map(|(p, &y)| p.iter().map(|&c| if c == y { 1.0 } else { 0.0 }).collect())
        .collect())
}

fn adversarial_confidences(
    side: &BaselineSide<'_>,
    inputs: &BaselineInputs<'_>,
    settings: &BaselineSettings,
    seed: u64,
) -> Result<Vec<Vec<f32>>> {
    let head = side.downstream(BaselineId::C)?;
    let model = side
        .model
        .ok_or_else(|| Error::MissingAsset("baseline-c needs gradient access to the encoder".into()))?;
    let k = head.classes();
    let mut rng = child_rng(seed, &format!("baseline-c/{}", inputs.source));
    let mut out = vec![Vec::with_capacity(k * k); inputs.images.len()];
    for target in 0..k {
        let targets = vec![target; inputs.images.len()];
        let adv = pgd_targeted(model, &head.head, inputs.images, &targets, &settings.adv, &mut rng)?;
        let conf = head.head.probabilities(&model.embed(&adv)?)?;
        for (row, c) in out.iter_mut().zip(conf) {
            row.extend(c);
        }
    }
    Ok(out)
}

/// Mean cosine similarity between the centre patch and every other patch,
/// each resized to the encoder resolution.
pub fn patch_similarity(enc: &dyn BlackBoxEncoder, img: &ImageTensor, grid: PatchGrid) -> Result<f64> {
    let (h, w) = enc.resolution();
    let patches: Vec<ImageTensor> = grid.patches(img)?.iter().map(|p| p.resize_bilinear(h, w)).collect();
    let feats = embed_batch(enc, &patches)?;
    let centre = grid.center();
    let mut total = 0.0;
    for (_, f) in feats.iter().enumerate().filter(|(i, _)| *i != centre) {
        total += similarity(SimilarityMetric::Cosine, &feats[centre], f)?;
    }
    Ok(total / (feats.len() - 1) as f64)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum BaselineModel {
    Vector(MlpClassifier),
    Threshold {
        #[serde(with = "extended_f64")]
        theta: f64,
        fit_accuracy: f64,
    },
}

/// A baseline fitted on shadow features, ready to score target features.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BaselineAttack {
    pub id: BaselineId,
    pub model: BaselineModel,
}

impl BaselineAttack {
    pub fn fit(
        id: BaselineId,
        member_features: &[Vec<f32>],
        nonmember_features: &[Vec<f32>],
        settings: &BaselineSettings,
        seed: u64,
    ) -> Result<Self> {
        let mut x: Vec<Vec<f32>> = member_features.to_vec();
        x.extend_from_slice(nonmember_features);
        let labels: Vec<usize> =
            std::iter::repeat_n(1, member_features.len()).chain(std::iter::repeat_n(0, nonmember_features.len())).collect();
        let model = match id {
            BaselineId::E => {
                let scores: Vec<f64> = x.iter().map(|r| r[0] as f64).collect();
                let members: Vec<bool> = labels.iter().map(|&y| y == 1).collect();
                let (theta, fit_accuracy) = best_threshold(&scores, &members)?;
                BaselineModel::Threshold { theta, fit_accuracy }
            }
            _ => BaselineModel::Vector(MlpClassifier::train(
                &x,
                &labels,
                2,
                &settings.classifier.hidden,
                &settings.classifier.train,
                seed,
            )?),
        };
        Ok(Self { id, model })
    }

    /// Larger means more likely a member.
    pub fn member_scores(&self, features: &[Vec<f32>]) -> Result<Vec<f64>> {
        match &self.model {
            BaselineModel::Vector(m) => Ok(m.probabilities(features)?.iter().map(|p| p[1] as f64).collect()),
            BaselineModel::Threshold { .. } => Ok(features.iter().map(|r| r[0] as f64).collect()),
        }
    }

    pub fn predict(&self, features: &[Vec<f32>]) -> Result<Vec<bool>> {
        let scores = self.member_scores(features)?;
        Ok(match &self.model {
            BaselineModel::Vector(_) => scores.iter().map(|&p| p > 0.5).collect(),
            BaselineModel::Threshold { theta, .. } => scores.iter().map(|&s| s >= *theta).collect(),
        })
    }
}

/// Featurises the shadow members and non-members and fits baseline `id`.
pub fn train_baseline(
    id: BaselineId,
    shadow: &BaselineSide<'_>,
    members: &BaselineInputs<'_>,
    nonmembers: &BaselineInputs<'_>,
    settings: &BaselineSettings,
    seed: u64,
) -> Result<BaselineAttack> {
    let m = baseline_features(id, shadow, members, settings, seed)?;
    let nm = baseline_features(id, shadow, nonmembers, settings, seed)?;
    BaselineAttack::fit(id, &m, &nm, settings, seed)
}
