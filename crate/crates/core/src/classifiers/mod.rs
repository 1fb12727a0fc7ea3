//! Inference classifiers over membership features.
//!
//! * vector-based: an MLP over the descending-sorted score vector;
//! * set-based: a DeepSets network over the raw score multiset;
//! * threshold-based: "average score >= theta is member", with theta chosen
//!   to maximise accuracy on the fitting data.

mod dense;
mod set;
mod threshold;

use std::path::Path;

use log::warn;
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use dense::{argmax, MlpClassifier, Standardizer, TrainConfig};
pub use set::{DeepSets, SetArch};
pub use threshold::{best_threshold, candidate_thresholds, threshold_accuracy};

use crate::contrastive::write_atomic;
use crate::data::{AugmentationPipeline, ImageTensor};
use crate::encoder::BlackBoxEncoder;
use crate::error::{Error, Result};
use crate::membership::{extract_membership_features, LabeledMembershipRecord, MembershipFeatureSet, SimilarityMetric};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClassifierKind {
    Vector,
    Set,
    Threshold,
}

impl ClassifierKind {
    pub const ALL: [Self; 3] = [Self::Vector, Self::Set, Self::Threshold];

    /// Method id used in reports.
    pub fn method_id(self) -> &'static str {
        match self {
            Self::Vector => "encodermi-v",
            Self::Set => "encodermi-s",
            Self::Threshold => "encodermi-t",
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Vector => "vector",
            Self::Set => "set",
            Self::Threshold => "threshold",
        }
    }
}

impl std::str::FromStr for ClassifierKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vector" | "encodermi-v" | "v" => Ok(Self::Vector),
            "set" | "encodermi-s" | "s" => Ok(Self::Set),
            "threshold" | "encodermi-t" | "t" => Ok(Self::Threshold),
            other => Err(Error::InvalidParameter(format!("unknown classifier kind `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VectorConfig {
    pub hidden: Vec<usize>,
    pub train: TrainConfig,
}

impl Default for VectorConfig {
    fn default() -> Self {
        Self { hidden: vec![256, 256], train: TrainConfig::default() }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SetConfig {
    pub arch: SetArch,
    pub train: TrainConfig,
}

fn f32_row(scores: &[f64]) -> Vec<f32> {
    scores.iter().map(|&s| s as f32).collect()
}

/// Shared `(n, metric)` of the records, with the class balance checked.
fn record_config(records: &[LabeledMembershipRecord]) -> Result<(usize, SimilarityMetric)> {
    let first = records.first().ok_or(Error::InsufficientData { requested: 1, available: 0 })?;
    let (n, metric) = (first.features.n(), first.features.metric());
    if let Some(bad) = records.iter().find(|r| r.features.n() != n || r.features.metric() != metric) {
        return Err(Error::ConfigMismatch(format!(
            "records mix (n={n}, {metric}) with (n={}, {})",
            bad.features.n(),
            bad.features.metric()
        )));
    }
    let members = records.iter().filter(|r| r.member).count();
    if members == 0 {
        return Err(Error::SingleClass(0));
    }
    if members == records.len() {
        return Err(Error::SingleClass(1));
    }
    if members * 10 < records.len() * 4 || members * 10 > records.len() * 6 {
        warn!("unbalanced inference training data: {members} members of {}", records.len());
    }
    Ok((n, metric))
}

fn labels(records: &[LabeledMembershipRecord]) -> Vec<usize> {
    records.iter().map(LabeledMembershipRecord::label).collect()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct VectorClassifier {
    pub n: usize,
    pub metric: SimilarityMetric,
    pub model: MlpClassifier,
}

impl VectorClassifier {
    /// Logits for each feature set after ranking its scores.
    pub fn logits(&self, features: &[MembershipFeatureSet]) -> Result<Vec<Vec<f32>>> {
        let rows: Vec<Vec<f32>> = features.iter().map(|f| f32_row(&f.ranked())).collect();
        self.model.logits(&rows)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SetClassifier {
    pub n: usize,
    pub metric: SimilarityMetric,
    pub model: DeepSets,
}

impl SetClassifier {
    pub fn logits(&self, features: &[MembershipFeatureSet]) -> Vec<Vec<f32>> {
        let sets: Vec<Vec<f32>> = features.iter().map(|f| f32_row(f.scores())).collect();
        self.model.logits(&sets)
    }
}

pub(crate) mod extended_f64 {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Finite(f64),
        Named(String),
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        match *v {
            f64::INFINITY => Repr::Named("inf".into()),
            f64::NEG_INFINITY => Repr::Named("-inf".into()),
            x => Repr::Finite(x),
        }
        .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Finite(x) => Ok(x),
            Repr::Named(s) if s == "inf" => Ok(f64::INFINITY),
            Repr::Named(s) if s == "-inf" => Ok(f64::NEG_INFINITY),
            Repr::Named(s) => Err(serde::de::Error::custom(format!("bad threshold `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThresholdClassifier {
    pub n: usize,
    pub metric: SimilarityMetric,
    #[serde(with = "extended_f64")]
    pub theta: f64,
    /// Accuracy of `theta` on the records it was fitted to.
    pub fit_accuracy: f64,
}

impl ThresholdClassifier {
    pub fn predict_average(&self, average: f64) -> bool {
        average >= self.theta
    }
}

pub fn train_vector_classifier(records: &[LabeledMembershipRecord], cfg: &VectorConfig, seed: u64) -> Result<VectorClassifier> {
    let (n, metric) = record_config(records)?;
    let rows: Vec<Vec<f32>> = records.iter().map(|r| f32_row(&r.features.ranked())).collect();
    let model = MlpClassifier::train(&rows, &labels(records), 2, &cfg.hidden, &cfg.train, seed)?;
    Ok(VectorClassifier { n, metric, model })
}

pub fn train_set_classifier(records: &[LabeledMembershipRecord], cfg: &SetConfig, seed: u64) -> Result<SetClassifier> {
    let (n, metric) = record_config(records)?;
    let sets: Vec<Vec<f32>> = records.iter().map(|r| f32_row(r.features.scores())).collect();
    let model = DeepSets::train(&sets, &labels(records), 2, &cfg.arch, &cfg.train, seed)?;
    Ok(SetClassifier { n, metric, model })
}

pub fn fit_threshold(records: &[LabeledMembershipRecord]) -> Result<ThresholdClassifier> {
    let (n, metric) = record_config(records)?;
    let averages: Vec<f64> = records.iter().map(|r| r.features.average()).collect();
    let members: Vec<bool> = records.iter().map(|r| r.member).collect();
    let (theta, fit_accuracy) = best_threshold(&averages, &members)?;
    Ok(ThresholdClassifier { n, metric, theta, fit_accuracy })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum InferenceClassifier {
    Vector(VectorClassifier),
    Set(SetClassifier),
    Threshold(ThresholdClassifier),
}

#[derive(Serialize, Deserialize)]
struct ClassifierFile {
    format: String,
    classifier: InferenceClassifier,
}

const CLASSIFIER_FORMAT: &str = "encodermi-classifier/1";

impl InferenceClassifier {
    pub fn kind(&self) -> ClassifierKind {
        match self {
            Self::Vector(_) => ClassifierKind::Vector,
            Self::Set(_) => ClassifierKind::Set,
            Self::Threshold(_) => ClassifierKind::Threshold,
        }
    }

    pub fn n(&self) -> usize {
        match self {
            Self::Vector(c) => c.n,
            Self::Set(c) => c.n,
            Self::Threshold(c) => c.n,
        }
    }

    pub fn metric(&self) -> SimilarityMetric {
        match self {
            Self::Vector(c) => c.metric,
            Self::Set(c) => c.metric,
            Self::Threshold(c) => c.metric,
        }
    }

    pub fn check_config(&self, n: usize, metric: SimilarityMetric) -> Result<()> {
        if n != self.n() || metric != self.metric() {
            return Err(Error::ConfigMismatch(format!(
                "classifier expects n={} with {}, got n={n} with {metric}",
                self.n(),
                self.metric()
            )));
        }
        Ok(())
    }

    /// Larger means more likely a member: the member probability for the
    /// learned classifiers, the average score for the threshold one.
    pub fn member_scores(&self, features: &[MembershipFeatureSet]) -> Result<Vec<f64>> {
        for f in features {
            self.check_config(f.n(), f.metric())?;
        }
        let member_prob = |logits: Vec<Vec<f32>>| -> Vec<f64> {
            logits.iter().map(|l| 1.0 / (1.0 + ((l[0] - l[1]) as f64).exp())).collect()
        };
        Ok(match self {
            Self::Vector(c) => member_prob(c.logits(features)?),
            Self::Set(c) => member_prob(c.logits(features)),
            Self::Threshold(_) => features.iter().map(MembershipFeatureSet::average).collect(),
        })
    }

    pub fn predict(&self, features: &[MembershipFeatureSet]) -> Result<Vec<bool>> {
        let scores = self.member_scores(features)?;
        Ok(match self {
            Self::Threshold(c) => scores.iter().map(|&a| c.predict_average(a)).collect(),
            _ => scores.iter().map(|&p| p > 0.5).collect(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = ClassifierFile { format: CLASSIFIER_FORMAT.into(), classifier: self.clone() };
        write_atomic(path, &serde_json::to_vec(&file)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file: ClassifierFile = serde_json::from_slice(&std::fs::read(path)?)?;
        if file.format != CLASSIFIER_FORMAT {
            return Err(Error::ConfigMismatch(format!("unsupported classifier format `{}`", file.format)));
        }
        Ok(file.classifier)
    }
}

impl From<VectorClassifier> for InferenceClassifier {
    fn from(c: VectorClassifier) -> Self {
        Self::Vector(c)
    }
}

impl From<SetClassifier> for InferenceClassifier {
    fn from(c: SetClassifier) -> Self {
        Self::Set(c)
    }
}

impl From<ThresholdClassifier> for InferenceClassifier {
    fn from(c: ThresholdClassifier) -> Self {
        Self::Threshold(c)
    }
}

/// Decides membership of `x` by querying the target encoder with `n`
/// augmented views. Returns `true` for member.
pub fn infer_membership<R: Rng + ?Sized>(
    x: &ImageTensor,
    target: &dyn BlackBoxEncoder,
    clf: &InferenceClassifier,
    pipeline: &AugmentationPipeline,
    n: usize,
    metric: SimilarityMetric,
    rng: &mut R,
) -> Result<bool> {
    clf.check_config(n, metric)?;
    let features = extract_membership_features(x, target, pipeline, n, metric, rng)?;
    Ok(clf.predict(std::slice::from_ref(&features))?[0])
}
