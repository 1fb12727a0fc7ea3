use serde::{Deserialize, Serialize};

use super::knowledge::BackgroundKnowledge;
use crate::classifiers::InferenceClassifier;
use crate::data::{Dataset, DatasetSplit};
use crate::encoder::BlackBoxEncoder;
use crate::error::{Error, Result};
use crate::membership::{extract_split, ExtractionConfig, MembershipFeatureSet};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl ConfusionCounts {
    /// `predicted[i]` and `truth[i]` are `true` for member.
    pub fn from_predictions(predicted: &[bool], truth: &[bool]) -> Result<Self> {
        if predicted.len() != truth.len() {
            return Err(Error::DimensionMismatch { expected: truth.len(), got: predicted.len() });
        }
        let mut c = Self::default();
        for (&p, &t) in predicted.iter().zip(truth) {
            match (p, t) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        Ok(c)
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn accuracy(&self) -> f64 {
        (self.tp + self.tn) as f64 / self.total().max(1) as f64
    }

    /// `None` when nothing was predicted a member.
    pub fn precision(&self) -> Option<f64> {
        let predicted = self.tp + self.fp;
        (predicted > 0).then(|| self.tp as f64 / predicted as f64)
    }

    pub fn recall(&self) -> f64 {
        self.tp as f64 / (self.tp + self.fn_).max(1) as f64
    }
}

/// One operating point of a precision/recall sweep.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub cutoff: f64,
    pub precision: Option<f64>,
    pub recall: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub method: String,
    pub knowledge: Option<BackgroundKnowledge>,
    pub trial: usize,
    pub seed: u64,
    pub counts: ConfusionCounts,
    pub accuracy: f64,
    pub precision: Option<f64>,
    pub recall: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pr_curve: Option<Vec<PrPoint>>,
}

impl EvaluationReport {
    pub fn from_counts(method: impl Into<String>, counts: ConfusionCounts, seed: u64) -> Self {
        Self {
            method: method.into(),
            knowledge: None,
            trial: 0,
            seed,
            counts,
            accuracy: counts.accuracy(),
            precision: counts.precision(),
            recall: counts.recall(),
            pr_curve: None,
        }
    }

    pub fn from_predictions(method: impl Into<String>, predicted: &[bool], truth: &[bool], seed: u64) -> Result<Self> {
        Ok(Self::from_counts(method, ConfusionCounts::from_predictions(predicted, truth)?, seed))
    }

    pub fn with_knowledge(mut self, knowledge: BackgroundKnowledge) -> Self {
        self.knowledge = Some(knowledge);
        self
    }

    pub fn with_trial(mut self, trial: usize) -> Self {
        self.trial = trial;
        self
    }

    /// Whether the stored metrics are exactly those implied by the counts.
    pub fn is_consistent(&self) -> bool {
        self.accuracy == self.counts.accuracy()
            && self.precision == self.counts.precision()
            && self.recall == self.counts.recall()
    }
}

fn truth(members: usize, nonmembers: usize) -> Vec<bool> {
    std::iter::repeat_n(true, members).chain(std::iter::repeat_n(false, nonmembers)).collect()
}

/// Scores precomputed target features of known members and non-members.
pub fn evaluate_features(
    clf: &InferenceClassifier,
    members: &[MembershipFeatureSet],
    nonmembers: &[MembershipFeatureSet],
    seed: u64,
) -> Result<EvaluationReport> {
    if members.is_empty() || nonmembers.is_empty() {
        return Err(Error::EmptySplit(if members.is_empty() { "eval-member" } else { "eval-nonmember" }.into()));
    }
    let all: Vec<MembershipFeatureSet> = members.iter().chain(nonmembers).cloned().collect();
    let predicted = clf.predict(&all)?;
    EvaluationReport::from_predictions(clf.kind().method_id(), &predicted, &truth(members.len(), nonmembers.len()), seed)
}

/// Queries the target on both eval splits and scores the classifier.
pub fn evaluate(
    clf: &InferenceClassifier,
    target: &dyn BlackBoxEncoder,
    dataset: &dyn Dataset,
    eval_member: &DatasetSplit,
    eval_nonmember: &DatasetSplit,
    cfg: &ExtractionConfig,
    seed: u64,
) -> Result<EvaluationReport> {
    for split in [eval_member, eval_nonmember] {
        if split.is_empty() {
            return Err(Error::EmptySplit(split.name.clone()));
        }
    }
    clf.check_config(cfg.n, cfg.metric)?;
    let m = extract_split(dataset, eval_member, target, cfg, seed)?;
    let nm = extract_split(dataset, eval_nonmember, target, cfg, seed)?;
    evaluate_features(clf, &m, &nm, seed)
}

/// Precision and recall of "score >= cutoff is member" at `grid` evenly
/// spaced cutoffs from `min(0, lowest score)` to the highest score, plus one
/// cutoff just above the highest score.
pub fn pr_curve(member_scores: &[f64], nonmember_scores: &[f64], grid: usize) -> Result<Vec<PrPoint>> {
    if member_scores.is_empty() || nonmember_scores.is_empty() {
        return Err(Error::EmptySplit("pr-curve scores".into()));
    }
    if grid < 2 {
        return Err(Error::InvalidParameter(format!("pr-curve grid must have at least 2 points, got {grid}")));
    }
    let all = || member_scores.iter().chain(nonmember_scores);
    if let Some(bad) = all().find(|s| !s.is_finite()) {
        return Err(Error::InvalidParameter(format!("non-finite member score {bad}")));
    }
    let lo = all().copied().fold(0.0f64, f64::min);
    let hi = all().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut cutoffs: Vec<f64> = (0..grid).map(|i| lo + (hi - lo) * i as f64 / (grid - 1) as f64).collect();
    cutoffs.push(hi + hi.abs().max(1.0) * 1e-9);
    let point = |cutoff: f64| {
        let tp = member_scores.iter().filter(|&&s| s >= cutoff).count();
        let fp = nonmember_scores.iter().filter(|&&s| s >= cutoff).count();
        let counts = ConfusionCounts { tp, fp, tn: nonmember_scores.len() - fp, fn_: member_scores.len() - tp };
        PrPoint { cutoff, precision: counts.precision(), recall: counts.recall() }
    };
    Ok(cutoffs.into_iter().map(point).collect())
}

/// PR curve of a classifier's member scores on target features.
pub fn classifier_pr_curve(
    clf: &InferenceClassifier,
    members: &[MembershipFeatureSet],
    nonmembers: &[MembershipFeatureSet],
    grid: usize,
) -> Result<Vec<PrPoint>> {
    pr_curve(&clf.member_scores(members)?, &clf.member_scores(nonmembers)?, grid)
}
