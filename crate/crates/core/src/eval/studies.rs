use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::knowledge::BackgroundKnowledge;
use super::metrics::EvaluationReport;
use crate::baselines::{train_downstream, DownstreamConfig};
use crate::classifiers::{ClassifierKind, InferenceClassifier};
use crate::contrastive::EncoderCheckpoint;
use crate::data::{AugmentationKind, AugmentationPipeline, Dataset, DatasetSplit};
use crate::encoder::LocalEncoder;
use crate::error::{Error, Result};
use crate::membership::{extract_split, ExtractionConfig, MembershipFeatureSet};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OverfitPoint {
    pub epoch: usize,
    pub member_avg: f64,
    pub nonmember_avg: f64,
}

impl OverfitPoint {
    pub fn gap(&self) -> f64 {
        self.member_avg - self.nonmember_avg
    }
}

fn mean_of_averages(sets: &[MembershipFeatureSet]) -> f64 {
    sets.iter().map(MembershipFeatureSet::average).sum::<f64>() / sets.len() as f64
}

/// Mean over records of the per-record average similarity, for members and
/// non-members, at every checkpoint.
pub fn overfitting_monitor(
    checkpoints: &[EncoderCheckpoint],
    dataset: &dyn Dataset,
    members: &DatasetSplit,
    nonmembers: &DatasetSplit,
    cfg: &ExtractionConfig,
    seed: u64,
) -> Result<Vec<OverfitPoint>> {
    if checkpoints.len() < 2 {
        return Err(Error::InsufficientData { requested: 2, available: checkpoints.len() });
    }
    for split in [members, nonmembers] {
        if split.is_empty() {
            return Err(Error::EmptySplit(split.name.clone()));
        }
    }
    checkpoints
        .iter()
        .map(|ck| {
            let enc = LocalEncoder::new(ck.model.clone());
            let m = extract_split(dataset, members, &enc, cfg, seed)?;
            let nm = extract_split(dataset, nonmembers, &enc, cfg, seed)?;
            Ok(OverfitPoint { epoch: ck.epoch, member_avg: mean_of_averages(&m), nonmember_avg: mean_of_averages(&nm) })
        })
        .collect()
}

/// Data for scoring how useful an encoder is downstream.
#[derive(Clone, Copy)]
pub struct DownstreamProbe<'a> {
    pub dataset: &'a dyn Dataset,
    pub train: &'a DatasetSplit,
    pub test: &'a DatasetSplit,
    pub classes: usize,
    pub config: &'a DownstreamConfig,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EarlyStopRow {
    pub epoch: usize,
    pub inference_accuracy: f64,
    pub downstream_accuracy: f64,
}

/// Evaluates a fixed inference classifier against the target checkpoint of
/// every epoch in `epochs`, and trains a downstream head on each.
#[allow(clippy::too_many_arguments)]
pub fn early_stopping_study(
    epochs: &[usize],
    checkpoints: &[EncoderCheckpoint],
    clf: &InferenceClassifier,
    dataset: &dyn Dataset,
    eval_member: &DatasetSplit,
    eval_nonmember: &DatasetSplit,
    cfg: &ExtractionConfig,
    downstream: &DownstreamProbe<'_>,
    seed: u64,
) -> Result<Vec<EarlyStopRow>> {
    let by_epoch: BTreeMap<usize, &EncoderCheckpoint> = checkpoints.iter().map(|c| (c.epoch, c)).collect();
    let mut rows = Vec::with_capacity(epochs.len());
    for &epoch in epochs {
        let ck = by_epoch.get(&epoch).ok_or(Error::MissingCheckpoint(epoch))?;
        let enc = LocalEncoder::new(ck.model.clone());
        let report = super::metrics::evaluate(clf, &enc, dataset, eval_member, eval_nonmember, cfg, seed)?;
        let head = train_downstream(
            &enc,
            downstream.dataset,
            downstream.train,
            downstream.test,
            downstream.classes,
            downstream.config,
            seed,
        )?;
        let downstream_accuracy = head
            .test_accuracy
            .ok_or_else(|| Error::EmptySplit(downstream.test.name.clone()))?;
        rows.push(EarlyStopRow { epoch, inference_accuracy: report.accuracy, downstream_accuracy });
    }
    Ok(rows)
}

/// Runs `cell(knowledge, method, trial, seed)` for every combination, with
/// trial `i` seeded `root_seed + i`. Missing assets are reported with the
/// cell that needed them.
pub fn study_grid<F>(
    settings: &[BackgroundKnowledge],
    methods: &[ClassifierKind],
    trials: usize,
    root_seed: u64,
    mut cell: F,
) -> Result<Vec<EvaluationReport>>
where
    F: FnMut(BackgroundKnowledge, ClassifierKind, usize, u64) -> Result<EvaluationReport>,
{
    let mut out = Vec::with_capacity(settings.len() * methods.len() * trials);
    for &b in settings {
        for &m in methods {
            for trial in 0..trials {
                let seed = root_seed.wrapping_add(trial as u64);
                let report = cell(b, m, trial, seed).map_err(|e| match e {
                    Error::MissingAsset(what) => Error::MissingAsset(format!("{} {b}: {what}", m.method_id())),
                    Error::MissingCheckpoint(epoch) => {
                        Error::MissingAsset(format!("{} {b}: checkpoint for epoch {epoch}", m.method_id()))
                    }
                    other => other,
                })?;
                out.push(report.with_knowledge(b).with_trial(trial));
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation; 0 for a single value.
    pub std: f64,
    pub count: usize,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        Some(Self { mean, std, count: values.len() })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub method: String,
    pub knowledge: Option<BackgroundKnowledge>,
    pub trials: usize,
    pub accuracy: MeanStd,
    /// Over the trials where precision is defined.
    pub precision: Option<MeanStd>,
    pub recall: MeanStd,
}

/// Mean and standard deviation per `(method, knowledge)` cell, in order of
/// first appearance.
pub fn summarize(reports: &[EvaluationReport]) -> Vec<CellSummary> {
    let mut keys: Vec<(String, Option<BackgroundKnowledge>)> = Vec::new();
    for r in reports {
        let key = (r.method.clone(), r.knowledge);
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    keys.into_iter()
        .map(|(method, knowledge)| {
            let cell: Vec<&EvaluationReport> =
                reports.iter().filter(|r| r.method == method && r.knowledge == knowledge).collect();
            let pick = |f: &dyn Fn(&EvaluationReport) -> Option<f64>| -> Vec<f64> { cell.iter().filter_map(|r| f(r)).collect() };
            CellSummary {
                trials: cell.len(),
                accuracy: MeanStd::of(&pick(&|r| Some(r.accuracy))).expect("non-empty cell"),
                precision: MeanStd::of(&pick(&|r| r.precision)),
                recall: MeanStd::of(&pick(&|r| Some(r.recall))).expect("non-empty cell"),
                method,
                knowledge,
            }
        })
        .collect()
}

/// Target pipelines with 0 to 4 operations in common with the inferrer's
/// `[crop, jitter, grayscale, flip]` list. Every target keeps Gaussian blur;
/// the shared operations are added as grayscale, crop, flip, jitter.
pub fn augmentation_overlap_targets() -> Vec<(usize, AugmentationPipeline)> {
    use AugmentationKind::*;
    let added = [RandomGrayscale, RandomResizedCrop, RandomHorizontalFlip, ColorJitter];
    let canonical = [RandomResizedCrop, ColorJitter, RandomGrayscale, RandomHorizontalFlip, GaussianBlur];
    (0..=added.len())
        .map(|k| {
            let kinds: Vec<AugmentationKind> =
                canonical.into_iter().filter(|c| *c == GaussianBlur || added[..k].contains(c)).collect();
            (k, AugmentationPipeline::from_kinds(&kinds))
        })
        .collect()
}

/// The inferrer's query pipeline in the augmentation-overlap study.
pub fn augmentation_overlap_inferrer() -> AugmentationPipeline {
    AugmentationPipeline::contrastive_default()
}
