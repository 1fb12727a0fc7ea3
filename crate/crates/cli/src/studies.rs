//! The `study` subcommand: one-factor sweeps around the main experiment.

use std::fmt;
use std::str::FromStr;

use encodermi::classifiers::ClassifierKind;
use encodermi::contrastive::{pretrain_encoder, PretrainConfig};
use encodermi::data::{AugmentationPipeline, SplitRole};
use encodermi::encoder::LocalEncoder;
use encodermi::eval::{
    augmentation_overlap_inferrer, augmentation_overlap_targets, early_stopping_study, evaluate_features,
    overfitting_monitor, BackgroundKnowledge, DownstreamProbe, EvaluationReport,
};
use encodermi::membership::{label_records, ExtractionConfig, SimilarityMetric};
use encodermi::{json_digest, Error, Result};
use serde::{Deserialize, Serialize};

use crate::context::Ctx;
use crate::stages::{stage, train_kind, write_json, Outcome};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StudyAxis {
    /// Number of augmented views per query.
    N,
    Metric,
    /// Shadow member/non-member count.
    Size,
    /// Operations shared between the target's and the inferrer's pipelines.
    Augmentation,
    EarlyStopping,
    Overfitting,
}

impl StudyAxis {
    pub const ALL: [Self; 6] = [Self::N, Self::Metric, Self::Size, Self::Augmentation, Self::EarlyStopping, Self::Overfitting];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::N => "n",
            Self::Metric => "metric",
            Self::Size => "size",
            Self::Augmentation => "augmentation",
            Self::EarlyStopping => "early-stopping",
            Self::Overfitting => "overfitting",
        }
    }
}

impl fmt::Display for StudyAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StudyAxis {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.as_str() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown study axis `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyRow {
    pub axis: StudyAxis,
    pub value: String,
    pub method: Option<String>,
    pub trial: usize,
    pub accuracy: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub downstream_accuracy: Option<f64>,
    pub member_avg: Option<f64>,
    pub nonmember_avg: Option<f64>,
    pub seed: u64,
}

impl StudyRow {
    fn blank(axis: StudyAxis, value: impl ToString, trial: usize, seed: u64) -> Self {
        Self {
            axis,
            value: value.to_string(),
            method: None,
            trial,
            accuracy: None,
            precision: None,
            recall: None,
            downstream_accuracy: None,
            member_avg: None,
            nonmember_avg: None,
            seed,
        }
    }

    fn from_report(axis: StudyAxis, value: impl ToString, r: &EvaluationReport, trial: usize) -> Self {
        Self {
            method: Some(r.method.clone()),
            accuracy: Some(r.accuracy),
            precision: r.precision,
            recall: Some(r.recall),
            ..Self::blank(axis, value, trial, r.seed)
        }
    }
}

pub struct StudyRequest {
    pub axis: StudyAxis,
    /// Empty means the axis default.
    pub values: Vec<String>,
    /// Empty means the manifest's methods.
    pub methods: Vec<ClassifierKind>,
}

impl StudyRequest {
    fn resolved_values(&self, ctx: &Ctx) -> Vec<String> {
        if !self.values.is_empty() {
            return self.values.clone();
        }
        let m = &ctx.manifest;
        match self.axis {
            StudyAxis::N => vec![m.extraction.n.to_string()],
            StudyAxis::Metric => SimilarityMetric::ALL.iter().map(|s| s.to_string()).collect(),
            StudyAxis::Size => vec![m.splits.target.get("shadow-member").copied().unwrap_or(0).to_string()],
            StudyAxis::Augmentation => augmentation_overlap_targets().iter().map(|(k, _)| k.to_string()).collect(),
            StudyAxis::EarlyStopping => {
                let epochs = if m.studies.early_stopping_epochs.is_empty() {
                    m.target.pretrain.checkpoint_epochs()
                } else {
                    m.studies.early_stopping_epochs.clone()
                };
                epochs.iter().map(|e| e.to_string()).collect()
            }
            StudyAxis::Overfitting => m.target.pretrain.checkpoint_epochs().iter().map(|e| e.to_string()).collect(),
        }
    }
}

fn parse_value<T: FromStr>(axis: StudyAxis, v: &str) -> Result<T>
where
    T::Err: fmt::Display,
{
    v.parse().map_err(|e| Error::InvalidParameter(format!("--values for axis {axis}: `{v}`: {e}")))
}

/// Knowledge setting the studies run under: the first one in the manifest.
fn study_knowledge(ctx: &Ctx) -> BackgroundKnowledge {
    ctx.manifest.knowledge_settings()[0]
}

/// Runs the study and writes `reports/studies/<axis>.{json,csv}`.
pub fn study(ctx: &Ctx, req: &StudyRequest) -> Result<Outcome> {
    let values = req.resolved_values(ctx);
    let methods = if req.methods.is_empty() { ctx.manifest.classifiers.methods.clone() } else { req.methods.clone() };
    let name = format!("study-{}-{}", req.axis, json_digest(&(&values, &methods)));
    stage(ctx, &name, |ctx| {
        let rows = match req.axis {
            StudyAxis::N | StudyAxis::Metric | StudyAxis::Size => sweep(ctx, req.axis, &values, &methods)?,
            StudyAxis::Augmentation => augmentation(ctx, &values, &methods)?,
            StudyAxis::EarlyStopping => early_stopping(ctx, &values, &methods)?,
            StudyAxis::Overfitting => overfitting(ctx, &values)?,
        };
        write_json(&ctx.run.path(format!("reports/studies/{}.json", req.axis)), &rows)?;
        write_rows_csv(&ctx.run.path(format!("reports/studies/{}.csv", req.axis)), &rows)
    })
}

pub fn write_rows_csv(path: &std::path::Path, rows: &[StudyRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "axis",
        "value",
        "method",
        "trial",
        "accuracy",
        "precision",
        "recall",
        "downstream_accuracy",
        "member_avg",
        "nonmember_avg",
        "seed",
    ])
    .map_err(csv_err)?;
    let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
    for r in rows {
        w.write_record([
            r.axis.to_string(),
            r.value.clone(),
            r.method.clone().unwrap_or_default(),
            r.trial.to_string(),
            opt(r.accuracy),
            opt(r.precision),
            opt(r.recall),
            opt(r.downstream_accuracy),
            opt(r.member_avg),
            opt(r.nonmember_avg),
            r.seed.to_string(),
        ])
        .map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    encodermi::contrastive::write_atomic(path, &bytes)
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// n, metric and shadow-size sweeps: retrain the classifiers with the
/// changed factor and evaluate against the main target.
fn sweep(ctx: &Ctx, axis: StudyAxis, values: &[String], methods: &[ClassifierKind]) -> Result<Vec<StudyRow>> {
    let b = study_knowledge(ctx);
    let plan = ctx.plan(b);
    let shadow_ds = ctx.dataset(&plan.dataset)?;
    let target_name = ctx.manifest.target.dataset.clone();
    let target_ds = ctx.dataset(&target_name)?;
    let target = ctx.target_encoder()?;
    let cache = ctx.feature_cache()?;
    let mut rows = Vec::new();
    for value in values {
        let mut cfg = ctx.extraction(b);
        let mut size = None;
        match axis {
            StudyAxis::N => cfg.n = parse_value(axis, value)?,
            StudyAxis::Metric => cfg.metric = parse_value(axis, value)?,
            _ => size = Some(parse_value::<usize>(axis, value)?),
        }
        for trial in 0..ctx.manifest.trials {
            let shadow = ctx.shadow_encoder(b, trial)?;
            let seed = ctx.seed_for(trial, "extract");
            let mut sm = ctx.split(&plan.dataset, SplitRole::ShadowMember)?;
            let mut snm = ctx.split(&plan.dataset, SplitRole::ShadowNonmember)?;
            if let Some(k) = size {
                if k > sm.len() || k > snm.len() {
                    return Err(Error::InsufficientData { requested: k, available: sm.len().min(snm.len()) });
                }
                sm = sm.head(k);
                snm = snm.head(k);
            }
            let fm = cache.extract_split(&*shadow_ds, &sm, &shadow, &cfg, seed)?;
            let fnm = cache.extract_split(&*shadow_ds, &snm, &shadow, &cfg, seed)?;
            let records = label_records(&sm, fm, &snm, fnm)?;
            let em = ctx.split(&target_name, SplitRole::EvalMember)?;
            let enm = ctx.split(&target_name, SplitRole::EvalNonmember)?;
            let tm = cache.extract_split(&*target_ds, &em, &target, &cfg, seed)?;
            let tnm = cache.extract_split(&*target_ds, &enm, &target, &cfg, seed)?;
            for &kind in methods {
                let cseed = ctx.seed_for(trial, &format!("study/{axis}/{value}/{}", kind.as_str()));
                let clf = train_kind(ctx, kind, &records, cseed)?;
                clf.save(&ctx.run.path(format!("classifiers/studies/{axis}/{value}/{}-t{trial}.json", kind.as_str())))?;
                let report = evaluate_features(&clf, &tm, &tnm, ctx.trial_seed(trial))?;
                rows.push(StudyRow::from_report(axis, value, &report, trial));
            }
        }
    }
    Ok(rows)
}

fn study_pretrain(ctx: &Ctx, pipeline: &AugmentationPipeline, role: SplitRole, path: &std::path::Path, seed: u64) -> Result<LocalEncoder> {
    if path.exists() {
        return Ok(encodermi::encoder::load_local(path)?);
    }
    let m = &ctx.manifest;
    let ds = ctx.dataset(&m.target.dataset)?;
    let split = ctx.split(&m.target.dataset, role)?;
    let cfg = PretrainConfig { augmentation: pipeline.clone(), checkpoint_every: 0, ..m.target.pretrain.clone() };
    let mut last = None;
    pretrain_encoder(&*ds, &split, &cfg, seed, &mut |ck| {
        ck.save(path)?;
        last = Some(ck.model.clone());
        Ok(())
    })?;
    Ok(LocalEncoder::new(last.expect("pre-training yields a final checkpoint")))
}

/// Targets pre-trained with 0..4 operations in common with the inferrer's
/// pipeline, attacked by a shadow pre-trained and queried with the
/// inferrer's own pipeline.
fn augmentation(ctx: &Ctx, values: &[String], methods: &[ClassifierKind]) -> Result<Vec<StudyRow>> {
    let axis = StudyAxis::Augmentation;
    let targets = augmentation_overlap_targets();
    let inferrer = augmentation_overlap_inferrer();
    let name = ctx.manifest.target.dataset.clone();
    let ds = ctx.dataset(&name)?;
    let cfg = ExtractionConfig { pipeline: inferrer.clone(), n: ctx.manifest.extraction.n, metric: ctx.manifest.extraction.metric };
    let mut rows = Vec::new();
    for trial in 0..ctx.manifest.trials {
        let seed = ctx.seed_for(trial, "extract");
        let shadow_path = ctx.run.path(format!("checkpoints/studies/{axis}/inferrer/t{trial}.ckpt"));
        let shadow = study_pretrain(ctx, &inferrer, SplitRole::ShadowMember, &shadow_path, ctx.seed_for(trial, "study/augmentation/shadow"))?;
        let cache = ctx.feature_cache()?;
        let sm = ctx.split(&name, SplitRole::ShadowMember)?;
        let snm = ctx.split(&name, SplitRole::ShadowNonmember)?;
        let records = label_records(&sm, cache.extract_split(&*ds, &sm, &shadow, &cfg, seed)?, &snm, cache.extract_split(&*ds, &snm, &shadow, &cfg, seed)?)?;
        let mut classifiers = Vec::new();
        for &kind in methods {
            let clf = train_kind(ctx, kind, &records, ctx.seed_for(trial, &format!("study/{axis}/{}", kind.as_str())))?;
            clf.save(&ctx.run.path(format!("classifiers/studies/{axis}/inferrer/{}-t{trial}.json", kind.as_str())))?;
            classifiers.push(clf);
        }
        for value in values {
            let k: usize = parse_value(axis, value)?;
            let (_, pipeline) = targets
                .iter()
                .find(|(shared, _)| *shared == k)
                .ok_or_else(|| Error::InvalidParameter(format!("--values for axis {axis}: overlap must be 0..=4, got {k}")))?;
            let path = ctx.run.path(format!("checkpoints/studies/{axis}/{k}/t{trial}.ckpt"));
            let target = study_pretrain(ctx, pipeline, SplitRole::PretrainMember, &path, ctx.seed_for(trial, &format!("study/augmentation/target/{k}")))?;
            let em = ctx.split(&name, SplitRole::EvalMember)?;
            let enm = ctx.split(&name, SplitRole::EvalNonmember)?;
            let tm = cache.extract_split(&*ds, &em, &target, &cfg, seed)?;
            let tnm = cache.extract_split(&*ds, &enm, &target, &cfg, seed)?;
            for clf in &classifiers {
                let report = evaluate_features(clf, &tm, &tnm, ctx.trial_seed(trial))?;
                rows.push(StudyRow::from_report(axis, k, &report, trial));
            }
        }
    }
    Ok(rows)
}

fn epochs_of(axis: StudyAxis, values: &[String]) -> Result<Vec<usize>> {
    values.iter().map(|v| parse_value(axis, v)).collect()
}

/// The main classifiers against earlier target checkpoints, with the
/// downstream accuracy each checkpoint supports.
fn early_stopping(ctx: &Ctx, values: &[String], methods: &[ClassifierKind]) -> Result<Vec<StudyRow>> {
    let axis = StudyAxis::EarlyStopping;
    let epochs = epochs_of(axis, values)?;
    let m = &ctx.manifest;
    let b = study_knowledge(ctx);
    let name = &m.target.dataset;
    let ds = ctx.dataset(name)?;
    let checkpoints = ctx.target_checkpoints()?;
    let em = ctx.split(name, SplitRole::EvalMember)?;
    let enm = ctx.split(name, SplitRole::EvalNonmember)?;
    let train = ctx.split(name, SplitRole::DownstreamTrain)?;
    let test = ctx.split(name, SplitRole::DownstreamTest)?;
    let probe = DownstreamProbe { dataset: &*ds, train: &train, test: &test, classes: m.target.classes, config: &m.baselines.downstream };
    let mut rows = Vec::new();
    for trial in 0..m.trials {
        let seed = ctx.seed_for(trial, "extract");
        for &kind in methods {
            let clf = ctx.load_classifier(b, trial, kind)?;
            let found = early_stopping_study(&epochs, &checkpoints, &clf, &*ds, &em, &enm, &ctx.extraction(b), &probe, seed)?;
            for r in found {
                rows.push(StudyRow {
                    method: Some(kind.method_id().to_string()),
                    accuracy: Some(r.inference_accuracy),
                    downstream_accuracy: Some(r.downstream_accuracy),
                    ..StudyRow::blank(axis, r.epoch, trial, seed)
                });
            }
        }
    }
    Ok(rows)
}

/// Average member and non-member similarity across the target checkpoints.
fn overfitting(ctx: &Ctx, values: &[String]) -> Result<Vec<StudyRow>> {
    let axis = StudyAxis::Overfitting;
    let epochs = epochs_of(axis, values)?;
    let m = &ctx.manifest;
    let name = &m.target.dataset;
    let ds = ctx.dataset(name)?;
    let by_epoch = ctx.target_checkpoints()?;
    let checkpoints = epochs
        .iter()
        .map(|e| by_epoch.iter().find(|c| c.epoch == *e).cloned().ok_or(Error::MissingCheckpoint(*e)))
        .collect::<Result<Vec<_>>>()?;
    let em = ctx.split(name, SplitRole::EvalMember)?;
    let enm = ctx.split(name, SplitRole::EvalNonmember)?;
    let seed = ctx.seed_for(0, "extract");
    let points = overfitting_monitor(&checkpoints, &*ds, &em, &enm, &ctx.extraction(study_knowledge(ctx)), seed)?;
    Ok(points
        .into_iter()
        .map(|p| StudyRow {
            member_avg: Some(p.member_avg),
            nonmember_avg: Some(p.nonmember_avg),
            ..StudyRow::blank(axis, p.epoch, 0, seed)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn axis_names_roundtrip() {
        for a in StudyAxis::ALL {
            assert_eq!(a.as_str().parse::<StudyAxis>().unwrap(), a);
            assert_eq!(serde_json::to_value(a).unwrap(), a.as_str());
        }
        assert!("depth".parse::<StudyAxis>().is_err());
    }
}
