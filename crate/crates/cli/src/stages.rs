//! The pipeline subcommands. Each is a stage with a completion marker; the
//! larger ones are split into jobs with their own markers.

use std::path::Path;

use encodermi::baselines::{
    baseline_features, train_downstream, BaselineAttack, BaselineId, BaselineInputs, BaselineSide, DownstreamClassifier,
};
use encodermi::classifiers::{
    fit_threshold, train_set_classifier, train_vector_classifier, ClassifierKind, InferenceClassifier,
};
use encodermi::contrastive::{load_split_images, pretrain_encoder, write_atomic, write_loss_log};
use encodermi::data::{make_splits, parse_sizes, validate_splits, Dataset, DatasetSplit, SplitManifest, SplitRole};
use encodermi::encoder::{BlackBoxEncoder, LocalEncoder};
use encodermi::eval::{
    classifier_pr_curve, evaluate_features, pr_curve, study_grid, BackgroundKnowledge, EvaluationReport,
};
use encodermi::membership::{label_records, ExtractionConfig, LabeledMembershipRecord, MembershipFeatureSet};
use encodermi::rng::child_seed;
use encodermi::{Error, Result};
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::context::Ctx;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Outcome {
    Completed,
    AlreadyComplete,
}

/// Runs `body` as stage `name` unless its completion marker exists.
pub fn stage(ctx: &Ctx, name: &str, body: impl FnOnce(&Ctx) -> Result<()>) -> Result<Outcome> {
    if ctx.run.is_done(name) {
        println!("{name}: already complete");
        return Ok(Outcome::AlreadyComplete);
    }
    if !ctx.resume {
        ctx.run.clear_jobs(name)?;
    }
    body(ctx)?;
    ctx.run.mark_done(name)?;
    println!("{name}: complete");
    Ok(Outcome::Completed)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_atomic(path, &serde_json::to_vec_pretty(value)?)
}

pub fn read_json<T: DeserializeOwned>(path: &Path, hint: &str) -> Result<T> {
    if !path.exists() {
        return Err(Error::MissingAsset(format!("{} ({hint})", path.display())));
    }
    Ok(serde_json::from_slice(&std::fs::read(path)?)?)
}

fn par_jobs<T: Sync>(ctx: &Ctx, items: &[T], f: impl Fn(&T) -> Result<()> + Sync + Send) -> Result<()> {
    ctx.pool.install(|| items.par_iter().map(&f).collect::<Vec<Result<()>>>()).into_iter().collect()
}

pub fn prepare_data(ctx: &Ctx) -> Result<Outcome> {
    stage(ctx, "prepare-data", |ctx| {
        let m = &ctx.manifest;
        let seed = child_seed(m.seed, "splits");
        let mut splits = Vec::new();
        for (name, sizes) in [(&m.target.dataset, &m.splits.target), (&m.target.alternate_dataset, &m.splits.alternate)] {
            if sizes.values().all(|&n| n == 0) {
                continue;
            }
            let ds = ctx.dataset(name)?;
            let sizes = parse_sizes(sizes.iter().map(|(k, v)| (k.as_str(), *v)))?;
            splits.extend(make_splits(name, ds.len(), &sizes, seed)?);
        }
        validate_splits(&splits)?;
        write_json(&ctx.run.path("splits.json"), &SplitManifest { seed, splits })
    })
}

#[derive(Clone, Copy, Debug)]
enum PretrainJob {
    Target,
    Shadow(BackgroundKnowledge, usize),
}

pub fn pretrain(ctx: &Ctx) -> Result<Outcome> {
    stage(ctx, "pretrain", |ctx| {
        let mut jobs = vec![PretrainJob::Target];
        jobs.extend(ctx.cells().into_iter().map(|(b, t)| PretrainJob::Shadow(b, t)));
        par_jobs(ctx, &jobs, |job| match *job {
            PretrainJob::Target => ctx.job("pretrain/target", || {
                let m = &ctx.manifest;
                let ds = ctx.dataset(&m.target.dataset)?;
                let split = ctx.split(&m.target.dataset, SplitRole::PretrainMember)?;
                let out = pretrain_encoder(&*ds, &split, &m.target.pretrain, ctx.target_seed(), &mut |ck| {
                    ck.save(&ctx.target_checkpoint_path(ck.epoch))
                })?;
                write_loss_log(&ctx.run.path("checkpoints/target/loss.csv"), &out.losses)
            }),
            PretrainJob::Shadow(b, trial) => ctx.job(&format!("pretrain/shadow-{}-t{trial}", b.label()), || {
                let plan = ctx.plan(b);
                let ds = ctx.dataset(&plan.dataset)?;
                let split = ctx.split(&plan.dataset, SplitRole::ShadowMember)?;
                let seed = ctx.seed_for(trial, &format!("shadow/{}", b.label()));
                let cfg = ctx.shadow_config(b);
                let out = pretrain_encoder(&*ds, &split, &cfg, seed, &mut |ck| ck.save(&ctx.shadow_checkpoint_path(b, trial)))?;
                write_loss_log(&ctx.shadow_dir(b, trial).join("loss.csv"), &out.losses)
            }),
        })
    })
}

/// Member and non-member features of the shadow for `(b, trial)`.
pub fn shadow_features(
    ctx: &Ctx,
    b: BackgroundKnowledge,
    trial: usize,
    cfg: &ExtractionConfig,
) -> Result<(DatasetSplit, Vec<MembershipFeatureSet>, DatasetSplit, Vec<MembershipFeatureSet>)> {
    let plan = ctx.plan(b);
    let ds = ctx.dataset(&plan.dataset)?;
    let enc = ctx.shadow_encoder(b, trial)?;
    let cache = ctx.feature_cache()?;
    let seed = ctx.seed_for(trial, "extract");
    let sm = ctx.split(&plan.dataset, SplitRole::ShadowMember)?;
    let snm = ctx.split(&plan.dataset, SplitRole::ShadowNonmember)?;
    let fm = cache.extract_split(&*ds, &sm, &enc, cfg, seed)?;
    let fnm = cache.extract_split(&*ds, &snm, &enc, cfg, seed)?;
    Ok((sm, fm, snm, fnm))
}

/// Target features of the eval members and non-members.
pub fn target_features(
    ctx: &Ctx,
    enc: &dyn BlackBoxEncoder,
    trial: usize,
    cfg: &ExtractionConfig,
) -> Result<(Vec<MembershipFeatureSet>, Vec<MembershipFeatureSet>)> {
    let name = &ctx.manifest.target.dataset;
    let ds = ctx.dataset(name)?;
    let cache = ctx.feature_cache()?;
    let seed = ctx.seed_for(trial, "extract");
    let em = ctx.split(name, SplitRole::EvalMember)?;
    let enm = ctx.split(name, SplitRole::EvalNonmember)?;
    Ok((cache.extract_split(&*ds, &em, enc, cfg, seed)?, cache.extract_split(&*ds, &enm, enc, cfg, seed)?))
}

pub fn extract(ctx: &Ctx) -> Result<Outcome> {
    stage(ctx, "extract", |ctx| {
        let target = ctx.target_encoder()?;
        par_jobs(ctx, &ctx.cells(), |&(b, trial)| {
            ctx.job(&format!("extract/{}-t{trial}", b.label()), || {
                let cfg = ctx.extraction(b);
                shadow_features(ctx, b, trial, &cfg)?;
                target_features(ctx, &target, trial, &cfg)?;
                Ok(())
            })
        })
    })
}

pub fn train_kind(
    ctx: &Ctx,
    kind: ClassifierKind,
    records: &[LabeledMembershipRecord],
    seed: u64,
) -> Result<InferenceClassifier> {
    let c = &ctx.manifest.classifiers;
    Ok(match kind {
        ClassifierKind::Vector => train_vector_classifier(records, &c.vector, seed)?.into(),
        ClassifierKind::Set => train_set_classifier(records, &c.set, seed)?.into(),
        ClassifierKind::Threshold => fit_threshold(records)?.into(),
    })
}

pub fn train_attack(ctx: &Ctx) -> Result<Outcome> {
    stage(ctx, "train-attack", |ctx| {
        par_jobs(ctx, &ctx.cells(), |&(b, trial)| {
            ctx.job(&format!("train-attack/{}-t{trial}", b.label()), || {
                let (sm, fm, snm, fnm) = shadow_features(ctx, b, trial, &ctx.extraction(b))?;
                let records = label_records(&sm, fm, &snm, fnm)?;
                for &kind in &ctx.manifest.classifiers.methods {
                    let seed = ctx.seed_for(trial, &format!("classifier/{}/{}", b.label(), kind.as_str()));
                    train_kind(ctx, kind, &records, seed)?.save(&ctx.classifier_path(b, trial, kind))?;
                }
                Ok(())
            })
        })
    })
}

pub fn evaluate(ctx: &Ctx) -> Result<Outcome> {
    stage(ctx, "evaluate", |ctx| {
        let m = &ctx.manifest;
        let settings = m.knowledge_settings();
        for &(b, trial) in &ctx.cells() {
            for &kind in &m.classifiers.methods {
                ctx.load_classifier(b, trial, kind)?;
            }
        }
        let target = ctx.target_encoder()?;
        let reports = study_grid(&settings, &m.classifiers.methods, m.trials, m.seed, |b, kind, trial, seed| {
            let clf = ctx.load_classifier(b, trial, kind)?;
            let (fm, fnm) = target_features(ctx, &target, trial, &ctx.extraction(b))?;
            let mut report = evaluate_features(&clf, &fm, &fnm, seed)?;
            report.pr_curve = Some(classifier_pr_curve(&clf, &fm, &fnm, m.studies.pr_grid)?);
            Ok(report)
        })?;
        write_json(&ctx.run.path("reports/evaluate.json"), &reports)?;
        crate::report::write_report_csv(&ctx.run.path("reports/evaluate.csv"), &reports)
    })
}

struct BaselineData {
    split_m: DatasetSplit,
    split_nm: DatasetSplit,
    images_m: Vec<encodermi::data::ImageTensor>,
    images_nm: Vec<encodermi::data::ImageTensor>,
    labels_m: Option<Vec<usize>>,
    labels_nm: Option<Vec<usize>>,
}

impl BaselineData {
    fn load(ds: &dyn Dataset, m: DatasetSplit, nm: DatasetSplit, resolution: (usize, usize)) -> Result<Self> {
        Ok(Self {
            images_m: load_split_images(ds, &m, resolution)?,
            images_nm: load_split_images(ds, &nm, resolution)?,
            labels_m: ds.labels(&m.indices).ok(),
            labels_nm: ds.labels(&nm.indices).ok(),
            split_m: m,
            split_nm: nm,
        })
    }

    fn members(&self) -> BaselineInputs<'_> {
        BaselineInputs {
            source: &self.split_m.source,
            ids: &self.split_m.indices,
            images: &self.images_m,
            labels: self.labels_m.as_deref(),
        }
    }

    fn nonmembers(&self) -> BaselineInputs<'_> {
        BaselineInputs {
            source: &self.split_nm.source,
            ids: &self.split_nm.indices,
            images: &self.images_nm,
            labels: self.labels_nm.as_deref(),
        }
    }
}

fn downstream_head(ctx: &Ctx, enc: &LocalEncoder, file: &str, seed: u64) -> Result<DownstreamClassifier> {
    let m = &ctx.manifest;
    let path = ctx.run.path(format!("classifiers/downstream/{file}.json"));
    if ctx.resume && path.exists() {
        let head: DownstreamClassifier = read_json(&path, "downstream head")?;
        if head.encoder_digest == enc.digest() {
            return Ok(head);
        }
    }
    let ds = ctx.dataset(&m.target.dataset)?;
    let train = ctx.split(&m.target.dataset, SplitRole::DownstreamTrain)?;
    let test = ctx
        .split(&m.target.dataset, SplitRole::DownstreamTest)
        .unwrap_or_else(|_| DatasetSplit::new(SplitRole::DownstreamTest, m.target.dataset.clone(), Vec::new()));
    let head = train_downstream(enc, &*ds, &train, &test, m.target.classes, &m.baselines.downstream, seed)?;
    write_json(&path, &head)?;
    Ok(head)
}

fn baseline_trial(ctx: &Ctx, trial: usize) -> Result<()> {
    let m = &ctx.manifest;
    let b = m.baselines.knowledge.0;
    let plan = ctx.plan(b);
    let shadow = ctx.shadow_encoder(b, trial)?;
    let target = ctx.target_encoder()?;
    let needs_heads = m.baselines.ids.iter().any(|id| id.needs_downstream());
    let (shadow_head, target_head) = if needs_heads {
        let s = downstream_head(ctx, &shadow, &format!("shadow-{}-t{trial}", b.label()), ctx.seed_for(trial, "downstream/shadow"))?;
        let t = downstream_head(ctx, &target, &format!("target-t{trial}"), ctx.seed_for(trial, "downstream/target"))?;
        (Some(s), Some(t))
    } else {
        (None, None)
    };
    let sds = ctx.dataset(&plan.dataset)?;
    let shadow_data = BaselineData::load(
        &*sds,
        ctx.split(&plan.dataset, SplitRole::ShadowMember)?,
        ctx.split(&plan.dataset, SplitRole::ShadowNonmember)?,
        shadow.resolution(),
    )?;
    let tds = ctx.dataset(&m.target.dataset)?;
    let target_data = BaselineData::load(
        &*tds,
        ctx.split(&m.target.dataset, SplitRole::EvalMember)?,
        ctx.split(&m.target.dataset, SplitRole::EvalNonmember)?,
        target.resolution(),
    )?;
    let shadow_side = BaselineSide { encoder: &shadow, model: Some(shadow.model()), downstream: shadow_head.as_ref() };
    let target_side = BaselineSide { encoder: &target, model: Some(target.model()), downstream: target_head.as_ref() };
    let settings = &m.baselines.settings;
    let seed = ctx.trial_seed(trial);
    let mut reports = Vec::new();
    for &id in &m.baselines.ids {
        let fseed = ctx.seed_for(trial, &format!("baseline/{id}"));
        let shadow_feats = baseline_features(id, &shadow_side, &shadow_data.members(), settings, fseed)
            .and_then(|fm| Ok((fm, baseline_features(id, &shadow_side, &shadow_data.nonmembers(), settings, fseed)?)));
        let (fm, fnm) = match shadow_feats {
            Err(Error::MissingLabel(rec)) => {
                log::warn!("{id}: not applicable, shadow record {rec} has no label");
                continue;
            }
            other => other?,
        };
        let attack = BaselineAttack::fit(id, &fm, &fnm, settings, fseed)?;
        write_json(&ctx.run.path(format!("classifiers/baselines/{id}/t{trial}.json")), &attack)?;
        let tm = baseline_features(id, &target_side, &target_data.members(), settings, fseed)?;
        let tnm = baseline_features(id, &target_side, &target_data.nonmembers(), settings, fseed)?;
        let predicted: Vec<bool> = attack.predict(&tm)?.into_iter().chain(attack.predict(&tnm)?).collect();
        let truth: Vec<bool> = std::iter::repeat_n(true, tm.len()).chain(std::iter::repeat_n(false, tnm.len())).collect();
        let mut report = EvaluationReport::from_predictions(id.as_str(), &predicted, &truth, seed)?
            .with_knowledge(b)
            .with_trial(trial);
        report.pr_curve = Some(pr_curve(&attack.member_scores(&tm)?, &attack.member_scores(&tnm)?, m.studies.pr_grid)?);
        reports.push(report);
    }
    write_json(&ctx.run.path(format!("reports/baselines-t{trial}.json")), &reports)
}

pub fn baselines(ctx: &Ctx) -> Result<Outcome> {
    stage(ctx, "baselines", |ctx| {
        let trials: Vec<usize> = (0..ctx.manifest.trials).collect();
        par_jobs(ctx, &trials, |&t| ctx.job(&format!("baselines/t{t}"), || baseline_trial(ctx, t)))?;
        let mut all: Vec<EvaluationReport> = Vec::new();
        for t in trials {
            let path = ctx.run.path(format!("reports/baselines-t{t}.json"));
            all.extend(read_json::<Vec<EvaluationReport>>(&path, "baseline trial report")?);
        }
        all.sort_by_key(|r| (BaselineId::ALL.iter().position(|id| id.as_str() == r.method), r.trial));
        write_json(&ctx.run.path("reports/baselines.json"), &all)?;
        crate::report::write_report_csv(&ctx.run.path("reports/baselines.csv"), &all)
    })
}
