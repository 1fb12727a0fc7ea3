//! Shared state of one invocation: manifest, run directory, datasets and
//! asset lookup.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use encodermi::classifiers::{ClassifierKind, InferenceClassifier};
use encodermi::contrastive::{EncoderCheckpoint, PretrainConfig};
use encodermi::data::loaders::{load_cifar10, load_image_dir, load_stl10, load_tiny_imagenet, Subset};
use encodermi::data::{synthetic_dataset, DatasetSplit, InMemoryDataset, SplitManifest, SplitRole};
use encodermi::encoder::LocalEncoder;
use encodermi::eval::{BackgroundKnowledge, ShadowPlan, TargetSetup};
use encodermi::membership::{ExtractionConfig, FeatureCache};
use encodermi::rng::child_seed;
use encodermi::{Error, Result};

use crate::manifest::{resolve_data_path, DatasetSource, ExperimentManifest, SubsetName};
use crate::rundir::RunDir;

pub struct Ctx {
    pub manifest: ExperimentManifest,
    pub run: RunDir,
    /// Skip individually completed jobs of an unfinished stage.
    pub resume: bool,
    pub pool: rayon::ThreadPool,
    datasets: Mutex<BTreeMap<String, Arc<InMemoryDataset>>>,
    fault_after: Option<usize>,
    jobs_finished: Mutex<usize>,
}

/// Environment variable that aborts the process after this many jobs have
/// completed, to exercise resumption.
pub const FAULT_ENV: &str = "ENCODERMI_FAULT_AFTER_JOBS";

fn subset(s: SubsetName) -> Subset {
    match s {
        SubsetName::Train => Subset::Train,
        SubsetName::Test => Subset::Test,
        SubsetName::Unlabeled => Subset::Unlabeled,
    }
}

impl Ctx {
    pub fn new(manifest: ExperimentManifest, resume: bool, workers: Option<usize>) -> Result<Self> {
        let run = RunDir::open(&manifest)?;
        let mut builder = rayon::ThreadPoolBuilder::new();
        if let Some(n) = workers {
            builder = builder.num_threads(n.max(1));
        }
        let pool = builder.build().map_err(|e| Error::InvalidParameter(format!("--workers: {e}")))?;
        let fault_after = std::env::var(FAULT_ENV).ok().and_then(|v| v.parse().ok());
        Ok(Self {
            manifest,
            run,
            resume,
            pool,
            datasets: Mutex::new(BTreeMap::new()),
            fault_after,
            jobs_finished: Mutex::new(0),
        })
    }

    pub fn dataset(&self, name: &str) -> Result<Arc<InMemoryDataset>> {
        if let Some(ds) = self.datasets.lock().expect("dataset lock").get(name) {
            return Ok(ds.clone());
        }
        let source = self
            .manifest
            .datasets
            .get(name)
            .ok_or_else(|| Error::InvalidParameter(format!("datasets: unknown dataset `{name}`")))?;
        let ds = match source {
            DatasetSource::Synthetic { family, len, side, seed } => synthetic_dataset(*family, *len, *side, *seed)?,
            DatasetSource::Cifar10 { path, subset: s, side } => load_cifar10(&resolve_data_path(path), subset(*s), (*side, *side))?,
            DatasetSource::Stl10 { path, subset: s, side } => load_stl10(&resolve_data_path(path), subset(*s), (*side, *side))?,
            DatasetSource::TinyImagenet { path, subset: s, side } => {
                load_tiny_imagenet(&resolve_data_path(path), subset(*s), (*side, *side))?
            }
            DatasetSource::ImageDir { path, side } => load_image_dir(&resolve_data_path(path), (*side, *side))?,
        };
        let ds = Arc::new(ds);
        self.datasets.lock().expect("dataset lock").insert(name.to_string(), ds.clone());
        Ok(ds)
    }

    pub fn splits(&self) -> Result<SplitManifest> {
        let path = self.run.path("splits.json");
        if !path.exists() {
            return Err(Error::MissingAsset(format!("{} (run `prepare-data` first)", path.display())));
        }
        SplitManifest::load(&path)
    }

    pub fn split(&self, source: &str, role: SplitRole) -> Result<DatasetSplit> {
        self.splits()?
            .get(source, role)
            .cloned()
            .ok_or_else(|| Error::MissingAsset(format!("split {source}/{role}")))
    }

    pub fn target_setup(&self) -> TargetSetup {
        let t = &self.manifest.target;
        TargetSetup {
            dataset: t.dataset.clone(),
            alternate_dataset: t.alternate_dataset.clone(),
            arch: t.pretrain.encoder.arch,
            algorithm: t.pretrain.algorithm,
            pipeline: t.pretrain.augmentation.clone(),
        }
    }

    pub fn plan(&self, b: BackgroundKnowledge) -> ShadowPlan {
        b.shadow_plan(&self.target_setup())
    }

    /// Pre-training config of the shadow for `b`: the target's schedule
    /// with the architecture, algorithm and augmentation the plan assumes.
    pub fn shadow_config(&self, b: BackgroundKnowledge) -> PretrainConfig {
        let plan = self.plan(b);
        let mut cfg = self.manifest.target.pretrain.clone();
        cfg.encoder.arch = plan.arch;
        cfg.algorithm = plan.algorithm;
        cfg.augmentation = plan.pretrain_pipeline;
        cfg.checkpoint_every = 0;
        cfg
    }

    pub fn extraction(&self, b: BackgroundKnowledge) -> ExtractionConfig {
        ExtractionConfig {
            pipeline: self.plan(b).query_pipeline,
            n: self.manifest.extraction.n,
            metric: self.manifest.extraction.metric,
        }
    }

    pub fn trial_seed(&self, trial: usize) -> u64 {
        self.manifest.seed.wrapping_add(trial as u64)
    }

    pub fn seed_for(&self, trial: usize, purpose: &str) -> u64 {
        child_seed(self.trial_seed(trial), purpose)
    }

    pub fn target_seed(&self) -> u64 {
        child_seed(self.manifest.seed, "target")
    }

    pub fn feature_cache(&self) -> Result<FeatureCache> {
        FeatureCache::new(self.run.path("features"))
    }

    pub fn target_checkpoint_path(&self, epoch: usize) -> PathBuf {
        self.run.path(format!("checkpoints/target/epoch-{epoch:04}.ckpt"))
    }

    pub fn shadow_dir(&self, b: BackgroundKnowledge, trial: usize) -> PathBuf {
        self.run.path(format!("checkpoints/shadow/{}/t{trial}", b.label()))
    }

    pub fn shadow_checkpoint_path(&self, b: BackgroundKnowledge, trial: usize) -> PathBuf {
        self.shadow_dir(b, trial).join(format!("epoch-{:04}.ckpt", self.manifest.target.pretrain.epochs))
    }

    pub fn classifier_path(&self, b: BackgroundKnowledge, trial: usize, kind: ClassifierKind) -> PathBuf {
        self.run.path(format!("classifiers/{}/t{trial}/{}.json", b.label(), kind.as_str()))
    }

    fn load_checkpoint(&self, path: PathBuf, what: &str) -> Result<EncoderCheckpoint> {
        if !path.exists() {
            return Err(Error::MissingAsset(format!("{what} checkpoint {} (run `pretrain` first)", path.display())));
        }
        EncoderCheckpoint::load(&path)
    }

    pub fn target_checkpoints(&self) -> Result<Vec<EncoderCheckpoint>> {
        self.manifest
            .target
            .pretrain
            .checkpoint_epochs()
            .into_iter()
            .map(|e| self.load_checkpoint(self.target_checkpoint_path(e), "target"))
            .collect()
    }

    pub fn target_encoder(&self) -> Result<LocalEncoder> {
        let last = self.manifest.target.pretrain.epochs;
        Ok(self.load_checkpoint(self.target_checkpoint_path(last), "target")?.into())
    }

    pub fn shadow_encoder(&self, b: BackgroundKnowledge, trial: usize) -> Result<LocalEncoder> {
        Ok(self.load_checkpoint(self.shadow_checkpoint_path(b, trial), &format!("shadow {b} trial {trial}"))?.into())
    }

    pub fn load_classifier(&self, b: BackgroundKnowledge, trial: usize, kind: ClassifierKind) -> Result<InferenceClassifier> {
        let path = self.classifier_path(b, trial, kind);
        if !path.exists() {
            return Err(Error::MissingAsset(format!(
                "{} classifier {} (run `train-attack` first)",
                kind.method_id(),
                path.display()
            )));
        }
        InferenceClassifier::load(&path)
    }

    /// Every (knowledge, trial) pair of the manifest.
    pub fn cells(&self) -> Vec<(BackgroundKnowledge, usize)> {
        self.manifest
            .knowledge_settings()
            .into_iter()
            .flat_map(|b| (0..self.manifest.trials).map(move |t| (b, t)))
            .collect()
    }

    /// Runs `job` unless already marked complete (when resuming), then
    /// marks it.
    pub fn job(&self, name: &str, job: impl FnOnce() -> Result<()>) -> Result<()> {
        if self.resume && self.run.is_done(name) {
            log::info!("{name}: already complete");
            return Ok(());
        }
        log::info!("{name}: running");
        job()?;
        self.run.mark_done(name)?;
        let mut finished = self.jobs_finished.lock().expect("job counter");
        *finished += 1;
        if self.fault_after.is_some_and(|limit| *finished >= limit) {
            eprintln!("{FAULT_ENV}: stopping after {finished} job(s)");
            std::process::exit(75);
        }
        Ok(())
    }
}
