//! The experiment manifest: everything that determines a run.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use encodermi::baselines::{BaselineId, BaselineSettings, DownstreamConfig};
use encodermi::classifiers::{ClassifierKind, SetConfig, VectorConfig};
use encodermi::contrastive::PretrainConfig;
use encodermi::data::{SplitRole, SyntheticFamily};
use encodermi::eval::BackgroundKnowledge;
use encodermi::membership::SimilarityMetric;
use encodermi::{json_digest, Error, Result};
use serde::{Deserialize, Serialize};
use serde_json::Value;

pub const SCHEMA_VERSION: u32 = 1;

/// Environment variable that relative dataset paths are resolved against.
pub const DATA_ROOT_ENV: &str = "ENCODERMI_DATA_ROOT";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SubsetName {
    Train,
    Test,
    Unlabeled,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DatasetSource {
    Synthetic { family: SyntheticFamily, len: usize, side: usize, seed: u64 },
    Cifar10 { path: PathBuf, subset: SubsetName, side: usize },
    Stl10 { path: PathBuf, subset: SubsetName, side: usize },
    TinyImagenet { path: PathBuf, subset: SubsetName, side: usize },
    ImageDir { path: PathBuf, side: usize },
}

/// A knowledge setting written as `yes-no-yes`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Knowledge(pub BackgroundKnowledge);

impl TryFrom<String> for Knowledge {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        Ok(Self(s.parse()?))
    }
}

impl From<Knowledge> for String {
    fn from(k: Knowledge) -> Self {
        k.0.label()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetSection {
    /// Dataset the target is pre-trained on.
    pub dataset: String,
    /// Differently distributed dataset for shadows that lack `P`.
    pub alternate_dataset: String,
    pub pretrain: PretrainConfig,
    /// Classes of the downstream task drawn from the target dataset.
    pub classes: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSection {
    /// Role name to size on the target dataset.
    pub target: BTreeMap<String, usize>,
    /// Role name to size on the alternate dataset.
    pub alternate: BTreeMap<String, usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractionSection {
    pub n: usize,
    pub metric: SimilarityMetric,
}

impl Default for ExtractionSection {
    fn default() -> Self {
        Self { n: 10, metric: SimilarityMetric::Cosine }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierSection {
    pub methods: Vec<ClassifierKind>,
    pub vector: VectorConfig,
    pub set: SetConfig,
}

impl Default for ClassifierSection {
    fn default() -> Self {
        Self { methods: ClassifierKind::ALL.to_vec(), vector: VectorConfig::default(), set: SetConfig::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineSection {
    pub ids: Vec<BaselineId>,
    /// Whose shadow encoder the baselines are fitted on.
    pub knowledge: Knowledge,
    pub settings: BaselineSettings,
    pub downstream: DownstreamConfig,
}

impl Default for BaselineSection {
    fn default() -> Self {
        Self {
            ids: BaselineId::ALL.to_vec(),
            knowledge: Knowledge(BackgroundKnowledge::FULL),
            settings: BaselineSettings::default(),
            downstream: DownstreamConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudySection {
    /// Target epochs for the early-stopping study; all checkpoints if empty.
    pub early_stopping_epochs: Vec<usize>,
    /// Cutoffs per precision/recall curve.
    pub pr_grid: usize,
}

impl Default for StudySection {
    fn default() -> Self {
        Self { early_stopping_epochs: Vec::new(), pr_grid: 101 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentManifest {
    pub schema_version: u32,
    pub name: String,
    pub seed: u64,
    /// Parent of the run directory.
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub datasets: BTreeMap<String, DatasetSource>,
    pub target: TargetSection,
    pub splits: SplitSection,
    /// Knowledge settings to build shadows and attacks for.
    pub knowledge: Vec<Knowledge>,
    #[serde(default)]
    pub extraction: ExtractionSection,
    #[serde(default)]
    pub classifiers: ClassifierSection,
    #[serde(default)]
    pub baselines: BaselineSection,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub studies: StudySection,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

fn default_trials() -> usize {
    5
}

fn field_error(field: &str, msg: impl std::fmt::Display) -> Error {
    Error::InvalidParameter(format!("{field}: {msg}"))
}

impl ExperimentManifest {
    /// Parses JSON, naming the offending field on failure.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let m: Self = serde_path_to_error::deserialize(de).map_err(|e| field_error(&e.path().to_string(), e.inner()))?;
        m.validate()?;
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidParameter(format!("cannot read manifest {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    pub fn digest(&self) -> String {
        json_digest(self)
    }

    /// Applies `key.path=value` overrides; values are parsed as JSON when
    /// possible and taken as strings otherwise.
    pub fn with_overrides(&self, overrides: &[String]) -> Result<Self> {
        if overrides.is_empty() {
            return Ok(self.clone());
        }
        let mut doc = serde_json::to_value(self)?;
        for o in overrides {
            let (key, raw) =
                o.split_once('=').ok_or_else(|| Error::InvalidParameter(format!("override `{o}` is not key=value")))?;
            let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
            set_path(&mut doc, key, value)?;
        }
        Self::from_json(&doc.to_string())
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(field_error(
                "schema_version",
                format!("unsupported version {} (expected {SCHEMA_VERSION})", self.schema_version),
            ));
        }
        if self.name.is_empty() || self.name.contains(['/', '\\']) || self.name.starts_with('.') {
            return Err(field_error("name", "must be a plain directory name"));
        }
        for (field, ds) in [("target.dataset", &self.target.dataset), ("target.alternate_dataset", &self.target.alternate_dataset)] {
            if !self.datasets.contains_key(ds) {
                return Err(field_error(field, format!("unknown dataset `{ds}`")));
            }
        }
        if self.target.dataset == self.target.alternate_dataset {
            return Err(field_error("target.alternate_dataset", "must differ from target.dataset"));
        }
        self.target.pretrain.validate().map_err(|e| field_error("target.pretrain", e))?;
        if self.target.classes < 2 {
            return Err(field_error("target.classes", "need at least 2 classes"));
        }
        for (field, sizes) in [("splits.target", &self.splits.target), ("splits.alternate", &self.splits.alternate)] {
            for role in sizes.keys() {
                role.parse::<SplitRole>().map_err(|_| field_error(field, format!("unknown split role `{role}`")))?;
            }
        }
        for role in ["pretrain-member", "eval-member", "eval-nonmember", "shadow-member", "shadow-nonmember"] {
            if self.splits.target.get(role).copied().unwrap_or(0) == 0 {
                return Err(field_error("splits.target", format!("`{role}` must be non-empty")));
            }
        }
        let alt_needed = self.knowledge.iter().any(|k| !k.0.p) || !self.baselines.knowledge.0.p;
        for role in ["shadow-member", "shadow-nonmember"] {
            if alt_needed && self.splits.alternate.get(role).copied().unwrap_or(0) == 0 {
                return Err(field_error("splits.alternate", format!("`{role}` must be non-empty when P is unknown")));
            }
        }
        if self.knowledge.is_empty() {
            return Err(field_error("knowledge", "list at least one setting"));
        }
        if self.extraction.n < 2 {
            return Err(field_error("extraction.n", "must be at least 2"));
        }
        if self.trials == 0 {
            return Err(field_error("trials", "must be at least 1"));
        }
        if self.classifiers.methods.is_empty() {
            return Err(field_error("classifiers.methods", "list at least one method"));
        }
        self.classifiers.vector.train.validate().map_err(|e| field_error("classifiers.vector.train", e))?;
        self.classifiers.set.train.validate().map_err(|e| field_error("classifiers.set.train", e))?;
        self.baselines.downstream.train.validate().map_err(|e| field_error("baselines.downstream.train", e))?;
        self.baselines.settings.adv.validate().map_err(|e| field_error("baselines.settings.adv", e))?;
        if self.studies.pr_grid < 2 {
            return Err(field_error("studies.pr_grid", "must be at least 2"));
        }
        for (name, ds) in &self.datasets {
            let side = match ds {
                DatasetSource::Synthetic { side, len, .. } => {
                    if *len == 0 {
                        return Err(field_error(&format!("datasets.{name}.len"), "must be positive"));
                    }
                    side
                }
                DatasetSource::Cifar10 { side, .. }
                | DatasetSource::Stl10 { side, .. }
                | DatasetSource::TinyImagenet { side, .. }
                | DatasetSource::ImageDir { side, .. } => side,
            };
            if *side == 0 {
                return Err(field_error(&format!("datasets.{name}.side"), "must be positive"));
            }
        }
        Ok(())
    }

    /// Directory of this run.
    pub fn run_dir(&self) -> PathBuf {
        self.output_dir.join(&self.name)
    }

    /// Settings in manifest order, deduplicated.
    pub fn knowledge_settings(&self) -> Vec<BackgroundKnowledge> {
        let mut out: Vec<BackgroundKnowledge> = Vec::new();
        for k in self.knowledge.iter().map(|k| k.0).chain([self.baselines.knowledge.0]) {
            if !out.contains(&k) {
                out.push(k);
            }
        }
        out
    }
}

fn set_path(doc: &mut Value, key: &str, value: Value) -> Result<()> {
    let mut cur = doc;
    let parts: Vec<&str> = key.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let last = i + 1 == parts.len();
        cur = match cur {
            Value::Object(map) => {
                if last {
                    map.insert(part.to_string(), value);
                    return Ok(());
                }
                map.entry(part.to_string()).or_insert_with(|| Value::Object(Default::default()))
            }
            Value::Array(items) => {
                let idx: usize = part
                    .parse()
                    .map_err(|_| field_error(key, format!("`{part}` is not an index into a list")))?;
                let len = items.len();
                let slot = items.get_mut(idx).ok_or_else(|| field_error(key, format!("index {idx} out of range ({len})")))?;
                if last {
                    *slot = value;
                    return Ok(());
                }
                slot
            }
            _ => return Err(field_error(key, format!("`{part}` is inside a non-object value"))),
        };
    }
    Err(field_error(key, "empty key"))
}

pub fn resolve_data_path(path: &Path) -> PathBuf {
    if path.is_absolute() {
        return path.to_path_buf();
    }
    match std::env::var_os(DATA_ROOT_ENV) {
        Some(root) => PathBuf::from(root).join(path),
        None => path.to_path_buf(),
    }
}
