//! Ready-made manifests.

use std::collections::BTreeMap;
use std::path::PathBuf;

use encodermi::baselines::{AdvExampleConfig, BaselineSettings, DownstreamConfig};
use encodermi::classifiers::{ClassifierKind, SetConfig, TrainConfig, VectorConfig};
use encodermi::contrastive::{Algorithm, Architecture, EncoderSpec, MocoConfig, PretrainConfig, SimclrConfig};
use encodermi::data::{AugmentationKind, AugmentationPipeline, SyntheticFamily};
use encodermi::eval::BackgroundKnowledge;
use encodermi::{Error, Result};

use crate::manifest::{
    BaselineSection, ClassifierSection, DatasetSource, ExperimentManifest, ExtractionSection, Knowledge, SplitSection,
    StudySection, SubsetName, TargetSection, SCHEMA_VERSION,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    /// Synthetic data, single CPU, minutes.
    Desk,
    /// Seconds; for smoke and determinism checks.
    Tiny,
    /// CIFAR10 target with an STL10 shadow pool at the original scale.
    Full,
}

impl Preset {
    pub const ALL: [Self; 3] = [Self::Desk, Self::Tiny, Self::Full];

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Self::Desk),
            "tiny" => Ok(Self::Tiny),
            "full" => Ok(Self::Full),
            other => Err(Error::InvalidParameter(format!("unknown preset `{other}` (desk, tiny, full)"))),
        }
    }

    pub fn manifest(self, name: &str) -> ExperimentManifest {
        match self {
            Self::Desk => desk(name),
            Self::Tiny => tiny(name),
            Self::Full => full(name),
        }
    }
}

fn sizes(pairs: &[(&str, usize)]) -> BTreeMap<String, usize> {
    pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

fn crop_flip() -> AugmentationPipeline {
    AugmentationPipeline::from_kinds(&[AugmentationKind::RandomResizedCrop, AugmentationKind::RandomHorizontalFlip])
}

fn desk(name: &str) -> ExperimentManifest {
    let datasets = BTreeMap::from([
        ("shapes".to_string(), DatasetSource::Synthetic { family: SyntheticFamily::Shapes, len: 1000, side: 16, seed: 1 }),
        ("textures".to_string(), DatasetSource::Synthetic { family: SyntheticFamily::Textures, len: 200, side: 16, seed: 2 }),
    ]);
    let pretrain = PretrainConfig {
        encoder: EncoderSpec { arch: Architecture::SmallResnet, width: 16, dim: 128, resolution: (16, 16) },
        algorithm: Algorithm::Moco,
        epochs: 400,
        batch_size: 25,
        base_lr: 1.0,
        checkpoint_every: 50,
        moco: MocoConfig { queue_size: 32, momentum: 0.99, tau: 0.2 },
        simclr: SimclrConfig::default(),
        augmentation: crop_flip(),
        ..PretrainConfig::default()
    };
    ExperimentManifest {
        schema_version: SCHEMA_VERSION,
        name: name.to_string(),
        seed: 7,
        output_dir: PathBuf::from("runs"),
        datasets,
        target: TargetSection { dataset: "shapes".into(), alternate_dataset: "textures".into(), pretrain, classes: 10 },
        splits: SplitSection {
            target: sizes(&[
                ("pretrain-member", 50),
                ("eval-member", 50),
                ("eval-nonmember", 50),
                ("shadow-member", 50),
                ("shadow-nonmember", 50),
                ("downstream-train", 500),
                ("downstream-test", 200),
            ]),
            alternate: sizes(&[("shadow-member", 50), ("shadow-nonmember", 50)]),
        },
        knowledge: vec![Knowledge(BackgroundKnowledge::FULL), Knowledge(BackgroundKnowledge::NONE)],
        extraction: ExtractionSection::default(),
        classifiers: ClassifierSection::default(),
        baselines: BaselineSection {
            settings: BaselineSettings { pipeline: crop_flip(), ..BaselineSettings::default() },
            ..BaselineSection::default()
        },
        trials: 1,
        studies: StudySection::default(),
    }
}

fn tiny(name: &str) -> ExperimentManifest {
    let mut m = desk(name);
    m.datasets = BTreeMap::from([
        ("shapes".to_string(), DatasetSource::Synthetic { family: SyntheticFamily::Shapes, len: 120, side: 8, seed: 1 }),
        ("textures".to_string(), DatasetSource::Synthetic { family: SyntheticFamily::Textures, len: 40, side: 8, seed: 2 }),
    ]);
    m.target.pretrain = PretrainConfig {
        encoder: EncoderSpec { arch: Architecture::SmallResnet, width: 4, dim: 16, resolution: (8, 8) },
        epochs: 4,
        batch_size: 10,
        checkpoint_every: 2,
        moco: MocoConfig { queue_size: 20, momentum: 0.99, tau: 0.2 },
        simclr: SimclrConfig { tau: 0.5, proj_hidden: 16, proj_dim: 8 },
        ..m.target.pretrain
    };
    m.splits = SplitSection {
        target: sizes(&[
            ("pretrain-member", 10),
            ("eval-member", 10),
            ("eval-nonmember", 10),
            ("shadow-member", 10),
            ("shadow-nonmember", 10),
            ("downstream-train", 30),
            ("downstream-test", 20),
        ]),
        alternate: sizes(&[("shadow-member", 10), ("shadow-nonmember", 10)]),
    };
    m.knowledge = vec![Knowledge(BackgroundKnowledge::FULL), Knowledge(BackgroundKnowledge::NONE)];
    m.extraction.n = 4;
    let quick = TrainConfig { lr: 1e-3, epochs: 5, batch_size: 8, weight_decay: 0.0 };
    m.classifiers = ClassifierSection {
        methods: ClassifierKind::ALL.to_vec(),
        vector: VectorConfig { hidden: vec![16, 16], train: quick.clone() },
        set: SetConfig { train: quick.clone(), ..SetConfig::default() },
    };
    m.baselines.settings = BaselineSettings {
        e: 3,
        pipeline: crop_flip(),
        adv: AdvExampleConfig { iterations: 2, ..AdvExampleConfig::default() },
        classifier: VectorConfig { hidden: vec![16], train: quick.clone() },
        ..BaselineSettings::default()
    };
    m.baselines.downstream = DownstreamConfig { hidden: vec![16], train: quick };
    m.trials = 2;
    m.studies = StudySection { early_stopping_epochs: Vec::new(), pr_grid: 11 };
    m
}

fn full(name: &str) -> ExperimentManifest {
    let mut m = desk(name);
    m.datasets = BTreeMap::from([
        ("cifar10".to_string(), DatasetSource::Cifar10 { path: "cifar-10-batches-bin".into(), subset: SubsetName::Train, side: 32 }),
        ("stl10".to_string(), DatasetSource::Stl10 { path: "stl10_binary".into(), subset: SubsetName::Unlabeled, side: 32 }),
    ]);
    m.target = TargetSection {
        dataset: "cifar10".into(),
        alternate_dataset: "stl10".into(),
        pretrain: PretrainConfig {
            encoder: EncoderSpec { arch: Architecture::SmallResnet, width: 16, dim: 128, resolution: (32, 32) },
            epochs: 1600,
            checkpoint_every: 200,
            ..PretrainConfig::default()
        },
        classes: 10,
    };
    m.splits = SplitSection {
        target: sizes(&[
            ("pretrain-member", 10_000),
            ("eval-member", 10_000),
            ("eval-nonmember", 10_000),
            ("shadow-member", 10_000),
            ("shadow-nonmember", 10_000),
            ("downstream-train", 10_000),
        ]),
        alternate: sizes(&[("shadow-member", 10_000), ("shadow-nonmember", 10_000)]),
    };
    m.knowledge = BackgroundKnowledge::all().into_iter().map(Knowledge).collect();
    m.baselines.settings = BaselineSettings::default();
    m.trials = 5;
    m
}
