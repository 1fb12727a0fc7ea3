//! Baseline feature shapes, PGD budget, patch similarity, downstream checks.

use encodermi::baselines::{
    baseline_features, patch_similarity, pgd_targeted, train_downstream, AdvExampleConfig, BaselineAttack,
    BaselineId, BaselineInputs, BaselineSettings, BaselineSide, DownstreamConfig, PatchGrid,
};
use encodermi::classifiers::TrainConfig;
use encodermi::contrastive::{Architecture, EncoderModel, EncoderSpec};
use encodermi::data::{synthetic_dataset, Dataset, DatasetSplit, ImageTensor, SplitRole, SyntheticFamily};
use encodermi::encoder::{BlackBoxEncoder, LocalEncoder};
use encodermi::rng::child_rng;
use encodermi::{Error, Result};

const SIDE: usize = 12;

fn model(seed: u64) -> EncoderModel {
    let spec = EncoderSpec { arch: Architecture::SmallResnet, width: 4, dim: 16, resolution: (SIDE, SIDE) };
    EncoderModel::new(spec, &mut child_rng(seed, "test/model")).unwrap()
}

fn small_downstream() -> DownstreamConfig {
    DownstreamConfig { hidden: vec![16], train: TrainConfig { lr: 1e-2, epochs: 20, batch_size: 16, weight_decay: 0.0 } }
}

struct Fixture {
    model: EncoderModel,
    enc: LocalEncoder,
    data: encodermi::data::InMemoryDataset,
}

fn fixture() -> Fixture {
    let m = model(1);
    let data = synthetic_dataset(SyntheticFamily::Shapes, 60, SIDE, 4).unwrap();
    Fixture { enc: LocalEncoder::new(m.clone()), model: m, data }
}

#[test]
fn feature_shapes_per_baseline() {
    let fx = fixture();
    let train = DatasetSplit::new(SplitRole::DownstreamTrain, "shapes", (0..40).collect());
    let test = DatasetSplit::new(SplitRole::DownstreamTest, "shapes", vec![]);
    let head = train_downstream(&fx.enc, &fx.data, &train, &test, 10, &small_downstream(), 2).unwrap();
    assert_eq!(head.test_accuracy, None);
    let ids: Vec<usize> = (40..46).collect();
    let images = fx.data.images(&ids).unwrap();
    let labels = fx.data.labels(&ids).unwrap();
    let side = BaselineSide { encoder: &fx.enc, model: Some(&fx.model), downstream: Some(&head) };
    let inputs = BaselineInputs { source: "shapes", ids: &ids, images: &images, labels: Some(&labels) };
    let settings = BaselineSettings {
        e: 4,
        adv: AdvExampleConfig { iterations: 2, ..AdvExampleConfig::default() },
        ..BaselineSettings::default()
    };
    let widths = [(BaselineId::A, 10), (BaselineId::B, 5), (BaselineId::C, 100), (BaselineId::D, 16), (BaselineId::E, 1)];
    for (id, width) in widths {
        let f = baseline_features(id, &side, &inputs, &settings, 9).unwrap();
        assert_eq!(f.len(), ids.len(), "{id}");
        assert!(f.iter().all(|r| r.len() == width), "{id}: expected width {width}");
    }
    let a = baseline_features(BaselineId::A, &side, &inputs, &settings, 9).unwrap();
    for row in &a {
        assert!(row.windows(2).all(|w| w[0] >= w[1]));
        assert!((row.iter().sum::<f32>() - 1.0).abs() < 1e-4);
    }
    let b = baseline_features(BaselineId::B, &side, &inputs, &settings, 9).unwrap();
    assert!(b.iter().flatten().all(|&v| v == 0.0 || v == 1.0));
    assert_eq!(b, baseline_features(BaselineId::B, &side, &inputs, &settings, 9).unwrap());
}

#[test]
fn missing_assets_are_reported() {
    let fx = fixture();
    let ids = [0usize, 1];
    let images = fx.data.images(&ids).unwrap();
    let side = BaselineSide { encoder: &fx.enc, model: None, downstream: None };
    let inputs = BaselineInputs { source: "shapes", ids: &ids, images: &images, labels: None };
    let settings = BaselineSettings::default();
    for id in [BaselineId::A, BaselineId::B, BaselineId::C] {
        assert!(matches!(baseline_features(id, &side, &inputs, &settings, 0), Err(Error::MissingAsset(_))), "{id}");
    }
    assert!(baseline_features(BaselineId::D, &side, &inputs, &settings, 0).is_ok());
}

#[test]
fn pgd_respects_budget_and_box() {
    let fx = fixture();
    let train = DatasetSplit::new(SplitRole::DownstreamTrain, "shapes", (0..40).collect());
    let head = train_downstream(&fx.enc, &fx.data, &train, &train.head(0), 10, &small_downstream(), 2).unwrap();
    let images = fx.data.images(&[50, 51, 52]).unwrap();
    let cfg = AdvExampleConfig { epsilon: 8.0 / 255.0, step: None, iterations: 5, random_start: true };
    let adv = pgd_targeted(&fx.model, &head.head, &images, &[3, 3, 3], &cfg, &mut child_rng(1, "pgd")).unwrap();
    for (a, x) in adv.iter().zip(&images) {
        assert_eq!(a.dims(), x.dims());
        for (&p, &o) in a.pixels().iter().zip(x.pixels()) {
            assert!((p - o).abs() <= cfg.epsilon + 1e-6);
            assert!((0.0..=1.0).contains(&p));
        }
    }
    let zero = AdvExampleConfig { epsilon: 0.0, ..cfg };
    let same = pgd_targeted(&fx.model, &head.head, &images, &[1, 1, 1], &zero, &mut child_rng(1, "pgd")).unwrap();
    for (a, x) in same.iter().zip(&images) {
        for (&p, &o) in a.pixels().iter().zip(x.pixels()) {
            assert!((p - o).abs() < 1e-6);
        }
    }
}

#[test]
fn pgd_moves_towards_target() {
    let fx = fixture();
    let train = DatasetSplit::new(SplitRole::DownstreamTrain, "shapes", (0..40).collect());
    let head = train_downstream(&fx.enc, &fx.data, &train, &train.head(0), 10, &small_downstream(), 2).unwrap();
    let images = fx.data.images(&(40..50).collect::<Vec<_>>()).unwrap();
    let target = vec![7; images.len()];
    let cfg = AdvExampleConfig { epsilon: 0.1, step: Some(0.01), iterations: 20, random_start: false };
    let adv = pgd_targeted(&fx.model, &head.head, &images, &target, &cfg, &mut child_rng(2, "pgd")).unwrap();
    let before: f32 = head.head.probabilities(&fx.model.embed(&images).unwrap()).unwrap().iter().map(|p| p[7]).sum();
    let after: f32 = head.head.probabilities(&fx.model.embed(&adv).unwrap()).unwrap().iter().map(|p| p[7]).sum();
    assert!(after > before, "{after} <= {before}");
}

/// Encoder returning the mean colour of its input, so uniform images give
/// identical features for every patch.
struct MeanColour;

impl BlackBoxEncoder for MeanColour {
    fn dim(&self) -> usize {
        3
    }
    fn resolution(&self) -> (usize, usize) {
        (4, 4)
    }
    fn digest(&self) -> String {
        "mean-colour".into()
    }
    fn query(&self, images: &[ImageTensor]) -> Result<Vec<Vec<f32>>> {
        Ok(images
            .iter()
            .map(|img| {
                let (h, w, _) = img.dims();
                (0..3).map(|c| (0..h * w).map(|i| img.get(i / w, i % w, c)).sum::<f32>() / (h * w) as f32).collect()
            })
            .collect())
    }
}

#[test]
fn uniform_image_has_unit_patch_similarity() {
    let img = ImageTensor::filled(12, 12, [0.2, 0.5, 0.9]);
    for grid in ["3x3", "3x1", "1x3", "2x4"] {
        let g: PatchGrid = grid.parse().unwrap();
        let s = patch_similarity(&MeanColour, &img, g).unwrap();
        assert!((s - 1.0).abs() < 1e-6, "{grid}: {s}");
    }
}

#[test]
fn patch_similarity_averages_all_non_centre_patches() {
    // Left third red, rest blue: centre (blue) matches 5 of the 8 others.
    let mut px = Vec::new();
    for _y in 0..12 {
        for x in 0..12 {
            px.extend(if x < 4 { [1.0, 0.0, 0.0] } else { [0.0, 0.0, 1.0] });
        }
    }
    let img = ImageTensor::new(12, 12, 3, px).unwrap();
    let s = patch_similarity(&MeanColour, &img, PatchGrid::new(3, 3)).unwrap();
    assert!((s - 5.0 / 8.0).abs() < 1e-9, "{s}");
}

#[test]
fn downstream_rejects_bad_labels_and_single_class() {
    let fx = fixture();
    let train = DatasetSplit::new(SplitRole::DownstreamTrain, "shapes", (0..40).collect());
    let err = train_downstream(&fx.enc, &fx.data, &train, &train.head(0), 5, &small_downstream(), 0).unwrap_err();
    assert!(matches!(err, Error::LabelOutOfRange { classes: 5, .. }));
    let one = DatasetSplit::new(SplitRole::DownstreamTrain, "shapes", vec![0, 10, 20]);
    let err = train_downstream(&fx.enc, &fx.data, &one, &one.head(0), 10, &small_downstream(), 0).unwrap_err();
    assert!(matches!(err, Error::SingleClass(0)));
}

#[test]
fn downstream_refuses_other_encoder() {
    let fx = fixture();
    let train = DatasetSplit::new(SplitRole::DownstreamTrain, "shapes", (0..40).collect());
    let head = train_downstream(&fx.enc, &fx.data, &train, &train.head(0), 10, &small_downstream(), 2).unwrap();
    let other = LocalEncoder::new(model(2));
    let imgs = fx.data.images(&[0]).unwrap();
    assert!(matches!(head.confidences(&other, &imgs), Err(Error::ConfigMismatch(_))));
}

#[test]
fn threshold_baseline_fits_and_serialises() {
    let members: Vec<Vec<f32>> = (0..20).map(|i| vec![0.8 + i as f32 * 0.001]).collect();
    let non: Vec<Vec<f32>> = (0..20).map(|i| vec![0.5 + i as f32 * 0.001]).collect();
    let attack = BaselineAttack::fit(BaselineId::E, &members, &non, &BaselineSettings::default(), 0).unwrap();
    assert_eq!(attack.predict(&members).unwrap(), vec![true; 20]);
    assert_eq!(attack.predict(&non).unwrap(), vec![false; 20]);
    let back: BaselineAttack = serde_json::from_str(&serde_json::to_string(&attack).unwrap()).unwrap();
    assert_eq!(back.predict(&non).unwrap(), vec![false; 20]);
}
