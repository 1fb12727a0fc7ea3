//! Inference classifiers: threshold optimality, invariances, separability.

use encodermi::classifiers::{
    candidate_thresholds, fit_threshold, infer_membership, threshold_accuracy, train_set_classifier,
    train_vector_classifier, InferenceClassifier, SetConfig, ThresholdClassifier, TrainConfig, VectorConfig,
};
use encodermi::data::{AugmentationPipeline, ImageTensor};
use encodermi::encoder::BlackBoxEncoder;
use encodermi::membership::{LabeledMembershipRecord, MembershipFeatureSet, SimilarityMetric};
use encodermi::{Error, Result};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn record(scores: Vec<f64>, n: usize, member: bool, id: usize) -> LabeledMembershipRecord {
    LabeledMembershipRecord {
        features: MembershipFeatureSet::new(scores, n, SimilarityMetric::Cosine).unwrap(),
        member,
        source_id: id,
    }
}

fn noisy_records(rng: &mut ChaCha8Rng, per_class: usize, n: usize, centre: (f64, f64), spread: f64) -> Vec<LabeledMembershipRecord> {
    let m = n * (n - 1) / 2;
    (0..2 * per_class)
        .map(|i| {
            let member = i % 2 == 0;
            let c = if member { centre.0 } else { centre.1 };
            let scores = (0..m).map(|_| c + rng.random_range(-spread..spread)).collect();
            record(scores, n, member, i)
        })
        .collect()
}

#[test]
fn threshold_matches_exhaustive_scan() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..100 {
        let mut averages = Vec::new();
        let mut members = Vec::new();
        for k in 0..400 {
            let member = k < 200;
            // Coarse grid so ties occur.
            let base = if member { 0.55 } else { 0.45 };
            averages.push(((base + rng.random_range(-0.3..0.3)) * 50.0f64).round() / 50.0);
            members.push(member);
        }
        let records: Vec<_> = averages.iter().zip(&members).enumerate().map(|(i, (&a, &m))| record(vec![a], 2, m, i)).collect();
        let fitted = fit_threshold(&records).unwrap();
        let best = candidate_thresholds(&averages)
            .into_iter()
            .map(|t| threshold_accuracy(&averages, &members, t))
            .fold(0.0, f64::max);
        assert_eq!(fitted.fit_accuracy, best);
        assert_eq!(threshold_accuracy(&averages, &members, fitted.theta), best);
        let smallest = candidate_thresholds(&averages)
            .into_iter()
            .find(|&t| threshold_accuracy(&averages, &members, t) == best)
            .unwrap();
        assert_eq!(fitted.theta, smallest);
    }
}

#[test]
fn threshold_examples() {
    let recs = vec![
        record(vec![0.8], 2, true, 0),
        record(vec![0.9], 2, true, 1),
        record(vec![0.1], 2, false, 2),
        record(vec![0.2], 2, false, 3),
    ];
    let t = fit_threshold(&recs).unwrap();
    assert!(t.theta > 0.2 && t.theta < 0.8 && t.fit_accuracy == 1.0);
    let tie = vec![record(vec![0.5], 2, true, 0), record(vec![0.5], 2, false, 1)];
    assert_eq!(fit_threshold(&tie).unwrap().fit_accuracy, 0.5);
    assert!(matches!(fit_threshold(&recs[..2]), Err(Error::SingleClass(1))));
}

fn fast_vector() -> VectorConfig {
    VectorConfig { train: TrainConfig { epochs: 60, ..Default::default() }, ..Default::default() }
}

fn fast_set() -> SetConfig {
    SetConfig { train: TrainConfig { epochs: 60, ..Default::default() }, ..Default::default() }
}

#[test]
fn separable_records_are_learned() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let recs = noisy_records(&mut rng, 60, 10, (0.9, 0.1), 0.05);
    let v: InferenceClassifier = train_vector_classifier(&recs, &fast_vector(), 1).unwrap().into();
    let s: InferenceClassifier = train_set_classifier(&recs, &fast_set(), 1).unwrap().into();
    let feats: Vec<MembershipFeatureSet> = recs.iter().map(|r| r.features.clone()).collect();
    for clf in [v, s] {
        let pred = clf.predict(&feats).unwrap();
        let acc = pred.iter().zip(&recs).filter(|(p, r)| **p == r.member).count() as f64 / recs.len() as f64;
        assert!(acc >= 0.99, "{:?} accuracy {acc}", clf.kind());
    }
}

#[test]
fn conflicting_duplicates_cannot_both_be_right() {
    let recs = vec![record(vec![0.4, 0.6, 0.5], 3, true, 0), record(vec![0.4, 0.6, 0.5], 3, false, 1)];
    let v: InferenceClassifier = train_vector_classifier(&recs, &fast_vector(), 2).unwrap().into();
    let feats: Vec<_> = recs.iter().map(|r| r.features.clone()).collect();
    let pred = v.predict(&feats).unwrap();
    assert_eq!(pred[0], pred[1]);
}

#[test]
fn rejects_mixed_configurations_and_single_class() {
    let mixed = vec![record(vec![0.1], 2, true, 0), record(vec![0.1, 0.2, 0.3], 3, false, 1)];
    assert!(matches!(train_vector_classifier(&mixed, &fast_vector(), 0), Err(Error::ConfigMismatch(_))));
    let single = vec![record(vec![0.1], 2, false, 0), record(vec![0.3], 2, false, 1)];
    assert!(matches!(train_set_classifier(&single, &fast_set(), 0), Err(Error::SingleClass(0))));
}

#[test]
fn training_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let recs = noisy_records(&mut rng, 20, 5, (0.6, 0.4), 0.3);
    let a = serde_json::to_string(&train_vector_classifier(&recs, &fast_vector(), 5).unwrap()).unwrap();
    let b = serde_json::to_string(&train_vector_classifier(&recs, &fast_vector(), 5).unwrap()).unwrap();
    assert_eq!(a, b);
    let a = serde_json::to_string(&train_set_classifier(&recs, &fast_set(), 5).unwrap()).unwrap();
    let b = serde_json::to_string(&train_set_classifier(&recs, &fast_set(), 5).unwrap()).unwrap();
    assert_eq!(a, b);
}

#[test]
fn checkpoints_roundtrip() {
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    let recs = noisy_records(&mut rng, 10, 4, (0.7, 0.3), 0.2);
    let feats: Vec<_> = recs.iter().map(|r| r.features.clone()).collect();
    let dir = tempfile::tempdir().unwrap();
    let all: Vec<InferenceClassifier> = vec![
        train_vector_classifier(&recs, &fast_vector(), 1).unwrap().into(),
        train_set_classifier(&recs, &fast_set(), 1).unwrap().into(),
        fit_threshold(&recs).unwrap().into(),
        ThresholdClassifier { n: 4, metric: SimilarityMetric::Cosine, theta: f64::NEG_INFINITY, fit_accuracy: 0.5 }.into(),
    ];
    for (i, clf) in all.iter().enumerate() {
        let path = dir.path().join(format!("c{i}.json"));
        clf.save(&path).unwrap();
        let back = InferenceClassifier::load(&path).unwrap();
        assert_eq!(back.kind(), clf.kind());
        assert_eq!(back.member_scores(&feats).unwrap(), clf.member_scores(&feats).unwrap());
    }
}

/// Every view maps to the same vector.
struct Constant;

/// Views map to mutually orthogonal one-hot vectors, cycling through `dim`.
struct Orthogonal {
    counter: std::sync::atomic::AtomicUsize,
}

impl BlackBoxEncoder for Constant {
    fn dim(&self) -> usize {
        3
    }
    fn resolution(&self) -> (usize, usize) {
        (8, 8)
    }
    fn digest(&self) -> String {
        "constant".into()
    }
    fn query(&self, images: &[ImageTensor]) -> Result<Vec<Vec<f32>>> {
        Ok(vec![vec![1.0, 2.0, 3.0]; images.len()])
    }
}

impl BlackBoxEncoder for Orthogonal {
    fn dim(&self) -> usize {
        64
    }
    fn resolution(&self) -> (usize, usize) {
        (8, 8)
    }
    fn digest(&self) -> String {
        "orthogonal".into()
    }
    fn query(&self, images: &[ImageTensor]) -> Result<Vec<Vec<f32>>> {
        Ok(images
            .iter()
            .map(|_| {
                let k = self.counter.fetch_add(1, std::sync::atomic::Ordering::SeqCst) % 64;
                let mut v = vec![0.0; 64];
                v[k] = 1.0;
                v
            })
            .collect())
    }
}

#[test]
fn threshold_inference_with_stub_encoders() {
    let clf: InferenceClassifier =
        ThresholdClassifier { n: 10, metric: SimilarityMetric::Cosine, theta: 0.5, fit_accuracy: 1.0 }.into();
    let img = ImageTensor::filled(8, 8, [0.2, 0.4, 0.6]);
    let pipe = AugmentationPipeline::contrastive_default();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert!(infer_membership(&img, &Constant, &clf, &pipe, 10, SimilarityMetric::Cosine, &mut rng).unwrap());
    let orth = Orthogonal { counter: Default::default() };
    assert!(!infer_membership(&img, &orth, &clf, &pipe, 10, SimilarityMetric::Cosine, &mut rng).unwrap());
    assert!(matches!(
        infer_membership(&img, &Constant, &clf, &pipe, 8, SimilarityMetric::Cosine, &mut rng),
        Err(Error::ConfigMismatch(_))
    ));
    assert!(matches!(
        infer_membership(&img, &Constant, &clf, &pipe, 10, SimilarityMetric::NegativeEuclidean, &mut rng),
        Err(Error::ConfigMismatch(_))
    ));
}

fn trained_pair() -> (InferenceClassifier, InferenceClassifier) {
    let mut rng = ChaCha8Rng::seed_from_u64(25);
    let recs = noisy_records(&mut rng, 15, 6, (0.6, 0.4), 0.3);
    (
        train_vector_classifier(&recs, &fast_vector(), 3).unwrap().into(),
        train_set_classifier(&recs, &fast_set(), 3).unwrap().into(),
    )
}

fn vector_logits(clf: &InferenceClassifier, f: &MembershipFeatureSet) -> Vec<f32> {
    match clf {
        InferenceClassifier::Vector(v) => v.logits(std::slice::from_ref(f)).unwrap().remove(0),
        _ => unreachable!(),
    }
}

fn set_logits(clf: &InferenceClassifier, f: &MembershipFeatureSet) -> Vec<f32> {
    match clf {
        InferenceClassifier::Set(s) => s.logits(std::slice::from_ref(f)).remove(0),
        _ => unreachable!(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn score_order_does_not_change_logits(seed in 0u64..1_000_000) {
        static PAIR: std::sync::OnceLock<(InferenceClassifier, InferenceClassifier)> = std::sync::OnceLock::new();
        let (v, s) = PAIR.get_or_init(trained_pair);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scores: Vec<f64> = (0..15).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut shuffled = scores.clone();
        shuffled.shuffle(&mut rng);
        let a = MembershipFeatureSet::new(scores, 6, SimilarityMetric::Cosine).unwrap();
        let b = MembershipFeatureSet::new(shuffled, 6, SimilarityMetric::Cosine).unwrap();
        prop_assert_eq!(vector_logits(v, &a), vector_logits(v, &b));
        for (x, y) in set_logits(s, &a).iter().zip(set_logits(s, &b)) {
            prop_assert!((x - y).abs() <= 1e-5);
        }
    }
}
