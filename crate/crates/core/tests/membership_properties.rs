//! Membership features and similarity metrics.

use encodermi::data::{AugmentationPipeline, ImageTensor};
use encodermi::encoder::BlackBoxEncoder;
use encodermi::membership::{
    extract_membership_features, pair_count, pairwise_similarities, similarity, MembershipFeatureSet, SimilarityMetric,
};
use encodermi::Result;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Features derived from mean channel intensities, so views differ.
struct Intensity;

impl BlackBoxEncoder for Intensity {
    fn dim(&self) -> usize {
        4
    }
    fn resolution(&self) -> (usize, usize) {
        (8, 8)
    }
    fn digest(&self) -> String {
        "intensity".into()
    }
    fn query(&self, images: &[ImageTensor]) -> Result<Vec<Vec<f32>>> {
        Ok(images
            .iter()
            .map(|img| {
                let px = img.pixels();
                let mean = |c: usize| px.iter().skip(c).step_by(3).sum::<f32>() / (px.len() / 3) as f32;
                vec![mean(0), mean(1), mean(2), 0.25 + px[0]]
            })
            .collect())
    }
}

fn test_image() -> ImageTensor {
    let px = (0..8 * 8 * 3).map(|i| ((i * 37) % 101) as f32 / 100.0).collect();
    ImageTensor::new(8, 8, 3, px).unwrap()
}

#[test]
fn pair_count_law() {
    let pipe = AugmentationPipeline::contrastive_default();
    let img = test_image();
    for n in 2..=30 {
        let f = extract_membership_features(&img, &Intensity, &pipe, n, SimilarityMetric::Cosine, &mut ChaCha8Rng::seed_from_u64(n as u64))
            .unwrap();
        assert_eq!(f.len(), n * (n - 1) / 2);
        assert_eq!(pair_count(n), n * (n - 1) / 2);
    }
    assert_eq!(pair_count(10), 45);
}

#[test]
fn extraction_is_deterministic_in_rng_state() {
    let pipe = AugmentationPipeline::contrastive_default();
    let img = test_image();
    let run = || {
        extract_membership_features(&img, &Intensity, &pipe, 10, SimilarityMetric::PearsonCorrelation, &mut ChaCha8Rng::seed_from_u64(7))
            .unwrap()
    };
    assert_eq!(run(), run());
}

#[test]
fn metric_symmetry_on_random_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for _ in 0..10_000 {
        let d = rng.random_range(2..16);
        let a: Vec<f32> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let b: Vec<f32> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
        for m in SimilarityMetric::ALL {
            let ab = similarity(m, &a, &b).unwrap();
            assert_eq!(ab, similarity(m, &b, &a).unwrap());
            match m {
                SimilarityMetric::NegativeEuclidean => assert!(ab <= 0.0),
                _ => assert!((-1.0..=1.0).contains(&ab)),
            }
        }
    }
}

#[test]
fn scale_behaviour() {
    let a = [0.3f32, -1.2, 2.0];
    let b = [1.0f32, 0.5, -0.7];
    let scaled: Vec<f32> = a.iter().map(|v| v * 3.5).collect();
    let c1 = similarity(SimilarityMetric::Cosine, &a, &b).unwrap();
    let c2 = similarity(SimilarityMetric::Cosine, &scaled, &b).unwrap();
    assert!((c1 - c2).abs() < 1e-6);
    let e1 = similarity(SimilarityMetric::NegativeEuclidean, &a, &b).unwrap();
    let e2 = similarity(SimilarityMetric::NegativeEuclidean, &scaled, &b).unwrap();
    assert!((e1 - e2).abs() > 1e-3);
    assert_eq!(similarity(SimilarityMetric::NegativeEuclidean, &a, &a).unwrap(), 0.0);
}

fn sorted(mut v: Vec<f64>) -> Vec<f64> {
    v.sort_by(f64::total_cmp);
    v
}

proptest! {
    #[test]
    fn view_order_does_not_change_the_multiset(seed in 0u64..100_000, n in 2usize..12) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let views: Vec<Vec<f32>> = (0..n).map(|_| (0..6).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let mut shuffled = views.clone();
        shuffled.shuffle(&mut rng);
        for m in SimilarityMetric::ALL {
            let a = sorted(pairwise_similarities(m, &views).unwrap());
            let b = sorted(pairwise_similarities(m, &shuffled).unwrap());
            prop_assert_eq!(a.len(), pair_count(n));
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-12);
            }
            let set = MembershipFeatureSet::new(pairwise_similarities(m, &views).unwrap(), n, m).unwrap();
            prop_assert_eq!(set.len(), n * (n - 1) / 2);
        }
    }
}
