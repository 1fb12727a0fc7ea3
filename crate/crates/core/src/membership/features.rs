use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::similarity::{pairwise_similarities, SimilarityMetric};
use crate::contrastive::load_split_images;
use crate::data::{AugmentationPipeline, Dataset, DatasetSplit, ImageTensor, SplitRole};
use crate::encoder::{embed_batch, BlackBoxEncoder};
use crate::error::{Error, Result};
use crate::rng::child_rng;

/// Images whose views are embedded in one encoder call.
const IMAGES_PER_QUERY: usize = 32;

pub const fn pair_count(n: usize) -> usize {
    n * n.saturating_sub(1) / 2
}

/// The pairwise similarity scores of `n` augmented views of one input.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MembershipFeatureSet {
    scores: Vec<f64>,
    n: usize,
    metric: SimilarityMetric,
}

impl MembershipFeatureSet {
    pub fn new(scores: Vec<f64>, n: usize, metric: SimilarityMetric) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidParameter(format!("need n >= 2 views, got {n}")));
        }
        if scores.len() != pair_count(n) {
            return Err(Error::DimensionMismatch { expected: pair_count(n), got: scores.len() });
        }
        Ok(Self { scores, n, metric })
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn metric(&self) -> SimilarityMetric {
        self.metric
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    /// Scores in descending order.
    pub fn ranked(&self) -> Vec<f64> {
        let mut s = self.scores.clone();
        s.sort_by(|a, b| b.total_cmp(a));
        s
    }

    pub fn average(&self) -> f64 {
        self.scores.iter().sum::<f64>() / self.scores.len() as f64
    }
}

/// What to extract: the query-time augmentation, view count and metric.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExtractionConfig {
    pub pipeline: AugmentationPipeline,
    pub n: usize,
    pub metric: SimilarityMetric,
}

impl Default for ExtractionConfig {
    fn default() -> Self {
        Self { pipeline: AugmentationPipeline::contrastive_default(), n: 10, metric: SimilarityMetric::Cosine }
    }
}

impl ExtractionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(Error::InvalidParameter(format!("extraction.n must be >= 2, got {}", self.n)));
        }
        Ok(())
    }
}

pub fn extract_membership_features<R: Rng + ?Sized>(
    x: &ImageTensor,
    enc: &dyn BlackBoxEncoder,
    pipeline: &AugmentationPipeline,
    n: usize,
    metric: SimilarityMetric,
    rng: &mut R,
) -> Result<MembershipFeatureSet> {
    if n < 2 {
        return Err(Error::InvalidParameter(format!("need n >= 2 views, got {n}")));
    }
    let views = pipeline.views(x, n, rng);
    let feats = embed_batch(enc, &views)?;
    MembershipFeatureSet::new(pairwise_similarities(metric, &feats)?, n, metric)
}

/// Random stream for the views of record `id` of `source`; independent of
/// which other records are extracted alongside it.
pub fn view_rng(seed: u64, source: &str, id: usize) -> crate::rng::StreamRng {
    child_rng(seed, &format!("views/{source}/{id}"))
}

/// Extracts features for many images, batching encoder queries. Image `i`
/// draws its views from `view_rng(seed, source, ids[i])`.
pub fn extract_many(
    images: &[ImageTensor],
    source: &str,
    ids: &[usize],
    enc: &dyn BlackBoxEncoder,
    cfg: &ExtractionConfig,
    seed: u64,
) -> Result<Vec<MembershipFeatureSet>> {
    cfg.validate()?;
    if images.len() != ids.len() {
        return Err(Error::DimensionMismatch { expected: ids.len(), got: images.len() });
    }
    let n = cfg.n;
    let chunks: Vec<Result<Vec<MembershipFeatureSet>>> = images
        .par_chunks(IMAGES_PER_QUERY)
        .zip(ids.par_chunks(IMAGES_PER_QUERY))
        .map(|(imgs, ids)| {
            let views: Vec<ImageTensor> = imgs
                .iter()
                .zip(ids)
                .flat_map(|(img, &id)| cfg.pipeline.views(img, n, &mut view_rng(seed, source, id)))
                .collect();
            let feats = embed_batch(enc, &views)?;
            feats
                .chunks(n)
                .map(|group| MembershipFeatureSet::new(pairwise_similarities(cfg.metric, group)?, n, cfg.metric))
                .collect()
        })
        .collect();
    Ok(chunks.into_iter().collect::<Result<Vec<_>>>()?.into_iter().flatten().collect())
}

/// Features for every record of `split`, resized to the encoder resolution.
pub fn extract_split(
    dataset: &dyn Dataset,
    split: &DatasetSplit,
    enc: &dyn BlackBoxEncoder,
    cfg: &ExtractionConfig,
    seed: u64,
) -> Result<Vec<MembershipFeatureSet>> {
    let images = load_split_images(dataset, split, enc.resolution())?;
    extract_many(&images, &split.source, &split.indices, enc, cfg, seed)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledMembershipRecord {
    pub features: MembershipFeatureSet,
    pub member: bool,
    pub source_id: usize,
}

impl LabeledMembershipRecord {
    pub fn label(&self) -> usize {
        usize::from(self.member)
    }
}

fn check_overlap(a: &DatasetSplit, b: &DatasetSplit) -> Result<()> {
    if a.source != b.source {
        return Ok(());
    }
    let set: std::collections::HashSet<usize> = a.indices.iter().copied().collect();
    let shared: Vec<usize> = b.indices.iter().copied().filter(|i| set.contains(i)).collect();
    match shared.first() {
        Some(&first) => Err(Error::SplitOverlap { count: shared.len(), first }),
        None => Ok(()),
    }
}

/// Pairs precomputed features with membership labels: every record of
/// `member_split` is labeled 1, every record of `nonmember_split` 0.
pub fn label_records(
    member_split: &DatasetSplit,
    member_features: Vec<MembershipFeatureSet>,
    nonmember_split: &DatasetSplit,
    nonmember_features: Vec<MembershipFeatureSet>,
) -> Result<Vec<LabeledMembershipRecord>> {
    check_overlap(member_split, nonmember_split)?;
    if member_features.len() != member_split.len() || nonmember_features.len() != nonmember_split.len() {
        return Err(Error::DimensionMismatch {
            expected: member_split.len() + nonmember_split.len(),
            got: member_features.len() + nonmember_features.len(),
        });
    }
    let members = member_split.indices.iter().zip(member_features).map(|(&id, f)| (id, f, true));
    let nonmembers = nonmember_split.indices.iter().zip(nonmember_features).map(|(&id, f)| (id, f, false));
    Ok(members
        .chain(nonmembers)
        .map(|(source_id, features, member)| LabeledMembershipRecord { features, member, source_id })
        .collect())
}

/// The inference training set: features from the shadow encoder for its
/// members (label 1) and non-members (label 0).
pub fn build_inference_training_set(
    shadow_enc: &dyn BlackBoxEncoder,
    dataset: &dyn Dataset,
    shadow_member: &DatasetSplit,
    shadow_nonmember: &DatasetSplit,
    cfg: &ExtractionConfig,
    seed: u64,
) -> Result<Vec<LabeledMembershipRecord>> {
    let nonmember_roles = [SplitRole::ShadowNonmember, SplitRole::EvalNonmember];
    if nonmember_roles.contains(&shadow_member.role) || !nonmember_roles.contains(&shadow_nonmember.role) {
        return Err(Error::InvalidParameter(format!(
            "expected member/non-member splits, got {} and {}",
            shadow_member.role.as_str(),
            shadow_nonmember.role.as_str()
        )));
    }
    check_overlap(shadow_member, shadow_nonmember)?;
    let m = extract_split(dataset, shadow_member, shadow_enc, cfg, seed)?;
    let nm = extract_split(dataset, shadow_nonmember, shadow_enc, cfg, seed)?;
    label_records(shadow_member, m, shadow_nonmember, nm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::InMemoryDataset;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Maps an image to a fixed vector chosen by its mean intensity bucket.
    struct Stub {
        outputs: Vec<Vec<f32>>,
    }

    impl BlackBoxEncoder for Stub {
        fn dim(&self) -> usize {
            self.outputs[0].len()
        }
        fn resolution(&self) -> (usize, usize) {
            (2, 2)
        }
        fn digest(&self) -> String {
            "stub".into()
        }
        fn query(&self, images: &[ImageTensor]) -> Result<Vec<Vec<f32>>> {
            Ok(images
                .iter()
                .map(|img| {
                    let k = (img.pixels()[0] * 10.0).round() as usize % self.outputs.len();
                    self.outputs[k].clone()
                })
                .collect())
        }
    }

    #[test]
    fn constant_encoder_gives_unit_scores() {
        let enc = Stub { outputs: vec![vec![0.3, -0.7, 2.0]] };
        let img = ImageTensor::filled(2, 2, [0.4; 3]);
        let pipe = AugmentationPipeline::contrastive_default();
        let f = extract_membership_features(&img, &enc, &pipe, 10, SimilarityMetric::Cosine, &mut ChaCha8Rng::seed_from_u64(0))
            .unwrap();
        assert_eq!(f.len(), 45);
        assert!(f.scores().iter().all(|&s| (s - 1.0).abs() < 1e-12));
    }

    #[test]
    fn three_view_hand_example() {
        let s = std::f32::consts::FRAC_1_SQRT_2;
        let feats = vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![s, s]];
        let mut got = pairwise_similarities(SimilarityMetric::Cosine, &feats).unwrap();
        got.sort_by(f64::total_cmp);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!(got[0].abs() < 1e-7 && (got[1] - h).abs() < 1e-7 && (got[2] - h).abs() < 1e-7);
    }

    #[test]
    fn rejects_small_n_and_bad_counts() {
        assert!(MembershipFeatureSet::new(vec![], 1, SimilarityMetric::Cosine).is_err());
        assert!(MembershipFeatureSet::new(vec![0.0; 5], 4, SimilarityMetric::Cosine).is_err());
        let f = MembershipFeatureSet::new(vec![0.1, 0.9, 0.5], 3, SimilarityMetric::Cosine).unwrap();
        assert_eq!(f.ranked(), vec![0.9, 0.5, 0.1]);
        assert!((f.average() - 0.5).abs() < 1e-12);
    }

    fn tiny_dataset() -> InMemoryDataset {
        let pixels: Vec<u8> = (0..8 * 12).map(|i| (i * 7 % 256) as u8).collect();
        InMemoryDataset::new("tiny", 2, 2, pixels, None).unwrap()
    }

    #[test]
    fn training_set_labels_and_overlap() {
        let ds = tiny_dataset();
        let enc = Stub { outputs: vec![vec![1.0, 0.0], vec![0.5, 0.5], vec![0.0, 1.0]] };
        let cfg = ExtractionConfig { n: 4, ..Default::default() };
        let m = DatasetSplit::new(SplitRole::ShadowMember, "tiny", vec![0, 1, 2]);
        let nm = DatasetSplit::new(SplitRole::ShadowNonmember, "tiny", vec![3, 4]);
        let recs = build_inference_training_set(&enc, &ds, &m, &nm, &cfg, 1).unwrap();
        assert_eq!(recs.len(), 5);
        assert_eq!(recs.iter().filter(|r| r.member).count(), 3);
        assert!(recs.iter().all(|r| r.features.len() == 6));
        let empty = DatasetSplit::new(SplitRole::ShadowNonmember, "tiny", vec![]);
        let recs = build_inference_training_set(&enc, &ds, &m, &empty, &cfg, 1).unwrap();
        assert!(recs.iter().all(|r| r.label() == 1));
        let clash = DatasetSplit::new(SplitRole::ShadowNonmember, "tiny", vec![2, 5]);
        assert!(matches!(
            build_inference_training_set(&enc, &ds, &m, &clash, &cfg, 1),
            Err(Error::SplitOverlap { count: 1, first: 2 })
        ));
    }

    #[test]
    fn batched_extraction_matches_single() {
        let ds = tiny_dataset();
        let enc = Stub { outputs: vec![vec![1.0, 0.0], vec![0.5, 0.5], vec![0.0, 1.0], vec![0.2, 0.9]] };
        let cfg = ExtractionConfig { n: 5, ..Default::default() };
        let split = DatasetSplit::new(SplitRole::EvalNonmember, "tiny", vec![5, 1, 7]);
        let batch = extract_split(&ds, &split, &enc, &cfg, 9).unwrap();
        for (k, &id) in split.indices.iter().enumerate() {
            let single = extract_membership_features(
                &ds.image(id).unwrap(),
                &enc,
                &cfg.pipeline,
                5,
                cfg.metric,
                &mut view_rng(9, "tiny", id),
            )
            .unwrap();
            assert_eq!(batch[k], single);
        }
    }
}
