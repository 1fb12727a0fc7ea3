//! Membership features: pairwise similarities between the encoder outputs
//! of several augmented views of one input.

mod cache;
mod features;
mod similarity;

pub use cache::{CacheEntryMeta, FeatureCache};
pub use features::{
    build_inference_training_set, extract_many, extract_membership_features, extract_split, label_records, pair_count,
    view_rng, ExtractionConfig, LabeledMembershipRecord, MembershipFeatureSet,
};
pub use similarity::{pairwise_similarities, similarity, SimilarityMetric};
