//! Images, datasets, splits and augmentation.

pub mod augment;
pub mod concat;
pub mod dataset;
pub mod image;
pub mod loaders;
pub mod splits;
pub mod synthetic;

pub use augment::{augment, AugmentationKind, AugmentationOp, AugmentationPipeline};
pub use concat::make_concat_nonmembers;
pub use dataset::{Dataset, InMemoryDataset};
pub use image::ImageTensor;
pub use splits::{make_splits, parse_sizes, validate_splits, DatasetSplit, SplitManifest, SplitRole};
pub use synthetic::{synthetic_dataset, SyntheticFamily};
