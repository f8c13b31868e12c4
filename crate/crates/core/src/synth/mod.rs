//! Synthetic nested-blob scenes, augmentation and cross-validation splits.

mod augment;
mod dataset;
mod folds;
mod scene;

pub use augment::{augment, AugmentConfig, AugmentParams};
pub use dataset::{export_dataset, import_dataset, Manifest};
pub use folds::{make_folds, partition, Split};
pub use scene::{generate_layout, generate_scene, validate_nesting, Blob, Layout, Sample, SceneSpec};

/// Per-sample seed derived from a base seed and an index.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    // splitmix64 finalizer over the combined value
    let mut z = base ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
