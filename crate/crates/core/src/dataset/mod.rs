//! Data handling: PNG and manifest I/O, patch extraction, augmentation,
//! class weighting, dataset splits and synthetic phantoms.

pub mod augment;
pub mod io;
pub mod patches;
pub mod phantom;
pub mod split;
pub mod weights;

pub use augment::{augment_patch, Augmentation};
pub use io::{Cohort, LabeledImage, Manifest, ManifestEntry, RgbImage, CLASS_PALETTE};
pub use patches::{extract_patch, extract_patches, Padding, Patch, PATCH_CENTER, PATCH_SIZE};
pub use phantom::{generate_phantom, Phantom, PhantomSpec};
pub use split::{split_dataset, DatasetSplit};
pub use weights::{compute_class_weights, ClassWeights};
