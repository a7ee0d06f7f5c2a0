//! Synthetic datasets and train-time augmentation.

mod augment;
mod synth;

pub use augment::{apply_augment, augment, AugmentConfig, AugmentOps};
pub use synth::{synth, synth_one, SynthConfig, SynthKind};

use crate::label::{Image, LabelMap};

/// An image with its instance labels, on the same frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image: Image,
    pub label: LabelMap,
}

/// Per-item seed derived from a run seed, so items can be produced
/// independently of each other.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    // splitmix64 finalizer over seed ⊕ index
    let mut z = seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
