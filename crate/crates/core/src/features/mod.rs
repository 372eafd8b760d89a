//! Corner detection, binary description and self-similarity pruning.

pub mod fast;
pub mod orb;
pub mod pattern;
pub mod prune;

pub use orb::{
    detect_and_describe, detect_and_describe_gray, hamming, BinaryDescriptor, Extraction,
    ExtractionWarning, FeatureParams, Keypoint,
};
pub use prune::prune_self_similar;
