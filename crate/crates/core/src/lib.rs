//! LiDAR loop closure from bird's-eye-view density images.
//!
//! Scans are accumulated into local maps, leveled against the ground,
//! projected to density images and described with binary features. A
//! Hamming search tree proposes map pairs that RANSAC verifies in 2D; the
//! result is lifted back to a 3D constraint between map anchors.

pub mod bev;
pub mod closure;
pub mod config;
pub mod error;
pub mod eval;
pub mod features;
pub mod geometry;
pub mod ground;
pub mod hbst;
pub mod io;
pub mod local_map;
pub mod report;
pub mod session;
pub mod synth;
pub mod voxel;

pub use bev::{DensityImage, GrayImage};
pub use closure::{LoopClosure, RansacParams, ScanClosure};
pub use config::PipelineConfig;
pub use error::{Error, Result};
pub use features::{BinaryDescriptor, FeatureParams, Keypoint};
pub use geometry::{se2_to_se3, Point3, Se2, Se3};
pub use ground::{GroundParams, GroundSolveReport};
pub use hbst::Hbst;
pub use io::SessionManifest;
pub use local_map::{LocalMap, LocalMapParams, LocalMapper, PointCloud, ScanRecord};
pub use session::{Database, Metrics, RunOptions, SessionOutput};
