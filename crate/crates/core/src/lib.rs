//! Vertebra instance segmentation by iterative patch traversal.
//!
//! The crate is organised bottom-up:
//!
//! * [`volgrid`]: dense 3D grids, resampling, patches, components, file I/O
//! * [`phantom`]: deterministic synthetic spines with ground truth
//! * [`sampler`]: training-patch generation and augmentation
//! * [`lossmath`]: the instance loss, its weight schedule and Dice
//! * [`segbackend`]: the segmenter trait, the analytic oracle and the
//!   external-process backend with its wire protocol
//! * [`traversal`]: the iterative instance inference engine
//! * [`labeling`]: level likelihoods, maximum-likelihood ordering, L1 pick
//! * [`metrics`]: per-case evaluation and summary reports
//!
//! Conventions shared by every module: voxel data is x-fastest, slice `z = 0`
//! is the most cranial one, and the world coordinate of voxel index `i` along
//! an axis is `(i + 0.5) * spacing`.

pub mod error;
pub mod labeling;
pub mod lossmath;
pub mod metrics;
pub mod phantom;
pub mod sampler;
pub mod segbackend;
pub mod traversal;
pub mod volgrid;

pub use error::{Error, Result};
pub use labeling::{LevelLikelihood, OrderingResult};
pub use phantom::{PhantomSpec, SpineGroundTruth};
pub use segbackend::{BackendError, Mode, SegmentRequest, SegmentResponse, Segmenter};
pub use traversal::{TraversalConfig, TraversalResult};
pub use volgrid::{Dims, FloatVolume, Grid, LabelMap, Patch, Point3, Spacing, Volume};

/// Number of vertebral levels the ordering works with (C1 = 1 ... L5 = 24).
pub const NUM_LEVELS: usize = 24;

/// Level index of the first lumbar vertebra.
pub const L1_LEVEL: u8 = 20;
