//! Inter-frame motion estimation and keyframe pruning.

pub mod field;
pub mod hashgrid;
pub mod mlp;
pub mod prune;

pub use self::field::{fit_motion, Chamfer, FitOptions, FitReport, MotionField, MotionObjective, SupervisedL2};
pub use self::hashgrid::{hash_encode, HashGridConfig, HashTables};
pub use self::prune::{prune_keyframe, prune_selection, round_removal, PruneReport, DEFAULT_PRUNE_RATIO, DEFAULT_TARGET_COUNT};
