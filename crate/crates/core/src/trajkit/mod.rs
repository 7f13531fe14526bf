//! Trajectory windows, clamping, keys and distances, normalization and the
//! dataset file format.

mod condition;
mod dataset;
mod distance;
mod norm;
mod window;

pub use condition::{clamp, clamp_in_place, clamp_slice, ConditionSpec, ConstraintMask, GoalSpec};
pub use dataset::{sliding_windows, DatasetManifest, WindowDataset, DATASET_MAGIC, DATASET_VERSION};
pub use distance::{euclidean, full_window_distance, key, key_distance};
pub use norm::{NormStats, STD_FLOOR};
pub use window::{TrajectoryWindow, WindowShape};
