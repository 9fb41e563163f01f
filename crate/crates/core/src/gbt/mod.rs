//! Gradient-boosted regression trees with native missing-value handling.

mod ensemble;
mod matrix;
mod params;
mod train;
mod tree;

pub use ensemble::{TrainingHistory, TreeEnsemble, MODEL_FORMAT, MODEL_VERSION};
pub use matrix::FeatureMatrix;
pub use params::{GbtParams, SplitMode};
pub use train::train;
pub use tree::{Tree, TreeNode};
