//! Heatmap-regression training with fixed, learned isotropic and learned
//! anisotropic target heatmaps.

pub mod augment;
pub mod checkpoint;
pub mod loss;
pub mod predictor;
pub mod train;

pub use augment::AugmentConfig;
pub use predictor::{DropoutMode, PredictorSpec, ReferencePredictor};
pub use train::{predict, train, PredictorKind, TargetMode, TrainConfig, TrainedModel};
