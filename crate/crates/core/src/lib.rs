//! Landmark localization by heatmap regression with learned anisotropic
//! Gaussian targets, plus the surrounding uncertainty and evaluation tools.
//!
//! - [`gaussmath`]: covariance decomposition, heatmap rendering, gradients, sampling.
//! - [`heatmapfit`]: robust Levenberg–Marquardt fit of a Gaussian to a predicted heatmap.
//! - [`trainer`]: reference predictor, target losses, augmentation, training, checkpoints.
//! - [`uncertainty`]: sample-/dataset-based uncertainty and the MC-dropout baselines.
//! - [`metrics`]: point error, SDR, distribution statistics, inter-observer fitting.
//! - [`clinical`]: measurement expressions, thresholds, Monte-Carlo classification.
//! - [`synth`]: synthetic images with controlled anisotropic annotation noise.
//! - [`io`]: on-disk dataset, annotation and image formats.
//! - [`plot`]: static SVG figures.

pub mod clinical;
pub mod config;
pub mod dataset;
pub mod error;
pub mod gaussmath;
pub mod heatmapfit;
pub mod io;
pub mod metrics;
pub mod plot;
pub mod rng;
pub mod synth;
pub mod trainer;
pub mod uncertainty;

pub use error::{Error, Result};
pub use gaussmath::{
    AnisotropicGaussian, CovarianceDecomposition, CovarianceMatrix, GridShape, HeatmapGrid, Point,
};
