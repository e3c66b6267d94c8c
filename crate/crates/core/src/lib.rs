//! Unsupervised change detection between co-registered images acquired by
//! different sensors.
//!
//! The pipeline scores every pixel with an affinity-matrix change prior,
//! picks the least-likely-changed pixels as a training set, fits a regressor
//! in each direction between the modalities, and thresholds the fused
//! residuals.

pub mod affinity;
pub mod detection;
pub mod error;
pub mod model;
pub mod npy;
pub mod pipeline;
pub mod regression;
pub mod selection;
pub mod synth;
pub mod training_io;

pub use error::{Error, Result};
pub use model::{
    Anchor, ChangeMap, ChangeScores, ConfusionCounts, ImageStack, Matrix, PatchSpec, ScoreKind, TrainingPair,
    TrainingSet,
};
