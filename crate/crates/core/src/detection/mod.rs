//! From predicted images to a binary change map: residual distances, outlier
//! clipping, fusion, guided smoothing, and Otsu thresholding.

mod filter;
mod metrics;
mod otsu;

pub use filter::{meanfield_filter, Boundary, FilterConfig};
pub use metrics::{auc, confusion, kappa, score, MetricsReport};
pub use otsu::{apply_threshold, otsu_threshold, OTSU_BINS};

use crate::affinity::min_max_normalize;
use crate::error::{Error, Result};
use crate::model::{ChangeScores, ImageStack, ScoreKind};

pub const DEFAULT_CLIP_SIGMAS: f64 = 4.0;

/// Per-pixel Euclidean norm of `original - predicted` across channels.
pub fn distance_image(original: &ImageStack, predicted: &ImageStack) -> Result<ChangeScores> {
    if original.dims() != predicted.dims() || original.channels() != predicted.channels() {
        return Err(Error::DimensionMismatch(format!(
            "original is {}x{}x{}, prediction is {}x{}x{}",
            original.height(),
            original.width(),
            original.channels(),
            predicted.height(),
            predicted.width(),
            predicted.channels()
        )));
    }
    let c = original.channels();
    let values = original
        .data()
        .chunks_exact(c)
        .zip(predicted.data().chunks_exact(c))
        .map(|(a, b)| a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum::<f64>().sqrt())
        .collect();
    ChangeScores::new(original.height(), original.width(), values, ScoreKind::Distance)
}

/// Clips values above `mean + num_sigma * sd` (population sd) and min-max
/// normalizes to [0, 1]. A constant map becomes all zeros.
pub fn clip_normalize(d: &ChangeScores, num_sigma: f64) -> Result<ChangeScores> {
    let v = d.values();
    if v.is_empty() {
        return Err(Error::InvalidArgument("empty score map".into()));
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let sd = (v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n).sqrt();
    let cap = mean + num_sigma * sd;
    let clipped: Vec<f64> = v.iter().map(|&x| x.min(cap)).collect();
    ChangeScores::new(d.height(), d.width(), min_max_normalize(&clipped), ScoreKind::Distance)
}

/// Element-wise average of two normalized maps.
pub fn fuse(dx: &ChangeScores, dy: &ChangeScores) -> Result<ChangeScores> {
    if dx.dims() != dy.dims() {
        return Err(Error::DimensionMismatch(format!(
            "maps are {:?} and {:?}",
            dx.dims(),
            dy.dims()
        )));
    }
    let values = dx.values().iter().zip(dy.values()).map(|(a, b)| 0.5 * (a + b)).collect();
    ChangeScores::new(dx.height(), dx.width(), values, ScoreKind::Distance)
}
