use log::warn;

use crate::error::{Error, Result};
use crate::model::{ChangeMap, ChangeScores};

pub const OTSU_BINS: usize = 256;

/// Bin of a value in [0, 1]: bin `b` holds `(b/B, (b+1)/B]`, and 0 goes to
/// bin 0. With this layout `v > j/B` exactly when `bin(v) >= j`.
#[inline]
fn bin_of(v: f64, bins: usize) -> usize {
    ((v * bins as f64).ceil() as usize).saturating_sub(1).min(bins - 1)
}

/// Between-class variance of splitting the histogram below bin `j`, using
/// bin centres as the class values.
fn between_class_variance(cum_count: f64, cum_sum: f64, total: f64, total_sum: f64) -> f64 {
    let w0 = cum_count / total;
    let w1 = 1.0 - w0;
    if cum_count == 0.0 || cum_count == total {
        return 0.0;
    }
    let mu0 = cum_sum / cum_count;
    let mu1 = (total_sum - cum_sum) / (total - cum_count);
    w0 * w1 * (mu0 - mu1) * (mu0 - mu1)
}

/// Otsu threshold over `j / bins` for `j = 1..bins`, lowest maximizer on
/// ties. Returns `None` when no candidate separates two non-empty classes,
/// e.g. for a constant map.
pub fn otsu_threshold(d: &ChangeScores, bins: usize) -> Result<Option<f64>> {
    if bins < 2 {
        return Err(Error::InvalidArgument("Otsu needs at least 2 bins".into()));
    }
    if d.values().iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::InvalidArgument("Otsu input must lie in [0, 1]".into()));
    }
    let mut hist = vec![0u64; bins];
    for &v in d.values() {
        hist[bin_of(v, bins)] += 1;
    }
    let centre = |b: usize| (b as f64 + 0.5) / bins as f64;
    let total = d.len() as f64;
    let total_sum: f64 = hist.iter().enumerate().map(|(b, &c)| c as f64 * centre(b)).sum();

    let mut best: Option<(f64, usize)> = None;
    let (mut cum_count, mut cum_sum) = (0.0, 0.0);
    for j in 1..bins {
        cum_count += hist[j - 1] as f64;
        cum_sum += hist[j - 1] as f64 * centre(j - 1);
        let var = between_class_variance(cum_count, cum_sum, total, total_sum);
        if var > 0.0 && best.is_none_or(|(b, _)| var > b) {
            best = Some((var, j));
        }
    }
    match best {
        Some((_, j)) => Ok(Some(j as f64 / bins as f64)),
        None => {
            warn!("score map has a single histogram class; Otsu threshold undefined, reporting no change");
            Ok(None)
        }
    }
}

/// Labels `v > threshold` as change; no threshold means no change anywhere.
pub fn apply_threshold(d: &ChangeScores, threshold: Option<f64>) -> ChangeMap {
    let data = match threshold {
        Some(t) => d.values().iter().map(|&v| v > t).collect(),
        None => vec![false; d.len()],
    };
    ChangeMap::new(d.height(), d.width(), data).expect("same shape")
}
