//! Self-supervised training set selection and the Hellinger
//! representativeness check.

use log::warn;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{ChangeMap, ChangeScores, ImageStack, ScoreKind, TrainingPair, TrainingSet};

pub const DEFAULT_BINS: usize = 100;
pub const DEFAULT_WARN_THRESHOLD: f64 = 0.5;

const NORMALIZATION_TOL: f64 = 1e-9;

/// Indices of the `m` smallest scores, ties broken by ascending index.
/// Returned in ascending index order.
pub fn lowest_indices(values: &[f64], m: usize) -> Result<Vec<usize>> {
    if m > values.len() {
        return Err(Error::TrainingTooLarge {
            m,
            n: values.len(),
        });
    }
    let mut order: Vec<usize> = (0..values.len()).collect();
    let key = |&a: &usize, &b: &usize| values[a].total_cmp(&values[b]).then(a.cmp(&b));
    if m > 0 && m < order.len() {
        order.select_nth_unstable_by(m - 1, key);
    }
    order.truncate(m);
    order.sort_unstable();
    Ok(order)
}

/// Picks the `m` pixels with the lowest change possibility as training pairs.
pub fn select_training(
    scores: &ChangeScores,
    image_x: &ImageStack,
    image_y: &ImageStack,
    m: usize,
) -> Result<TrainingSet> {
    if scores.kind() != ScoreKind::Possibility {
        return Err(Error::InvalidArgument(
            "training selection needs a possibility map".into(),
        ));
    }
    if scores.dims() != image_x.dims() || scores.dims() != image_y.dims() {
        return Err(Error::DimensionMismatch(
            "possibility map and images differ in size".into(),
        ));
    }
    if m == 0 {
        return Err(Error::InvalidArgument("training size must be >= 1".into()));
    }
    let pixels = lowest_indices(scores.values(), m)?;
    let pairs = pixels
        .into_iter()
        .map(|n| TrainingPair {
            pixel: n,
            x: image_x.pixel(n).to_vec(),
            y: image_y.pixel(n).to_vec(),
        })
        .collect();
    TrainingSet::new(pairs, scores.len())
}

/// Normalized histogram over fixed bin edges.
#[derive(Clone, Debug, PartialEq)]
pub struct Histogram {
    edges: Vec<f64>,
    mass: Vec<f64>,
}

impl Histogram {
    /// `edges` has `mass.len() + 1` strictly increasing entries.
    pub fn new(edges: Vec<f64>, mass: Vec<f64>) -> Result<Self> {
        if edges.len() != mass.len() + 1 || mass.is_empty() {
            return Err(Error::DimensionMismatch(
                "histogram needs one more edge than bins".into(),
            ));
        }
        if edges.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidArgument(
                "bin edges must be strictly increasing".into(),
            ));
        }
        let total: f64 = mass.iter().sum();
        if (total - 1.0).abs() > NORMALIZATION_TOL || mass.iter().any(|&m| m < 0.0) {
            return Err(Error::NotNormalized(total));
        }
        Ok(Self { edges, mass })
    }

    /// Counts `values` into `num_bins` equal bins spanning `[lo, hi]`.
    /// Values outside the range land in the edge bins.
    pub fn from_values(values: impl Iterator<Item = f64>, lo: f64, hi: f64, num_bins: usize) -> Result<Self> {
        if num_bins < 2 {
            return Err(Error::InvalidArgument("need at least 2 bins".into()));
        }
        // a constant channel still needs increasing edges
        let (lo, hi) = if hi > lo { (lo, hi) } else { (lo - 0.5, lo + 0.5) };
        let width = (hi - lo) / num_bins as f64;
        let mut counts = vec![0u64; num_bins];
        let mut total = 0u64;
        for v in values {
            let b = ((v - lo) / width).floor();
            let b = if b < 0.0 { 0 } else { (b as usize).min(num_bins - 1) };
            counts[b] += 1;
            total += 1;
        }
        if total == 0 {
            return Err(Error::InvalidArgument("histogram of no values".into()));
        }
        let edges = (0..=num_bins).map(|i| lo + i as f64 * width).collect();
        let mass = counts.iter().map(|&c| c as f64 / total as f64).collect();
        Self::new(edges, mass)
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    pub fn edges(&self) -> &[f64] {
        &self.edges
    }

    pub fn num_bins(&self) -> usize {
        self.mass.len()
    }
}

fn bhattacharyya(a: &Histogram, b: &Histogram) -> Result<f64> {
    if a.num_bins() != b.num_bins() || a.edges != b.edges {
        return Err(Error::DimensionMismatch(
            "histograms must share bin edges".into(),
        ));
    }
    for h in [a, b] {
        let total: f64 = h.mass.iter().sum();
        if (total - 1.0).abs() > NORMALIZATION_TOL {
            return Err(Error::NotNormalized(total));
        }
    }
    Ok(a.mass.iter().zip(&b.mass).map(|(p, q)| (p * q).sqrt()).sum())
}

fn hellinger_from_coefficient(bc: f64) -> f64 {
    (1.0 - bc).max(0.0).sqrt().min(1.0)
}

/// Hellinger distance between two normalized histograms.
pub fn hellinger(a: &Histogram, b: &Histogram) -> Result<f64> {
    Ok(hellinger_from_coefficient(bhattacharyya(a, b)?))
}

/// Channel-averaged Hellinger distance between the full image and the subset
/// of its pixels in `pixels`. Bin edges come from each channel's full-image
/// range.
pub fn hellinger_multichannel(image: &ImageStack, pixels: &[usize], num_bins: usize) -> Result<f64> {
    if pixels.is_empty() {
        return Err(Error::InvalidArgument("empty training subset".into()));
    }
    if let Some(&bad) = pixels.iter().find(|&&p| p >= image.num_pixels()) {
        return Err(Error::InvalidArgument(format!(
            "subset pixel {bad} outside image"
        )));
    }
    let c = image.channels();
    let mut coefficient_sum = 0.0;
    for ch in 0..c {
        let channel = || image.data().iter().skip(ch).step_by(c).copied();
        let (lo, hi) = channel().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
            (lo.min(v), hi.max(v))
        });
        let full = Histogram::from_values(channel(), lo, hi, num_bins)?;
        let subset = Histogram::from_values(pixels.iter().map(|&p| image.pixel(p)[ch]), lo, hi, num_bins)?;
        coefficient_sum += bhattacharyya(&full, &subset)?;
    }
    Ok(hellinger_from_coefficient(coefficient_sum / c as f64))
}

/// Training set plus its representativeness diagnostics.
#[derive(Clone, Debug)]
pub struct SelectionReport {
    pub training_set: TrainingSet,
    pub d_h_x: f64,
    pub d_h_y: f64,
    /// Fraction of selected pixels that fall inside a supplied change mask.
    pub fn_fraction: Option<f64>,
}

/// Serializable part of [`SelectionReport`].
#[derive(Clone, Debug, Serialize)]
pub struct SelectionSummary {
    pub m: usize,
    pub d_h_x: f64,
    pub d_h_y: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fn_fraction: Option<f64>,
}

impl SelectionReport {
    pub fn summary(&self) -> SelectionSummary {
        SelectionSummary {
            m: self.training_set.len(),
            d_h_x: self.d_h_x,
            d_h_y: self.d_h_y,
            fn_fraction: self.fn_fraction,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct SelectionConfig {
    pub m: usize,
    pub num_bins: usize,
    pub warn_threshold: f64,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            m: 1000,
            num_bins: DEFAULT_BINS,
            warn_threshold: DEFAULT_WARN_THRESHOLD,
        }
    }
}

/// Selects the training set and computes the Hellinger diagnostic for both
/// modalities. The diagnostic never alters the selection.
pub fn select_with_report(
    scores: &ChangeScores,
    image_x: &ImageStack,
    image_y: &ImageStack,
    config: &SelectionConfig,
    change_mask: Option<&ChangeMap>,
) -> Result<SelectionReport> {
    let training_set = select_training(scores, image_x, image_y, config.m)?;
    let pixels = training_set.pixels();
    let d_h_x = hellinger_multichannel(image_x, &pixels, config.num_bins)?;
    let d_h_y = hellinger_multichannel(image_y, &pixels, config.num_bins)?;
    for (tag, d) in [(image_x.modality(), d_h_x), (image_y.modality(), d_h_y)] {
        if d > config.warn_threshold {
            warn!("training set may not represent modality {tag}: Hellinger distance {d:.3}");
        }
    }
    let fn_fraction = match change_mask {
        Some(mask) => {
            if mask.dims() != scores.dims() {
                return Err(Error::DimensionMismatch("change mask size".into()));
            }
            let inside = pixels.iter().filter(|&&p| mask.data()[p]).count();
            Some(inside as f64 / pixels.len() as f64)
        }
        None => None,
    };
    Ok(SelectionReport {
        training_set,
        d_h_x,
        d_h_y,
        fn_fraction,
    })
}
