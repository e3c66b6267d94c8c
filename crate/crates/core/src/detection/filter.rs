//! Iterative mean-field smoothing guided by both images.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ChangeScores, ImageStack, ScoreKind};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    /// Weights are renormalized over in-image neighbors.
    Renormalize,
    /// The image wraps around at its edges.
    Periodic,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterConfig {
    pub iterations: usize,
    /// Feature-space bandwidth on min-max normalized channels.
    pub kernel_width: f64,
    /// Half-width of the square neighborhood in pixels.
    pub spatial_radius: usize,
    pub spatial_sigma: f64,
    pub boundary: Boundary,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            iterations: 5,
            kernel_width: 0.1,
            spatial_radius: 8,
            spatial_sigma: 4.0,
            boundary: Boundary::Renormalize,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self, dims: (usize, usize)) -> Result<()> {
        if !(self.kernel_width > 0.0) || !(self.spatial_sigma > 0.0) {
            return Err(Error::InvalidArgument(
                "filter kernel_width and spatial_sigma must be positive".into(),
            ));
        }
        if self.spatial_radius >= dims.0.min(dims.1) {
            return Err(Error::InvalidArgument(format!(
                "filter radius {} must be smaller than the image ({}x{})",
                self.spatial_radius, dims.0, dims.1
            )));
        }
        Ok(())
    }
}

/// Per-pixel feature vectors: every channel of both images, each min-max
/// scaled to [0, 1] (constant channels become 0).
fn guide_features(x: &ImageStack, y: &ImageStack) -> (Vec<f64>, usize) {
    let f = x.channels() + y.channels();
    let n = x.num_pixels();
    let mut out = vec![0.0; n * f];
    let mut offset = 0;
    for img in [x, y] {
        let c = img.channels();
        for ch in 0..c {
            let (lo, hi) = (0..n).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), i| {
                let v = img.pixel(i)[ch];
                (lo.min(v), hi.max(v))
            });
            let span = hi - lo;
            for i in 0..n {
                out[i * f + offset + ch] = if span > 0.0 { (img.pixel(i)[ch] - lo) / span } else { 0.0 };
            }
        }
        offset += c;
    }
    (out, f)
}

/// Runs `config.iterations` rounds of guided Gaussian averaging over a
/// `(2r+1)^2` window. Each round reads only the previous round's values.
pub fn meanfield_filter(
    d: &ChangeScores,
    guide_x: &ImageStack,
    guide_y: &ImageStack,
    config: &FilterConfig,
) -> Result<ChangeScores> {
    let dims = d.dims();
    if guide_x.dims() != dims || guide_y.dims() != dims {
        return Err(Error::DimensionMismatch(format!(
            "score map is {dims:?} but guides are {:?} and {:?}",
            guide_x.dims(),
            guide_y.dims()
        )));
    }
    if !(config.kernel_width > 0.0) {
        return Err(Error::InvalidArgument("filter kernel_width must be positive".into()));
    }
    if config.iterations == 0 {
        return d.clone().with_kind(ScoreKind::Filtered);
    }
    config.validate(dims)?;

    let (n1, n2) = dims;
    let (feat, nf) = guide_features(guide_x, guide_y);
    let r = config.spatial_radius as isize;
    let w = 2 * r + 1;
    let spatial: Vec<f64> = (0..w * w)
        .map(|i| {
            let (dr, dc) = ((i / w - r) as f64, (i % w - r) as f64);
            (-(dr * dr + dc * dc) / (2.0 * config.spatial_sigma * config.spatial_sigma)).exp()
        })
        .collect();
    let inv_feat = 1.0 / (2.0 * config.kernel_width * config.kernel_width);
    let periodic = config.boundary == Boundary::Periodic;

    let mut cur = d.values().to_vec();
    let mut next = vec![0.0; cur.len()];
    for _ in 0..config.iterations {
        next.par_chunks_mut(n2).enumerate().for_each(|(row, out)| {
            for (col, o) in out.iter_mut().enumerate() {
                let fi = &feat[(row * n2 + col) * nf..(row * n2 + col + 1) * nf];
                let (mut num, mut den) = (0.0, 0.0);
                for dr in -r..=r {
                    let mut rr = row as isize + dr;
                    if periodic {
                        rr = rr.rem_euclid(n1 as isize);
                    } else if rr < 0 || rr >= n1 as isize {
                        continue;
                    }
                    for dc in -r..=r {
                        let mut cc = col as isize + dc;
                        if periodic {
                            cc = cc.rem_euclid(n2 as isize);
                        } else if cc < 0 || cc >= n2 as isize {
                            continue;
                        }
                        let j = rr as usize * n2 + cc as usize;
                        let fj = &feat[j * nf..(j + 1) * nf];
                        let df: f64 = fi.iter().zip(fj).map(|(a, b)| (a - b) * (a - b)).sum();
                        let wgt = spatial[((dr + r) * w + dc + r) as usize] * (-df * inv_feat).exp();
                        num += wgt * cur[j];
                        den += wgt;
                    }
                }
                // the centre pixel always contributes weight 1, so den >= 1
                *o = num / den;
            }
        });
        std::mem::swap(&mut cur, &mut next);
    }
    // convex combinations can drift past the ends by rounding only
    let (lo, hi) = d
        .values()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    cur.iter_mut().for_each(|v| *v = v.clamp(lo, hi));
    ChangeScores::new(n1, n2, cur, ScoreKind::Filtered)
}
