//! Change prior from patch affinity matrices.
//!
//! For every patch the pixels of each modality form a fully connected graph
//! whose edge weights are Gaussian affinities of their Euclidean distances.
//! The Frobenius norm of the difference between the two modalities' affinity
//! matrices is assigned to every pixel of the patch, and the per-pixel mean
//! over all covering patches is the change possibility.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{patch_anchors, Anchor, ChangeScores, ImageStack, PatchSpec, ScoreKind};

/// Rank (1-based) of the neighbour whose distance sets the kernel width.
pub const KERNEL_WIDTH_RANK: usize = 7;

/// Square symmetric matrix stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct SquareMatrix {
    n: usize,
    data: Vec<f64>,
}

impl SquareMatrix {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn from_data(n: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n * n {
            return Err(Error::DimensionMismatch(format!(
                "square matrix data length {} != {n}^2",
                data.len()
            )));
        }
        Ok(Self { n, data })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    #[inline]
    fn set_sym(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] = v;
        self.data[j * self.n + i] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }
}

/// Pairwise Gaussian affinities of the pixels in one patch.
#[derive(Clone, Debug, PartialEq)]
pub struct AffinityMatrix {
    entries: SquareMatrix,
    kernel_width: f64,
}

impl AffinityMatrix {
    pub fn dim(&self) -> usize {
        self.entries.dim()
    }

    pub fn kernel_width(&self) -> f64 {
        self.kernel_width
    }

    pub fn entries(&self) -> &SquareMatrix {
        &self.entries
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries.get(i, j)
    }
}

/// Euclidean distance matrix between the given vectors.
pub fn pairwise_distances(vectors: &[Vec<f64>]) -> Result<SquareMatrix> {
    if vectors.len() < 2 {
        return Err(Error::InvalidArgument(
            "need at least two vectors for pairwise distances".into(),
        ));
    }
    let c = vectors[0].len();
    if vectors.iter().any(|v| v.len() != c) {
        return Err(Error::DimensionMismatch("vectors differ in length".into()));
    }
    let flat: Vec<f64> = vectors.iter().flatten().copied().collect();
    let mut out = SquareMatrix::zeros(vectors.len());
    fill_distances(&flat, c, &mut out);
    Ok(out)
}

fn fill_distances(flat: &[f64], channels: usize, out: &mut SquareMatrix) {
    let n = out.n;
    for i in 0..n {
        let vi = &flat[i * channels..(i + 1) * channels];
        out.data[i * n + i] = 0.0;
        for j in i + 1..n {
            let vj = &flat[j * channels..(j + 1) * channels];
            let d2: f64 = vi.iter().zip(vj).map(|(a, b)| (a - b) * (a - b)).sum();
            out.set_sym(i, j, d2.sqrt());
        }
    }
}

/// Kernel width: the mean over all pixels of the distance to their 7th
/// nearest neighbour within the patch. Patches with fewer than eight pixels
/// fall back to the farthest neighbour. Zero signals a degenerate patch.
pub fn kernel_width(distances: &SquareMatrix) -> f64 {
    let mut scratch = Vec::with_capacity(distances.dim());
    kernel_width_with(distances, &mut scratch)
}

fn kernel_width_with(distances: &SquareMatrix, scratch: &mut Vec<f64>) -> f64 {
    let n = distances.dim();
    if n < 2 {
        return 0.0;
    }
    let rank = KERNEL_WIDTH_RANK.min(n - 1);
    let mut total = 0.0;
    for i in 0..n {
        scratch.clear();
        scratch.extend(
            distances
                .row(i)
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, &d)| d),
        );
        let (_, nth, _) = scratch.select_nth_unstable_by(rank - 1, f64::total_cmp);
        total += *nth;
    }
    total / n as f64
}

/// Gaussian affinity `exp(-d^2 / h^2)`; for `h == 0` the indicator of `d == 0`.
#[inline]
pub fn affinity_value(distance: f64, h: f64) -> f64 {
    if h > 0.0 {
        (-(distance * distance) / (h * h)).exp()
    } else if distance == 0.0 {
        1.0
    } else {
        0.0
    }
}

pub fn affinity_from_distances(distances: &SquareMatrix, h: f64) -> Result<AffinityMatrix> {
    if distances.data.iter().any(|&d| d < 0.0 || d.is_nan()) {
        return Err(Error::InvalidArgument("distances must be non-negative".into()));
    }
    if h < 0.0 || !h.is_finite() {
        return Err(Error::InvalidArgument(format!("invalid kernel width {h}")));
    }
    let entries = SquareMatrix {
        n: distances.n,
        data: distances.data.iter().map(|&d| affinity_value(d, h)).collect(),
    };
    Ok(AffinityMatrix {
        entries,
        kernel_width: h,
    })
}

/// Frobenius norm of `a - b`.
pub fn patch_norm(a: &AffinityMatrix, b: &AffinityMatrix) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch(format!(
            "affinity matrices are {0}x{0} and {1}x{1}",
            a.dim(),
            b.dim()
        )));
    }
    let s: f64 = a
        .entries
        .data
        .iter()
        .zip(&b.entries.data)
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    Ok(s.sqrt())
}

/// Norm of one patch pair.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PatchNorm {
    pub anchor: Anchor,
    pub norm: f64,
}

/// Per-pixel running sum of patch norms and patch counts.
#[derive(Clone, Debug)]
pub struct NormAccumulator {
    height: usize,
    width: usize,
    sums: Vec<f64>,
    counts: Vec<u32>,
}

impl NormAccumulator {
    pub fn new(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            sums: vec![0.0; height * width],
            counts: vec![0; height * width],
        }
    }

    /// Adds `norm` to every pixel of the `k x k` patch at `anchor`.
    pub fn add_patch(&mut self, anchor: Anchor, k: usize, norm: f64) {
        for r in anchor.row..anchor.row + k {
            let base = r * self.width;
            for c in anchor.col..anchor.col + k {
                self.sums[base + c] += norm;
                self.counts[base + c] += 1;
            }
        }
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    /// Mean norm per pixel; uncovered pixels get zero.
    pub fn means(&self) -> Vec<f64> {
        self.sums
            .iter()
            .zip(&self.counts)
            .map(|(&s, &c)| if c > 0 { s / c as f64 } else { 0.0 })
            .collect()
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }
}

struct PatchWorkspace {
    vx: Vec<f64>,
    vy: Vec<f64>,
    dx: SquareMatrix,
    dy: SquareMatrix,
    scratch: Vec<f64>,
}

impl PatchWorkspace {
    fn new(k: usize) -> Self {
        let n = k * k;
        Self {
            vx: Vec::new(),
            vy: Vec::new(),
            dx: SquareMatrix::zeros(n),
            dy: SquareMatrix::zeros(n),
            scratch: Vec::with_capacity(n),
        }
    }
}

fn gather(image: &ImageStack, anchor: Anchor, k: usize, out: &mut Vec<f64>) {
    out.clear();
    let c = image.channels();
    for r in anchor.row..anchor.row + k {
        let start = (r * image.width() + anchor.col) * c;
        out.extend_from_slice(&image.data()[start..start + k * c]);
    }
}

fn norm_for_patch(
    ws: &mut PatchWorkspace,
    image_x: &ImageStack,
    image_y: &ImageStack,
    anchor: Anchor,
    k: usize,
) -> f64 {
    gather(image_x, anchor, k, &mut ws.vx);
    gather(image_y, anchor, k, &mut ws.vy);
    fill_distances(&ws.vx, image_x.channels(), &mut ws.dx);
    fill_distances(&ws.vy, image_y.channels(), &mut ws.dy);
    let hx = kernel_width_with(&ws.dx, &mut ws.scratch);
    let hy = kernel_width_with(&ws.dy, &mut ws.scratch);
    let n = k * k;
    // diagonals are 1 in both matrices, so only off-diagonal pairs contribute
    let mut sum = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let diff = affinity_value(ws.dx.get(i, j), hx) - affinity_value(ws.dy.get(i, j), hy);
            sum += diff * diff;
        }
    }
    (2.0 * sum).sqrt()
}

fn check_pair(image_x: &ImageStack, image_y: &ImageStack, spec: PatchSpec) -> Result<()> {
    if image_x.dims() != image_y.dims() {
        return Err(Error::DimensionMismatch(format!(
            "images are {:?} and {:?}",
            image_x.dims(),
            image_y.dims()
        )));
    }
    spec.validate(image_x.dims())
}

/// Affinity-matrix norm of every patch, in anchor order.
pub fn patch_norms(
    image_x: &ImageStack,
    image_y: &ImageStack,
    spec: PatchSpec,
) -> Result<Vec<PatchNorm>> {
    check_pair(image_x, image_y, spec)?;
    let anchors = patch_anchors(image_x.dims(), spec)?;
    let k = spec.k;
    let norms: Vec<f64> = anchors
        .par_iter()
        .map_init(
            || PatchWorkspace::new(k),
            |ws, &anchor| norm_for_patch(ws, image_x, image_y, anchor, k),
        )
        .collect();
    Ok(anchors
        .into_iter()
        .zip(norms)
        .map(|(anchor, norm)| PatchNorm { anchor, norm })
        .collect())
}

/// Per-pixel mean of the patch norms, before normalization.
pub fn raw_possibility(
    image_x: &ImageStack,
    image_y: &ImageStack,
    spec: PatchSpec,
) -> Result<NormAccumulator> {
    let norms = patch_norms(image_x, image_y, spec)?;
    let (n1, n2) = image_x.dims();
    let mut acc = NormAccumulator::new(n1, n2);
    // fixed anchor order keeps the reduction bitwise reproducible
    for p in &norms {
        acc.add_patch(p.anchor, spec.k, p.norm);
    }
    Ok(acc)
}

/// Min-max scaling to [0, 1]; a constant map becomes all zeros.
pub fn min_max_normalize(values: &[f64]) -> Vec<f64> {
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let span = hi - lo;
    if !(span > 0.0) {
        return vec![0.0; values.len()];
    }
    values.iter().map(|&v| ((v - lo) / span).clamp(0.0, 1.0)).collect()
}

/// Change possibility map, min-max normalized to [0, 1].
pub fn possibility_map(
    image_x: &ImageStack,
    image_y: &ImageStack,
    spec: PatchSpec,
) -> Result<ChangeScores> {
    let acc = raw_possibility(image_x, image_y, spec)?;
    let (n1, n2) = acc.dims();
    ChangeScores::new(n1, n2, min_max_normalize(&acc.means()), ScoreKind::Possibility)
}
