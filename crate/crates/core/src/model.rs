//! Shared data types: image stacks, score maps, training sets, patch addressing.
//!
//! Pixels are addressed row-major, `n = row * width + col`, and image data is
//! stored channel-interleaved so that a pixel's channel vector is contiguous.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An `n1 x n2 x C` raster of one modality.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageStack {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
    modality: String,
}

impl ImageStack {
    pub fn new(
        height: usize,
        width: usize,
        channels: usize,
        data: Vec<f64>,
        modality: impl Into<String>,
    ) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::InvalidArgument(format!(
                "image dimensions must be positive, got {height}x{width}x{channels}"
            )));
        }
        if data.len() != height * width * channels {
            return Err(Error::DimensionMismatch(format!(
                "data length {} != {height}*{width}*{channels}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
            modality: modality.into(),
        })
    }

    pub fn from_f32(
        height: usize,
        width: usize,
        channels: usize,
        data: &[f32],
        modality: impl Into<String>,
    ) -> Result<Self> {
        Self::new(
            height,
            width,
            channels,
            data.iter().map(|&v| v as f64).collect(),
            modality,
        )
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn num_pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn modality(&self) -> &str {
        &self.modality
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Channel vector of pixel `n` (row-major index).
    #[inline]
    pub fn pixel(&self, n: usize) -> &[f64] {
        &self.data[n * self.channels..(n + 1) * self.channels]
    }

    #[inline]
    pub fn pixel_at(&self, row: usize, col: usize) -> &[f64] {
        self.pixel(row * self.width + col)
    }

    /// All pixels as an `N x C` sample matrix.
    pub fn to_matrix(&self) -> Matrix {
        Matrix {
            rows: self.num_pixels(),
            cols: self.channels,
            data: self.data.clone(),
        }
    }

    /// Builds an image from an `N x C` matrix laid out row-major by pixel.
    pub fn from_matrix(
        height: usize,
        width: usize,
        matrix: Matrix,
        modality: impl Into<String>,
    ) -> Result<Self> {
        if matrix.rows != height * width {
            return Err(Error::DimensionMismatch(format!(
                "matrix has {} rows, image needs {}",
                matrix.rows,
                height * width
            )));
        }
        Self::new(height, width, matrix.cols, matrix.data, modality)
    }

    /// Multiplies every value by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            data: self.data.iter().map(|v| v * factor).collect(),
            ..self.clone()
        }
    }
}

/// Dense row-major matrix of samples (one row per sample).
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch(format!(
                "matrix data length {} != {rows}*{cols}",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::DimensionMismatch("ragged rows".into()));
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.cols.max(1)).take(self.rows)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Multiplies every value by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            data: self.data.iter().map(|v| v * factor).collect(),
            ..self.clone()
        }
    }
}

/// Patch side length and sliding-window stride.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchSpec {
    pub k: usize,
    pub delta: usize,
}

impl PatchSpec {
    pub fn new(k: usize, delta: usize) -> Self {
        Self { k, delta }
    }

    pub fn validate(&self, dims: (usize, usize)) -> Result<()> {
        let (n1, n2) = dims;
        if self.k > n1 || self.k > n2 {
            return Err(Error::PatchTooLarge { k: self.k, n1, n2 });
        }
        if self.k < 2 {
            return Err(Error::InvalidArgument(format!(
                "patch side must be at least 2, got {}",
                self.k
            )));
        }
        if self.delta == 0 {
            return Err(Error::InvalidArgument("patch stride must be >= 1".into()));
        }
        if self.delta > self.k {
            return Err(Error::InvalidArgument(format!(
                "patch stride {} exceeds patch side {} and would leave pixels uncovered",
                self.delta, self.k
            )));
        }
        Ok(())
    }
}

/// Top-left corner of a patch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Anchor {
    pub row: usize,
    pub col: usize,
}

fn axis_offsets(len: usize, k: usize, delta: usize) -> Vec<usize> {
    let last = len - k;
    let mut out: Vec<usize> = (0..=last).step_by(delta).collect();
    if *out.last().unwrap() != last {
        out.push(last);
    }
    out
}

/// Enumerates patch anchors on the stride grid in row-major order. The final
/// row and column of anchors are clamped to the border so every pixel is
/// covered by at least one patch.
pub fn patch_anchors(dims: (usize, usize), spec: PatchSpec) -> Result<Vec<Anchor>> {
    spec.validate(dims)?;
    let rows = axis_offsets(dims.0, spec.k, spec.delta);
    let cols = axis_offsets(dims.1, spec.k, spec.delta);
    Ok(rows
        .iter()
        .flat_map(|&row| cols.iter().map(move |&col| Anchor { row, col }))
        .collect())
}

/// Returns the `k*k` channel vectors of the patch at `anchor`, row-major.
pub fn extract_patch_vectors(image: &ImageStack, anchor: Anchor, k: usize) -> Result<Vec<Vec<f64>>> {
    if anchor.row + k > image.height || anchor.col + k > image.width {
        return Err(Error::InvalidArgument(format!(
            "patch at ({}, {}) with k={k} exceeds {}x{} image",
            anchor.row, anchor.col, image.height, image.width
        )));
    }
    let mut out = Vec::with_capacity(k * k);
    for r in anchor.row..anchor.row + k {
        for c in anchor.col..anchor.col + k {
            out.push(image.pixel_at(r, c).to_vec());
        }
    }
    Ok(out)
}

/// What a score map holds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreKind {
    Possibility,
    Distance,
    Filtered,
}

/// Per-pixel scalar map (change possibility or distance).
#[derive(Clone, Debug, PartialEq)]
pub struct ChangeScores {
    height: usize,
    width: usize,
    values: Vec<f64>,
    kind: ScoreKind,
}

impl ChangeScores {
    pub fn new(height: usize, width: usize, values: Vec<f64>, kind: ScoreKind) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::DimensionMismatch(format!(
                "score map length {} != {height}*{width}",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        if kind == ScoreKind::Possibility && values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidArgument(
                "possibility values must lie in [0, 1]".into(),
            ));
        }
        Ok(Self {
            height,
            width,
            values,
            kind,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn kind(&self) -> ScoreKind {
        self.kind
    }

    pub fn with_kind(self, kind: ScoreKind) -> Result<Self> {
        Self::new(self.height, self.width, self.values, kind)
    }
}

/// Binary per-pixel map; `true` marks change.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ChangeMap {
    height: usize,
    width: usize,
    data: Vec<bool>,
}

impl ChangeMap {
    pub fn new(height: usize, width: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::DimensionMismatch(format!(
                "map length {} != {height}*{width}",
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }
}

/// One pseudo-training pair.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingPair {
    pub pixel: usize,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

/// Pixels assumed unchanged, with their feature vectors in both modalities.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingSet {
    pairs: Vec<TrainingPair>,
    x_dim: usize,
    y_dim: usize,
}

impl TrainingSet {
    /// Validates uniqueness of pixel indices, vector widths and finiteness.
    /// `num_pixels` bounds the indices.
    pub fn new(pairs: Vec<TrainingPair>, num_pixels: usize) -> Result<Self> {
        let first = pairs
            .first()
            .ok_or_else(|| Error::InvalidArgument("training set must not be empty".into()))?;
        let (x_dim, y_dim) = (first.x.len(), first.y.len());
        let mut seen = vec![false; num_pixels];
        for p in &pairs {
            if p.pixel >= num_pixels {
                return Err(Error::InvalidArgument(format!(
                    "training pixel {} out of range [0, {num_pixels})",
                    p.pixel
                )));
            }
            if std::mem::replace(&mut seen[p.pixel], true) {
                return Err(Error::InvalidArgument(format!(
                    "duplicate training pixel {}",
                    p.pixel
                )));
            }
            if p.x.len() != x_dim || p.y.len() != y_dim {
                return Err(Error::DimensionMismatch("training vectors differ in width".into()));
            }
            if !p.x.iter().chain(&p.y).all(|v| v.is_finite()) {
                return Err(Error::NonFinite(p.pixel));
            }
        }
        Ok(Self {
            pairs,
            x_dim,
            y_dim,
        })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn pairs(&self) -> &[TrainingPair] {
        &self.pairs
    }

    pub fn x_dim(&self) -> usize {
        self.x_dim
    }

    pub fn y_dim(&self) -> usize {
        self.y_dim
    }

    pub fn pixels(&self) -> Vec<usize> {
        self.pairs.iter().map(|p| p.pixel).collect()
    }

    pub fn x_matrix(&self) -> Matrix {
        Matrix {
            rows: self.pairs.len(),
            cols: self.x_dim,
            data: self.pairs.iter().flat_map(|p| p.x.iter().copied()).collect(),
        }
    }

    pub fn y_matrix(&self) -> Matrix {
        Matrix {
            rows: self.pairs.len(),
            cols: self.y_dim,
            data: self.pairs.iter().flat_map(|p| p.y.iter().copied()).collect(),
        }
    }
}

/// Confusion counts of a binary change map against ground truth.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(h: usize, w: usize, c: usize) -> ImageStack {
        let data = (0..h * w * c).map(|v| (v + 1) as f64).collect();
        ImageStack::new(h, w, c, data, "X").unwrap()
    }

    fn coords(a: &[Anchor]) -> Vec<(usize, usize)> {
        a.iter().map(|a| (a.row, a.col)).collect()
    }

    #[test]
    fn anchors_stride_one() {
        let a = patch_anchors((6, 6), PatchSpec::new(5, 1)).unwrap();
        assert_eq!(coords(&a), vec![(0, 0), (0, 1), (1, 0), (1, 1)]);
        let a = patch_anchors((5, 5), PatchSpec::new(5, 1)).unwrap();
        assert_eq!(coords(&a), vec![(0, 0)]);
        let a = patch_anchors((9, 7), PatchSpec::new(3, 1)).unwrap();
        assert_eq!(a.len(), (9 - 3 + 1) * (7 - 3 + 1));
    }

    #[test]
    fn anchors_clamped_to_border() {
        let a = patch_anchors((10, 10), PatchSpec::new(5, 4)).unwrap();
        let mut expected = Vec::new();
        for r in [0, 4, 5] {
            for c in [0, 4, 5] {
                expected.push((r, c));
            }
        }
        assert_eq!(coords(&a), expected);
    }

    #[test]
    fn anchors_reject_large_patch() {
        let err = patch_anchors((4, 8), PatchSpec::new(5, 1)).unwrap_err();
        assert!(err.to_string().contains("patch larger than image"));
        assert!(patch_anchors((8, 8), PatchSpec::new(5, 0)).is_err());
        assert!(patch_anchors((17, 9), PatchSpec::new(3, 7)).is_err());
    }

    #[test]
    fn anchors_cover_every_pixel() {
        for &(n1, n2, k, d) in &[(10, 13, 5, 4), (17, 9, 3, 3), (20, 20, 6, 5), (8, 8, 8, 3)] {
            let anchors = patch_anchors((n1, n2), PatchSpec::new(k, d)).unwrap();
            let mut covered = vec![0usize; n1 * n2];
            for a in &anchors {
                for r in a.row..a.row + k {
                    for c in a.col..a.col + k {
                        covered[r * n2 + c] += 1;
                    }
                }
            }
            assert!(covered.iter().all(|&c| c >= 1), "{n1}x{n2} k={k} d={d}");
        }
    }

    #[test]
    fn patch_vectors_row_major() {
        let img = ramp(3, 3, 1);
        let v = extract_patch_vectors(&img, Anchor { row: 0, col: 0 }, 2).unwrap();
        assert_eq!(v, vec![vec![1.0], vec![2.0], vec![4.0], vec![5.0]]);

        let img2 = ramp(3, 3, 2);
        let v = extract_patch_vectors(&img2, Anchor { row: 1, col: 2 }, 1).unwrap();
        assert_eq!(v, vec![img2.pixel_at(1, 2).to_vec()]);

        assert!(extract_patch_vectors(&img, Anchor { row: 2, col: 0 }, 2).is_err());
    }

    #[test]
    fn overlapping_patches_share_vectors() {
        let img = ramp(5, 5, 3);
        let a = extract_patch_vectors(&img, Anchor { row: 0, col: 0 }, 3).unwrap();
        let b = extract_patch_vectors(&img, Anchor { row: 1, col: 1 }, 3).unwrap();
        // pixel (1,1) is index 4 in the first patch and index 0 in the second
        assert_eq!(a[4], b[0]);
        assert_eq!(a[8], b[4]);
    }

    #[test]
    fn image_rejects_bad_input() {
        assert!(ImageStack::new(2, 2, 1, vec![0.0; 3], "X").is_err());
        assert!(ImageStack::new(1, 2, 1, vec![0.0, f64::NAN], "X").is_err());
    }

    #[test]
    fn training_set_validation() {
        let pair = |pixel| TrainingPair {
            pixel,
            x: vec![0.0],
            y: vec![1.0, 2.0],
        };
        assert!(TrainingSet::new(vec![pair(0), pair(3)], 4).is_ok());
        assert!(TrainingSet::new(vec![pair(0), pair(0)], 4).is_err());
        assert!(TrainingSet::new(vec![pair(4)], 4).is_err());
        assert!(TrainingSet::new(vec![], 4).is_err());
    }
}
