//! Synthetic co-registered image pairs with planted changes.
//!
//! A latent scene `s` with values in [0, 1]^P is rendered into the first
//! modality as `s + noise` and into the second as `g(s') + noise`, where `g`
//! is a fixed cross-modal channel map and `s'` equals `s` except inside the
//! planted irregular regions, which show an unrelated scene.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ChangeMap, ImageStack};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Texture {
    SmoothGradient,
    Blobs,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CrossMap {
    Linear,
    Quadratic,
    ExpMix,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub height: usize,
    pub width: usize,
    pub channels_x: usize,
    pub channels_y: usize,
    pub rng_seed: u64,
    pub num_change_regions: usize,
    pub change_area_fraction: f64,
    pub base_texture: Texture,
    pub noise_sigma_x: f64,
    pub noise_sigma_y: f64,
    pub cross_map: CrossMap,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            height: 256,
            width: 256,
            channels_x: 3,
            channels_y: 3,
            rng_seed: 0,
            num_change_regions: 4,
            change_area_fraction: 0.1,
            base_texture: Texture::Blobs,
            noise_sigma_x: 0.03,
            noise_sigma_y: 0.03,
            cross_map: CrossMap::Linear,
        }
    }
}

impl SynthConfig {
    /// The harder tier: log-domain mixing with heavier noise in the second
    /// modality (additive in the log domain, so multiplicative like speckle).
    pub fn exp_mix(rng_seed: u64) -> Self {
        Self {
            rng_seed,
            cross_map: CrossMap::ExpMix,
            noise_sigma_y: 0.3,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 || self.channels_x == 0 || self.channels_y == 0 {
            return Err(Error::InvalidArgument("synthetic image dimensions must be positive".into()));
        }
        if !(self.change_area_fraction > 0.0 && self.change_area_fraction < 0.5) {
            return Err(Error::InvalidArgument(format!(
                "change_area_fraction must lie in (0, 0.5), got {}",
                self.change_area_fraction
            )));
        }
        if !(self.noise_sigma_x >= 0.0 && self.noise_sigma_y >= 0.0) {
            return Err(Error::InvalidArgument("noise sigmas must be non-negative".into()));
        }
        Ok(())
    }

    pub fn num_pixels(&self) -> usize {
        self.height * self.width
    }

    /// Number of planted pixels.
    pub fn target_change_pixels(&self) -> usize {
        if self.num_change_regions == 0 {
            0
        } else {
            (self.change_area_fraction * self.num_pixels() as f64).round() as usize
        }
    }
}

/// Independent generator for one named purpose, derived from the run seed.
pub fn substream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

const STREAM_SCENE: u64 = 0;
const STREAM_ALT_SCENE: u64 = 1;
const STREAM_REGIONS: u64 = 2;
const STREAM_CROSS_MAP: u64 = 3;
const STREAM_NOISE_X: u64 = 4;
const STREAM_NOISE_Y: u64 = 5;

#[derive(Clone, Debug)]
pub struct SynthPair {
    pub x: ImageStack,
    pub y: ImageStack,
    pub mask: ChangeMap,
}

/// Sum of a few random plane waves per channel, rescaled to [0, 1].
fn wave_field(rng: &mut ChaCha8Rng, h: usize, w: usize, channels: usize) -> Vec<f64> {
    let mut out = vec![0.0; h * w * channels];
    for c in 0..channels {
        let waves: Vec<(f64, f64, f64, f64)> = (0..3)
            .map(|_| {
                let angle = rng.random_range(0.0..std::f64::consts::TAU);
                let wavelength = rng.random_range(24.0..96.0);
                let k = std::f64::consts::TAU / wavelength;
                (k * angle.cos(), k * angle.sin(), rng.random_range(0.0..std::f64::consts::TAU), rng.random_range(0.5..1.0))
            })
            .collect();
        let norm: f64 = waves.iter().map(|w| w.3).sum();
        for r in 0..h {
            for col in 0..w {
                let v: f64 = waves
                    .iter()
                    .map(|&(kx, ky, phase, amp)| amp * (kx * col as f64 + ky * r as f64 + phase).sin())
                    .sum();
                out[(r * w + col) * channels + c] = 0.5 + 0.5 * v / norm;
            }
        }
    }
    out
}

/// Cell label of every pixel on a jittered Voronoi tessellation, and the
/// number of cells.
fn voronoi_labels(rng: &mut ChaCha8Rng, h: usize, w: usize) -> (Vec<usize>, usize) {
    const CELL: usize = 12;
    let gh = h.div_ceil(CELL);
    let gw = w.div_ceil(CELL);
    let sites: Vec<(f64, f64)> = (0..gh * gw)
        .map(|i| {
            let (gr, gc) = (i / gw, i % gw);
            (
                (gr * CELL) as f64 + rng.random_range(0.0..CELL as f64),
                (gc * CELL) as f64 + rng.random_range(0.0..CELL as f64),
            )
        })
        .collect();
    let mut labels = vec![0; h * w];
    for r in 0..h {
        for c in 0..w {
            let (gr, gc) = ((r / CELL) as isize, (c / CELL) as isize);
            let mut best = (f64::INFINITY, 0usize);
            for dr in -1..=1 {
                for dc in -1..=1 {
                    let (nr, nc) = (gr + dr, gc + dc);
                    if nr < 0 || nc < 0 || nr >= gh as isize || nc >= gw as isize {
                        continue;
                    }
                    let i = nr as usize * gw + nc as usize;
                    let d = (sites[i].0 - r as f64).powi(2) + (sites[i].1 - c as f64).powi(2);
                    if d < best.0 {
                        best = (d, i);
                    }
                }
            }
            labels[r * w + c] = best.1;
        }
    }
    (labels, gh * gw)
}

/// Latent scene in [0, 1]^channels.
fn latent_scene(rng: &mut ChaCha8Rng, texture: Texture, h: usize, w: usize, channels: usize) -> Vec<f64> {
    match texture {
        Texture::Blobs => {
            let (labels, cells) = voronoi_labels(rng, h, w);
            let materials: Vec<f64> = (0..cells * channels).map(|_| rng.random::<f64>()).collect();
            let waves = wave_field(rng, h, w, channels);
            let mut out = vec![0.0; h * w * channels];
            for (i, &l) in labels.iter().enumerate() {
                for c in 0..channels {
                    out[i * channels + c] = 0.6 * materials[l * channels + c] + 0.4 * waves[i * channels + c];
                }
            }
            out
        }
        Texture::SmoothGradient => {
            let waves = wave_field(rng, h, w, channels);
            let mut out = vec![0.0; h * w * channels];
            for c in 0..channels {
                let angle = rng.random_range(0.0..std::f64::consts::TAU);
                let (ux, uy) = (angle.cos(), angle.sin());
                let proj = |r: usize, col: usize| ux * col as f64 + uy * r as f64;
                let corners = [proj(0, 0), proj(0, w - 1), proj(h - 1, 0), proj(h - 1, w - 1)];
                let lo = corners.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = corners.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                for r in 0..h {
                    for col in 0..w {
                        let g = if hi > lo { (proj(r, col) - lo) / (hi - lo) } else { 0.5 };
                        let i = (r * w + col) * channels + c;
                        out[i] = 0.5 * g + 0.5 * waves[i];
                    }
                }
            }
            out
        }
    }
}

/// A planted region: pixel offsets inside a bounding box placed at
/// `(row, col)`.
#[derive(Clone, Debug, PartialEq, Eq)]
struct Region {
    row: usize,
    col: usize,
    offsets: Vec<(usize, usize)>,
}

impl Region {
    fn pixels(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.offsets.iter().map(|&(r, c)| (self.row + r, self.col + c))
    }
}

/// Irregular blob of exactly `area` pixels: the `area` pixels of a window
/// with the smallest distance to the centre relative to a randomly
/// modulated radius `1 + sum_j a_j cos(j theta + phi_j)`.
fn blob_shape(rng: &mut ChaCha8Rng, area: usize, h: usize, w: usize) -> Result<Vec<(usize, usize)>> {
    let harmonics: Vec<(f64, f64, f64)> = (2..=5)
        .map(|j| (j as f64, rng.random_range(0.0..0.12), rng.random_range(0.0..std::f64::consts::TAU)))
        .collect();
    // the modulated radius stays within [0.52, 1.48] of the mean
    let side = ((area as f64 / std::f64::consts::PI).sqrt() * 3.2).ceil() as usize + 1;
    let (wr, wc) = (side.min(h), side.min(w));
    if wr * wc < area {
        return Err(Error::InvalidArgument("change region does not fit in the image".into()));
    }
    let (cr, cc) = ((wr as f64 - 1.0) / 2.0, (wc as f64 - 1.0) / 2.0);
    let mut ranked: Vec<(f64, usize)> = (0..wr * wc)
        .map(|i| {
            let (dr, dc) = ((i / wc) as f64 - cr, (i % wc) as f64 - cc);
            let theta = dr.atan2(dc);
            let radius = 1.0 + harmonics.iter().map(|&(j, a, phi)| a * (j * theta + phi).cos()).sum::<f64>();
            ((dr * dr + dc * dc).sqrt() / radius, i)
        })
        .collect();
    ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let picked: Vec<(usize, usize)> = ranked[..area].iter().map(|&(_, i)| (i / wc, i % wc)).collect();
    let r0 = picked.iter().map(|p| p.0).min().unwrap_or(0);
    let c0 = picked.iter().map(|p| p.1).min().unwrap_or(0);
    Ok(picked.into_iter().map(|(r, c)| (r - r0, c - c0)).collect())
}

/// Irregular regions, no two touching (8-neighbourhood), whose areas sum to
/// exactly `total`.
fn place_regions(rng: &mut ChaCha8Rng, h: usize, w: usize, count: usize, total: usize) -> Result<Vec<Region>> {
    let mut regions: Vec<Region> = Vec::with_capacity(count);
    // pixels taken by a placed region or adjacent to one
    let mut blocked = vec![false; h * w];
    for i in 0..count {
        let area = total / count + usize::from(i < total % count);
        if area == 0 {
            continue;
        }
        let offsets = blob_shape(rng, area, h, w)?;
        let rows = offsets.iter().map(|p| p.0).max().unwrap_or(0) + 1;
        let cols = offsets.iter().map(|p| p.1).max().unwrap_or(0) + 1;
        let fits = |row: usize, col: usize| offsets.iter().all(|&(r, c)| !blocked[(row + r) * w + col + c]);
        let mut placed = None;
        for _ in 0..1000 {
            let row = rng.random_range(0..=h - rows);
            let col = rng.random_range(0..=w - cols);
            if fits(row, col) {
                placed = Some((row, col));
                break;
            }
        }
        // crowded image: fall back to the first free position in scan order
        if placed.is_none() {
            placed = (0..=h - rows)
                .flat_map(|row| (0..=w - cols).map(move |col| (row, col)))
                .find(|&(row, col)| fits(row, col));
        }
        let (row, col) = placed.ok_or_else(|| {
            Error::InvalidArgument("cannot place the requested change regions without overlap".into())
        })?;
        let region = Region { row, col, offsets };
        for (r, c) in region.pixels() {
            for nr in r.saturating_sub(1)..=(r + 1).min(h - 1) {
                for nc in c.saturating_sub(1)..=(c + 1).min(w - 1) {
                    blocked[nr * w + nc] = true;
                }
            }
        }
        regions.push(region);
    }
    Ok(regions)
}

/// Per-output weights of the cross-modal map.
struct ChannelMap {
    kind: CrossMap,
    weights: Vec<f64>,
    p: usize,
}

impl ChannelMap {
    fn new(rng: &mut ChaCha8Rng, kind: CrossMap, p: usize, q: usize) -> Self {
        let mut weights = vec![0.0; q * p];
        for qi in 0..q {
            for pi in 0..p {
                let on_diag = qi % p == pi;
                weights[qi * p + pi] = match kind {
                    CrossMap::Linear | CrossMap::Quadratic => {
                        let base = if on_diag {
                            if rng.random::<bool>() {
                                1.0
                            } else {
                                -1.0
                            }
                        } else {
                            0.0
                        };
                        base + 0.3 * rng.random_range(-1.0..1.0)
                    }
                    // positive weights keep the logarithm defined
                    CrossMap::ExpMix => {
                        if on_diag {
                            1.0
                        } else {
                            0.25 * rng.random::<f64>()
                        }
                    }
                };
            }
        }
        Self { kind, weights, p }
    }

    fn apply(&self, s: &[f64], out: &mut [f64]) {
        for (qi, o) in out.iter_mut().enumerate() {
            let w = &self.weights[qi * self.p..(qi + 1) * self.p];
            *o = match self.kind {
                CrossMap::Linear => w.iter().zip(s).map(|(a, b)| a * b).sum(),
                CrossMap::Quadratic => {
                    let z: f64 = w.iter().zip(s).map(|(a, b)| a * b).sum();
                    z + 0.35 * z * z
                }
                CrossMap::ExpMix => w.iter().zip(s).map(|(a, b)| a * (3.0 * b).exp()).sum::<f64>().ln(),
            };
        }
    }
}

pub fn generate_pair(config: &SynthConfig) -> Result<SynthPair> {
    config.validate()?;
    let (h, w, p, q) = (config.height, config.width, config.channels_x, config.channels_y);
    let seed = config.rng_seed;

    let scene = latent_scene(&mut substream(seed, STREAM_SCENE), config.base_texture, h, w, p);
    let total = config.target_change_pixels();
    let regions = if total > 0 {
        place_regions(&mut substream(seed, STREAM_REGIONS), h, w, config.num_change_regions, total)?
    } else {
        Vec::new()
    };
    let mut mask = vec![false; h * w];
    for (r, c) in regions.iter().flat_map(Region::pixels) {
        mask[r * w + c] = true;
    }
    let mut later = scene.clone();
    if total > 0 {
        let alt = latent_scene(&mut substream(seed, STREAM_ALT_SCENE), config.base_texture, h, w, p);
        for (i, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
            later[i * p..(i + 1) * p].copy_from_slice(&alt[i * p..(i + 1) * p]);
        }
    }

    let cross = ChannelMap::new(&mut substream(seed, STREAM_CROSS_MAP), config.cross_map, p, q);
    let mut x = scene;
    add_noise(&mut x, config.noise_sigma_x, &mut substream(seed, STREAM_NOISE_X));
    let mut y = vec![0.0; h * w * q];
    for i in 0..h * w {
        cross.apply(&later[i * p..(i + 1) * p], &mut y[i * q..(i + 1) * q]);
    }
    add_noise(&mut y, config.noise_sigma_y, &mut substream(seed, STREAM_NOISE_Y));

    Ok(SynthPair {
        x: ImageStack::new(h, w, p, x, "x")?,
        y: ImageStack::new(h, w, q, y, "y")?,
        mask: ChangeMap::new(h, w, mask)?,
    })
}

fn add_noise(values: &mut [f64], sigma: f64, rng: &mut ChaCha8Rng) {
    if sigma > 0.0 {
        let normal = Normal::new(0.0, sigma).expect("finite sigma");
        values.iter_mut().for_each(|v| *v += normal.sample(rng));
    }
}
