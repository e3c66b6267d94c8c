//! End-to-end run: prior, selection, two-way regression, detection, scoring.

use std::path::PathBuf;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::affinity::possibility_map;
use crate::detection::{
    apply_threshold, clip_normalize, distance_image, fuse, meanfield_filter, otsu_threshold, score, FilterConfig,
    MetricsReport, DEFAULT_CLIP_SIGMAS, OTSU_BINS,
};
use crate::error::{Error, Result};
use crate::model::{ChangeMap, ChangeScores, ImageStack, PatchSpec};
use crate::regression::{regress_both_ways, PredictedImage, RegressorConfig};
use crate::selection::{select_with_report, SelectionConfig, SelectionReport, SelectionSummary, DEFAULT_BINS};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunPaths {
    pub x: PathBuf,
    pub y: PathBuf,
    #[serde(default)]
    pub ground_truth: Option<PathBuf>,
    pub output_dir: PathBuf,
}

fn default_patch() -> PatchSpec {
    PatchSpec::new(20, 1)
}
fn default_m() -> usize {
    1000
}
fn default_bins() -> usize {
    DEFAULT_BINS
}
fn default_clip() -> f64 {
    DEFAULT_CLIP_SIGMAS
}

/// Everything needed to run the pipeline on a pair of files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub paths: RunPaths,
    #[serde(default = "default_patch")]
    pub patch: PatchSpec,
    #[serde(default = "default_m")]
    pub m: usize,
    #[serde(default)]
    pub regressor: RegressorConfig,
    #[serde(default)]
    pub filter: FilterConfig,
    #[serde(default = "default_bins")]
    pub num_bins: usize,
    #[serde(default = "default_clip")]
    pub num_sigma_clip: f64,
    /// Seeds every stochastic stage; overrides the forest's own seed.
    #[serde(default)]
    pub rng_seed: u64,
}

impl RunConfig {
    pub fn params(&self) -> PipelineParams {
        let mut regressor = self.regressor.clone();
        regressor.rfr.rng_seed = self.rng_seed;
        PipelineParams {
            patch: self.patch,
            selection: SelectionConfig {
                m: self.m,
                num_bins: self.num_bins,
                ..SelectionConfig::default()
            },
            regressor,
            filter: self.filter,
            num_sigma_clip: self.num_sigma_clip,
        }
    }

    pub fn check_paths(&self) -> Result<()> {
        let inputs = [Some(&self.paths.x), Some(&self.paths.y), self.paths.ground_truth.as_ref()];
        for p in inputs.into_iter().flatten() {
            if !p.is_file() {
                return Err(Error::InvalidArgument(format!("input file {} does not exist", p.display())));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct PipelineParams {
    pub patch: PatchSpec,
    pub selection: SelectionConfig,
    pub regressor: RegressorConfig,
    pub filter: FilterConfig,
    pub num_sigma_clip: f64,
}

impl Default for PipelineParams {
    fn default() -> Self {
        Self {
            patch: default_patch(),
            selection: SelectionConfig::default(),
            regressor: RegressorConfig::default(),
            filter: FilterConfig::default(),
            num_sigma_clip: DEFAULT_CLIP_SIGMAS,
        }
    }
}

/// Wall-clock milliseconds per stage.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub prior: f64,
    pub selection: f64,
    pub regression: f64,
    pub detection: f64,
    pub total: f64,
}

/// Intermediate and final products of one run.
pub struct PipelineOutput {
    pub possibility: ChangeScores,
    pub selection: SelectionReport,
    pub y_hat: PredictedImage,
    pub x_hat: PredictedImage,
    /// Clip-normalized distance maps of each direction.
    pub dx: ChangeScores,
    pub dy: ChangeScores,
    pub fused: ChangeScores,
    pub filtered: ChangeScores,
    pub threshold: Option<f64>,
    pub change_map: ChangeMap,
    pub metrics: Option<MetricsReport>,
    pub timings: StageTimings,
}

fn ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

/// Clip-normalized residual maps `(D_x, D_y)`, their average, the filtered
/// average, its Otsu threshold and the binary map.
pub struct Detection {
    pub dx: ChangeScores,
    pub dy: ChangeScores,
    pub fused: ChangeScores,
    pub filtered: ChangeScores,
    pub threshold: Option<f64>,
    pub change_map: ChangeMap,
}

pub fn detect(
    x: &ImageStack,
    y: &ImageStack,
    x_hat: &ImageStack,
    y_hat: &ImageStack,
    filter: &FilterConfig,
    num_sigma_clip: f64,
) -> Result<Detection> {
    let dx = clip_normalize(&distance_image(x, x_hat)?, num_sigma_clip)?;
    let dy = clip_normalize(&distance_image(y, y_hat)?, num_sigma_clip)?;
    let fused = fuse(&dx, &dy)?;
    let filtered = meanfield_filter(&fused, x, y, filter)?;
    let threshold = otsu_threshold(&filtered, OTSU_BINS)?;
    let change_map = apply_threshold(&filtered, threshold);
    Ok(Detection {
        dx,
        dy,
        fused,
        filtered,
        threshold,
        change_map,
    })
}

pub fn run_pipeline(
    x: &ImageStack,
    y: &ImageStack,
    ground_truth: Option<&ChangeMap>,
    params: &PipelineParams,
) -> Result<PipelineOutput> {
    if x.dims() != y.dims() {
        return Err(Error::DimensionMismatch(format!(
            "images are {:?} and {:?}",
            x.dims(),
            y.dims()
        )));
    }
    if let Some(gt) = ground_truth {
        if gt.dims() != x.dims() {
            return Err(Error::DimensionMismatch(format!(
                "ground truth is {:?}, images are {:?}",
                gt.dims(),
                x.dims()
            )));
        }
    }
    params.regressor.validate()?;
    let start = Instant::now();

    let t = Instant::now();
    let possibility = possibility_map(x, y, params.patch)?;
    let prior_ms = ms(t);

    let t = Instant::now();
    let selection = select_with_report(&possibility, x, y, &params.selection, ground_truth)?;
    let selection_ms = ms(t);

    let t = Instant::now();
    let (y_hat, x_hat) = regress_both_ways(x, y, &selection.training_set, &params.regressor)?;
    let regression_ms = ms(t);

    let t = Instant::now();
    let det = detect(x, y, &x_hat.image, &y_hat.image, &params.filter, params.num_sigma_clip)?;
    let detection_ms = ms(t);

    let metrics = ground_truth
        .map(|gt| score(Some(&det.filtered), &det.change_map, gt, det.threshold))
        .transpose()?;

    Ok(PipelineOutput {
        possibility,
        selection,
        y_hat,
        x_hat,
        dx: det.dx,
        dy: det.dy,
        fused: det.fused,
        filtered: det.filtered,
        threshold: det.threshold,
        change_map: det.change_map,
        metrics,
        timings: StageTimings {
            prior: prior_ms,
            selection: selection_ms,
            regression: regression_ms,
            detection: detection_ms,
            total: ms(start),
        },
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct DetectionSummary {
    pub threshold: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub auc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oa: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kappa: Option<f64>,
    pub change_pixels: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tp: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tn: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fp: Option<u64>,
    #[serde(rename = "fn", skip_serializing_if = "Option::is_none")]
    pub fn_: Option<u64>,
}

/// Consolidated JSON report of a run.
#[derive(Clone, Debug, Serialize)]
pub struct RunReport {
    pub stage_timings_ms: StageTimings,
    pub selection: SelectionSummary,
    pub detection: DetectionSummary,
}

impl PipelineOutput {
    pub fn report(&self) -> RunReport {
        let m = self.metrics.as_ref();
        RunReport {
            stage_timings_ms: self.timings.clone(),
            selection: self.selection.summary(),
            detection: DetectionSummary {
                threshold: self.threshold,
                auc: m.and_then(|m| m.auc),
                oa: m.map(|m| m.oa),
                kappa: m.and_then(|m| m.kappa),
                change_pixels: self.change_map.count(),
                tp: m.map(|m| m.tp),
                tn: m.map(|m| m.tn),
                fp: m.map(|m| m.fp),
                fn_: m.map(|m| m.fn_),
            },
        }
    }
}
