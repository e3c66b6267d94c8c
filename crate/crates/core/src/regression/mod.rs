//! Fit/predict interface over four regressors, used in both directions
//! between the two modalities.

pub mod blob;
pub mod forest;
pub mod gpr;
pub mod hpt;
pub mod neighbors;
mod standardize;
pub mod svr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ImageStack, Matrix, TrainingSet};

pub use forest::RfrParams;
pub use gpr::GprParams;
pub use hpt::{DistanceNormalization, HptParams};
pub use standardize::Standardizer;
pub use svr::SvrParams;

/// Training sets above this size are refused by the kernel methods.
pub const DEFAULT_MEMORY_CAP: usize = 20_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegressorKind {
    Gpr,
    Svr,
    Rfr,
    Hpt,
}

impl RegressorKind {
    pub const ALL: [RegressorKind; 4] = [Self::Gpr, Self::Svr, Self::Rfr, Self::Hpt];

    pub fn name(self) -> &'static str {
        match self {
            Self::Gpr => "gpr",
            Self::Svr => "svr",
            Self::Rfr => "rfr",
            Self::Hpt => "hpt",
        }
    }

    fn tag(self) -> u8 {
        match self {
            Self::Gpr => 1,
            Self::Svr => 2,
            Self::Rfr => 3,
            Self::Hpt => 4,
        }
    }

    fn from_tag(tag: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.tag() == tag)
    }
}

impl std::fmt::Display for RegressorKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for RegressorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown regressor '{s}'")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegressorConfig {
    pub kind: RegressorKind,
    pub gpr: GprParams,
    pub svr: SvrParams,
    pub rfr: RfrParams,
    pub hpt: HptParams,
    pub memory_cap: usize,
}

impl Default for RegressorConfig {
    fn default() -> Self {
        Self::new(RegressorKind::Rfr)
    }
}

impl RegressorConfig {
    pub fn new(kind: RegressorKind) -> Self {
        Self {
            kind,
            gpr: GprParams::default(),
            svr: SvrParams::default(),
            rfr: RfrParams::default(),
            hpt: HptParams::default(),
            memory_cap: DEFAULT_MEMORY_CAP,
        }
    }

    pub fn validate(&self) -> Result<()> {
        fn positive(name: &str, v: f64) -> Result<()> {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidArgument(format!("{name} must be positive, got {v}")))
            }
        }
        fn at_least_one(name: &str, v: usize) -> Result<()> {
            if v >= 1 {
                Ok(())
            } else {
                Err(Error::InvalidArgument(format!("{name} must be at least 1")))
            }
        }
        positive("gpr.signal_variance", self.gpr.signal_variance)?;
        positive("gpr.length_scale", self.gpr.length_scale)?;
        positive("gpr.jitter", self.gpr.jitter)?;
        if !(self.gpr.noise_variance >= 0.0 && self.gpr.noise_variance.is_finite()) {
            return Err(Error::InvalidArgument("gpr.noise_variance must be non-negative".into()));
        }
        positive("svr.lambda", self.svr.lambda)?;
        positive("svr.epsilon", self.svr.epsilon)?;
        positive("svr.rbf_width", self.svr.rbf_width)?;
        positive("svr.convergence_tol", self.svr.convergence_tol)?;
        at_least_one("svr.max_iterations", self.svr.max_iterations)?;
        at_least_one("rfr.num_trees", self.rfr.num_trees)?;
        at_least_one("rfr.min_leaf_size", self.rfr.min_leaf_size)?;
        if let Some(r) = self.rfr.features_per_node {
            at_least_one("rfr.features_per_node", r)?;
        }
        at_least_one("hpt.num_neighbors", self.hpt.num_neighbors)?;
        if !(self.hpt.kernel_decay >= 0.0 && self.hpt.kernel_decay.is_finite()) {
            return Err(Error::InvalidArgument("hpt.kernel_decay must be non-negative".into()));
        }
        at_least_one("memory_cap", self.memory_cap)
    }
}

pub(crate) enum FittedState {
    Gpr(gpr::GprModel),
    Svr { model: svr::SvrModel, converged: bool },
    Rfr(forest::Forest),
    Hpt(hpt::HptModel),
}

/// A trained regressor, immutable and shareable across threads.
pub struct FittedRegressor {
    pub(crate) input_std: Standardizer,
    pub(crate) target_std: Standardizer,
    pub(crate) state: FittedState,
}

impl std::fmt::Debug for FittedRegressor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FittedRegressor")
            .field("kind", &self.kind())
            .field("input_dim", &self.input_dim())
            .field("output_dim", &self.output_dim())
            .finish()
    }
}

pub fn fit(config: &RegressorConfig, inputs: &Matrix, targets: &Matrix) -> Result<FittedRegressor> {
    config.validate()?;
    let m = inputs.rows();
    if m == 0 {
        return Err(Error::InvalidArgument("cannot fit on an empty training set".into()));
    }
    if targets.rows() != m {
        return Err(Error::DimensionMismatch(format!(
            "{m} input rows but {} target rows",
            targets.rows()
        )));
    }
    if inputs.cols() == 0 || targets.cols() == 0 {
        return Err(Error::InvalidArgument("inputs and targets need at least one column".into()));
    }
    if !inputs.is_finite() || !targets.is_finite() {
        return Err(Error::InvalidArgument("training data must be finite".into()));
    }
    if matches!(config.kind, RegressorKind::Gpr | RegressorKind::Svr) && m > config.memory_cap {
        return Err(Error::MemoryBudget {
            m,
            cap: config.memory_cap,
        });
    }

    let (input_std, target_std) = match config.kind {
        RegressorKind::Rfr => (Standardizer::identity(inputs.cols()), Standardizer::identity(targets.cols())),
        _ => (Standardizer::fit(inputs), Standardizer::fit(targets)),
    };
    let xs = input_std.transform(inputs);
    let ys = target_std.transform(targets);
    let state = match config.kind {
        RegressorKind::Gpr => FittedState::Gpr(gpr::fit_gpr(&xs, &ys, &config.gpr)?),
        RegressorKind::Svr => {
            let sol = svr::fit_svr(&xs, &ys, &config.svr)?;
            FittedState::Svr {
                model: svr::SvrModel::from_solution(&xs, &sol, config.svr.rbf_width),
                converged: sol.converged,
            }
        }
        RegressorKind::Rfr => FittedState::Rfr(forest::fit_forest(&xs, &ys, &config.rfr)),
        RegressorKind::Hpt => FittedState::Hpt(hpt::HptModel::fit(xs, ys, config.hpt)),
    };
    Ok(FittedRegressor {
        input_std,
        target_std,
        state,
    })
}

impl FittedRegressor {
    pub fn kind(&self) -> RegressorKind {
        match self.state {
            FittedState::Gpr(_) => RegressorKind::Gpr,
            FittedState::Svr { .. } => RegressorKind::Svr,
            FittedState::Rfr(_) => RegressorKind::Rfr,
            FittedState::Hpt(_) => RegressorKind::Hpt,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input_std.dim()
    }

    pub fn output_dim(&self) -> usize {
        self.target_std.dim()
    }

    /// Whether an iterative fit stopped on its convergence test.
    pub fn converged(&self) -> bool {
        match &self.state {
            FittedState::Svr { converged, .. } => *converged,
            _ => true,
        }
    }

    pub fn forest(&self) -> Option<&forest::Forest> {
        match &self.state {
            FittedState::Rfr(f) => Some(f),
            _ => None,
        }
    }

    pub fn gpr(&self) -> Option<&gpr::GprModel> {
        match &self.state {
            FittedState::Gpr(g) => Some(g),
            _ => None,
        }
    }

    pub fn predict(&self, inputs: &Matrix) -> Result<Matrix> {
        if inputs.cols() != self.input_dim() {
            return Err(Error::DimensionMismatch(format!(
                "model expects {} input columns, got {}",
                self.input_dim(),
                inputs.cols()
            )));
        }
        let xs = self.input_std.transform(inputs);
        let ys = match &self.state {
            FittedState::Gpr(m) => m.predict(&xs),
            FittedState::Svr { model, .. } => model.predict(&xs),
            FittedState::Rfr(f) => f.predict(&xs),
            FittedState::Hpt(m) => m.predict(&xs),
        };
        Ok(self.target_std.inverse(&ys))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    /// Predicts the second image from the first.
    XToY,
    /// Predicts the first image from the second.
    YToX,
}

#[derive(Clone, Debug)]
pub struct PredictedImage {
    pub image: ImageStack,
    pub direction: Direction,
    pub kind: RegressorKind,
}

/// Fits and applies one direction of the mapping over every pixel.
pub fn regress_direction(
    source: &ImageStack,
    target_modality: &str,
    inputs: &Matrix,
    targets: &Matrix,
    config: &RegressorConfig,
    direction: Direction,
) -> Result<(PredictedImage, FittedRegressor)> {
    let model = fit(config, inputs, targets)?;
    let pred = model.predict(&source.to_matrix())?;
    let image = ImageStack::from_matrix(source.height(), source.width(), pred, target_modality)?;
    Ok((
        PredictedImage {
            image,
            direction,
            kind: config.kind,
        },
        model,
    ))
}

/// Returns `(Y_hat, X_hat)`: the second image predicted from the first and
/// the first predicted from the second.
pub fn regress_both_ways(
    x: &ImageStack,
    y: &ImageStack,
    training: &TrainingSet,
    config: &RegressorConfig,
) -> Result<(PredictedImage, PredictedImage)> {
    if x.dims() != y.dims() {
        return Err(Error::DimensionMismatch(format!(
            "images are {:?} and {:?}",
            x.dims(),
            y.dims()
        )));
    }
    if training.x_dim() != x.channels() || training.y_dim() != y.channels() {
        return Err(Error::DimensionMismatch(
            "training set widths do not match image channels".into(),
        ));
    }
    let (xm, ym) = (training.x_matrix(), training.y_matrix());
    let (y_hat, _) = regress_direction(x, y.modality(), &xm, &ym, config, Direction::XToY)?;
    let (x_hat, _) = regress_direction(y, x.modality(), &ym, &xm, config, Direction::YToX)?;
    Ok((y_hat, x_hat))
}
