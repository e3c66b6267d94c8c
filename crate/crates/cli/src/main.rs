use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;
use serde::Serialize;

use hetcd::affinity::possibility_map;
use hetcd::detection::{self, Boundary, FilterConfig, DEFAULT_CLIP_SIGMAS};
use hetcd::model::{ChangeMap, ChangeScores, ImageStack, PatchSpec, ScoreKind};
use hetcd::npy;
use hetcd::pipeline::{detect, run_pipeline, RunConfig};
use hetcd::regression::blob::write_model;
use hetcd::regression::hpt::DistanceNormalization;
use hetcd::regression::{regress_direction, Direction, RegressorConfig, RegressorKind};
use hetcd::selection::{select_with_report, SelectionConfig, DEFAULT_BINS};
use hetcd::synth::{generate_pair, SynthConfig};
use hetcd::training_io::{load_training_set, save_training_set};

mod maps;

#[derive(Parser)]
#[command(name = "hetcd", version, about = "Unsupervised change detection between images from different sensors")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic image pair and its change mask.
    Synth(SynthArgs),
    /// Compute the change possibility map from patch affinities.
    Prior(PriorArgs),
    /// Pick the pixels least likely to have changed as training data.
    Select(SelectArgs),
    /// Fit the two cross-modal regressions and predict both images.
    Regress(RegressArgs),
    /// Turn predictions into a filtered distance map and a binary change map.
    Detect(DetectArgs),
    /// Score a change map (and optionally a score map) against a mask.
    Evaluate(EvaluateArgs),
    /// Run every stage from a TOML config.
    Run(RunArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// TOML file with generator settings; defaults are used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the seed from the config.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PriorArgs {
    #[arg(long)]
    x: PathBuf,
    #[arg(long)]
    y: PathBuf,
    #[arg(long, default_value_t = 20)]
    k: usize,
    #[arg(long, default_value_t = 1)]
    delta: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SelectArgs {
    #[arg(long)]
    pc: PathBuf,
    #[arg(long)]
    x: PathBuf,
    #[arg(long)]
    y: PathBuf,
    #[arg(long, default_value_t = 1000)]
    m: usize,
    #[arg(long, default_value_t = DEFAULT_BINS)]
    bins: usize,
    #[arg(long)]
    out: PathBuf,
    /// JSON report with the Hellinger distances.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Ground-truth mask; adds the fraction of changed pixels selected.
    #[arg(long)]
    mask: Option<PathBuf>,
}

#[derive(Args)]
struct RegressorFlags {
    #[arg(long, default_value = "rfr")]
    method: RegressorKind,
    #[arg(long)]
    gpr_signal_variance: Option<f64>,
    #[arg(long)]
    gpr_length_scale: Option<f64>,
    #[arg(long)]
    gpr_noise_variance: Option<f64>,
    #[arg(long)]
    gpr_jitter: Option<f64>,
    #[arg(long)]
    gpr_steps: Option<usize>,
    #[arg(long)]
    svr_lambda: Option<f64>,
    #[arg(long)]
    svr_epsilon: Option<f64>,
    #[arg(long)]
    svr_width: Option<f64>,
    #[arg(long)]
    svr_max_iterations: Option<usize>,
    #[arg(long)]
    trees: Option<usize>,
    #[arg(long)]
    features_per_node: Option<usize>,
    #[arg(long)]
    min_leaf: Option<usize>,
    #[arg(long)]
    no_bootstrap: bool,
    /// Seed for the forest's bootstrap and feature sampling.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    neighbors: Option<usize>,
    #[arg(long)]
    decay: Option<f64>,
    /// absolute or relative
    #[arg(long, value_parser = parse_normalization)]
    normalization: Option<DistanceNormalization>,
    /// Largest training set accepted by the kernel methods.
    #[arg(long)]
    memory_cap: Option<usize>,
}

impl RegressorFlags {
    fn config(&self) -> RegressorConfig {
        let mut c = RegressorConfig::new(self.method);
        let set = |slot: &mut f64, v: Option<f64>| {
            if let Some(v) = v {
                *slot = v;
            }
        };
        set(&mut c.gpr.signal_variance, self.gpr_signal_variance);
        set(&mut c.gpr.length_scale, self.gpr_length_scale);
        set(&mut c.gpr.noise_variance, self.gpr_noise_variance);
        set(&mut c.gpr.jitter, self.gpr_jitter);
        set(&mut c.svr.lambda, self.svr_lambda);
        set(&mut c.svr.epsilon, self.svr_epsilon);
        set(&mut c.svr.rbf_width, self.svr_width);
        set(&mut c.hpt.kernel_decay, self.decay);
        if let Some(v) = self.gpr_steps {
            c.gpr.optimizer_steps = v;
        }
        if let Some(v) = self.svr_max_iterations {
            c.svr.max_iterations = v;
        }
        if let Some(v) = self.trees {
            c.rfr.num_trees = v;
        }
        if self.features_per_node.is_some() {
            c.rfr.features_per_node = self.features_per_node;
        }
        if let Some(v) = self.min_leaf {
            c.rfr.min_leaf_size = v;
        }
        c.rfr.bootstrap = !self.no_bootstrap;
        if let Some(v) = self.seed {
            c.rfr.rng_seed = v;
        }
        if let Some(v) = self.neighbors {
            c.hpt.num_neighbors = v;
        }
        if let Some(v) = self.normalization {
            c.hpt.normalization = v;
        }
        if let Some(v) = self.memory_cap {
            c.memory_cap = v;
        }
        c
    }
}

#[derive(Args)]
struct RegressArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    x: PathBuf,
    #[arg(long)]
    y: PathBuf,
    #[command(flatten)]
    regressor: RegressorFlags,
    #[arg(long)]
    out_xhat: PathBuf,
    #[arg(long)]
    out_yhat: PathBuf,
    /// Also save both fitted models (x_to_y.model, y_to_x.model) here.
    #[arg(long)]
    model_dir: Option<PathBuf>,
}

#[derive(Args)]
struct DetectArgs {
    #[arg(long)]
    x: PathBuf,
    #[arg(long)]
    y: PathBuf,
    #[arg(long)]
    xhat: PathBuf,
    #[arg(long)]
    yhat: PathBuf,
    #[arg(long, default_value_t = 5)]
    filter_iters: usize,
    #[arg(long, default_value_t = 0.1)]
    kernel_width: f64,
    #[arg(long, default_value_t = 8)]
    radius: usize,
    #[arg(long, default_value_t = 4.0)]
    spatial_sigma: f64,
    /// renormalize or periodic
    #[arg(long, default_value = "renormalize", value_parser = parse_boundary)]
    boundary: Boundary,
    #[arg(long, default_value_t = DEFAULT_CLIP_SIGMAS)]
    clip_sigmas: f64,
    /// Filtered distance map.
    #[arg(long)]
    out_d: PathBuf,
    #[arg(long)]
    out_map: PathBuf,
    /// `otsu` or a fixed threshold in [0, 1].
    #[arg(long, default_value = "otsu")]
    threshold: String,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Score map for AUC; omitted means no AUC.
    #[arg(long)]
    scores: Option<PathBuf>,
    #[arg(long)]
    map: PathBuf,
    #[arg(long)]
    mask: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Threshold that produced the map, copied into the report.
    #[arg(long)]
    threshold: Option<f64>,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
}

fn parse_normalization(s: &str) -> Result<DistanceNormalization, String> {
    match s.to_ascii_lowercase().as_str() {
        "absolute" => Ok(DistanceNormalization::Absolute),
        "relative" => Ok(DistanceNormalization::Relative),
        _ => Err(format!("expected absolute or relative, got '{s}'")),
    }
}

fn parse_boundary(s: &str) -> Result<Boundary, String> {
    match s.to_ascii_lowercase().as_str() {
        "renormalize" => Ok(Boundary::Renormalize),
        "periodic" => Ok(Boundary::Periodic),
        _ => Err(format!("expected renormalize or periodic, got '{s}'")),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => synth(a),
        Command::Prior(a) => prior(a),
        Command::Select(a) => select(a),
        Command::Regress(a) => regress(a),
        Command::Detect(a) => detect_cmd(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Run(a) => run(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn read_image(path: &Path, modality: &str) -> Result<ImageStack> {
    npy::read_image(path, modality).with_context(|| format!("reading {}", path.display()))
}

fn read_mask(path: &Path) -> Result<ChangeMap> {
    npy::read_mask(path).with_context(|| format!("reading {}", path.display()))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn same_dims(what: &str, a: (usize, usize), b: (usize, usize)) -> Result<()> {
    if a != b {
        bail!("{what}: {}x{} vs {}x{}", a.0, a.1, b.0, b.1);
    }
    Ok(())
}

fn synth(a: SynthArgs) -> Result<()> {
    let mut cfg: SynthConfig = match &a.config {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            toml::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => SynthConfig::default(),
    };
    if let Some(seed) = a.seed {
        cfg.rng_seed = seed;
    }
    let pair = generate_pair(&cfg)?;
    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    npy::write_image(a.out.join("x.npy"), &pair.x)?;
    npy::write_image(a.out.join("y.npy"), &pair.y)?;
    npy::write_mask(a.out.join("mask.npy"), &pair.mask)?;
    info!(
        "wrote {}x{} pair with {} changed pixels to {}",
        cfg.height,
        cfg.width,
        pair.mask.count(),
        a.out.display()
    );
    Ok(())
}

fn prior(a: PriorArgs) -> Result<()> {
    let x = read_image(&a.x, "x")?;
    let y = read_image(&a.y, "y")?;
    let pc = possibility_map(&x, &y, PatchSpec::new(a.k, a.delta))?;
    npy::write_scores(&a.out, &pc)?;
    Ok(())
}

fn select(a: SelectArgs) -> Result<()> {
    let x = read_image(&a.x, "x")?;
    let y = read_image(&a.y, "y")?;
    let pc = npy::read_scores(&a.pc, ScoreKind::Possibility).with_context(|| format!("reading {}", a.pc.display()))?;
    let truth = a.mask.as_deref().map(read_mask).transpose()?;
    let cfg = SelectionConfig {
        m: a.m,
        num_bins: a.bins,
        ..SelectionConfig::default()
    };
    let report = select_with_report(&pc, &x, &y, &cfg, truth.as_ref())?;
    save_training_set(&a.out, &report.training_set)?;
    if let Some(path) = &a.report {
        write_json(path, &report.summary())?;
    }
    Ok(())
}

fn regress(a: RegressArgs) -> Result<()> {
    let x = read_image(&a.x, "x")?;
    let y = read_image(&a.y, "y")?;
    same_dims("image sizes differ", x.dims(), y.dims())?;
    let train = load_training_set(&a.train, x.num_pixels()).with_context(|| format!("reading {}", a.train.display()))?;
    if train.x_dim() != x.channels() || train.y_dim() != y.channels() {
        bail!(
            "training set has {}+{} channels, images have {}+{}",
            train.x_dim(),
            train.y_dim(),
            x.channels(),
            y.channels()
        );
    }
    let config = a.regressor.config();
    config.validate()?;
    let (xm, ym) = (train.x_matrix(), train.y_matrix());
    let (y_hat, forward) = regress_direction(&x, y.modality(), &xm, &ym, &config, Direction::XToY)?;
    let (x_hat, backward) = regress_direction(&y, x.modality(), &ym, &xm, &config, Direction::YToX)?;
    npy::write_image(&a.out_yhat, &y_hat.image)?;
    npy::write_image(&a.out_xhat, &x_hat.image)?;
    if let Some(dir) = &a.model_dir {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        for (name, model) in [("x_to_y.model", &forward), ("y_to_x.model", &backward)] {
            let path = dir.join(name);
            let file = fs::File::create(&path).with_context(|| format!("writing {}", path.display()))?;
            write_model(model, std::io::BufWriter::new(file))?;
        }
    }
    Ok(())
}

fn detect_cmd(a: DetectArgs) -> Result<()> {
    let x = read_image(&a.x, "x")?;
    let y = read_image(&a.y, "y")?;
    let x_hat = read_image(&a.xhat, "x")?;
    let y_hat = read_image(&a.yhat, "y")?;
    let filter = FilterConfig {
        iterations: a.filter_iters,
        kernel_width: a.kernel_width,
        spatial_radius: a.radius,
        spatial_sigma: a.spatial_sigma,
        boundary: a.boundary,
    };
    let det = detect(&x, &y, &x_hat, &y_hat, &filter, a.clip_sigmas)?;
    let (threshold, map) = match a.threshold.as_str() {
        "otsu" => (det.threshold, det.change_map),
        fixed => {
            let t: f64 = fixed
                .parse()
                .with_context(|| format!("threshold must be 'otsu' or a number, got '{fixed}'"))?;
            (Some(t), detection::apply_threshold(&det.filtered, Some(t)))
        }
    };
    npy::write_scores(&a.out_d, &det.filtered)?;
    maps::write_png(&a.out_map, &map)?;
    match threshold {
        Some(t) => info!("threshold {t}, {} changed pixels", map.count()),
        None => info!("distance map is constant; no pixel marked as changed"),
    }
    Ok(())
}

fn evaluate(a: EvaluateArgs) -> Result<()> {
    let truth = read_mask(&a.mask)?;
    let map = maps::read_png(&a.map)?;
    same_dims("change map and mask differ in size", map.dims(), truth.dims())?;
    let scores = a
        .scores
        .as_deref()
        .map(|p| npy::read_scores(p, ScoreKind::Filtered).with_context(|| format!("reading {}", p.display())))
        .transpose()?;
    if let Some(s) = &scores {
        same_dims("score map and mask differ in size", s.dims(), truth.dims())?;
    }
    let report = detection::score(scores.as_ref(), &map, &truth, a.threshold)?;
    write_json(&a.out, &report)?;
    Ok(())
}

/// Paths in a run config are relative to the config file.
fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn run(a: RunArgs) -> Result<()> {
    let text = fs::read_to_string(&a.config).with_context(|| format!("reading {}", a.config.display()))?;
    let mut cfg: RunConfig = toml::from_str(&text).with_context(|| format!("parsing {}", a.config.display()))?;
    let base = a.config.parent().unwrap_or(Path::new("."));
    cfg.paths.x = resolve(base, &cfg.paths.x);
    cfg.paths.y = resolve(base, &cfg.paths.y);
    cfg.paths.ground_truth = cfg.paths.ground_truth.as_deref().map(|p| resolve(base, p));
    cfg.paths.output_dir = resolve(base, &cfg.paths.output_dir);
    cfg.check_paths()?;

    let x = read_image(&cfg.paths.x, "x")?;
    let y = read_image(&cfg.paths.y, "y")?;
    let truth = cfg.paths.ground_truth.as_deref().map(read_mask).transpose()?;
    let out = run_pipeline(&x, &y, truth.as_ref(), &cfg.params())?;

    let dir = &cfg.paths.output_dir;
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    npy::write_scores(dir.join("pc.npy"), &out.possibility)?;
    save_training_set(dir.join("train.bin"), &out.selection.training_set)?;
    npy::write_image(dir.join("yhat.npy"), &out.y_hat.image)?;
    npy::write_image(dir.join("xhat.npy"), &out.x_hat.image)?;
    let scores: [(&str, &ChangeScores); 4] =
        [("dx.npy", &out.dx), ("dy.npy", &out.dy), ("fused.npy", &out.fused), ("d.npy", &out.filtered)];
    for (name, s) in scores {
        npy::write_scores(dir.join(name), s)?;
    }
    maps::write_png(dir.join("map.png"), &out.change_map)?;
    let report = out.report();
    write_json(&dir.join("metrics.json"), &report)?;
    info!(
        "prior {:.0} ms, selection {:.0} ms, regression {:.0} ms, detection {:.0} ms",
        out.timings.prior, out.timings.selection, out.timings.regression, out.timings.detection
    );
    if let Some(m) = &out.metrics {
        info!(
            "auc {}, oa {:.4}, kappa {}",
            m.auc.map_or("n/a".into(), |v| format!("{v:.4}")),
            m.oa,
            m.kappa.map_or("n/a".into(), |v| format!("{v:.4}"))
        );
    }
    Ok(())
}
