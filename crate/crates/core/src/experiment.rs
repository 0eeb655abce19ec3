//! End-to-end experiments: load, degrade, pretrain, reconstruct, evaluate.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::admm::{
    fixed_point_report, run_admm, run_pnp_admm, save_trace_csv, AdmmConfig, AdmmState,
    FixedPointReport, TraceRecord, TvSteps,
};
use crate::error::{Error, Result, StageExt};
use crate::image::{ImageGrid, Shape};
use crate::imageio::{bicubic_upsample, load_image, resize_area, save_image};
use crate::kan::network::DEFAULT_HIDDEN;
use crate::kan::{init_network, save_network, BasisSpec, KanNetwork};
use crate::metrics::{psnr, ssim};
use crate::operators::{
    back_projection, compose, make_blur, make_downsample, make_mosaic, ForwardOperator, Psf,
};
use crate::trainer::{pretrain_prior, save_loss_csv, TrainConfig};

/// Version of the JSON report layout.
pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Environment variable naming the root for relative output directories.
pub const OUTPUT_ROOT_ENV: &str = "KANPNP_OUTPUT_ROOT";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum Task {
    Sr2,
    Sr4,
    Sr8,
    Deconv,
    Demosaic,
    Joint,
}

impl Task {
    pub const ALL: [Task; 6] = [Task::Sr2, Task::Sr4, Task::Sr8, Task::Deconv, Task::Demosaic, Task::Joint];

    pub fn sr_factor(self) -> Option<usize> {
        match self {
            Task::Sr2 => Some(2),
            Task::Sr4 => Some(4),
            Task::Sr8 => Some(8),
            _ => None,
        }
    }

    /// Side lengths must be multiples of this.
    pub fn divisor(self) -> usize {
        match self {
            Task::Demosaic | Task::Joint => 2,
            t => t.sr_factor().unwrap_or(1),
        }
    }

    pub fn needs_color(self) -> bool {
        matches!(self, Task::Demosaic | Task::Joint)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Task::Sr2 => "sr2",
            Task::Sr4 => "sr4",
            Task::Sr8 => "sr8",
            Task::Deconv => "deconv",
            Task::Demosaic => "demosaic",
            Task::Joint => "joint",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum Prior {
    KanBspline,
    KanFourier,
    Tv,
}

impl Prior {
    pub fn as_str(self) -> &'static str {
        match self {
            Prior::KanBspline => "kan_bspline",
            Prior::KanFourier => "kan_fourier",
            Prior::Tv => "tv",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NetworkConfig {
    pub hidden: Vec<usize>,
    pub grid_size: usize,
    pub order: usize,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            hidden: DEFAULT_HIDDEN.to_vec(),
            grid_size: 5,
            order: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OperatorConfig {
    /// Side of the Gaussian PSF for the blur tasks.
    pub psf_size: usize,
    pub psf_std: f64,
    /// Plain-text PSF replacing the Gaussian.
    pub psf_file: Option<PathBuf>,
    /// Standard deviation of Gaussian noise added to synthesized measurements.
    pub measurement_noise: f64,
}

impl Default for OperatorConfig {
    fn default() -> Self {
        OperatorConfig {
            psf_size: 5,
            psf_std: 1.0,
            psf_file: None,
            measurement_noise: 0.0,
        }
    }
}

impl OperatorConfig {
    pub fn psf(&self) -> Result<Psf> {
        match &self.psf_file {
            Some(p) => Psf::load(p),
            None => Psf::gaussian(self.psf_size, self.psf_std),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TvConfig {
    pub weight: f64,
    pub iters: usize,
}

impl Default for TvConfig {
    fn default() -> Self {
        TvConfig {
            weight: 0.1,
            iters: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: Task,
    /// Clean image; measurements are synthesized from it and metrics reported.
    pub ground_truth: Option<PathBuf>,
    /// A measurement to reconstruct directly when no ground truth is given.
    pub input: Option<PathBuf>,
    pub prior: Prior,
    /// Working width and height the ground truth is resized to.
    pub width: usize,
    pub height: usize,
    pub network: NetworkConfig,
    pub train: TrainConfig,
    pub admm: AdmmConfig,
    pub operator: OperatorConfig,
    pub tv: TvConfig,
    pub output_dir: PathBuf,
    /// Seeds network initialization and measurement noise.
    pub seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            task: Task::Sr2,
            ground_truth: None,
            input: None,
            prior: Prior::KanBspline,
            width: 512,
            height: 384,
            network: NetworkConfig::default(),
            train: TrainConfig::default(),
            admm: AdmmConfig::default(),
            operator: OperatorConfig::default(),
            tv: TvConfig::default(),
            output_dir: PathBuf::from("output"),
            seed: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config(e.to_string()))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Serde(e.to_string()))
    }

    /// Reads a `.json` file as JSON and anything else as TOML.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        if path.extension().is_some_and(|e| e == "json") {
            Ok(serde_json::from_str(&text)?)
        } else {
            Self::from_toml_str(&text)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.ground_truth.is_none() && self.input.is_none() {
            return Err(Error::config("either ground_truth or input must be set"));
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::config("working size must be non-empty"));
        }
        if !(self.operator.measurement_noise >= 0.0) {
            return Err(Error::config("measurement_noise must be non-negative"));
        }
        if matches!(self.prior, Prior::Tv) && !(self.tv.weight > 0.0 && self.tv.iters > 0) {
            return Err(Error::config("tv prior needs weight > 0 and iters >= 1"));
        }
        self.train.validate()?;
        self.admm.validate()
    }

    pub fn basis(&self) -> BasisSpec {
        match self.prior {
            Prior::KanFourier => BasisSpec::fourier(self.network.grid_size, self.network.order),
            _ => BasisSpec::bspline(self.network.grid_size, self.network.order),
        }
    }

    pub fn dims(&self, channels: usize) -> Vec<usize> {
        let mut d = vec![2];
        d.extend(&self.network.hidden);
        d.push(channels);
        d
    }

    /// `output_dir`, placed under the output-root variable when relative.
    pub fn resolved_output_dir(&self) -> PathBuf {
        match std::env::var_os(OUTPUT_ROOT_ENV) {
            Some(root) if self.output_dir.is_relative() => PathBuf::from(root).join(&self.output_dir),
            _ => self.output_dir.clone(),
        }
    }
}

/// The degradation for `task` on a clean image of `shape`.
pub fn task_operator(task: Task, shape: Shape, op_cfg: &OperatorConfig) -> Result<ForwardOperator> {
    let (h, w, c) = (shape.height, shape.width, shape.channels);
    match task {
        Task::Sr2 | Task::Sr4 | Task::Sr8 => make_downsample(h, w, task.sr_factor().unwrap_or(1), c),
        Task::Deconv => make_blur(op_cfg.psf()?, h, w, c),
        Task::Demosaic => make_mosaic(h, w),
        Task::Joint => compose(make_mosaic(h, w)?, make_blur(op_cfg.psf()?, h, w, 3)?),
    }
}

/// Resizes to the working size, then crops to the task's divisibility.
pub fn prepare_ground_truth(img: &ImageGrid, cfg: &ExperimentConfig) -> Result<ImageGrid> {
    if cfg.task.needs_color() && img.channels() != 3 {
        return Err(Error::config(format!("task {} needs a colour image", cfg.task.as_str())));
    }
    let resized = if (img.height(), img.width()) == (cfg.height, cfg.width) {
        img.clone()
    } else {
        resize_area(img, cfg.height, cfg.width)?
    };
    let d = cfg.task.divisor();
    let (h, w) = (resized.height() / d * d, resized.width() / d * d);
    if h == 0 || w == 0 {
        return Err(Error::config(format!("working size too small for {}", cfg.task.as_str())));
    }
    if (h, w) == (resized.height(), resized.width()) {
        Ok(resized)
    } else {
        resized.crop(h, w)
    }
}

/// Input shape of the task operator that produced a loaded measurement.
fn shape_from_measurement(task: Task, y: &ImageGrid) -> Result<Shape> {
    let s = y.shape();
    match task {
        t if t.sr_factor().is_some() => {
            let f = t.sr_factor().unwrap_or(1);
            Ok(Shape::new(s.height * f, s.width * f, s.channels))
        }
        Task::Demosaic | Task::Joint => {
            if s.channels != 1 {
                return Err(Error::config("mosaic measurements must be single-channel"));
            }
            Ok(Shape::new(s.height, s.width, 3))
        }
        _ => Ok(s),
    }
}

pub fn synthesize_measurement(
    op: &ForwardOperator,
    clean: &ImageGrid,
    noise: f64,
    seed: u64,
) -> Result<ImageGrid> {
    let mut y = op.op_apply(clean)?;
    if noise > 0.0 {
        let n = Normal::new(0.0, noise).map_err(|e| Error::config(e.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        y.data_mut().iter_mut().for_each(|v| *v += n.sample(&mut rng));
    }
    Ok(y)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Score {
    pub name: String,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Seeds {
    pub experiment: u64,
    pub train: u64,
    pub admm: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: u32,
    pub task: Task,
    pub prior: Prior,
    pub shape: Shape,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub psnr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub ssim: Option<f64>,
    /// Reference reconstructions scored on the same measurement.
    pub baselines: Vec<Score>,
    pub outer_iterations: usize,
    pub residuals: Vec<f64>,
    pub mu_schedule: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub lipschitz_bound: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub fixed_point: Option<FixedPointReport>,
    pub pretrain_loss: Vec<f64>,
    pub trace: Vec<TraceRecord>,
    pub wall_time_s: f64,
    pub pretrain_time_s: f64,
    pub admm_time_s: f64,
    pub seeds: Seeds,
    pub config: ExperimentConfig,
}

impl Report {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn baseline(&self, name: &str) -> Option<&Score> {
        self.baselines.iter().find(|b| b.name == name)
    }
}

/// Everything an experiment produced, before anything is written.
#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub report: Report,
    pub reconstruction: ImageGrid,
    pub measurement: ImageGrid,
    pub back_projection: ImageGrid,
    pub ground_truth: Option<ImageGrid>,
    pub network: Option<KanNetwork>,
}

fn score(name: &str, gt: &ImageGrid, img: &ImageGrid) -> Result<Score> {
    let img = img.clamp01();
    Ok(Score {
        name: name.into(),
        psnr: psnr(gt, &img, 1.0)?,
        ssim: ssim(gt, &img)?,
    })
}

/// Runs an experiment in memory.
pub fn execute(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    let start = Instant::now();
    cfg.validate().stage("config")?;
    let (gt, y, op) = match &cfg.ground_truth {
        Some(path) => {
            let raw = load_image(path).stage("load")?;
            let gt = prepare_ground_truth(&raw, cfg).stage("load")?;
            let op = task_operator(cfg.task, gt.shape(), &cfg.operator).stage("operator")?;
            let y = synthesize_measurement(&op, &gt, cfg.operator.measurement_noise, cfg.seed)
                .stage("degrade")?;
            (Some(gt), y, op)
        }
        None => {
            let path = cfg.input.as_ref().ok_or_else(|| Error::config("no input image"))?;
            let y = load_image(path).stage("load")?;
            let shape = shape_from_measurement(cfg.task, &y).stage("load")?;
            let op = task_operator(cfg.task, shape, &cfg.operator).stage("operator")?;
            y.ensure_shape(op.output()).stage("load")?;
            (None, y, op)
        }
    };
    let z0 = back_projection(&op, &y).stage("back-projection")?;
    let channels = op.input().channels;

    let mut pretrain_time_s = 0.0;
    let (recon, state, network, pretrain_loss) = match cfg.prior {
        Prior::Tv => {
            let state = AdmmState::new(z0.clone(), z0.clone()).stage("init")?;
            let mut steps = TvSteps {
                weight: cfg.tv.weight,
                tv_iters: cfg.tv.iters,
                op: &op,
                y: &y,
                cg: cfg.admm.cg,
            };
            let (recon, state) = run_admm(&mut steps, state, &cfg.admm, gt.as_ref()).stage("admm")?;
            (recon, state, None, Vec::new())
        }
        Prior::KanBspline | Prior::KanFourier => {
            let net = init_network(&cfg.dims(channels), cfg.basis(), cfg.seed).stage("init")?;
            let t = Instant::now();
            let (net, loss) = pretrain_prior(&net, &z0.clamp01(), &cfg.train).stage("pretrain")?;
            pretrain_time_s = t.elapsed().as_secs_f64();
            let (recon, state, net) =
                run_pnp_admm(&y, &op, &net, &cfg.admm, gt.as_ref()).stage("admm")?;
            (recon, state, Some(net), loss)
        }
    };
    let (fixed_point, lipschitz_bound) = match &network {
        Some(net) => {
            let rep = fixed_point_report(&state, net, cfg.admm.seed).stage("diagnostics")?;
            let b = rep.lipschitz_bound;
            (Some(rep), Some(b))
        }
        None => (None, None),
    };

    let mut baselines = Vec::new();
    let (mut p, mut s) = (None, None);
    if let Some(gt) = &gt {
        let sc = score("reconstruction", gt, &recon).stage("metrics")?;
        p = Some(sc.psnr);
        s = Some(sc.ssim);
        baselines.push(score("back_projection", gt, &z0).stage("metrics")?);
        if let Some(f) = cfg.task.sr_factor() {
            let bic = bicubic_upsample(&y, f).stage("baseline")?;
            baselines.push(score("bicubic", gt, &bic).stage("metrics")?);
        }
    }
    let wall = start.elapsed().as_secs_f64();
    let admm_time_s = (wall - pretrain_time_s).max(0.0);
    let report = Report {
        schema_version: REPORT_SCHEMA_VERSION,
        task: cfg.task,
        prior: cfg.prior,
        shape: op.input(),
        psnr: p,
        ssim: s,
        baselines,
        outer_iterations: state.k,
        residuals: state.residuals(),
        mu_schedule: state.trace.iter().map(|r| r.mu).collect(),
        lipschitz_bound,
        fixed_point,
        pretrain_loss,
        trace: state.trace.clone(),
        wall_time_s: wall,
        pretrain_time_s,
        admm_time_s,
        seeds: Seeds {
            experiment: cfg.seed,
            train: cfg.train.seed,
            admm: cfg.admm.seed,
        },
        config: cfg.clone(),
    };
    Ok(ExperimentOutcome {
        report,
        reconstruction: recon,
        measurement: y,
        back_projection: z0,
        ground_truth: gt,
        network,
    })
}

/// Writes the outcome's files into `dir` and returns their paths.
pub fn write_outputs(outcome: &ExperimentOutcome, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let mut put = |name: &str| {
        let p = dir.join(name);
        written.push(p.clone());
        p
    };
    save_image(&outcome.reconstruction, &put("reconstruction.png"))?;
    save_image(&outcome.back_projection, &put("back_projection.png"))?;
    save_image(&outcome.measurement, &put("measurement.png"))?;
    save_trace_csv(&put("trace.csv"), &outcome.report.trace)?;
    if let Some(net) = &outcome.network {
        save_loss_csv(&put("pretrain_loss.csv"), &outcome.report.pretrain_loss)?;
        save_network(net, &put("network.json"))?;
    }
    std::fs::write(put("report.json"), outcome.report.to_json()?)?;
    Ok(written)
}

/// Runs the experiment and writes its outputs under the resolved output
/// directory.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<Report> {
    let outcome = execute(cfg)?;
    write_outputs(&outcome, &cfg.resolved_output_dir()).stage("write")?;
    Ok(outcome.report)
}
