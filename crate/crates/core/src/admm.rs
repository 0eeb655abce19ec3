//! Plug-and-play ADMM:
//!
//! ```text
//! x <- H(z - u)            denoise
//! z <- prox_f(x + u, mu_k)  data fidelity
//! u <- u + x - z           dual update
//! ```
//!
//! with a geometric penalty schedule and per-iteration residual tracking.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::ImageGrid;
use crate::kan::{lipschitz_empirical, lipschitz_upper_bound, KanNetwork};
use crate::metrics::psnr;
use crate::operators::{back_projection, ForwardOperator};
use crate::prox::{prox_data_fidelity, CgConfig};
use crate::trainer::{apply_denoiser, render, DenoiseConfig};
use crate::tv::tv_denoise;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdmmConfig {
    pub iterations: usize,
    pub mu_start: f64,
    pub mu_end: f64,
    pub denoise: DenoiseConfig,
    pub cg: CgConfig,
    pub record_trace: bool,
    pub seed: u64,
}

impl Default for AdmmConfig {
    fn default() -> Self {
        AdmmConfig {
            iterations: 5,
            mu_start: 2.0,
            mu_end: 0.2,
            denoise: DenoiseConfig::default(),
            cg: CgConfig::default(),
            record_trace: true,
            seed: 0,
        }
    }
}

impl AdmmConfig {
    pub fn validate(&self) -> Result<()> {
        mu_schedule(self.mu_start, self.mu_end, self.iterations)?;
        self.denoise.validate()?;
        self.cg.validate()
    }
}

/// `k` values from `mu_start` to `mu_end` in geometric progression.
pub fn mu_schedule(mu_start: f64, mu_end: f64, k: usize) -> Result<Vec<f64>> {
    if k == 0 {
        return Err(Error::config("ADMM needs at least one iteration"));
    }
    if !(mu_end > 0.0 && mu_start >= mu_end && mu_start.is_finite()) {
        return Err(Error::config(format!(
            "need mu_start >= mu_end > 0, got {mu_start} and {mu_end}"
        )));
    }
    if k == 1 {
        return Ok(vec![mu_start]);
    }
    let ratio = mu_end / mu_start;
    let last = (k - 1) as f64;
    Ok((0..k)
        .map(|i| match i {
            0 => mu_start,
            i if i == k - 1 => mu_end,
            i => mu_start * ratio.powf(i as f64 / last),
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub k: usize,
    pub mu: f64,
    /// `||x - z||_2` after the dual update.
    pub residual: f64,
    /// `||A z - y||^2`.
    pub fidelity: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub psnr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdmmState {
    pub x: ImageGrid,
    pub z: ImageGrid,
    pub u: ImageGrid,
    /// Completed iterations.
    pub k: usize,
    pub trace: Vec<TraceRecord>,
    /// `||x0 - z0||_2` of the starting point.
    pub initial_residual: f64,
}

impl AdmmState {
    /// Starting state with `u = 0`.
    pub fn new(x: ImageGrid, z: ImageGrid) -> Result<Self> {
        let initial_residual = x.sub(&z)?.norm();
        Ok(AdmmState {
            u: ImageGrid::zeros(z.shape()),
            x,
            z,
            k: 0,
            trace: Vec::new(),
            initial_residual,
        })
    }

    pub fn residuals(&self) -> Vec<f64> {
        self.trace.iter().map(|r| r.residual).collect()
    }
}

/// The three steps of one iteration, injectable for testing.
pub trait PnpSteps {
    fn denoise(&mut self, v: &ImageGrid, k: usize) -> Result<ImageGrid>;
    fn prox(&mut self, v: &ImageGrid, mu: f64, k: usize) -> Result<ImageGrid>;
    fn dual_update(&mut self, u: &ImageGrid, x: &ImageGrid, z: &ImageGrid) -> Result<ImageGrid> {
        dual_ascent(u, x, z)
    }
    /// Data-fidelity value of an iterate, for the trace.
    fn fidelity(&self, z: &ImageGrid) -> Result<f64>;
}

/// `u + x - z`.
pub fn dual_ascent(u: &ImageGrid, x: &ImageGrid, z: &ImageGrid) -> Result<ImageGrid> {
    u.add(&x.sub(z)?)
}

/// Fine-tune-and-render KAN prior with the operator's fidelity prox.
pub struct KanSteps<'a> {
    pub net: KanNetwork,
    pub op: &'a ForwardOperator,
    pub y: &'a ImageGrid,
    pub denoise: DenoiseConfig,
    pub cg: CgConfig,
}

impl PnpSteps for KanSteps<'_> {
    fn denoise(&mut self, v: &ImageGrid, _k: usize) -> Result<ImageGrid> {
        let (x, net) = apply_denoiser(&self.net, v, &self.denoise)?;
        self.net = net;
        Ok(x)
    }

    fn prox(&mut self, v: &ImageGrid, mu: f64, _k: usize) -> Result<ImageGrid> {
        Ok(prox_data_fidelity(self.op, self.y, v, mu, &self.cg)?.z)
    }

    fn fidelity(&self, z: &ImageGrid) -> Result<f64> {
        fidelity(self.op, self.y, z)
    }
}

/// Total-variation prior with the operator's fidelity prox.
pub struct TvSteps<'a> {
    pub weight: f64,
    pub tv_iters: usize,
    pub op: &'a ForwardOperator,
    pub y: &'a ImageGrid,
    pub cg: CgConfig,
}

impl PnpSteps for TvSteps<'_> {
    fn denoise(&mut self, v: &ImageGrid, _k: usize) -> Result<ImageGrid> {
        tv_denoise(v, self.weight, self.tv_iters)
    }

    fn prox(&mut self, v: &ImageGrid, mu: f64, _k: usize) -> Result<ImageGrid> {
        Ok(prox_data_fidelity(self.op, self.y, v, mu, &self.cg)?.z)
    }

    fn fidelity(&self, z: &ImageGrid) -> Result<f64> {
        fidelity(self.op, self.y, z)
    }
}

/// `||A z - y||^2`.
pub fn fidelity(op: &ForwardOperator, y: &ImageGrid, z: &ImageGrid) -> Result<f64> {
    let r = op.op_apply(z)?.sub(y)?;
    Ok(r.dot(&r))
}

/// Starting point: `z` is the back-projection of `y`, `x` the render of the
/// network and `u` zero.
pub fn init_state(y: &ImageGrid, op: &ForwardOperator, net: &KanNetwork) -> Result<AdmmState> {
    let z = back_projection(op, y)?;
    let s = op.input();
    let x = render(net, s.height, s.width)?;
    AdmmState::new(x, z)
}

fn finite(img: ImageGrid, step: &str, k: usize) -> Result<ImageGrid> {
    if img.is_finite() {
        Ok(img)
    } else {
        Err(Error::numerical(step, format!("non-finite iterate at iteration {k}")))
    }
}

/// Runs the iteration from `state` and returns the clamped final `z`.
pub fn run_admm(
    steps: &mut dyn PnpSteps,
    mut state: AdmmState,
    cfg: &AdmmConfig,
    ground_truth: Option<&ImageGrid>,
) -> Result<(ImageGrid, AdmmState)> {
    let mus = mu_schedule(cfg.mu_start, cfg.mu_end, cfg.iterations)?;
    for (k, &mu) in mus.iter().enumerate() {
        let v = state.z.sub(&state.u)?;
        state.x = finite(steps.denoise(&v, k)?, "denoising step", k)?;
        let w = state.x.add(&state.u)?;
        state.z = finite(steps.prox(&w, mu, k)?, "data fidelity step", k)?;
        state.u = finite(steps.dual_update(&state.u, &state.x, &state.z)?, "dual update", k)?;
        state.k = k + 1;
        if cfg.record_trace {
            let psnr = match ground_truth {
                Some(gt) => Some(psnr(gt, &state.z.clamp01(), 1.0)?),
                None => None,
            };
            state.trace.push(TraceRecord {
                k,
                mu,
                residual: state.x.sub(&state.z)?.norm(),
                fidelity: steps.fidelity(&state.z)?,
                psnr,
            });
        }
    }
    Ok((state.z.clamp01(), state))
}

/// KAN-prior ADMM from [`init_state`]; returns the reconstruction, the final
/// state and the fine-tuned network.
pub fn run_pnp_admm(
    y: &ImageGrid,
    op: &ForwardOperator,
    net: &KanNetwork,
    cfg: &AdmmConfig,
    ground_truth: Option<&ImageGrid>,
) -> Result<(ImageGrid, AdmmState, KanNetwork)> {
    cfg.validate()?;
    let state = init_state(y, op, net)?;
    let mut steps = KanSteps {
        net: net.clone(),
        op,
        y,
        denoise: cfg.denoise,
        cg: cfg.cg,
    };
    let (recon, state) = run_admm(&mut steps, state, cfg, ground_truth)?;
    Ok((recon, state, steps.net))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedPointReport {
    /// `||x0 - z0||_2` before the first iteration.
    pub initial_residual: f64,
    pub residuals: Vec<f64>,
    pub final_below_initial: bool,
    /// Final residual over the initial one.
    pub residual_ratio: f64,
    pub mu: Vec<f64>,
    pub lipschitz_bound: f64,
    pub lipschitz_empirical: f64,
    pub mu_above_bound: Vec<bool>,
    pub mu_above_empirical: Vec<bool>,
}

/// Residual progress and the penalty compared with the prior's Lipschitz
/// constants.
pub fn fixed_point_report(state: &AdmmState, net: &KanNetwork, seed: u64) -> Result<FixedPointReport> {
    let residuals = state.residuals();
    let mu: Vec<f64> = state.trace.iter().map(|r| r.mu).collect();
    let bound = lipschitz_upper_bound(net)?;
    let emp = lipschitz_empirical(net, 2000, seed)?;
    let first = state.initial_residual;
    let last = residuals.last().copied().unwrap_or(first);
    let ratio = if first > 0.0 { last / first } else if last == 0.0 { 0.0 } else { f64::INFINITY };
    Ok(FixedPointReport {
        initial_residual: first,
        final_below_initial: last < first,
        residual_ratio: ratio,
        mu_above_bound: mu.iter().map(|&m| m > bound).collect(),
        mu_above_empirical: mu.iter().map(|&m| m > emp).collect(),
        residuals,
        mu,
        lipschitz_bound: bound,
        lipschitz_empirical: emp,
    })
}

/// Writes the trace as `k,mu,residual,fidelity,psnr` rows; `psnr` is empty
/// without ground truth.
pub fn write_trace_csv<W: Write>(out: W, trace: &[TraceRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["k", "mu", "residual", "fidelity", "psnr"])?;
    for r in trace {
        w.write_record([
            r.k.to_string(),
            r.mu.to_string(),
            r.residual.to_string(),
            r.fidelity.to_string(),
            r.psnr.map_or(String::new(), |p| p.to_string()),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_trace_csv(path: &Path, trace: &[TraceRecord]) -> Result<()> {
    write_trace_csv(std::fs::File::create(path)?, trace)
}

pub fn trace_to_json(trace: &[TraceRecord]) -> Result<String> {
    Ok(serde_json::to_string_pretty(trace)?)
}
