use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use kanpnp::experiment::{task_operator, ExperimentConfig, Prior, Task};
use kanpnp::imageio::load_image;
use kanpnp::kan::{lipschitz_empirical, lipschitz_upper_bound, load_network};
use kanpnp::metrics::{psnr, ssim};
use kanpnp::operators::adjoint_check;
use kanpnp::{Error, Result, Shape};

#[derive(Parser)]
#[command(name = "kanpnp", version, about = "Plug-and-play ADMM with KAN image priors")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a prior and reconstruct one image.
    Run(RunArgs),
    /// Dot-product adjoint test for every task operator.
    AdjointCheck {
        #[arg(long, default_value_t = 64)]
        height: usize,
        #[arg(long, default_value_t = 64)]
        width: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Certified and sampled Lipschitz constants of a saved network.
    LipschitzReport {
        network: PathBuf,
        #[arg(long, default_value_t = 10_000)]
        pairs: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// PSNR and SSIM between two images.
    Metrics { reference: PathBuf, test: PathBuf },
}

#[derive(Args)]
struct RunArgs {
    /// TOML (or .json) experiment file; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    task: Option<Task>,
    #[arg(long, value_enum)]
    prior: Option<Prior>,
    #[arg(long)]
    ground_truth: Option<PathBuf>,
    #[arg(long)]
    input: Option<PathBuf>,
    /// Relative paths are placed under $KANPNP_OUTPUT_ROOT when it is set.
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    width: Option<usize>,
    #[arg(long)]
    height: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    pretrain_iters: Option<usize>,
    #[arg(long)]
    admm_iters: Option<usize>,
    #[arg(long)]
    inner_steps: Option<usize>,
    #[arg(long)]
    mu_start: Option<f64>,
    #[arg(long)]
    mu_end: Option<f64>,
    #[arg(long)]
    measurement_noise: Option<f64>,
    /// Print the effective configuration as TOML and exit.
    #[arg(long)]
    print_config: bool,
}

impl RunArgs {
    fn into_config(self) -> Result<(ExperimentConfig, bool)> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        macro_rules! set {
            ($field:expr, $value:expr) => {
                if let Some(v) = $value {
                    $field = v;
                }
            };
        }
        set!(cfg.task, self.task);
        set!(cfg.prior, self.prior);
        set!(cfg.width, self.width);
        set!(cfg.height, self.height);
        set!(cfg.seed, self.seed);
        set!(cfg.output_dir, self.output_dir);
        set!(cfg.train.iterations, self.pretrain_iters);
        set!(cfg.admm.iterations, self.admm_iters);
        set!(cfg.admm.denoise.inner_steps, self.inner_steps);
        set!(cfg.admm.mu_start, self.mu_start);
        set!(cfg.admm.mu_end, self.mu_end);
        set!(cfg.operator.measurement_noise, self.measurement_noise);
        if self.ground_truth.is_some() {
            cfg.ground_truth = self.ground_truth;
        }
        if self.input.is_some() {
            cfg.input = self.input;
        }
        Ok((cfg, self.print_config))
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run(args) => {
            let (cfg, print_only) = args.into_config().map_err(|e| e.at("config"))?;
            if print_only {
                print!("{}", cfg.to_toml_string()?);
                return Ok(());
            }
            let report = kanpnp::experiment::run_experiment(&cfg)?;
            let dir = cfg.resolved_output_dir();
            println!("task {} prior {}", report.task.as_str(), report.prior.as_str());
            if let (Some(p), Some(s)) = (report.psnr, report.ssim) {
                println!("psnr {p:.3} dB  ssim {s:.4}");
            }
            for b in &report.baselines {
                println!("baseline {:<16} psnr {:.3} dB  ssim {:.4}", b.name, b.psnr, b.ssim);
            }
            println!("residuals {:?}", report.residuals);
            println!("wall time {:.1} s, outputs in {}", report.wall_time_s, dir.display());
        }
        Command::AdjointCheck { height, width, seed } => {
            let shape = Shape::new(height, width, 3);
            for task in Task::ALL {
                let op = task_operator(task, shape, &Default::default()).map_err(|e| e.at("operator"))?;
                let d = adjoint_check(&op, seed)?;
                let verdict = if d < 1e-8 { "ok" } else { "FAIL" };
                println!("{:<9} {:<24} {d:.3e} {verdict}", task.as_str(), op.name());
            }
        }
        Command::LipschitzReport { network, pairs, seed } => {
            let net = load_network(&network).map_err(|e| e.at("load"))?;
            let bound = lipschitz_upper_bound(&net)?;
            let emp = lipschitz_empirical(&net, pairs, seed)?;
            println!("dims {:?}", net.dims());
            println!("upper bound {bound:.6e}");
            println!("empirical   {emp:.6e}");
        }
        Command::Metrics { reference, test } => {
            let a = load_image(&reference).map_err(|e| e.at("load"))?;
            let b = load_image(&test).map_err(|e| e.at("load"))?;
            println!("psnr {:.4} dB", psnr(&a, &b, 1.0)?);
            println!("ssim {:.6}", ssim(&a, &b)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let e = match e {
                e @ Error::Stage { .. } => e,
                e => e.at("run"),
            };
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
