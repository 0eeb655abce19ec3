use std::path::Path;

use kanpnp::admm::{fixed_point_report, init_state, mu_schedule, run_pnp_admm, AdmmConfig};
use kanpnp::experiment::{execute, run_experiment, write_outputs, ExperimentConfig, Prior, Task};
use kanpnp::imageio::{load_image, save_image};
use kanpnp::kan::{init_network, BasisSpec};
use kanpnp::operators::make_downsample;
use kanpnp::trainer::DenoiseConfig;
use kanpnp::{ImageGrid, Shape};

fn fixture(dir: &Path) -> std::path::PathBuf {
    let img = ImageGrid::from_fn(Shape::new(24, 32, 3), |r, c, ch| {
        let edge = if c > 12 + r / 3 { 0.8 } else { 0.2 };
        (edge + 0.05 * ch as f64 + 0.01 * ((r * c) % 7) as f64).min(1.0)
    });
    let p = dir.join("gt.png");
    save_image(&img, &p).unwrap();
    p
}

fn small(task: Task, prior: Prior, gt: &Path, out: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        task,
        prior,
        ground_truth: Some(gt.to_path_buf()),
        width: 32,
        height: 24,
        output_dir: out.to_path_buf(),
        ..ExperimentConfig::default()
    };
    cfg.network.hidden = vec![12, 6];
    cfg.train.iterations = 20;
    cfg.admm.iterations = 3;
    cfg.admm.denoise = DenoiseConfig {
        inner_steps: 3,
        ..DenoiseConfig::default()
    };
    cfg
}

#[test]
fn experiments_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let gt = fixture(dir.path());
    let cfg = small(Task::Sr2, Prior::KanBspline, &gt, dir.path());
    let a = execute(&cfg).unwrap();
    let b = execute(&cfg).unwrap();
    assert_eq!(a.reconstruction, b.reconstruction);
    assert_eq!(a.report.trace, b.report.trace);
    assert_eq!(a.report.pretrain_loss, b.report.pretrain_loss);
    assert_eq!(a.report.trace.len(), 3);
    assert_eq!(a.report.mu_schedule, mu_schedule(2.0, 0.2, 3).unwrap());
    assert!(a.report.pretrain_loss.last().unwrap() < &a.report.pretrain_loss[0]);
}

#[test]
fn every_task_and_prior_runs() {
    let dir = tempfile::tempdir().unwrap();
    let gt = fixture(dir.path());
    for task in Task::ALL {
        for prior in [Prior::KanBspline, Prior::KanFourier, Prior::Tv] {
            let out = execute(&small(task, prior, &gt, dir.path())).unwrap();
            let r = &out.report;
            assert!(r.psnr.unwrap().is_finite(), "{task:?} {prior:?}");
            assert_eq!(r.residuals.len(), 3);
            assert!(out.reconstruction.data().iter().all(|v| (0.0..=1.0).contains(v)));
            assert_eq!(r.fixed_point.is_some(), prior != Prior::Tv);
            assert_eq!(r.baseline("bicubic").is_some(), task.sr_factor().is_some());
        }
    }
}

#[test]
fn outputs_and_report_files() {
    let dir = tempfile::tempdir().unwrap();
    let gt = fixture(dir.path());
    let out_dir = dir.path().join("run");
    let cfg = small(Task::Joint, Prior::KanBspline, &gt, &out_dir);
    let report = run_experiment(&cfg).unwrap();
    for f in [
        "reconstruction.png",
        "back_projection.png",
        "measurement.png",
        "trace.csv",
        "pretrain_loss.csv",
        "network.json",
        "report.json",
    ] {
        assert!(out_dir.join(f).exists(), "{f}");
    }
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("report.json")).unwrap()).unwrap();
    for key in ["task", "psnr", "ssim", "residuals", "mu_schedule", "lipschitz_bound", "wall_time_s", "seeds"] {
        assert!(json.get(key).is_some(), "{key}");
    }
    assert_eq!(json["task"], "joint");
    let trace = std::fs::read_to_string(out_dir.join("trace.csv")).unwrap();
    assert!(trace.starts_with("k,mu,residual,fidelity,psnr"));
    assert_eq!(trace.lines().count(), 4);
    let recon = load_image(&out_dir.join("reconstruction.png")).unwrap();
    assert_eq!(recon.shape(), report.shape);
}

#[test]
fn reconstructs_a_saved_measurement_without_ground_truth() {
    let dir = tempfile::tempdir().unwrap();
    let gt = fixture(dir.path());
    let first = small(Task::Sr2, Prior::KanBspline, &gt, &dir.path().join("a"));
    let outcome = execute(&first).unwrap();
    write_outputs(&outcome, &first.output_dir).unwrap();

    let mut second = small(Task::Sr2, Prior::KanBspline, &gt, &dir.path().join("b"));
    second.ground_truth = None;
    second.input = Some(first.output_dir.join("measurement.png"));
    let out = execute(&second).unwrap();
    assert!(out.report.psnr.is_none());
    assert_eq!(out.reconstruction.shape(), Shape::new(24, 32, 3));
}

#[test]
fn fixed_point_report_compares_mu_with_lipschitz_constants() {
    let net = init_network(&[2, 8, 3], BasisSpec::bspline(5, 3), 1).unwrap();
    let op = make_downsample(16, 16, 2, 3).unwrap();
    let x = ImageGrid::from_fn(op.input(), |r, c, _| (r + c) as f64 / 30.0);
    let y = op.op_apply(&x).unwrap();
    let cfg = AdmmConfig {
        denoise: DenoiseConfig {
            inner_steps: 2,
            ..DenoiseConfig::default()
        },
        ..AdmmConfig::default()
    };
    let start = init_state(&y, &op, &net).unwrap();
    let (_, state, _) = run_pnp_admm(&y, &op, &net, &cfg, Some(&x)).unwrap();
    assert_eq!(state.initial_residual, start.x.sub(&start.z).unwrap().norm());
    let rep = fixed_point_report(&state, &net, 3).unwrap();
    assert_eq!(rep.residuals.len(), 5);
    assert!(rep.lipschitz_empirical <= rep.lipschitz_bound);
    for (k, &mu) in rep.mu.iter().enumerate() {
        assert_eq!(rep.mu_above_bound[k], mu > rep.lipschitz_bound);
        assert_eq!(rep.mu_above_empirical[k], mu > rep.lipschitz_empirical);
    }
    assert_eq!(rep.final_below_initial, rep.residuals[4] < rep.initial_residual);
    assert!(state.trace.iter().all(|t| t.psnr.is_some()));
}
