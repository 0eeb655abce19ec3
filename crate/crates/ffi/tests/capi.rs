use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use kanpnp_ffi::*;

fn last_error() -> String {
    let p = kanpnp_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn image(h: usize, w: usize, c: usize, data: &[f64]) -> *mut KanpnpImage {
    let mut out = ptr::null_mut();
    let st = unsafe { kanpnp_image_new(h, w, c, data.as_ptr(), &mut out) };
    assert_eq!(st, KanpnpStatus::Ok);
    out
}

#[test]
fn image_round_trip_and_metrics() {
    let data: Vec<f64> = (0..24).map(|i| i as f64 / 23.0).collect();
    let a = image(2, 4, 3, &data);
    let (mut h, mut w, mut c) = (0, 0, 0);
    assert_eq!(unsafe { kanpnp_image_dims(a, &mut h, &mut w, &mut c) }, KanpnpStatus::Ok);
    assert_eq!((h, w, c), (2, 4, 3));
    let mut back = vec![0.0; 24];
    assert_eq!(unsafe { kanpnp_image_copy_data(a, back.as_mut_ptr(), 24) }, KanpnpStatus::Ok);
    assert_eq!(back, data);
    assert_eq!(
        unsafe { kanpnp_image_copy_data(a, back.as_mut_ptr(), 23) },
        KanpnpStatus::InvalidArgument
    );

    let shifted: Vec<f64> = data.iter().map(|v| v + 0.1).collect();
    let b = image(2, 4, 3, &shifted);
    let mut db = 0.0;
    assert_eq!(unsafe { kanpnp_psnr(a, b, 1.0, &mut db) }, KanpnpStatus::Ok);
    assert!((db - 20.0).abs() < 1e-9);
    let mut s = 0.0;
    assert_eq!(unsafe { kanpnp_ssim(a, a, &mut s) }, KanpnpStatus::Config, "smaller than the window");
    let big: Vec<f64> = (0..144).map(|i| (i % 13) as f64 / 12.0).collect();
    let g = image(12, 12, 1, &big);
    assert_eq!(unsafe { kanpnp_ssim(g, g, &mut s) }, KanpnpStatus::Ok);
    assert_eq!(s, 1.0);
    unsafe { kanpnp_image_free(g) };

    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("a.png").to_str().unwrap()).unwrap();
    assert_eq!(unsafe { kanpnp_image_save(a, path.as_ptr()) }, KanpnpStatus::Ok);
    let mut loaded = ptr::null_mut();
    assert_eq!(unsafe { kanpnp_image_load(path.as_ptr(), &mut loaded) }, KanpnpStatus::Ok);
    let mut q = 0.0;
    assert_eq!(unsafe { kanpnp_psnr(a, loaded, 1.0, &mut q) }, KanpnpStatus::Ok);
    assert!(q > 50.0, "8-bit quantization only: {q}");

    unsafe {
        kanpnp_image_free(a);
        kanpnp_image_free(b);
        kanpnp_image_free(loaded);
        kanpnp_image_free(ptr::null_mut());
    }
}

#[test]
fn error_codes_and_messages() {
    let mut out = ptr::null_mut();
    let st = unsafe { kanpnp_image_new(2, 2, 1, ptr::null(), &mut out) };
    assert_eq!(st, KanpnpStatus::NullPointer);
    assert!(last_error().contains("data"));
    assert!(out.is_null());

    let st = unsafe { kanpnp_image_new(0, 2, 1, [0.0].as_ptr(), &mut out) };
    assert_eq!(st, KanpnpStatus::InvalidArgument);

    let missing = CString::new("/nonexistent/kanpnp.png").unwrap();
    assert_eq!(unsafe { kanpnp_image_load(missing.as_ptr(), &mut out) }, KanpnpStatus::Io);

    let a = image(2, 2, 1, &[0.0; 4]);
    let b = image(2, 3, 1, &[0.0; 6]);
    let mut v = 0.0;
    assert_eq!(unsafe { kanpnp_psnr(a, b, 1.0, &mut v) }, KanpnpStatus::Shape);
    assert!(last_error().contains("shape"));
    unsafe {
        kanpnp_image_free(a);
        kanpnp_image_free(b);
    }

    let bad = CString::new("task = \"sr3\"").unwrap();
    let mut report = ptr::null_mut();
    assert_eq!(unsafe { kanpnp_experiment_run(bad.as_ptr(), &mut report) }, KanpnpStatus::Config);
    assert!(report.is_null());
    assert!(unsafe { kanpnp_report_json(ptr::null()) }.is_null());
}

#[test]
fn network_eval_save_load_and_lipschitz() {
    let dims = [2usize, 5, 3];
    let mut net = ptr::null_mut();
    let st = unsafe { kanpnp_network_new(dims.as_ptr(), 3, KANPNP_BASIS_FOURIER, 5, 3, 11, &mut net) };
    assert_eq!(st, KanpnpStatus::Ok);
    let (mut i, mut o) = (0, 0);
    assert_eq!(unsafe { kanpnp_network_io_dims(net, &mut i, &mut o) }, KanpnpStatus::Ok);
    assert_eq!((i, o), (2, 3));

    let inputs = [0.1, -0.3, 0.7, 0.2];
    let mut first = [0.0; 6];
    assert_eq!(
        unsafe { kanpnp_network_eval(net, inputs.as_ptr(), 2, first.as_mut_ptr(), 6) },
        KanpnpStatus::Ok
    );
    assert!(first.iter().all(|v| v.is_finite()));

    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("net.json").to_str().unwrap()).unwrap();
    assert_eq!(unsafe { kanpnp_network_save(net, path.as_ptr()) }, KanpnpStatus::Ok);
    let mut loaded = ptr::null_mut();
    assert_eq!(unsafe { kanpnp_network_load(path.as_ptr(), &mut loaded) }, KanpnpStatus::Ok);
    let mut second = [0.0; 6];
    assert_eq!(
        unsafe { kanpnp_network_eval(loaded, inputs.as_ptr(), 2, second.as_mut_ptr(), 6) },
        KanpnpStatus::Ok
    );
    assert_eq!(first, second);

    let (mut bound, mut emp) = (0.0, 0.0);
    assert_eq!(
        unsafe { kanpnp_network_lipschitz(net, 200, 3, &mut bound, &mut emp) },
        KanpnpStatus::Ok
    );
    assert!(emp > 0.0 && emp <= bound, "{emp} {bound}");

    let st = unsafe { kanpnp_network_new(dims.as_ptr(), 3, 9, 5, 3, 0, &mut net) };
    assert_eq!(st, KanpnpStatus::InvalidArgument);
    unsafe {
        kanpnp_network_free(net);
        kanpnp_network_free(loaded);
    }
}

#[test]
fn experiment_report() {
    let dir = tempfile::tempdir().unwrap();
    let gt = dir.path().join("gt.png");
    let img = kanpnp::ImageGrid::from_fn(kanpnp::Shape::new(16, 16, 3), |r, c, ch| {
        ((r * 3 + c * 5 + ch * 7) % 16) as f64 / 15.0
    });
    kanpnp::imageio::save_image(&img, &gt).unwrap();
    let toml = format!(
        "task = \"sr2\"\nground_truth = {:?}\nwidth = 16\nheight = 16\noutput_dir = {:?}\n\
         [network]\nhidden = [8, 4]\n[train]\niterations = 3\n[admm]\niterations = 2\n\
         [admm.denoise]\ninner_steps = 1\n",
        gt.to_str().unwrap(),
        dir.path().join("out").to_str().unwrap()
    );
    let cfg = CString::new(toml).unwrap();
    let mut report = ptr::null_mut();
    let st = unsafe { kanpnp_experiment_run(cfg.as_ptr(), &mut report) };
    assert_eq!(st, KanpnpStatus::Ok, "{}", last_error());

    let (mut p, mut s) = (0.0, 0.0);
    assert_eq!(unsafe { kanpnp_report_metrics(report, &mut p, &mut s) }, KanpnpStatus::Ok);
    assert!(p.is_finite() && s.is_finite());
    let mut count = 0;
    assert_eq!(
        unsafe { kanpnp_report_residuals(report, ptr::null_mut(), 0, &mut count) },
        KanpnpStatus::Ok
    );
    assert_eq!(count, 2);
    let mut res = vec![0.0; count];
    assert_eq!(
        unsafe { kanpnp_report_residuals(report, res.as_mut_ptr(), count, &mut count) },
        KanpnpStatus::Ok
    );
    let json = unsafe { CStr::from_ptr(kanpnp_report_json(report)) }.to_str().unwrap();
    let v: serde_json::Value = serde_json::from_str(json).unwrap();
    assert_eq!(v["task"], "sr2");
    assert_eq!(v["outer_iterations"], 2);
    assert!(dir.path().join("out").join("reconstruction.png").exists());
    unsafe { kanpnp_report_free(report) };
}

#[test]
fn header_declares_the_api() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/kanpnp.h")).unwrap();
    for name in [
        "typedef struct KanpnpImage KanpnpImage",
        "typedef struct KanpnpNetwork KanpnpNetwork",
        "typedef struct KanpnpReport KanpnpReport",
        "KANPNP_STATUS_NULL_POINTER = 1",
        "kanpnp_last_error(void)",
        "kanpnp_experiment_run(",
        "kanpnp_network_lipschitz(",
    ] {
        assert!(header.contains(name), "missing {name}");
    }
}

#[test]
fn c_program_links_against_the_library() {
    let Ok(cc) = which_cc() else {
        eprintln!("no C compiler found, skipping");
        return;
    };
    let manifest = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    // tests run from target/<profile>/deps; the shared library sits one level up
    let exe = std::env::current_exe().unwrap();
    let lib_dir = exe.parent().unwrap().parent().unwrap().to_path_buf();
    if !lib_dir.join("libkanpnp_ffi.so").exists() {
        eprintln!("shared library not found in {}, skipping", lib_dir.display());
        return;
    }
    let out = tempfile::tempdir().unwrap();
    let bin = out.path().join("smoke");
    let status = Command::new(&cc)
        .arg(manifest.join("tests/c/smoke.c"))
        .arg("-I")
        .arg(manifest.join("include"))
        .arg("-L")
        .arg(&lib_dir)
        .arg(format!("-Wl,-rpath,{}", lib_dir.display()))
        .args(["-lkanpnp_ffi", "-lm", "-o"])
        .arg(&bin)
        .status()
        .unwrap();
    assert!(status.success(), "C compilation failed");
    let run = Command::new(&bin).output().unwrap();
    assert!(run.status.success(), "exit {:?}", run.status.code());
    assert!(String::from_utf8_lossy(&run.stdout).starts_with("ok 0.1.0"));
}

fn which_cc() -> Result<String, ()> {
    ["cc", "gcc", "clang"]
        .into_iter()
        .find(|c| Command::new(c).arg("--version").output().is_ok_and(|o| o.status.success()))
        .map(str::to_string)
        .ok_or(())
}
