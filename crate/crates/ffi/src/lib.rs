//! C ABI for kanpnp.
//!
//! Objects cross the boundary as opaque handles created by `*_new`/`*_load`
//! functions and released with the matching `*_free`. Every fallible call
//! returns a [`KanpnpStatus`]; on failure a message for the calling thread is
//! available from [`kanpnp_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use kanpnp::experiment::{run_experiment, ExperimentConfig, Report};
use kanpnp::imageio::{load_image, save_image};
use kanpnp::kan::{
    init_network, lipschitz_empirical, lipschitz_upper_bound, load_network, save_network, BasisSpec,
    KanNetwork,
};
use kanpnp::metrics::{psnr, ssim};
use kanpnp::{Error, ImageGrid, Shape};

pub const KANPNP_BASIS_BSPLINE: u32 = 0;
pub const KANPNP_BASIS_FOURIER: u32 = 1;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KanpnpStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Shape = 4,
    Numerical = 5,
    Io = 6,
    Format = 7,
    Panic = 8,
}

/// An image of `f64` samples in row-major, channel-interleaved order.
pub struct KanpnpImage {
    inner: ImageGrid,
}

/// A Kolmogorov-Arnold network mapping coordinates to pixel values.
pub struct KanpnpNetwork {
    inner: KanNetwork,
}

/// The result of one reconstruction experiment.
pub struct KanpnpReport {
    inner: Report,
    json: CString,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(KanpnpStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        Failure(status_of(&e), msg)
    }
}

fn status_of(e: &Error) -> KanpnpStatus {
    match e {
        Error::Stage { source, .. } => status_of(source),
        Error::Config(_) | Error::Usage(_) => KanpnpStatus::Config,
        Error::Shape { .. } => KanpnpStatus::Shape,
        Error::Numerical { .. } => KanpnpStatus::Numerical,
        Error::Io(_) => KanpnpStatus::Io,
        Error::UnsupportedFormat(_) | Error::Image(_) | Error::Serde(_) => KanpnpStatus::Format,
    }
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(KanpnpStatus::InvalidArgument, msg.into())
}

fn null(name: &str) -> Failure {
    Failure(KanpnpStatus::NullPointer, format!("{name} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> KanpnpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => KanpnpStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(&msg);
            status
        }
        Err(_) => {
            set_last_error("internal panic");
            KanpnpStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, name: &str) -> Result<&'a T, Failure> {
    unsafe { p.as_ref() }.ok_or_else(|| null(name))
}

unsafe fn out_ref<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Failure> {
    unsafe { p.as_mut() }.ok_or_else(|| null(name))
}

unsafe fn path_arg(p: *const c_char, name: &str) -> Result<PathBuf, Failure> {
    Ok(PathBuf::from(unsafe { str_arg(p, name)? }))
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(name));
    }
    unsafe { CStr::from_ptr(p) }
        .to_str()
        .map_err(|_| invalid(format!("{name} is not valid UTF-8")))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, name: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(name));
    }
    Ok(unsafe { std::slice::from_raw_parts(p, len) })
}

unsafe fn slice_out<'a, T>(p: *mut T, len: usize, name: &str) -> Result<&'a mut [T], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(name));
    }
    Ok(unsafe { std::slice::from_raw_parts_mut(p, len) })
}

fn boxed<T>(value: T) -> *mut T {
    Box::into_raw(Box::new(value))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn kanpnp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or NULL. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn kanpnp_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Creates an image from `height * width * channels` samples.
///
/// # Safety
/// `data` must point to that many readable doubles and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn kanpnp_image_new(
    height: usize,
    width: usize,
    channels: usize,
    data: *const f64,
    out: *mut *mut KanpnpImage,
) -> KanpnpStatus {
    guard(|| {
        let out = unsafe { out_ref(out, "out")? };
        let len = height
            .checked_mul(width)
            .and_then(|n| n.checked_mul(channels))
            .ok_or_else(|| invalid("image dimensions overflow"))?;
        if len == 0 {
            return Err(invalid("image dimensions must be positive"));
        }
        let data = unsafe { slice_arg(data, len, "data")? };
        let inner = ImageGrid::from_vec(Shape::new(height, width, channels), data.to_vec())?;
        *out = boxed(KanpnpImage { inner });
        Ok(())
    })
}

/// Reads an 8-bit PNG into `[0, 1]` samples.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn kanpnp_image_load(path: *const c_char, out: *mut *mut KanpnpImage) -> KanpnpStatus {
    guard(|| {
        let out = unsafe { out_ref(out, "out")? };
        let inner = load_image(&unsafe { path_arg(path, "path")? })?;
        *out = boxed(KanpnpImage { inner });
        Ok(())
    })
}

/// Writes an image as an 8-bit PNG, clamping samples to `[0, 1]`.
///
/// # Safety
/// `image` must come from this library and `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn kanpnp_image_save(image: *const KanpnpImage, path: *const c_char) -> KanpnpStatus {
    guard(|| {
        let image = unsafe { deref(image, "image")? };
        save_image(&image.inner, &unsafe { path_arg(path, "path")? })?;
        Ok(())
    })
}

/// # Safety
/// `image` must come from this library; the out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn kanpnp_image_dims(
    image: *const KanpnpImage,
    height: *mut usize,
    width: *mut usize,
    channels: *mut usize,
) -> KanpnpStatus {
    guard(|| {
        let s = unsafe { deref(image, "image")? }.inner.shape();
        *unsafe { out_ref(height, "height")? } = s.height;
        *unsafe { out_ref(width, "width")? } = s.width;
        *unsafe { out_ref(channels, "channels")? } = s.channels;
        Ok(())
    })
}

/// Copies the samples into `buffer`, which must hold exactly
/// `height * width * channels` doubles.
///
/// # Safety
/// `buffer` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn kanpnp_image_copy_data(
    image: *const KanpnpImage,
    buffer: *mut f64,
    len: usize,
) -> KanpnpStatus {
    guard(|| {
        let data = unsafe { deref(image, "image")? }.inner.data();
        if len != data.len() {
            return Err(invalid(format!("buffer holds {len} values, image has {}", data.len())));
        }
        unsafe { slice_out(buffer, len, "buffer")? }.copy_from_slice(data);
        Ok(())
    })
}

/// # Safety
/// `image` must come from this library and not be used afterwards. NULL is
/// ignored.
#[no_mangle]
pub unsafe extern "C" fn kanpnp_image_free(image: *mut KanpnpImage) {
    if !image.is_null() {
        drop(unsafe { Box::from_raw(image) });
    }
}

/// Peak signal-to-noise ratio in dB of `test` against `reference`.
///
/// # Safety
/// Both images must come from this library and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn kanpnp_psnr(
    reference: *const KanpnpImage,
    test: *const KanpnpImage,
    peak: f64,
    out: *mut f64,
) -> KanpnpStatus {
    guard(|| {
        let (a, b) = unsafe { (deref(reference, "reference")?, deref(test, "test")?) };
        *unsafe { out_ref(out, "out")? } = psnr(&a.inner, &b.inner, peak)?;
        Ok(())
    })
}

/// Mean structural similarity of `test` against `reference`.
///
/// # Safety
/// Both images must come from this library and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn kanpnp_ssim(
    reference: *const KanpnpImage,
    test: *const KanpnpImage,
    out: *mut f64,
) -> KanpnpStatus {
    guard(|| {
        let (a, b) = unsafe { (deref(reference, "reference")?, deref(test, "test")?) };
        *unsafe { out_ref(out, "out")? } = ssim(&a.inner, &b.inner)?;
        Ok(())
    })
}

/// Initializes a network with layer widths `dims[0..n_dims]`. `basis` is one
/// of the `KANPNP_BASIS_*` constants; `order` is the spline degree or the
/// Fourier harmonic count.
///
/// # Safety
/// `dims` must point to `n_dims` readable values and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn kanpnp_network_new(
    dims: *const usize,
    n_dims: usize,
    basis: u32,
    grid_size: usize,
    order: usize,
    seed: u64,
    out: *mut *mut KanpnpNetwork,
) -> KanpnpStatus {
    guard(|| {
        let out = unsafe { out_ref(out, "out")? };
        let dims = unsafe { slice_arg(dims, n_dims, "dims")? };
        let spec = match basis {
            KANPNP_BASIS_BSPLINE => BasisSpec::bspline(grid_size, order),
            KANPNP_BASIS_FOURIER => BasisSpec::fourier(grid_size, order),
            other => return Err(invalid(format!("unknown basis code {other}"))),
        };
        let inner = init_network(dims, spec, seed)?;
        *out = boxed(KanpnpNetwork { inner });
        Ok(())
    })
}

/// Reads a network saved by [`kanpnp_network_save`] or the command line tool.
///
/// # Safety
/// `path` must be NUL-terminated and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn kanpnp_network_load(
    path: *const c_char,
    out: *mut *mut KanpnpNetwork,
) -> KanpnpStatus {
    guard(|| {
        let out = unsafe { out_ref(out, "out")? };
        let inner = load_network(unsafe { path_arg(path, "path")? })?;
        *out = boxed(KanpnpNetwork { inner });
        Ok(())
    })
}

/// # Safety
/// `network` must come from this library and `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn kanpnp_network_save(
    network: *const KanpnpNetwork,
    path: *const c_char,
) -> KanpnpStatus {
    guard(|| {
        let net = unsafe { deref(network, "network")? };
        save_network(&net.inner, unsafe { path_arg(path, "path")? })?;
        Ok(())
    })
}

/// Input and output widths of the network.
///
/// # Safety
/// `network` must come from this library; the out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn kanpnp_network_io_dims(
    network: *const KanpnpNetwork,
    in_dim: *mut usize,
    out_dim: *mut usize,
) -> KanpnpStatus {
    guard(|| {
        let net = &unsafe { deref(network, "network")? }.inner;
        *unsafe { out_ref(in_dim, "in_dim")? } = net.in_dim();
        *unsafe { out_ref(out_dim, "out_dim")? } = net.out_dim();
        Ok(())
    })
}

/// Evaluates `n_points` row-major inputs of width `in_dim` into `output`,
/// which must hold `n_points * out_dim` doubles.
///
/// # Safety
/// `inputs` and `output` must be valid for the sizes above.
#[no_mangle]
pub unsafe extern "C" fn kanpnp_network_eval(
    network: *const KanpnpNetwork,
    inputs: *const f64,
    n_points: usize,
    output: *mut f64,
    output_len: usize,
) -> KanpnpStatus {
    guard(|| {
        let net = &unsafe { deref(network, "network")? }.inner;
        let n_in = n_points
            .checked_mul(net.in_dim())
            .ok_or_else(|| invalid("input size overflows"))?;
        let inputs = unsafe { slice_arg(inputs, n_in, "inputs")? };
        let expected = n_points * net.out_dim();
        if output_len != expected {
            return Err(invalid(format!("output holds {output_len} values, need {expected}")));
        }
        let values = net.eval(inputs)?;
        unsafe { slice_out(output, output_len, "output")? }.copy_from_slice(&values);
        Ok(())
    })
}

/// Certified upper bound and sampled estimate of the Lipschitz constant.
///
/// # Safety
/// `network` must come from this library; the out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn kanpnp_network_lipschitz(
    network: *const KanpnpNetwork,
    pairs: usize,
    seed: u64,
    bound: *mut f64,
    empirical: *mut f64,
) -> KanpnpStatus {
    guard(|| {
        let net = &unsafe { deref(network, "network")? }.inner;
        let bound = unsafe { out_ref(bound, "bound")? };
        let empirical = unsafe { out_ref(empirical, "empirical")? };
        *bound = lipschitz_upper_bound(net)?;
        *empirical = lipschitz_empirical(net, pairs, seed)?;
        Ok(())
    })
}

/// # Safety
/// `network` must come from this library and not be used afterwards. NULL is
/// ignored.
#[no_mangle]
pub unsafe extern "C" fn kanpnp_network_free(network: *mut KanpnpNetwork) {
    if !network.is_null() {
        drop(unsafe { Box::from_raw(network) });
    }
}

/// Runs a full experiment described by a TOML document and writes its
/// outputs to the configured directory.
///
/// # Safety
/// `config_toml` must be NUL-terminated and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn kanpnp_experiment_run(
    config_toml: *const c_char,
    out: *mut *mut KanpnpReport,
) -> KanpnpStatus {
    guard(|| {
        let out = unsafe { out_ref(out, "out")? };
        let text = unsafe { str_arg(config_toml, "config_toml")? };
        let cfg = ExperimentConfig::from_toml_str(text).map_err(|e| e.at("config"))?;
        let inner = run_experiment(&cfg)?;
        let json = CString::new(inner.to_json()?).map_err(|_| invalid("report contains NUL"))?;
        *out = boxed(KanpnpReport { inner, json });
        Ok(())
    })
}

/// PSNR and SSIM of the reconstruction; NaN when no ground truth was given.
///
/// # Safety
/// `report` must come from this library; the out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn kanpnp_report_metrics(
    report: *const KanpnpReport,
    psnr_db: *mut f64,
    ssim_value: *mut f64,
) -> KanpnpStatus {
    guard(|| {
        let r = &unsafe { deref(report, "report")? }.inner;
        *unsafe { out_ref(psnr_db, "psnr_db")? } = r.psnr.unwrap_or(f64::NAN);
        *unsafe { out_ref(ssim_value, "ssim_value")? } = r.ssim.unwrap_or(f64::NAN);
        Ok(())
    })
}

/// Copies up to `len` per-iteration `||x - z||` values into `buffer` and
/// stores the total count in `count`. Pass `len = 0` to query the count.
///
/// # Safety
/// `buffer` must point to `len` writable doubles and `count` must be writable.
#[no_mangle]
pub unsafe extern "C" fn kanpnp_report_residuals(
    report: *const KanpnpReport,
    buffer: *mut f64,
    len: usize,
    count: *mut usize,
) -> KanpnpStatus {
    guard(|| {
        let r = &unsafe { deref(report, "report")? }.inner;
        *unsafe { out_ref(count, "count")? } = r.residuals.len();
        let n = len.min(r.residuals.len());
        unsafe { slice_out(buffer, n, "buffer")? }.copy_from_slice(&r.residuals[..n]);
        Ok(())
    })
}

/// The full report as JSON. The string is owned by the report.
///
/// # Safety
/// `report` must come from this library.
#[no_mangle]
pub unsafe extern "C" fn kanpnp_report_json(report: *const KanpnpReport) -> *const c_char {
    match unsafe { report.as_ref() } {
        Some(r) => r.json.as_ptr(),
        None => {
            set_last_error("report is null");
            ptr::null()
        }
    }
}

/// # Safety
/// `report` must come from this library and not be used afterwards. NULL is
/// ignored.
#[no_mangle]
pub unsafe extern "C" fn kanpnp_report_free(report: *mut KanpnpReport) {
    if !report.is_null() {
        drop(unsafe { Box::from_raw(report) });
    }
}
