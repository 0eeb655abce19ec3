//! Linear forward operators: anti-aliased decimation, periodic blur, Bayer
//! mosaicking, and their compositions, each with an exact adjoint.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft::Fft2;
use crate::image::{ImageGrid, Shape};

/// Any linear map between image-shaped spaces with a known adjoint.
pub trait LinearOperator {
    fn input_shape(&self) -> Shape;
    fn output_shape(&self) -> Shape;
    fn apply(&self, x: &ImageGrid) -> Result<ImageGrid>;
    fn adjoint(&self, y: &ImageGrid) -> Result<ImageGrid>;
}

/// A normalized point-spread function with odd side lengths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Psf {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Psf {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows % 2 == 0 || cols % 2 == 0 {
            return Err(Error::config(format!("psf sides must be odd, got {rows}x{cols}")));
        }
        if data.len() != rows * cols {
            return Err(Error::shape(rows * cols, data.len()));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::config("psf entries must be finite"));
        }
        let sum: f64 = data.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::config(format!("psf must sum to 1, sums to {sum}")));
        }
        Ok(Psf { rows, cols, data })
    }

    pub fn identity() -> Self {
        Psf {
            rows: 1,
            cols: 1,
            data: vec![1.0],
        }
    }

    /// Sampled isotropic Gaussian on a `size × size` support, normalized.
    pub fn gaussian(size: usize, std: f64) -> Result<Self> {
        if size % 2 == 0 || !(std > 0.0) {
            return Err(Error::config(format!(
                "gaussian psf needs odd size and positive std, got {size}, {std}"
            )));
        }
        let g = gaussian_taps(size / 2, std);
        let data = g.iter().flat_map(|a| g.iter().map(move |b| a * b)).collect();
        Psf::new(size, size, data)
    }

    /// Parses whitespace- or comma-separated rows, one row per line. Blank
    /// lines and lines starting with `#` are skipped. The array is normalized
    /// to unit sum.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut rows = Vec::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let row = line
                .split(|c: char| c.is_whitespace() || c == ',')
                .filter(|t| !t.is_empty())
                .map(|t| {
                    t.parse::<f64>()
                        .map_err(|e| Error::config(format!("bad psf entry {t:?}: {e}")))
                })
                .collect::<Result<Vec<f64>>>()?;
            rows.push(row);
        }
        let cols = rows.first().map_or(0, Vec::len);
        if cols == 0 || rows.iter().any(|r| r.len() != cols) {
            return Err(Error::config("psf rows must be non-empty and equally long"));
        }
        let n = rows.len();
        let data: Vec<f64> = rows.into_iter().flatten().collect();
        let sum: f64 = data.iter().sum();
        if !(sum.abs() > 0.0) {
            return Err(Error::config("psf sums to zero"));
        }
        Psf::new(n, cols, data.into_iter().map(|v| v / sum).collect())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Psf::from_text(&std::fs::read_to_string(path)?)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Tap at offset `(a, b)` from the centre.
    fn tap(&self, a: isize, b: isize) -> f64 {
        let r = (a + (self.rows / 2) as isize) as usize;
        let c = (b + (self.cols / 2) as isize) as usize;
        self.data[r * self.cols + c]
    }

    /// Transfer function on an `H × W` periodic grid (psf centre at the origin).
    pub fn spectrum(&self, height: usize, width: usize) -> Vec<Complex64> {
        let mut plane = vec![0.0; height * width];
        let (hr, hc) = ((self.rows / 2) as isize, (self.cols / 2) as isize);
        for a in -hr..=hr {
            for b in -hc..=hc {
                let r = a.rem_euclid(height as isize) as usize;
                let c = b.rem_euclid(width as isize) as usize;
                plane[r * width + c] += self.tap(a, b);
            }
        }
        Fft2::new(height, width).forward_real(&plane)
    }
}

/// Normalized 1-D Gaussian taps at offsets `-radius..=radius`.
fn gaussian_taps(radius: usize, std: f64) -> Vec<f64> {
    let r = radius as isize;
    let raw: Vec<f64> = (-r..=r)
        .map(|a| (-((a * a) as f64) / (2.0 * std * std)).exp())
        .collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub enum OperatorKind {
    Identity,
    /// Separable Gaussian anti-alias filter, then the top-left sample of each
    /// `factor × factor` block.
    Downsample { factor: usize, taps: Vec<f64> },
    Blur { psf: Psf },
    /// RGGB colour filter array.
    Mosaic,
    /// `outer ∘ inner`.
    Composed {
        outer: Box<ForwardOperator>,
        inner: Box<ForwardOperator>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOperator {
    pub kind: OperatorKind,
    input: Shape,
    output: Shape,
}

fn check_image_shape(h: usize, w: usize, c: usize) -> Result<()> {
    if h == 0 || w == 0 || !(c == 1 || c == 3) {
        return Err(Error::config(format!(
            "images must be non-empty with 1 or 3 channels, got {h}x{w}x{c}"
        )));
    }
    Ok(())
}

pub fn make_identity(shape: Shape) -> Result<ForwardOperator> {
    check_image_shape(shape.height, shape.width, shape.channels)?;
    Ok(ForwardOperator {
        kind: OperatorKind::Identity,
        input: shape,
        output: shape,
    })
}

pub fn make_downsample(height: usize, width: usize, factor: usize, channels: usize) -> Result<ForwardOperator> {
    check_image_shape(height, width, channels)?;
    if ![2, 4, 8].contains(&factor) {
        return Err(Error::config(format!("downsampling factor must be 2, 4 or 8, got {factor}")));
    }
    if height % factor != 0 || width % factor != 0 {
        return Err(Error::config(format!(
            "{height}x{width} is not divisible by the factor {factor}"
        )));
    }
    Ok(ForwardOperator {
        kind: OperatorKind::Downsample {
            factor,
            taps: gaussian_taps(2 * factor, 0.5 * factor as f64),
        },
        input: Shape::new(height, width, channels),
        output: Shape::new(height / factor, width / factor, channels),
    })
}

pub fn make_blur(psf: Psf, height: usize, width: usize, channels: usize) -> Result<ForwardOperator> {
    check_image_shape(height, width, channels)?;
    let shape = Shape::new(height, width, channels);
    Ok(ForwardOperator {
        kind: OperatorKind::Blur { psf },
        input: shape,
        output: shape,
    })
}

pub fn make_mosaic(height: usize, width: usize) -> Result<ForwardOperator> {
    check_image_shape(height, width, 3)?;
    if height % 2 != 0 || width % 2 != 0 {
        return Err(Error::config(format!(
            "mosaic needs even dimensions, got {height}x{width}"
        )));
    }
    Ok(ForwardOperator {
        kind: OperatorKind::Mosaic,
        input: Shape::new(height, width, 3),
        output: Shape::new(height, width, 1),
    })
}

pub fn compose(outer: ForwardOperator, inner: ForwardOperator) -> Result<ForwardOperator> {
    if inner.output != outer.input {
        return Err(Error::shape(outer.input, inner.output));
    }
    let (input, output) = (inner.input, outer.output);
    Ok(ForwardOperator {
        kind: OperatorKind::Composed {
            outer: Box::new(outer),
            inner: Box::new(inner),
        },
        input,
        output,
    })
}

/// RGGB channel sampled at `(row, col)`.
#[inline]
pub fn mosaic_channel(row: usize, col: usize) -> usize {
    match (row % 2, col % 2) {
        (0, 0) => 0,
        (1, 1) => 2,
        _ => 1,
    }
}

impl ForwardOperator {
    pub fn input(&self) -> Shape {
        self.input
    }

    pub fn output(&self) -> Shape {
        self.output
    }

    pub fn op_apply(&self, x: &ImageGrid) -> Result<ImageGrid> {
        x.ensure_shape(self.input)?;
        Ok(match &self.kind {
            OperatorKind::Identity => x.clone(),
            OperatorKind::Downsample { factor, taps } => self.decimate(x, *factor, taps),
            OperatorKind::Blur { psf } => convolve(x, psf, false),
            OperatorKind::Mosaic => ImageGrid::from_fn(self.output, |r, c, _| {
                x.get(r, c, mosaic_channel(r, c))
            }),
            OperatorKind::Composed { outer, inner } => outer.op_apply(&inner.op_apply(x)?)?,
        })
    }

    pub fn op_adjoint(&self, y: &ImageGrid) -> Result<ImageGrid> {
        y.ensure_shape(self.output)?;
        Ok(match &self.kind {
            OperatorKind::Identity => y.clone(),
            OperatorKind::Downsample { factor, taps } => self.decimate_adjoint(y, *factor, taps),
            OperatorKind::Blur { psf } => convolve(y, psf, true),
            OperatorKind::Mosaic => ImageGrid::from_fn(self.input, |r, c, ch| {
                if mosaic_channel(r, c) == ch {
                    y.get(r, c, 0)
                } else {
                    0.0
                }
            }),
            OperatorKind::Composed { outer, inner } => inner.op_adjoint(&outer.op_adjoint(y)?)?,
        })
    }

    fn decimate(&self, x: &ImageGrid, f: usize, taps: &[f64]) -> ImageGrid {
        let (h, w) = (self.input.height as isize, self.input.width as isize);
        let r = (taps.len() / 2) as isize;
        ImageGrid::from_fn(self.output, |i, j, ch| {
            let (ci, cj) = ((i * f) as isize, (j * f) as isize);
            let mut acc = 0.0;
            for (a, ta) in (-r..=r).zip(taps) {
                let p = (ci - a).rem_euclid(h) as usize;
                for (b, tb) in (-r..=r).zip(taps) {
                    let q = (cj - b).rem_euclid(w) as usize;
                    acc += ta * tb * x.get(p, q, ch);
                }
            }
            acc
        })
    }

    fn decimate_adjoint(&self, y: &ImageGrid, f: usize, taps: &[f64]) -> ImageGrid {
        let (h, w) = (self.input.height as isize, self.input.width as isize);
        let r = (taps.len() / 2) as isize;
        let mut out = ImageGrid::zeros(self.input);
        let c = self.input.channels;
        for i in 0..self.output.height {
            for j in 0..self.output.width {
                let (ci, cj) = ((i * f) as isize, (j * f) as isize);
                for ch in 0..c {
                    let v = y.get(i, j, ch);
                    for (a, ta) in (-r..=r).zip(taps) {
                        let p = (ci - a).rem_euclid(h) as usize;
                        for (b, tb) in (-r..=r).zip(taps) {
                            let q = (cj - b).rem_euclid(w) as usize;
                            let idx = self.input.index(p, q, ch);
                            out.data_mut()[idx] += ta * tb * v;
                        }
                    }
                }
            }
        }
        out
    }

    /// Operators applied innermost first.
    pub fn factors(&self) -> Vec<&ForwardOperator> {
        match &self.kind {
            OperatorKind::Composed { outer, inner } => {
                let mut v = inner.factors();
                v.extend(outer.factors());
                v
            }
            _ => vec![self],
        }
    }

    pub fn name(&self) -> String {
        match &self.kind {
            OperatorKind::Identity => "identity".into(),
            OperatorKind::Downsample { factor, .. } => format!("downsample_x{factor}"),
            OperatorKind::Blur { .. } => "blur".into(),
            OperatorKind::Mosaic => "mosaic".into(),
            OperatorKind::Composed { outer, inner } => format!("{}∘{}", outer.name(), inner.name()),
        }
    }
}

impl LinearOperator for ForwardOperator {
    fn input_shape(&self) -> Shape {
        self.input
    }

    fn output_shape(&self) -> Shape {
        self.output
    }

    fn apply(&self, x: &ImageGrid) -> Result<ImageGrid> {
        self.op_apply(x)
    }

    fn adjoint(&self, y: &ImageGrid) -> Result<ImageGrid> {
        self.op_adjoint(y)
    }
}

/// Periodic convolution `sum_ab psf(a, b) x(i - a, j - b)`, or its adjoint
/// (correlation) when `transpose` is set.
fn convolve(x: &ImageGrid, psf: &Psf, transpose: bool) -> ImageGrid {
    let s = x.shape();
    let (h, w) = (s.height as isize, s.width as isize);
    let (hr, hc) = ((psf.rows / 2) as isize, (psf.cols / 2) as isize);
    let sign = if transpose { 1 } else { -1 };
    ImageGrid::from_fn(s, |i, j, ch| {
        let mut acc = 0.0;
        for a in -hr..=hr {
            let p = (i as isize + sign * a).rem_euclid(h) as usize;
            for b in -hc..=hc {
                let q = (j as isize + sign * b).rem_euclid(w) as usize;
                acc += psf.tap(a, b) * x.get(p, q, ch);
            }
        }
        acc
    })
}

/// The blur computed through the Fourier domain; equal to the spatial path.
pub fn blur_fft(x: &ImageGrid, psf: &Psf) -> Result<ImageGrid> {
    let s = x.shape();
    let plan = Fft2::new(s.height, s.width);
    let k = psf.spectrum(s.height, s.width);
    let planes = (0..s.channels)
        .map(|ch| {
            let mut spec = plan.forward_real(x.channel(ch).data());
            spec.iter_mut().zip(&k).for_each(|(v, kk)| *v *= kk);
            ImageGrid::from_vec(Shape::new(s.height, s.width, 1), plan.inverse_real(spec))
        })
        .collect::<Result<Vec<_>>>()?;
    ImageGrid::from_channels(&planes)
}

fn random_image(shape: Shape, rng: &mut ChaCha8Rng) -> ImageGrid {
    let data = (0..shape.len()).map(|_| StandardNormal.sample(rng)).collect();
    ImageGrid::from_vec(shape, data).expect("length matches shape")
}

/// Largest relative discrepancy `|<Ax, y> - <x, A^T y>|` over 20 seeded
/// Gaussian pairs, scaled by `max(||Ax|| ||y||, ||x|| ||A^T y||)`.
pub fn adjoint_check(op: &dyn LinearOperator, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let x = random_image(op.input_shape(), &mut rng);
        let y = random_image(op.output_shape(), &mut rng);
        let ax = op.apply(&x)?;
        let aty = op.adjoint(&y)?;
        let lhs = ax.dot(&y);
        let rhs = x.dot(&aty);
        let scale = (ax.norm() * y.norm()).max(x.norm() * aty.norm());
        if scale > 0.0 {
            worst = worst.max((lhs - rhs).abs() / scale);
        } else if lhs != rhs {
            worst = f64::INFINITY;
        }
    }
    Ok(worst)
}

/// Bilinear weights for spreading sparse samples over the full grid.
const SPREAD: [f64; 3] = [0.5, 1.0, 0.5];

/// A full-resolution estimate of the operator input from a measurement.
///
/// Decimation and mosaicking are undone by normalized spreading: the
/// adjoint (followed, for a mosaic, by a bilinear spread) divided by the
/// same map applied to an all-ones measurement. This reproduces constants
/// exactly. Blur is left in place, so blur-only measurements map to
/// themselves.
pub fn back_projection(op: &ForwardOperator, y: &ImageGrid) -> Result<ImageGrid> {
    y.ensure_shape(op.output)?;
    let mut est = y.clone();
    for factor in op.factors().into_iter().rev() {
        est = match &factor.kind {
            OperatorKind::Identity | OperatorKind::Blur { .. } => est,
            OperatorKind::Downsample { .. } => {
                let ones = ImageGrid::filled(factor.output, 1.0);
                normalized_ratio(&factor.op_adjoint(&est)?, &factor.op_adjoint(&ones)?)?
            }
            OperatorKind::Mosaic => {
                let ones = ImageGrid::filled(factor.output, 1.0);
                let num = spread(&factor.op_adjoint(&est)?);
                let den = spread(&factor.op_adjoint(&ones)?);
                normalized_ratio(&num, &den)?
            }
            OperatorKind::Composed { .. } => unreachable!("factors are flattened"),
        };
    }
    Ok(est)
}

fn normalized_ratio(num: &ImageGrid, den: &ImageGrid) -> Result<ImageGrid> {
    num.zip_map(den, |a, b| if b > 1e-12 { a / b } else { 0.0 })
}

fn spread(x: &ImageGrid) -> ImageGrid {
    let s = x.shape();
    let (h, w) = (s.height as isize, s.width as isize);
    ImageGrid::from_fn(s, |i, j, ch| {
        let mut acc = 0.0;
        for (a, wa) in (-1..=1).zip(SPREAD) {
            let p = (i as isize + a).rem_euclid(h) as usize;
            for (b, wb) in (-1..=1).zip(SPREAD) {
                let q = (j as isize + b).rem_euclid(w) as usize;
                acc += wa * wb * x.get(p, q, ch);
            }
        }
        acc
    })
}
