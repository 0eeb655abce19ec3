//! Isotropic total-variation denoising by Chambolle's dual projection.
//!
//! Solves `min_u 0.5 ||u - f||^2 + weight * TV(u)` per channel, with forward
//! differences and Neumann boundaries.

use crate::error::{Error, Result};
use crate::image::{ImageGrid, Shape};

/// Dual step size; the projection converges for steps up to 1/8.
const TAU: f64 = 0.125;

fn gradient(u: &[f64], h: usize, w: usize, gx: &mut [f64], gy: &mut [f64]) {
    for r in 0..h {
        for c in 0..w {
            let k = r * w + c;
            gx[k] = if c + 1 < w { u[k + 1] - u[k] } else { 0.0 };
            gy[k] = if r + 1 < h { u[k + w] - u[k] } else { 0.0 };
        }
    }
}

/// Negative adjoint of [`gradient`].
fn divergence(px: &[f64], py: &[f64], h: usize, w: usize, out: &mut [f64]) {
    for r in 0..h {
        for c in 0..w {
            let k = r * w + c;
            let dx = match (c, c + 1 < w) {
                (0, true) => px[k],
                (0, false) => 0.0,
                (_, true) => px[k] - px[k - 1],
                (_, false) => -px[k - 1],
            };
            let dy = match (r, r + 1 < h) {
                (0, true) => py[k],
                (0, false) => 0.0,
                (_, true) => py[k] - py[k - w],
                (_, false) => -py[k - w],
            };
            out[k] = dx + dy;
        }
    }
}

/// Isotropic TV of one plane.
pub fn total_variation(u: &[f64], h: usize, w: usize) -> f64 {
    let mut gx = vec![0.0; h * w];
    let mut gy = vec![0.0; h * w];
    gradient(u, h, w, &mut gx, &mut gy);
    gx.iter().zip(&gy).map(|(a, b)| (a * a + b * b).sqrt()).sum()
}

/// `0.5 ||u - f||^2 + weight * TV(u)` summed over channels.
pub fn tv_energy(u: &ImageGrid, f: &ImageGrid, weight: f64) -> Result<f64> {
    let s = u.shape();
    let fid = 0.5 * u.sub(f)?.data().iter().map(|v| v * v).sum::<f64>();
    let tv: f64 = (0..s.channels)
        .map(|ch| total_variation(u.channel(ch).data(), s.height, s.width))
        .sum();
    Ok(fid + weight * tv)
}

/// Runs `iters` dual projection steps and returns the primal solution.
pub fn tv_denoise(image: &ImageGrid, weight: f64, iters: usize) -> Result<ImageGrid> {
    tv_denoise_traced(image, weight, iters, 0).map(|(u, _)| u)
}

/// As [`tv_denoise`], also recording the energy every `every` iterations
/// (never when `every` is 0).
pub fn tv_denoise_traced(
    image: &ImageGrid,
    weight: f64,
    iters: usize,
    every: usize,
) -> Result<(ImageGrid, Vec<f64>)> {
    if !(weight > 0.0 && weight.is_finite()) || iters == 0 {
        return Err(Error::config("tv_denoise needs weight > 0 and iters >= 1"));
    }
    let s = image.shape();
    let (h, w) = (s.height, s.width);
    let n = h * w;
    let mut planes = Vec::with_capacity(s.channels);
    let mut energies = vec![0.0; if every > 0 { iters / every } else { 0 }];
    for ch in 0..s.channels {
        let f = image.channel(ch).into_vec();
        let (mut px, mut py) = (vec![0.0; n], vec![0.0; n]);
        let mut div = vec![0.0; n];
        let (mut gx, mut gy) = (vec![0.0; n], vec![0.0; n]);
        let mut t = vec![0.0; n];
        for it in 1..=iters {
            divergence(&px, &py, h, w, &mut div);
            for k in 0..n {
                t[k] = div[k] - f[k] / weight;
            }
            gradient(&t, h, w, &mut gx, &mut gy);
            for k in 0..n {
                let norm = (gx[k] * gx[k] + gy[k] * gy[k]).sqrt();
                let d = 1.0 + TAU * norm;
                px[k] = (px[k] + TAU * gx[k]) / d;
                py[k] = (py[k] + TAU * gy[k]) / d;
            }
            if every > 0 && it % every == 0 {
                divergence(&px, &py, h, w, &mut div);
                let u: Vec<f64> = (0..n).map(|k| f[k] - weight * div[k]).collect();
                let fid: f64 = 0.5 * u.iter().zip(&f).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
                energies[it / every - 1] += fid + weight * total_variation(&u, h, w);
            }
        }
        divergence(&px, &py, h, w, &mut div);
        let u = (0..n).map(|k| f[k] - weight * div[k]).collect();
        planes.push(ImageGrid::from_vec(Shape::new(h, w, 1), u)?);
    }
    Ok((ImageGrid::from_channels(&planes)?, energies))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn noisy(h: usize, w: usize, c: usize) -> ImageGrid {
        ImageGrid::from_fn(Shape::new(h, w, c), |r, col, ch| {
            let base = if col < w / 2 { 0.2 } else { 0.8 };
            base + 0.1 * (((r * 31 + col * 17 + ch * 7) % 11) as f64 / 10.0 - 0.5)
        })
    }

    #[test]
    fn constant_is_fixed() {
        let c = ImageGrid::filled(Shape::new(6, 7, 3), 0.42);
        let out = tv_denoise(&c, 0.5, 50).unwrap();
        assert!(out.data().iter().all(|v| (v - 0.42).abs() < 1e-15));
    }

    #[test]
    fn tiny_weight_is_nearly_identity() {
        let x = noisy(8, 8, 1);
        let out = tv_denoise(&x, 1e-8, 50).unwrap();
        assert!(out.data().iter().zip(x.data()).all(|(a, b)| (a - b).abs() < 1e-4));
    }

    #[test]
    fn two_pixel_closed_form() {
        let x = ImageGrid::from_vec(Shape::new(1, 2, 1), vec![0.1, 0.9]).unwrap();
        let out = tv_denoise(&x, 0.15, 2000).unwrap();
        assert!((out.data()[0] - 0.25).abs() < 1e-6);
        assert!((out.data()[1] - 0.75).abs() < 1e-6);
        let out = tv_denoise(&x, 0.5, 2000).unwrap();
        assert!(out.data().iter().all(|v| (v - 0.5).abs() < 1e-6));
    }

    #[test]
    fn mean_and_energy() {
        let x = noisy(16, 12, 3);
        let (u, energies) = tv_denoise_traced(&x, 0.1, 100, 10).unwrap();
        for ch in 0..3 {
            assert!((u.channel(ch).mean() - x.channel(ch).mean()).abs() < 1e-6);
        }
        assert_eq!(energies.len(), 10);
        for pair in energies.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-12, "{energies:?}");
        }
        assert!(energies[0] < tv_energy(&x, &x, 0.1).unwrap());
        assert!(tv_denoise(&x, 0.0, 10).is_err());
    }
}
