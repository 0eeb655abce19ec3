//! Image quality metrics.

use crate::error::{Error, Result};
use crate::image::ImageGrid;

/// Reported PSNR for identical images.
pub const PSNR_CAP_DB: f64 = 99.0;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

/// `10 log10(peak^2 / MSE)` over all pixels and channels, capped at
/// [`PSNR_CAP_DB`].
pub fn psnr(reference: &ImageGrid, test: &ImageGrid, peak: f64) -> Result<f64> {
    if !(peak > 0.0) {
        return Err(Error::config("psnr peak must be positive"));
    }
    let mse = reference.mse(test)?;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (peak * peak / mse).log10()).min(PSNR_CAP_DB))
}

fn window() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as isize;
    let g: Vec<f64> = (-r..=r)
        .map(|a| (-((a * a) as f64) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Mean SSIM over every window that fits inside the image (peak 1), averaged
/// over channels.
pub fn ssim(reference: &ImageGrid, test: &ImageGrid) -> Result<f64> {
    test.ensure_shape(reference.shape())?;
    let s = reference.shape();
    if s.height < SSIM_WINDOW || s.width < SSIM_WINDOW {
        return Err(Error::config(format!(
            "ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {}x{}",
            s.height, s.width
        )));
    }
    let g = window();
    let c1 = (SSIM_K1 * 1.0).powi(2);
    let c2 = (SSIM_K2 * 1.0).powi(2);
    let (oh, ow) = (s.height - SSIM_WINDOW + 1, s.width - SSIM_WINDOW + 1);
    let mut total = 0.0;
    for ch in 0..s.channels {
        let a = reference.channel(ch);
        let b = test.channel(ch);
        let fields = [
            a.data().to_vec(),
            b.data().to_vec(),
            a.data().iter().map(|v| v * v).collect(),
            b.data().iter().map(|v| v * v).collect(),
            a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect(),
        ];
        let f: Vec<Vec<f64>> = fields
            .iter()
            .map(|p| filter_valid(p, s.height, s.width, &g))
            .collect();
        let mut acc = 0.0;
        for k in 0..oh * ow {
            let (mx, my) = (f[0][k], f[1][k]);
            let vx = f[2][k] - mx * mx;
            let vy = f[3][k] - my * my;
            let cxy = f[4][k] - mx * my;
            acc += ((2.0 * mx * my + c1) * (2.0 * cxy + c2))
                / ((mx * mx + my * my + c1) * (vx + vy + c2));
        }
        total += acc / (oh * ow) as f64;
    }
    Ok(total / s.channels as f64)
}

/// Separable valid-mode filtering of an `h × w` plane.
fn filter_valid(p: &[f64], h: usize, w: usize, g: &[f64]) -> Vec<f64> {
    let n = g.len();
    let ow = w - n + 1;
    let oh = h - n + 1;
    let mut rows = vec![0.0; h * ow];
    for r in 0..h {
        for c in 0..ow {
            rows[r * ow + c] = (0..n).map(|k| g[k] * p[r * w + c + k]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for r in 0..oh {
        for c in 0..ow {
            out[r * ow + c] = (0..n).map(|k| g[k] * rows[(r + k) * ow + c]).sum();
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::Shape;

    fn pattern(h: usize, w: usize, c: usize) -> ImageGrid {
        ImageGrid::from_fn(Shape::new(h, w, c), |r, col, ch| {
            let v = ((r * 7 + col * 13 + ch * 5) % 17) as f64 / 16.0;
            0.1 + 0.8 * v
        })
    }

    #[test]
    fn psnr_values() {
        let a = pattern(8, 8, 3);
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), PSNR_CAP_DB);
        let b = a.map(|v| v + 0.1);
        let p = psnr(&a, &b, 1.0).unwrap();
        assert!((p - 20.0).abs() < 1e-9, "{p}");
        assert_eq!(p, psnr(&b, &a, 1.0).unwrap());
        assert!(psnr(&a, &pattern(8, 4, 3), 1.0).is_err());
    }

    #[test]
    fn ssim_identity_and_constants() {
        let a = pattern(16, 20, 3);
        assert_eq!(ssim(&a, &a).unwrap(), 1.0);
        let s = Shape::new(12, 12, 1);
        let v = ssim(&ImageGrid::filled(s, 0.25), &ImageGrid::filled(s, 0.75)).unwrap();
        let c1 = 1e-4;
        let want = (2.0 * 0.25 * 0.75 + c1) / (0.25 * 0.25 + 0.75 * 0.75 + c1);
        assert!((v - want).abs() < 1e-9, "{v} vs {want}");
        assert!((v - 0.6001).abs() < 1e-4);
        assert!(ssim(&pattern(10, 20, 1), &pattern(10, 20, 1)).is_err());
    }

    #[test]
    fn ssim_detects_inversion() {
        let a = ImageGrid::from_fn(Shape::new(32, 32, 1), |r, c, _| {
            if (r / 4 + c / 4) % 2 == 0 { 0.1 } else { 0.9 }
        });
        let inv = a.map(|v| 1.0 - v);
        assert!(ssim(&a, &inv).unwrap() < 0.2);
    }
}
