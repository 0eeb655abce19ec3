//! PNG input/output and resampling.

use std::path::Path;

use image::{DynamicImage, ImageFormat};

use crate::error::{Error, Result};
use crate::image::{ImageGrid, Shape};

/// Reads an 8-bit grayscale or colour image into `[0, 1]`. Alpha is dropped.
pub fn load_image(path: &Path) -> Result<ImageGrid> {
    let reader = image::ImageReader::open(path)?.with_guessed_format()?;
    let img = reader.decode()?;
    let shape = |c| Shape::new(img.height() as usize, img.width() as usize, c);
    let to_unit = |v: &[u8]| v.iter().map(|&b| b as f64 / 255.0).collect::<Vec<_>>();
    match &img {
        DynamicImage::ImageLuma8(b) => ImageGrid::from_vec(shape(1), to_unit(b.as_raw())),
        DynamicImage::ImageLumaA8(_) => {
            ImageGrid::from_vec(shape(1), to_unit(img.to_luma8().as_raw()))
        }
        DynamicImage::ImageRgb8(b) => ImageGrid::from_vec(shape(3), to_unit(b.as_raw())),
        DynamicImage::ImageRgba8(_) => ImageGrid::from_vec(shape(3), to_unit(img.to_rgb8().as_raw())),
        other => Err(Error::UnsupportedFormat(format!(
            "{}: only 8-bit images are supported, found {:?}",
            path.display(),
            other.color()
        ))),
    }
}

/// Writes `round(255 * clamp(v))` as an 8-bit PNG.
pub fn save_image(img: &ImageGrid, path: &Path) -> Result<()> {
    let (w, h) = (img.width() as u32, img.height() as u32);
    let bytes: Vec<u8> = img
        .data()
        .iter()
        .map(|v| (255.0 * v.clamp(0.0, 1.0)).round() as u8)
        .collect();
    let dynimg = match img.channels() {
        1 => DynamicImage::ImageLuma8(
            image::GrayImage::from_raw(w, h, bytes).expect("buffer matches dimensions"),
        ),
        3 => DynamicImage::ImageRgb8(
            image::RgbImage::from_raw(w, h, bytes).expect("buffer matches dimensions"),
        ),
        c => return Err(Error::UnsupportedFormat(format!("cannot save {c}-channel image"))),
    };
    dynimg.save_with_format(path, ImageFormat::Png)?;
    Ok(())
}

/// Overlap weights mapping `n_in` cells onto `n_out` cells of equal total
/// length; each output row of weights sums to one.
fn area_weights(n_in: usize, n_out: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|o| {
            let (lo, hi) = (o as f64 * scale, (o + 1) as f64 * scale);
            let first = lo.floor() as usize;
            let last = (hi.ceil() as usize).min(n_in);
            (first..last)
                .filter_map(|i| {
                    let overlap = hi.min((i + 1) as f64) - lo.max(i as f64);
                    (overlap > 0.0).then_some((i, overlap / scale))
                })
                .collect()
        })
        .collect()
}

/// Area-averaging resample to `height × width`.
pub fn resize_area(img: &ImageGrid, height: usize, width: usize) -> Result<ImageGrid> {
    if height == 0 || width == 0 {
        return Err(Error::config("resize target must be non-empty"));
    }
    let s = img.shape();
    let wr = area_weights(s.height, height);
    let wc = area_weights(s.width, width);
    let mut tmp = ImageGrid::zeros(Shape::new(s.height, width, s.channels));
    for r in 0..s.height {
        for (c, ws) in wc.iter().enumerate() {
            for ch in 0..s.channels {
                let v = ws.iter().map(|&(i, w)| w * img.get(r, i, ch)).sum();
                tmp.set(r, c, ch, v);
            }
        }
    }
    Ok(ImageGrid::from_fn(Shape::new(height, width, s.channels), |r, c, ch| {
        wr[r].iter().map(|&(i, w)| w * tmp.get(i, c, ch)).sum()
    }))
}

/// Keys cubic convolution kernel with `a = -0.5`.
fn cubic(t: f64) -> f64 {
    let a = -0.5;
    let t = t.abs();
    if t <= 1.0 {
        (a + 2.0) * t * t * t - (a + 3.0) * t * t + 1.0
    } else if t < 2.0 {
        a * t * t * t - 5.0 * a * t * t + 8.0 * a * t - 4.0 * a
    } else {
        0.0
    }
}

/// Bicubic upsampling by an integer factor, with low-resolution sample `i`
/// placed at high-resolution position `i * factor` and edges replicated.
pub fn bicubic_upsample(img: &ImageGrid, factor: usize) -> Result<ImageGrid> {
    if factor == 0 {
        return Err(Error::config("upsampling factor must be positive"));
    }
    let s = img.shape();
    let weights = |n: usize| -> Vec<[(usize, f64); 4]> {
        (0..n * factor)
            .map(|p| {
                let x = p as f64 / factor as f64;
                let base = x.floor() as isize;
                let t = x - base as f64;
                let mut out = [(0, 0.0); 4];
                for (k, o) in (-1..=2isize).enumerate() {
                    let idx = (base + o).clamp(0, n as isize - 1) as usize;
                    out[k] = (idx, cubic(t - o as f64));
                }
                out
            })
            .collect()
    };
    let wr = weights(s.height);
    let wc = weights(s.width);
    let mut tmp = ImageGrid::zeros(Shape::new(s.height, s.width * factor, s.channels));
    for r in 0..s.height {
        for (c, ws) in wc.iter().enumerate() {
            for ch in 0..s.channels {
                tmp.set(r, c, ch, ws.iter().map(|&(i, w)| w * img.get(r, i, ch)).sum());
            }
        }
    }
    Ok(ImageGrid::from_fn(
        Shape::new(s.height * factor, s.width * factor, s.channels),
        |r, c, ch| wr[r].iter().map(|&(i, w)| w * tmp.get(i, c, ch)).sum(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn area_resize_preserves_mean_and_identity() {
        let img = ImageGrid::from_fn(Shape::new(6, 9, 3), |r, c, ch| ((r * 9 + c + ch) % 7) as f64 / 7.0);
        assert_eq!(resize_area(&img, 6, 9).unwrap(), img);
        for (h, w) in [(3, 3), (4, 12), (10, 5)] {
            let out = resize_area(&img, h, w).unwrap();
            assert!((out.mean() - img.mean()).abs() < 1e-12, "{h}x{w}");
        }
        let halves = resize_area(&img, 3, 9).unwrap();
        assert!((halves.get(0, 0, 0) - 0.5 * (img.get(0, 0, 0) + img.get(1, 0, 0))).abs() < 1e-15);
    }

    #[test]
    fn bicubic_interpolates_samples_and_lines() {
        let img = ImageGrid::from_fn(Shape::new(5, 6, 1), |r, c, _| 0.1 * r as f64 + 0.05 * c as f64);
        let up = bicubic_upsample(&img, 2).unwrap();
        assert_eq!(up.shape(), Shape::new(10, 12, 1));
        for r in 0..5 {
            for c in 0..6 {
                assert!((up.get(2 * r, 2 * c, 0) - img.get(r, c, 0)).abs() < 1e-12);
            }
        }
        // a linear ramp is reproduced away from the replicated border
        assert!((up.get(3, 5, 0) - (0.1 * 1.5 + 0.05 * 2.5)).abs() < 1e-12);
    }

    #[test]
    fn png_round_trip_and_bit_depth() {
        let dir = tempfile::tempdir().unwrap();
        let img = ImageGrid::from_fn(Shape::new(4, 5, 3), |r, c, ch| ((r * 5 + c) * 3 + ch) as f64 / 255.0);
        let p = dir.path().join("a.png");
        save_image(&img, &p).unwrap();
        let back = load_image(&p).unwrap();
        for (a, b) in back.data().iter().zip(img.data()) {
            assert!((a - b).abs() < 1e-12);
        }
        let black = dir.path().join("black.png");
        image::GrayImage::new(4, 4).save(&black).unwrap();
        let z = load_image(&black).unwrap();
        assert_eq!(z.shape(), Shape::new(4, 4, 1));
        assert!(z.data().iter().all(|&v| v == 0.0));
        let deep = dir.path().join("deep.png");
        image::ImageBuffer::<image::Luma<u16>, Vec<u16>>::new(3, 3).save(&deep).unwrap();
        assert!(matches!(load_image(&deep), Err(Error::UnsupportedFormat(_))));
    }
}
