//! Dense H×W×C intensity arrays.
//!
//! Pixels are stored row-major with interleaved channels, so the value at
//! `(row, col, ch)` lives at `(row * width + col) * channels + ch`. The same
//! layout is used for measurements, which are simply images with their own
//! shape (e.g. a mosaic plane has one channel).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl Shape {
    pub const fn new(height: usize, width: usize, channels: usize) -> Self {
        Shape {
            height,
            width,
            channels,
        }
    }

    pub fn len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    #[inline]
    pub fn index(&self, row: usize, col: usize, ch: usize) -> usize {
        (row * self.width + col) * self.channels + ch
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}x{}", self.height, self.width, self.channels)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageGrid {
    shape: Shape,
    data: Vec<f64>,
}

impl ImageGrid {
    pub fn zeros(shape: Shape) -> Self {
        ImageGrid {
            shape,
            data: vec![0.0; shape.len()],
        }
    }

    pub fn filled(shape: Shape, value: f64) -> Self {
        ImageGrid {
            shape,
            data: vec![value; shape.len()],
        }
    }

    pub fn from_vec(shape: Shape, data: Vec<f64>) -> Result<Self> {
        if shape.height == 0 || shape.width == 0 || shape.channels == 0 {
            return Err(Error::config(format!("degenerate image shape {shape}")));
        }
        if data.len() != shape.len() {
            return Err(Error::shape(shape.len(), data.len()));
        }
        Ok(ImageGrid { shape, data })
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(shape.len());
        for r in 0..shape.height {
            for c in 0..shape.width {
                for ch in 0..shape.channels {
                    data.push(f(r, c, ch));
                }
            }
        }
        ImageGrid { shape, data }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn height(&self) -> usize {
        self.shape.height
    }

    pub fn width(&self) -> usize {
        self.shape.width
    }

    pub fn channels(&self) -> usize {
        self.shape.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, ch: usize) -> f64 {
        self.data[self.shape.index(row, col, ch)]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, ch: usize, v: f64) {
        let i = self.shape.index(row, col, ch);
        self.data[i] = v;
    }

    pub fn ensure_shape(&self, expected: Shape) -> Result<()> {
        if self.shape != expected {
            return Err(Error::shape(expected, self.shape));
        }
        Ok(())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        ImageGrid {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        other.ensure_shape(self.shape)?;
        Ok(ImageGrid {
            shape: self.shape,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map(|v| v * s)
    }

    pub fn clamp01(&self) -> Self {
        self.map(|v| v.clamp(0.0, 1.0))
    }

    pub fn dot(&self, other: &Self) -> f64 {
        dot(&self.data, &other.data)
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Extracts one channel as a single-channel image.
    pub fn channel(&self, ch: usize) -> ImageGrid {
        let s = self.shape;
        let data = (0..s.pixels())
            .map(|p| self.data[p * s.channels + ch])
            .collect();
        ImageGrid {
            shape: Shape::new(s.height, s.width, 1),
            data,
        }
    }

    /// Inverse of [`ImageGrid::channel`] for every channel at once.
    pub fn from_channels(planes: &[ImageGrid]) -> Result<ImageGrid> {
        let first = planes
            .first()
            .ok_or_else(|| Error::config("no channels to stack"))?;
        let (h, w) = (first.height(), first.width());
        let c = planes.len();
        let mut out = ImageGrid::zeros(Shape::new(h, w, c));
        for (ch, p) in planes.iter().enumerate() {
            p.ensure_shape(Shape::new(h, w, 1))?;
            for (i, &v) in p.data.iter().enumerate() {
                out.data[i * c + ch] = v;
            }
        }
        Ok(out)
    }

    pub fn mse(&self, other: &Self) -> Result<f64> {
        other.ensure_shape(self.shape)?;
        let s: f64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        Ok(s / self.data.len() as f64)
    }

    /// Crops to the top-left `height × width` window.
    pub fn crop(&self, height: usize, width: usize) -> Result<ImageGrid> {
        if height == 0 || width == 0 || height > self.height() || width > self.width() {
            return Err(Error::config(format!(
                "cannot crop {} to {height}x{width}",
                self.shape
            )));
        }
        let c = self.channels();
        Ok(ImageGrid::from_fn(Shape::new(height, width, c), |r, col, ch| {
            self.get(r, col, ch)
        }))
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
