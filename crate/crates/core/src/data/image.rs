use crate::measure::Field;
use crate::prelude::*;
use crate::{Error, Result, Tensor};

/// Row-major `height × width × channels` image with values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

/// Maps `[0, 1]` to a byte with round-half-up; out-of-range values clamp.
pub fn quantize(v: f64) -> u8 {
    let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
    (v * 255.0 + 0.5).floor() as u8
}

/// Pixel-center coordinates of a `width × height` grid in `[-1, 1]²`, row
/// by row: x follows the column, y the row.
pub fn grid_coords(width: usize, height: usize) -> Tensor {
    let mut data = Vec::with_capacity(width * height * 2);
    for r in 0..height {
        let y = -1.0 + (2 * r + 1) as f64 / height as f64;
        for c in 0..width {
            let x = -1.0 + (2 * c + 1) as f64 / width as f64;
            data.push(x);
            data.push(y);
        }
    }
    Tensor::new(vec![width * height, 2], data).expect("grid shape")
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height * channels {
            return Err(Error::shape(
                "image",
                format!(
                    "{width}×{height}×{channels} needs {} values, got {}",
                    width * height * channels,
                    data.len()
                ),
            ));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Self {
        Self {
            width,
            height,
            channels,
            data: vec![value; width * height * channels],
        }
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn at(&self, row: usize, col: usize, ch: usize) -> f64 {
        self.data[(row * self.width + col) * self.channels + ch]
    }

    pub fn set(&mut self, row: usize, col: usize, ch: usize, v: f64) {
        self.data[(row * self.width + col) * self.channels + ch] = v;
    }

    /// Values as `[pixels × channels]`, matching [`grid_coords`].
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(vec![self.pixels(), self.channels], self.data.clone()).expect("image shape")
    }

    pub fn from_tensor(width: usize, height: usize, t: &Tensor) -> Result<Self> {
        Self::new(width, height, t.cols(), t.data().to_vec())
    }

    /// Samples a field at the pixel centers.
    pub fn from_field(width: usize, height: usize, f: &dyn Field) -> Result<Self> {
        let v = f.eval(&grid_coords(width, height))?;
        Self::from_tensor(width, height, &v)
    }

    pub fn clamped(mut self) -> Self {
        self.data.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
        self
    }

    /// Values after an 8-bit round trip.
    pub fn quantized(&self) -> Self {
        let mut out = self.clone();
        out.data
            .iter_mut()
            .for_each(|v| *v = quantize(*v) as f64 / 255.0);
        out
    }

    /// Block-average downsampling by an integer `factor`, flattened.
    pub fn pooled(&self, factor: usize) -> Result<Vec<f64>> {
        if factor == 0 || self.width % factor != 0 || self.height % factor != 0 {
            return Err(Error::invalid(format!(
                "pool factor {factor} does not divide {}×{}",
                self.width, self.height
            )));
        }
        let (w, h) = (self.width / factor, self.height / factor);
        let mut out = vec![0.0; w * h * self.channels];
        let norm = 1.0 / (factor * factor) as f64;
        for r in 0..self.height {
            for c in 0..self.width {
                for ch in 0..self.channels {
                    out[((r / factor) * w + c / factor) * self.channels + ch] +=
                        norm * self.at(r, c, ch);
                }
            }
        }
        Ok(out)
    }
}
