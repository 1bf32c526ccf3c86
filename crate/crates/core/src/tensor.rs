// Copyright 2026 The diffsr Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
// 	http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

//! Dense `H × W × C` floating-point images.
//!
//! Pixels are stored row-major with channels interleaved, so the element at
//! `(y, x, c)` lives at `(y * width + x) * channels + c`.

use crate::error::{Error, Result};

/// Closed interval of admissible pixel values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValueRange {
    pub lo: f64,
    pub hi: f64,
}

impl ValueRange {
    /// The diffusion-side convention.
    pub const SIGNED: ValueRange = ValueRange { lo: -1.0, hi: 1.0 };
    /// The file-side convention.
    pub const UNIT: ValueRange = ValueRange { lo: 0.0, hi: 1.0 };

    pub fn clamp(&self, v: f64) -> f64 {
        v.clamp(self.lo, self.hi)
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }
}

impl Default for ValueRange {
    fn default() -> Self {
        ValueRange::SIGNED
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
    range: ValueRange,
}

impl ImageTensor {
    /// Wraps `data`, rejecting a length mismatch, zero dimensions or non-finite values.
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 {
            return Err(Error::Shape {
                expected: "positive height, width and channels".into(),
                actual: format!("{height}x{width}x{channels}"),
            });
        }
        if data.len() != height * width * channels {
            return Err(Error::Shape {
                expected: format!("{} elements ({height}x{width}x{channels})", height * width * channels),
                actual: format!("{} elements", data.len()),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("image data"));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
            range: ValueRange::default(),
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Self {
        assert!(height > 0 && width > 0 && channels > 0, "empty image");
        Self {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
            range: ValueRange::default(),
        }
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Self::filled(height, width, channels, 0.0)
    }

    /// A `1 × 1 × 1` image, handy for scalar experiments.
    pub fn scalar(v: f64) -> Self {
        Self::filled(1, 1, 1, v)
    }

    /// Builds an image by evaluating `f(y, x, c)` at every element.
    pub fn from_fn(
        height: usize,
        width: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        let mut data = Vec::with_capacity(height * width * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    data.push(f(y, x, c));
                }
            }
        }
        Self {
            height,
            width,
            channels,
            data,
            range: ValueRange::default(),
        }
    }

    pub fn with_range(mut self, range: ValueRange) -> Self {
        self.range = range;
        self
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn shape(&self) -> (usize, usize, usize) {
        (self.height, self.width, self.channels)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn range(&self) -> ValueRange {
        self.range
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f64) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    pub fn ensure_same_shape(&self, other: &ImageTensor) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::Shape {
                expected: shape_str(self.shape()),
                actual: shape_str(other.shape()),
            });
        }
        Ok(())
    }

    pub fn ensure_finite(&self, what: &'static str) -> Result<()> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite(what))
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> ImageTensor {
        ImageTensor {
            data: self.data.iter().map(|&v| f(v)).collect(),
            ..*self
        }
    }

    /// Elementwise combination; panics on a shape mismatch, callers check first.
    pub fn zip_map(&self, other: &ImageTensor, f: impl Fn(f64, f64) -> f64) -> ImageTensor {
        assert_eq!(self.shape(), other.shape(), "zip_map shape mismatch");
        ImageTensor {
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
            ..*self
        }
    }

    /// `a * self + b * other`.
    pub fn lincomb(&self, a: f64, other: &ImageTensor, b: f64) -> ImageTensor {
        self.zip_map(other, |x, y| a * x + b * y)
    }

    pub fn clamp_to_range(&self) -> ImageTensor {
        let r = self.range;
        self.map(|v| r.clamp(v))
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// Mean of squared values, the per-element `‖·‖²` used throughout.
    pub fn mean_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>() / self.data.len() as f64
    }

    /// Per-element mean squared difference.
    pub fn mse(&self, other: &ImageTensor) -> Result<f64> {
        self.ensure_same_shape(other)?;
        let sum: f64 = self.data.iter().zip(&other.data).map(|(a, b)| (a - b) * (a - b)).sum();
        Ok(sum / self.data.len() as f64)
    }

    /// Pearson correlation between the two images' elements.
    pub fn correlation(&self, other: &ImageTensor) -> Result<f64> {
        self.ensure_same_shape(other)?;
        let (ma, mb) = (self.mean(), other.mean());
        let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
        for (a, b) in self.data.iter().zip(&other.data) {
            let (da, db) = (a - ma, b - mb);
            sab += da * db;
            saa += da * da;
            sbb += db * db;
        }
        if saa == 0.0 || sbb == 0.0 {
            return Ok(0.0);
        }
        Ok(sab / (saa.sqrt() * sbb.sqrt()))
    }

    /// Extracts one channel as a single-channel image.
    pub fn channel(&self, c: usize) -> ImageTensor {
        assert!(c < self.channels);
        ImageTensor {
            height: self.height,
            width: self.width,
            channels: 1,
            data: self.data.iter().skip(c).step_by(self.channels).copied().collect(),
            range: self.range,
        }
    }

    /// Affine map from `self.range()` onto `target`.
    pub fn remap(&self, target: ValueRange) -> ImageTensor {
        let src = self.range;
        let scale = target.width() / src.width();
        let mut out = self.map(|v| target.lo + (v - src.lo) * scale);
        out.range = target;
        out
    }
}

pub(crate) fn shape_str((h, w, c): (usize, usize, usize)) -> String {
    format!("{h}x{w}x{c}")
}
