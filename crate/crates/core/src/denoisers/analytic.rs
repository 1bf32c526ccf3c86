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

//! Closed-form noise predictor for Gaussian data.

use crate::diffusion::Denoiser;
use crate::error::{Error, Result};
use crate::schedule::NoiseSchedule;
use crate::tensor::{shape_str, ImageTensor};

/// A per-element parameter: one value for every element, or an image of them.
#[derive(Debug, Clone, PartialEq)]
pub enum ElementParam {
    Scalar(f64),
    Image(ImageTensor),
}

impl ElementParam {
    fn at(&self, i: usize) -> f64 {
        match self {
            ElementParam::Scalar(v) => *v,
            ElementParam::Image(img) => img.data()[i],
        }
    }

    fn shape(&self) -> Option<(usize, usize, usize)> {
        match self {
            ElementParam::Scalar(_) => None,
            ElementParam::Image(img) => Some(img.shape()),
        }
    }

    fn values(&self) -> &[f64] {
        match self {
            ElementParam::Scalar(v) => std::slice::from_ref(v),
            ElementParam::Image(img) => img.data(),
        }
    }
}

/// The exact minimum-MSE noise predictor when every element of `x0` is an
/// independent `N(μ0, v0)`. With `m = E[x0 | x_t]`,
///
/// ```text
/// m = (√ᾱ_t·v0·x_t + (1−ᾱ_t)·μ0) / (ᾱ_t·v0 + 1 − ᾱ_t)
/// ε̂ = (x_t − √ᾱ_t·m) / √(1−ᾱ_t)
/// ```
#[derive(Debug, Clone)]
pub struct GaussianDenoiser {
    mean: ElementParam,
    variance: ElementParam,
    schedule: NoiseSchedule,
}

impl GaussianDenoiser {
    pub fn new(mean: ElementParam, variance: ElementParam, schedule: NoiseSchedule) -> Result<Self> {
        if mean.values().iter().any(|v| !v.is_finite()) {
            return Err(Error::config("denoiser.mean", "must be finite"));
        }
        if variance.values().iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(Error::config("denoiser.variance", "must be finite and nonnegative"));
        }
        if let (Some(a), Some(b)) = (mean.shape(), variance.shape()) {
            if a != b {
                return Err(Error::Shape {
                    expected: shape_str(a),
                    actual: shape_str(b),
                });
            }
        }
        Ok(Self {
            mean,
            variance,
            schedule,
        })
    }

    /// `N(μ0, v0)` with the same scalar parameters for every element.
    pub fn scalar(mean: f64, variance: f64, schedule: NoiseSchedule) -> Result<Self> {
        Self::new(ElementParam::Scalar(mean), ElementParam::Scalar(variance), schedule)
    }

    pub fn mean(&self) -> &ElementParam {
        &self.mean
    }

    pub fn variance(&self) -> &ElementParam {
        &self.variance
    }

    /// `E[x0 | x_t]`.
    pub fn posterior_mean(&self, x_t: &ImageTensor, t: usize) -> Result<ImageTensor> {
        self.schedule.check_step(t, 1)?;
        for shape in [self.mean.shape(), self.variance.shape()].into_iter().flatten() {
            if shape != x_t.shape() {
                return Err(Error::Shape {
                    expected: shape_str(shape),
                    actual: shape_str(x_t.shape()),
                });
            }
        }
        let ab = self.schedule.alpha_bar(t);
        let sa = ab.sqrt();
        let mut out = x_t.clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            let (mu, var) = (self.mean.at(i), self.variance.at(i));
            *v = (sa * var * *v + (1.0 - ab) * mu) / (ab * var + 1.0 - ab);
        }
        Ok(out)
    }
}

impl Denoiser for GaussianDenoiser {
    fn predict_noise(&self, x_t: &ImageTensor, t: usize) -> Result<ImageTensor> {
        let m = self.posterior_mean(x_t, t)?;
        let ab = self.schedule.alpha_bar(t);
        Ok(x_t.lincomb(1.0 / (1.0 - ab).sqrt(), &m, -ab.sqrt() / (1.0 - ab).sqrt()))
    }

    fn native_resolution(&self) -> Option<(usize, usize)> {
        self.mean.shape().or(self.variance.shape()).map(|(h, w, _)| (h, w))
    }
}
