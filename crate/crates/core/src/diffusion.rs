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

//! Forward noising and reverse DDPM/DDIM stepping.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{normal_like, DiffRng};
use crate::schedule::NoiseSchedule;
use crate::tensor::{shape_str, ImageTensor};

/// Below this `ᾱ_t`, unclamped `x0` estimates are flagged as ill-conditioned.
pub const CONDITIONING_LIMIT: f64 = 1e-12;

/// A noise predictor `ε_θ(x_t, t)`.
///
/// Implementations must return a tensor of the input's shape and must be
/// deterministic for a fixed `(x_t, t)`.
pub trait Denoiser {
    fn predict_noise(&self, x_t: &ImageTensor, t: usize) -> Result<ImageTensor>;

    /// `(height, width)` the model was trained at, or `None` if any size works.
    fn native_resolution(&self) -> Option<(usize, usize)> {
        None
    }
}

impl<D: Denoiser + ?Sized> Denoiser for &D {
    fn predict_noise(&self, x_t: &ImageTensor, t: usize) -> Result<ImageTensor> {
        (**self).predict_noise(x_t, t)
    }

    fn native_resolution(&self) -> Option<(usize, usize)> {
        (**self).native_resolution()
    }
}

impl<D: Denoiser + ?Sized> Denoiser for Box<D> {
    fn predict_noise(&self, x_t: &ImageTensor, t: usize) -> Result<ImageTensor> {
        (**self).predict_noise(x_t, t)
    }

    fn native_resolution(&self) -> Option<(usize, usize)> {
        (**self).native_resolution()
    }
}

/// Runs the denoiser and checks the contract on its output.
pub(crate) fn predict_checked<D: Denoiser + ?Sized>(denoiser: &D, x_t: &ImageTensor, t: usize) -> Result<ImageTensor> {
    let eps = denoiser.predict_noise(x_t, t)?;
    if eps.shape() != x_t.shape() {
        return Err(Error::Shape {
            expected: shape_str(x_t.shape()),
            actual: shape_str(eps.shape()),
        });
    }
    eps.ensure_finite("denoiser output")?;
    Ok(eps)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerFamily {
    Ddpm,
    Ddim,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub family: SamplerFamily,
    /// DDIM stochasticity; 0 gives a deterministic trajectory.
    pub ddim_eta: f64,
    /// Number of DDIM jumps when reversing; `None` visits every step.
    pub ddim_substeps: Option<usize>,
    /// Clamp the `x0` estimate to the image's value range at every step.
    pub clip_x0: bool,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            family: SamplerFamily::Ddim,
            ddim_eta: 0.0,
            ddim_substeps: None,
            clip_x0: true,
            seed: 0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.ddim_eta >= 0.0 && self.ddim_eta.is_finite()) {
            return Err(Error::config("sampler.ddim_eta", "must be a nonnegative number"));
        }
        if self.ddim_substeps == Some(0) {
            return Err(Error::config("sampler.ddim_substeps", "must be at least 1"));
        }
        Ok(())
    }
}

/// One forward step: `√(1−β_t)·x_prev + √β_t·ε`.
pub fn forward_step_sample(
    x_prev: &ImageTensor,
    t: usize,
    schedule: &NoiseSchedule,
    rng: &mut DiffRng,
) -> Result<ImageTensor> {
    schedule.check_step(t, 1)?;
    let eps = normal_like(x_prev.shape(), rng);
    Ok(forward_step_with(x_prev, t, schedule, &eps))
}

/// [`forward_step_sample`] with the noise supplied by the caller.
pub fn forward_step_with(x_prev: &ImageTensor, t: usize, schedule: &NoiseSchedule, eps: &ImageTensor) -> ImageTensor {
    let b = schedule.beta(t);
    x_prev.lincomb((1.0 - b).sqrt(), eps, b.sqrt())
}

/// Samples `x_t ~ q(x_t | x0)` and returns it together with the noise drawn.
pub fn forward_marginal_sample(
    x0: &ImageTensor,
    t: usize,
    schedule: &NoiseSchedule,
    rng: &mut DiffRng,
) -> Result<(ImageTensor, ImageTensor)> {
    schedule.check_step(t, 0)?;
    let eps = normal_like(x0.shape(), rng);
    let x_t = forward_marginal_with(x0, t, schedule, &eps)?;
    Ok((x_t, eps))
}

/// `√ᾱ_t·x0 + √(1−ᾱ_t)·eps`.
pub fn forward_marginal_with(
    x0: &ImageTensor,
    t: usize,
    schedule: &NoiseSchedule,
    eps: &ImageTensor,
) -> Result<ImageTensor> {
    schedule.check_step(t, 0)?;
    x0.ensure_same_shape(eps)?;
    if t == 0 {
        return Ok(x0.clone());
    }
    let ab = schedule.alpha_bar(t);
    Ok(x0.lincomb(ab.sqrt(), eps, (1.0 - ab).sqrt()))
}

/// Raised when `x0` is recovered from a nearly pure-noise `x_t` without clamping.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConditioningWarning {
    pub step: usize,
    pub alpha_bar: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct X0Estimate {
    pub x0: ImageTensor,
    pub warning: Option<ConditioningWarning>,
}

/// Inverts the forward marginal: `(x_t − √(1−ᾱ_t)·eps_hat)/√ᾱ_t`, optionally
/// clamped to the value range of `x_t`.
pub fn predict_x0(
    x_t: &ImageTensor,
    t: usize,
    eps_hat: &ImageTensor,
    schedule: &NoiseSchedule,
    clamp: bool,
) -> Result<X0Estimate> {
    schedule.check_step(t, 1)?;
    x_t.ensure_same_shape(eps_hat)?;
    let ab = schedule.alpha_bar(t);
    let (a, b) = (1.0 / ab.sqrt(), -(1.0 - ab).sqrt() / ab.sqrt());
    let raw = x_t.lincomb(a, eps_hat, b);
    let warning = (ab < CONDITIONING_LIMIT && !clamp).then(|| {
        log::warn!("x0 estimate at step {t} is ill-conditioned (alpha_bar = {ab:e})");
        ConditioningWarning { step: t, alpha_bar: ab }
    });
    let x0 = if clamp { raw.clamp_to_range() } else { raw };
    Ok(X0Estimate { x0, warning })
}

/// The two coefficients of the forward posterior mean, `(c_x0, c_xt)`.
pub fn posterior_coefficients(t: usize, schedule: &NoiseSchedule) -> (f64, f64) {
    let ab = schedule.alpha_bar(t);
    let ab_prev = schedule.alpha_bar(t - 1);
    let b = schedule.beta(t);
    let a = schedule.alpha(t);
    let c_x0 = ab_prev.sqrt() * b / (1.0 - ab);
    let c_xt = a.sqrt() * (1.0 - ab_prev) / (1.0 - ab);
    (c_x0, c_xt)
}

/// `μ̃(x_t, x0)`, the mean of `q(x_{t−1} | x_t, x0)`.
pub fn posterior_mean(x_t: &ImageTensor, x0: &ImageTensor, t: usize, schedule: &NoiseSchedule) -> Result<ImageTensor> {
    schedule.check_step(t, 1)?;
    x_t.ensure_same_shape(x0)?;
    let (c_x0, c_xt) = posterior_coefficients(t, schedule);
    Ok(x0.lincomb(c_x0, x_t, c_xt))
}

/// Standard DDIM standard deviation for a jump `t → t_prev`, scaled by `eta`.
pub fn ddim_sigma(t: usize, t_prev: usize, eta: f64, schedule: &NoiseSchedule) -> f64 {
    let ab = schedule.alpha_bar(t);
    let ab_prev = schedule.alpha_bar(t_prev);
    let var = (1.0 - ab_prev) / (1.0 - ab) * (1.0 - ab / ab_prev);
    eta * var.max(0.0).sqrt()
}

/// One reverse step from `t` to `t_prev`.
pub fn reverse_step<D: Denoiser + ?Sized>(
    x_t: &ImageTensor,
    t: usize,
    t_prev: usize,
    denoiser: &D,
    config: &SamplerConfig,
    schedule: &NoiseSchedule,
    rng: &mut DiffRng,
) -> Result<ImageTensor> {
    schedule.check_step(t, 1)?;
    if t_prev >= t {
        return Err(Error::Usage(format!(
            "reverse step must go backwards (t = {t}, t_prev = {t_prev})"
        )));
    }
    if config.family == SamplerFamily::Ddpm && t_prev + 1 != t {
        return Err(Error::Usage(format!(
            "DDPM steps must be adjacent (t = {t}, t_prev = {t_prev})"
        )));
    }

    let eps_hat = predict_checked(denoiser, x_t, t)?;
    let est = predict_x0(x_t, t, &eps_hat, schedule, config.clip_x0)?;
    let x0_hat = est.x0;

    let out = match config.family {
        SamplerFamily::Ddpm => {
            let mean = posterior_mean(x_t, &x0_hat, t, schedule)?;
            let std = schedule.sampling_variance(t).sqrt();
            let z = normal_like(x_t.shape(), rng);
            mean.lincomb(1.0, &z, std)
        }
        SamplerFamily::Ddim => {
            let ab = schedule.alpha_bar(t);
            let ab_prev = schedule.alpha_bar(t_prev);
            // after clamping, re-derive the noise direction that is consistent with x0_hat
            let eps_dir = if config.clip_x0 {
                x_t.lincomb(1.0 / (1.0 - ab).sqrt(), &x0_hat, -ab.sqrt() / (1.0 - ab).sqrt())
            } else {
                eps_hat
            };
            let sigma = ddim_sigma(t, t_prev, config.ddim_eta, schedule);
            let dir_coef = (1.0 - ab_prev - sigma * sigma).max(0.0).sqrt();
            let mut next = x0_hat.lincomb(ab_prev.sqrt(), &eps_dir, dir_coef);
            if sigma > 0.0 {
                let z = normal_like(x_t.shape(), rng);
                next = next.lincomb(1.0, &z, sigma);
            }
            next
        }
    };
    out.ensure_finite("reverse step output")?;
    Ok(out)
}

/// The visiting order of a reverse pass from `t`: `t = s_n > … > s_0 = 0`.
///
/// DDPM visits every step. DDIM takes `n = ddim_substeps.unwrap_or(t)` jumps
/// on a uniform grid, `s_i = round(i·t/n)`.
pub fn reverse_timesteps(t: usize, config: &SamplerConfig) -> Result<Vec<usize>> {
    if t == 0 {
        return Ok(vec![0]);
    }
    let n = match config.family {
        SamplerFamily::Ddpm => t,
        SamplerFamily::Ddim => config.ddim_substeps.unwrap_or(t),
    };
    if n == 0 || n > t {
        return Err(Error::config(
            "sampler.ddim_substeps",
            format!("{n} substeps cannot be taken from step {t}"),
        ));
    }
    Ok((0..=n)
        .rev()
        .map(|i| ((i * t) as f64 / n as f64).round() as usize)
        .collect())
}

/// Reverses the chain from step `t` down to 0.
pub fn reverse_from<D: Denoiser + ?Sized>(
    x_t: &ImageTensor,
    t: usize,
    denoiser: &D,
    config: &SamplerConfig,
    schedule: &NoiseSchedule,
    rng: &mut DiffRng,
) -> Result<ImageTensor> {
    schedule.check_step(t, 0)?;
    config.validate()?;
    let steps = reverse_timesteps(t, config)?;
    let mut x = x_t.clone();
    for pair in steps.windows(2) {
        let (cur, prev) = (pair[0], pair[1]);
        x = reverse_step(&x, cur, prev, denoiser, config, schedule, rng).map_err(|e| match e {
            e @ Error::DenoiserAtStep { .. } => e,
            e => Error::DenoiserAtStep {
                step: cur,
                source: Box::new(e),
            },
        })?;
    }
    Ok(x)
}
