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

//! Analytic recovery-error curves.
//!
//! For an injection step `t` the recovery error splits into a signature term,
//! the cumulative reverse-process bound
//!
//! ```text
//! L̄_t = C_t + Σ_{i=1}^{t-1} w_i·E0 + L0,   w_i = (1 − α_i)² / (2·α_i·(1 − ᾱ_i)·σ_i²)
//! ```
//!
//! which grows with `t`, and a fidelity term, the KL divergence between the
//! forward marginals started from the ground truth and from the degraded
//! image, which shrinks with `t`. All `‖·‖²` are per-element means.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diffusion::{forward_marginal_with, predict_checked, Denoiser};
use crate::error::{Error, Result};
use crate::rng::{normal_like, DiffRng};
use crate::schedule::{NoiseSchedule, VARIANCE_FLOOR};
use crate::tensor::ImageTensor;

/// Reverse-process variance `σ_i²` used in the per-step weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceModel {
    /// `β̃_i`.
    Ddpm,
    /// `(1−ᾱ_{i−1})/(1−ᾱ_i) · (1−ᾱ_i)/ᾱ_{i−1}`, left unsimplified.
    DdimRatio,
    /// `η²·β̃_i`, the usual DDIM variance for a single-step jump.
    DdimStandard,
}

/// How the prior-matching term `C_t` is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorModel {
    /// `C_t ≡ 0`.
    Zero,
    /// Per-element `KL(q(x_t | x0) ‖ N(0, 1))`. Decreases in `t`, so the
    /// signature curve is no longer guaranteed to be monotone.
    StandardNormalKl,
}

/// Which closed form to use for the forward-gap KL.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KlFormulation {
    /// `ᾱ_t·‖Δ‖² / (2(1−ᾱ_t))`, the equal-covariance Gaussian KL.
    Standard,
    /// `A_t + K_t·‖Δ‖²` with `K_t = ᾱ_t/(1−ᾱ_t)`.
    Offset,
}

/// The additive `A_t` of the [`KlFormulation::Offset`] form.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdditiveTerm {
    /// `K_t·(‖x0‖² + ‖x̂0‖²)`.
    Expanded,
    /// `A_t ≡ 0`.
    Zero,
}

macro_rules! snake_names {
    ($ty:ty, $field:literal, $($variant:path => $name:literal),+ $(,)?) => {
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $($variant => $name),+ })
            }
        }

        impl FromStr for $ty {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($name => Ok($variant),)+
                    _ => Err(Error::config($field, format!("unknown value {s:?}"))),
                }
            }
        }
    };
}

snake_names!(VarianceModel, "error_model.variance_model",
    VarianceModel::Ddpm => "ddpm",
    VarianceModel::DdimRatio => "ddim_ratio",
    VarianceModel::DdimStandard => "ddim_standard");
snake_names!(PriorModel, "error_model.prior_model",
    PriorModel::Zero => "zero",
    PriorModel::StandardNormalKl => "standard_normal_kl");
snake_names!(KlFormulation, "error_model.formulation",
    KlFormulation::Standard => "standard",
    KlFormulation::Offset => "offset");
snake_names!(AdditiveTerm, "error_model.additive_term",
    AdditiveTerm::Expanded => "expanded",
    AdditiveTerm::Zero => "zero");

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ErrorModelConfig {
    /// Converged per-element training loss `E0`.
    pub e0: f64,
    /// Decoder term `L0`, a constant offset.
    pub l0_const: f64,
    /// Fidelity weight `ω`.
    pub omega: f64,
    pub variance_model: VarianceModel,
    /// `η` for [`VarianceModel::DdimStandard`].
    pub variance_eta: f64,
    pub prior_model: PriorModel,
    pub formulation: KlFormulation,
    pub additive_term: AdditiveTerm,
}

impl Default for ErrorModelConfig {
    fn default() -> Self {
        Self {
            e0: 1.0,
            l0_const: 0.0,
            omega: 0.004,
            variance_model: VarianceModel::Ddpm,
            variance_eta: 1.0,
            prior_model: PriorModel::Zero,
            formulation: KlFormulation::Standard,
            additive_term: AdditiveTerm::Expanded,
        }
    }
}

impl ErrorModelConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.omega > 0.0 && self.omega.is_finite()) {
            return Err(Error::config("error_model.omega", "must be positive"));
        }
        if !(self.e0 >= 0.0 && self.e0.is_finite()) {
            return Err(Error::config("error_model.e0", "must be nonnegative"));
        }
        if !self.l0_const.is_finite() {
            return Err(Error::config("error_model.l0_const", "must be finite"));
        }
        if !(self.variance_eta >= 0.0 && self.variance_eta.is_finite()) {
            return Err(Error::config("error_model.variance_eta", "must be nonnegative"));
        }
        Ok(())
    }
}

/// Reverse variance `σ_i²` under `model`, before any flooring.
///
/// Every model vanishes at `i = 1` (`ᾱ_0 = 1`); there the step-2 value is
/// used instead, the usual clipping of the first posterior variance.
pub fn reverse_variance(i: usize, schedule: &NoiseSchedule, model: VarianceModel, eta: f64) -> f64 {
    let raw = |i: usize| match model {
        VarianceModel::Ddpm => schedule.beta_tilde(i),
        VarianceModel::DdimRatio => {
            let ab = schedule.alpha_bar(i);
            let ab_prev = schedule.alpha_bar(i - 1);
            (1.0 - ab_prev) / (1.0 - ab) * ((1.0 - ab) / ab_prev)
        }
        VarianceModel::DdimStandard => eta * eta * schedule.beta_tilde(i),
    };
    if i == 1 && schedule.steps() >= 2 {
        raw(2)
    } else {
        raw(i)
    }
}

/// The per-step weight `(1−α_i)² / (2·α_i·(1−ᾱ_i)·σ_i²)` for `1 ≤ i ≤ T−1`.
pub fn per_step_weight(i: usize, schedule: &NoiseSchedule, model: VarianceModel, eta: f64) -> Result<f64> {
    if i < 1 || i + 1 > schedule.steps() {
        return Err(Error::range(
            "i",
            i as f64,
            1.0,
            schedule.steps().saturating_sub(1) as f64,
        ));
    }
    let var = reverse_variance(i, schedule, model, eta);
    if !(var >= VARIANCE_FLOOR) {
        return Err(Error::Numerical {
            step: i,
            reason: format!("reverse variance {var:e} is below the floor {VARIANCE_FLOOR:e}"),
        });
    }
    let b = schedule.beta(i);
    let a = schedule.alpha(i);
    let ab = schedule.alpha_bar(i);
    Ok(b * b / (2.0 * a * (1.0 - ab) * var))
}

/// `C_t` for the configured prior model; `x0_sq` is `‖x0‖²`.
pub fn prior_term(t: usize, config: &ErrorModelConfig, schedule: &NoiseSchedule, x0_sq: f64) -> f64 {
    match config.prior_model {
        PriorModel::Zero => 0.0,
        PriorModel::StandardNormalKl => {
            let ab = schedule.alpha_bar(t);
            if ab >= 1.0 {
                return f64::INFINITY;
            }
            0.5 * (ab * (x0_sq - 1.0) - (1.0 - ab).ln())
        }
    }
}

/// The cumulative bound `L̄_t = C_t + Σ_{i<t} w_i·E0 + L0` for `1 ≤ t ≤ T`.
pub fn cumulative_bound(t: usize, config: &ErrorModelConfig, schedule: &NoiseSchedule, x0_sq: f64) -> Result<f64> {
    schedule.check_step(t, 1)?;
    let mut sum = 0.0;
    for i in 1..t {
        sum += per_step_weight(i, schedule, config.variance_model, config.variance_eta)?;
    }
    Ok(prior_term(t, config, schedule, x0_sq) + sum * config.e0 + config.l0_const)
}

/// Per-element second moments of a ground-truth / degraded pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapStats {
    /// `‖x0 − x̂0‖²`.
    pub diff_sq: f64,
    /// `‖x0‖²`.
    pub x0_sq: f64,
    /// `‖x̂0‖²`.
    pub xhat_sq: f64,
}

impl GapStats {
    pub fn from_pair(x0: &ImageTensor, x_hat0: &ImageTensor) -> Result<Self> {
        Ok(Self {
            diff_sq: x0.mse(x_hat0)?,
            x0_sq: x0.mean_sq(),
            xhat_sq: x_hat0.mean_sq(),
        })
    }
}

/// `K_t = ᾱ_t/(1−ᾱ_t)`; infinite at `t = 0`.
pub fn k_coefficient(t: usize, schedule: &NoiseSchedule) -> f64 {
    let ab = schedule.alpha_bar(t);
    if ab >= 1.0 {
        f64::INFINITY
    } else {
        ab / (1.0 - ab)
    }
}

/// `k·v` with `∞·0 = 0`.
fn scaled(k: f64, v: f64) -> f64 {
    if v == 0.0 {
        0.0
    } else {
        k * v
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForwardGap {
    pub kl: f64,
    pub k: f64,
    pub a: f64,
}

/// Forward-gap KL from precomputed pair statistics.
pub fn forward_gap_from_stats(
    stats: &GapStats,
    t: usize,
    schedule: &NoiseSchedule,
    formulation: KlFormulation,
    additive: AdditiveTerm,
) -> Result<ForwardGap> {
    schedule.check_step(t, 0)?;
    let k = k_coefficient(t, schedule);
    Ok(match formulation {
        KlFormulation::Standard => ForwardGap {
            kl: 0.5 * scaled(k, stats.diff_sq),
            k,
            a: 0.0,
        },
        KlFormulation::Offset => {
            let a = match additive {
                AdditiveTerm::Expanded => scaled(k, stats.x0_sq + stats.xhat_sq),
                AdditiveTerm::Zero => 0.0,
            };
            ForwardGap {
                kl: a + scaled(k, stats.diff_sq),
                k,
                a,
            }
        }
    })
}

/// `KL(q(x_t | x0) ‖ q(x_t | x̂0))` in the chosen closed form.
pub fn forward_gap_kl(
    x0: &ImageTensor,
    x_hat0: &ImageTensor,
    t: usize,
    schedule: &NoiseSchedule,
    formulation: KlFormulation,
    additive: AdditiveTerm,
) -> Result<ForwardGap> {
    let stats = GapStats::from_pair(x0, x_hat0)?;
    forward_gap_from_stats(&stats, t, schedule, formulation, additive)
}

/// Per-step loss curves over `t ∈ [0, T]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossCurve {
    pub steps: usize,
    pub omega: f64,
    pub signature: Vec<f64>,
    pub fidelity: Vec<f64>,
    pub weighted_fidelity: Vec<f64>,
    pub total: Vec<f64>,
    pub k: Vec<f64>,
    pub a: Vec<f64>,
}

impl LossCurve {
    /// Assembles a curve from raw signature and fidelity arrays.
    pub fn from_parts(omega: f64, signature: Vec<f64>, fidelity: Vec<f64>) -> Result<Self> {
        if signature.len() != fidelity.len() || signature.is_empty() {
            return Err(Error::Shape {
                expected: format!("{} fidelity values", signature.len()),
                actual: format!("{}", fidelity.len()),
            });
        }
        let weighted_fidelity: Vec<f64> = fidelity.iter().map(|f| omega * f).collect();
        let total = signature.iter().zip(&weighted_fidelity).map(|(s, w)| s + w).collect();
        let n = signature.len();
        Ok(Self {
            steps: n - 1,
            omega,
            signature,
            fidelity,
            weighted_fidelity,
            total,
            k: vec![f64::NAN; n],
            a: vec![0.0; n],
        })
    }

    pub fn len(&self) -> usize {
        self.signature.len()
    }

    pub fn is_empty(&self) -> bool {
        self.signature.is_empty()
    }

    /// Writes `t,noise_level,signature,fidelity,weighted_fidelity,total,K_t,A_t`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t,noise_level,signature,fidelity,weighted_fidelity,total,K_t,A_t")?;
        for t in 0..self.len() {
            writeln!(
                w,
                "{t},{},{},{},{},{},{},{}",
                num(t as f64 / self.steps as f64),
                num(self.signature[t]),
                num(self.fidelity[t]),
                num(self.weighted_fidelity[t]),
                num(self.total[t]),
                num(self.k[t]),
                num(self.a[t]),
            )?;
        }
        Ok(())
    }

    /// Parses the format written by [`LossCurve::write_csv`].
    pub fn read_csv(text: &str, omega: f64) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| Error::format("curve csv", "empty input"))?;
        let cols: Vec<&str> = header.split(',').map(str::trim).collect();
        let col = |name: &str| {
            cols.iter()
                .position(|c| *c == name)
                .ok_or_else(|| Error::format("curve csv", format!("missing column {name}")))
        };
        let (ci, si, fi, ki, ai) = (col("t")?, col("signature")?, col("fidelity")?, col("K_t"), col("A_t"));
        let (mut sig, mut fid, mut ks, mut as_) = (vec![], vec![], vec![], vec![]);
        for (row, line) in lines.enumerate() {
            let vals: Vec<&str> = line.split(',').map(str::trim).collect();
            let get = |i: usize| -> Result<f64> {
                vals.get(i)
                    .ok_or_else(|| Error::format("curve csv", format!("row {row} is short")))?
                    .parse::<f64>()
                    .map_err(|e| Error::format("curve csv", format!("row {row}: {e}")))
            };
            if get(ci)? as usize != row {
                return Err(Error::format("curve csv", format!("row {row} has t = {}", vals[ci])));
            }
            sig.push(get(si)?);
            fid.push(get(fi)?);
            ks.push(match &ki {
                Ok(i) => get(*i)?,
                Err(_) => f64::NAN,
            });
            as_.push(match &ai {
                Ok(i) => get(*i)?,
                Err(_) => 0.0,
            });
        }
        let mut curve = LossCurve::from_parts(omega, sig, fid)?;
        curve.k = ks;
        curve.a = as_;
        Ok(curve)
    }
}

fn num(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else if v.is_nan() {
        "nan".into()
    } else if v > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

/// Signature, fidelity and total curves for a pair described by `stats`.
pub fn loss_curve_from_stats(
    stats: &GapStats,
    config: &ErrorModelConfig,
    schedule: &NoiseSchedule,
) -> Result<LossCurve> {
    config.validate()?;
    let t_max = schedule.steps();
    let n = t_max + 1;
    let mut signature = Vec::with_capacity(n);
    let mut fidelity = Vec::with_capacity(n);
    let mut ks = Vec::with_capacity(n);
    let mut as_ = Vec::with_capacity(n);
    let mut weight_sum = 0.0;
    for t in 0..=t_max {
        if t >= 2 {
            weight_sum += per_step_weight(t - 1, schedule, config.variance_model, config.variance_eta)
                .map_err(|e| annotate(e, t))?;
        }
        let c_t = prior_term(t, config, schedule, stats.x0_sq);
        signature.push(c_t + weight_sum * config.e0 + config.l0_const);
        let gap = forward_gap_from_stats(stats, t, schedule, config.formulation, config.additive_term)
            .map_err(|e| annotate(e, t))?;
        fidelity.push(gap.kl);
        ks.push(gap.k);
        as_.push(gap.a);
    }
    let mut curve = LossCurve::from_parts(config.omega, signature, fidelity)?;
    curve.k = ks;
    curve.a = as_;
    Ok(curve)
}

fn annotate(e: Error, t: usize) -> Error {
    match e {
        e @ Error::Numerical { .. } => e,
        other => Error::Numerical {
            step: t,
            reason: other.to_string(),
        },
    }
}

/// Loss curves for a ground-truth image `x0` and its degraded version `x_hat0`.
pub fn loss_curve(
    x0: &ImageTensor,
    x_hat0: &ImageTensor,
    config: &ErrorModelConfig,
    schedule: &NoiseSchedule,
) -> Result<LossCurve> {
    let stats = GapStats::from_pair(x0, x_hat0)?;
    loss_curve_from_stats(&stats, config, schedule)
}

/// Monte Carlo estimate of the per-element training loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct E0Estimate {
    pub mean: f64,
    pub std_error: f64,
    pub trials: usize,
}

/// Averages `‖ε − ε_θ(√ᾱ_t·x0 + √(1−ᾱ_t)·ε, t)‖²` over uniformly drawn
/// `(x0, t, ε)`, with `t ∈ [1, T]`.
pub fn estimate_e0<D: Denoiser + ?Sized>(
    denoiser: &D,
    samples: &[ImageTensor],
    schedule: &NoiseSchedule,
    rng: &mut DiffRng,
    trials: usize,
) -> Result<E0Estimate> {
    if trials == 0 {
        return Err(Error::config("trials", "must be at least 1"));
    }
    if samples.is_empty() {
        return Err(Error::config("samples", "must not be empty"));
    }
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..trials {
        let x0 = &samples[rng.random_range(0..samples.len())];
        let t = rng.random_range(1..=schedule.steps());
        let eps = normal_like(x0.shape(), rng);
        let x_t = forward_marginal_with(x0, t, schedule, &eps)?;
        let eps_hat = predict_checked(denoiser, &x_t, t)?;
        let err = eps.mse(&eps_hat)?;
        sum += err;
        sum_sq += err * err;
    }
    let n = trials as f64;
    let mean = sum / n;
    let var = if trials > 1 {
        ((sum_sq - n * mean * mean) / (n - 1.0)).max(0.0)
    } else {
        0.0
    };
    Ok(E0Estimate {
        mean,
        std_error: (var / n).sqrt(),
        trials,
    })
}
