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

//! Variance schedules for the forward diffusion process.
//!
//! Steps are 1-based: `beta(t)`, `alpha(t)` and `beta_tilde(t)` are defined for
//! `1 ≤ t ≤ T`, while `alpha_bar(0) = 1` stands for the clean image.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Floor applied to the posterior variance when it is used to sample.
pub const VARIANCE_FLOOR: f64 = 1e-20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Linear,
    ScaledLinear,
    Cosine,
    Sigmoid,
    SquaredCosine,
}

impl ScheduleKind {
    pub const ALL: [ScheduleKind; 5] = [
        ScheduleKind::Linear,
        ScheduleKind::ScaledLinear,
        ScheduleKind::Cosine,
        ScheduleKind::Sigmoid,
        ScheduleKind::SquaredCosine,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScheduleKind::Linear => "linear",
            ScheduleKind::ScaledLinear => "scaled_linear",
            ScheduleKind::Cosine => "cosine",
            ScheduleKind::Sigmoid => "sigmoid",
            ScheduleKind::SquaredCosine => "squared_cosine",
        }
    }

    /// Whether `beta_start`/`beta_end` drive the schedule.
    pub fn uses_beta_range(self) -> bool {
        matches!(
            self,
            ScheduleKind::Linear | ScheduleKind::ScaledLinear | ScheduleKind::Sigmoid
        )
    }
}

impl fmt::Display for ScheduleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScheduleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ScheduleKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                Error::config(
                    "schedule.kind",
                    format!(
                        "unknown schedule kind {s:?} (expected one of linear, scaled_linear, cosine, sigmoid, squared_cosine)"
                    ),
                )
            })
    }
}

/// Knobs for the non-linear schedule families.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct ScheduleParams {
    /// Offset `s` in `f(t) = cos²(((t/T + s)/(1 + s))·π/2)`.
    pub cosine_offset: f64,
    /// Per-step cap for `cosine`; only bites at the final steps where `f → 0`.
    pub cosine_beta_cap: f64,
    /// Per-step cap for `squared_cosine`.
    pub squared_cosine_beta_cap: f64,
    /// Logistic input ramp for `sigmoid` spans `[-range, range]`.
    pub sigmoid_range: f64,
}

impl Default for ScheduleParams {
    fn default() -> Self {
        Self {
            cosine_offset: 0.008,
            cosine_beta_cap: 0.9999,
            squared_cosine_beta_cap: 0.999,
            sigmoid_range: 6.0,
        }
    }
}

/// Everything needed to build a schedule.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct ScheduleConfig {
    pub kind: ScheduleKind,
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    #[serde(flatten)]
    pub params: ScheduleParams,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            kind: ScheduleKind::Linear,
            steps: 1000,
            beta_start: 1e-4,
            beta_end: 0.02,
            params: ScheduleParams::default(),
        }
    }
}

impl ScheduleConfig {
    pub fn build(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::build(self.kind, self.steps, self.beta_start, self.beta_end, self.params)
    }
}

/// Precomputed per-step quantities of a variance schedule.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    kind: ScheduleKind,
    // All four vectors have length T + 1; index 0 holds the clean-image convention
    // (beta = 0, alpha = 1, alpha_bar = 1, beta_tilde = 0).
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
    beta_tilde: Vec<f64>,
}

impl NoiseSchedule {
    pub fn build(
        kind: ScheduleKind,
        steps: usize,
        beta_start: f64,
        beta_end: f64,
        params: ScheduleParams,
    ) -> Result<Self> {
        if steps == 0 {
            return Err(Error::config("schedule.steps", "must be at least 1"));
        }
        if kind.uses_beta_range() {
            if !(beta_start > 0.0 && beta_start < 1.0) {
                return Err(Error::config(
                    "schedule.beta_start",
                    format!("{beta_start} is outside (0, 1)"),
                ));
            }
            if !(beta_end > 0.0 && beta_end < 1.0) {
                return Err(Error::config(
                    "schedule.beta_end",
                    format!("{beta_end} is outside (0, 1)"),
                ));
            }
            if beta_start > beta_end {
                return Err(Error::config(
                    "schedule.beta_end",
                    format!("{beta_end} is below beta_start {beta_start}"),
                ));
            }
        }

        let betas = match kind {
            ScheduleKind::Linear => ramp(steps, beta_start, beta_end),
            ScheduleKind::ScaledLinear => ramp(steps, beta_start.sqrt(), beta_end.sqrt())
                .into_iter()
                .map(|b| b * b)
                .collect(),
            ScheduleKind::Sigmoid => {
                let r = params.sigmoid_range;
                if !(r > 0.0 && r.is_finite()) {
                    return Err(Error::config("schedule.sigmoid_range", "must be positive"));
                }
                ramp(steps, -r, r)
                    .into_iter()
                    .map(|x| {
                        // normalise so the ramp endpoints hit beta_start / beta_end exactly
                        let lo = logistic(-r);
                        let hi = logistic(r);
                        let s = if steps == 1 {
                            0.0
                        } else {
                            (logistic(x) - lo) / (hi - lo)
                        };
                        beta_start + s * (beta_end - beta_start)
                    })
                    .collect()
            }
            ScheduleKind::Cosine => cosine_betas(steps, params.cosine_offset, params.cosine_beta_cap)?,
            ScheduleKind::SquaredCosine => cosine_betas(steps, params.cosine_offset, params.squared_cosine_beta_cap)?,
        };

        Self::from_betas(kind, &betas)
    }

    /// Builds a schedule from explicit per-step variances `betas[0..T]`
    /// (step 1 first), each of which must lie in `(0, 1)`.
    pub fn from_betas(kind: ScheduleKind, betas: &[f64]) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::config("schedule.steps", "must be at least 1"));
        }
        for (i, &b) in betas.iter().enumerate() {
            if !(b > 0.0 && b < 1.0) {
                return Err(Error::config(
                    "schedule",
                    format!("beta[{}] = {b} is outside (0, 1)", i + 1),
                ));
            }
        }
        Ok(Self::assemble(kind, betas))
    }

    fn assemble(kind: ScheduleKind, betas: &[f64]) -> Self {
        let t_max = betas.len();
        let mut beta = Vec::with_capacity(t_max + 1);
        let mut alpha = Vec::with_capacity(t_max + 1);
        let mut alpha_bar = Vec::with_capacity(t_max + 1);
        let mut beta_tilde = Vec::with_capacity(t_max + 1);
        beta.push(0.0);
        alpha.push(1.0);
        alpha_bar.push(1.0);
        beta_tilde.push(0.0);
        for (i, &b) in betas.iter().enumerate() {
            let a = 1.0 - b;
            let prev = alpha_bar[i];
            let cur = prev * a;
            beta.push(b);
            alpha.push(a);
            alpha_bar.push(cur);
            beta_tilde.push((1.0 - prev) / (1.0 - cur) * b);
        }
        Self {
            kind,
            beta,
            alpha,
            alpha_bar,
            beta_tilde,
        }
    }

    pub fn kind(&self) -> ScheduleKind {
        self.kind
    }

    /// Number of diffusion steps `T`.
    pub fn steps(&self) -> usize {
        self.beta.len() - 1
    }

    pub fn beta(&self, t: usize) -> f64 {
        assert!(t >= 1, "beta is defined for t >= 1");
        self.beta[t]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        assert!(t >= 1, "alpha is defined for t >= 1");
        self.alpha[t]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        self.alpha_bar[t]
    }

    pub fn beta_tilde(&self, t: usize) -> f64 {
        assert!(t >= 1, "beta_tilde is defined for t >= 1");
        self.beta_tilde[t]
    }

    /// `beta_tilde(t)` floored at [`VARIANCE_FLOOR`], for use as a sampling variance.
    pub fn sampling_variance(&self, t: usize) -> f64 {
        self.beta_tilde(t).max(VARIANCE_FLOOR)
    }

    /// `alpha_bar[0..=T]`.
    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    /// `beta[1..=T]`.
    pub fn betas(&self) -> &[f64] {
        &self.beta[1..]
    }

    /// Errors unless `lo ≤ t ≤ T`.
    pub fn check_step(&self, t: usize, lo: usize) -> Result<()> {
        if t < lo || t > self.steps() {
            return Err(Error::range("t", t as f64, lo as f64, self.steps() as f64));
        }
        Ok(())
    }

    /// Fraction of the forward chain applied at step `t`, i.e. `t / T`.
    pub fn noise_level(&self, t: usize) -> Result<f64> {
        self.check_step(t, 0)?;
        Ok(t as f64 / self.steps() as f64)
    }

    /// The step closest to noise level `nl`, `round(nl · T)`.
    pub fn step_for_noise_level(&self, nl: f64) -> Result<usize> {
        if !(0.0..=1.0).contains(&nl) {
            return Err(Error::range("noise_level", nl, 0.0, 1.0));
        }
        Ok((nl * self.steps() as f64).round() as usize)
    }

    /// Short hex digest of the beta sequence; identical schedules share it.
    ///
    /// SHA-256 over `beta[1..=T]` as little-endian IEEE-754 doubles, truncated
    /// to the first 16 hex characters.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for b in self.betas() {
            h.update(b.to_le_bytes());
        }
        let digest = h.finalize();
        hex::encode(&digest[..8])
    }

    /// Writes `t,beta,alpha,alpha_bar,beta_tilde`, one row per step `1..=T`,
    /// with 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "t,beta,alpha,alpha_bar,beta_tilde")?;
        for t in 1..=self.steps() {
            writeln!(
                w,
                "{t},{:.16e},{:.16e},{:.16e},{:.16e}",
                self.beta[t], self.alpha[t], self.alpha_bar[t], self.beta_tilde[t]
            )?;
        }
        Ok(())
    }
}

/// `n` evenly spaced points from `a` to `b` inclusive (`[a]` when `n = 1`).
fn ramp(n: usize, a: f64, b: f64) -> Vec<f64> {
    if n == 1 {
        return vec![a];
    }
    let d = (b - a) / (n - 1) as f64;
    (0..n).map(|i| if i == n - 1 { b } else { a + d * i as f64 }).collect()
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn cosine_betas(steps: usize, offset: f64, cap: f64) -> Result<Vec<f64>> {
    if !(offset >= 0.0 && offset.is_finite()) {
        return Err(Error::config("schedule.cosine_offset", "must be a nonnegative number"));
    }
    if !(cap > 0.0 && cap < 1.0) {
        return Err(Error::config("schedule.beta_cap", format!("{cap} is outside (0, 1)")));
    }
    let f = |t: usize| {
        let u = (t as f64 / steps as f64 + offset) / (1.0 + offset);
        (u * std::f64::consts::FRAC_PI_2).cos().powi(2)
    };
    Ok((1..=steps).map(|t| (1.0 - f(t) / f(t - 1)).min(cap)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn linear() -> NoiseSchedule {
        ScheduleConfig::default().build().unwrap()
    }

    #[test]
    fn linear_endpoints() {
        let s = linear();
        assert_eq!(s.steps(), 1000);
        assert_eq!(s.beta(1), 1e-4);
        assert_eq!(s.beta(1000), 0.02);
        assert_eq!(s.alpha_bar(0), 1.0);
    }

    #[test]
    fn linear_is_arithmetic() {
        let s = linear();
        let d = s.beta(2) - s.beta(1);
        for t in 2..=1000 {
            assert!((s.beta(t) - s.beta(t - 1) - d).abs() < 1e-15);
        }
    }

    #[test]
    fn alpha_bar_zero_for_every_kind() {
        for kind in ScheduleKind::ALL {
            let s = NoiseSchedule::build(kind, 50, 1e-4, 0.02, ScheduleParams::default()).unwrap();
            assert_eq!(s.alpha_bar(0), 1.0);
        }
    }

    #[test]
    fn beta_tilde_first_step_is_zero() {
        let s = linear();
        assert_eq!(s.beta_tilde(1), 0.0);
        assert_eq!(s.sampling_variance(1), VARIANCE_FLOOR);
        let t = 37;
        let expect = (1.0 - s.alpha_bar(t - 1)) / (1.0 - s.alpha_bar(t)) * s.beta(t);
        assert_eq!(s.beta_tilde(t), expect);
    }

    #[test]
    fn rejects_bad_config() {
        let p = ScheduleParams::default();
        let err = NoiseSchedule::build(ScheduleKind::Linear, 0, 1e-4, 0.02, p).unwrap_err();
        assert!(err.to_string().contains("schedule.steps"));
        let err = NoiseSchedule::build(ScheduleKind::Linear, 10, 0.0, 0.02, p).unwrap_err();
        assert!(err.to_string().contains("beta_start"));
        let err = NoiseSchedule::build(ScheduleKind::Sigmoid, 10, 1e-4, 1.0, p).unwrap_err();
        assert!(err.to_string().contains("beta_end"));
        let err = NoiseSchedule::build(ScheduleKind::Linear, 10, 0.02, 1e-4, p).unwrap_err();
        assert!(err.to_string().contains("beta_end"));
    }

    #[test]
    fn unknown_kind_is_rejected() {
        assert!("quadratic".parse::<ScheduleKind>().is_err());
        for k in ScheduleKind::ALL {
            assert_eq!(k.name().parse::<ScheduleKind>().unwrap(), k);
        }
    }

    #[test]
    fn noise_level_examples() {
        let s = linear();
        assert_eq!(s.noise_level(0).unwrap(), 0.0);
        assert_eq!(s.noise_level(1000).unwrap(), 1.0);
        assert_eq!(s.noise_level(200).unwrap(), 0.2);
        assert!(s.noise_level(1001).is_err());
        assert_eq!(s.step_for_noise_level(0.2).unwrap(), 200);
    }

    #[test]
    fn single_step_schedules() {
        for kind in ScheduleKind::ALL {
            let s = NoiseSchedule::build(kind, 1, 1e-4, 0.02, ScheduleParams::default()).unwrap();
            assert!(s.beta(1) > 0.0 && s.beta(1) < 1.0);
            assert!(s.alpha_bar(1) < 1.0);
        }
    }

    #[test]
    fn csv_has_header_and_one_row_per_step() {
        let s = NoiseSchedule::build(ScheduleKind::Cosine, 20, 1e-4, 0.02, ScheduleParams::default()).unwrap();
        let mut buf = Vec::new();
        s.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "t,beta,alpha,alpha_bar,beta_tilde");
        assert_eq!(lines.len(), 21);
        let row: Vec<f64> = lines[5].split(',').map(|v| v.parse().unwrap()).collect();
        assert_eq!(row[0], 5.0);
        assert_eq!(row[3], s.alpha_bar(5));
    }

    #[test]
    fn fingerprint_distinguishes_schedules() {
        let a = linear();
        let b = ScheduleConfig {
            kind: ScheduleKind::Cosine,
            ..ScheduleConfig::default()
        }
        .build()
        .unwrap();
        assert_eq!(a.fingerprint(), linear().fingerprint());
        assert_ne!(a.fingerprint(), b.fingerprint());
        assert_eq!(a.fingerprint().len(), 16);
    }
}
