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

//! End-to-end super-resolution: degrade, upsample to the model resolution,
//! inject noise, reverse-diffuse.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::diffusion::{forward_marginal_sample, reverse_from, Denoiser, SamplerConfig};
use crate::error::{Error, Result};
use crate::error_analysis::ErrorModelConfig;
use crate::imageio::{read_png, write_png, PngDepth};
use crate::metrics::{freq_split_error, psnr, ssim, FreqSplit, FreqSplitSpec, SsimParams};
use crate::prf::{select_injection_step, PrfConfig, PrfReport, Reference};
use crate::resample::{resize, ResampleMethod};
use crate::rng::seeded;
use crate::rng::DiffRng;
use crate::schedule::NoiseSchedule;
use crate::tensor::{ImageTensor, ValueRange};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DegradeSpec {
    pub scale: f64,
    pub down_method: ResampleMethod,
    pub up_method: ResampleMethod,
}

impl DegradeSpec {
    pub fn bicubic(scale: f64) -> Self {
        Self {
            scale,
            down_method: ResampleMethod::Bicubic,
            up_method: ResampleMethod::Bicubic,
        }
    }
}

/// Size of the low-resolution intermediate, rounding half away from zero.
pub fn reduced_dims(h: usize, w: usize, scale: f64) -> Result<(usize, usize)> {
    if !(scale >= 1.0) || !scale.is_finite() {
        return Err(Error::range("scale", scale, 1.0, f64::INFINITY));
    }
    let lh = (h as f64 / scale).round() as usize;
    let lw = (w as f64 / scale).round() as usize;
    if lh == 0 || lw == 0 {
        return Err(Error::range("scale", scale, 1.0, 2.0 * h.min(w) as f64));
    }
    Ok((lh, lw))
}

/// Downsamples by `spec.scale` and restores the original size.
pub fn degrade(hr: &ImageTensor, spec: &DegradeSpec) -> Result<ImageTensor> {
    let (h, w, _) = hr.shape();
    let (lh, lw) = reduced_dims(h, w, spec.scale)?;
    let lr = resize(hr, lh, lw, spec.down_method)?;
    resize(&lr, h, w, spec.up_method)
}

fn check_native(img: &ImageTensor, denoiser: &(impl Denoiser + ?Sized)) -> Result<()> {
    if let Some((nh, nw)) = denoiser.native_resolution() {
        if (img.height(), img.width()) != (nh, nw) {
            return Err(Error::Shape {
                expected: format!("{nh}x{nw} (denoiser resolution)"),
                actual: format!("{}x{}", img.height(), img.width()),
            });
        }
    }
    Ok(())
}

/// Noises `lr_native` to step `t` and runs the reverse chain back to 0.
pub fn super_resolve<D: Denoiser + ?Sized>(
    lr_native: &ImageTensor,
    t: usize,
    denoiser: &D,
    sampler: &SamplerConfig,
    schedule: &NoiseSchedule,
    rng: &mut DiffRng,
) -> Result<ImageTensor> {
    check_native(lr_native, denoiser)?;
    schedule.check_step(t, 0)?;
    sampler.validate()?;
    if t == 0 {
        return Ok(lr_native.clone());
    }
    let (x_t, _) = forward_marginal_sample(lr_native, t, schedule, rng)?;
    reverse_from(&x_t, t, denoiser, sampler, schedule, rng)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "value")]
pub enum Injection {
    Step(usize),
    Auto,
}

/// Source of `‖x − x̂0‖²` for automatic step selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceMode {
    #[default]
    Proxy,
    /// Use the ground truth; only valid when one is available.
    Oracle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum InputMode {
    /// `input` is a ground-truth image at the model resolution.
    Evaluation { degrade: DegradeSpec },
    /// `input` is already low resolution; `reference` is an optional ground truth.
    Deployment {
        up_method: ResampleMethod,
        native: (usize, usize),
        reference: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SrRequest {
    pub input: PathBuf,
    pub mode: InputMode,
    pub injection: Injection,
    pub reference_mode: ReferenceMode,
    pub sampler: SamplerConfig,
    pub output: Option<PathBuf>,
    pub output_depth: Option<PngDepth>,
}

/// Everything a request needs besides its own fields.
pub struct SrDeps<'a> {
    pub denoiser: &'a dyn Denoiser,
    pub schedule: &'a NoiseSchedule,
    pub error_model: ErrorModelConfig,
    pub prf: PrfConfig,
    pub ssim: SsimParams,
    pub freq: FreqSplitSpec,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Timings {
    pub load_ms: f64,
    pub degrade_ms: f64,
    pub select_ms: f64,
    pub sample_ms: f64,
    pub metrics_ms: f64,
    pub write_ms: f64,
    pub total_ms: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quality {
    pub psnr: f64,
    pub ssim: f64,
    pub low_err: f64,
    pub high_err: f64,
    pub total_err: f64,
}

/// The JSON report written next to each output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SrReport {
    pub input: PathBuf,
    pub output: Option<PathBuf>,
    pub scale: Option<f64>,
    pub injection: String,
    pub t: Option<usize>,
    pub noise_level: Option<f64>,
    pub psnr: Option<f64>,
    pub ssim: Option<f64>,
    pub freq: Option<FreqSplit>,
    /// Quality of the upsampled input before diffusion.
    pub baseline: Option<Quality>,
    pub prf: Option<PrfReport>,
    pub timings: Timings,
    pub seed: u64,
    pub schedule_fingerprint: String,
    /// Filled in by external tooling; never computed here.
    pub fid: Option<f64>,
    pub stages_completed: Vec<String>,
    pub error: Option<String>,
}

impl SrReport {
    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n")?;
        Ok(())
    }
}

pub struct SrOutcome {
    pub report: SrReport,
    pub image: Option<ImageTensor>,
    pub error: Option<Error>,
}

fn ms(since: Instant) -> f64 {
    since.elapsed().as_secs_f64() * 1e3
}

/// Quality of `out` against `truth`, both in `[−1, 1]`, measured on `[0, 1]`.
pub fn quality(
    out: &ImageTensor,
    truth: &ImageTensor,
    ssim_params: &SsimParams,
    freq: &FreqSplitSpec,
) -> Result<Quality> {
    let a = out.remap(ValueRange::UNIT);
    let b = truth.remap(ValueRange::UNIT);
    let f = freq_split_error(&a, &b, freq)?;
    Ok(Quality {
        psnr: psnr(&a, &b, 1.0)?,
        ssim: ssim(
            &a,
            &b,
            &SsimParams {
                peak: 1.0,
                ..*ssim_params
            },
        )?,
        low_err: f.low_err,
        high_err: f.high_err,
        total_err: f.total_err,
    })
}

/// Runs one request. Failures are recorded in the report; stages finished
/// before the failure keep their results.
pub fn run_request(req: &SrRequest, deps: &SrDeps<'_>) -> SrOutcome {
    let seed = req.sampler.seed;
    let mut report = SrReport {
        input: req.input.clone(),
        output: req.output.clone(),
        scale: None,
        injection: match req.injection {
            Injection::Step(_) => "explicit".into(),
            Injection::Auto => "auto".into(),
        },
        t: None,
        noise_level: None,
        psnr: None,
        ssim: None,
        freq: None,
        baseline: None,
        prf: None,
        timings: Timings::default(),
        seed,
        schedule_fingerprint: deps.schedule.fingerprint(),
        fid: None,
        stages_completed: Vec::new(),
        error: None,
    };
    let mut image = None;
    let start = Instant::now();
    let result = run_stages(req, deps, &mut report, &mut image);
    report.timings.total_ms = ms(start);
    let error = result.err();
    if let Some(e) = &error {
        report.error = Some(e.to_string());
    }
    SrOutcome { report, image, error }
}

fn run_stages(
    req: &SrRequest,
    deps: &SrDeps<'_>,
    report: &mut SrReport,
    image: &mut Option<ImageTensor>,
) -> Result<()> {
    let clock = Instant::now();
    let (input, depth) = read_png(&req.input)?;
    report.timings.load_ms = ms(clock);
    report.stages_completed.push("load".into());

    let clock = Instant::now();
    let (lr_native, truth, scale) = match &req.mode {
        InputMode::Evaluation { degrade: spec } => {
            let lr = degrade(&input, spec)?;
            (lr, Some(input), spec.scale)
        }
        InputMode::Deployment {
            up_method,
            native,
            reference,
        } => {
            let scale = native.0 as f64 / input.height() as f64;
            let lr = resize(&input, native.0, native.1, *up_method)?;
            let truth = match reference {
                Some(p) => Some(read_png(p)?.0),
                None => None,
            };
            (lr, truth, scale)
        }
    };
    report.scale = Some(scale);
    report.timings.degrade_ms = ms(clock);
    report.stages_completed.push("prepare".into());
    check_native(&lr_native, deps.denoiser)?;
    if let Some(gt) = &truth {
        lr_native.ensure_same_shape(gt)?;
        report.baseline = Some(quality(&lr_native, gt, &deps.ssim, &deps.freq)?);
    }

    let clock = Instant::now();
    let t = match req.injection {
        Injection::Step(t) => {
            deps.schedule.check_step(t, 0)?;
            t
        }
        Injection::Auto => {
            let reference = match (req.reference_mode, &truth) {
                (ReferenceMode::Oracle, Some(gt)) => Reference::Oracle(gt),
                (ReferenceMode::Oracle, None) => {
                    return Err(Error::Usage("oracle step selection needs a ground-truth image".into()))
                }
                (ReferenceMode::Proxy, _) => Reference::Proxy { scale },
            };
            let sel = select_injection_step(reference, &lr_native, &deps.error_model, &deps.prf, deps.schedule)?;
            report.prf = Some(PrfReport::new(&sel.prf, None));
            sel.prf.t_star.ok_or_else(|| Error::Numerical {
                step: deps.schedule.steps(),
                reason: "no step satisfies both constraints; pass an explicit step".into(),
            })?
        }
    };
    report.t = Some(t);
    report.noise_level = Some(deps.schedule.noise_level(t)?);
    report.timings.select_ms = ms(clock);
    report.stages_completed.push("select".into());

    let clock = Instant::now();
    let mut rng = seeded(req.sampler.seed);
    let out = super_resolve(&lr_native, t, deps.denoiser, &req.sampler, deps.schedule, &mut rng)?.clamp_to_range();
    report.timings.sample_ms = ms(clock);
    report.stages_completed.push("sample".into());

    if let Some(gt) = &truth {
        let clock = Instant::now();
        let q = quality(&out, gt, &deps.ssim, &deps.freq)?;
        report.psnr = Some(q.psnr);
        report.ssim = Some(q.ssim);
        report.freq = Some(FreqSplit {
            low_err: q.low_err,
            high_err: q.high_err,
            total_err: q.total_err,
        });
        report.timings.metrics_ms = ms(clock);
        report.stages_completed.push("metrics".into());
    }

    if let Some(path) = &req.output {
        let clock = Instant::now();
        write_png(path, &out, req.output_depth.unwrap_or(depth))?;
        report.timings.write_ms = ms(clock);
        report.stages_completed.push("write".into());
    }
    *image = Some(out);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reduced_dims_rounding() {
        assert_eq!(reduced_dims(256, 256, 2.7).unwrap(), (95, 95));
        assert_eq!(reduced_dims(256, 256, 1.0).unwrap(), (256, 256));
        // 5 / 2 = 2.5 rounds away from zero
        assert_eq!(reduced_dims(5, 5, 2.0).unwrap(), (3, 3));
        assert!(reduced_dims(4, 4, 9.0).is_err());
        assert!(reduced_dims(4, 4, 0.5).is_err());
    }

    #[test]
    fn degrade_identities() {
        let img = ImageTensor::from_fn(8, 8, 3, |y, x, c| ((y / 2 + x / 2 + c) % 5) as f64 * 0.3 - 0.6);
        let nn = |s| DegradeSpec {
            scale: s,
            down_method: ResampleMethod::Nearest,
            up_method: ResampleMethod::Nearest,
        };
        assert_eq!(degrade(&img, &nn(1.0)).unwrap(), img);
        assert_eq!(degrade(&img, &nn(2.0)).unwrap(), img);
        assert_eq!(degrade(&img, &DegradeSpec::bicubic(2.7)).unwrap().shape(), img.shape());
    }
}
