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

//! Distortion metrics and a frequency-band error split.

use std::io::Write;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::ImageTensor;

/// PSNR reported for identical images.
pub const PSNR_CAP_DB: f64 = 99.0;

/// Rec. 601 luma weights.
const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

/// `10·log10(peak² / MSE)`, capped at [`PSNR_CAP_DB`].
pub fn psnr(a: &ImageTensor, b: &ImageTensor, peak: f64) -> Result<f64> {
    if !(peak > 0.0 && peak.is_finite()) {
        return Err(Error::range("peak", peak, f64::MIN_POSITIVE, f64::MAX));
    }
    let mse = a.mse(b)?;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (peak * peak / mse).log10()).min(PSNR_CAP_DB))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SsimParams {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    /// Dynamic range of the pixel values.
    pub peak: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        Self {
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            peak: 1.0,
        }
    }
}

/// Single-channel view: the image itself, or its Rec. 601 luma for RGB.
pub fn luma(img: &ImageTensor) -> Result<ImageTensor> {
    match img.channels() {
        1 => Ok(img.clone()),
        3 => {
            let d = img.data();
            let data = d
                .chunks_exact(3)
                .map(|p| LUMA[0] * p[0] + LUMA[1] * p[1] + LUMA[2] * p[2])
                .collect();
            Ok(ImageTensor::new(img.height(), img.width(), 1, data)?.with_range(img.range()))
        }
        c => Err(Error::Shape {
            expected: "1 or 3 channels".into(),
            actual: format!("{c} channels"),
        }),
    }
}

fn gaussian_kernel(size: usize, sigma: f64) -> Vec<f64> {
    let mid = (size as f64 - 1.0) / 2.0;
    let k: Vec<f64> = (0..size)
        .map(|i| (-(i as f64 - mid).powi(2) / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Separable valid-mode filtering of a `h × w` plane.
fn filter_valid(plane: &[f64], h: usize, w: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (oh, ow) = (h - n + 1, w - n + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        let src = &plane[y * w..(y + 1) * w];
        for x in 0..ow {
            rows[y * ow + x] = k.iter().zip(&src[x..x + n]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..n).map(|j| k[j] * rows[(y + j) * ow + x]).sum();
        }
    }
    out
}

/// Mean local SSIM over a Gaussian window, valid positions only.
pub fn ssim(a: &ImageTensor, b: &ImageTensor, params: &SsimParams) -> Result<f64> {
    a.ensure_same_shape(b)?;
    let n = params.window;
    if n == 0 || a.height() < n || a.width() < n {
        return Err(Error::config(
            "ssim.window",
            format!("window {n} does not fit a {}x{} image", a.height(), a.width()),
        ));
    }
    if !(params.sigma > 0.0) || !(params.peak > 0.0) {
        return Err(Error::config("ssim", "sigma and peak must be positive"));
    }
    let (la, lb) = (luma(a)?, luma(b)?);
    let (h, w) = (a.height(), a.width());
    let k = gaussian_kernel(n, params.sigma);
    let x = la.data();
    let y = lb.data();
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(y).map(|(p, q)| p * q).collect();
    let mu_x = filter_valid(x, h, w, &k);
    let mu_y = filter_valid(y, h, w, &k);
    let s_xx = filter_valid(&xx, h, w, &k);
    let s_yy = filter_valid(&yy, h, w, &k);
    let s_xy = filter_valid(&xy, h, w, &k);
    let c1 = (params.k1 * params.peak).powi(2);
    let c2 = (params.k2 * params.peak).powi(2);
    let mut sum = 0.0;
    for i in 0..mu_x.len() {
        let (mx, my) = (mu_x[i], mu_y[i]);
        let vx = s_xx[i] - mx * mx;
        let vy = s_yy[i] - my * my;
        let cov = s_xy[i] - mx * my;
        sum += ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
    }
    Ok(sum / mu_x.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FreqSplitSpec {
    /// Side of the centered low-frequency box as a fraction of each axis.
    pub low_band_fraction: f64,
}

impl Default for FreqSplitSpec {
    fn default() -> Self {
        Self {
            low_band_fraction: 0.25,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FreqSplit {
    pub low_err: f64,
    pub high_err: f64,
    pub total_err: f64,
}

/// Unnormalized 2-D DFT of one `h × w` plane, row-major, DC at index 0.
pub fn fft2(plane: &[f64], h: usize, w: usize) -> Vec<Complex<f64>> {
    let mut planner = FftPlanner::<f64>::new();
    let row_fft = planner.plan_fft_forward(w);
    let col_fft = planner.plan_fft_forward(h);
    let mut buf: Vec<Complex<f64>> = plane.iter().map(|&v| Complex::new(v, 0.0)).collect();
    for row in buf.chunks_exact_mut(w) {
        row_fft.process(row);
    }
    let mut col = vec![Complex::new(0.0, 0.0); h];
    for x in 0..w {
        for y in 0..h {
            col[y] = buf[y * w + x];
        }
        col_fft.process(&mut col);
        for y in 0..h {
            buf[y * w + x] = col[y];
        }
    }
    buf
}

/// Per-channel power `|X_k|² / (H·W)` on the unshifted DFT grid, so that the
/// sum over bins equals the spatial sum of squares.
pub fn power_spectrum(img: &ImageTensor) -> Vec<Vec<f64>> {
    let (h, w, _) = img.shape();
    let norm = (h * w) as f64;
    (0..img.channels())
        .map(|c| {
            let plane = img.channel(c);
            fft2(plane.data(), h, w)
                .into_iter()
                .map(|z| z.norm_sqr() / norm)
                .collect()
        })
        .collect()
}

/// Whether unshifted bin `k` of an axis of length `n` lies in the centered
/// box of side `side`. After an fftshift, bin `k` sits at `(k + n/2) mod n`
/// and the box spans `[n/2 − side/2, n/2 − side/2 + side)`.
fn in_box(k: usize, n: usize, side: usize) -> bool {
    let shifted = (k + n / 2) % n;
    let start = n / 2 - side / 2;
    shifted >= start && shifted < start + side
}

/// Splits the squared difference `a − b` into energy inside and outside a
/// centered low-frequency box.
pub fn freq_split_error(a: &ImageTensor, b: &ImageTensor, spec: &FreqSplitSpec) -> Result<FreqSplit> {
    a.ensure_same_shape(b)?;
    let f = spec.low_band_fraction;
    if !(f > 0.0 && f <= 1.0) {
        return Err(Error::range("low_band_fraction", f, 0.0, 1.0));
    }
    let (h, w, _) = a.shape();
    let side_h = ((f * h as f64).round() as usize).min(h);
    let side_w = ((f * w as f64).round() as usize).min(w);
    let diff = a.lincomb(1.0, b, -1.0);
    let (mut low, mut high) = (0.0, 0.0);
    for spectrum in power_spectrum(&diff) {
        for ky in 0..h {
            let row_in = in_box(ky, h, side_h);
            for kx in 0..w {
                let p = spectrum[ky * w + kx];
                if row_in && in_box(kx, w, side_w) {
                    low += p;
                } else {
                    high += p;
                }
            }
        }
    }
    Ok(FreqSplit {
        low_err: low,
        high_err: high,
        total_err: low + high,
    })
}

/// One row of the metrics batch CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub image: String,
    pub scale: f64,
    pub t: usize,
    pub noise_level: f64,
    pub psnr: f64,
    pub ssim: f64,
    pub low_err: f64,
    pub high_err: f64,
}

pub const METRICS_CSV_HEADER: &str = "image,scale,t,noise_level,psnr,ssim,low_err,high_err";

pub fn write_metrics_csv<W: Write>(mut w: W, rows: &[MetricsRow]) -> std::io::Result<()> {
    writeln!(w, "{METRICS_CSV_HEADER}")?;
    for r in rows {
        let name = if r.image.contains([',', '"', '\n']) {
            format!("\"{}\"", r.image.replace('"', "\"\""))
        } else {
            r.image.clone()
        };
        writeln!(
            w,
            "{name},{},{},{},{},{},{},{}",
            r.scale, r.t, r.noise_level, r.psnr, r.ssim, r.low_err, r.high_err
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pattern(h: usize, w: usize, c: usize) -> ImageTensor {
        ImageTensor::from_fn(h, w, c, |y, x, c| {
            ((y as f64 * 0.37 + x as f64 * 0.11 + c as f64).sin() * 0.4).clamp(-1.0, 1.0)
        })
    }

    #[test]
    fn psnr_cases() {
        let a = ImageTensor::filled(4, 4, 1, 0.3);
        let b = ImageTensor::filled(4, 4, 1, 0.4);
        assert!((psnr(&a, &b, 1.0).unwrap() - 20.0).abs() < 1e-9);
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), PSNR_CAP_DB);
        assert!(psnr(&a, &b, 0.0).is_err());
        assert!(psnr(&a, &ImageTensor::zeros(4, 5, 1), 1.0).is_err());
    }

    #[test]
    fn ssim_identity_and_symmetry() {
        let a = pattern(24, 20, 3);
        let b = pattern(24, 20, 3).map(|v| v * 0.7 + 0.05);
        let p = SsimParams::default();
        assert!((ssim(&a, &a, &p).unwrap() - 1.0).abs() < 1e-9);
        let ab = ssim(&a, &b, &p).unwrap();
        let ba = ssim(&b, &a, &p).unwrap();
        assert!((ab - ba).abs() < 1e-12);
        assert!(ab < 1.0);
    }

    #[test]
    fn ssim_constant_images() {
        let (c1v, c2v) = (0.2, 0.6);
        let a = ImageTensor::filled(16, 16, 1, c1v);
        let b = ImageTensor::filled(16, 16, 1, c2v);
        let p = SsimParams::default();
        let c1 = (0.01f64).powi(2);
        let c2 = (0.03f64).powi(2);
        let expect = (2.0 * c1v * c2v + c1) * c2 / ((c1v * c1v + c2v * c2v + c1) * c2);
        assert!((ssim(&a, &b, &p).unwrap() - expect).abs() < 1e-9);
    }

    #[test]
    fn ssim_anticorrelated_is_negative() {
        let a = ImageTensor::from_fn(20, 20, 1, |y, x, _| if (y + x) % 2 == 0 { 0.5 } else { -0.5 });
        let neg = a.map(|v| -v);
        assert!(ssim(&a, &neg, &SsimParams::default()).unwrap() < 0.0);
    }

    #[test]
    fn ssim_rejects_small_images() {
        let a = ImageTensor::zeros(10, 30, 1);
        assert!(matches!(
            ssim(&a, &a, &SsimParams::default()),
            Err(Error::Config { .. })
        ));
    }

    #[test]
    fn freq_split_parseval() {
        let a = pattern(12, 10, 2);
        let b = a.map(|v| v * v);
        let s = freq_split_error(&a, &b, &FreqSplitSpec::default()).unwrap();
        let spatial: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).powi(2)).sum();
        assert!((s.total_err - spatial).abs() <= 1e-9 * spatial);
        let z = freq_split_error(&a, &a, &FreqSplitSpec::default()).unwrap();
        assert_eq!((z.low_err, z.high_err, z.total_err), (0.0, 0.0, 0.0));
    }

    #[test]
    fn high_frequency_sinusoid_lands_outside_box() {
        let (h, w) = (32, 32);
        let a = ImageTensor::zeros(h, w, 1);
        let b = ImageTensor::from_fn(h, w, 1, |_, x, _| {
            0.3 * (2.0 * std::f64::consts::PI * 12.0 * x as f64 / w as f64).cos()
        });
        let s = freq_split_error(&a, &b, &FreqSplitSpec::default()).unwrap();
        let energy: f64 = b.data().iter().map(|v| v * v).sum();
        assert!(s.low_err < 1e-12 * energy);
        assert!((s.high_err - energy).abs() < 1e-9 * energy);
    }

    #[test]
    fn box_membership() {
        // n = 8, side = 2: shifted positions 3 and 4, i.e. bins 7 and 0
        let inside: Vec<usize> = (0..8).filter(|&k| in_box(k, 8, 2)).collect();
        assert_eq!(inside, vec![0, 7]);
        // odd n = 5, side = 1: only DC
        let inside: Vec<usize> = (0..5).filter(|&k| in_box(k, 5, 1)).collect();
        assert_eq!(inside, vec![0]);
        assert_eq!((0..6).filter(|&k| in_box(k, 6, 6)).count(), 6);
    }

    #[test]
    fn metrics_csv() {
        let rows = vec![MetricsRow {
            image: "a,b.png".into(),
            scale: 2.7,
            t: 200,
            noise_level: 0.2,
            psnr: 30.0,
            ssim: 0.9,
            low_err: 1.0,
            high_err: 2.0,
        }];
        let mut buf = Vec::new();
        write_metrics_csv(&mut buf, &rows).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.starts_with(METRICS_CSV_HEADER));
        assert!(s.contains("\"a,b.png\",2.7,200,0.2,30,0.9,1,2"));
    }
}
