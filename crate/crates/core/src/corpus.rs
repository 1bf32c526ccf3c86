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

//! Deterministic synthetic test images.
//!
//! Each image is a random Gaussian field with a `1/f^γ` amplitude spectrum,
//! the usual first-order model of natural image statistics, scaled by its
//! expected (not sample) standard deviation and clipped to `[−1, 1]`. Fixing
//! the spectral density rather than the realized variance keeps the fine-scale
//! content comparable from image to image. Color images mix a shared
//! luminance field with a weaker per-channel field.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::rng::{seeded, standard_normal, DiffRng};
use crate::tensor::ImageTensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusSpec {
    pub count: usize,
    pub size: usize,
    pub channels: usize,
    /// Amplitude falls off as `1/f^exponent`.
    pub exponent: f64,
    /// Expected standard deviation before clipping.
    pub std: f64,
    pub seed: u64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            count: 8,
            size: 256,
            channels: 3,
            exponent: 1.0,
            std: 0.35,
            seed: 20240,
        }
    }
}

fn field(size: usize, exponent: f64, rng: &mut DiffRng) -> Vec<f64> {
    let n = size;
    let mut spec = vec![Complex::new(0.0, 0.0); n * n];
    let mut power = 0.0;
    let signed = |k: usize| {
        let k = k as f64;
        if k > n as f64 / 2.0 {
            k - n as f64
        } else {
            k
        }
    };
    for ky in 0..n {
        for kx in 0..n {
            if ky == 0 && kx == 0 {
                continue;
            }
            let f = (signed(ky).powi(2) + signed(kx).powi(2)).sqrt() / n as f64;
            let amp = f.powf(-exponent);
            power += amp * amp;
            spec[ky * n + kx] = Complex::new(standard_normal(rng), standard_normal(rng)) * amp;
        }
    }
    let mut planner = FftPlanner::<f64>::new();
    let fft = planner.plan_fft_inverse(n);
    for row in spec.chunks_exact_mut(n) {
        fft.process(row);
    }
    let mut col = vec![Complex::new(0.0, 0.0); n];
    for x in 0..n {
        for y in 0..n {
            col[y] = spec[y * n + x];
        }
        fft.process(&mut col);
        for y in 0..n {
            spec[y * n + x] = col[y];
        }
    }
    // each real part has variance Σ amp²
    let sd = power.sqrt();
    spec.iter().map(|z| z.re / sd).collect()
}

/// One image of the corpus; image `i` only depends on `(spec, i)`.
pub fn corpus_image(spec: &CorpusSpec, index: usize) -> ImageTensor {
    let mut rng = seeded(spec.seed ^ (index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    let n = spec.size;
    let base = field(n, spec.exponent, &mut rng);
    let chroma: Vec<Vec<f64>> = if spec.channels == 1 {
        Vec::new()
    } else {
        (0..spec.channels).map(|_| field(n, spec.exponent, &mut rng)).collect()
    };
    ImageTensor::from_fn(n, n, spec.channels, |y, x, c| {
        let i = y * n + x;
        let v = if spec.channels == 1 {
            base[i]
        } else {
            0.9 * base[i] + 0.3 * chroma[c][i]
        };
        (v * spec.std).clamp(-1.0, 1.0)
    })
}

pub fn toy_corpus(spec: &CorpusSpec) -> Vec<ImageTensor> {
    (0..spec.count).map(|i| corpus_image(spec, i)).collect()
}

/// Per-element mean and variance pooled over a set of images.
pub fn pixel_moments(images: &[ImageTensor]) -> (f64, f64) {
    let (mut s, mut s2, mut n) = (0.0, 0.0, 0usize);
    for img in images {
        for &v in img.data() {
            s += v;
            s2 += v * v;
        }
        n += img.len();
    }
    let mean = s / n as f64;
    (mean, s2 / n as f64 - mean * mean)
}
