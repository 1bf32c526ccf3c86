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

//! Separable image resampling.
//!
//! Pixel centers sit at half-integer positions, so output pixel `j` of an axis
//! resized from `n_in` to `n_out` maps to input coordinate
//! `(j + 0.5)·n_in/n_out − 0.5`. Bicubic uses the Keys kernel with `a = −0.5`
//! (Catmull-Rom), widened by `n_in/n_out` when shrinking so that it also acts
//! as the anti-aliasing filter. Out-of-range taps are clamped to the edge.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::ImageTensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResampleMethod {
    Nearest,
    Bicubic,
}

impl fmt::Display for ResampleMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ResampleMethod::Nearest => "nearest",
            ResampleMethod::Bicubic => "bicubic",
        })
    }
}

impl FromStr for ResampleMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nearest" => Ok(ResampleMethod::Nearest),
            "bicubic" => Ok(ResampleMethod::Bicubic),
            _ => Err(Error::config("resample method", format!("unknown method {s:?}"))),
        }
    }
}

pub const CUBIC_A: f64 = -0.5;

/// Keys cubic convolution kernel.
pub fn cubic_kernel(x: f64) -> f64 {
    let a = CUBIC_A;
    let x = x.abs();
    if x <= 1.0 {
        ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a
    } else {
        0.0
    }
}

/// Taps contributing to one output sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Taps {
    pub index: Vec<usize>,
    pub weight: Vec<f64>,
}

/// Per-output-sample taps for resizing an axis from `n_in` to `n_out`.
pub fn axis_taps(n_in: usize, n_out: usize, method: ResampleMethod) -> Vec<Taps> {
    let ratio = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|j| match method {
            ResampleMethod::Nearest => {
                let src = (((j as f64 + 0.5) * ratio).floor() as usize).min(n_in - 1);
                Taps {
                    index: vec![src],
                    weight: vec![1.0],
                }
            }
            ResampleMethod::Bicubic => {
                let support = ratio.max(1.0);
                let center = (j as f64 + 0.5) * ratio - 0.5;
                let lo = (center - 2.0 * support).floor() as i64 + 1;
                let hi = (center + 2.0 * support).ceil() as i64 - 1;
                let mut index = Vec::new();
                let mut weight = Vec::new();
                for i in lo..=hi {
                    let w = cubic_kernel((i as f64 - center) / support);
                    if w != 0.0 {
                        index.push(i.clamp(0, n_in as i64 - 1) as usize);
                        weight.push(w);
                    }
                }
                let sum: f64 = weight.iter().sum();
                weight.iter_mut().for_each(|w| *w /= sum);
                Taps { index, weight }
            }
        })
        .collect()
}

/// Resizes `img` to `out_h × out_w`.
pub fn resize(img: &ImageTensor, out_h: usize, out_w: usize, method: ResampleMethod) -> Result<ImageTensor> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::Shape {
            expected: "positive output size".into(),
            actual: format!("{out_h}x{out_w}"),
        });
    }
    let (h, w, c) = img.shape();
    if (h, w) == (out_h, out_w) && method == ResampleMethod::Nearest {
        return Ok(img.clone());
    }
    let tx = axis_taps(w, out_w, method);
    let ty = axis_taps(h, out_h, method);
    let src = img.data();

    // horizontal pass: h × out_w
    let mut mid = vec![0.0; h * out_w * c];
    for y in 0..h {
        for (x, taps) in tx.iter().enumerate() {
            for ch in 0..c {
                let mut acc = 0.0;
                for (&i, &wt) in taps.index.iter().zip(&taps.weight) {
                    acc += wt * src[(y * w + i) * c + ch];
                }
                mid[(y * out_w + x) * c + ch] = acc;
            }
        }
    }
    // vertical pass: out_h × out_w
    let mut out = vec![0.0; out_h * out_w * c];
    for (y, taps) in ty.iter().enumerate() {
        for x in 0..out_w {
            for ch in 0..c {
                let mut acc = 0.0;
                for (&i, &wt) in taps.index.iter().zip(&taps.weight) {
                    acc += wt * mid[(i * out_w + x) * c + ch];
                }
                out[(y * out_w + x) * c + ch] = acc;
            }
        }
    }
    Ok(ImageTensor::new(out_h, out_w, c, out)?.with_range(img.range()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_shape() {
        assert_eq!(cubic_kernel(0.0), 1.0);
        assert_eq!(cubic_kernel(1.0), 0.0);
        assert_eq!(cubic_kernel(2.0), 0.0);
        assert!((cubic_kernel(0.5) - 0.5625).abs() < 1e-15);
        assert!((cubic_kernel(1.5) + 0.0625).abs() < 1e-15);
        // partition of unity at any phase
        for k in 0..10 {
            let p = k as f64 / 10.0;
            let s: f64 = (-2..=2).map(|i| cubic_kernel(i as f64 - p)).sum();
            assert!((s - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn same_size_is_identity() {
        let img = ImageTensor::from_fn(7, 5, 2, |y, x, c| (y * 13 + x * 7 + c) as f64 * 0.01);
        for m in [ResampleMethod::Nearest, ResampleMethod::Bicubic] {
            let out = resize(&img, 7, 5, m).unwrap();
            for (a, b) in out.data().iter().zip(img.data()) {
                assert!((a - b).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn nearest_block_round_trip() {
        let img = ImageTensor::from_fn(8, 8, 1, |y, x, _| ((y / 2) * 4 + x / 2) as f64);
        let small = resize(&img, 4, 4, ResampleMethod::Nearest).unwrap();
        let back = resize(&small, 8, 8, ResampleMethod::Nearest).unwrap();
        assert_eq!(back, img);
    }

    #[test]
    fn bicubic_upsampling_reproduces_ramps_in_the_interior() {
        let (h, w) = (40, 40);
        let ramp = ImageTensor::from_fn(h, w, 1, |y, x, _| 0.01 * x as f64 - 0.02 * y as f64);
        for (oh, ow) in [(95, 95), (40, 61), (57, 40)] {
            let out = resize(&ramp, oh, ow, ResampleMethod::Bicubic).unwrap();
            let (ry, rx) = (h as f64 / oh as f64, w as f64 / ow as f64);
            let margin_y = (3.0 / ry).ceil() as usize;
            let margin_x = (3.0 / rx).ceil() as usize;
            for y in margin_y..oh - margin_y {
                for x in margin_x..ow - margin_x {
                    let sy = (y as f64 + 0.5) * ry - 0.5;
                    let sx = (x as f64 + 0.5) * rx - 0.5;
                    let expect = 0.01 * sx - 0.02 * sy;
                    assert!((out.get(y, x, 0) - expect).abs() < 1e-12);
                }
            }
        }
    }
}
