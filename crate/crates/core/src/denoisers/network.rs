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

//! A small residual CNN loaded from a weight container file.
//!
//! Container layout, all integers little-endian:
//!
//! ```text
//! magic   4 bytes   "DSRW"
//! hlen    u32       header length in bytes
//! header  hlen      UTF-8 JSON, see `ContainerHeader`
//! payload           f32 tensors in header order
//! ```
//!
//! Each layer declares the tensors it owns, in order:
//!
//! | kind             | tensors                                        |
//! |------------------|------------------------------------------------|
//! | `conv3x3`        | weight `[out, in, 3, 3]`, bias `[out]`         |
//! | `group_norm`     | gamma `[C]`, beta `[C]`                        |
//! | `time_bias`      | weight `[C, D]`, bias `[C]`                    |
//! | `silu`, `residual_begin`, `residual_add` | none                   |
//!
//! `time_bias` adds `W·emb(t) + b` to every pixel, where `emb` is the
//! `D`-dimensional sinusoidal embedding `[sin(t·f_k)…, cos(t·f_k)…]`,
//! `f_k = 10000^(−k/(D/2 − 1))`. `residual_begin` pushes the current
//! activation, `residual_add` pops one and adds it. Arithmetic is in `f32`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::diffusion::Denoiser;
use crate::error::{Error, Result};
use crate::tensor::ImageTensor;

pub const MAGIC: &[u8; 4] = b"DSRW";
pub const SCHEMA_VERSION: u32 = 1;
/// Headers larger than this are rejected before allocation.
const MAX_HEADER: usize = 16 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    None,
    Silu,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LayerSpec {
    Conv3x3 {
        in_channels: usize,
        out_channels: usize,
        activation: Activation,
    },
    GroupNorm {
        channels: usize,
        groups: usize,
        eps: f32,
    },
    Silu,
    ResidualBegin,
    ResidualAdd,
    TimeBias {
        channels: usize,
    },
}

impl LayerSpec {
    /// Declared tensor shapes, in payload order.
    pub fn tensor_shapes(&self, embed_dim: usize) -> Vec<Vec<usize>> {
        match *self {
            LayerSpec::Conv3x3 {
                in_channels,
                out_channels,
                ..
            } => vec![vec![out_channels, in_channels, 3, 3], vec![out_channels]],
            LayerSpec::GroupNorm { channels, .. } => vec![vec![channels], vec![channels]],
            LayerSpec::TimeBias { channels } => vec![vec![channels, embed_dim], vec![channels]],
            LayerSpec::Silu | LayerSpec::ResidualBegin | LayerSpec::ResidualAdd => Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContainerHeader {
    pub schema_version: u32,
    /// `[height, width]`.
    pub native_resolution: [usize; 2],
    pub channels: usize,
    pub schedule_fingerprint: String,
    pub time_embedding_dim: usize,
    /// Hex SHA-256 of the payload bytes.
    pub payload_sha256: String,
    /// Number of f32 values in the payload.
    pub payload_len: usize,
    pub layers: Vec<LayerSpec>,
    /// Free text, e.g. how the exporter mapped its architecture.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub notes: Option<String>,
}

/// A parsed container: header plus one flat `f32` vector per declared tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightContainer {
    pub header: ContainerHeader,
    pub tensors: Vec<Vec<f32>>,
}

fn fmt_err(field: &str, reason: impl Into<String>) -> Error {
    Error::format(field, reason)
}

impl WeightContainer {
    /// Assembles a container, filling in the payload checksum and length.
    pub fn new(
        native_resolution: [usize; 2],
        channels: usize,
        schedule_fingerprint: impl Into<String>,
        time_embedding_dim: usize,
        layers: Vec<LayerSpec>,
        tensors: Vec<Vec<f32>>,
    ) -> Result<Self> {
        let mut header = ContainerHeader {
            schema_version: SCHEMA_VERSION,
            native_resolution,
            channels,
            schedule_fingerprint: schedule_fingerprint.into(),
            time_embedding_dim,
            payload_sha256: String::new(),
            payload_len: tensors.iter().map(Vec::len).sum(),
            layers,
            notes: None,
        };
        header.payload_sha256 = hex::encode(Sha256::digest(payload_bytes(&tensors)));
        let c = Self { header, tensors };
        validate_structure(&c.header)?;
        c.check_tensor_sizes()?;
        Ok(c)
    }

    fn check_tensor_sizes(&self) -> Result<()> {
        let shapes = declared_shapes(&self.header);
        if shapes.len() != self.tensors.len() {
            return Err(fmt_err(
                "layers",
                format!("{} tensors declared, {} supplied", shapes.len(), self.tensors.len()),
            ));
        }
        for (i, (shape, t)) in shapes.iter().zip(&self.tensors).enumerate() {
            let n: usize = shape.iter().product();
            if n != t.len() {
                return Err(fmt_err(
                    "payload",
                    format!("tensor {i} declared {shape:?} ({n} values) but has {}", t.len()),
                ));
            }
            if t.iter().any(|v| !v.is_finite()) {
                return Err(fmt_err("payload", format!("tensor {i} has non-finite values")));
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&self.header)?;
        let mut out = Vec::with_capacity(8 + header.len() + 4 * self.header.payload_len);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&payload_bytes(&self.tensors));
        Ok(out)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    /// Parses and fully validates a container. Nothing is returned unless the
    /// magic, schema, layer structure, sizes and checksum all check out.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 || &bytes[..4] != MAGIC {
            return Err(fmt_err("magic", "not a weight container"));
        }
        let hlen = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        if hlen > MAX_HEADER || bytes.len() < 8 + hlen {
            return Err(fmt_err(
                "header_length",
                format!("{hlen} bytes declared, file too short"),
            ));
        }
        let raw: serde_json::Value =
            serde_json::from_slice(&bytes[8..8 + hlen]).map_err(|e| fmt_err("header", e.to_string()))?;
        let version = raw
            .get("schema_version")
            .and_then(|v| v.as_u64())
            .ok_or_else(|| fmt_err("schema_version", "missing"))?;
        if version != SCHEMA_VERSION as u64 {
            return Err(fmt_err("schema_version", format!("unsupported version {version}")));
        }
        if let Some(layers) = raw.get("layers").and_then(|l| l.as_array()) {
            for (i, layer) in layers.iter().enumerate() {
                serde_json::from_value::<LayerSpec>(layer.clone())
                    .map_err(|e| fmt_err(&format!("layers[{i}]"), e.to_string()))?;
            }
        }
        let header: ContainerHeader = serde_json::from_value(raw).map_err(|e| fmt_err("header", e.to_string()))?;
        validate_structure(&header)?;

        let payload = &bytes[8 + hlen..];
        let declared: usize = declared_shapes(&header)
            .iter()
            .map(|s| s.iter().product::<usize>())
            .sum();
        if declared != header.payload_len {
            return Err(fmt_err(
                "payload_len",
                format!("{} declared, layers need {declared}", header.payload_len),
            ));
        }
        if payload.len() != 4 * declared {
            return Err(fmt_err(
                "payload",
                format!("expected {} bytes, found {}", 4 * declared, payload.len()),
            ));
        }
        let digest = hex::encode(Sha256::digest(payload));
        if digest != header.payload_sha256 {
            return Err(fmt_err("payload_sha256", "checksum mismatch"));
        }
        let mut values = payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()));
        let tensors = declared_shapes(&header)
            .iter()
            .map(|s| values.by_ref().take(s.iter().product()).collect())
            .collect();
        let c = Self { header, tensors };
        c.check_tensor_sizes()?;
        Ok(c)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

fn payload_bytes(tensors: &[Vec<f32>]) -> Vec<u8> {
    tensors
        .iter()
        .flat_map(|t| t.iter().flat_map(|v| v.to_le_bytes()))
        .collect()
}

fn declared_shapes(h: &ContainerHeader) -> Vec<Vec<usize>> {
    h.layers
        .iter()
        .flat_map(|l| l.tensor_shapes(h.time_embedding_dim))
        .collect()
}

/// Walks the layer stack checking channel counts and residual nesting.
fn validate_structure(h: &ContainerHeader) -> Result<()> {
    if h.channels == 0 || h.native_resolution.contains(&0) {
        return Err(fmt_err("native_resolution", "dimensions must be positive"));
    }
    let uses_time = h.layers.iter().any(|l| matches!(l, LayerSpec::TimeBias { .. }));
    if uses_time && (h.time_embedding_dim < 4 || !h.time_embedding_dim.is_multiple_of(2)) {
        return Err(fmt_err("time_embedding_dim", "must be even and at least 4"));
    }
    let mut ch = h.channels;
    let mut stack = Vec::new();
    for (i, layer) in h.layers.iter().enumerate() {
        let field = format!("layers[{i}]");
        match *layer {
            LayerSpec::Conv3x3 {
                in_channels,
                out_channels,
                ..
            } => {
                if in_channels != ch || out_channels == 0 {
                    return Err(fmt_err(
                        &field,
                        format!("expects {in_channels} input channels, has {ch}"),
                    ));
                }
                ch = out_channels;
            }
            LayerSpec::GroupNorm { channels, groups, eps } => {
                if channels != ch || groups == 0 || channels % groups != 0 || !(eps > 0.0) {
                    return Err(fmt_err(&field, "bad group norm parameters"));
                }
            }
            LayerSpec::TimeBias { channels } => {
                if channels != ch {
                    return Err(fmt_err(&field, format!("declares {channels} channels, has {ch}")));
                }
            }
            LayerSpec::Silu => {}
            LayerSpec::ResidualBegin => stack.push(ch),
            LayerSpec::ResidualAdd => match stack.pop() {
                Some(c) if c == ch => {}
                Some(c) => {
                    return Err(fmt_err(&field, format!("adds {c} channels onto {ch}")));
                }
                None => return Err(fmt_err(&field, "residual_add without residual_begin")),
            },
        }
    }
    if !stack.is_empty() {
        return Err(fmt_err("layers", "unclosed residual_begin"));
    }
    if ch != h.channels {
        return Err(fmt_err(
            "layers",
            format!("output has {ch} channels, expected {}", h.channels),
        ));
    }
    Ok(())
}

/// Sinusoidal step embedding of even dimension `dim ≥ 4`.
pub fn time_embedding(t: usize, dim: usize) -> Vec<f32> {
    let half = dim / 2;
    let scale = (10000f32).ln() / (half as f32 - 1.0);
    let t = t as f32;
    let mut out = vec![0.0f32; dim];
    for k in 0..half {
        let arg = t * (-(k as f32) * scale).exp();
        out[k] = arg.sin();
        out[half + k] = arg.cos();
    }
    out
}

#[inline]
fn silu(v: f32) -> f32 {
    v / (1.0 + (-v).exp())
}

/// An activation map, HWC, `f32`.
struct Activations {
    h: usize,
    w: usize,
    c: usize,
    data: Vec<f32>,
}

fn conv3x3(x: &Activations, weight: &[f32], bias: &[f32], out_c: usize, act: Activation) -> Activations {
    let (h, w, in_c) = (x.h, x.w, x.c);
    let mut data = vec![0.0f32; h * w * out_c];
    for y in 0..h {
        for xx in 0..w {
            let dst = &mut data[(y * w + xx) * out_c..(y * w + xx + 1) * out_c];
            dst.copy_from_slice(bias);
            for ky in 0..3 {
                let sy = y as isize + ky as isize - 1;
                if sy < 0 || sy >= h as isize {
                    continue;
                }
                for kx in 0..3 {
                    let sx = xx as isize + kx as isize - 1;
                    if sx < 0 || sx >= w as isize {
                        continue;
                    }
                    let src = &x.data[(sy as usize * w + sx as usize) * in_c..][..in_c];
                    for (o, d) in dst.iter_mut().enumerate() {
                        let wrow = &weight[o * in_c * 9..];
                        let mut acc = 0.0f32;
                        for (i, &s) in src.iter().enumerate() {
                            acc += wrow[i * 9 + ky * 3 + kx] * s;
                        }
                        *d += acc;
                    }
                }
            }
            if act == Activation::Silu {
                dst.iter_mut().for_each(|v| *v = silu(*v));
            }
        }
    }
    Activations { h, w, c: out_c, data }
}

fn group_norm(x: &mut Activations, groups: usize, eps: f32, gamma: &[f32], beta: &[f32]) {
    let per = x.c / groups;
    let n = (x.h * x.w * per) as f64;
    for g in 0..groups {
        let (mut s, mut s2) = (0.0f64, 0.0f64);
        for px in x.data.chunks_exact(x.c) {
            for &v in &px[g * per..(g + 1) * per] {
                s += v as f64;
                s2 += (v as f64) * (v as f64);
            }
        }
        let mean = s / n;
        let var = (s2 / n - mean * mean).max(0.0);
        let inv = 1.0 / (var as f32 + eps).sqrt();
        let mean = mean as f32;
        for px in x.data.chunks_exact_mut(x.c) {
            for c in g * per..(g + 1) * per {
                px[c] = (px[c] - mean) * inv * gamma[c] + beta[c];
            }
        }
    }
}

/// The network described by a [`WeightContainer`].
#[derive(Debug, Clone)]
pub struct CompactNetwork {
    container: WeightContainer,
}

impl CompactNetwork {
    /// Wraps a container, optionally insisting on a schedule fingerprint.
    pub fn new(container: WeightContainer, expected_fingerprint: Option<&str>) -> Result<Self> {
        if let Some(fp) = expected_fingerprint {
            if container.header.schedule_fingerprint != fp {
                return Err(fmt_err(
                    "schedule_fingerprint",
                    format!(
                        "container was trained with schedule {}, sampling uses {fp}",
                        container.header.schedule_fingerprint
                    ),
                ));
            }
        }
        Ok(Self { container })
    }

    pub fn load(path: &Path, expected_fingerprint: Option<&str>) -> Result<Self> {
        Self::new(WeightContainer::read(path)?, expected_fingerprint)
    }

    pub fn header(&self) -> &ContainerHeader {
        &self.container.header
    }

    pub fn container(&self) -> &WeightContainer {
        &self.container
    }

    /// Runs the layer stack on an `f64` image.
    pub fn forward(&self, x: &ImageTensor, t: usize) -> Result<ImageTensor> {
        let hd = &self.container.header;
        if x.channels() != hd.channels {
            return Err(Error::Shape {
                expected: format!("{} channels", hd.channels),
                actual: format!("{} channels", x.channels()),
            });
        }
        let mut a = Activations {
            h: x.height(),
            w: x.width(),
            c: x.channels(),
            data: x.data().iter().map(|&v| v as f32).collect(),
        };
        let emb = time_embedding(t, hd.time_embedding_dim);
        let mut tensors = self.container.tensors.iter();
        let mut stack: Vec<Vec<f32>> = Vec::new();
        for layer in &hd.layers {
            match *layer {
                LayerSpec::Conv3x3 {
                    out_channels,
                    activation,
                    ..
                } => {
                    let (wt, b) = (tensors.next().unwrap(), tensors.next().unwrap());
                    a = conv3x3(&a, wt, b, out_channels, activation);
                }
                LayerSpec::GroupNorm { groups, eps, .. } => {
                    let (g, b) = (tensors.next().unwrap(), tensors.next().unwrap());
                    group_norm(&mut a, groups, eps, g, b);
                }
                LayerSpec::TimeBias { channels } => {
                    let (wt, b) = (tensors.next().unwrap(), tensors.next().unwrap());
                    let d = emb.len();
                    let shift: Vec<f32> = (0..channels)
                        .map(|c| b[c] + wt[c * d..(c + 1) * d].iter().zip(&emb).map(|(p, q)| p * q).sum::<f32>())
                        .collect();
                    for px in a.data.chunks_exact_mut(channels) {
                        px.iter_mut().zip(&shift).for_each(|(v, s)| *v += s);
                    }
                }
                LayerSpec::Silu => a.data.iter_mut().for_each(|v| *v = silu(*v)),
                LayerSpec::ResidualBegin => stack.push(a.data.clone()),
                LayerSpec::ResidualAdd => {
                    let skip = stack.pop().expect("validated residual nesting");
                    a.data.iter_mut().zip(&skip).for_each(|(v, s)| *v += s);
                }
            }
        }
        let data = a.data.into_iter().map(f64::from).collect();
        ImageTensor::new(a.h, a.w, a.c, data)
    }
}

impl Denoiser for CompactNetwork {
    fn predict_noise(&self, x_t: &ImageTensor, t: usize) -> Result<ImageTensor> {
        self.forward(x_t, t)
    }

    fn native_resolution(&self) -> Option<(usize, usize)> {
        let [h, w] = self.container.header.native_resolution;
        Some((h, w))
    }
}

/// Deterministic small-magnitude weights for a `conv → norm → time → silu →
/// residual(conv → silu → conv) → conv` stack; used by tests and examples.
pub fn demo_container(
    native: [usize; 2],
    channels: usize,
    hidden: usize,
    embed_dim: usize,
    fingerprint: &str,
    seed: u64,
) -> Result<WeightContainer> {
    use rand::Rng;
    let mut rng = crate::rng::seeded(seed);
    let layers = vec![
        LayerSpec::Conv3x3 {
            in_channels: channels,
            out_channels: hidden,
            activation: Activation::None,
        },
        LayerSpec::GroupNorm {
            channels: hidden,
            groups: if hidden.is_multiple_of(4) { 4 } else { 1 },
            eps: 1e-5,
        },
        LayerSpec::TimeBias { channels: hidden },
        LayerSpec::Silu,
        LayerSpec::ResidualBegin,
        LayerSpec::Conv3x3 {
            in_channels: hidden,
            out_channels: hidden,
            activation: Activation::Silu,
        },
        LayerSpec::Conv3x3 {
            in_channels: hidden,
            out_channels: hidden,
            activation: Activation::None,
        },
        LayerSpec::ResidualAdd,
        LayerSpec::Conv3x3 {
            in_channels: hidden,
            out_channels: channels,
            activation: Activation::None,
        },
    ];
    let tensors = layers
        .iter()
        .flat_map(|l| l.tensor_shapes(embed_dim))
        .map(|shape| {
            let n: usize = shape.iter().product();
            let fan_in = if shape.len() > 1 {
                shape[1..].iter().product::<usize>()
            } else {
                1
            };
            let scale = 1.0 / (fan_in as f32).sqrt();
            (0..n).map(|_| rng.random_range(-scale..scale)).collect()
        })
        .collect();
    WeightContainer::new(native, channels, fingerprint, embed_dim, layers, tensors)
}
