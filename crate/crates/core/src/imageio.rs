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

//! 8- and 16-bit PNG reading and writing.
//!
//! Stored samples `v` map to `v / (2^depth − 1)` in `[0, 1]` and then affinely
//! onto `[−1, 1]`. Writing inverts the map after clamping, rounding to the
//! nearest code. Palette and sub-byte images are expanded on read; an alpha
//! channel is dropped.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use png::{BitDepth, ColorType, Transformations};

use crate::error::{Error, Result};
use crate::tensor::{ImageTensor, ValueRange};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PngDepth {
    Eight,
    Sixteen,
}

impl PngDepth {
    fn max_code(self) -> f64 {
        match self {
            PngDepth::Eight => 255.0,
            PngDepth::Sixteen => 65535.0,
        }
    }
}

fn image_err(path: &Path, reason: impl ToString) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    }
}

/// Reads a PNG into a `[−1, 1]` tensor, returning the stored bit depth.
pub fn read_png(path: &Path) -> Result<(ImageTensor, PngDepth)> {
    let file = File::open(path).map_err(|e| image_err(path, e))?;
    let mut decoder = png::Decoder::new(BufReader::new(file));
    decoder.set_transformations(Transformations::EXPAND);
    let mut reader = decoder.read_info().map_err(|e| image_err(path, e))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| image_err(path, "image too large"))?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(|e| image_err(path, e))?;
    let (h, w) = (info.height as usize, info.width as usize);
    let (stored, kept) = match info.color_type {
        ColorType::Grayscale => (1, 1),
        ColorType::GrayscaleAlpha => (2, 1),
        ColorType::Rgb => (3, 3),
        ColorType::Rgba => (4, 3),
        other => return Err(image_err(path, format!("unsupported color type {other:?}"))),
    };
    let depth = match info.bit_depth {
        BitDepth::Eight => PngDepth::Eight,
        BitDepth::Sixteen => PngDepth::Sixteen,
        other => return Err(image_err(path, format!("unsupported bit depth {other:?}"))),
    };
    if stored != kept {
        log::warn!("{}: dropping alpha channel", path.display());
    }
    let max = depth.max_code();
    let mut data = Vec::with_capacity(h * w * kept);
    for y in 0..h {
        let row = &buf[y * info.line_size..(y + 1) * info.line_size];
        for x in 0..w {
            for c in 0..kept {
                let idx = x * stored + c;
                let code = match depth {
                    PngDepth::Eight => row[idx] as f64,
                    PngDepth::Sixteen => u16::from_be_bytes([row[2 * idx], row[2 * idx + 1]]) as f64,
                };
                data.push(code / max * 2.0 - 1.0);
            }
        }
    }
    Ok((ImageTensor::new(h, w, kept, data)?, depth))
}

/// Quantizes a tensor's values (interpreted in its own range) to PNG codes.
pub fn quantize(img: &ImageTensor, depth: PngDepth) -> Vec<u16> {
    let unit = img.remap(ValueRange::UNIT);
    let max = depth.max_code();
    unit.data()
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * max).round() as u16)
        .collect()
}

/// Writes a 1- or 3-channel tensor as a grayscale or RGB PNG.
pub fn write_png(path: &Path, img: &ImageTensor, depth: PngDepth) -> Result<()> {
    let color = match img.channels() {
        1 => ColorType::Grayscale,
        3 => ColorType::Rgb,
        c => {
            return Err(Error::Shape {
                expected: "1 or 3 channels".into(),
                actual: format!("{c} channels"),
            })
        }
    };
    let codes = quantize(img, depth);
    let bytes: Vec<u8> = match depth {
        PngDepth::Eight => codes.iter().map(|&c| c as u8).collect(),
        PngDepth::Sixteen => codes.iter().flat_map(|c| c.to_be_bytes()).collect(),
    };
    let file = File::create(path).map_err(|e| image_err(path, e))?;
    let mut enc = png::Encoder::new(BufWriter::new(file), img.width() as u32, img.height() as u32);
    enc.set_color(color);
    enc.set_depth(match depth {
        PngDepth::Eight => BitDepth::Eight,
        PngDepth::Sixteen => BitDepth::Sixteen,
    });
    let mut writer = enc.write_header().map_err(|e| image_err(path, e))?;
    writer.write_image_data(&bytes).map_err(|e| image_err(path, e))?;
    writer.finish().map_err(|e| image_err(path, e))?;
    Ok(())
}
