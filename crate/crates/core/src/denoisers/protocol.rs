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

//! Length-prefixed binary frames exchanged with an external denoiser process.
//!
//! ```text
//! u32 length   bytes that follow this field (21 + 4·h·w·c)
//! u32 seq
//! u8  opcode   1 = predict, 2 = shutdown
//! u32 t, h, w, c
//! f32 payload  h·w·c values, HWC order
//! ```
//!
//! All integers and floats are little-endian. A response mirrors the request's
//! `seq`, opcode and shape. The session opens with a handshake: an empty predict
//! frame (`t = h = w = c = 0`) with `seq = 0`, echoed back by the child.

use std::io::{self, Read, Write};

pub const OP_PREDICT: u8 = 1;
pub const OP_SHUTDOWN: u8 = 2;
/// Bytes after the length field when the payload is empty.
pub const FIXED_LEN: usize = 21;
/// Frames larger than this are treated as malformed.
pub const MAX_FRAME: usize = 1 << 30;

#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub seq: u32,
    pub opcode: u8,
    pub t: u32,
    pub h: u32,
    pub w: u32,
    pub c: u32,
    pub payload: Vec<f32>,
}

impl Frame {
    pub fn predict(seq: u32, t: u32, shape: (u32, u32, u32), payload: Vec<f32>) -> Self {
        Self {
            seq,
            opcode: OP_PREDICT,
            t,
            h: shape.0,
            w: shape.1,
            c: shape.2,
            payload,
        }
    }

    pub fn handshake() -> Self {
        Self::predict(0, 0, (0, 0, 0), Vec::new())
    }

    pub fn shutdown(seq: u32) -> Self {
        Self {
            seq,
            opcode: OP_SHUTDOWN,
            t: 0,
            h: 0,
            w: 0,
            c: 0,
            payload: Vec::new(),
        }
    }

    pub fn element_count(&self) -> usize {
        self.h as usize * self.w as usize * self.c as usize
    }

    pub fn encode(&self) -> Vec<u8> {
        let len = FIXED_LEN + 4 * self.payload.len();
        let mut out = Vec::with_capacity(4 + len);
        out.extend_from_slice(&(len as u32).to_le_bytes());
        out.extend_from_slice(&self.seq.to_le_bytes());
        out.push(self.opcode);
        for v in [self.t, self.h, self.w, self.c] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        for v in &self.payload {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    /// Decodes the bytes following the length field.
    pub fn decode_body(body: &[u8]) -> Result<Self, String> {
        if body.len() < FIXED_LEN {
            return Err(format!(
                "frame body of {} bytes is shorter than {FIXED_LEN}",
                body.len()
            ));
        }
        let u32_at = |i: usize| u32::from_le_bytes(body[i..i + 4].try_into().unwrap());
        let frame = Frame {
            seq: u32_at(0),
            opcode: body[4],
            t: u32_at(5),
            h: u32_at(9),
            w: u32_at(13),
            c: u32_at(17),
            payload: body[FIXED_LEN..]
                .chunks(4)
                .map(|b| b.try_into().map(f32::from_le_bytes))
                .collect::<Result<_, _>>()
                .map_err(|_| "payload length is not a multiple of 4".to_string())?,
        };
        if frame.opcode != OP_PREDICT && frame.opcode != OP_SHUTDOWN {
            return Err(format!("unknown opcode {}", frame.opcode));
        }
        if frame.payload.len() != frame.element_count() {
            return Err(format!(
                "shape {}x{}x{} needs {} values, payload has {}",
                frame.h,
                frame.w,
                frame.c,
                frame.element_count(),
                frame.payload.len()
            ));
        }
        Ok(frame)
    }
}

pub fn write_frame(w: &mut impl Write, frame: &Frame) -> io::Result<()> {
    w.write_all(&frame.encode())?;
    w.flush()
}

/// Reads one frame. `Ok(None)` means the stream ended cleanly before a frame.
/// I/O failures and malformed frames are both reported as `io::Error`, the
/// latter with kind `InvalidData`.
pub fn read_frame(r: &mut impl Read) -> io::Result<Option<Frame>> {
    let mut len = [0u8; 4];
    match r.read_exact(&mut len) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e),
    }
    let len = u32::from_le_bytes(len) as usize;
    if !(FIXED_LEN..=MAX_FRAME).contains(&len) {
        return Err(io::Error::new(
            io::ErrorKind::InvalidData,
            format!("frame length {len}"),
        ));
    }
    let mut body = vec![0u8; len];
    r.read_exact(&mut body)?;
    Frame::decode_body(&body)
        .map(Some)
        .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn byte_layout() {
        let f = Frame::predict(7, 300, (1, 2, 1), vec![1.0, -2.5]);
        let b = f.encode();
        assert_eq!(b.len(), 4 + 21 + 8);
        assert_eq!(&b[..4], &29u32.to_le_bytes());
        assert_eq!(&b[4..8], &7u32.to_le_bytes());
        assert_eq!(b[8], 1);
        assert_eq!(&b[9..13], &300u32.to_le_bytes());
        assert_eq!(&b[13..17], &1u32.to_le_bytes());
        assert_eq!(&b[17..21], &2u32.to_le_bytes());
        assert_eq!(&b[21..25], &1u32.to_le_bytes());
        assert_eq!(&b[25..29], &1.0f32.to_le_bytes());
        assert_eq!(&b[29..33], &(-2.5f32).to_le_bytes());
    }

    #[test]
    fn round_trip_and_eof() {
        let frames = [
            Frame::handshake(),
            Frame::predict(1, 5, (2, 2, 1), vec![0.5; 4]),
            Frame::shutdown(2),
        ];
        let mut buf = Vec::new();
        for f in &frames {
            write_frame(&mut buf, f).unwrap();
        }
        let mut r = buf.as_slice();
        for f in &frames {
            assert_eq!(read_frame(&mut r).unwrap().as_ref(), Some(f));
        }
        assert_eq!(read_frame(&mut r).unwrap(), None);
    }

    #[test]
    fn malformed_frames() {
        let mut b = Frame::predict(1, 5, (2, 2, 1), vec![0.5; 4]).encode();
        b[8] = 9;
        assert!(read_frame(&mut b.as_slice()).is_err());
        let mut b = Frame::predict(1, 5, (2, 2, 1), vec![0.5; 4]).encode();
        b[13] = 3;
        assert!(read_frame(&mut b.as_slice()).is_err());
        let b = Frame::predict(1, 5, (2, 2, 1), vec![0.5; 4]).encode();
        assert!(read_frame(&mut &b[..b.len() - 1]).is_err());
        assert!(read_frame(&mut &3u32.to_le_bytes()[..]).is_err());
    }
}
