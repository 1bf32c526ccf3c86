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

//! Bridge to a noise predictor running in a child process.
//!
//! One frame is in flight at a time: each call writes a request and blocks
//! until the matching response arrives or the timeout expires. A reader thread
//! drains the child's stdout so that the wait can be bounded. After any
//! failure the child is killed and the bridge refuses further requests.

use std::io::{BufReader, BufWriter};
use std::path::PathBuf;
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::protocol::{read_frame, write_frame, Frame, OP_PREDICT};
use crate::diffusion::Denoiser;
use crate::error::{Error, Result};
use crate::tensor::ImageTensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubprocessConfig {
    pub program: PathBuf,
    #[serde(default)]
    pub args: Vec<String>,
    /// Per-frame wait limit, including the handshake.
    #[serde(with = "millis")]
    pub timeout: Duration,
    /// Resolution the child's model expects, if it has one.
    #[serde(default)]
    pub native_resolution: Option<(usize, usize)>,
}

mod millis {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        u64::deserialize(d).map(Duration::from_millis)
    }
}

impl SubprocessConfig {
    pub fn new(program: impl Into<PathBuf>, timeout: Duration) -> Self {
        Self {
            program: program.into(),
            args: Vec::new(),
            timeout,
            native_resolution: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.timeout.is_zero() {
            return Err(Error::config("timeout", "must be positive"));
        }
        Ok(())
    }
}

type Incoming = std::io::Result<Option<Frame>>;

struct Session {
    child: Child,
    stdin: BufWriter<ChildStdin>,
    rx: Receiver<Incoming>,
    next_seq: u32,
    failed: Option<String>,
}

impl Session {
    fn fail(&mut self, seq: u32, err: Error) -> Error {
        let _ = self.child.kill();
        let _ = self.child.wait();
        self.failed = Some(format!("frame {seq}: {err}"));
        err
    }

    fn exit_reason(&mut self) -> String {
        match self.child.try_wait() {
            Ok(Some(status)) => format!("child exited ({status})"),
            _ => "child closed its output".to_string(),
        }
    }

    /// Sends one frame and waits for its response. Sequence numbers are taken
    /// from `next_seq`, which only ever increases.
    fn exchange(&mut self, mut request: Frame, timeout: Duration) -> Result<Frame> {
        if let Some(reason) = &self.failed {
            return Err(Error::Protocol {
                seq: self.next_seq,
                reason: format!("bridge unusable after earlier failure ({reason})"),
            });
        }
        let seq = self.next_seq;
        self.next_seq = self.next_seq.checked_add(1).ok_or_else(|| Error::Protocol {
            seq,
            reason: "sequence numbers exhausted".into(),
        })?;
        request.seq = seq;
        if let Err(e) = write_frame(&mut self.stdin, &request) {
            let reason = format!("write failed: {e}; {}", self.exit_reason());
            return Err(self.fail(seq, Error::Protocol { seq, reason }));
        }
        let response = match self.rx.recv_timeout(timeout) {
            Ok(Ok(Some(frame))) => frame,
            Ok(Ok(None)) | Err(RecvTimeoutError::Disconnected) => {
                let reason = self.exit_reason();
                return Err(self.fail(seq, Error::Protocol { seq, reason }));
            }
            Ok(Err(e)) => {
                let reason = format!("malformed response: {e}");
                return Err(self.fail(seq, Error::Protocol { seq, reason }));
            }
            Err(RecvTimeoutError::Timeout) => return Err(self.fail(seq, Error::Timeout { seq })),
        };
        let shape_matches = (response.h, response.w, response.c) == (request.h, request.w, request.c);
        if response.seq != seq || response.opcode != request.opcode || !shape_matches {
            let reason = format!(
                "response seq {} opcode {} shape {}x{}x{} does not match request",
                response.seq, response.opcode, response.h, response.w, response.c
            );
            return Err(self.fail(seq, Error::Protocol { seq, reason }));
        }
        Ok(response)
    }
}

/// A [`Denoiser`] served by a child process over the frame protocol.
pub struct SubprocessDenoiser {
    session: Mutex<Session>,
    config: SubprocessConfig,
}

impl SubprocessDenoiser {
    /// Spawns the child and performs the handshake.
    pub fn spawn(config: SubprocessConfig) -> Result<Self> {
        config.validate()?;
        let mut child = Command::new(&config.program)
            .args(&config.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()?;
        let stdin = BufWriter::new(child.stdin.take().expect("piped stdin"));
        let mut stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
        let (tx, rx) = mpsc::channel::<Incoming>();
        thread::Builder::new()
            .name("denoiser-reader".into())
            .spawn(move || loop {
                let item = read_frame(&mut stdout);
                let done = !matches!(item, Ok(Some(_)));
                if tx.send(item).is_err() || done {
                    break;
                }
            })?;
        let mut session = Session {
            child,
            stdin,
            rx,
            next_seq: 0,
            failed: None,
        };
        let reply = session.exchange(Frame::handshake(), config.timeout)?;
        if !reply.payload.is_empty() {
            return Err(session.fail(
                0,
                Error::Protocol {
                    seq: 0,
                    reason: "handshake reply carries a payload".into(),
                },
            ));
        }
        Ok(Self {
            session: Mutex::new(session),
            config,
        })
    }

    pub fn config(&self) -> &SubprocessConfig {
        &self.config
    }

    /// Sequence number the next request will carry.
    pub fn next_seq(&self) -> u32 {
        self.lock().next_seq
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, Session> {
        self.session.lock().unwrap_or_else(|p| p.into_inner())
    }

    /// Sends a shutdown frame, waits for the child to exit and reports any
    /// protocol violation on the way.
    pub fn shutdown(self) -> Result<()> {
        let timeout = self.config.timeout;
        let mut s = self.lock();
        let seq = s.next_seq;
        s.exchange(Frame::shutdown(0), timeout)?;
        let deadline = Instant::now() + timeout;
        loop {
            match s.child.try_wait()? {
                Some(_) => break,
                None if Instant::now() >= deadline => return Err(s.fail(seq, Error::Timeout { seq })),
                None => thread::sleep(Duration::from_millis(5)),
            }
        }
        s.failed = Some("shut down".into());
        Ok(())
    }
}

impl Drop for SubprocessDenoiser {
    fn drop(&mut self) {
        let s = self.session.get_mut().unwrap_or_else(|p| p.into_inner());
        if s.failed.is_none() {
            let frame = Frame::shutdown(s.next_seq);
            if write_frame(&mut s.stdin, &frame).is_ok() {
                let deadline = Instant::now() + Duration::from_millis(200);
                while Instant::now() < deadline {
                    if let Ok(Some(_)) = s.child.try_wait() {
                        return;
                    }
                    thread::sleep(Duration::from_millis(5));
                }
            }
        }
        let _ = s.child.kill();
        let _ = s.child.wait();
    }
}

impl Denoiser for SubprocessDenoiser {
    fn predict_noise(&self, x_t: &ImageTensor, t: usize) -> Result<ImageTensor> {
        let (h, w, c) = x_t.shape();
        let t32 = u32::try_from(t).map_err(|_| Error::range("t", t as f64, 0.0, u32::MAX as f64))?;
        let payload = x_t.data().iter().map(|&v| v as f32).collect();
        let request = Frame::predict(0, t32, (h as u32, w as u32, c as u32), payload);
        let response = self.lock().exchange(request, self.config.timeout)?;
        debug_assert_eq!(response.opcode, OP_PREDICT);
        let data = response.payload.into_iter().map(f64::from).collect();
        ImageTensor::new(h, w, c, data)
    }

    fn native_resolution(&self) -> Option<(usize, usize)> {
        self.config.native_resolution
    }
}
