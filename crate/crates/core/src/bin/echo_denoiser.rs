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

//! Reference child for the denoiser frame protocol: answers every predict
//! frame with its own payload.
//!
//! Options, for exercising failure paths:
//!   --delay-ms N     sleep N ms before answering each non-handshake frame
//!   --exit-after N   exit without answering after N non-handshake frames
//!   --bad-seq        answer with a wrong sequence number

use std::io::{self, BufReader, BufWriter};
use std::process::ExitCode;
use std::thread;
use std::time::Duration;

use diffsr::denoisers::protocol::{read_frame, write_frame, OP_SHUTDOWN};

struct Options {
    delay: Duration,
    exit_after: Option<u64>,
    bad_seq: bool,
}

fn parse_args() -> Result<Options, String> {
    let mut opts = Options {
        delay: Duration::ZERO,
        exit_after: None,
        bad_seq: false,
    };
    let mut args = std::env::args().skip(1);
    while let Some(arg) = args.next() {
        let mut value = |name: &str| {
            args.next()
                .and_then(|v| v.parse::<u64>().ok())
                .ok_or_else(|| format!("{name} needs a non-negative integer"))
        };
        match arg.as_str() {
            "--delay-ms" => opts.delay = Duration::from_millis(value("--delay-ms")?),
            "--exit-after" => opts.exit_after = Some(value("--exit-after")?),
            "--bad-seq" => opts.bad_seq = true,
            other => return Err(format!("unknown argument {other}")),
        }
    }
    Ok(opts)
}

fn serve(opts: &Options) -> io::Result<()> {
    let mut input = BufReader::new(io::stdin().lock());
    let mut output = BufWriter::new(io::stdout().lock());
    let mut served = 0u64;
    while let Some(mut frame) = read_frame(&mut input)? {
        if frame.opcode == OP_SHUTDOWN {
            write_frame(&mut output, &frame)?;
            return Ok(());
        }
        let handshake = frame.element_count() == 0 && frame.seq == 0;
        if !handshake {
            if opts.exit_after == Some(served) {
                return Ok(());
            }
            served += 1;
            thread::sleep(opts.delay);
            if opts.bad_seq {
                frame.seq = frame.seq.wrapping_add(7);
            }
        }
        write_frame(&mut output, &frame)?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let opts = match parse_args() {
        Ok(o) => o,
        Err(e) => {
            eprintln!("diffsr-echo-denoiser: {e}");
            return ExitCode::from(2);
        }
    };
    match serve(&opts) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("diffsr-echo-denoiser: {e}");
            ExitCode::FAILURE
        }
    }
}
