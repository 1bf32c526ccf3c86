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

use std::path::PathBuf;

/// Errors produced anywhere in the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {field}: {reason}")]
    Config { field: String, reason: String },

    #[error("{what} = {value} is out of range [{min}, {max}]")]
    Range {
        what: &'static str,
        value: f64,
        min: f64,
        max: f64,
    },

    #[error("shape mismatch: expected {expected}, got {actual}")]
    Shape { expected: String, actual: String },

    #[error("usage error: {0}")]
    Usage(String),

    #[error("numerical error at step {step}: {reason}")]
    Numerical { step: usize, reason: String },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("denoiser failed at step {step}: {source}")]
    DenoiserAtStep {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("denoiser protocol error (frame {seq}): {reason}")]
    Protocol { seq: u32, reason: String },

    #[error("denoiser timed out waiting for frame {seq}")]
    Timeout { seq: u32 },

    #[error("weight container: {field}: {reason}")]
    Format { field: String, reason: String },

    #[error("image file {path}: {reason}")]
    Image { path: PathBuf, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn format(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Format {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn range(what: &'static str, value: f64, min: f64, max: f64) -> Self {
        Error::Range { what, value, min, max }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
