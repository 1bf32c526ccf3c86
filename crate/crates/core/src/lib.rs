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

//! Arbitrary-scale super-resolution with a pretrained diffusion model.
//!
//! An upsampled low-resolution image is pushed `t` steps along the forward
//! diffusion chain and then denoised back to step 0. The injection step is
//! chosen by bounding two analytic loss curves: a signature loss that grows
//! with `t` and a fidelity loss that shrinks with it.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod corpus;
pub mod denoisers;
pub mod diffusion;
pub mod error;
pub mod error_analysis;
pub mod imageio;
pub mod metrics;
pub mod pipeline;
pub mod prf;
pub mod resample;
pub mod rng;
pub mod schedule;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{ImageTensor, ValueRange};
