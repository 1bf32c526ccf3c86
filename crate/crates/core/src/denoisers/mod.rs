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

//! Noise predictors behind the [`Denoiser`](crate::diffusion::Denoiser) interface.

pub mod analytic;
pub mod network;
pub mod protocol;
pub mod subprocess;

pub use analytic::{ElementParam, GaussianDenoiser};
pub use network::{CompactNetwork, WeightContainer};
pub use subprocess::{SubprocessConfig, SubprocessDenoiser};
