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

//! Seedable randomness.
//!
//! All stochastic operations draw from [`DiffRng`], a ChaCha stream cipher with
//! 8 rounds (`rand_chacha::ChaCha8Rng`) seeded through `SeedableRng::seed_from_u64`.
//! Standard normals use the ziggurat sampler of `rand_distr::StandardNormal`.
//! Both algorithms are fixed by the crate versions pinned in `Cargo.lock`, so a
//! seed replays the same noise on every platform.

use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;

use crate::tensor::ImageTensor;

pub type DiffRng = rand_chacha::ChaCha8Rng;

pub fn seeded(seed: u64) -> DiffRng {
    DiffRng::seed_from_u64(seed)
}

#[inline]
pub fn standard_normal(rng: &mut DiffRng) -> f64 {
    rng.sample(StandardNormal)
}

/// An image of the given shape filled with i.i.d. standard normals.
pub fn normal_like(shape: (usize, usize, usize), rng: &mut DiffRng) -> ImageTensor {
    let (h, w, c) = shape;
    ImageTensor::from_fn(h, w, c, |_, _, _| standard_normal(rng))
}
