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

//! Builds the configured noise predictor.

use std::time::Duration;

use anyhow::Context;

use diffsr::denoisers::{CompactNetwork, ElementParam, GaussianDenoiser, SubprocessConfig, SubprocessDenoiser};
use diffsr::diffusion::Denoiser;
use diffsr::imageio::read_png;
use diffsr::schedule::NoiseSchedule;

use crate::config::{DenoiserKind, DenoiserSection};

pub type SharedDenoiser = Box<dyn Denoiser + Send + Sync>;

/// In-process denoisers are shared by all workers; a subprocess denoiser
/// handles one frame at a time, so every request gets its own child.
pub enum DenoiserSource {
    Shared(SharedDenoiser),
    PerRequest(SubprocessConfig),
}

impl DenoiserSource {
    pub fn new(cfg: &DenoiserSection, schedule: &NoiseSchedule) -> anyhow::Result<Self> {
        Ok(match cfg.kind {
            DenoiserKind::Analytic => {
                let mean = match &cfg.mean_image {
                    Some(path) => ElementParam::Image(read_png(path).with_context(|| "loading denoiser.mean_image")?.0),
                    None => ElementParam::Scalar(cfg.mean),
                };
                let d = GaussianDenoiser::new(mean, ElementParam::Scalar(cfg.variance), schedule.clone())?;
                DenoiserSource::Shared(Box::new(d))
            }
            DenoiserKind::Weights => {
                let path = cfg.weights.as_deref().expect("validated");
                let fingerprint = schedule.fingerprint();
                let expected = cfg.check_fingerprint.then_some(fingerprint.as_str());
                let net = CompactNetwork::load(path, expected)
                    .with_context(|| format!("loading weights {}", path.display()))?;
                DenoiserSource::Shared(Box::new(net))
            }
            DenoiserKind::Subprocess => {
                let mut sub = SubprocessConfig::new(
                    cfg.command.clone().expect("validated"),
                    Duration::from_millis(cfg.timeout_ms),
                );
                sub.args = cfg.args.clone();
                sub.native_resolution = cfg.native.map(|[h, w]| (h, w));
                DenoiserSource::PerRequest(sub)
            }
        })
    }

    /// Resolution the model expects, if known without starting a process.
    pub fn native_resolution(&self) -> Option<(usize, usize)> {
        match self {
            DenoiserSource::Shared(d) => d.native_resolution(),
            DenoiserSource::PerRequest(c) => c.native_resolution,
        }
    }

    pub fn with<R>(&self, f: impl FnOnce(&dyn Denoiser) -> R) -> anyhow::Result<R> {
        match self {
            DenoiserSource::Shared(d) => Ok(f(d.as_ref())),
            DenoiserSource::PerRequest(cfg) => {
                let child = SubprocessDenoiser::spawn(cfg.clone())
                    .with_context(|| format!("starting {}", cfg.program.display()))?;
                // dropping the bridge sends the shutdown frame
                Ok(f(&child))
            }
        }
    }
}
