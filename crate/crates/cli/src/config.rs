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

//! Run configuration: defaults, then the config file, then `--section.key`
//! flags. The merged table is checked for unknown keys and validated before
//! any command does work.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use diffsr::diffusion::SamplerConfig;
use diffsr::error_analysis::ErrorModelConfig;
use diffsr::metrics::{FreqSplitSpec, SsimParams};
use diffsr::pipeline::DegradeSpec;
use diffsr::prf::PrfConfig;
use diffsr::resample::ResampleMethod;
use diffsr::schedule::{NoiseSchedule, ScheduleConfig};

/// Environment variable naming the default config file.
pub const CONFIG_ENV: &str = "DIFFSR_CONFIG";

/// A problem with flags or configuration; reported with exit code 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DegradeSection {
    pub scale: f64,
    pub down_method: ResampleMethod,
    pub up_method: ResampleMethod,
}

impl Default for DegradeSection {
    fn default() -> Self {
        Self {
            scale: 4.0,
            down_method: ResampleMethod::Bicubic,
            up_method: ResampleMethod::Bicubic,
        }
    }
}

impl DegradeSection {
    pub fn spec(&self, scale: Option<f64>) -> DegradeSpec {
        DegradeSpec {
            scale: scale.unwrap_or(self.scale),
            down_method: self.down_method,
            up_method: self.up_method,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DenoiserKind {
    Analytic,
    Weights,
    Subprocess,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DenoiserSection {
    pub kind: DenoiserKind,
    /// Prior mean of the analytic denoiser.
    pub mean: f64,
    /// Prior variance of the analytic denoiser.
    pub variance: f64,
    /// Optional PNG used as a per-pixel prior mean instead of `mean`.
    pub mean_image: Option<PathBuf>,
    /// Weight container for `kind = "weights"`.
    pub weights: Option<PathBuf>,
    /// Reject containers whose schedule fingerprint differs from ours.
    pub check_fingerprint: bool,
    /// Executable and arguments for `kind = "subprocess"`.
    pub command: Option<PathBuf>,
    pub args: Vec<String>,
    pub timeout_ms: u64,
    /// `[height, width]` the subprocess model expects.
    pub native: Option<[usize; 2]>,
}

impl Default for DenoiserSection {
    fn default() -> Self {
        Self {
            kind: DenoiserKind::Analytic,
            mean: 0.0,
            // pixel variance of the toy corpus
            variance: 0.11,
            mean_image: None,
            weights: None,
            check_fingerprint: true,
            command: None,
            args: Vec::new(),
            timeout_ms: 30_000,
            native: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IoSection {
    /// PNG bit depth of outputs; the input depth when unset.
    pub depth: Option<u8>,
    /// Worker threads for batch commands.
    pub workers: usize,
    /// Model resolution `[height, width]` for deployment inputs when the
    /// denoiser does not declare one.
    pub native: Option<[usize; 2]>,
}

impl Default for IoSection {
    fn default() -> Self {
        Self {
            depth: None,
            workers: 4,
            native: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub schedule: ScheduleConfig,
    pub sampler: SamplerConfig,
    pub error_model: ErrorModelConfig,
    pub prf: PrfConfig,
    pub degrade: DegradeSection,
    pub denoiser: DenoiserSection,
    pub ssim: SsimParams,
    pub freq: FreqSplitSpec,
    pub io: IoSection,
}

/// A validated configuration together with facts about where values came from.
#[derive(Debug, Clone)]
pub struct Loaded {
    pub config: RunConfig,
    pub schedule: NoiseSchedule,
    /// Whether `sampler.seed` was set explicitly.
    pub seed_given: bool,
}

/// A `(section.key, raw value)` pair from the command line.
pub type Override = (String, String);

/// Splits `--section.key value` and `--section.key=value` out of `args`.
pub fn extract_overrides(args: Vec<String>) -> Result<(Vec<String>, Vec<Override>), UsageError> {
    let mut rest = Vec::with_capacity(args.len());
    let mut overrides = Vec::new();
    let mut it = args.into_iter();
    while let Some(arg) = it.next() {
        let Some(body) = arg.strip_prefix("--") else {
            rest.push(arg);
            continue;
        };
        let (name, inline) = match body.split_once('=') {
            Some((n, v)) => (n, Some(v.to_string())),
            None => (body, None),
        };
        if !name.contains('.') {
            rest.push(arg);
            continue;
        }
        let value = match inline {
            Some(v) => v,
            None => it.next().ok_or_else(|| UsageError(format!("--{name} needs a value")))?,
        };
        overrides.push((name.to_string(), value));
    }
    Ok((rest, overrides))
}

/// Interprets a flag value as a TOML literal, falling back to a plain string.
fn parse_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.into())),
        Err(_) => toml::Value::String(raw.into()),
    }
}

fn set_path(table: &mut toml::Table, path: &str, value: toml::Value) -> Result<(), UsageError> {
    let parts: Vec<&str> = path.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(UsageError(format!("malformed flag --{path}")));
    }
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| UsageError(format!("--{path}: {p} is not a section")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// Every key path present in `table` but absent from `known`.
fn unknown_keys(table: &toml::Table, known: &serde_json::Value, prefix: &str, out: &mut Vec<String>) {
    for (k, v) in table {
        let path = if prefix.is_empty() {
            k.clone()
        } else {
            format!("{prefix}.{k}")
        };
        match known.get(k) {
            None => out.push(path),
            Some(sub @ serde_json::Value::Object(_)) => {
                if let toml::Value::Table(t) = v {
                    unknown_keys(t, sub, &path, out);
                }
            }
            Some(_) => {}
        }
    }
}

fn has_key(table: &toml::Table, section: &str, key: &str) -> bool {
    table
        .get(section)
        .and_then(|s| s.as_table())
        .is_some_and(|s| s.contains_key(key))
}

/// Merges the config file (if any) with flag overrides and validates the result.
pub fn load(file: Option<&Path>, overrides: &[Override]) -> anyhow::Result<Loaded> {
    let mut table = match file {
        Some(path) => {
            let text =
                std::fs::read_to_string(path).map_err(|e| usage(format!("config file {}: {e}", path.display())))?;
            text.parse::<toml::Table>()
                .map_err(|e| usage(format!("config file {}: {e}", path.display())))?
        }
        None => toml::Table::new(),
    };
    for (path, raw) in overrides {
        set_path(&mut table, path, parse_value(raw))?;
    }

    let known = serde_json::to_value(RunConfig::default())?;
    let mut unknown = Vec::new();
    unknown_keys(&table, &known, "", &mut unknown);
    if !unknown.is_empty() {
        return Err(usage(format!("unknown configuration key(s): {}", unknown.join(", "))));
    }
    let seed_given = has_key(&table, "sampler", "seed");
    let config: RunConfig = toml::Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| usage(format!("invalid configuration: {}", e.message())))?;
    let schedule = validate(&config)?;
    Ok(Loaded {
        config,
        schedule,
        seed_given,
    })
}

fn check(cond: bool, field: &str, reason: &str) -> anyhow::Result<()> {
    if cond {
        Ok(())
    } else {
        Err(usage(format!("invalid configuration: {field}: {reason}")))
    }
}

fn lib(e: diffsr::Error) -> anyhow::Error {
    usage(e.to_string())
}

pub fn validate(c: &RunConfig) -> anyhow::Result<NoiseSchedule> {
    let schedule = c.schedule.build().map_err(lib)?;
    c.sampler.validate().map_err(lib)?;
    c.error_model.validate().map_err(lib)?;
    c.prf.validate().map_err(lib)?;
    check(
        c.degrade.scale >= 1.0 && c.degrade.scale.is_finite(),
        "degrade.scale",
        "must be a finite number >= 1",
    )?;
    check(c.io.workers >= 1, "io.workers", "must be at least 1")?;
    check(
        matches!(c.io.depth, None | Some(8) | Some(16)),
        "io.depth",
        "must be 8 or 16",
    )?;
    check(
        c.ssim.window >= 1 && c.ssim.sigma > 0.0 && c.ssim.peak > 0.0,
        "ssim",
        "window, sigma and peak must be positive",
    )?;
    check(
        c.freq.low_band_fraction > 0.0 && c.freq.low_band_fraction <= 1.0,
        "freq.low_band_fraction",
        "must be in (0, 1]",
    )?;
    let d = &c.denoiser;
    check(
        d.variance >= 0.0 && d.variance.is_finite() && d.mean.is_finite(),
        "denoiser.variance",
        "must be finite and nonnegative",
    )?;
    match d.kind {
        DenoiserKind::Analytic => {}
        DenoiserKind::Weights => check(d.weights.is_some(), "denoiser.weights", "required for kind = weights")?,
        DenoiserKind::Subprocess => {
            check(
                d.command.is_some(),
                "denoiser.command",
                "required for kind = subprocess",
            )?;
            check(d.timeout_ms > 0, "denoiser.timeout_ms", "must be positive")?;
        }
    }
    Ok(schedule)
}

/// The effective configuration as TOML, for `--print-config`.
pub fn to_toml(c: &RunConfig) -> anyhow::Result<String> {
    Ok(toml::to_string(c)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn strings(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn overrides_are_split_out() {
        let (rest, ov) = extract_overrides(strings(&[
            "sr",
            "--schedule.kind",
            "cosine",
            "--t",
            "5",
            "--prf.c_s=0.5",
        ]))
        .unwrap();
        assert_eq!(rest, strings(&["sr", "--t", "5"]));
        assert_eq!(
            ov,
            vec![
                ("schedule.kind".into(), "cosine".into()),
                ("prf.c_s".into(), "0.5".into())
            ]
        );
        assert!(extract_overrides(strings(&["--prf.c_s"])).is_err());
    }

    #[test]
    fn flag_values_are_typed() {
        assert_eq!(parse_value("0.5"), toml::Value::Float(0.5));
        assert_eq!(parse_value("12"), toml::Value::Integer(12));
        assert_eq!(parse_value("true"), toml::Value::Boolean(true));
        assert_eq!(parse_value("cosine"), toml::Value::String("cosine".into()));
        assert_eq!(parse_value("/tmp/a b.png"), toml::Value::String("/tmp/a b.png".into()));
    }

    #[test]
    fn flags_override_file_and_unknown_keys_fail() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        std::fs::write(&path, "[schedule]\nkind = \"cosine\"\nsteps = 500\n[prf]\nc_s = 0.9\n").unwrap();
        let l = load(Some(&path), &[("prf.c_s".into(), "0.4".into())]).unwrap();
        assert_eq!(l.config.schedule.steps, 500);
        assert_eq!(l.config.prf.c_s, 0.4);
        assert!(!l.seed_given);

        let err = load(None, &[("prf.bogus".into(), "1".into())]).unwrap_err();
        assert!(err.to_string().contains("prf.bogus"), "{err}");
        let err = load(None, &[("schedule.steps".into(), "0".into())]).unwrap_err();
        assert!(err.to_string().contains("schedule.steps"), "{err}");
        assert!(err.downcast_ref::<UsageError>().is_some());
    }
}
