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

//! `diffsr`: schedules, loss curves, step selection and super-resolution from
//! the command line.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.

mod commands;
mod config;
mod denoiser;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use config::{UsageError, CONFIG_ENV};

#[derive(Parser, Debug)]
#[command(
    name = "diffsr",
    version,
    about = "Training-free arbitrary-scale super-resolution with a pretrained diffusion denoiser",
    after_help = "Any configuration value can be set with --section.key VALUE, e.g. \
                  --schedule.kind cosine or --prf.c_s=0.6. Flags override the config file. \
                  Run with --print-config to see every key and its effective value."
)]
pub struct Cli {
    /// TOML config file with one table per section.
    #[arg(long, global = true, env = CONFIG_ENV)]
    pub config: Option<PathBuf>,

    /// Print the effective configuration as TOML and exit.
    #[arg(long, global = true)]
    pub print_config: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Dump the noise schedule as CSV.
    Schedule(ScheduleArgs),
    /// Loss curves (signature, fidelity, total) for degraded images.
    Curves(CurvesArgs),
    /// Solve for the feasible injection steps and the selected step.
    Prf(PrfArgs),
    /// Super-resolve images by noise injection and reverse diffusion.
    Sr(SrArgs),
    /// Downsample and re-upsample an image.
    Degrade(DegradeArgs),
    /// PSNR and SSIM for image pairs.
    Metrics(PairArgs),
    /// Low/high frequency error split for image pairs.
    Freq(PairArgs),
    /// Write the synthetic test corpus as PNG files.
    Corpus(CorpusArgs),
}

#[derive(Args, Debug)]
pub struct ScheduleArgs {
    /// Output CSV; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum RefMode {
    /// Use the high-resolution input as ground truth.
    Oracle,
    /// Estimate the detail loss from the degraded image alone.
    Proxy,
}

#[derive(Args, Debug)]
pub struct CurvesArgs {
    /// High-resolution images.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    /// Degradation scales; defaults to degrade.scale.
    #[arg(long, value_delimiter = ',')]
    pub scale: Vec<f64>,
    #[arg(long, value_enum, default_value_t = RefMode::Oracle)]
    pub reference_mode: RefMode,
    /// Output CSV for a single image and scale; stdout when omitted.
    #[arg(long, conflicts_with = "out_dir")]
    pub out: Option<PathBuf>,
    /// Directory receiving `<stem>_x<scale>.csv` per image and scale.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
#[command(group(clap::ArgGroup::new("source").required(true).args(["curve", "input"])))]
pub struct PrfArgs {
    /// A loss-curve CSV as written by `curves`.
    #[arg(long)]
    pub curve: Option<PathBuf>,
    /// A high-resolution image to degrade by --scale.
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long, requires = "input")]
    pub scale: Option<f64>,
    #[arg(long, value_enum, default_value_t = RefMode::Oracle)]
    pub reference_mode: RefMode,
    /// Output JSON; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write per-step constraint margins as CSV.
    #[arg(long)]
    pub margins: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SrArgs {
    /// Input images: ground truth in evaluation mode, low resolution with --deploy.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    /// Output PNG for a single input.
    #[arg(long, conflicts_with = "out_dir")]
    pub output: Option<PathBuf>,
    /// Directory receiving `<stem>.png` and `<stem>.json` per input.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// JSON report path for a single input; defaults to the output with `.json`.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Explicit injection step.
    #[arg(long, conflicts_with = "noise_level")]
    pub t: Option<usize>,
    /// Explicit injection step as a fraction of the chain, mapped to round(NL·T).
    #[arg(long)]
    pub noise_level: Option<f64>,
    /// Degradation scale in evaluation mode; defaults to degrade.scale.
    #[arg(long)]
    pub scale: Option<f64>,
    /// Inputs are already low resolution; upsample them to the model size.
    #[arg(long)]
    pub deploy: bool,
    /// Ground truth for a deployment input, enabling metrics.
    #[arg(long, requires = "deploy")]
    pub reference: Option<PathBuf>,
    /// How automatic step selection estimates the detail loss.
    #[arg(long, value_enum, default_value_t = RefMode::Proxy)]
    pub reference_mode: RefMode,
    /// Write one metrics row per input here.
    #[arg(long)]
    pub metrics_csv: Option<PathBuf>,
    /// Sampler seed; a random one is chosen and printed when omitted.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct DegradeArgs {
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    /// Defaults to degrade.scale.
    #[arg(long)]
    pub scale: Option<f64>,
    /// Write the reduced image instead of re-upsampling it.
    #[arg(long)]
    pub low_res: bool,
}

#[derive(Args, Debug)]
#[command(group(clap::ArgGroup::new("pairs").required(true).multiple(true).args(["pair", "list"])))]
pub struct PairArgs {
    /// An image and its reference; repeatable.
    #[arg(long, num_args = 2, value_names = ["IMAGE", "REFERENCE"], action = clap::ArgAction::Append)]
    pub pair: Vec<PathBuf>,
    /// CSV with columns `image,reference`.
    #[arg(long)]
    pub list: Option<PathBuf>,
    /// Output CSV; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct CorpusArgs {
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 8)]
    pub count: usize,
    #[arg(long, default_value_t = 256)]
    pub size: usize,
    #[arg(long, default_value_t = 3, value_parser = clap::value_parser!(u8).range(1..=3))]
    pub channels: u8,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<UsageError>().is_some() {
        return 2;
    }
    match err.downcast_ref::<diffsr::Error>() {
        Some(diffsr::Error::Config { .. } | diffsr::Error::Usage(_) | diffsr::Error::Range { .. }) => 2,
        _ => 1,
    }
}

fn is_broken_pipe(err: &anyhow::Error) -> bool {
    err.chain().any(|e| {
        e.downcast_ref::<std::io::Error>()
            .is_some_and(|io| io.kind() == std::io::ErrorKind::BrokenPipe)
            || matches!(e.downcast_ref::<diffsr::Error>(), Some(diffsr::Error::Io(io)) if io.kind() == std::io::ErrorKind::BrokenPipe)
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args: Vec<String> = std::env::args().collect();
    let result = config::extract_overrides(args)
        .map_err(anyhow::Error::from)
        .and_then(|(rest, overrides)| {
            let cli = Cli::try_parse_from(rest).unwrap_or_else(|e| e.exit());
            commands::run(cli, &overrides)
        });
    match result {
        Ok(code) => code,
        // the reader went away, e.g. `diffsr schedule | head`
        Err(err) if is_broken_pipe(&err) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
