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

//! Subcommand implementations.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use rayon::prelude::*;

use diffsr::corpus::{corpus_image, CorpusSpec};
use diffsr::error_analysis::LossCurve;
use diffsr::imageio::{read_png, write_png, PngDepth};
use diffsr::metrics::{write_metrics_csv, MetricsRow};
use diffsr::pipeline::{
    degrade, quality, reduced_dims, run_request, DegradeSpec, Injection, InputMode, ReferenceMode, SrDeps, SrRequest,
};
use diffsr::prf::{compute_prf, margins, select_injection_step, write_margins_csv, Reference};
use diffsr::resample::resize;
use diffsr::schedule::NoiseSchedule;

use crate::config::{self, usage, Loaded};
use crate::denoiser::DenoiserSource;
use crate::{Cli, Command, CorpusArgs, CurvesArgs, DegradeArgs, PairArgs, PrfArgs, RefMode, ScheduleArgs, SrArgs};

pub fn run(cli: Cli, overrides: &[crate::config::Override]) -> anyhow::Result<ExitCode> {
    let loaded = config::load(cli.config.as_deref(), overrides)?;
    if cli.print_config {
        print!("{}", config::to_toml(&loaded.config)?);
        return Ok(ExitCode::SUCCESS);
    }
    match cli.command {
        Command::Schedule(a) => schedule(&loaded, a),
        Command::Curves(a) => curves(&loaded, a),
        Command::Prf(a) => prf(&loaded, a),
        Command::Sr(a) => sr(&loaded, a),
        Command::Degrade(a) => degrade_cmd(&loaded, a),
        Command::Metrics(a) => pairs(&loaded, a, PairTable::Metrics),
        Command::Freq(a) => pairs(&loaded, a, PairTable::Freq),
        Command::Corpus(a) => corpus(a),
    }
}

/// A buffered file, or stdout when `path` is `None`.
fn sink(path: Option<&Path>) -> anyhow::Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn pool(loaded: &Loaded) -> anyhow::Result<rayon::ThreadPool> {
    Ok(rayon::ThreadPoolBuilder::new()
        .num_threads(loaded.config.io.workers)
        .build()?)
}

fn depth(loaded: &Loaded) -> Option<PngDepth> {
    loaded
        .config
        .io
        .depth
        .map(|d| if d == 16 { PngDepth::Sixteen } else { PngDepth::Eight })
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "image".into())
}

fn schedule(loaded: &Loaded, a: ScheduleArgs) -> anyhow::Result<ExitCode> {
    let mut out = sink(a.out.as_deref())?;
    loaded.schedule.write_csv(&mut out)?;
    out.flush()?;
    Ok(ExitCode::SUCCESS)
}

fn scale_suffix(scale: f64) -> String {
    format!("{scale}").replace('.', "p")
}

fn curve_for(
    loaded: &Loaded,
    hr: &diffsr::ImageTensor,
    scale: f64,
    mode: RefMode,
) -> anyhow::Result<diffsr::prf::Selection> {
    let c = &loaded.config;
    let lr = degrade(hr, &c.degrade.spec(Some(scale)))?;
    let reference = match mode {
        RefMode::Oracle => Reference::Oracle(hr),
        RefMode::Proxy => Reference::Proxy { scale },
    };
    Ok(select_injection_step(
        reference,
        &lr,
        &c.error_model,
        &c.prf,
        &loaded.schedule,
    )?)
}

fn curves(loaded: &Loaded, a: CurvesArgs) -> anyhow::Result<ExitCode> {
    let scales = if a.scale.is_empty() {
        vec![loaded.config.degrade.scale]
    } else {
        a.scale.clone()
    };
    let jobs: Vec<(PathBuf, f64)> = a
        .inputs
        .iter()
        .flat_map(|p| scales.iter().map(move |&s| (p.clone(), s)))
        .collect();
    if jobs.len() > 1 && a.out_dir.is_none() {
        return Err(usage("several images or scales need --out-dir"));
    }
    for &s in &scales {
        if !(s >= 1.0 && s.is_finite()) {
            return Err(usage(format!("--scale {s}: must be a finite number >= 1")));
        }
    }
    if let Some(dir) = &a.out_dir {
        std::fs::create_dir_all(dir)?;
    }
    let results: Vec<anyhow::Result<()>> = pool(loaded)?.install(|| {
        jobs.par_iter()
            .map(|(path, scale)| {
                let (hr, _) = read_png(path)?;
                let sel = curve_for(loaded, &hr, *scale, a.reference_mode)?;
                let target = match &a.out_dir {
                    Some(dir) => Some(dir.join(format!("{}_x{}.csv", stem(path), scale_suffix(*scale)))),
                    None => a.out.clone(),
                };
                let mut out = sink(target.as_deref())?;
                sel.curve.write_csv(&mut out)?;
                out.flush()?;
                Ok(())
            })
            .collect()
    });
    finish(results.into_iter().zip(jobs.iter().map(|j| &j.0)))
}

/// Reports per-item failures and turns them into the exit status.
fn finish<'a>(results: impl Iterator<Item = (anyhow::Result<()>, &'a PathBuf)>) -> anyhow::Result<ExitCode> {
    let mut failed = 0;
    let mut last = None;
    for (r, path) in results {
        if let Err(e) = r {
            eprintln!("error: {}: {e:#}", path.display());
            failed += 1;
            last = Some(e);
        }
    }
    match (failed, last) {
        (0, _) => Ok(ExitCode::SUCCESS),
        (1, Some(e)) => Err(e),
        (n, _) => bail!("{n} items failed"),
    }
}

fn prf(loaded: &Loaded, a: PrfArgs) -> anyhow::Result<ExitCode> {
    let c = &loaded.config;
    let curve = match (&a.curve, &a.input) {
        (Some(path), _) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let curve = LossCurve::read_csv(&text, c.error_model.omega)?;
            if curve.steps != loaded.schedule.steps() {
                return Err(usage(format!(
                    "curve has {} steps, schedule.steps is {}",
                    curve.steps,
                    loaded.schedule.steps()
                )));
            }
            curve
        }
        (None, Some(path)) => {
            let (hr, _) = read_png(path)?;
            let scale = a.scale.unwrap_or(c.degrade.scale);
            curve_for(loaded, &hr, scale, a.reference_mode)?.curve
        }
        (None, None) => unreachable!("clap requires one source"),
    };
    let result = compute_prf(&curve, &c.prf);
    let mut out = sink(a.out.as_deref())?;
    serde_json::to_writer_pretty(&mut out, &result)?;
    writeln!(out)?;
    out.flush()?;
    if let Some(path) = &a.margins {
        let mut m = sink(Some(path))?;
        write_margins_csv(&mut m, &margins(&curve, &result))?;
        m.flush()?;
    }
    Ok(ExitCode::SUCCESS)
}

fn injection(a: &SrArgs, schedule: &NoiseSchedule) -> anyhow::Result<Injection> {
    Ok(match (a.t, a.noise_level) {
        (Some(t), _) => {
            schedule.check_step(t, 0)?;
            Injection::Step(t)
        }
        (None, Some(nl)) => Injection::Step(schedule.step_for_noise_level(nl)?),
        (None, None) => Injection::Auto,
    })
}

fn sr(loaded: &Loaded, a: SrArgs) -> anyhow::Result<ExitCode> {
    let c = &loaded.config;
    let single = a.inputs.len() == 1;
    if !single && (a.output.is_some() || a.report.is_some() || a.reference.is_some()) {
        return Err(usage(
            "--output, --report and --reference take a single input; use --out-dir",
        ));
    }
    let injection = injection(&a, &loaded.schedule)?;
    let mut sampler = c.sampler;
    sampler.seed = match a.seed {
        Some(s) => s,
        None if loaded.seed_given => c.sampler.seed,
        None => {
            let s = rand::random::<u32>() as u64;
            eprintln!("seed: {s}");
            s
        }
    };
    let source = DenoiserSource::new(&c.denoiser, &loaded.schedule)?;
    let mode = if a.deploy {
        let native = source
            .native_resolution()
            .or(c.io.native.map(|[h, w]| (h, w)))
            .ok_or_else(|| usage("deployment mode needs the model resolution: set io.native = [h, w]"))?;
        InputMode::Deployment {
            up_method: c.degrade.up_method,
            native,
            reference: a.reference.clone(),
        }
    } else {
        let spec: DegradeSpec = c.degrade.spec(a.scale);
        if !(spec.scale >= 1.0 && spec.scale.is_finite()) {
            return Err(usage(format!("--scale {}: must be a finite number >= 1", spec.scale)));
        }
        InputMode::Evaluation { degrade: spec }
    };
    if let Some(dir) = &a.out_dir {
        std::fs::create_dir_all(dir)?;
    }
    let requests: Vec<(SrRequest, Option<PathBuf>)> = a
        .inputs
        .iter()
        .map(|input| {
            let output = match (&a.out_dir, &a.output) {
                (Some(dir), _) => Some(dir.join(format!("{}.png", stem(input)))),
                (None, out) => out.clone(),
            };
            let report = a
                .report
                .clone()
                .or_else(|| output.as_ref().map(|o| o.with_extension("json")));
            let req = SrRequest {
                input: input.clone(),
                mode: mode.clone(),
                injection,
                reference_mode: match a.reference_mode {
                    RefMode::Oracle => ReferenceMode::Oracle,
                    RefMode::Proxy => ReferenceMode::Proxy,
                },
                sampler,
                output,
                output_depth: depth(loaded),
            };
            (req, report)
        })
        .collect();

    let outcomes: Vec<anyhow::Result<Option<MetricsRow>>> = pool(loaded)?.install(|| {
        requests
            .par_iter()
            .map(|(req, report_path)| {
                let outcome = source.with(|d| {
                    let deps = SrDeps {
                        denoiser: d,
                        schedule: &loaded.schedule,
                        error_model: c.error_model,
                        prf: c.prf,
                        ssim: c.ssim,
                        freq: c.freq,
                    };
                    run_request(req, &deps)
                })?;
                let r = &outcome.report;
                if let Some(path) = report_path {
                    r.write_json(path)?;
                }
                if let Some(e) = outcome.error {
                    return Err(e.into());
                }
                Ok(match (r.psnr, r.ssim, &r.freq) {
                    (Some(psnr), Some(ssim), Some(f)) => Some(MetricsRow {
                        image: req.input.display().to_string(),
                        scale: r.scale.unwrap_or(f64::NAN),
                        t: r.t.unwrap_or(0),
                        noise_level: r.noise_level.unwrap_or(f64::NAN),
                        psnr,
                        ssim,
                        low_err: f.low_err,
                        high_err: f.high_err,
                    }),
                    _ => None,
                })
            })
            .collect()
    });

    let mut rows = Vec::new();
    let mut statuses = Vec::new();
    for o in outcomes {
        match o {
            Ok(row) => {
                rows.extend(row);
                statuses.push(Ok(()));
            }
            Err(e) => statuses.push(Err(e)),
        }
    }
    if let Some(path) = &a.metrics_csv {
        let mut out = sink(Some(path))?;
        write_metrics_csv(&mut out, &rows)?;
        out.flush()?;
    }
    finish(statuses.into_iter().zip(a.inputs.iter()))
}

fn degrade_cmd(loaded: &Loaded, a: DegradeArgs) -> anyhow::Result<ExitCode> {
    let (img, d) = read_png(&a.input)?;
    let spec = loaded.config.degrade.spec(a.scale);
    let out = if a.low_res {
        let (h, w) = reduced_dims(img.height(), img.width(), spec.scale)?;
        resize(&img, h, w, spec.down_method)?
    } else {
        degrade(&img, &spec)?
    };
    write_png(&a.output, &out.clamp_to_range(), depth(loaded).unwrap_or(d))?;
    Ok(ExitCode::SUCCESS)
}

#[derive(Clone, Copy)]
enum PairTable {
    Metrics,
    Freq,
}

fn read_pair_list(path: &Path) -> anyhow::Result<Vec<(PathBuf, PathBuf)>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let base = path.parent().unwrap_or(Path::new(""));
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    match lines.next().map(|h| h.trim()) {
        Some("image,reference") => {}
        other => {
            return Err(usage(format!(
                "{}: expected header `image,reference`, found {other:?}",
                path.display()
            )))
        }
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let (a, b) = line
                .split_once(',')
                .ok_or_else(|| usage(format!("{}: line {} needs two columns", path.display(), i + 2)))?;
            Ok((base.join(a.trim()), base.join(b.trim())))
        })
        .collect()
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn pairs(loaded: &Loaded, a: PairArgs, table: PairTable) -> anyhow::Result<ExitCode> {
    let mut list: Vec<(PathBuf, PathBuf)> = a.pair.chunks_exact(2).map(|p| (p[0].clone(), p[1].clone())).collect();
    if let Some(path) = &a.list {
        list.extend(read_pair_list(path)?);
    }
    let c = &loaded.config;
    let rows: Vec<anyhow::Result<String>> = pool(loaded)?.install(|| {
        list.par_iter()
            .map(|(img, reference)| {
                let (x, _) = read_png(img)?;
                let (y, _) = read_png(reference)?;
                let q = quality(&x, &y, &c.ssim, &c.freq)?;
                let names = format!(
                    "{},{}",
                    csv_field(&img.display().to_string()),
                    csv_field(&reference.display().to_string())
                );
                Ok(match table {
                    PairTable::Metrics => format!("{names},{},{}", q.psnr, q.ssim),
                    PairTable::Freq => format!("{names},{},{},{}", q.low_err, q.high_err, q.total_err),
                })
            })
            .collect()
    });
    let mut out = sink(a.out.as_deref())?;
    writeln!(
        out,
        "{}",
        match table {
            PairTable::Metrics => "image,reference,psnr,ssim",
            PairTable::Freq => "image,reference,low_err,high_err,total_err",
        }
    )?;
    let mut statuses = Vec::new();
    for r in rows {
        match r {
            Ok(line) => {
                writeln!(out, "{line}")?;
                statuses.push(Ok(()));
            }
            Err(e) => statuses.push(Err(e)),
        }
    }
    out.flush()?;
    finish(statuses.into_iter().zip(list.iter().map(|p| &p.0)))
}

fn corpus(a: CorpusArgs) -> anyhow::Result<ExitCode> {
    if a.channels == 2 {
        return Err(usage("--channels must be 1 or 3"));
    }
    let spec = CorpusSpec {
        count: a.count,
        size: a.size,
        channels: a.channels as usize,
        ..CorpusSpec::default()
    };
    std::fs::create_dir_all(&a.out_dir)?;
    for i in 0..spec.count {
        let path = a.out_dir.join(format!("toy_{i:02}.png"));
        write_png(&path, &corpus_image(&spec, i), PngDepth::Sixteen)?;
    }
    Ok(ExitCode::SUCCESS)
}
