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

//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each with
//! the measured quantity, its pinned tolerance and the runtime against its
//! budget, and exits nonzero if any criterion fails.

use std::panic::{self, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use diffsr::corpus::{pixel_moments, toy_corpus, CorpusSpec};
use diffsr::denoisers::network::demo_container;
use diffsr::denoisers::{CompactNetwork, GaussianDenoiser, SubprocessConfig, SubprocessDenoiser, WeightContainer};
use diffsr::diffusion::{
    forward_marginal_sample, forward_step_sample, reverse_from, Denoiser, SamplerConfig, SamplerFamily,
};
use diffsr::error_analysis::{forward_gap_kl, loss_curve, AdditiveTerm, ErrorModelConfig, KlFormulation, LossCurve};
use diffsr::metrics::{freq_split_error, psnr, ssim, FreqSplitSpec, SsimParams};
use diffsr::pipeline::{degrade, quality, super_resolve, DegradeSpec};
use diffsr::prf::{compute_prf, select_injection_step, PrfConfig, Reference};
use diffsr::rng::{normal_like, seeded, DiffRng};
use diffsr::schedule::{NoiseSchedule, ScheduleConfig, ScheduleKind, ScheduleParams};
use diffsr::ImageTensor;
use rand::Rng;

const ECHO: &str = env!("CARGO_BIN_EXE_diffsr-echo-denoiser");

// Pinned tolerances.
const TOL_ALPHA_BAR: f64 = 1e-12;
const MOMENT_SIGMAS: f64 = 3.0;
const TOL_KL: f64 = 1e-6;
const TOL_SAMPLER_DDIM: f64 = 0.05;
const TOL_SAMPLER_DDPM: f64 = 0.10;
const MAX_OVERNOISE_CORR: f64 = 0.1;
const TOL_PSNR_20DB: f64 = 1e-9;
const TOL_SSIM_SELF: f64 = 1e-9;
const TOL_PARSEVAL_REL: f64 = 1e-6;
const TOL_CONTAINER: f64 = 1e-6;

type Check = Result<String, String>;

fn linear() -> NoiseSchedule {
    ScheduleConfig::default().build().unwrap()
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn scalar_image(n: usize, v: f64) -> ImageTensor {
    ImageTensor::filled(1, n, 1, v)
}

fn moments(x: &ImageTensor) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.mean();
    let v = x.data().iter().map(|a| (a - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, v)
}

/// 1. Schedule oracle.
fn schedule_oracle() -> Check {
    let s = NoiseSchedule::build(ScheduleKind::Linear, 1000, 1e-4, 0.02, ScheduleParams::default())
        .map_err(|e| e.to_string())?;
    let mut prod = 1.0f64;
    let mut worst = 0.0f64;
    for t in 1..=1000 {
        let beta = 1e-4 + (0.02 - 1e-4) * (t - 1) as f64 / 999.0;
        prod *= 1.0 - beta;
        worst = worst.max((s.alpha_bar(t) - prod).abs());
    }
    ensure(worst <= TOL_ALPHA_BAR, || {
        format!("max |alpha_bar - product| = {worst:e}")
    })?;
    for kind in ScheduleKind::ALL {
        let s = NoiseSchedule::build(kind, 1000, 1e-4, 0.02, ScheduleParams::default()).map_err(|e| e.to_string())?;
        let ab = s.alpha_bars();
        let bad = (1..ab.len()).find(|&t| ab[t] >= ab[t - 1] || ab[t].is_nan());
        ensure(bad.is_none(), || {
            format!("{} alpha_bar not strictly decreasing at t = {bad:?}", kind.name())
        })?;
    }
    Ok(format!(
        "max |alpha_bar - product| = {worst:.1e} (tol {TOL_ALPHA_BAR:e}); 5/5 kinds strictly decreasing"
    ))
}

/// 2. Stepwise forward chain versus the closed-form marginal.
fn forward_composition() -> Check {
    let s = linear();
    let n = 100_000;
    let x0 = scalar_image(n, 0.7);
    let mut rng = seeded(2024);
    let mut x = x0.clone();
    let mut worst: f64 = 0.0;
    for t in 1..=500 {
        x = forward_step_sample(&x, t, &s, &mut rng).map_err(|e| e.to_string())?;
        if ![10, 100, 500].contains(&t) {
            continue;
        }
        let (m_step, v_step) = moments(&x);
        let (x_t, _) = forward_marginal_sample(&x0, t, &s, &mut rng).map_err(|e| e.to_string())?;
        let (m_marg, v_marg) = moments(&x_t);
        let nf = n as f64;
        let se_mean = ((v_step + v_marg) / nf).sqrt();
        let se_var = (2.0 / (nf - 1.0)).sqrt() * (v_step * v_step + v_marg * v_marg).sqrt();
        let z_mean = (m_step - m_marg).abs() / se_mean;
        let z_var = (v_step - v_marg).abs() / se_var;
        worst = worst.max(z_mean).max(z_var);
        ensure(z_mean <= MOMENT_SIGMAS && z_var <= MOMENT_SIGMAS, || {
            format!("t = {t}: mean z = {z_mean:.2}, variance z = {z_var:.2}")
        })?;
    }
    Ok(format!(
        "t in {{10,100,500}}, 1e5 samples: worst deviation {worst:.2} SE (tol {MOMENT_SIGMAS} SE)"
    ))
}

fn gaussian_log_pdf(x: f64, mean: f64, var: f64) -> f64 {
    -0.5 * ((x - mean).powi(2) / var + (2.0 * std::f64::consts::PI * var).ln())
}

/// KL between two equal-variance Gaussians by composite Simpson integration.
fn kl_by_quadrature(mp: f64, mq: f64, var: f64) -> f64 {
    let sd = var.sqrt();
    let (lo, hi) = (mp.min(mq) - 14.0 * sd, mp.max(mq) + 14.0 * sd);
    let n = 200_000;
    let h = (hi - lo) / n as f64;
    let f = |x: f64| {
        let lp = gaussian_log_pdf(x, mp, var);
        lp.exp() * (lp - gaussian_log_pdf(x, mq, var))
    };
    let mut acc = f(lo) + f(hi);
    for i in 1..n {
        acc += f(lo + i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    acc * h / 3.0
}

/// 3. Forward-gap KL against numerical integration, monotonicity and zero gap.
fn kl_properties() -> Check {
    let s = linear();
    let x0 = ImageTensor::new(1, 4, 1, vec![1.0, -0.5, 0.25, 0.8]).unwrap();
    let xh = ImageTensor::new(1, 4, 1, vec![0.0, -0.1, 0.6, 0.8]).unwrap();
    let mut worst = 0.0f64;
    for t in [1, 10, 100, 500, 900] {
        let ab = s.alpha_bar(t);
        let got = forward_gap_kl(&x0, &xh, t, &s, KlFormulation::Standard, AdditiveTerm::Expanded)
            .map_err(|e| e.to_string())?
            .kl;
        let oracle = x0
            .data()
            .iter()
            .zip(xh.data())
            .map(|(a, b)| kl_by_quadrature(ab.sqrt() * a, ab.sqrt() * b, 1.0 - ab))
            .sum::<f64>()
            / 4.0;
        let closed = x0.mse(&xh).unwrap() * ab / (2.0 * (1.0 - ab));
        worst = worst.max((got - oracle).abs()).max((got - closed).abs());
        ensure((got - oracle).abs() <= TOL_KL && (got - closed).abs() <= TOL_KL, || {
            format!("t = {t}: kl {got} vs quadrature {oracle} vs closed form {closed}")
        })?;
    }
    let mut prev = f64::NAN;
    for t in 0..=s.steps() {
        let kl = forward_gap_kl(&x0, &xh, t, &s, KlFormulation::Standard, AdditiveTerm::Expanded)
            .unwrap()
            .kl;
        // alpha_bar(0) = 1 makes the gap unbounded at t = 0
        if t == 0 {
            ensure(kl == f64::INFINITY, || format!("gap at t = 0 is {kl}"))?;
        } else {
            ensure(kl.is_finite() && (t == 1 || kl < prev), || {
                format!("not strictly decreasing at t = {t}")
            })?;
        }
        prev = kl;
        let zero = forward_gap_kl(&x0, &x0, t, &s, KlFormulation::Standard, AdditiveTerm::Expanded)
            .unwrap()
            .kl;
        ensure(zero == 0.0, || format!("identical pair gives {zero} at t = {t}"))?;
    }
    Ok(format!(
        "max |kl - quadrature| = {worst:.1e} at 5 steps (tol {TOL_KL:e}); infinite at t = 0, strictly decreasing on [1, T]; zero gap at all t"
    ))
}

fn corpus(size: usize) -> Vec<ImageTensor> {
    toy_corpus(&CorpusSpec {
        size,
        ..CorpusSpec::default()
    })
}

/// 4. Decomposition identity and monotonicity of the loss curves.
fn loss_decomposition() -> Check {
    let s = linear();
    let cfg = ErrorModelConfig::default();
    ensure(cfg.omega == 0.004, || format!("default omega is {}", cfg.omega))?;
    let hr = &corpus(256)[0];
    let lr = degrade(hr, &DegradeSpec::bicubic(2.0)).map_err(|e| e.to_string())?;
    let c = loss_curve(hr, &lr, &cfg, &s).map_err(|e| e.to_string())?;
    for t in 0..=c.steps {
        ensure(c.total[t] == c.signature[t] + cfg.omega * c.fidelity[t], || {
            format!("total != signature + omega*fidelity at t = {t}")
        })?;
        if t > 0 {
            ensure(c.signature[t] >= c.signature[t - 1], || {
                format!("signature decreases at t = {t}")
            })?;
            ensure(c.k[t] < c.k[t - 1], || format!("K not strictly decreasing at t = {t}"))?;
        }
    }
    Ok(format!(
        "omega = {}; identity exact at {} steps; signature nondecreasing; K strictly decreasing",
        cfg.omega,
        c.steps + 1
    ))
}

fn sampler_moments(family: SamplerFamily, mu: f64, var: f64) -> Result<(f64, f64), String> {
    let s = linear();
    let d = GaussianDenoiser::scalar(mu, var, s.clone()).map_err(|e| e.to_string())?;
    // 10^4 independent scalar chains as the pixels of one image
    let x_t = normal_like((100, 100, 1), &mut seeded(77));
    let cfg = SamplerConfig {
        family,
        ddim_eta: 0.0,
        ddim_substeps: None,
        clip_x0: false,
        seed: 0,
    };
    let out = reverse_from(&x_t, s.steps(), &d, &cfg, &s, &mut seeded(78)).map_err(|e| e.to_string())?;
    Ok(moments(&out))
}

/// 5. Sampler correctness through the analytic denoiser.
fn sampler_correctness() -> Check {
    let (mu, var) = (0.3, 0.05);
    let mut parts = Vec::new();
    for (family, tol) in [
        (SamplerFamily::Ddim, TOL_SAMPLER_DDIM),
        (SamplerFamily::Ddpm, TOL_SAMPLER_DDPM),
    ] {
        let (m, v) = sampler_moments(family, mu, var)?;
        let (em, ev) = ((m - mu).abs() / mu, (v - var).abs() / var);
        ensure(em <= tol && ev <= tol, || {
            format!(
                "{family:?}: mean {m:.4} ({:.1}%), variance {v:.4} ({:.1}%)",
                em * 100.0,
                ev * 100.0
            )
        })?;
        parts.push(format!(
            "{family:?} mean err {:.2}% var err {:.2}% (tol {:.0}%)",
            em * 100.0,
            ev * 100.0,
            tol * 100.0
        ));
    }
    Ok(format!("N({mu}, {var}), 1e4 chains: {}", parts.join("; ")))
}

/// Feasible set and argmin by direct enumeration.
fn scan(curve: &LossCurve, c_s: f64, c_f: f64) -> (Vec<usize>, Option<usize>) {
    let feasible: Vec<usize> = (0..=curve.steps)
        .filter(|&t| curve.signature[t] <= c_s && curve.weighted_fidelity[t] <= c_f)
        .collect();
    let mut best: Option<usize> = None;
    for &t in &feasible {
        if best.is_none_or(|b| curve.total[t] < curve.total[b]) {
            best = Some(t);
        }
    }
    (feasible, best)
}

fn random_curve(rng: &mut DiffRng) -> LossCurve {
    let steps = rng.random_range(5..200);
    let mut sig = Vec::with_capacity(steps + 1);
    let mut fid = Vec::with_capacity(steps + 1);
    let mut acc = 0.0f64;
    for _ in 0..=steps {
        acc += rng.random_range(0.0..1.0);
        // coarse values force ties in the total
        sig.push(if rng.random_bool(0.5) {
            acc.round()
        } else {
            rng.random_range(0.0..50.0f64).round()
        });
        fid.push(rng.random_range(0.0..4000.0f64).round());
    }
    LossCurve::from_parts(0.004, sig, fid).unwrap()
}

/// 6. PRF scan equivalence, scale ordering and the infeasible 8× case.
fn prf_behavior() -> Check {
    let mut rng = seeded(6);
    for i in 0..100 {
        let curve = random_curve(&mut rng);
        let cfg = PrfConfig::absolute(rng.random_range(0.0..60.0), rng.random_range(0.0..16.0));
        let r = compute_prf(&curve, &cfg);
        let (feasible, best) = scan(&curve, cfg.c_s, cfg.c_f);
        let listed: Vec<usize> = r.feasible_set.iter().flat_map(|iv| iv.start..=iv.end).collect();
        ensure(
            listed == feasible && r.t_star == best && r.feasible == best.is_some(),
            || format!("curve {i}: result {:?}/{:?} vs scan {best:?}", r.feasible_set, r.t_star),
        )?;
        let maximal = r.feasible_set.windows(2).all(|w| w[1].start > w[0].end + 1);
        ensure(maximal, || format!("curve {i}: intervals not maximal"))?;
    }

    let s = linear();
    let cfg = ErrorModelConfig::default();
    let prf = PrfConfig::default();
    let scales = [2.0, 2.7, 3.5, 4.0];
    let images = corpus(256);
    let mut sums = [0.0; 4];
    for (i, hr) in images.iter().enumerate() {
        let mut prev = 0usize;
        for (k, &scale) in scales.iter().enumerate() {
            let lr = degrade(hr, &DegradeSpec::bicubic(scale)).map_err(|e| e.to_string())?;
            let sel =
                select_injection_step(Reference::Proxy { scale }, &lr, &cfg, &prf, &s).map_err(|e| e.to_string())?;
            let t = sel
                .prf
                .t_star
                .ok_or_else(|| format!("image {i}: {scale}x has no feasible step"))?;
            ensure(t >= prev, || {
                format!("image {i}: t* drops from {prev} to {t} at {scale}x")
            })?;
            prev = t;
            sums[k] += t as f64 / s.steps() as f64;
        }
        let lr = degrade(hr, &DegradeSpec::bicubic(8.0)).map_err(|e| e.to_string())?;
        let sel =
            select_injection_step(Reference::Proxy { scale: 8.0 }, &lr, &cfg, &prf, &s).map_err(|e| e.to_string())?;
        ensure(!sel.prf.feasible, || {
            format!("image {i}: 8x is feasible (t* = {:?})", sel.prf.t_star)
        })?;
    }
    let n = images.len() as f64;
    Ok(format!(
        "100/100 scans match; mean t*/T 2x {:.3}, 2.7x {:.3}, 3.5x {:.3}, 4x {:.3} (nondecreasing on 8/8 images); 8x infeasible on 8/8",
        sums[0] / n,
        sums[1] / n,
        sums[2] / n,
        sums[3] / n
    ))
}

/// 7. Over-noising destroys the input.
fn over_noising() -> Check {
    let s = linear();
    let images = corpus(256);
    let (mu, var) = pixel_moments(&images);
    let d = GaussianDenoiser::scalar(mu, var, s.clone()).map_err(|e| e.to_string())?;
    let sampler = SamplerConfig {
        ddim_substeps: Some(50),
        ..SamplerConfig::default()
    };
    let (ssim_p, freq) = (SsimParams::default(), FreqSplitSpec::default());
    let mut worst_corr: f64 = 0.0;
    let mut worst_gap = f64::NEG_INFINITY;
    for (i, hr) in images.iter().enumerate() {
        let lr = degrade(hr, &DegradeSpec::bicubic(4.0)).map_err(|e| e.to_string())?;
        let baseline = quality(&lr, hr, &ssim_p, &freq).map_err(|e| e.to_string())?.psnr;
        for nl in [0.8, 1.0] {
            let t = s.step_for_noise_level(nl).unwrap();
            let out = super_resolve(&lr, t, &d, &sampler, &s, &mut seeded(i as u64))
                .map_err(|e| e.to_string())?
                .clamp_to_range();
            let corr = out.correlation(&lr).unwrap();
            let p = quality(&out, hr, &ssim_p, &freq).map_err(|e| e.to_string())?.psnr;
            worst_corr = worst_corr.max(corr.abs());
            worst_gap = worst_gap.max(p - baseline);
            ensure(corr.abs() < MAX_OVERNOISE_CORR && p < baseline, || {
                format!("image {i}, NL {nl}: corr {corr:.3}, psnr {p:.2} vs baseline {baseline:.2}")
            })?;
        }
    }
    Ok(format!(
        "NL 0.8 and 1.0 on 8 images: max |corr| = {worst_corr:.3} (limit {MAX_OVERNOISE_CORR}); psnr - baseline <= {worst_gap:.2} dB (< 0)"
    ))
}

/// 8. Metrics closed forms.
fn metrics_checks() -> Check {
    let a = ImageTensor::filled(32, 32, 3, 0.25).with_range(diffsr::ValueRange::UNIT);
    let b = ImageTensor::filled(32, 32, 3, 0.35).with_range(diffsr::ValueRange::UNIT);
    let p = psnr(&a, &b, 1.0).map_err(|e| e.to_string())?;
    ensure((p - 20.0).abs() <= TOL_PSNR_20DB, || format!("psnr {p}"))?;

    let mut rng = seeded(8);
    let img = ImageTensor::from_fn(40, 40, 3, |_, _, _| rng.random_range(0.0..1.0));
    let self_ssim = ssim(&img, &img, &SsimParams::default()).map_err(|e| e.to_string())?;
    ensure((self_ssim - 1.0).abs() <= TOL_SSIM_SELF, || {
        format!("ssim(a, a) = {self_ssim}")
    })?;

    let mut worst = 0.0f64;
    for _ in 0..50 {
        let (h, w) = (rng.random_range(8..48), rng.random_range(8..48));
        let c = if rng.random_bool(0.5) { 1 } else { 3 };
        let x = ImageTensor::from_fn(h, w, c, |_, _, _| rng.random_range(-1.0..1.0));
        let y = ImageTensor::from_fn(h, w, c, |_, _, _| rng.random_range(-1.0..1.0));
        let f = freq_split_error(&x, &y, &FreqSplitSpec::default()).map_err(|e| e.to_string())?;
        let spatial: f64 = x.data().iter().zip(y.data()).map(|(p, q)| (p - q).powi(2)).sum();
        let rel = ((f.low_err + f.high_err - spatial).abs()).max((f.total_err - spatial).abs()) / spatial;
        worst = worst.max(rel);
    }
    ensure(worst <= TOL_PARSEVAL_REL, || {
        format!("Parseval relative error {worst:e}")
    })?;
    Ok(format!(
        "psnr = {p:.12} dB (tol {TOL_PSNR_20DB:e}); ssim(a,a) - 1 = {:.1e} (tol {TOL_SSIM_SELF:e}); Parseval rel err {worst:.1e} on 50 pairs (tol {TOL_PARSEVAL_REL:e})",
        self_ssim - 1.0
    ))
}

/// 9. Weight container round trip, echo loopback and fail-closed loading.
fn formats() -> Check {
    let s = linear();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("net.dsrw");
    let c = demo_container([16, 16], 3, 8, 16, &s.fingerprint(), 99).map_err(|e| e.to_string())?;
    c.write(&path).map_err(|e| e.to_string())?;
    let loaded = CompactNetwork::load(&path, Some(&s.fingerprint())).map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    for (p, q) in c.tensors.iter().zip(&loaded.container().tensors) {
        for (a, b) in p.iter().zip(q) {
            worst = worst.max((a - b).abs() as f64);
        }
    }
    let x = ImageTensor::from_fn(16, 16, 3, |y, x, k| ((y * 5 + x * 3 + k) % 9) as f64 / 4.0 - 1.0);
    let before = CompactNetwork::new(c.clone(), None)
        .unwrap()
        .predict_noise(&x, 321)
        .unwrap();
    let after = loaded.predict_noise(&x, 321).map_err(|e| e.to_string())?;
    for (a, b) in before.data().iter().zip(after.data()) {
        worst = worst.max((a - b).abs());
    }
    ensure(worst <= TOL_CONTAINER, || format!("round-trip difference {worst:e}"))?;

    let child =
        SubprocessDenoiser::spawn(SubprocessConfig::new(ECHO, Duration::from_secs(10))).map_err(|e| e.to_string())?;
    let echoed = child.predict_noise(&x, 500).map_err(|e| e.to_string())?;
    ensure(echoed == x, || "echo loopback differs".into())?;
    child.shutdown().map_err(|e| e.to_string())?;

    let bytes = std::fs::read(&path).map_err(|e| e.to_string())?;
    let cut = dir.path().join("cut.dsrw");
    let mut rejected = 0;
    for len in [0, 4, 8, bytes.len() / 2, bytes.len() - 1] {
        std::fs::write(&cut, &bytes[..len]).map_err(|e| e.to_string())?;
        ensure(CompactNetwork::load(&cut, None).is_err(), || {
            format!("truncation to {len} bytes loaded")
        })?;
        ensure(WeightContainer::from_bytes(&bytes[..len]).is_err(), || {
            format!("prefix {len} parsed")
        })?;
        rejected += 1;
    }
    Ok(format!(
        "container max diff {worst:.1e} (tol {TOL_CONTAINER:e}); echo loopback exact; {rejected}/{rejected} truncations rejected"
    ))
}

struct Criterion {
    id: u32,
    name: &'static str,
    budget: Duration,
    run: fn() -> Check,
}

fn main() -> ExitCode {
    let criteria = [
        Criterion {
            id: 1,
            name: "schedule oracle",
            budget: Duration::from_secs(1),
            run: schedule_oracle,
        },
        Criterion {
            id: 2,
            name: "forward composition",
            budget: Duration::from_secs(10),
            run: forward_composition,
        },
        Criterion {
            id: 3,
            name: "KL properties",
            budget: Duration::from_secs(5),
            run: kl_properties,
        },
        Criterion {
            id: 4,
            name: "loss decomposition",
            budget: Duration::from_secs(5),
            run: loss_decomposition,
        },
        Criterion {
            id: 5,
            name: "sampler correctness",
            budget: Duration::from_secs(120),
            run: sampler_correctness,
        },
        Criterion {
            id: 6,
            name: "PRF behavior",
            budget: Duration::from_secs(300),
            run: prf_behavior,
        },
        Criterion {
            id: 7,
            name: "over-noising",
            budget: Duration::from_secs(300),
            run: over_noising,
        },
        Criterion {
            id: 8,
            name: "metrics",
            budget: Duration::from_secs(10),
            run: metrics_checks,
        },
        Criterion {
            id: 9,
            name: "formats",
            budget: Duration::from_secs(10),
            run: formats,
        },
    ];
    let filter: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for c in criteria.iter().filter(|c| filter.is_empty() || filter.contains(&c.id)) {
        let start = Instant::now();
        let result = panic::catch_unwind(AssertUnwindSafe(c.run)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let elapsed = start.elapsed();
        let timing = format!("[{:.2} s / {} s]", elapsed.as_secs_f64(), c.budget.as_secs());
        let (ok, detail) = match result {
            Ok(d) if elapsed <= c.budget => (true, d),
            Ok(d) => (false, format!("{d}; over runtime budget")),
            Err(e) => (false, e),
        };
        if !ok {
            failed += 1;
        }
        println!(
            "{} {} {}: {detail} {timing}",
            if ok { "PASS" } else { "FAIL" },
            c.id,
            c.name
        );
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criterion/criteria failed");
        ExitCode::FAILURE
    }
}
