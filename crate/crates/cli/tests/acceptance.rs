//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails or overruns its time budget.
//!
//! Reference values (inflation constants, descent weights, exact
//! expectations, gradients) are recomputed here from first principles rather
//! than taken from the library.

use std::error::Error;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::sync::Arc;
use std::time::{Duration, Instant};

use gradsq::config::ExperimentConfig;
use gradsq_core::rng::{derive_seed, RngStream, Side, StreamId};
use gradsq_core::sim::{
    compressed_gradient, paired_run, NoiseModel, Problem, Quadratic, Schedule, TrainConfig, Trajectory,
};
use gradsq_core::verify::{
    check_assumption5, enumerate_random_k, fit_rate, gaussian_corpus, trace_comparison_sweep,
    verify_lemma2_layerwise_random_k, verify_lemma2_random_k, verify_lemma2_sign, verify_lemma2_unbiased,
    verify_lemma3, DescentNorm, RateOptions,
};
use gradsq_core::{ApplicationMode, BlockWeights, Compressor, CompressorSpec, LayerShape, LayeredVector};
use rand::Rng;
use rand_distr::StandardNormal;

type Res<T> = Result<T, Box<dyn Error>>;

const DRAWS: usize = 100_000;
const MODES: [ApplicationMode; 2] = [ApplicationMode::Layerwise, ApplicationMode::EntireModel];

struct Outcome {
    passed: bool,
    detail: String,
}

impl Outcome {
    fn new(failures: &[String], summary: String) -> Self {
        if failures.is_empty() {
            Outcome {
                passed: true,
                detail: summary,
            }
        } else {
            Outcome {
                passed: false,
                detail: format!("{summary}; failures: {}", failures.join("; ")),
            }
        }
    }
}

fn spec(s: &str) -> CompressorSpec {
    s.parse().expect("valid operator")
}

fn rng(seed: u64, index: u64) -> RngStream {
    RngStream::new(seed, StreamId::new(Side::Probe, index, 7))
}

fn normal_vector(dims: &[usize], r: &mut RngStream) -> LayeredVector {
    let d = dims.iter().sum();
    let v = (0..d).map(|_| r.sample(StandardNormal)).collect();
    LayeredVector::new(LayerShape::new(dims).unwrap(), v).unwrap()
}

fn rel_close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * b.abs().max(a.abs()).max(f64::MIN_POSITIVE)
}

/// Kept coordinates of a sparsifier on a slice of `len` entries.
fn kept(len: usize, ratio: f64) -> usize {
    ((ratio * len as f64).round() as usize).max(1)
}

/// Per-slice inflation of the operators that have one.
fn slice_omega(kind: &str, len: usize) -> f64 {
    match kind.split_once(':') {
        Some(("random_k_unbiased", k)) => len as f64 / kept(len, k.parse().unwrap()) as f64 - 1.0,
        _ => 0.0,
    }
}

/// `Ω_j` for every layer, under the given application mode.
fn layer_omegas(kind: &str, dims: &[usize], mode: ApplicationMode) -> Vec<f64> {
    match mode {
        ApplicationMode::Layerwise => dims.iter().map(|&d| slice_omega(kind, d)).collect(),
        ApplicationMode::EntireModel => vec![slice_omega(kind, dims.iter().sum()); dims.len()],
    }
}

fn average(grads: &[LayeredVector]) -> Vec<f64> {
    let n = grads.len() as f64;
    let mut out = vec![0.0; grads[0].len()];
    for g in grads {
        for (o, v) in out.iter_mut().zip(g.values()) {
            *o += v / n;
        }
    }
    out
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

// 1. Inflation bound over a 50-vector corpus.
fn criterion1() -> Res<Outcome> {
    let dims = [3, 5, 8];
    let shape = LayerShape::new(&dims)?;
    let corpus = gaussian_corpus(&shape, 50, 2024);
    let mut failures = Vec::new();
    let mut checked = 0;
    for kind in [
        "identity",
        "random_k:0.3",
        "random_k_unbiased:0.3",
        "top_k:0.3",
        "threshold_v:0.5",
    ] {
        for mode in MODES {
            let c = Compressor::new(spec(kind), mode);
            let oracle = layer_omegas(kind, &dims, mode).into_iter().fold(0.0, f64::max);
            match c.declared_omega(&shape) {
                Some(o) if rel_close(o, oracle, 1e-12) || o == oracle => {}
                other => failures.push(format!("{kind}/{mode}: declared {other:?}, expected {oracle}")),
            }
            let r = check_assumption5(&c, &corpus, DRAWS, 11)?;
            if !r.passed {
                failures.push(format!("{kind}/{mode}: {}", r.detail));
            }
            checked += 1;
        }
    }
    Ok(Outcome::new(
        &failures,
        format!("{checked} operator/mode pairs x 50 vectors"),
    ))
}

/// All `k`-subsets of `0..d` as bit masks.
fn subsets(d: usize, k: usize) -> Vec<u32> {
    (0u32..1 << d).filter(|m| m.count_ones() as usize == k).collect()
}

/// `E[g̃ᵀg]` for biased Random k on both sides, over every joint choice of
/// worker and master subsets.
fn enumerate_descent(grads: &[Vec<f64>], kw: usize, km: usize) -> f64 {
    let d = grads[0].len();
    let n = grads.len();
    let g: Vec<f64> = (0..d)
        .map(|i| grads.iter().map(|w| w[i]).sum::<f64>() / n as f64)
        .collect();
    let ws = subsets(d, kw);
    let ms = subsets(d, km);
    let mut choice = vec![0usize; n];
    let (mut total, mut count) = (0.0, 0usize);
    loop {
        let agg: Vec<f64> = (0..d)
            .map(|i| {
                (0..n)
                    .filter(|&w| ws[choice[w]] >> i & 1 == 1)
                    .map(|w| grads[w][i])
                    .sum::<f64>()
                    / n as f64
            })
            .collect();
        for &m in &ms {
            total += (0..d).filter(|&i| m >> i & 1 == 1).map(|i| agg[i] * g[i]).sum::<f64>();
            count += 1;
        }
        let mut w = 0;
        while w < n {
            choice[w] += 1;
            if choice[w] < ws.len() {
                break;
            }
            choice[w] = 0;
            w += 1;
        }
        if w == n {
            break;
        }
    }
    total / count as f64
}

// 2. Exact descent identity for Random k.
fn criterion2() -> Res<Outcome> {
    let mut failures = Vec::new();
    let example = enumerate_descent(&[vec![1.0, 2.0]], 1, 1);
    if !rel_close(example, 1.25, 1e-12) {
        failures.push(format!("oracle example gave {example}"));
    }
    let g = LayeredVector::new(LayerShape::flat(2)?, vec![1.0, 2.0])?;
    let lib = enumerate_random_k(std::slice::from_ref(&g), 1, 1)?;
    if !rel_close(lib, 1.25, 1e-12) {
        failures.push(format!("library example gave {lib}"));
    }
    if !verify_lemma2_random_k(&[g], 1, 1)?.passed {
        failures.push("library example check failed".into());
    }
    let cases = 40;
    for c in 0..cases {
        let mut r = rng(5, c);
        let d = r.random_range(1..=6usize);
        let n = r.random_range(1..=3usize);
        let kw = r.random_range(1..=d);
        let km = r.random_range(1..=d);
        let grads: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..d).map(|_| r.sample(StandardNormal)).collect())
            .collect();
        let exact = enumerate_descent(&grads, kw, km);
        let mean: Vec<f64> = (0..d)
            .map(|i| grads.iter().map(|w| w[i]).sum::<f64>() / n as f64)
            .collect();
        let formula = (km * kw) as f64 / (d * d) as f64 * dot(&mean, &mean);
        let layered: Vec<LayeredVector> = grads
            .iter()
            .map(|v| LayeredVector::new(LayerShape::flat(d).unwrap(), v.clone()).unwrap())
            .collect();
        let lib = enumerate_random_k(&layered, kw, km)?;
        let report = verify_lemma2_random_k(&layered, kw, km)?;
        if !rel_close(exact, formula, 1e-12) || !rel_close(lib, exact, 1e-12) || !report.passed {
            failures.push(format!(
                "case {c} (d={d} n={n} kw={kw} km={km}): oracle {exact} formula {formula} library {lib}"
            ));
        }
    }
    Ok(Outcome::new(
        &failures,
        format!("example = 1.25, {cases} random cases with d <= 6"),
    ))
}

// 3. Unbiased compositions and layer-wise Random k descent.
fn criterion3() -> Res<Outcome> {
    let mut failures = Vec::new();
    let mut r = rng(9, 0);
    let grads: Vec<LayeredVector> = (0..3).map(|_| normal_vector(&[3, 5], &mut r)).collect();
    let norm_sq = {
        let g = average(&grads);
        dot(&g, &g)
    };
    let mut lines = Vec::new();
    for kind in ["terngrad", "qsgd:4", "random_k_unbiased:0.5"] {
        for mode in MODES {
            let c = Compressor::new(spec(kind), mode);
            let rep = verify_lemma2_unbiased(&grads, &c, &c, DRAWS, 21)?;
            lines.push(format!(
                "{kind}/{mode} z={:.2}",
                (rep.estimate - norm_sq) / rep.std_error
            ));
            if !rel_close(rep.target, norm_sq, 1e-12) || !rep.passed {
                failures.push(format!(
                    "{kind}/{mode}: estimate {} target {norm_sq} se {}",
                    rep.estimate, rep.std_error
                ));
            }
        }
    }
    let dims = [2, 4, 2];
    let grads: Vec<LayeredVector> = (0..2).map(|_| normal_vector(&dims, &mut r)).collect();
    let (wr, mr) = ([0.5, 0.25, 1.0], [1.0, 0.5, 0.5]);
    let g = average(&grads);
    let mut target = 0.0;
    let mut offset = 0;
    for (j, &dj) in dims.iter().enumerate() {
        let b = (kept(dj, wr[j]) * kept(dj, mr[j])) as f64 / (dj * dj) as f64;
        target += b * dot(&g[offset..offset + dj], &g[offset..offset + dj]);
        offset += dj;
    }
    let rep = verify_lemma2_layerwise_random_k(&grads, &wr, &mr, DRAWS, 23)?;
    lines.push(format!(
        "layerwise random_k z={:.2}",
        (rep.estimate - target) / rep.std_error
    ));
    if !rel_close(rep.target, target, 1e-12) || !rep.passed {
        failures.push(format!(
            "layerwise random_k: estimate {} target {target} se {}",
            rep.estimate, rep.std_error
        ));
    }
    Ok(Outcome::new(&failures, lines.join(", ")))
}

const H: [f64; 8] = [1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0, 4.0];
const B: [f64; 8] = [1.0, -2.0, 0.5, 1.5, -1.0, 2.0, -0.5, 1.0];

fn quadratic(dims: &[usize], workers: usize, variance: f64, batch: usize) -> Problem {
    let shape = LayerShape::new(dims).unwrap();
    let noise = NoiseModel::gaussian(vec![variance; 8], batch).unwrap();
    Problem::Quadratic(Quadratic::new(shape, H.to_vec(), B.to_vec(), workers, noise).unwrap())
}

// 4. Second-moment bound.
fn criterion4() -> Res<Outcome> {
    let dims = [4, 4];
    let cases: [(&str, &str, ApplicationMode, f64, usize); 7] = [
        ("identity", "identity", ApplicationMode::Layerwise, 0.5, 1),
        (
            "random_k_unbiased:0.5",
            "random_k_unbiased:0.5",
            ApplicationMode::Layerwise,
            0.5,
            1,
        ),
        (
            "random_k_unbiased:0.5",
            "random_k_unbiased:0.25",
            ApplicationMode::EntireModel,
            0.5,
            1,
        ),
        ("top_k:0.5", "random_k_unbiased:0.5", ApplicationMode::Layerwise, 0.5, 1),
        ("threshold_v:0.5", "identity", ApplicationMode::Layerwise, 1.0, 1),
        ("random_k:0.5", "random_k:0.75", ApplicationMode::Layerwise, 0.25, 1),
        (
            "random_k_unbiased:0.25",
            "top_k:0.75",
            ApplicationMode::Layerwise,
            2.0,
            4,
        ),
    ];
    let mut r = rng(31, 0);
    let x = normal_vector(&dims, &mut r);
    let mut failures = Vec::new();
    for (i, (w, m, mode, variance, batch)) in cases.iter().enumerate() {
        let p = quadratic(&dims, 4, *variance, *batch);
        let wo = layer_omegas(w, &dims, *mode);
        let mo = layer_omegas(m, &dims, *mode);
        let grad: Vec<f64> = (0..8).map(|k| H[k] * x.values()[k] - B[k]).collect();
        let mut target = 0.0;
        for (k, g) in grad.iter().enumerate() {
            let j = k / 4;
            let a = (1.0 + wo[j]) * (1.0 + mo[j]);
            target += a * (g * g + variance / *batch as f64);
        }
        let rep = verify_lemma3(
            &p,
            &Compressor::new(spec(w), *mode),
            &Compressor::new(spec(m), *mode),
            &x,
            DRAWS,
            40 + i as u64,
        )?;
        if !rel_close(rep.target, target, 1e-12) || !rep.passed {
            failures.push(format!(
                "{w}/{m}/{mode}: estimate {} bound {target} se {}",
                rep.estimate, rep.std_error
            ));
        }
    }
    Ok(Outcome::new(
        &failures,
        format!("{} operator/noise configurations", cases.len()),
    ))
}

// 5. Layer-wise trace never exceeds the entire-model bound.
fn criterion5() -> Res<Outcome> {
    let mut failures = Vec::new();
    let lib = trace_comparison_sweep(1000, 3)?;
    if !lib.passed {
        failures.push(format!("library sweep: {}", lib.detail));
    }
    for t in 0..1000u64 {
        let mut r = rng(77, t);
        let layers = r.random_range(1..=8usize);
        let dims: Vec<usize> = (0..layers).map(|_| r.random_range(1..=12usize)).collect();
        let shape = LayerShape::new(&dims)?;
        let ow: Vec<f64> = (0..layers).map(|_| r.random_range(0.0..10.0)).collect();
        let om: Vec<f64> = (0..layers).map(|_| r.random_range(0.0..10.0)).collect();
        let w: Vec<f64> = ow.iter().zip(&om).map(|(a, b)| (1.0 + a) * (1.0 + b)).collect();
        let max = w.iter().copied().fold(0.0, f64::max);
        let plain: f64 = w.iter().sum();
        let weighted: f64 = w.iter().zip(&dims).map(|(a, d)| a * *d as f64).sum();
        let a = BlockWeights::from_omegas(shape.clone(), &om)?.product(&BlockWeights::from_omegas(shape, &ow)?)?;
        let d: usize = dims.iter().sum();
        if !rel_close(a.trace(false), plain, 1e-12) || !rel_close(a.trace(true), weighted, 1e-12) {
            failures.push(format!("set {t}: trace mismatch"));
        }
        if plain > layers as f64 * max * (1.0 + 1e-12) || weighted > d as f64 * max * (1.0 + 1e-12) {
            failures.push(format!("set {t}: inequality violated"));
        }
    }
    Ok(Outcome::new(
        &failures,
        "1000 library + 1000 independent weight sets, both trace forms".into(),
    ))
}

fn rate_template(worker: Compressor, master: Compressor, variance: f64, seed: u64) -> TrainConfig {
    let p = quadratic(&[4, 4], 4, variance, 1);
    TrainConfig {
        init: LayeredVector::filled(p.shape().clone(), 2.0),
        problem: Arc::new(p),
        steps: 1,
        schedule: Schedule::Constant { lr: 0.0 },
        worker,
        master,
        seed,
        metrics_every: 1,
    }
}

/// Least-squares decay exponent of `avg ∝ K^{-β}`.
fn decay_exponent(budgets: &[usize], averages: &[f64]) -> f64 {
    let xs: Vec<f64> = budgets.iter().map(|k| (*k as f64).ln()).collect();
    let ys: Vec<f64> = averages.iter().map(|a| a.ln()).collect();
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    -sxy / sxx
}

const BUDGETS: [usize; 3] = [256, 1024, 4096];

// 6. Rate on the noisy quadratic.
fn criterion6() -> Res<Outcome> {
    let mut failures = Vec::new();
    let mut lines = Vec::new();
    let setups = [
        ("identity", Compressor::identity(), 0.4),
        (
            "random_k_unbiased:0.5",
            Compressor::layerwise(spec("random_k_unbiased:0.5")),
            0.1,
        ),
    ];
    for (name, c, scale) in setups {
        let template = rate_template(c.clone(), c, 1.0, 3);
        let fit = fit_rate(
            &template,
            &RateOptions {
                budgets: BUDGETS.to_vec(),
                replications: 8,
                scale,
                sqrt_batch: false,
                norm: DescentNorm::L2Squared,
                grad_bound: None,
            },
        )?;
        let beta = decay_exponent(&fit.budgets, &fit.averages);
        let decreasing = fit.averages.windows(2).all(|w| w[1] < w[0]);
        lines.push(format!("{name}: averages {:.4?} beta {beta:.3}", fit.averages));
        if !decreasing || beta < 0.3 || !fit.diverged.is_empty() || !rel_close(fit.beta, beta, 1e-9) {
            failures.push(format!(
                "{name}: decreasing={decreasing} beta={beta} library beta={}",
                fit.beta
            ));
        }
    }
    Ok(Outcome::new(&failures, lines.join("; ")))
}

// 7. Sign descent with growing batches.
fn criterion7() -> Res<Outcome> {
    let mut failures = Vec::new();
    let sign = Compressor::layerwise(CompressorSpec::Sign);
    let template = rate_template(sign.clone(), sign, 1.0, 5);
    let fit = fit_rate(
        &template,
        &RateOptions {
            budgets: BUDGETS.to_vec(),
            replications: 8,
            scale: 0.4,
            sqrt_batch: true,
            norm: DescentNorm::L1,
            grad_bound: None,
        },
    )?;
    if !fit.averages.windows(2).all(|w| w[1] <= w[0]) || !fit.diverged.is_empty() {
        failures.push(format!("l1 averages {:?}", fit.averages));
    }
    let p = quadratic(&[4, 4], 4, 16.0, 1);
    let x = LayeredVector::filled(p.shape().clone(), 0.8);
    let rep = verify_lemma2_sign(&p, &x, &[16, 256, 4096], DRAWS, 13)?;
    if !rep.passed {
        failures.push(format!("deficit not shrinking: {}", rep.detail));
    }
    Ok(Outcome::new(
        &failures,
        format!("l1 averages {:.4?}; deficits {}", fit.averages, rep.detail),
    ))
}

fn bitwise_equal(a: &Trajectory, b: &Trajectory) -> bool {
    let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    a.records.len() == b.records.len()
        && a.records.iter().zip(&b.records).all(|(x, y)| {
            x.step == y.step
                && x.loss.to_bits() == y.loss.to_bits()
                && x.grad_norm_sq.to_bits() == y.grad_norm_sq.to_bits()
                && x.compress_err_sq.map(f64::to_bits) == y.compress_err_sq.map(f64::to_bits)
                && x.lr.to_bits() == y.lr.to_bits()
                && x.bits_up == y.bits_up
                && x.bits_down == y.bits_down
        })
        && bits(a.final_x.values()) == bits(b.final_x.values())
        && a.mean_grad_norm_sq.to_bits() == b.mean_grad_norm_sq.to_bits()
}

// 8. Mode invariance and the vanishing-layer effect of entire-model top k.
fn criterion8() -> Res<Outcome> {
    let mut failures = Vec::new();
    for kind in ["threshold_v:0.3", "sign"] {
        for seed in 0..4u64 {
            let mut t = rate_template(
                Compressor::layerwise(spec(kind)),
                Compressor::layerwise(spec(kind)),
                0.5,
                seed,
            );
            t.steps = 200;
            t.metrics_every = 7;
            t.schedule = Schedule::Constant { lr: 0.02 };
            let (a, b) = paired_run(&t)?;
            if !bitwise_equal(&a, &b) {
                failures.push(format!("{kind} seed {seed}: paired runs differ"));
            }
        }
    }

    // Layer 0 carries gradients of size 10, layer 1 of size 0.1.
    let shape = LayerShape::new(&[2, 2])?;
    let q = Quadratic::new(
        shape.clone(),
        vec![1.0; 4],
        vec![10.0, -10.0, 0.1, -0.1],
        2,
        NoiseModel::None,
    )?;
    let p = Problem::Quadratic(q);
    let x0 = LayeredVector::zeros(shape.clone());
    let top = |mode| Compressor::new(spec("top_k:0.5"), mode);
    let lw = compressed_gradient(
        &p,
        &top(ApplicationMode::Layerwise),
        &top(ApplicationMode::Layerwise),
        &x0,
        1,
        0,
    )?;
    let em = compressed_gradient(
        &p,
        &top(ApplicationMode::EntireModel),
        &top(ApplicationMode::EntireModel),
        &x0,
        1,
        0,
    )?;
    if em.aggregate.layer(1).iter().any(|v| *v != 0.0) {
        failures.push(format!("entire-model layer 1 = {:?}", em.aggregate.layer(1)));
    }
    if lw.aggregate.layer(1).iter().all(|v| *v == 0.0) {
        failures.push("layer-wise layer 1 is all zero".into());
    }
    let cfg = TrainConfig {
        problem: Arc::new(p),
        init: x0,
        steps: 1,
        schedule: Schedule::Constant { lr: 0.5 },
        worker: top(ApplicationMode::Layerwise),
        master: top(ApplicationMode::Layerwise),
        seed: 1,
        metrics_every: 1,
    };
    let (a, b) = paired_run(&cfg)?;
    if b.final_x.layer(1) != [0.0, 0.0] || a.final_x.layer(1) == [0.0, 0.0] {
        failures.push(format!(
            "after step 0: layer-wise {:?}, entire-model {:?}",
            a.final_x.layer(1),
            b.final_x.layer(1)
        ));
    }
    Ok(Outcome::new(
        &failures,
        format!(
            "threshold_v and sign pairs bitwise identical; step-0 layer 1: layer-wise {:?}, entire-model {:?}",
            lw.aggregate.layer(1),
            em.aggregate.layer(1)
        ),
    ))
}

fn shipped(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs").join(name)
}

// 9. Logistic regression with 100:1 block scales.
fn criterion9() -> Res<Outcome> {
    let mut failures = Vec::new();
    let mut lines = Vec::new();
    for file in ["logistic_blocks_terngrad.cfg", "logistic_blocks_qsgd.cfg"] {
        let config = ExperimentConfig::from_path(&shipped(file))?;
        let p = config.problem_config()?;
        let dims = &p.layers;
        let scales = match &p.data {
            Some(gradsq::config::DataSource::Synthetic { feature_scales, .. }) => feature_scales.clone(),
            _ => return Err("expected synthetic data".into()),
        };
        let block_scale: Vec<f64> = {
            let mut off = 0;
            dims.iter()
                .map(|d| {
                    let s = scales[off];
                    off += d;
                    s
                })
                .collect()
        };
        let spread =
            block_scale.iter().copied().fold(0.0, f64::max) / block_scale.iter().copied().fold(f64::INFINITY, f64::min);
        let d: usize = dims.iter().sum();
        if dims.len() != 4 || !(40..=60).contains(&d) || (spread - 100.0).abs() > 1e-9 {
            failures.push(format!("{file}: layers {dims:?}, scale spread {spread}"));
        }
        let base = config.train_config()?;
        let (mut lw, mut em) = (0.0, 0.0);
        let seeds = 8;
        for r in 0..seeds {
            let mut t = base.clone();
            if r > 0 {
                t.seed = derive_seed(base.seed, r);
            }
            let (a, b) = paired_run(&t)?;
            lw += a.last().loss / seeds as f64;
            em += b.last().loss / seeds as f64;
        }
        lines.push(format!(
            "{}: layer-wise {lw:.6} vs entire-model {em:.6}",
            base.worker.spec()
        ));
        if lw > em {
            failures.push(format!("{file}: layer-wise {lw} > entire-model {em}"));
        }
    }
    Ok(Outcome::new(&failures, lines.join("; ")))
}

fn central_differences(problem: &Problem, x: &LayeredVector) -> Res<Vec<f64>> {
    let h = 1e-5;
    let mut probe = x.clone();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let xi = x.values()[i];
        probe.values_mut()[i] = xi + h;
        let up = problem.loss(&probe)?;
        probe.values_mut()[i] = xi - h;
        let down = problem.loss(&probe)?;
        probe.values_mut()[i] = xi;
        out.push((up - down) / (2.0 * h));
    }
    Ok(out)
}

// 10. Byte-identical reruns and gradient oracles.
fn criterion10() -> Res<Outcome> {
    let mut failures = Vec::new();
    let dir = tempfile::tempdir()?;
    let runs = [
        "quadratic_identity.cfg",
        "mlp_top_k.cfg",
        "logistic_blocks_terngrad.cfg",
    ];
    for file in runs {
        let mut outputs = Vec::new();
        for rep in 0..2 {
            let out = dir.path().join(format!("{file}.{rep}.csv"));
            let status = Command::new(env!("CARGO_BIN_EXE_gradsq"))
                .args(["train", "--config"])
                .arg(shipped(file))
                .arg("--out")
                .arg(&out)
                .status()?;
            if !status.success() {
                failures.push(format!("{file}: train exited with {status}"));
            }
            outputs.push(fs::read(&out).unwrap_or_default());
        }
        if outputs[0].is_empty() || outputs[0] != outputs[1] {
            failures.push(format!("{file}: reruns differ"));
        }
    }
    let mut worst: f64 = 0.0;
    for file in [
        "quadratic_identity.cfg",
        "logistic_blocks_terngrad.cfg",
        "mlp_top_k.cfg",
    ] {
        let problem = ExperimentConfig::from_path(&shipped(file))?.build_problem()?;
        for point in 0..20u64 {
            let mut r = rng(101, point);
            let dims = problem.shape().dims();
            let mut x = normal_vector(&dims, &mut r);
            x.scale(0.5);
            let g = problem.full_gradient(&x)?;
            let fd = central_differences(&problem, &x)?;
            let err = g
                .values()
                .iter()
                .zip(&fd)
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt();
            let rel = err / g.norm_l2_sq().sqrt();
            worst = worst.max(rel);
            if rel.is_nan() || rel > 1e-5 {
                failures.push(format!("{} point {point}: relative error {rel:e}", problem.kind_name()));
            }
        }
    }
    Ok(Outcome::new(
        &failures,
        format!(
            "{} configs rerun byte-identically; worst gradient relative error {worst:.2e}",
            runs.len()
        ),
    ))
}

type Criterion = (u32, &'static str, Duration, fn() -> Res<Outcome>);

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        (
            1,
            "inflation bound, 50-vector corpus",
            Duration::from_secs(60),
            criterion1,
        ),
        (
            2,
            "exact Random k descent by enumeration",
            Duration::from_secs(1),
            criterion2,
        ),
        (3, "descent identities within 4 SE", Duration::from_secs(60), criterion3),
        (
            4,
            "second-moment bound within 3 SE",
            Duration::from_secs(60),
            criterion4,
        ),
        (5, "trace comparison", Duration::from_secs(1), criterion5),
        (6, "rate on the noisy quadratic", Duration::from_secs(120), criterion6),
        (
            7,
            "sign descent with batch sqrt(K)",
            Duration::from_secs(120),
            criterion7,
        ),
        (
            8,
            "mode equivalence and vanishing layer",
            Duration::from_secs(10),
            criterion8,
        ),
        (
            9,
            "layer-wise vs entire-model on scaled blocks",
            Duration::from_secs(120),
            criterion9,
        ),
        (
            10,
            "determinism and gradient oracles",
            Duration::from_secs(60),
            criterion10,
        ),
    ];
    let mut failed = 0;
    for (id, name, budget, f) in criteria {
        let start = Instant::now();
        let outcome = f().unwrap_or_else(|e| Outcome {
            passed: false,
            detail: format!("error: {e}"),
        });
        let elapsed = start.elapsed();
        let in_time = elapsed <= budget;
        let passed = outcome.passed && in_time;
        if !passed {
            failed += 1;
        }
        println!(
            "{} criterion {id}: {name} ({:.2}s of {}s{}) - {}",
            if passed { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64(),
            budget.as_secs(),
            if in_time { "" } else { ", over budget" },
            outcome.detail
        );
    }
    println!("{} of 10 criteria passed", 10 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
