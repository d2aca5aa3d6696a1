use itertools::Itertools;
use rand::Rng;
use rand_distr::StandardNormal;

use super::{monte_carlo, monte_carlo_with, Tolerance, VerificationReport};
use crate::compress::ops::kept_count;
use crate::compress::{average, bidirectional_round, worker_stream, Compressor, CompressorSpec};
use crate::error::{Error, Result};
use crate::layered::{BlockWeights, LayerShape, LayeredVector};
use crate::rng::{derive_seed, RngStream, Side, StreamId};
use crate::sim::{compressed_gradient, Problem};

/// Largest dimension for which Random k pairs are enumerated exhaustively.
pub const ENUMERATION_LIMIT: usize = 12;

/// Cap on the number of joint subset choices visited by an enumeration.
const MAX_ENUMERATED: usize = 50_000_000;

/// Random test vectors whose layers differ in scale by up to four orders of
/// magnitude.
pub fn gaussian_corpus(shape: &LayerShape, count: usize, seed: u64) -> Vec<LayeredVector> {
    (0..count)
        .map(|v| {
            let mut rng = RngStream::new(seed, StreamId::new(Side::Probe, v as u64, 0));
            let mut x = LayeredVector::zeros(shape.clone());
            for j in 0..shape.num_layers() {
                let scale = 10f64.powf(rng.random_range(-2.0..=2.0));
                for xi in x.layer_mut(j) {
                    *xi = scale * rng.sample::<f64, _>(StandardNormal);
                }
            }
            x
        })
        .collect()
}

fn unknown_omega(c: &Compressor) -> Error {
    Error::UnknownOmega(c.to_string())
}

/// Empirical inflation of one compressor over a corpus.
#[derive(Clone, Debug, PartialEq)]
pub struct OmegaEstimate {
    /// Declared `Ω` of the whole operator, when it has one.
    pub declared: Option<f64>,
    /// `(mean ‖Q(x)‖² / ‖x‖² − 1, standard error)` per non-zero corpus vector.
    pub per_vector: Vec<(f64, f64)>,
    /// Zero vectors, which carry no information about the ratio.
    pub skipped: usize,
}

impl OmegaEstimate {
    /// Largest per-vector inflation and its standard error.
    pub fn worst(&self) -> (f64, f64) {
        self.per_vector
            .iter()
            .copied()
            .fold((f64::NEG_INFINITY, 0.0), |acc, v| if v.0 > acc.0 { v } else { acc })
    }
}

/// Monte Carlo `E‖Q(x)‖² / ‖x‖² − 1` for every corpus vector. Deterministic
/// operators use a single draw.
pub fn estimate_omega(
    compressor: &Compressor,
    corpus: &[LayeredVector],
    draws: usize,
    seed: u64,
) -> Result<OmegaEstimate> {
    let first = corpus.first().ok_or(Error::EmptyInput)?;
    let shape = first.shape().clone();
    let draws = if compressor.is_deterministic() { 1 } else { draws.max(2) };
    let mut per_vector = Vec::with_capacity(corpus.len());
    let mut skipped = 0;
    for (v, x) in corpus.iter().enumerate() {
        let norm = x.norm_l2_sq();
        if norm == 0.0 {
            skipped += 1;
            continue;
        }
        let s = derive_seed(seed, v as u64);
        let est = monte_carlo_with(
            draws,
            || LayeredVector::zeros(shape.clone()),
            |buf, r| {
                compressor.apply_into(x, buf, s, worker_stream(0, r))?;
                Ok(buf.norm_l2_sq())
            },
        )?;
        per_vector.push((est.mean() / norm - 1.0, est.std_error() / norm));
    }
    Ok(OmegaEstimate {
        declared: compressor.declared_omega(&shape),
        per_vector,
        skipped,
    })
}

/// `E‖Q(x)‖² ≤ (1 + Ω)‖x‖²` within 3 standard errors on every corpus vector.
pub fn check_assumption5(
    compressor: &Compressor,
    corpus: &[LayeredVector],
    draws: usize,
    seed: u64,
) -> Result<VerificationReport> {
    let est = estimate_omega(compressor, corpus, draws, seed)?;
    let omega = est.declared.ok_or_else(|| unknown_omega(compressor))?;
    let failures = est
        .per_vector
        .iter()
        .filter(|(ratio, se)| !Tolerance::UpperSe(3.0).holds(1.0 + ratio, 1.0 + omega, *se))
        .count();
    let (worst, se) = est.worst();
    let samples = if compressor.is_deterministic() { 1 } else { draws };
    let mut report = VerificationReport::judged(
        format!("assumption5.{}.{}", compressor.spec().kind_name(), compressor.mode()),
        worst,
        omega,
        se,
        Tolerance::UpperSe(3.0),
        samples,
        seed,
    )
    .with_detail(format!(
        "vectors={} skipped={} failures={failures}",
        est.per_vector.len(),
        est.skipped
    ));
    report.passed = failures == 0;
    Ok(report)
}

/// `E‖Q(x)‖² ≤ Σ_j (1 + Ω_j)‖x_j‖² ≤ max_j (1 + Ω_j)‖x‖²` for a layer-wise
/// compressor; the first inequality within 3 standard errors.
pub fn verify_lemma1(
    compressor: &Compressor,
    x: &LayeredVector,
    draws: usize,
    seed: u64,
) -> Result<VerificationReport> {
    let shape = x.shape();
    let omegas = compressor
        .layer_omegas(shape)
        .ok_or_else(|| unknown_omega(compressor))?;
    let middle: f64 = omegas
        .iter()
        .enumerate()
        .map(|(j, o)| (1.0 + o) * x.layer_norm_sq(j))
        .sum();
    let top = omegas.iter().map(|o| 1.0 + o).fold(0.0, f64::max) * x.norm_l2_sq();
    let draws = if compressor.is_deterministic() { 1 } else { draws };
    let est = monte_carlo_with(
        draws,
        || LayeredVector::zeros(shape.clone()),
        |buf, r| {
            compressor.apply_into(x, buf, seed, worker_stream(0, r))?;
            Ok(buf.norm_l2_sq())
        },
    )?;
    let chain = middle <= top * (1.0 + 1e-12);
    Ok(VerificationReport::judged(
        "lemma1",
        est.mean(),
        middle,
        est.std_error(),
        Tolerance::UpperSe(3.0),
        draws,
        seed,
    )
    .require(chain)
    .with_detail(format!("max_bound={top:e}")))
}

fn check_same_shapes(grads: &[LayeredVector]) -> Result<&LayeredVector> {
    let first = grads.first().ok_or(Error::EmptyInput)?;
    for g in grads {
        first.same_shape(g)?;
    }
    Ok(first)
}

/// Exact `E[g̃ᵀ∇f]` for entire-model Random k on both sides with kept counts
/// `worker_kept` and `master_kept`, where `∇f` is the mean of `grads`.
/// Visits every joint choice of subsets.
pub fn enumerate_random_k(grads: &[LayeredVector], worker_kept: usize, master_kept: usize) -> Result<f64> {
    let first = check_same_shapes(grads)?;
    let d = first.len();
    if d > ENUMERATION_LIMIT {
        return Err(Error::EnumerationTooLarge {
            dim: d,
            limit: ENUMERATION_LIMIT,
        });
    }
    for (name, k) in [("worker_kept", worker_kept), ("master_kept", master_kept)] {
        if k == 0 || k > d {
            return Err(Error::param(name, format!("{k} is not in 1..={d}")));
        }
    }
    let n = grads.len();
    let grad = average(grads)?;
    let grad = grad.values();
    let worker_sets: Vec<Vec<usize>> = (0..d).combinations(worker_kept).collect();
    let master_sets: Vec<Vec<usize>> = (0..d).combinations(master_kept).collect();
    let total = (0..n).try_fold(master_sets.len(), |acc, _| acc.checked_mul(worker_sets.len()));
    if total.is_none_or(|t| t > MAX_ENUMERATED) {
        return Err(Error::EnumerationTooLarge {
            dim: d,
            limit: ENUMERATION_LIMIT,
        });
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    let mut avg = vec![0.0; d];
    for choice in (0..n).map(|_| 0..worker_sets.len()).multi_cartesian_product() {
        avg.fill(0.0);
        for (i, &c) in choice.iter().enumerate() {
            for &j in &worker_sets[c] {
                avg[j] += grads[i].values()[j];
            }
        }
        for a in avg.iter_mut() {
            *a /= n as f64;
        }
        for set in &master_sets {
            sum += set.iter().map(|&j| avg[j] * grad[j]).sum::<f64>();
            count += 1;
        }
    }
    Ok(sum / count as f64)
}

/// Exhaustive `E[g̃ᵀ∇f]` against `(k_M k_W / d²)‖∇f‖²` to relative 1e-12.
pub fn verify_lemma2_random_k(
    grads: &[LayeredVector],
    worker_kept: usize,
    master_kept: usize,
) -> Result<VerificationReport> {
    let exact = enumerate_random_k(grads, worker_kept, master_kept)?;
    let grad = average(grads)?;
    let d = grad.len() as f64;
    let target = (master_kept * worker_kept) as f64 / (d * d) * grad.norm_l2_sq();
    let choices = binomial(grad.len(), worker_kept).pow(grads.len() as u32) * binomial(grad.len(), master_kept);
    Ok(
        VerificationReport::judged("lemma2.ii", exact, target, 0.0, Tolerance::Relative(1e-12), choices, 0)
            .with_detail(format!(
                "d={} workers={} k_W={worker_kept} k_M={master_kept}",
                grad.len(),
                grads.len()
            )),
    )
}

fn binomial(n: usize, k: usize) -> usize {
    (0..k).fold(1, |acc, i| acc * (n - i) / (i + 1))
}

/// Monte Carlo through the real compressors against the exhaustive value,
/// within 4 standard errors.
pub fn lemma2_agreement(
    grads: &[LayeredVector],
    worker_kept: usize,
    master_kept: usize,
    draws: usize,
    seed: u64,
) -> Result<VerificationReport> {
    let exact = enumerate_random_k(grads, worker_kept, master_kept)?;
    let grad = average(grads)?;
    let d = grad.len() as f64;
    let worker = Compressor::entire_model(CompressorSpec::random_k(worker_kept as f64 / d)?);
    let master = Compressor::entire_model(CompressorSpec::random_k(master_kept as f64 / d)?);
    let est = monte_carlo(draws, |r| {
        bidirectional_round(grads, &worker, &master, seed, r)?
            .aggregate
            .inner(&grad)
    })?;
    Ok(VerificationReport::judged(
        "agreement.lemma2.ii",
        est.mean(),
        exact,
        est.std_error(),
        Tolerance::TwoSidedSe(4.0),
        draws,
        seed,
    ))
}

/// Unbiased pipelines: `E[g̃ᵀ∇f] = ‖∇f‖²` within 4 standard errors.
pub fn verify_lemma2_unbiased(
    grads: &[LayeredVector],
    worker: &Compressor,
    master: &Compressor,
    draws: usize,
    seed: u64,
) -> Result<VerificationReport> {
    if !(worker.is_unbiased() && master.is_unbiased()) {
        return Err(Error::param("compressor", "both operators must be unbiased"));
    }
    check_same_shapes(grads)?;
    let grad = average(grads)?;
    let est = monte_carlo(draws, |r| {
        bidirectional_round(grads, worker, master, seed, r)?
            .aggregate
            .inner(&grad)
    })?;
    Ok(VerificationReport::judged(
        format!("lemma2.i.{}", worker.spec().kind_name()),
        est.mean(),
        grad.norm_l2_sq(),
        est.std_error(),
        Tolerance::TwoSidedSe(4.0),
        draws,
        seed,
    ))
}

/// Layer-wise Random k with per-layer ratios: `E[g̃ᵀ∇f] = ‖∇f‖²_B`, within 4
/// standard errors.
pub fn verify_lemma2_layerwise_random_k(
    grads: &[LayeredVector],
    worker_ratios: &[f64],
    master_ratios: &[f64],
    draws: usize,
    seed: u64,
) -> Result<VerificationReport> {
    let first = check_same_shapes(grads)?;
    let shape = first.shape().clone();
    let build = |ratios: &[f64]| -> Result<(Compressor, Vec<usize>)> {
        if ratios.len() != shape.num_layers() {
            return Err(Error::LengthMismatch {
                expected: shape.num_layers(),
                found: ratios.len(),
            });
        }
        let mut c = Compressor::layerwise(CompressorSpec::random_k(ratios[0])?);
        for (j, r) in ratios.iter().enumerate().skip(1) {
            c = c.with_override(j, CompressorSpec::random_k(*r)?)?;
        }
        let kept = ratios
            .iter()
            .enumerate()
            .map(|(j, r)| kept_count(shape.layer_dim(j), *r))
            .collect();
        Ok((c, kept))
    };
    let (worker, worker_kept) = build(worker_ratios)?;
    let (master, master_kept) = build(master_ratios)?;
    let b = BlockWeights::random_k_descent(shape, &master_kept, &worker_kept)?;
    let grad = average(grads)?;
    let target = grad.weighted_norm_sq(&b)?;
    let draws = if worker.is_deterministic() && master.is_deterministic() {
        1
    } else {
        draws
    };
    let est = monte_carlo(draws, |r| {
        bidirectional_round(grads, &worker, &master, seed, r)?
            .aggregate
            .inner(&grad)
    })?;
    Ok(VerificationReport::judged(
        "lemma2.iii",
        est.mean(),
        target,
        est.std_error(),
        Tolerance::TwoSidedSe(4.0),
        draws,
        seed,
    )
    .with_detail(format!("B={:?}", b.per_layer())))
}

/// Majority-vote sign descent: the deficit `‖∇f‖₁ − E[g̃ᵀ∇f]` must not grow
/// with the batch size (each step within 3 combined standard errors).
pub fn verify_lemma2_sign(
    problem: &Problem,
    x: &LayeredVector,
    batch_sizes: &[usize],
    draws: usize,
    seed: u64,
) -> Result<VerificationReport> {
    if batch_sizes.len() < 2 {
        return Err(Error::param("batch_sizes", "at least two batch sizes are needed"));
    }
    let sign = Compressor::layerwise(CompressorSpec::Sign);
    let mut deficits = Vec::with_capacity(batch_sizes.len());
    for (i, &bs) in batch_sizes.iter().enumerate() {
        let p = problem.with_noise(problem.noise().with_batch_size(bs))?;
        let grad = p.full_gradient(x)?;
        let s = derive_seed(seed, i as u64);
        let est = monte_carlo(draws, |r| {
            compressed_gradient(&p, &sign, &sign, x, s, r)?.aggregate.inner(&grad)
        })?;
        deficits.push((grad.norm_l1() - est.mean(), est.std_error()));
    }
    let monotone = deficits
        .windows(2)
        .all(|w| w[1].0 <= w[0].0 + 3.0 * (w[0].1.powi(2) + w[1].1.powi(2)).sqrt());
    let (first, last) = (deficits[0], deficits[deficits.len() - 1]);
    let detail = batch_sizes
        .iter()
        .zip(&deficits)
        .map(|(bs, (d, se))| format!("bs={bs}:{d:.6e}±{se:.2e}"))
        .join(" ");
    let mut report = VerificationReport::judged("lemma2.iv", last.0, first.0, last.1, Tolerance::Custom, draws, seed)
        .with_detail(detail);
    report.passed = monotone;
    Ok(report)
}

/// `E‖g̃‖² ≤ ‖∇f‖²_A + Trace(AΣ)` with `A = W_M W_W`, within 3 standard
/// errors. Needs declared `Ω` on both sides and a closed-form noise
/// covariance.
pub fn verify_lemma3(
    problem: &Problem,
    worker: &Compressor,
    master: &Compressor,
    x: &LayeredVector,
    draws: usize,
    seed: u64,
) -> Result<VerificationReport> {
    let shape = problem.shape();
    let ww = worker.weights(shape).ok_or_else(|| unknown_omega(worker))?;
    let wm = master.weights(shape).ok_or_else(|| unknown_omega(master))?;
    let a = wm.product(&ww)?;
    let sigma = problem
        .noise_trace(&a)
        .ok_or(Error::param("noise", "the noise covariance has no closed form"))?;
    let grad = problem.full_gradient(x)?;
    let target = grad.weighted_norm_sq(&a)? + sigma;
    let deterministic = worker.is_deterministic()
        && master.is_deterministic()
        && problem
            .noise()
            .covariance_diagonal(shape.dim())
            .is_some_and(|v| v.iter().all(|s| *s == 0.0));
    let draws = if deterministic { 1 } else { draws };
    let est = monte_carlo(draws, |r| {
        Ok(compressed_gradient(problem, worker, master, x, seed, r)?
            .aggregate
            .norm_l2_sq())
    })?;
    Ok(VerificationReport::judged(
        format!("lemma3.{}.{}", worker.spec().kind_name(), master.spec().kind_name()),
        est.mean(),
        target,
        est.std_error(),
        Tolerance::UpperSe(3.0),
        draws,
        seed,
    )
    .with_detail(format!("rho=1 sigma_sq={sigma:e} A={:?}", a.per_layer())))
}

/// `Σ_j (1+Ω_M^j)(1+Ω_W^j) ≤ L max_j (·)` and `Σ_j d_j (·) ≤ d max_j (·)`.
pub fn verify_trace_comparison(
    worker_omegas: &[f64],
    master_omegas: &[f64],
    shape: &LayerShape,
) -> Result<VerificationReport> {
    let a = BlockWeights::from_omegas(shape.clone(), master_omegas)?
        .product(&BlockWeights::from_omegas(shape.clone(), worker_omegas)?)?;
    let max = a.max_weight();
    let (lhs, rhs) = (a.trace(false), shape.num_layers() as f64 * max);
    let (lhs_d, rhs_d) = (a.trace(true), shape.dim() as f64 * max);
    let ok = lhs <= rhs * (1.0 + 1e-12) && lhs_d <= rhs_d * (1.0 + 1e-12);
    let mut report = VerificationReport::judged("trace", lhs, rhs, 0.0, Tolerance::Custom, 1, 0)
        .with_detail(format!("dim_weighted={lhs_d:e}<={rhs_d:e}"));
    report.passed = ok;
    Ok(report)
}

/// [`verify_trace_comparison`] over `draws` random shapes and weights.
pub fn trace_comparison_sweep(draws: usize, seed: u64) -> Result<VerificationReport> {
    let mut failures = 0usize;
    let mut worst_ratio: f64 = 0.0;
    for r in 0..draws {
        let mut rng = RngStream::new(seed, StreamId::new(Side::Probe, 0, r as u64));
        let layers = rng.random_range(1..=8);
        let dims: Vec<usize> = (0..layers).map(|_| rng.random_range(1..=16)).collect();
        let mut omega = || {
            if rng.random_bool(0.2) {
                0.0
            } else {
                rng.random_range(0.0..10.0)
            }
        };
        let ow: Vec<f64> = (0..layers).map(|_| omega()).collect();
        let om: Vec<f64> = (0..layers).map(|_| omega()).collect();
        let report = verify_trace_comparison(&ow, &om, &LayerShape::new(&dims)?)?;
        worst_ratio = worst_ratio.max(report.estimate / report.target);
        if !report.passed {
            failures += 1;
        }
    }
    let mut report = VerificationReport::judged(
        "trace.random",
        failures as f64,
        0.0,
        0.0,
        Tolerance::Custom,
        draws,
        seed,
    )
    .with_detail(format!("largest lhs/rhs={worst_ratio:.6}"));
    report.passed = failures == 0;
    Ok(report)
}
