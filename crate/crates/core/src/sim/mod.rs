//! Synchronous data-parallel SGD with bidirectional compression.
//!
//! Each step every worker draws a stochastic gradient at the shared iterate,
//! compresses it with the worker operator, the master averages the messages in
//! ascending worker order and compresses the mean, and every replica applies
//! `x ← x − η_k g̃_k`. All randomness is addressed by `(seed, worker, step,
//! layer, side)`, so a run is a pure function of its [`TrainConfig`].

pub mod data;
pub mod problem;
pub mod schedule;

use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

pub use data::{contiguous_partitions, Dataset};
pub use problem::{Logistic, Mlp, NoiseModel, Problem, Quadratic};
pub use schedule::Schedule;

use crate::compress::{master_round, worker_stream, ApplicationMode, Compressor, Round};
use crate::error::{Error, Result};
use crate::layered::{LayerShape, LayeredVector};
use crate::rng::{derive_seed, RngStream, Side, StreamId};
use crate::stats::MeanEstimator;

/// Worker fan-out goes parallel once `n · d` reaches this many coordinates.
const PARALLEL_WORK: usize = 1 << 14;

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub problem: Arc<Problem>,
    pub init: LayeredVector,
    pub steps: usize,
    pub schedule: Schedule,
    pub worker: Compressor,
    pub master: Compressor,
    pub seed: u64,
    pub metrics_every: usize,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::param("steps", "at least one step is required"));
        }
        if self.metrics_every == 0 {
            return Err(Error::param("metrics_every", "must be positive"));
        }
        let shape = self.problem.shape();
        if self.init.shape() != shape {
            return Err(Error::ShapeMismatch {
                expected: shape.dims(),
                found: self.init.shape().dims(),
            });
        }
        if !self.init.is_finite() {
            return Err(Error::param("init", "initial point must be finite"));
        }
        self.schedule.validate()?;
        self.worker.validate(shape)?;
        self.master.validate(shape)?;
        Ok(())
    }

    /// Same configuration with both compressors switched to `mode`.
    pub fn with_mode(&self, mode: ApplicationMode) -> Result<Self> {
        Ok(Self {
            worker: self.worker.with_mode(mode)?,
            master: self.master.with_mode(mode)?,
            ..self.clone()
        })
    }
}

/// State of the run at iterate `x_k`.
#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub step: usize,
    pub loss: f64,
    /// `‖∇f(x_k)‖²` from the exact full gradient.
    pub grad_norm_sq: f64,
    /// `‖g̃_k − ∇f(x_k)‖²`; absent at the final iterate, where no round runs.
    pub compress_err_sq: Option<f64>,
    pub lr: f64,
    /// Bits sent worker → master over steps `0..k`, summed over workers.
    pub bits_up: u64,
    /// Bits broadcast master → workers over steps `0..k`.
    pub bits_down: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub records: Vec<Record>,
    pub final_x: LayeredVector,
    /// `(1/K) Σ_{k<K} ‖∇f(x_k)‖²`.
    pub mean_grad_norm_sq: f64,
    /// `(1/K) Σ_{k<K} ‖∇f(x_k)‖₁`.
    pub mean_grad_norm_l1: f64,
    /// `min_{k≤K} ‖∇f(x_k)‖²`.
    pub min_grad_norm_sq: f64,
    /// `max_{k≤K} ‖∇f(x_k)‖`.
    pub max_grad_norm: f64,
}

impl Trajectory {
    pub fn last(&self) -> &Record {
        self.records.last().expect("trajectories record at least k = 0")
    }

    /// First recorded step whose `‖∇f‖²` is at most `threshold`.
    pub fn steps_to_threshold(&self, threshold: f64) -> Option<usize> {
        self.records
            .iter()
            .find(|r| r.grad_norm_sq <= threshold)
            .map(|r| r.step)
    }
}

/// Stream identity of worker `worker`'s stochastic gradient at `step`.
pub fn gradient_stream(worker: usize, step: u64) -> StreamId {
    StreamId::new(Side::Gradient, worker as u64, step)
}

/// One full round at `x`: stochastic gradients, worker compression, master
/// aggregation and compression. Workers may be evaluated in parallel; the
/// result is independent of scheduling.
pub fn compressed_gradient(
    problem: &Problem,
    worker: &Compressor,
    master: &Compressor,
    x: &LayeredVector,
    seed: u64,
    step: u64,
) -> Result<Round> {
    let n = problem.num_workers();
    let one = |i: usize| -> Result<(LayeredVector, u64)> {
        let mut rng = RngStream::new(seed, gradient_stream(i, step));
        let g = problem.stochastic_gradient(x, i, &mut rng)?;
        let q = worker.apply(&g, seed, worker_stream(i, step))?;
        let bits = worker.payload_bits(&q);
        Ok((q, bits))
    };
    let messages: Vec<(LayeredVector, u64)> = if n > 1 && n * x.len() >= PARALLEL_WORK {
        (0..n).into_par_iter().map(one).collect::<Result<_>>()?
    } else {
        (0..n).map(one).collect::<Result<_>>()?
    };
    let bits_up = messages.iter().map(|(_, b)| b).sum();
    let compressed: Vec<LayeredVector> = messages.into_iter().map(|(q, _)| q).collect();
    let (aggregate, bits_down) = master_round(&compressed, master, seed, step)?;
    Ok(Round {
        aggregate,
        bits_up,
        bits_down,
    })
}

/// Executes `config.steps` steps and records every `metrics_every` steps plus
/// `k = 0` and `k = K`.
pub fn run(config: &TrainConfig) -> Result<Trajectory> {
    config.validate()?;
    let problem = &*config.problem;
    let budget = config.steps;
    let mut x = config.init.clone();
    let mut records = Vec::new();
    let (mut bits_up, mut bits_down) = (0u64, 0u64);
    let mut sum_sq = 0.0;
    let mut sum_l1 = 0.0;
    let mut min_sq = f64::INFINITY;
    let mut max_norm: f64 = 0.0;

    let abort = |step: usize,
                 records: &Vec<Record>,
                 x: &LayeredVector,
                 sum_sq: f64,
                 sum_l1: f64,
                 min_sq: f64,
                 max_norm: f64| {
        let done = step.max(1) as f64;
        Error::NonFinite {
            step,
            partial: Box::new(Trajectory {
                records: records.clone(),
                final_x: x.clone(),
                mean_grad_norm_sq: sum_sq / done,
                mean_grad_norm_l1: sum_l1 / done,
                min_grad_norm_sq: min_sq,
                max_grad_norm: max_norm,
            }),
        }
    };

    for k in 0..=budget {
        let (loss, grad) = problem.loss_and_gradient(&x)?;
        let grad_sq = grad.norm_l2_sq();
        if !(loss.is_finite() && grad.is_finite()) {
            return Err(abort(k, &records, &x, sum_sq, sum_l1, min_sq, max_norm));
        }
        min_sq = min_sq.min(grad_sq);
        max_norm = max_norm.max(grad_sq.sqrt());
        let lr = config.schedule.lr_at(k, budget);
        let record_now = k % config.metrics_every == 0 || k == budget;
        if k == budget {
            records.push(Record {
                step: k,
                loss,
                grad_norm_sq: grad_sq,
                compress_err_sq: None,
                lr,
                bits_up,
                bits_down,
            });
            break;
        }
        sum_sq += grad_sq;
        sum_l1 += grad.norm_l1();

        let round = compressed_gradient(problem, &config.worker, &config.master, &x, config.seed, k as u64)?;
        if !round.aggregate.is_finite() {
            return Err(abort(k, &records, &x, sum_sq, sum_l1, min_sq, max_norm));
        }
        if record_now {
            records.push(Record {
                step: k,
                loss,
                grad_norm_sq: grad_sq,
                compress_err_sq: Some(round.aggregate.distance_sq(&grad)?),
                lr,
                bits_up,
                bits_down,
            });
        }
        bits_up += round.bits_up;
        bits_down += round.bits_down;
        x.axpy(-lr, &round.aggregate)?;
        if !x.is_finite() {
            return Err(abort(k + 1, &records, &x, sum_sq, sum_l1, min_sq, max_norm));
        }
    }

    Ok(Trajectory {
        records,
        final_x: x,
        mean_grad_norm_sq: sum_sq / budget as f64,
        mean_grad_norm_l1: sum_l1 / budget as f64,
        min_grad_norm_sq: min_sq,
        max_grad_norm: max_norm,
    })
}

/// Runs the configuration once per application mode with identical stream
/// identities; returns `(layerwise, entire_model)`.
pub fn paired_run(config: &TrainConfig) -> Result<(Trajectory, Trajectory)> {
    let layerwise = config.with_mode(ApplicationMode::Layerwise)?;
    let entire = config.with_mode(ApplicationMode::EntireModel)?;
    Ok((run(&layerwise)?, run(&entire)?))
}

/// One-step smoothness check at a visited iterate.
#[derive(Clone, Debug)]
pub struct LedgerEntry {
    pub step: usize,
    pub lr: f64,
    /// Monte Carlo `η(E[g̃ᵀ∇f] − (𝓛η/2) E‖g̃‖²)`.
    pub predicted_decrease: f64,
    /// Monte Carlo `E[f(x_k) − f(x_k − η g̃)]`.
    pub observed_decrease: f64,
    /// Standard error of the paired difference `observed − predicted`.
    pub std_error: f64,
    pub draws: usize,
    pub passed: bool,
}

/// Checks `η(E[g̃ᵀ∇f] − (𝓛η/2)E‖g̃‖²) ≤ E(f_k − f_{k+1})` within 3 standard
/// errors at the iterates `x_k` of the reference run for each listed step.
/// Rounds at a checkpoint share `x_k` and vary only the seed.
pub fn descent_ledger(
    config: &TrainConfig,
    smoothness: f64,
    checkpoints: &[usize],
    draws: usize,
) -> Result<Vec<LedgerEntry>> {
    config.validate()?;
    if draws < 2 {
        return Err(Error::param(
            "draws",
            "at least two draws are needed for a standard error",
        ));
    }
    let problem = &*config.problem;
    let mut wanted: Vec<usize> = checkpoints.iter().copied().filter(|k| *k < config.steps).collect();
    wanted.sort_unstable();
    wanted.dedup();
    let mut entries = Vec::with_capacity(wanted.len());
    let mut x = config.init.clone();
    let mut next = wanted.iter().peekable();
    for k in 0..config.steps {
        let Some(&&target) = next.peek() else { break };
        let lr = config.schedule.lr_at(k, config.steps);
        if k == target {
            next.next();
            let (f0, grad) = problem.loss_and_gradient(&x)?;
            let samples: Vec<(f64, f64)> = (0..draws)
                .into_par_iter()
                .map(|r| -> Result<(f64, f64)> {
                    let seed = derive_seed(config.seed, r as u64 + 1);
                    let g = compressed_gradient(problem, &config.worker, &config.master, &x, seed, k as u64)?.aggregate;
                    let mut y = x.clone();
                    y.axpy(-lr, &g)?;
                    let observed = f0 - problem.loss(&y)?;
                    let predicted = lr * (g.inner(&grad)? - 0.5 * smoothness * lr * g.norm_l2_sq());
                    Ok((observed, predicted))
                })
                .collect::<Result<_>>()?;
            let observed: MeanEstimator = samples.iter().map(|s| s.0).collect();
            let predicted: MeanEstimator = samples.iter().map(|s| s.1).collect();
            let diff: MeanEstimator = samples.iter().map(|s| s.0 - s.1).collect();
            entries.push(LedgerEntry {
                step: k,
                lr,
                predicted_decrease: predicted.mean(),
                observed_decrease: observed.mean(),
                std_error: diff.std_error(),
                draws,
                passed: diff.mean() >= -3.0 * diff.std_error(),
            });
        }
        let round = compressed_gradient(problem, &config.worker, &config.master, &x, config.seed, k as u64)?;
        x.axpy(-lr, &round.aggregate)?;
        if !x.is_finite() {
            return Err(Error::param(
                "steps",
                format!("iterate became non-finite at step {}", k + 1),
            ));
        }
    }
    Ok(entries)
}

/// Independent `N(0, scale²)` coordinates from the init stream.
pub fn random_init(shape: LayerShape, scale: f64, seed: u64) -> LayeredVector {
    let mut rng = RngStream::new(seed, StreamId::new(Side::Init, 0, 0));
    let values = (0..shape.dim())
        .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
        .collect();
    LayeredVector::new(shape, values).expect("length matches shape")
}

/// Empirical smoothness: the largest secant ratio `‖∇f(x) − ∇f(y)‖ / ‖x − y‖`
/// over `probes` random pairs in a ball of `radius` around `center`.
pub fn estimate_smoothness(
    problem: &Problem,
    center: &LayeredVector,
    radius: f64,
    probes: usize,
    seed: u64,
) -> Result<f64> {
    let mut best: f64 = 0.0;
    for p in 0..probes {
        let mut rng = RngStream::new(seed, StreamId::new(Side::Probe, 0, p as u64));
        let mut x = center.clone();
        let mut y = center.clone();
        for (xi, yi) in x.values_mut().iter_mut().zip(y.values_mut()) {
            let a: f64 = rng.sample(StandardNormal);
            let b: f64 = rng.sample(StandardNormal);
            *xi += radius * a;
            *yi += radius * b / 8.0 + radius * a;
        }
        let gx = problem.full_gradient(&x)?;
        let gy = problem.full_gradient(&y)?;
        let dist = x.distance_sq(&y)?.sqrt();
        if dist > 0.0 {
            best = best.max(gx.distance_sq(&gy)?.sqrt() / dist);
        }
    }
    Ok(best)
}
