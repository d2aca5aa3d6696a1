//! Gradient oracles for the desk-scale problems.
//!
//! Every problem is a finite sum `f = (1/n) Σ_i f_i` over `n` workers. The
//! quadratic gives every worker the same `f_i`; the data problems give worker
//! `i` the mean loss over its partition of the dataset.

use std::ops::Range;
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;

use super::data::{contiguous_partitions, Dataset};
use crate::error::{Error, Result};
use crate::layered::{dot, BlockWeights, LayerShape, LayeredVector};
use crate::rng::RngStream;

/// How a worker's stochastic gradient deviates from its local gradient.
#[derive(Clone, Debug, PartialEq)]
pub enum NoiseModel {
    /// Exact local gradient.
    None,
    /// Local gradient plus the mean of `batch_size` independent
    /// `N(0, diag(variances))` draws, i.e. covariance `diag(variances) / BS`.
    Gaussian { variances: Vec<f64>, batch_size: usize },
    /// Mean gradient over `batch_size` rows drawn uniformly with replacement
    /// from the worker's partition; the whole partition once the batch
    /// covers it.
    Minibatch { batch_size: usize },
}

impl NoiseModel {
    pub fn gaussian(variances: Vec<f64>, batch_size: usize) -> Result<Self> {
        if variances.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(Error::param(
                "noise_variance",
                "variances must be finite and non-negative",
            ));
        }
        if batch_size == 0 {
            return Err(Error::param("batch_size", "must be positive"));
        }
        Ok(Self::Gaussian { variances, batch_size })
    }

    /// Per-coordinate variance of one worker's stochastic gradient, when it
    /// is known in closed form.
    pub fn covariance_diagonal(&self, dim: usize) -> Option<Vec<f64>> {
        match self {
            NoiseModel::None => Some(vec![0.0; dim]),
            NoiseModel::Gaussian { variances, batch_size } => {
                Some(variances.iter().map(|v| v / *batch_size as f64).collect())
            }
            NoiseModel::Minibatch { .. } => None,
        }
    }

    pub fn with_batch_size(&self, batch: usize) -> Self {
        match self {
            NoiseModel::None => NoiseModel::None,
            NoiseModel::Gaussian { variances, .. } => NoiseModel::Gaussian {
                variances: variances.clone(),
                batch_size: batch,
            },
            NoiseModel::Minibatch { .. } => NoiseModel::Minibatch { batch_size: batch },
        }
    }
}

/// `f(x) = ½ Σ h_i x_i² − Σ b_i x_i` with diagonal (hence layer-block
/// diagonal) Hessian.
#[derive(Clone, Debug, PartialEq)]
pub struct Quadratic {
    shape: LayerShape,
    curvature: Vec<f64>,
    linear: Vec<f64>,
    workers: usize,
    noise: NoiseModel,
}

impl Quadratic {
    pub fn new(
        shape: LayerShape,
        curvature: Vec<f64>,
        linear: Vec<f64>,
        workers: usize,
        noise: NoiseModel,
    ) -> Result<Self> {
        let d = shape.dim();
        for (name, v) in [("curvature", &curvature), ("linear", &linear)] {
            if v.len() != d {
                return Err(Error::param(name, format!("expected {d} values, found {}", v.len())));
            }
        }
        if curvature.iter().any(|h| !(*h >= 0.0 && h.is_finite())) {
            return Err(Error::param(
                "curvature",
                "Hessian diagonal must be finite and non-negative",
            ));
        }
        if workers == 0 {
            return Err(Error::param("workers", "at least one worker is required"));
        }
        check_noise(&noise, d, false)?;
        Ok(Self {
            shape,
            curvature,
            linear,
            workers,
            noise,
        })
    }

    pub fn curvature(&self) -> &[f64] {
        &self.curvature
    }

    pub fn linear(&self) -> &[f64] {
        &self.linear
    }

    /// `H⁻¹ b` where every coordinate is curved.
    pub fn minimizer(&self) -> Option<Vec<f64>> {
        self.curvature
            .iter()
            .zip(&self.linear)
            .map(|(h, b)| {
                if *h > 0.0 {
                    Some(b / h)
                } else if *b == 0.0 {
                    Some(0.0)
                } else {
                    None
                }
            })
            .collect()
    }
}

fn check_noise(noise: &NoiseModel, dim: usize, has_data: bool) -> Result<()> {
    match noise {
        NoiseModel::Gaussian { variances, batch_size } => {
            if variances.len() != dim {
                return Err(Error::param(
                    "noise_variance",
                    format!("expected {dim} values, found {}", variances.len()),
                ));
            }
            if *batch_size == 0 {
                return Err(Error::param("batch_size", "must be positive"));
            }
        }
        NoiseModel::Minibatch { batch_size } => {
            if !has_data {
                return Err(Error::param("noise", "minibatch noise needs a dataset"));
            }
            if *batch_size == 0 {
                return Err(Error::param("batch_size", "must be positive"));
            }
        }
        NoiseModel::None => {}
    }
    Ok(())
}

/// Data shared by the logistic and MLP problems.
#[derive(Clone, Debug)]
struct Sharded {
    data: Arc<Dataset>,
    partitions: Vec<Range<usize>>,
    regularization: f64,
    noise: NoiseModel,
}

impl Sharded {
    fn new(data: Arc<Dataset>, workers: usize, regularization: f64, noise: NoiseModel, dim: usize) -> Result<Self> {
        if !(regularization >= 0.0 && regularization.is_finite()) {
            return Err(Error::param("regularization", "must be finite and non-negative"));
        }
        check_noise(&noise, dim, true)?;
        let partitions = contiguous_partitions(data.len(), workers)?;
        Ok(Self {
            data,
            partitions,
            regularization,
            noise,
        })
    }

    /// Mean of `per_row` over `rows`, plus the ridge term; accumulates the
    /// gradient into `grad` and returns the loss.
    fn mean_over<I, F>(&self, x: &[f64], rows: I, count: usize, grad: &mut [f64], mut per_row: F) -> f64
    where
        I: Iterator<Item = usize>,
        F: FnMut(&[f64], f64, &mut [f64]) -> f64,
    {
        grad.fill(0.0);
        let mut loss = 0.0;
        for r in rows {
            loss += per_row(self.data.row(r), self.data.label(r), grad);
        }
        let inv = 1.0 / count as f64;
        let lambda = self.regularization;
        for (g, xi) in grad.iter_mut().zip(x) {
            *g = *g * inv + lambda * xi;
        }
        loss * inv + 0.5 * lambda * dot(x, x)
    }
}

/// `log(1 + e^{-m})`, stable for large `|m|`.
fn softplus_neg(margin: f64) -> f64 {
    if margin > 0.0 {
        (-margin).exp().ln_1p()
    } else {
        -margin + margin.exp().ln_1p()
    }
}

/// `d/dm log(1 + e^{-m}) = -σ(-m)`.
fn softplus_neg_slope(margin: f64) -> f64 {
    if margin > 0.0 {
        let e = (-margin).exp();
        -e / (1.0 + e)
    } else {
        -1.0 / (1.0 + margin.exp())
    }
}

/// ℓ2-regularised logistic regression; layers are blocks of features.
#[derive(Clone, Debug)]
pub struct Logistic {
    shape: LayerShape,
    shards: Sharded,
    smoothness: f64,
}

impl Logistic {
    pub fn new(
        shape: LayerShape,
        data: Arc<Dataset>,
        workers: usize,
        regularization: f64,
        noise: NoiseModel,
    ) -> Result<Self> {
        if shape.dim() != data.num_features() {
            return Err(Error::param(
                "layers",
                format!(
                    "layer sizes sum to {} but the data has {} features",
                    shape.dim(),
                    data.num_features()
                ),
            ));
        }
        let shards = Sharded::new(data, workers, regularization, noise, shape.dim())?;
        let mut problem = Self {
            shape,
            shards,
            smoothness: 0.0,
        };
        problem.smoothness = problem.curvature_bound();
        Ok(problem)
    }

    // Hessian ⪯ ¼ (1/n) Σ_i mean_{r ∈ D_i} a_r a_rᵀ + λI; the top eigenvalue of
    // the data term comes from power iteration.
    fn curvature_bound(&self) -> f64 {
        let d = self.shape.dim();
        let apply = |v: &[f64]| -> Vec<f64> {
            let mut out = vec![0.0; d];
            let n = self.shards.partitions.len() as f64;
            for part in &self.shards.partitions {
                let w = 1.0 / (n * part.len() as f64);
                for r in part.clone() {
                    let a = self.shards.data.row(r);
                    let c = w * dot(a, v);
                    for (o, ai) in out.iter_mut().zip(a) {
                        *o += c * ai;
                    }
                }
            }
            out
        };
        let mut v = vec![1.0 / (d as f64).sqrt(); d];
        let mut lambda = 0.0;
        for _ in 0..500 {
            let w = apply(&v);
            let norm = dot(&w, &w).sqrt();
            if norm == 0.0 {
                break;
            }
            let next = dot(&v, &w);
            v = w.into_iter().map(|x| x / norm).collect();
            if (next - lambda).abs() <= 1e-12 * next.abs() {
                lambda = next;
                break;
            }
            lambda = next;
        }
        0.25 * lambda + self.shards.regularization
    }

    fn row_term(a: &[f64], y: f64, x: &[f64], grad: &mut [f64]) -> f64 {
        let margin = y * dot(a, x);
        let slope = y * softplus_neg_slope(margin);
        for (g, ai) in grad.iter_mut().zip(a) {
            *g += slope * ai;
        }
        softplus_neg(margin)
    }
}

/// One-hidden-layer tanh network with a scalar logit and logistic loss.
///
/// Parameters are stored as four layers: `W1` (`hidden × inputs`, row-major),
/// `b1` (`hidden`), `w2` (`hidden`), `b2` (1).
#[derive(Clone, Debug)]
pub struct Mlp {
    shape: LayerShape,
    inputs: usize,
    hidden: usize,
    shards: Sharded,
}

impl Mlp {
    pub fn new(
        data: Arc<Dataset>,
        hidden: usize,
        workers: usize,
        regularization: f64,
        noise: NoiseModel,
    ) -> Result<Self> {
        if hidden == 0 {
            return Err(Error::param("hidden", "must be positive"));
        }
        let inputs = data.num_features();
        let shape = LayerShape::new(&[hidden * inputs, hidden, hidden, 1])?;
        let shards = Sharded::new(data, workers, regularization, noise, shape.dim())?;
        Ok(Self {
            shape,
            inputs,
            hidden,
            shards,
        })
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    fn row_term(&self, a: &[f64], y: f64, x: &[f64], grad: &mut [f64]) -> f64 {
        let (p, h) = (self.inputs, self.hidden);
        let (w1, rest) = x.split_at(h * p);
        let (b1, rest) = rest.split_at(h);
        let (w2, b2) = rest.split_at(h);
        let act: Vec<f64> = (0..h)
            .map(|k| (dot(&w1[k * p..(k + 1) * p], a) + b1[k]).tanh())
            .collect();
        let z = dot(w2, &act) + b2[0];
        let margin = y * z;
        let dz = y * softplus_neg_slope(margin);

        let (g_w1, rest) = grad.split_at_mut(h * p);
        let (g_b1, rest) = rest.split_at_mut(h);
        let (g_w2, g_b2) = rest.split_at_mut(h);
        g_b2[0] += dz;
        for k in 0..h {
            g_w2[k] += dz * act[k];
            let dh = dz * w2[k] * (1.0 - act[k] * act[k]);
            g_b1[k] += dh;
            for (g, ai) in g_w1[k * p..(k + 1) * p].iter_mut().zip(a) {
                *g += dh * ai;
            }
        }
        softplus_neg(margin)
    }
}

#[derive(Clone, Debug)]
pub enum Problem {
    Quadratic(Quadratic),
    Logistic(Logistic),
    Mlp(Mlp),
}

impl Problem {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Problem::Quadratic(_) => "quadratic",
            Problem::Logistic(_) => "logistic",
            Problem::Mlp(_) => "mlp",
        }
    }

    pub fn shape(&self) -> &LayerShape {
        match self {
            Problem::Quadratic(q) => &q.shape,
            Problem::Logistic(l) => &l.shape,
            Problem::Mlp(m) => &m.shape,
        }
    }

    pub fn num_workers(&self) -> usize {
        match self {
            Problem::Quadratic(q) => q.workers,
            Problem::Logistic(l) => l.shards.partitions.len(),
            Problem::Mlp(m) => m.shards.partitions.len(),
        }
    }

    pub fn noise(&self) -> &NoiseModel {
        match self {
            Problem::Quadratic(q) => &q.noise,
            Problem::Logistic(l) => &l.shards.noise,
            Problem::Mlp(m) => &m.shards.noise,
        }
    }

    /// Copy of the problem with a different noise model.
    pub fn with_noise(&self, noise: NoiseModel) -> Result<Problem> {
        let dim = self.shape().dim();
        Ok(match self {
            Problem::Quadratic(q) => {
                check_noise(&noise, dim, false)?;
                Problem::Quadratic(Quadratic { noise, ..q.clone() })
            }
            Problem::Logistic(l) => {
                check_noise(&noise, dim, true)?;
                let mut l = l.clone();
                l.shards.noise = noise;
                Problem::Logistic(l)
            }
            Problem::Mlp(m) => {
                check_noise(&noise, dim, true)?;
                let mut m = m.clone();
                m.shards.noise = noise;
                Problem::Mlp(m)
            }
        })
    }

    /// Smoothness constant `𝓛` where it is available in closed form (or as a
    /// certified bound); `None` for the MLP.
    pub fn smoothness(&self) -> Option<f64> {
        match self {
            Problem::Quadratic(q) => Some(q.curvature.iter().copied().fold(0.0, f64::max)),
            Problem::Logistic(l) => Some(l.smoothness),
            Problem::Mlp(_) => None,
        }
    }

    /// Known lower bound `f★`.
    pub fn lower_bound(&self) -> Option<f64> {
        match self {
            Problem::Quadratic(q) => {
                let x = q.minimizer()?;
                Some(-0.5 * dot(&x, &q.linear))
            }
            Problem::Logistic(_) | Problem::Mlp(_) => Some(0.0),
        }
    }

    fn check(&self, x: &LayeredVector) -> Result<()> {
        if x.shape() != self.shape() {
            return Err(Error::ShapeMismatch {
                expected: self.shape().dims(),
                found: x.shape().dims(),
            });
        }
        Ok(())
    }

    fn sharded(&self) -> Option<&Sharded> {
        match self {
            Problem::Quadratic(_) => None,
            Problem::Logistic(l) => Some(&l.shards),
            Problem::Mlp(m) => Some(&m.shards),
        }
    }

    // Loss and gradient averaged over the given rows (plus ridge term).
    fn rows_loss_grad<I: Iterator<Item = usize>>(&self, x: &[f64], rows: I, count: usize, grad: &mut [f64]) -> f64 {
        match self {
            Problem::Quadratic(_) => unreachable!("quadratic has no rows"),
            Problem::Logistic(l) => l
                .shards
                .mean_over(x, rows, count, grad, |a, y, g| Logistic::row_term(a, y, x, g)),
            Problem::Mlp(m) => m
                .shards
                .mean_over(x, rows, count, grad, |a, y, g| m.row_term(a, y, x, g)),
        }
    }

    fn local_loss_grad(&self, x: &LayeredVector, worker: usize) -> (f64, LayeredVector) {
        let mut grad = LayeredVector::zeros(self.shape().clone());
        let loss = match self {
            Problem::Quadratic(q) => {
                let mut loss = 0.0;
                for (((g, xi), h), b) in grad
                    .values_mut()
                    .iter_mut()
                    .zip(x.values())
                    .zip(&q.curvature)
                    .zip(&q.linear)
                {
                    *g = h * xi - b;
                    loss += 0.5 * h * xi * xi - b * xi;
                }
                loss
            }
            _ => {
                let part = self.sharded().expect("data problem").partitions[worker].clone();
                let len = part.len();
                self.rows_loss_grad(x.values(), part, len, grad.values_mut())
            }
        };
        (loss, grad)
    }

    /// `∇f_i(x)` for worker `i`.
    pub fn local_gradient(&self, x: &LayeredVector, worker: usize) -> Result<LayeredVector> {
        self.check(x)?;
        if worker >= self.num_workers() {
            return Err(Error::param("worker", format!("{worker} >= {}", self.num_workers())));
        }
        Ok(self.local_loss_grad(x, worker).1)
    }

    /// `f(x) = (1/n) Σ_i f_i(x)`.
    pub fn loss(&self, x: &LayeredVector) -> Result<f64> {
        Ok(self.loss_and_gradient(x)?.0)
    }

    /// Exact `∇f(x)`.
    pub fn full_gradient(&self, x: &LayeredVector) -> Result<LayeredVector> {
        Ok(self.loss_and_gradient(x)?.1)
    }

    pub fn loss_and_gradient(&self, x: &LayeredVector) -> Result<(f64, LayeredVector)> {
        self.check(x)?;
        if let Problem::Quadratic(_) = self {
            // Every worker holds the same function.
            return Ok(self.local_loss_grad(x, 0));
        }
        let n = self.num_workers();
        let mut loss = 0.0;
        let mut grad = LayeredVector::zeros(self.shape().clone());
        for i in 0..n {
            let (l, g) = self.local_loss_grad(x, i);
            loss += l;
            grad.axpy(1.0, &g)?;
        }
        grad.scale(1.0 / n as f64);
        Ok((loss / n as f64, grad))
    }

    /// Unbiased stochastic estimate of `∇f_i(x)` per the noise model.
    pub fn stochastic_gradient(&self, x: &LayeredVector, worker: usize, rng: &mut RngStream) -> Result<LayeredVector> {
        self.check(x)?;
        if worker >= self.num_workers() {
            return Err(Error::param("worker", format!("{worker} >= {}", self.num_workers())));
        }
        match self.noise() {
            NoiseModel::None => Ok(self.local_loss_grad(x, worker).1),
            NoiseModel::Gaussian { variances, batch_size } => {
                let mut g = self.local_loss_grad(x, worker).1;
                let bs = *batch_size as f64;
                for (gi, v) in g.values_mut().iter_mut().zip(variances) {
                    let z: f64 = rng.sample(StandardNormal);
                    *gi += (v / bs).sqrt() * z;
                }
                Ok(g)
            }
            NoiseModel::Minibatch { batch_size } => {
                let part = self.sharded().expect("minibatch noise needs data").partitions[worker].clone();
                if part.is_empty() {
                    return Err(Error::EmptyPartition { worker });
                }
                if *batch_size >= part.len() {
                    return Ok(self.local_loss_grad(x, worker).1);
                }
                let rows: Vec<usize> = (0..*batch_size).map(|_| rng.random_range(part.clone())).collect();
                let mut g = LayeredVector::zeros(self.shape().clone());
                self.rows_loss_grad(x.values(), rows.into_iter(), *batch_size, g.values_mut());
                Ok(g)
            }
        }
    }

    /// `Trace(A Σ)` for the per-worker noise covariance, when it is known.
    pub fn noise_trace(&self, weights: &BlockWeights) -> Option<f64> {
        let diag = self.noise().covariance_diagonal(self.shape().dim())?;
        weights.trace_with_diagonal(&diag).ok()
    }
}
