use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng::derive_seed;
use crate::sim::{run, Schedule, TrainConfig};
use crate::stats::linear_fit;

/// Which gradient norm the Cesàro average is taken over.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DescentNorm {
    /// `‖∇f‖²` (α = 2).
    L2Squared,
    /// `‖∇f‖₁` (α = 1).
    L1,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RateOptions {
    pub budgets: Vec<usize>,
    pub replications: usize,
    /// `c` in `η = c / √K`.
    pub scale: f64,
    /// Use batch size `⌈√K⌉` at budget `K`.
    pub sqrt_batch: bool,
    pub norm: DescentNorm,
    /// Runs whose gradient norm ever exceeds this are flagged.
    pub grad_bound: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RateFit {
    pub budgets: Vec<usize>,
    /// Cesàro average per budget, mean over the finite replications.
    pub averages: Vec<f64>,
    /// Fitted exponent in `average ∝ K^{−β}`.
    pub beta: f64,
    pub non_increasing: bool,
    pub strictly_decreasing: bool,
    /// `(budget, replication)` of runs that hit a non-finite value.
    pub diverged: Vec<(usize, usize)>,
    /// `(budget, replication)` of runs exceeding the gradient bound.
    pub flagged: Vec<(usize, usize)>,
    /// `2 / (𝓛 C ρ)` with `C = max_j A_j` and `ρ = 1`, when all are known.
    pub stability_limit: Option<f64>,
}

impl RateFit {
    /// Averages non-increasing in `K`, `β ≥ 0.3` and no divergent run.
    pub fn consistent(&self) -> bool {
        self.non_increasing && self.beta >= 0.3 && self.diverged.is_empty()
    }

    pub fn below_stability_limit(&self, scale: f64) -> Option<bool> {
        self.stability_limit.map(|l| scale < l)
    }
}

/// Runs `template` at each budget with `η = c/√K` over `replications` seeds
/// derived from the template seed and fits the decay exponent.
pub fn fit_rate(template: &TrainConfig, options: &RateOptions) -> Result<RateFit> {
    let budgets = &options.budgets;
    if budgets.len() < 3 || budgets.windows(2).any(|w| w[1] <= w[0]) || budgets[0] == 0 {
        return Err(Error::param(
            "budgets",
            "need at least three strictly increasing positive budgets",
        ));
    }
    if options.replications == 0 {
        return Err(Error::param("replications", "must be positive"));
    }
    let shape = template.problem.shape();
    let stability_limit = match (
        template.problem.smoothness(),
        template.worker.weights(shape),
        template.master.weights(shape),
    ) {
        (Some(l), Some(ww), Some(wm)) => Some(2.0 / (l * wm.product(&ww)?.max_weight())),
        _ => None,
    };

    let jobs: Vec<(usize, usize)> = (0..budgets.len())
        .flat_map(|b| (0..options.replications).map(move |r| (b, r)))
        .collect();
    let outcomes: Vec<Option<(f64, f64)>> = jobs
        .par_iter()
        .map(|&(b, r)| -> Result<Option<(f64, f64)>> {
            let k = budgets[b];
            let mut config = template.clone();
            config.steps = k;
            config.metrics_every = k;
            config.schedule = Schedule::InvSqrtBudget { scale: options.scale };
            config.seed = derive_seed(template.seed, r as u64);
            if options.sqrt_batch {
                let bs = (k as f64).sqrt().ceil() as usize;
                let noise = template.problem.noise().with_batch_size(bs);
                config.problem = Arc::new(template.problem.with_noise(noise)?);
            }
            match run(&config) {
                Ok(t) => {
                    let avg = match options.norm {
                        DescentNorm::L2Squared => t.mean_grad_norm_sq,
                        DescentNorm::L1 => t.mean_grad_norm_l1,
                    };
                    Ok(Some((avg, t.max_grad_norm)))
                }
                Err(Error::NonFinite { .. }) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<_>>()?;

    let mut sums = vec![(0.0, 0usize); budgets.len()];
    let mut diverged = Vec::new();
    let mut flagged = Vec::new();
    for (&(b, r), outcome) in jobs.iter().zip(&outcomes) {
        match outcome {
            Some((avg, max_norm)) => {
                sums[b].0 += avg;
                sums[b].1 += 1;
                if options.grad_bound.is_some_and(|g| *max_norm > g) {
                    flagged.push((budgets[b], r));
                }
            }
            None => diverged.push((budgets[b], r)),
        }
    }
    let averages: Vec<f64> = sums
        .iter()
        .map(|(s, n)| if *n == 0 { f64::NAN } else { s / *n as f64 })
        .collect();
    let xs: Vec<f64> = budgets.iter().map(|k| (*k as f64).ln()).collect();
    let ys: Vec<f64> = averages.iter().map(|a| a.ln()).collect();
    let beta = -linear_fit(&xs, &ys).1;
    Ok(RateFit {
        budgets: budgets.clone(),
        non_increasing: averages.windows(2).all(|w| w[1] <= w[0]),
        strictly_decreasing: averages.windows(2).all(|w| w[1] < w[0]),
        averages,
        beta,
        diverged,
        flagged,
        stability_limit,
    })
}
