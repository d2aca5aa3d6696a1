use super::monte_carlo;
use crate::error::{Error, Result};
use crate::layered::{BlockWeights, LayeredVector};
use crate::rng::derive_seed;
use crate::rng::RngStream;
use crate::sim::{gradient_stream, Problem};
use crate::stats::linear_fit;

#[derive(Clone, Debug, PartialEq)]
pub struct GrowthProbe {
    /// `‖∇f_i(x)‖²_A`.
    pub grad_sq: f64,
    /// Monte Carlo `E‖g_i(x)‖²_A`.
    pub mean_sq: f64,
    pub std_error: f64,
}

/// Envelope `E‖g‖²_A ≤ ρ̂ ‖∇f‖²_A + σ̂²` valid at every probe point.
#[derive(Clone, Debug, PartialEq)]
pub struct GrowthEstimate {
    pub rho: f64,
    pub sigma_sq: f64,
    pub probes: Vec<GrowthProbe>,
    /// Probes dropped because both gradient and noise vanish there.
    pub skipped: usize,
}

impl GrowthEstimate {
    /// Largest standard error among the probes.
    pub fn max_std_error(&self) -> f64 {
        self.probes.iter().map(|p| p.std_error).fold(0.0, f64::max)
    }
}

/// Fits the strong-growth envelope for worker 0's stochastic gradient.
///
/// `ρ̂` is the least-squares slope of `E‖g‖²_A` on `‖∇f‖²_A`, floored at 1
/// (an unbiased estimator never has less energy than its mean), and `σ̂²` is
/// the smallest offset that makes the envelope hold at every probe.
pub fn estimate_growth(
    problem: &Problem,
    weights: &BlockWeights,
    probes: &[LayeredVector],
    draws: usize,
    seed: u64,
) -> Result<GrowthEstimate> {
    if probes.len() < 10 {
        return Err(Error::param(
            "probes",
            format!("at least 10 probe points are needed, got {}", probes.len()),
        ));
    }
    let mut fitted = Vec::with_capacity(probes.len());
    let mut skipped = 0;
    for (p, x) in probes.iter().enumerate() {
        let grad_sq = problem.local_gradient(x, 0)?.weighted_norm_sq(weights)?;
        let s = derive_seed(seed, p as u64);
        let est = monte_carlo(draws, |r| {
            let mut rng = RngStream::new(s, gradient_stream(0, r));
            problem.stochastic_gradient(x, 0, &mut rng)?.weighted_norm_sq(weights)
        })?;
        if grad_sq == 0.0 && est.mean() == 0.0 {
            skipped += 1;
            continue;
        }
        fitted.push(GrowthProbe {
            grad_sq,
            mean_sq: est.mean(),
            std_error: est.std_error(),
        });
    }
    if fitted.is_empty() {
        return Err(Error::param("probes", "every probe has zero gradient and zero noise"));
    }
    let xs: Vec<f64> = fitted.iter().map(|p| p.grad_sq).collect();
    let ys: Vec<f64> = fitted.iter().map(|p| p.mean_sq).collect();
    let spread =
        xs.iter().copied().fold(f64::NEG_INFINITY, f64::max) - xs.iter().copied().fold(f64::INFINITY, f64::min);
    let rho = if spread > 0.0 {
        linear_fit(&xs, &ys).1.max(1.0)
    } else {
        1.0
    };
    let sigma_sq = fitted.iter().map(|p| p.mean_sq - rho * p.grad_sq).fold(0.0, f64::max);
    Ok(GrowthEstimate {
        rho,
        sigma_sq,
        probes: fitted,
        skipped,
    })
}
