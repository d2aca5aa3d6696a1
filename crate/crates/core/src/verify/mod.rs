//! Empirical checks of the convergence analysis.
//!
//! Each check produces a [`VerificationReport`] holding the estimate, the
//! analytic target, the standard error and the tolerance rule it was judged
//! by. Monte Carlo draws are addressed by their index, so a report is
//! reproduced bit-for-bit from its seed and sample count.

mod checks;
mod growth;
mod rate;
mod suite;

use std::fmt;

use rayon::prelude::*;

pub use checks::{
    check_assumption5, enumerate_random_k, estimate_omega, gaussian_corpus, lemma2_agreement, trace_comparison_sweep,
    verify_lemma1, verify_lemma2_layerwise_random_k, verify_lemma2_random_k, verify_lemma2_sign,
    verify_lemma2_unbiased, verify_lemma3, verify_trace_comparison, OmegaEstimate, ENUMERATION_LIMIT,
};
pub use growth::{estimate_growth, GrowthEstimate, GrowthProbe};
pub use rate::{fit_rate, DescentNorm, RateFit, RateOptions};
pub use suite::{matches_filter, run_suite, suite_names, SuiteSettings};

use crate::error::Result;
use crate::stats::MeanEstimator;

/// Rule a report's estimate is judged by.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Tolerance {
    /// `|estimate − target| ≤ rel · |target|` (absolute when the target is 0).
    Relative(f64),
    /// `estimate ≤ target + z · SE`.
    UpperSe(f64),
    /// `estimate ≥ target − z · SE`.
    LowerSe(f64),
    /// `|estimate − target| ≤ z · SE`.
    TwoSidedSe(f64),
    /// Pass/fail is decided by the check itself (compound conditions).
    Custom,
}

impl Tolerance {
    pub fn holds(&self, estimate: f64, target: f64, std_error: f64) -> bool {
        match *self {
            Tolerance::Relative(rel) => (estimate - target).abs() <= rel * target.abs().max(f64::MIN_POSITIVE),
            Tolerance::UpperSe(z) => estimate <= target + z * std_error + slack(target),
            Tolerance::LowerSe(z) => estimate >= target - z * std_error - slack(target),
            Tolerance::TwoSidedSe(z) => (estimate - target).abs() <= z * std_error + slack(target),
            Tolerance::Custom => true,
        }
    }
}

/// Rounding allowance for statistical rules whose standard error is zero
/// (deterministic operators).
fn slack(target: f64) -> f64 {
    1e-12 * target.abs()
}

impl fmt::Display for Tolerance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tolerance::Relative(r) => write!(f, "rel<={r:e}"),
            Tolerance::UpperSe(z) => write!(f, "<=target+{z}se"),
            Tolerance::LowerSe(z) => write!(f, ">=target-{z}se"),
            Tolerance::TwoSidedSe(z) => write!(f, "|diff|<={z}se"),
            Tolerance::Custom => write!(f, "see detail"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VerificationReport {
    pub name: String,
    pub estimate: f64,
    pub target: f64,
    pub std_error: f64,
    pub tolerance: Tolerance,
    pub passed: bool,
    pub samples: usize,
    pub seed: u64,
    pub detail: String,
}

impl VerificationReport {
    /// Report judged by `tolerance` on `(estimate, target, std_error)`.
    pub fn judged(
        name: impl Into<String>,
        estimate: f64,
        target: f64,
        std_error: f64,
        tolerance: Tolerance,
        samples: usize,
        seed: u64,
    ) -> Self {
        Self {
            name: name.into(),
            estimate,
            target,
            std_error,
            tolerance,
            passed: tolerance.holds(estimate, target, std_error),
            samples,
            seed,
            detail: String::new(),
        }
    }

    pub fn with_detail(mut self, detail: impl Into<String>) -> Self {
        self.detail = detail.into();
        self
    }

    pub fn renamed(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    /// Fails the report when `ok` is false; never turns a failure into a pass.
    pub fn require(mut self, ok: bool) -> Self {
        self.passed &= ok;
        self
    }
}

/// Evaluates `f(0..draws)` (in parallel) and returns the values in draw order.
pub(crate) fn draw_all<T, F>(draws: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> Result<T> + Sync + Send,
{
    (0..draws as u64).into_par_iter().map(f).collect()
}

/// Like [`monte_carlo`] with a per-thread scratch value.
pub(crate) fn monte_carlo_with<B, I, F>(draws: usize, init: I, f: F) -> Result<MeanEstimator>
where
    I: Fn() -> B + Sync + Send,
    F: Fn(&mut B, u64) -> Result<f64> + Sync + Send,
{
    let values: Vec<f64> = (0..draws as u64)
        .into_par_iter()
        .map_init(init, f)
        .collect::<Result<_>>()?;
    Ok(values.into_iter().collect())
}

/// Mean and standard error of `f` over `draws` indexed draws.
pub(crate) fn monte_carlo<F>(draws: usize, f: F) -> Result<MeanEstimator>
where
    F: Fn(u64) -> Result<f64> + Sync + Send,
{
    Ok(draw_all(draws, f)?.into_iter().collect())
}
