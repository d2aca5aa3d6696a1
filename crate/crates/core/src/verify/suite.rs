//! The default verification suite.
//!
//! Check names are dot-separated paths; a filter selects a name and
//! everything below it, so `lemma2.ii` selects `lemma2.ii.example` and
//! `lemma2.ii.random.3` but not `lemma2.iii`.

use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;

use super::checks::*;
use super::growth::estimate_growth;
use super::rate::{fit_rate, DescentNorm, RateOptions};
use super::{Tolerance, VerificationReport};
use crate::compress::{ApplicationMode, Compressor, CompressorSpec};
use crate::error::Result;
use crate::layered::{BlockWeights, LayerShape, LayeredVector};
use crate::rng::{derive_seed, RngStream, Side, StreamId};
use crate::sim::{descent_ledger, NoiseModel, Problem, Quadratic, Schedule, TrainConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct SuiteSettings {
    pub seed: u64,
    /// Monte Carlo draws per estimate.
    pub draws: usize,
    /// Vectors per inflation corpus.
    pub corpus_size: usize,
    /// Random weight sets in the trace sweep.
    pub trace_draws: usize,
    pub budgets: Vec<usize>,
    pub replications: usize,
    /// `c` in `η = c/√K` for the rate checks.
    pub rate_scale: f64,
}

impl Default for SuiteSettings {
    fn default() -> Self {
        Self {
            seed: 1,
            draws: 100_000,
            corpus_size: 20,
            trace_draws: 1000,
            budgets: vec![256, 1024, 4096],
            replications: 8,
            rate_scale: 0.4,
        }
    }
}

/// `name` is `filter` or lies below it in the dotted hierarchy.
pub fn matches_filter(name: &str, filter: &str) -> bool {
    name == filter || (name.starts_with(filter) && name[filter.len()..].starts_with('.'))
}

type Check = Box<dyn Fn(&SuiteSettings) -> Result<VerificationReport> + Send + Sync>;

fn check<F>(name: impl Into<String>, f: F) -> (String, Check)
where
    F: Fn(&SuiteSettings) -> Result<VerificationReport> + Send + Sync + 'static,
{
    (name.into(), Box::new(f))
}

fn shape(dims: &[usize]) -> LayerShape {
    LayerShape::new(dims).expect("suite shapes are valid")
}

fn gaussian_vectors(dims: &[usize], count: usize, seed: u64) -> Vec<LayeredVector> {
    (0..count)
        .map(|i| {
            let mut rng = RngStream::new(seed, StreamId::new(Side::Probe, i as u64, 1));
            let values = (0..dims.iter().sum()).map(|_| rng.sample(StandardNormal)).collect();
            LayeredVector::new(shape(dims), values).expect("length matches")
        })
        .collect()
}

/// Two-layer diagonal quadratic with eight coordinates.
fn quadratic(workers: usize, variance: f64) -> Problem {
    let h = vec![1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0, 4.0];
    let b = vec![1.0, -2.0, 0.5, 1.5, -1.0, 2.0, -0.5, 1.0];
    let noise = NoiseModel::gaussian(vec![variance; 8], 1).expect("valid noise");
    Problem::Quadratic(Quadratic::new(shape(&[4, 4]), h, b, workers, noise).expect("valid quadratic"))
}

fn layerwise(spec: CompressorSpec) -> Compressor {
    Compressor::layerwise(spec)
}

fn spec(s: &str) -> CompressorSpec {
    s.parse().expect("suite specs are valid")
}

fn template(problem: Problem, worker: Compressor, master: Compressor, seed: u64) -> TrainConfig {
    let init = LayeredVector::filled(problem.shape().clone(), 2.0);
    TrainConfig {
        problem: Arc::new(problem),
        init,
        steps: 1,
        schedule: Schedule::Constant { lr: 0.0 },
        worker,
        master,
        seed,
        metrics_every: 1,
    }
}

fn checks() -> Vec<(String, Check)> {
    let mut all: Vec<(String, Check)> = Vec::new();

    // Inflation constants.
    let corpus_dims = [3, 5, 8];
    for kind in [
        "identity",
        "random_k:0.3",
        "random_k_unbiased:0.3",
        "top_k:0.3",
        "threshold_v:0.5",
    ] {
        for mode in [ApplicationMode::Layerwise, ApplicationMode::EntireModel] {
            let c = Compressor::new(spec(kind), mode);
            all.push(check(
                format!("assumption5.{}.{}", c.spec().kind_name(), mode),
                move |s| {
                    let corpus = gaussian_corpus(&shape(&corpus_dims), s.corpus_size, s.seed);
                    check_assumption5(&c, &corpus, s.draws, s.seed)
                },
            ));
        }
    }
    for kind in ["sign", "adaptive_threshold", "terngrad", "qsgd:4"] {
        let c = layerwise(spec(kind));
        all.push(check(format!("omega.{}", c.spec().kind_name()), move |s| {
            let corpus = gaussian_corpus(&shape(&corpus_dims), s.corpus_size, s.seed);
            let est = estimate_omega(&c, &corpus, s.draws, s.seed)?;
            let (worst, se) = est.worst();
            let mut r = VerificationReport::judged(
                format!("omega.{}", c.spec().kind_name()),
                worst,
                f64::NAN,
                se,
                Tolerance::Custom,
                s.draws,
                s.seed,
            )
            .with_detail("empirical inflation; no declared constant");
            r.passed = worst.is_finite();
            Ok(r)
        }));
    }

    // Layer-wise inflation chain.
    all.push(check("lemma1.identity", |s| {
        let x = &gaussian_vectors(&[2, 4], 1, s.seed)[0];
        Ok(verify_lemma1(&Compressor::identity(), x, s.draws, s.seed)?.renamed("lemma1.identity"))
    }));
    all.push(check("lemma1.random_k_unbiased", |s| {
        let c = layerwise(spec("random_k_unbiased:0.5")).with_override(1, spec("random_k_unbiased:0.25"))?;
        let x = &gaussian_vectors(&[2, 4], 1, s.seed)[0];
        Ok(verify_lemma1(&c, x, s.draws, s.seed)?.renamed("lemma1.random_k_unbiased"))
    }));
    all.push(check("lemma1.single_layer", |s| {
        let x = &gaussian_vectors(&[4], 1, s.seed)[0];
        Ok(
            verify_lemma1(&layerwise(spec("random_k_unbiased:0.5")), x, s.draws, s.seed)?
                .renamed("lemma1.single_layer"),
        )
    }));

    // Descent direction.
    for kind in ["terngrad", "qsgd:4", "random_k_unbiased:0.5"] {
        let c = layerwise(spec(kind));
        all.push(check(format!("lemma2.i.{}", c.spec().kind_name()), move |s| {
            let grads = gaussian_vectors(&[3, 5], 3, s.seed);
            verify_lemma2_unbiased(&grads, &c, &c, s.draws, s.seed)
        }));
    }
    all.push(check("lemma2.ii.example", |_| {
        let g = LayeredVector::new(shape(&[2]), vec![1.0, 2.0])?;
        Ok(verify_lemma2_random_k(&[g], 1, 1)?.renamed("lemma2.ii.example"))
    }));
    for case in 1..=5u64 {
        let name = format!("lemma2.ii.random.{case}");
        all.push(check(name.clone(), move |s| {
            let (grads, kw, km) = random_enumeration_case(derive_seed(s.seed, case));
            Ok(verify_lemma2_random_k(&grads, kw, km)?.renamed(name.clone()))
        }));
    }
    all.push(check("agreement.lemma2.ii", |s| {
        let g = LayeredVector::new(shape(&[2]), vec![1.0, 2.0])?;
        lemma2_agreement(&[g], 1, 1, s.draws, s.seed)
    }));
    all.push(check("agreement.lemma2.ii.random", |s| {
        let (grads, kw, km) = random_enumeration_case(derive_seed(s.seed, 1));
        Ok(lemma2_agreement(&grads, kw, km, s.draws, s.seed)?.renamed("agreement.lemma2.ii.random"))
    }));
    all.push(check("lemma2.iii", |s| {
        let grads = gaussian_vectors(&[2, 4, 2], 2, s.seed);
        verify_lemma2_layerwise_random_k(&grads, &[0.5, 0.25, 1.0], &[1.0, 0.5, 0.5], s.draws, s.seed)
    }));
    all.push(check("lemma2.iii.uncompressed", |s| {
        let grads = gaussian_vectors(&[2, 4, 2], 2, s.seed);
        Ok(
            verify_lemma2_layerwise_random_k(&grads, &[1.0; 3], &[1.0; 3], s.draws, s.seed)?
                .renamed("lemma2.iii.uncompressed"),
        )
    }));
    all.push(check("lemma2.iv", |s| {
        let p = quadratic(4, 16.0);
        let x = LayeredVector::filled(p.shape().clone(), 0.8);
        verify_lemma2_sign(&p, &x, &[16, 256, 4096], s.draws, s.seed)
    }));

    // Second moment of the compressed gradient.
    let lemma3_cases: [(&str, &str, &str, ApplicationMode, f64); 6] = [
        ("identity", "identity", "identity", ApplicationMode::Layerwise, 0.0),
        (
            "random_k_unbiased",
            "random_k_unbiased:0.5",
            "random_k_unbiased:0.5",
            ApplicationMode::Layerwise,
            0.5,
        ),
        (
            "random_k_unbiased.entire_model",
            "random_k_unbiased:0.5",
            "random_k_unbiased:0.25",
            ApplicationMode::EntireModel,
            0.5,
        ),
        (
            "top_k",
            "top_k:0.5",
            "random_k_unbiased:0.5",
            ApplicationMode::Layerwise,
            0.5,
        ),
        (
            "threshold_v",
            "threshold_v:0.5",
            "identity",
            ApplicationMode::Layerwise,
            1.0,
        ),
        (
            "random_k",
            "random_k:0.5",
            "random_k:0.75",
            ApplicationMode::Layerwise,
            0.25,
        ),
    ];
    for (label, w, m, mode, variance) in lemma3_cases {
        let name = format!("lemma3.{label}");
        all.push(check(name.clone(), move |s| {
            let p = quadratic(4, variance);
            let x = &gaussian_vectors(&[4, 4], 1, s.seed)[0];
            let worker = Compressor::new(spec(w), mode);
            let master = Compressor::new(spec(m), mode);
            Ok(verify_lemma3(&p, &worker, &master, x, s.draws, s.seed)?.renamed(name.clone()))
        }));
    }

    // Strong growth.
    all.push(check("growth.deterministic", |s| {
        let p = quadratic(1, 0.0);
        let probes = gaussian_vectors(&[4, 4], 12, s.seed);
        let g = estimate_growth(&p, &BlockWeights::identity(p.shape().clone()), &probes, 10, s.seed)?;
        let mut r = VerificationReport::judged(
            "growth.deterministic",
            g.sigma_sq,
            0.0,
            0.0,
            Tolerance::Custom,
            10,
            s.seed,
        )
        .with_detail(format!("rho={}", g.rho));
        r.passed = g.rho == 1.0 && g.sigma_sq <= 1e-9;
        Ok(r)
    }));
    all.push(check("growth.gaussian", |s| {
        let (g, target) = growth_near_minimum(s, 0.25)?;
        Ok(VerificationReport::judged(
            "growth.gaussian",
            g.sigma_sq,
            target,
            g.max_std_error(),
            Tolerance::TwoSidedSe(3.0),
            s.draws,
            s.seed,
        )
        .with_detail(format!("rho={:.6}", g.rho)))
    }));
    all.push(check("growth.scaling", |s| {
        let (g1, _) = growth_near_minimum(s, 0.25)?;
        let (g2, _) = growth_near_minimum(s, 1.0)?;
        let ratio = g2.sigma_sq / g1.sigma_sq;
        let se = 4.0 * (g2.max_std_error() / g2.sigma_sq + g1.max_std_error() / g1.sigma_sq);
        Ok(VerificationReport::judged(
            "growth.scaling",
            ratio,
            4.0,
            se,
            Tolerance::TwoSidedSe(3.0),
            s.draws,
            s.seed,
        ))
    }));

    // Trace comparison.
    all.push(check("trace.example", |_| {
        Ok(verify_trace_comparison(&[0.0, 3.0], &[0.5, 1.0], &shape(&[1, 1]))?.renamed("trace.example"))
    }));
    all.push(check("trace.equal", |_| {
        let r = verify_trace_comparison(&[1.5; 3], &[0.5; 3], &shape(&[2, 3, 4]))?;
        let equal = r.estimate == r.target;
        Ok(r.renamed("trace.equal").require(equal))
    }));
    all.push(check("trace.random", |s| trace_comparison_sweep(s.trace_draws, s.seed)));

    // Trajectory-level checks.
    all.push(check("prop1", |s| {
        let c = layerwise(spec("random_k_unbiased:0.5"));
        let mut config = template(quadratic(4, 0.5), c.clone(), c, s.seed);
        config.steps = 50;
        config.schedule = Schedule::Constant { lr: 0.05 };
        let l = config.problem.smoothness().expect("quadratic smoothness");
        let draws = (s.draws / 10).max(100);
        let ledger = descent_ledger(&config, l, &[0, 10, 25, 49], draws)?;
        let worst = ledger
            .iter()
            .map(|e| (e.observed_decrease - e.predicted_decrease) / e.std_error)
            .fold(f64::INFINITY, f64::min);
        let mut r = VerificationReport::judged("prop1", worst, -3.0, 1.0, Tolerance::Custom, draws, s.seed)
            .with_detail(format!("checkpoints={} (estimate = min z-score)", ledger.len()));
        r.passed = ledger.iter().all(|e| e.passed);
        Ok(r)
    }));
    all.push(check("prop2.rate", |s| {
        let config = template(
            quadratic(4, 1.0),
            Compressor::identity(),
            Compressor::identity(),
            s.seed,
        );
        let fit = fit_rate(
            &config,
            &RateOptions {
                budgets: s.budgets.clone(),
                replications: s.replications,
                scale: s.rate_scale,
                sqrt_batch: false,
                norm: DescentNorm::L2Squared,
                grad_bound: None,
            },
        )?;
        let below = fit.below_stability_limit(s.rate_scale).unwrap_or(false);
        let mut r = VerificationReport::judged(
            "prop2.rate",
            fit.beta,
            0.3,
            0.0,
            Tolerance::Custom,
            s.replications,
            s.seed,
        )
        .with_detail(format!(
            "averages={:?} stability_limit={:?}",
            fit.averages, fit.stability_limit
        ));
        r.passed = fit.consistent() && fit.strictly_decreasing && below;
        Ok(r)
    }));
    all.push(check("prop3.sign", |s| {
        let sign = layerwise(CompressorSpec::Sign);
        let config = template(quadratic(4, 1.0), sign.clone(), sign, s.seed);
        let fit = fit_rate(
            &config,
            &RateOptions {
                budgets: s.budgets.clone(),
                replications: s.replications,
                scale: s.rate_scale,
                sqrt_batch: true,
                norm: DescentNorm::L1,
                grad_bound: None,
            },
        )?;
        let mut r = VerificationReport::judged(
            "prop3.sign",
            fit.beta,
            0.0,
            0.0,
            Tolerance::Custom,
            s.replications,
            s.seed,
        )
        .with_detail(format!("l1_averages={:?}", fit.averages));
        r.passed = fit.non_increasing && fit.diverged.is_empty();
        Ok(r)
    }));

    all
}

/// Random small enumeration setup: `d ≤ 6`, one or two workers.
pub(crate) fn random_enumeration_case(seed: u64) -> (Vec<LayeredVector>, usize, usize) {
    let mut rng = RngStream::new(seed, StreamId::new(Side::Probe, 0, 0));
    let d = rng.random_range(2..=6);
    let n = rng.random_range(1..=2);
    let kw = rng.random_range(1..=d);
    let km = rng.random_range(1..=d);
    let grads = (0..n)
        .map(|_| {
            let v = (0..d).map(|_| rng.sample(StandardNormal)).collect();
            LayeredVector::new(shape(&[d]), v).expect("length matches")
        })
        .collect();
    (grads, kw, km)
}

/// Growth envelope on probes within distance 0.5 of the quadratic's
/// minimiser, where `Trace(AΣ) = 8 s²` dominates.
fn growth_near_minimum(s: &SuiteSettings, variance: f64) -> Result<(super::GrowthEstimate, f64)> {
    let p = quadratic(1, variance);
    let Problem::Quadratic(q) = &p else { unreachable!() };
    let xstar = q.minimizer().expect("curved quadratic");
    let probes: Vec<LayeredVector> = gaussian_vectors(&[4, 4], 12, s.seed)
        .into_iter()
        .map(|mut x| {
            let n = x.norm_l2_sq().sqrt();
            for (xi, m) in x.values_mut().iter_mut().zip(&xstar) {
                *xi = m + 0.5 * *xi / n;
            }
            x
        })
        .collect();
    let a = BlockWeights::identity(p.shape().clone());
    let g = estimate_growth(&p, &a, &probes, s.draws, s.seed)?;
    Ok((g, 8.0 * variance))
}

/// Runs every check whose name matches `filter` (all when `None`), in suite
/// order.
pub fn run_suite(settings: &SuiteSettings, filter: Option<&str>) -> Result<Vec<VerificationReport>> {
    checks()
        .into_iter()
        .filter(|(name, _)| filter.is_none_or(|f| matches_filter(name, f)))
        .map(|(name, f)| Ok(f(settings)?.renamed(name)))
        .collect()
}

/// Names of all checks in the default suite.
pub fn suite_names() -> Vec<String> {
    checks().into_iter().map(|(n, _)| n).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn filter_semantics() {
        assert!(matches_filter("lemma2.ii.example", "lemma2.ii"));
        assert!(matches_filter("lemma2.ii", "lemma2.ii"));
        assert!(!matches_filter("lemma2.iii", "lemma2.ii"));
        assert!(!matches_filter("agreement.lemma2.ii", "lemma2.ii"));
        let names = suite_names();
        assert!(names.len() >= 12);
        let selected: Vec<_> = names.iter().filter(|n| matches_filter(n, "lemma2.ii")).collect();
        assert_eq!(selected.len(), 6);
        let mut sorted = names.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), names.len(), "check names are unique");
    }

    #[test]
    fn quick_suite_passes() {
        let settings = SuiteSettings {
            draws: 20_000,
            corpus_size: 5,
            trace_draws: 200,
            budgets: vec![64, 256, 1024],
            replications: 4,
            ..SuiteSettings::default()
        };
        let reports = run_suite(&settings, None).unwrap();
        let failed: Vec<_> = reports.iter().filter(|r| !r.passed).collect();
        assert!(failed.is_empty(), "{failed:#?}");
    }
}
