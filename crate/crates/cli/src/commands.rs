use std::io::Write;
use std::path::{Path, PathBuf};

use gradsq_core::rng::derive_seed;
use gradsq_core::sim::{paired_run, run, Trajectory};
use gradsq_core::verify::{run_suite, VerificationReport};
use gradsq_core::{ApplicationMode, Error};

use crate::config::{ConfigError, ExperimentConfig};
use crate::metrics::{self, float, write_atomic};
use crate::plot;

pub const EXIT_OK: u8 = 0;
pub const EXIT_CHECK_FAILED: u8 = 1;
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_NUMERIC: u8 = 3;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Usage(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Core(#[from] Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(Error::NonFinite { .. }) => EXIT_NUMERIC,
            _ => EXIT_USAGE,
        }
    }
}

pub type CliResult = Result<u8, CliError>;

fn load(config: &Path, seed: Option<u64>) -> Result<ExperimentConfig, CliError> {
    let mut c = ExperimentConfig::from_path(config)?;
    if let Some(s) = seed {
        c.run.seed = s;
        c.verify.seed = s;
    }
    Ok(c)
}

pub const REPORT_HEADER: [&str; 9] = [
    "name",
    "estimate",
    "target",
    "std_error",
    "tolerance",
    "passed",
    "samples",
    "seed",
    "detail",
];

pub fn reports_to_bytes(reports: &[VerificationReport]) -> Vec<u8> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(REPORT_HEADER).expect("writing to memory");
    for r in reports {
        w.write_record([
            r.name.clone(),
            float(r.estimate),
            float(r.target),
            float(r.std_error),
            r.tolerance.to_string(),
            r.passed.to_string(),
            r.samples.to_string(),
            r.seed.to_string(),
            r.detail.clone(),
        ])
        .expect("writing to memory");
    }
    w.into_inner().expect("flushing to memory")
}

/// Runs the verification suite (optionally filtered) and writes one report row
/// per check. Exit 0 iff every check passes.
pub fn cmd_verify(config: &Path, filter: Option<&str>, out: Option<&Path>, seed: Option<u64>) -> CliResult {
    let c = load(config, seed)?;
    let reports = run_suite(&c.verify, filter)?;
    if reports.is_empty() {
        return Err(CliError::Usage(format!(
            "no check matches filter `{}`",
            filter.unwrap_or("")
        )));
    }
    let bytes = reports_to_bytes(&reports);
    match out {
        Some(path) => write_atomic(path, &bytes)?,
        None => std::io::stdout().write_all(&bytes)?,
    }
    let failed: Vec<&str> = reports.iter().filter(|r| !r.passed).map(|r| r.name.as_str()).collect();
    eprintln!("{} checks, {} failed", reports.len(), failed.len());
    for name in &failed {
        eprintln!("FAILED {name}");
    }
    Ok(if failed.is_empty() { EXIT_OK } else { EXIT_CHECK_FAILED })
}

fn metrics_bytes(result: &Result<Trajectory, Error>, mode: ApplicationMode, seed: u64) -> Option<Vec<u8>> {
    match result {
        Ok(t) => Some(metrics::to_bytes(t, mode, seed, None)),
        Err(Error::NonFinite { step, partial }) => Some(metrics::to_bytes(partial, mode, seed, Some(*step))),
        Err(_) => None,
    }
}

/// Runs one training trajectory and writes its metrics CSV. A non-finite
/// abort still writes the recorded rows and exits 3.
pub fn cmd_train(config: &Path, out: &Path, seed: Option<u64>) -> CliResult {
    let c = load(config, seed)?;
    let tc = c.train_config()?;
    let result = run(&tc);
    let bytes = metrics_bytes(&result, tc.worker.mode(), tc.seed);
    match (result, bytes) {
        (Ok(_), Some(b)) => {
            write_atomic(out, &b)?;
            Ok(EXIT_OK)
        }
        (Err(Error::NonFinite { step, .. }), Some(b)) => {
            write_atomic(out, &b)?;
            eprintln!("aborted: non-finite value at step {step}");
            Ok(EXIT_NUMERIC)
        }
        (Err(e), _) => Err(e.into()),
        (Ok(_), None) => unreachable!("successful runs always serialise"),
    }
}

#[derive(Default)]
struct ModeTotals {
    final_loss: f64,
    final_grad_norm_sq: f64,
    mean_grad_norm_sq: f64,
    steps_to_threshold: Option<f64>,
    reached: usize,
    bits_up: f64,
    bits_down: f64,
}

impl ModeTotals {
    fn add(&mut self, t: &Trajectory, threshold: f64) {
        let last = t.last();
        self.final_loss += last.loss;
        self.final_grad_norm_sq += last.grad_norm_sq;
        self.mean_grad_norm_sq += t.mean_grad_norm_sq;
        self.bits_up += last.bits_up as f64;
        self.bits_down += last.bits_down as f64;
        if let Some(k) = t.steps_to_threshold(threshold) {
            *self.steps_to_threshold.get_or_insert(0.0) += k as f64;
            self.reached += 1;
        }
    }

    fn rows(&self, reps: usize) -> Vec<(&'static str, Option<f64>)> {
        let n = reps as f64;
        vec![
            ("final_loss", Some(self.final_loss / n)),
            ("final_grad_norm_sq", Some(self.final_grad_norm_sq / n)),
            ("mean_grad_norm_sq", Some(self.mean_grad_norm_sq / n)),
            (
                "steps_to_threshold",
                self.steps_to_threshold.filter(|_| self.reached == reps).map(|s| s / n),
            ),
            ("bits_up", Some(self.bits_up / n)),
            ("bits_down", Some(self.bits_down / n)),
            ("total_bits", Some((self.bits_up + self.bits_down) / n)),
        ]
    }
}

fn ratio(a: Option<f64>, b: Option<f64>) -> String {
    match (a, b) {
        (Some(x), Some(y)) if x == y || x.to_bits() == y.to_bits() => float(1.0),
        (Some(x), Some(y)) => float(x / y),
        (None, None) => float(1.0),
        _ => String::new(),
    }
}

pub fn summary_bytes(layerwise: &[(&str, Option<f64>)], entire: &[(&str, Option<f64>)]) -> Vec<u8> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(["metric", "layerwise", "entire_model", "ratio"])
        .expect("writing to memory");
    for ((name, a), (_, b)) in layerwise.iter().zip(entire) {
        w.write_record([
            name.to_string(),
            a.map(float).unwrap_or_default(),
            b.map(float).unwrap_or_default(),
            ratio(*a, *b),
        ])
        .expect("writing to memory");
    }
    w.into_inner().expect("flushing to memory")
}

/// Paired layer-wise / entire-model runs. Writes both metrics files for the
/// configured seed and a summary averaged over `[run] replications` seeds
/// (ratio = layerwise / entire_model).
pub fn cmd_compare(config: &Path, out_dir: &Path, seed: Option<u64>) -> CliResult {
    let c = load(config, seed)?;
    let base = c.train_config()?;
    std::fs::create_dir_all(out_dir)?;
    let reps = c.run.replications;
    let (mut lw, mut em) = (ModeTotals::default(), ModeTotals::default());
    for r in 0..reps {
        let mut tc = base.clone();
        if r > 0 {
            tc.seed = derive_seed(base.seed, r as u64);
        }
        match paired_run(&tc) {
            Ok((a, b)) => {
                if r == 0 {
                    write_atomic(
                        &out_dir.join("layerwise.csv"),
                        &metrics::to_bytes(&a, ApplicationMode::Layerwise, tc.seed, None),
                    )?;
                    write_atomic(
                        &out_dir.join("entire_model.csv"),
                        &metrics::to_bytes(&b, ApplicationMode::EntireModel, tc.seed, None),
                    )?;
                }
                lw.add(&a, c.run.grad_threshold);
                em.add(&b, c.run.grad_threshold);
            }
            Err(Error::NonFinite { step, partial }) => {
                eprintln!("aborted: non-finite value at step {step} (seed {})", tc.seed);
                let (name, mode) = match run(&tc.with_mode(ApplicationMode::Layerwise)?) {
                    Err(_) => ("layerwise.csv", ApplicationMode::Layerwise),
                    Ok(_) => ("entire_model.csv", ApplicationMode::EntireModel),
                };
                write_atomic(
                    &out_dir.join(name),
                    &metrics::to_bytes(&partial, mode, tc.seed, Some(step)),
                )?;
                return Ok(EXIT_NUMERIC);
            }
            Err(e) => return Err(e.into()),
        }
    }
    write_atomic(
        &out_dir.join("summary.csv"),
        &summary_bytes(&lw.rows(reps), &em.rows(reps)),
    )?;
    Ok(EXIT_OK)
}

/// Plots `grad_norm_sq` of each metrics file into one SVG.
pub fn cmd_plot(out: &Path, inputs: &[PathBuf]) -> CliResult {
    if inputs.is_empty() {
        return Err(CliError::Usage("plot needs at least one CSV file".into()));
    }
    let mut series = Vec::with_capacity(inputs.len());
    for path in inputs {
        let s = metrics::read_series(path).map_err(CliError::Usage)?;
        let name = path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        series.push((name, s));
    }
    write_atomic(out, plot::render(&series).as_bytes())?;
    Ok(EXIT_OK)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ratios() {
        assert_eq!(ratio(Some(2.0), Some(2.0)), float(1.0));
        assert_eq!(ratio(Some(0.0), Some(0.0)), float(1.0));
        assert_eq!(ratio(Some(1.0), Some(4.0)), float(0.25));
        assert_eq!(ratio(None, None), float(1.0));
        assert_eq!(ratio(Some(1.0), None), "");
    }
}
