//! Metrics CSV: writing trajectories and reading them back for plotting.

use std::io::Write;
use std::path::Path;

use gradsq_core::compress::ApplicationMode;
use gradsq_core::sim::Trajectory;

pub const HEADER: [&str; 9] = [
    "step",
    "loss",
    "grad_norm_sq",
    "compress_err_sq",
    "lr",
    "bits_up",
    "bits_down",
    "mode",
    "seed",
];

/// 17 significant digits.
pub fn float(v: f64) -> String {
    format!("{v:.16e}")
}

/// Serialises the recorded rows; an aborted run gets a trailing
/// `# aborted at step k` line.
pub fn to_bytes(trajectory: &Trajectory, mode: ApplicationMode, seed: u64, aborted_at: Option<usize>) -> Vec<u8> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(HEADER).expect("writing to memory");
    for r in &trajectory.records {
        w.write_record([
            r.step.to_string(),
            float(r.loss),
            float(r.grad_norm_sq),
            r.compress_err_sq.map(float).unwrap_or_default(),
            float(r.lr),
            r.bits_up.to_string(),
            r.bits_down.to_string(),
            mode.as_str().to_string(),
            seed.to_string(),
        ])
        .expect("writing to memory");
    }
    let mut bytes = w.into_inner().expect("flushing to memory");
    if let Some(k) = aborted_at {
        let _ = writeln!(bytes, "# aborted at step {k}");
    }
    bytes
}

/// Writes `bytes` through a temporary file in the target directory and renames
/// it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.flush()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

/// One parsed metrics file: `(step, grad_norm_sq, loss)` rows.
#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub steps: Vec<f64>,
    pub grad_norm_sq: Vec<f64>,
    pub loss: Vec<f64>,
}

pub fn read_series(path: &Path) -> Result<Series, String> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| format!("{}: {e}", path.display()))?;
    let headers = reader
        .headers()
        .map_err(|e| format!("{}: {e}", path.display()))?
        .clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| format!("{}: missing column `{name}`", path.display()))
    };
    let (step, grad, loss) = (column("step")?, column("grad_norm_sq")?, column("loss")?);
    let mut series = Series {
        steps: Vec::new(),
        grad_norm_sq: Vec::new(),
        loss: Vec::new(),
    };
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| format!("{}: {e}", path.display()))?;
        let field = |c: usize| -> Result<f64, String> {
            record
                .get(c)
                .and_then(|v| v.parse::<f64>().ok())
                .ok_or_else(|| format!("{}: row {} is malformed", path.display(), i + 2))
        };
        series.steps.push(field(step)?);
        series.grad_norm_sq.push(field(grad)?);
        series.loss.push(field(loss)?);
    }
    if series.steps.is_empty() {
        return Err(format!("{}: no data rows", path.display()));
    }
    Ok(series)
}
