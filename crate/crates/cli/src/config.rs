//! Experiment configuration files.
//!
//! The format is a flat, sectioned key-value document:
//!
//! ```text
//! # comment
//! [section]
//! key = value
//! ```
//!
//! Lists are comma separated. Every key is documented in `configs/README.md`;
//! unknown sections and keys are rejected. [`ExperimentConfig::emit`] writes
//! the canonical form, which parses back to the same configuration and emits
//! the same bytes.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use gradsq_core::compress::{ApplicationMode, Compressor, CompressorSpec};
use gradsq_core::sim::{random_init, Dataset, Logistic, Mlp, NoiseModel, Problem, Quadratic, Schedule, TrainConfig};
use gradsq_core::verify::SuiteSettings;
use gradsq_core::{LayerShape, LayeredVector};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub message: String,
}

impl ConfigError {
    fn at(line: usize, message: impl Into<String>) -> Self {
        Self {
            line: Some(line),
            message: message.into(),
        }
    }

    fn general(message: impl Into<String>) -> Self {
        Self {
            line: None,
            message: message.into(),
        }
    }
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "line {l}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

type Result<T> = std::result::Result<T, ConfigError>;

const SECTIONS: [&str; 7] = [
    "problem",
    "workers",
    "compressor.worker",
    "compressor.master",
    "schedule",
    "run",
    "verify",
];

struct Section {
    name: String,
    line: usize,
    entries: BTreeMap<String, (String, usize)>,
}

impl Section {
    fn take(&mut self, key: &str) -> Option<(String, usize)> {
        self.entries.remove(key)
    }

    fn take_parsed<T: FromStr>(&mut self, key: &str) -> Result<Option<T>>
    where
        T::Err: fmt::Display,
    {
        match self.take(key) {
            None => Ok(None),
            Some((v, line)) => v
                .parse()
                .map(Some)
                .map_err(|e| ConfigError::at(line, format!("{}.{key}: invalid value `{v}`: {e}", self.name))),
        }
    }

    fn require<T: FromStr>(&mut self, key: &str) -> Result<T>
    where
        T::Err: fmt::Display,
    {
        let line = self.line;
        let name = self.name.clone();
        self.take_parsed(key)?
            .ok_or_else(|| ConfigError::at(line, format!("[{name}] is missing required key `{key}`")))
    }

    fn take_list<T: FromStr>(&mut self, key: &str) -> Result<Option<Vec<T>>>
    where
        T::Err: fmt::Display,
    {
        match self.take(key) {
            None => Ok(None),
            Some((v, line)) => v
                .split(',')
                .map(|item| {
                    let item = item.trim();
                    item.parse().map_err(|e| {
                        ConfigError::at(line, format!("{}.{key}: invalid list item `{item}`: {e}", self.name))
                    })
                })
                .collect::<Result<Vec<T>>>()
                .map(Some),
        }
    }

    fn finish(self) -> Result<()> {
        match self.entries.into_iter().min_by_key(|(_, (_, line))| *line) {
            Some((key, (_, line))) => Err(ConfigError::at(line, format!("unknown key `{key}` in [{}]", self.name))),
            None => Ok(()),
        }
    }
}

fn split_sections(text: &str) -> Result<BTreeMap<String, Section>> {
    let mut sections: BTreeMap<String, Section> = BTreeMap::new();
    let mut current: Option<String> = None;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') || trimmed.starts_with(';') {
            continue;
        }
        if let Some(rest) = trimmed.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .ok_or_else(|| ConfigError::at(line, format!("malformed section header `{trimmed}`")))?
                .trim()
                .to_string();
            if !SECTIONS.contains(&name.as_str()) {
                return Err(ConfigError::at(line, format!("unknown section [{name}]")));
            }
            if sections.contains_key(&name) {
                return Err(ConfigError::at(line, format!("duplicate section [{name}]")));
            }
            sections.insert(
                name.clone(),
                Section {
                    name: name.clone(),
                    line,
                    entries: BTreeMap::new(),
                },
            );
            current = Some(name);
            continue;
        }
        let (key, value) = trimmed
            .split_once('=')
            .ok_or_else(|| ConfigError::at(line, format!("expected `key = value`, found `{trimmed}`")))?;
        let (key, value) = (key.trim(), value.trim());
        let section = current
            .as_ref()
            .and_then(|c| sections.get_mut(c))
            .ok_or_else(|| ConfigError::at(line, format!("key `{key}` appears before any section header")))?;
        if key.is_empty() {
            return Err(ConfigError::at(line, "empty key"));
        }
        if section
            .entries
            .insert(key.to_string(), (value.to_string(), line))
            .is_some()
        {
            return Err(ConfigError::at(
                line,
                format!("duplicate key `{key}` in [{}]", section.name),
            ));
        }
    }
    Ok(sections)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProblemKind {
    Quadratic,
    Logistic,
    Mlp,
}

impl FromStr for ProblemKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "quadratic" => Ok(Self::Quadratic),
            "logistic" => Ok(Self::Logistic),
            "mlp" => Ok(Self::Mlp),
            _ => Err("expected quadratic, logistic or mlp".into()),
        }
    }
}

impl fmt::Display for ProblemKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Quadratic => "quadratic",
            Self::Logistic => "logistic",
            Self::Mlp => "mlp",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NoiseKind {
    None,
    Gaussian,
    Minibatch,
}

impl FromStr for NoiseKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "none" => Ok(Self::None),
            "gaussian" => Ok(Self::Gaussian),
            "minibatch" => Ok(Self::Minibatch),
            _ => Err("expected none, gaussian or minibatch".into()),
        }
    }
}

impl fmt::Display for NoiseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::None => "none",
            Self::Gaussian => "gaussian",
            Self::Minibatch => "minibatch",
        })
    }
}

/// Starting point: a constant fill or `N(0, scale²)` coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    Constant(f64),
    Random(f64),
}

impl FromStr for Init {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.strip_prefix("random:") {
            Some(scale) => scale.trim().parse().map(Init::Random).map_err(|e| format!("{e}")),
            None => s.parse().map(Init::Constant).map_err(|e| format!("{e}")),
        }
    }
}

impl fmt::Display for Init {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Init::Constant(v) => write!(f, "{v}"),
            Init::Random(s) => write!(f, "random:{s}"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum DataSource {
    Csv(PathBuf),
    Synthetic {
        samples: usize,
        feature_scales: Vec<f64>,
        separation: f64,
        data_seed: u64,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProblemConfig {
    pub kind: ProblemKind,
    /// Layer sizes (quadratic, logistic); derived from `hidden` for the MLP.
    pub layers: Vec<usize>,
    pub curvature: Vec<f64>,
    pub linear: Vec<f64>,
    pub regularization: f64,
    pub hidden: usize,
    pub data: Option<DataSource>,
    pub noise: NoiseKind,
    pub noise_variance: Vec<f64>,
    pub batch_size: usize,
    pub smoothness: Option<f64>,
    pub init: Init,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompressorConfig {
    pub spec: CompressorSpec,
    pub mode: ApplicationMode,
    pub overrides: BTreeMap<usize, CompressorSpec>,
}

impl CompressorConfig {
    pub fn identity() -> Self {
        Self {
            spec: CompressorSpec::Identity,
            mode: ApplicationMode::Layerwise,
            overrides: BTreeMap::new(),
        }
    }

    pub fn build(&self) -> gradsq_core::Result<Compressor> {
        let mut c = Compressor::new(self.spec, self.mode);
        for (j, s) in &self.overrides {
            c = c.with_override(*j, *s)?;
        }
        Ok(c)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub steps: usize,
    pub seed: u64,
    pub metrics_every: usize,
    pub replications: usize,
    /// `‖∇f‖²` level for the steps-to-threshold summary.
    pub grad_threshold: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            steps: 100,
            seed: 0,
            metrics_every: 1,
            replications: 1,
            grad_threshold: 1e-6,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub problem: Option<ProblemConfig>,
    pub workers: usize,
    pub worker: CompressorConfig,
    pub master: CompressorConfig,
    pub schedule: Schedule,
    pub run: RunConfig,
    pub verify: SuiteSettings,
    /// Directory relative data paths are resolved against.
    pub base_dir: PathBuf,
}

fn positive(value: usize, key: &str, line: usize) -> Result<usize> {
    if value == 0 {
        Err(ConfigError::at(line, format!("{key} must be positive")))
    } else {
        Ok(value)
    }
}

fn broadcast(values: Vec<f64>, d: usize, key: &str, line: usize) -> Result<Vec<f64>> {
    match values.len() {
        1 => Ok(vec![values[0]; d]),
        n if n == d => Ok(values),
        n => Err(ConfigError::at(
            line,
            format!("problem.{key}: expected 1 or {d} values, found {n}"),
        )),
    }
}

impl ExperimentConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::general(format!("cannot read {}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, &base)
    }

    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let mut sections = split_sections(text)?;
        let mut take = |name: &str| {
            sections.remove(name).unwrap_or(Section {
                name: name.to_string(),
                line: 0,
                entries: BTreeMap::new(),
            })
        };

        let mut workers = take("workers");
        let workers_line = workers.line;
        let worker_count = positive(
            workers.take_parsed("count")?.unwrap_or(1),
            "workers.count",
            workers_line,
        )?;
        workers.finish()?;

        let problem_section = take("problem");
        let problem = if problem_section.line == 0 {
            None
        } else {
            Some(parse_problem(problem_section)?)
        };

        let worker = parse_compressor(take("compressor.worker"))?;
        let master = parse_compressor(take("compressor.master"))?;
        let schedule = parse_schedule(take("schedule"))?;

        let mut run = take("run");
        let defaults = RunConfig::default();
        let run_line = run.line;
        let run_config = RunConfig {
            steps: positive(
                run.take_parsed("steps")?.unwrap_or(defaults.steps),
                "run.steps",
                run_line,
            )?,
            seed: run.take_parsed("seed")?.unwrap_or(defaults.seed),
            metrics_every: positive(
                run.take_parsed("metrics_every")?.unwrap_or(defaults.metrics_every),
                "run.metrics_every",
                run_line,
            )?,
            replications: positive(
                run.take_parsed("replications")?.unwrap_or(defaults.replications),
                "run.replications",
                run_line,
            )?,
            grad_threshold: run.take_parsed("grad_threshold")?.unwrap_or(defaults.grad_threshold),
        };
        run.finish()?;

        let mut verify = take("verify");
        let d = SuiteSettings::default();
        let vline = verify.line;
        let settings = SuiteSettings {
            seed: verify.take_parsed("seed")?.unwrap_or(d.seed),
            draws: positive(verify.take_parsed("draws")?.unwrap_or(d.draws), "verify.draws", vline)?,
            corpus_size: positive(
                verify.take_parsed("corpus_size")?.unwrap_or(d.corpus_size),
                "verify.corpus_size",
                vline,
            )?,
            trace_draws: positive(
                verify.take_parsed("trace_draws")?.unwrap_or(d.trace_draws),
                "verify.trace_draws",
                vline,
            )?,
            budgets: verify.take_list("budgets")?.unwrap_or(d.budgets),
            replications: positive(
                verify.take_parsed("replications")?.unwrap_or(d.replications),
                "verify.replications",
                vline,
            )?,
            rate_scale: verify.take_parsed("rate_scale")?.unwrap_or(d.rate_scale),
        };
        if settings.budgets.len() < 3 || settings.budgets.windows(2).any(|w| w[1] <= w[0]) {
            return Err(ConfigError::at(
                vline,
                "verify.budgets must list at least three increasing budgets",
            ));
        }
        verify.finish()?;

        let config = Self {
            problem,
            workers: worker_count,
            worker,
            master,
            schedule,
            run: run_config,
            verify: settings,
            base_dir: base_dir.to_path_buf(),
        };
        if let Some(p) = &config.problem {
            let shape = LayerShape::new(&p.layers).map_err(|e| ConfigError::general(e.to_string()))?;
            for (name, c) in [
                ("compressor.worker", &config.worker),
                ("compressor.master", &config.master),
            ] {
                c.build()
                    .and_then(|c| c.validate(&shape))
                    .map_err(|e| ConfigError::general(format!("[{name}]: {e}")))?;
            }
        }
        Ok(config)
    }

    /// Canonical text form.
    pub fn emit(&self) -> String {
        let mut out = String::new();
        let list = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", ");
        if let Some(p) = &self.problem {
            out.push_str("[problem]\n");
            let _ = writeln!(out, "kind = {}", p.kind);
            match p.kind {
                ProblemKind::Quadratic => {
                    let _ = writeln!(out, "layers = {}", join(&p.layers));
                    let _ = writeln!(out, "curvature = {}", list(&p.curvature));
                    let _ = writeln!(out, "linear = {}", list(&p.linear));
                }
                ProblemKind::Logistic | ProblemKind::Mlp => {
                    if p.kind == ProblemKind::Logistic {
                        let _ = writeln!(out, "layers = {}", join(&p.layers));
                    } else {
                        let _ = writeln!(out, "hidden = {}", p.hidden);
                    }
                    let _ = writeln!(out, "regularization = {}", p.regularization);
                    match p.data.as_ref().expect("data problems carry a source") {
                        DataSource::Csv(path) => {
                            let _ = writeln!(out, "data = {}", path.display());
                            if p.kind == ProblemKind::Mlp {
                                let _ = writeln!(out, "inputs = {}", p.layers[0] / p.hidden);
                            }
                        }
                        DataSource::Synthetic {
                            samples,
                            feature_scales,
                            separation,
                            data_seed,
                        } => {
                            let _ = writeln!(out, "data = synthetic");
                            let _ = writeln!(out, "samples = {samples}");
                            let _ = writeln!(out, "feature_scales = {}", list(feature_scales));
                            let _ = writeln!(out, "separation = {separation}");
                            let _ = writeln!(out, "data_seed = {data_seed}");
                        }
                    }
                }
            }
            let _ = writeln!(out, "noise = {}", p.noise);
            if p.noise == NoiseKind::Gaussian {
                let _ = writeln!(out, "noise_variance = {}", list(&p.noise_variance));
            }
            if p.noise != NoiseKind::None {
                let _ = writeln!(out, "batch_size = {}", p.batch_size);
            }
            if let Some(l) = p.smoothness {
                let _ = writeln!(out, "smoothness = {l}");
            }
            let _ = writeln!(out, "init = {}", p.init);
            out.push('\n');
        }
        let _ = writeln!(out, "[workers]\ncount = {}\n", self.workers);
        for (name, c) in [("worker", &self.worker), ("master", &self.master)] {
            let _ = writeln!(out, "[compressor.{name}]\nkind = {}\nmode = {}", c.spec, c.mode);
            for (j, s) in &c.overrides {
                let _ = writeln!(out, "override.{j} = {s}");
            }
            out.push('\n');
        }
        out.push_str("[schedule]\n");
        match &self.schedule {
            Schedule::Constant { lr } => {
                let _ = writeln!(out, "kind = constant\nlr = {lr}");
            }
            Schedule::InvSqrtBudget { scale } => {
                let _ = writeln!(out, "kind = inv_sqrt_budget\nscale = {scale}");
            }
            Schedule::PiecewiseLinear { breakpoints } => {
                let points: Vec<String> = breakpoints.iter().map(|(t, r)| format!("{t}:{r}")).collect();
                let _ = writeln!(out, "kind = piecewise_linear\nbreakpoints = {}", points.join(", "));
            }
        }
        let r = &self.run;
        let _ = writeln!(
            out,
            "\n[run]\nsteps = {}\nseed = {}\nmetrics_every = {}\nreplications = {}\ngrad_threshold = {}",
            r.steps, r.seed, r.metrics_every, r.replications, r.grad_threshold
        );
        let v = &self.verify;
        let _ = writeln!(
            out,
            "\n[verify]\nseed = {}\ndraws = {}\ncorpus_size = {}\ntrace_draws = {}\nbudgets = {}\nreplications = {}\nrate_scale = {}",
            v.seed,
            v.draws,
            v.corpus_size,
            v.trace_draws,
            join(&v.budgets),
            v.replications,
            v.rate_scale
        );
        out
    }

    pub fn problem_config(&self) -> Result<&ProblemConfig> {
        self.problem
            .as_ref()
            .ok_or_else(|| ConfigError::general("this command needs a [problem] section"))
    }

    /// Builds the problem (loading or generating its data).
    pub fn build_problem(&self) -> Result<Problem> {
        let p = self.problem_config()?;
        let shape = LayerShape::new(&p.layers).map_err(|e| ConfigError::general(e.to_string()))?;
        let d = shape.dim();
        let noise = match p.noise {
            NoiseKind::None => NoiseModel::None,
            NoiseKind::Gaussian => NoiseModel::gaussian(p.noise_variance.clone(), p.batch_size)
                .map_err(|e| ConfigError::general(e.to_string()))?,
            NoiseKind::Minibatch => NoiseModel::Minibatch {
                batch_size: p.batch_size,
            },
        };
        let built = match p.kind {
            ProblemKind::Quadratic => Quadratic::new(shape, p.curvature.clone(), p.linear.clone(), self.workers, noise)
                .map(Problem::Quadratic),
            ProblemKind::Logistic => {
                let data = self.load_data(p)?;
                Logistic::new(shape, data, self.workers, p.regularization, noise).map(Problem::Logistic)
            }
            ProblemKind::Mlp => {
                let data = self.load_data(p)?;
                Mlp::new(data, p.hidden, self.workers, p.regularization, noise).map(Problem::Mlp)
            }
        };
        let problem = built.map_err(|e| ConfigError::general(format!("[problem]: {e}")))?;
        if problem.shape().dim() != d {
            return Err(ConfigError::general("[problem]: layer sizes do not match the model"));
        }
        Ok(problem)
    }

    fn load_data(&self, p: &ProblemConfig) -> Result<Arc<Dataset>> {
        let data = match p.data.as_ref().expect("data problems carry a source") {
            DataSource::Csv(path) => {
                let path = if path.is_absolute() {
                    path.clone()
                } else {
                    self.base_dir.join(path)
                };
                Dataset::from_csv(&path)
            }
            DataSource::Synthetic {
                samples,
                feature_scales,
                separation,
                data_seed,
            } => Dataset::two_class(*samples, feature_scales, *separation, *data_seed),
        };
        data.map(Arc::new)
            .map_err(|e| ConfigError::general(format!("[problem] data: {e}")))
    }

    /// Smoothness used by the simulator diagnostics: the configured override,
    /// else the problem's own constant.
    pub fn smoothness(&self, problem: &Problem) -> Option<f64> {
        self.problem
            .as_ref()
            .and_then(|p| p.smoothness)
            .or_else(|| problem.smoothness())
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let problem = self.build_problem()?;
        let p = self.problem_config()?;
        let init = match p.init {
            Init::Constant(v) => LayeredVector::filled(problem.shape().clone(), v),
            Init::Random(scale) => random_init(problem.shape().clone(), scale, self.run.seed),
        };
        let general = |e: gradsq_core::Error| ConfigError::general(e.to_string());
        let config = TrainConfig {
            problem: Arc::new(problem),
            init,
            steps: self.run.steps,
            schedule: self.schedule.clone(),
            worker: self.worker.build().map_err(general)?,
            master: self.master.build().map_err(general)?,
            seed: self.run.seed,
            metrics_every: self.run.metrics_every,
        };
        config.validate().map_err(general)?;
        Ok(config)
    }
}

fn join(v: &[usize]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", ")
}

fn parse_problem(mut s: Section) -> Result<ProblemConfig> {
    let kind: ProblemKind = s.require("kind")?;
    let line = s.line;
    let mut data = None;
    let (mut curvature, mut linear) = (Vec::new(), Vec::new());
    let (mut regularization, mut hidden) = (1e-3, 0);
    let layers: Vec<usize> = match kind {
        ProblemKind::Quadratic => {
            let layers: Vec<usize> = s
                .take_list("layers")?
                .ok_or_else(|| ConfigError::at(line, "problem.layers is required"))?;
            let d = layers.iter().sum();
            curvature = broadcast(
                s.take_list("curvature")?.unwrap_or_else(|| vec![1.0]),
                d,
                "curvature",
                line,
            )?;
            linear = broadcast(s.take_list("linear")?.unwrap_or_else(|| vec![0.0]), d, "linear", line)?;
            layers
        }
        ProblemKind::Logistic | ProblemKind::Mlp => {
            regularization = s.take_parsed("regularization")?.unwrap_or(1e-3);
            let (source, sline) = s
                .take("data")
                .ok_or_else(|| ConfigError::at(line, "problem.data is required (a CSV path or `synthetic`)"))?;
            let source = if source == "synthetic" {
                let feature_scales: Vec<f64> = s
                    .take_list("feature_scales")?
                    .ok_or_else(|| ConfigError::at(sline, "synthetic data needs problem.feature_scales"))?;
                DataSource::Synthetic {
                    samples: s.require("samples")?,
                    feature_scales,
                    separation: s.take_parsed("separation")?.unwrap_or(1.0),
                    data_seed: s.take_parsed("data_seed")?.unwrap_or(0),
                }
            } else {
                DataSource::Csv(PathBuf::from(source))
            };
            let features = match &source {
                DataSource::Synthetic { feature_scales, .. } => Some(feature_scales.len()),
                DataSource::Csv(_) => None,
            };
            let layers = if kind == ProblemKind::Logistic {
                match s.take_list("layers")? {
                    Some(l) => l,
                    None => {
                        vec![features.ok_or_else(|| ConfigError::at(line, "problem.layers is required for CSV data"))?]
                    }
                }
            } else {
                hidden = positive(s.require("hidden")?, "problem.hidden", line)?;
                let p = features.ok_or_else(|| ConfigError::at(line, "mlp with CSV data needs problem.inputs"));
                let p = match p {
                    Ok(p) => p,
                    Err(e) => s.take_parsed("inputs")?.ok_or(e)?,
                };
                vec![hidden * p, hidden, hidden, 1]
            };
            data = Some(source);
            layers
        }
    };
    let d: usize = layers.iter().sum();
    let noise: NoiseKind = s.take_parsed("noise")?.unwrap_or(NoiseKind::None);
    let noise_variance = match (noise, s.take_list("noise_variance")?) {
        (NoiseKind::Gaussian, Some(v)) => broadcast(v, d, "noise_variance", line)?,
        (NoiseKind::Gaussian, None) => {
            return Err(ConfigError::at(line, "gaussian noise needs problem.noise_variance"))
        }
        (_, Some(_)) => {
            return Err(ConfigError::at(
                line,
                "problem.noise_variance only applies to gaussian noise",
            ))
        }
        (_, None) => Vec::new(),
    };
    let batch_size = match s.take_parsed::<usize>("batch_size")? {
        Some(_) if noise == NoiseKind::None => {
            return Err(ConfigError::at(line, "problem.batch_size needs a noise model"));
        }
        Some(b) => positive(b, "problem.batch_size", line)?,
        None => 1,
    };
    let smoothness = s.take_parsed("smoothness")?;
    let default_init = if kind == ProblemKind::Mlp {
        Init::Random(0.5)
    } else {
        Init::Constant(0.0)
    };
    let init = s.take_parsed("init")?.unwrap_or(default_init);
    s.finish()?;
    Ok(ProblemConfig {
        kind,
        layers,
        curvature,
        linear,
        regularization,
        hidden,
        data,
        noise,
        noise_variance,
        batch_size,
        smoothness,
        init,
    })
}

fn parse_compressor(mut s: Section) -> Result<CompressorConfig> {
    let spec = s.take_parsed("kind")?.unwrap_or(CompressorSpec::Identity);
    let mode = s.take_parsed("mode")?.unwrap_or(ApplicationMode::Layerwise);
    let mut overrides = BTreeMap::new();
    let keys: Vec<String> = s
        .entries
        .keys()
        .filter(|k| k.starts_with("override."))
        .cloned()
        .collect();
    for key in keys {
        let (value, line) = s.take(&key).expect("key listed above");
        let layer: usize = key["override.".len()..]
            .parse()
            .map_err(|_| ConfigError::at(line, format!("`{key}`: layer index must be a non-negative integer")))?;
        let spec: CompressorSpec = value
            .parse()
            .map_err(|e| ConfigError::at(line, format!("{}.{key}: {e}", s.name)))?;
        overrides.insert(layer, spec);
    }
    if mode == ApplicationMode::EntireModel && !overrides.is_empty() {
        return Err(ConfigError::at(
            s.line,
            format!("[{}]: layer overrides need mode = layerwise", s.name),
        ));
    }
    s.finish()?;
    Ok(CompressorConfig { spec, mode, overrides })
}

fn parse_schedule(mut s: Section) -> Result<Schedule> {
    let line = s.line;
    let kind: String = s.take_parsed("kind")?.unwrap_or_else(|| "constant".into());
    let schedule = match kind.as_str() {
        "constant" => Schedule::Constant {
            lr: s.take_parsed("lr")?.unwrap_or(0.1),
        },
        "inv_sqrt_budget" => Schedule::InvSqrtBudget {
            scale: s.require("scale")?,
        },
        "piecewise_linear" => {
            let points: Vec<String> = s
                .take_list("breakpoints")?
                .ok_or_else(|| ConfigError::at(line, "schedule.breakpoints is required"))?;
            let breakpoints = points
                .iter()
                .map(|p| {
                    let (t, r) = p
                        .split_once(':')
                        .ok_or_else(|| ConfigError::at(line, format!("breakpoint `{p}` is not fraction:rate")))?;
                    let parse = |v: &str| {
                        v.trim()
                            .parse::<f64>()
                            .map_err(|e| ConfigError::at(line, format!("breakpoint `{p}`: {e}")))
                    };
                    Ok((parse(t)?, parse(r)?))
                })
                .collect::<Result<Vec<_>>>()?;
            Schedule::PiecewiseLinear { breakpoints }
        }
        other => {
            return Err(ConfigError::at(
                line,
                format!("schedule.kind `{other}`: expected constant, inv_sqrt_budget or piecewise_linear"),
            ))
        }
    };
    schedule.validate().map_err(|e| ConfigError::at(line, e.to_string()))?;
    s.finish()?;
    Ok(schedule)
}
