//! Compression operators and how they are applied to a model.
//!
//! A [`CompressorSpec`] names one operator and its parameters. A
//! [`Compressor`] pairs a spec with an [`ApplicationMode`]: layer-wise
//! application runs the operator independently on every layer slice (counts,
//! thresholds, scalars and norms are all computed per layer), entire-model
//! application runs it once on the concatenated vector.

pub mod ops;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

pub use ops::{
    adaptive_threshold, keep_subset, keep_subset_into, kept_count, qsgd, random_k, random_k_unbiased, sign_op,
    terngrad, threshold_v, top_k,
};

use crate::error::{Error, Result};
use crate::layered::{BlockWeights, LayerShape, LayeredVector};
use crate::rng::{RngStream, Side, StreamId, ENTIRE_MODEL_LAYER};

/// Default fraction for [`CompressorSpec::AdaptiveThreshold`].
pub const DEFAULT_ADAPTIVE_FRACTION: f64 = 0.01;

/// Bits used for one transmitted real value.
pub const VALUE_BITS: u64 = 64;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum CompressorSpec {
    Identity,
    /// Biased Random k, `ratio ∈ (0, 1]`.
    RandomK {
        ratio: f64,
    },
    /// Random k rescaled by `len / m`.
    RandomKUnbiased {
        ratio: f64,
    },
    TopK {
        ratio: f64,
    },
    ThresholdV {
        threshold: f64,
    },
    AdaptiveThreshold {
        fraction: f64,
    },
    TernGrad,
    Qsgd {
        levels: u32,
    },
    Sign,
}

impl CompressorSpec {
    pub fn random_k(ratio: f64) -> Result<Self> {
        Self::RandomK { ratio }.validated()
    }

    pub fn random_k_unbiased(ratio: f64) -> Result<Self> {
        Self::RandomKUnbiased { ratio }.validated()
    }

    pub fn top_k(ratio: f64) -> Result<Self> {
        Self::TopK { ratio }.validated()
    }

    pub fn threshold_v(threshold: f64) -> Result<Self> {
        Self::ThresholdV { threshold }.validated()
    }

    pub fn adaptive_threshold(fraction: f64) -> Result<Self> {
        Self::AdaptiveThreshold { fraction }.validated()
    }

    pub fn qsgd(levels: u32) -> Result<Self> {
        Self::Qsgd { levels }.validated()
    }

    pub fn validated(self) -> Result<Self> {
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Self::RandomK { ratio } | Self::RandomKUnbiased { ratio } | Self::TopK { ratio } => {
                if !(ratio > 0.0 && ratio <= 1.0) {
                    return Err(Error::param("ratio", format!("{ratio} is outside (0, 1]")));
                }
            }
            Self::ThresholdV { threshold } => {
                if !(threshold > 0.0 && threshold.is_finite()) {
                    return Err(Error::param("threshold", format!("{threshold} is not positive")));
                }
            }
            Self::AdaptiveThreshold { fraction } => {
                if !(fraction > 0.0 && fraction <= 1.0) {
                    return Err(Error::param("fraction", format!("{fraction} is outside (0, 1]")));
                }
            }
            Self::Qsgd { levels } => {
                if levels == 0 {
                    return Err(Error::param("levels", "must be at least 1"));
                }
            }
            Self::Identity | Self::TernGrad | Self::Sign => {}
        }
        Ok(())
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Self::Identity => "identity",
            Self::RandomK { .. } => "random_k",
            Self::RandomKUnbiased { .. } => "random_k_unbiased",
            Self::TopK { .. } => "top_k",
            Self::ThresholdV { .. } => "threshold_v",
            Self::AdaptiveThreshold { .. } => "adaptive_threshold",
            Self::TernGrad => "terngrad",
            Self::Qsgd { .. } => "qsgd",
            Self::Sign => "sign",
        }
    }

    /// Numeric parameter, if the kind has one.
    pub fn param(&self) -> Option<f64> {
        match *self {
            Self::RandomK { ratio } | Self::RandomKUnbiased { ratio } | Self::TopK { ratio } => Some(ratio),
            Self::ThresholdV { threshold } => Some(threshold),
            Self::AdaptiveThreshold { fraction } => Some(fraction),
            Self::Qsgd { levels } => Some(levels as f64),
            Self::Identity | Self::TernGrad | Self::Sign => None,
        }
    }

    /// Analytic inflation constant `Ω` with `E‖Q(x)‖² ≤ (1+Ω)‖x‖²` for a
    /// slice of length `len`, where one is declared.
    pub fn omega(&self, len: usize) -> Option<f64> {
        match *self {
            Self::Identity | Self::TopK { .. } | Self::RandomK { .. } | Self::ThresholdV { .. } => Some(0.0),
            Self::RandomKUnbiased { ratio } => Some(len as f64 / kept_count(len, ratio) as f64 - 1.0),
            Self::AdaptiveThreshold { .. } | Self::TernGrad | Self::Qsgd { .. } | Self::Sign => None,
        }
    }

    pub fn is_deterministic(&self) -> bool {
        !matches!(
            self,
            Self::RandomK { .. } | Self::RandomKUnbiased { .. } | Self::TernGrad | Self::Qsgd { .. }
        )
    }

    /// `E[Q(x)] = x` for every `x`.
    pub fn is_unbiased(&self) -> bool {
        matches!(
            self,
            Self::Identity | Self::RandomKUnbiased { .. } | Self::TernGrad | Self::Qsgd { .. }
        )
    }

    /// Elementwise operators give the same output whatever slice they see.
    pub fn is_elementwise(&self) -> bool {
        matches!(self, Self::Identity | Self::ThresholdV { .. } | Self::Sign)
    }

    /// Applies the operator to `x`, writing into `out` (same length).
    pub fn compress_into(&self, x: &[f64], out: &mut [f64], rng: &mut RngStream) -> Result<()> {
        debug_assert_eq!(x.len(), out.len());
        match *self {
            Self::Identity => out.copy_from_slice(x),
            Self::RandomK { ratio } => ops::random_k_into(x, ratio, false, rng, out)?,
            Self::RandomKUnbiased { ratio } => ops::random_k_into(x, ratio, true, rng, out)?,
            Self::TopK { ratio } => ops::top_k_into(x, ratio, out)?,
            Self::ThresholdV { threshold } => ops::threshold_into(x, threshold, out),
            Self::AdaptiveThreshold { fraction } => ops::adaptive_threshold_into(x, fraction, out),
            Self::TernGrad => ops::terngrad_into(x, rng, out),
            Self::Qsgd { levels } => ops::qsgd_into(x, levels, rng, out),
            Self::Sign => ops::sign_into(x, out),
        }
        Ok(())
    }

    pub fn compress(&self, x: &[f64], rng: &mut RngStream) -> Result<Vec<f64>> {
        let mut out = vec![0.0; x.len()];
        self.compress_into(x, &mut out, rng)?;
        Ok(out)
    }
}

/// Idealised wire size of a compressed slice of length `len`, indices
/// addressed in a space of `index_space` coordinates.
///
/// Sparse operators send `nnz · (⌈log2 index_space⌉ + 64)`, sign one bit per
/// coordinate, TernGrad two bits per coordinate plus one scalar, QSGD
/// `⌈log2(2s+1)⌉` bits per coordinate plus the norm, identity 64 per value.
pub fn payload_bits(spec: &CompressorSpec, compressed: &[f64], index_space: usize) -> u64 {
    let len = compressed.len() as u64;
    match *spec {
        CompressorSpec::Identity => VALUE_BITS * len,
        CompressorSpec::RandomK { .. }
        | CompressorSpec::RandomKUnbiased { .. }
        | CompressorSpec::TopK { .. }
        | CompressorSpec::ThresholdV { .. }
        | CompressorSpec::AdaptiveThreshold { .. } => {
            let nnz = compressed.iter().filter(|v| **v != 0.0).count() as u64;
            nnz * (ceil_log2(index_space as u64) + VALUE_BITS)
        }
        CompressorSpec::Sign => len,
        CompressorSpec::TernGrad => len * ceil_log2(3) + VALUE_BITS,
        CompressorSpec::Qsgd { levels } => len * ceil_log2(2 * levels as u64 + 1) + VALUE_BITS,
    }
}

fn ceil_log2(n: u64) -> u64 {
    if n <= 1 {
        0
    } else {
        (64 - (n - 1).leading_zeros()) as u64
    }
}

impl fmt::Display for CompressorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Qsgd { levels } => write!(f, "qsgd:{levels}"),
            other => match other.param() {
                Some(p) => write!(f, "{}:{}", other.kind_name(), p),
                None => f.write_str(other.kind_name()),
            },
        }
    }
}

impl FromStr for CompressorSpec {
    type Err = Error;

    /// Parses `kind` or `kind:param`, e.g. `top_k:0.1`, `qsgd:256`.
    fn from_str(s: &str) -> Result<Self> {
        let (kind, param) = match s.split_once(':') {
            Some((k, p)) => (k.trim(), Some(p.trim())),
            None => (s.trim(), None),
        };
        let number = |name: &'static str| -> Result<f64> {
            let p = param.ok_or_else(|| Error::param(name, format!("`{kind}` requires a parameter")))?;
            p.parse::<f64>()
                .map_err(|_| Error::param(name, format!("`{p}` is not a number")))
        };
        let spec = match kind {
            "identity" => CompressorSpec::Identity,
            "random_k" => CompressorSpec::RandomK {
                ratio: number("ratio")?,
            },
            "random_k_unbiased" => CompressorSpec::RandomKUnbiased {
                ratio: number("ratio")?,
            },
            "top_k" => CompressorSpec::TopK {
                ratio: number("ratio")?,
            },
            "threshold_v" => CompressorSpec::ThresholdV {
                threshold: number("threshold")?,
            },
            "adaptive_threshold" => CompressorSpec::AdaptiveThreshold {
                fraction: if param.is_some() {
                    number("fraction")?
                } else {
                    DEFAULT_ADAPTIVE_FRACTION
                },
            },
            "terngrad" => CompressorSpec::TernGrad,
            "sign" => CompressorSpec::Sign,
            "qsgd" => {
                let p = param.ok_or_else(|| Error::param("levels", "`qsgd` requires a level count"))?;
                let levels = p
                    .parse::<u32>()
                    .map_err(|_| Error::param("levels", format!("`{p}` is not a positive integer")))?;
                CompressorSpec::Qsgd { levels }
            }
            other => return Err(Error::param("kind", format!("unknown compressor `{other}`"))),
        };
        if param.is_some() && spec.param().is_none() {
            return Err(Error::param("kind", format!("`{kind}` takes no parameter")));
        }
        spec.validated()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ApplicationMode {
    Layerwise,
    EntireModel,
}

impl ApplicationMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Layerwise => "layerwise",
            Self::EntireModel => "entire_model",
        }
    }
}

impl fmt::Display for ApplicationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ApplicationMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "layerwise" => Ok(Self::Layerwise),
            "entire_model" => Ok(Self::EntireModel),
            other => Err(Error::param("mode", format!("unknown mode `{other}`"))),
        }
    }
}

/// An operator bound to an application strategy, optionally with per-layer
/// replacements (layer-wise mode only).
#[derive(Clone, Debug, PartialEq)]
pub struct Compressor {
    spec: CompressorSpec,
    mode: ApplicationMode,
    overrides: BTreeMap<usize, CompressorSpec>,
}

impl Compressor {
    pub fn new(spec: CompressorSpec, mode: ApplicationMode) -> Self {
        Self {
            spec,
            mode,
            overrides: BTreeMap::new(),
        }
    }

    pub fn layerwise(spec: CompressorSpec) -> Self {
        Self::new(spec, ApplicationMode::Layerwise)
    }

    pub fn entire_model(spec: CompressorSpec) -> Self {
        Self::new(spec, ApplicationMode::EntireModel)
    }

    pub fn identity() -> Self {
        Self::layerwise(CompressorSpec::Identity)
    }

    pub fn with_override(mut self, layer: usize, spec: CompressorSpec) -> Result<Self> {
        if self.mode == ApplicationMode::EntireModel {
            return Err(Error::OverrideInEntireMode);
        }
        spec.validate()?;
        self.overrides.insert(layer, spec);
        Ok(self)
    }

    /// Same operator and overrides under a different mode.
    pub fn with_mode(&self, mode: ApplicationMode) -> Result<Self> {
        if mode == ApplicationMode::EntireModel && !self.overrides.is_empty() {
            return Err(Error::OverrideInEntireMode);
        }
        Ok(Self { mode, ..self.clone() })
    }

    pub fn spec(&self) -> &CompressorSpec {
        &self.spec
    }

    pub fn mode(&self) -> ApplicationMode {
        self.mode
    }

    pub fn overrides(&self) -> &BTreeMap<usize, CompressorSpec> {
        &self.overrides
    }

    pub fn spec_for_layer(&self, layer: usize) -> &CompressorSpec {
        self.overrides.get(&layer).unwrap_or(&self.spec)
    }

    fn specs(&self) -> impl Iterator<Item = &CompressorSpec> {
        std::iter::once(&self.spec).chain(self.overrides.values())
    }

    pub fn is_deterministic(&self) -> bool {
        self.specs().all(|s| s.is_deterministic())
    }

    pub fn is_unbiased(&self) -> bool {
        self.specs().all(|s| s.is_unbiased())
    }

    pub fn validate(&self, shape: &LayerShape) -> Result<()> {
        self.spec.validate()?;
        if let Some((&index, _)) = self.overrides.iter().find(|(&j, _)| j >= shape.num_layers()) {
            return Err(Error::InvalidOverride {
                index,
                layers: shape.num_layers(),
            });
        }
        Ok(())
    }

    /// Applies the compressor. Layer `j` draws from `id.with_layer(j)`; the
    /// entire-model application draws from the entire-model layer id.
    pub fn apply(&self, x: &LayeredVector, seed: u64, id: StreamId) -> Result<LayeredVector> {
        let mut out = LayeredVector::zeros(x.shape().clone());
        self.apply_into(x, &mut out, seed, id)?;
        Ok(out)
    }

    pub fn apply_into(&self, x: &LayeredVector, out: &mut LayeredVector, seed: u64, id: StreamId) -> Result<()> {
        self.validate(x.shape())?;
        x.same_shape(out)?;
        match self.mode {
            ApplicationMode::EntireModel => {
                let mut rng = RngStream::new(seed, id.with_layer(ENTIRE_MODEL_LAYER));
                self.spec.compress_into(x.values(), out.values_mut(), &mut rng)
            }
            ApplicationMode::Layerwise => {
                for j in 0..x.shape().num_layers() {
                    let mut rng = RngStream::new(seed, id.with_layer(j as u64));
                    self.spec_for_layer(j)
                        .compress_into(x.layer(j), out.layer_mut(j), &mut rng)?;
                }
                Ok(())
            }
        }
    }

    /// Per-layer `Ω_j` as seen by the convergence bounds: the layer's own
    /// constant in layer-wise mode, the whole-model constant repeated in
    /// entire-model mode.
    pub fn layer_omegas(&self, shape: &LayerShape) -> Option<Vec<f64>> {
        match self.mode {
            ApplicationMode::EntireModel => {
                let o = self.spec.omega(shape.dim())?;
                Some(vec![o; shape.num_layers()])
            }
            ApplicationMode::Layerwise => (0..shape.num_layers())
                .map(|j| self.spec_for_layer(j).omega(shape.layer_dim(j)))
                .collect(),
        }
    }

    /// `W = diag((1 + Ω_j) I_j)`.
    pub fn weights(&self, shape: &LayerShape) -> Option<BlockWeights> {
        let omegas = self.layer_omegas(shape)?;
        BlockWeights::from_omegas(shape.clone(), &omegas).ok()
    }

    /// Single constant bounding the whole operator: `max_j Ω_j`.
    pub fn declared_omega(&self, shape: &LayerShape) -> Option<f64> {
        self.layer_omegas(shape).map(|o| o.into_iter().fold(0.0, f64::max))
    }

    /// Wire size of an output of this compressor. Indices address the whole
    /// model in both modes, so mode-invariant operators cost the same bits;
    /// layer-wise scaled quantizers pay one scalar per layer.
    pub fn payload_bits(&self, compressed: &LayeredVector) -> u64 {
        let d = compressed.len();
        if self.mode == ApplicationMode::EntireModel {
            return payload_bits(&self.spec, compressed.values(), d);
        }
        (0..compressed.shape().num_layers())
            .map(|j| payload_bits(self.spec_for_layer(j), compressed.layer(j), d))
            .sum()
    }
}

impl fmt::Display for Compressor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} ({})", self.spec, self.mode)?;
        for (j, s) in &self.overrides {
            write!(f, " layer{j}={s}")?;
        }
        Ok(())
    }
}

/// Result of one worker → master → worker exchange.
#[derive(Clone, Debug)]
pub struct Round {
    /// `g̃ = Q_M((1/n) Σ_i Q_W(g_i))`.
    pub aggregate: LayeredVector,
    pub bits_up: u64,
    pub bits_down: u64,
}

/// Stream identity of worker `worker`'s compression at `step`.
pub fn worker_stream(worker: usize, step: u64) -> StreamId {
    StreamId::new(Side::Worker, worker as u64, step)
}

/// Stream identity of the master's compression at `step`.
pub fn master_stream(step: u64) -> StreamId {
    StreamId::new(Side::Master, 0, step)
}

/// Mean of equally shaped vectors, summed in slice order.
pub fn average(vectors: &[LayeredVector]) -> Result<LayeredVector> {
    let first = vectors
        .first()
        .ok_or(Error::param("workers", "at least one vector is required"))?;
    let mut sum = LayeredVector::zeros(first.shape().clone());
    for v in vectors {
        sum.axpy(1.0, v)?;
    }
    sum.scale(1.0 / vectors.len() as f64);
    Ok(sum)
}

/// Master half of a round: averages the worker messages (ascending worker id)
/// and compresses the result.
pub fn master_round(
    compressed: &[LayeredVector],
    master: &Compressor,
    seed: u64,
    step: u64,
) -> Result<(LayeredVector, u64)> {
    let avg = average(compressed)?;
    let out = master.apply(&avg, seed, master_stream(step))?;
    let bits = master.payload_bits(&out);
    Ok((out, bits))
}

/// One bidirectional compression round over the given worker gradients.
pub fn bidirectional_round(
    worker_grads: &[LayeredVector],
    worker: &Compressor,
    master: &Compressor,
    seed: u64,
    step: u64,
) -> Result<Round> {
    let mut bits_up = 0;
    let mut compressed = Vec::with_capacity(worker_grads.len());
    for (i, g) in worker_grads.iter().enumerate() {
        let q = worker.apply(g, seed, worker_stream(i, step))?;
        bits_up += worker.payload_bits(&q);
        compressed.push(q);
    }
    let (aggregate, bits_down) = master_round(&compressed, master, seed, step)?;
    Ok(Round {
        aggregate,
        bits_up,
        bits_down,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::MeanEstimator;
    use proptest::prelude::*;

    fn lv(layers: &[&[f64]]) -> LayeredVector {
        LayeredVector::from_layers(layers).unwrap()
    }

    fn id(step: u64) -> StreamId {
        worker_stream(0, step)
    }

    #[test]
    fn spec_validation_and_parsing() {
        assert!(CompressorSpec::random_k(0.0).is_err());
        assert!(CompressorSpec::top_k(1.1).is_err());
        assert!(CompressorSpec::threshold_v(-1.0).is_err());
        assert!(CompressorSpec::adaptive_threshold(0.0).is_err());
        assert!(CompressorSpec::qsgd(0).is_err());
        assert_eq!(
            "top_k:0.25".parse::<CompressorSpec>().unwrap(),
            CompressorSpec::TopK { ratio: 0.25 }
        );
        assert_eq!(
            "qsgd:256".parse::<CompressorSpec>().unwrap(),
            CompressorSpec::Qsgd { levels: 256 }
        );
        assert_eq!(
            "adaptive_threshold".parse::<CompressorSpec>().unwrap(),
            CompressorSpec::AdaptiveThreshold { fraction: 0.01 }
        );
        assert!("sign:1".parse::<CompressorSpec>().is_err());
        assert!("top_k".parse::<CompressorSpec>().is_err());
        assert!("bogus".parse::<CompressorSpec>().is_err());
        for s in [
            "identity",
            "random_k:0.5",
            "random_k_unbiased:0.1",
            "threshold_v:0.001",
            "terngrad",
            "qsgd:4",
            "sign",
        ] {
            let spec: CompressorSpec = s.parse().unwrap();
            assert_eq!(spec.to_string(), s);
        }
    }

    #[test]
    fn declared_omegas() {
        assert_eq!(CompressorSpec::Identity.omega(10), Some(0.0));
        assert_eq!(CompressorSpec::TopK { ratio: 0.1 }.omega(10), Some(0.0));
        assert_eq!(CompressorSpec::RandomK { ratio: 0.1 }.omega(10), Some(0.0));
        assert_eq!(CompressorSpec::ThresholdV { threshold: 1.0 }.omega(10), Some(0.0));
        assert_eq!(CompressorSpec::RandomKUnbiased { ratio: 0.25 }.omega(8), Some(3.0));
        assert_eq!(CompressorSpec::Sign.omega(10), None);
        assert_eq!(CompressorSpec::TernGrad.omega(10), None);

        let shape = LayerShape::new(&[2, 4]).unwrap();
        let c = Compressor::layerwise(CompressorSpec::RandomKUnbiased { ratio: 0.5 })
            .with_override(1, CompressorSpec::RandomKUnbiased { ratio: 0.25 })
            .unwrap();
        assert_eq!(c.layer_omegas(&shape), Some(vec![1.0, 3.0]));
        assert_eq!(c.declared_omega(&shape), Some(3.0));
        let e = Compressor::entire_model(CompressorSpec::RandomKUnbiased { ratio: 0.5 });
        assert_eq!(e.layer_omegas(&shape), Some(vec![1.0, 1.0]));
    }

    #[test]
    fn identity_in_any_mode() {
        let x = lv(&[&[1.0, -2.0], &[3.5]]);
        for c in [
            Compressor::layerwise(CompressorSpec::Identity),
            Compressor::entire_model(CompressorSpec::Identity),
        ] {
            assert_eq!(c.apply(&x, 1, id(0)).unwrap(), x);
        }
    }

    #[test]
    fn top_k_zeroes_a_whole_layer_only_in_entire_mode() {
        // Every layer-2 magnitude is below every layer-1 magnitude.
        let x = lv(&[&[5.0, -4.0, 3.0], &[0.3, -0.2, 0.1]]);
        let spec = CompressorSpec::TopK { ratio: 0.5 };
        let entire = Compressor::entire_model(spec).apply(&x, 0, id(0)).unwrap();
        assert_eq!(entire.layer(0), &[5.0, -4.0, 3.0]);
        assert_eq!(entire.layer(1), &[0.0, 0.0, 0.0]);
        let layerwise = Compressor::layerwise(spec).apply(&x, 0, id(0)).unwrap();
        for j in 0..2 {
            assert!(layerwise.layer(j).iter().any(|v| *v != 0.0));
        }
        assert_eq!(layerwise.layer(1), &[0.3, -0.2, 0.0]);
    }

    #[test]
    fn random_k_layerwise_one_per_layer() {
        let x = lv(&[&[1.0, 2.0], &[3.0, 4.0]]);
        let c = Compressor::layerwise(CompressorSpec::RandomK { ratio: 0.5 });
        for step in 0..200 {
            let out = c.apply(&x, 5, id(step)).unwrap();
            for j in 0..2 {
                assert_eq!(out.layer(j).iter().filter(|v| **v != 0.0).count(), 1);
            }
        }
    }

    #[test]
    fn adaptive_threshold_per_mode() {
        let x = lv(&[&[10.0, 0.1], &[0.2, 0.1]]);
        let spec = CompressorSpec::AdaptiveThreshold { fraction: 0.5 };
        let l = Compressor::layerwise(spec).apply(&x, 0, id(0)).unwrap();
        assert_eq!(l.values(), &[10.0, 0.0, 0.2, 0.1]);
        let e = Compressor::entire_model(spec).apply(&x, 0, id(0)).unwrap();
        assert_eq!(e.values(), &[10.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn override_rules() {
        let x = lv(&[&[1.0, 2.0], &[3.0, 4.0]]);
        assert!(matches!(
            Compressor::entire_model(CompressorSpec::Sign).with_override(0, CompressorSpec::Identity),
            Err(Error::OverrideInEntireMode)
        ));
        let c = Compressor::layerwise(CompressorSpec::Sign)
            .with_override(1, CompressorSpec::Identity)
            .unwrap();
        assert_eq!(c.apply(&x, 0, id(0)).unwrap().values(), &[1.0, 1.0, 3.0, 4.0]);
        assert!(c.with_mode(ApplicationMode::EntireModel).is_err());
        let bad = Compressor::layerwise(CompressorSpec::Sign)
            .with_override(2, CompressorSpec::Identity)
            .unwrap();
        assert!(matches!(
            bad.apply(&x, 0, id(0)),
            Err(Error::InvalidOverride { index: 2, layers: 2 })
        ));
    }

    #[test]
    fn rounds() {
        let g1 = lv(&[&[1.0, 2.0], &[3.0]]);
        let g2 = lv(&[&[3.0, -2.0], &[1.0]]);
        let id_c = Compressor::identity();
        let r = bidirectional_round(&[g1.clone(), g2.clone()], &id_c, &id_c, 0, 0).unwrap();
        assert_eq!(r.aggregate.values(), &[2.0, 0.0, 2.0]);

        let sign = Compressor::layerwise(CompressorSpec::Sign);
        let r = bidirectional_round(&[g1, g2], &sign, &id_c, 0, 0).unwrap();
        assert_eq!(r.aggregate.values(), &[1.0, 0.0, 1.0]);

        let other = lv(&[&[1.0, 2.0, 3.0]]);
        let e = bidirectional_round(&[lv(&[&[1.0], &[2.0, 3.0]]), other], &id_c, &id_c, 0, 0);
        assert!(matches!(e, Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn round_random_k_enumeration_oracle() {
        // d = 2, one coordinate kept on each side: the four (worker, master)
        // subset pairs give g̃ᵀg ∈ {1, 0, 0, 4}.
        let g = [1.0, 2.0];
        let mut exact = 0.0;
        for w in 0..2 {
            let qw = keep_subset(&g, &[w], 1.0);
            for m in 0..2 {
                let qm = keep_subset(&qw, &[m], 1.0);
                exact += (qm[0] * g[0] + qm[1] * g[1]) / 4.0;
            }
        }
        assert_eq!(exact, 1.25);

        let x = lv(&[&g]);
        let c = Compressor::entire_model(CompressorSpec::RandomK { ratio: 0.5 });
        let mut acc = MeanEstimator::new();
        for step in 0..100_000 {
            let r = bidirectional_round(std::slice::from_ref(&x), &c, &c, 9, step).unwrap();
            acc.push(r.aggregate.inner(&x).unwrap());
        }
        assert!((acc.mean() - exact).abs() < 4.0 * acc.std_error());
    }

    #[test]
    fn payload_examples() {
        let x = LayeredVector::filled(LayerShape::flat(10).unwrap(), 1.5);
        assert_eq!(Compressor::identity().payload_bits(&x), 640);
        let s = LayeredVector::filled(LayerShape::flat(8).unwrap(), -1.0);
        assert_eq!(Compressor::entire_model(CompressorSpec::Sign).payload_bits(&s), 8);
        let v: Vec<f64> = (1..=16).map(|i| i as f64).collect();
        let t = CompressorSpec::TopK { ratio: 0.25 }
            .compress(&v, &mut RngStream::new(0, id(0)))
            .unwrap();
        assert_eq!(
            payload_bits(&CompressorSpec::TopK { ratio: 0.25 }, &t, 16),
            4 * (4 + 64)
        );
        assert_eq!(payload_bits(&CompressorSpec::TernGrad, &v, 16), 16 * 2 + 64);
        assert_eq!(payload_bits(&CompressorSpec::Qsgd { levels: 4 }, &v, 16), 16 * 4 + 64);
        let two = LayeredVector::filled(LayerShape::new(&[4, 4]).unwrap(), 0.5);
        let tern = |mode| Compressor::new(CompressorSpec::TernGrad, mode).payload_bits(&two);
        assert_eq!(tern(ApplicationMode::Layerwise), 8 * 2 + 2 * 64);
        assert_eq!(tern(ApplicationMode::EntireModel), 8 * 2 + 64);
        let top = |mode| Compressor::new(CompressorSpec::TopK { ratio: 0.5 }, mode).payload_bits(&two);
        assert_eq!(top(ApplicationMode::Layerwise), top(ApplicationMode::EntireModel));
        assert_eq!(ceil_log2(1), 0);
        assert_eq!(ceil_log2(16), 4);
        assert_eq!(ceil_log2(17), 5);
    }

    #[test]
    fn same_stream_same_output() {
        let x = lv(&[&[0.3, -1.2, 2.5, 0.01], &[4.0, -0.5]]);
        for spec in [
            CompressorSpec::RandomK { ratio: 0.5 },
            CompressorSpec::RandomKUnbiased { ratio: 0.3 },
            CompressorSpec::TernGrad,
            CompressorSpec::Qsgd { levels: 2 },
        ] {
            for c in [Compressor::layerwise(spec), Compressor::entire_model(spec)] {
                let a = c.apply(&x, 77, id(3)).unwrap();
                let b = c.apply(&x, 77, id(3)).unwrap();
                assert_eq!(a.values(), b.values());
            }
        }
    }

    fn layered_strategy() -> impl Strategy<Value = LayeredVector> {
        prop::collection::vec(prop::collection::vec(-50.0f64..50.0, 1..6), 1..5)
            .prop_map(|layers| LayeredVector::from_layers(&layers).unwrap())
    }

    proptest! {
        #[test]
        fn elementwise_operators_are_mode_invariant(x in layered_strategy(), v in 0.01f64..40.0) {
            for spec in [CompressorSpec::ThresholdV { threshold: v }, CompressorSpec::Sign] {
                let a = Compressor::layerwise(spec).apply(&x, 1, id(0)).unwrap();
                let b = Compressor::entire_model(spec).apply(&x, 1, id(0)).unwrap();
                prop_assert_eq!(a.values(), b.values());
            }
        }
    }
}
