//! Layer-partitioned vectors and block-diagonal weights.
//!
//! A model with `L` layers of sizes `d_1..d_L` is stored as one contiguous
//! vector of `d = Σ d_j` values in layer order. Block-diagonal SPD matrices of
//! the form `diag(w_1 I_1, …, w_L I_L)` are represented by their `L` scalars.

use std::ops::Range;
use std::sync::Arc;

use crate::error::{Error, Result};

/// Ordered per-layer sizes. Cloning is cheap (shared offsets).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerShape {
    // offsets[j]..offsets[j + 1] is layer j; offsets[0] == 0.
    offsets: Arc<[usize]>,
}

impl LayerShape {
    pub fn new(dims: &[usize]) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::InvalidShape("at least one layer is required".into()));
        }
        if let Some(j) = dims.iter().position(|&d| d == 0) {
            return Err(Error::InvalidShape(format!("layer {j} has size 0")));
        }
        let mut offsets = Vec::with_capacity(dims.len() + 1);
        offsets.push(0);
        let mut acc = 0usize;
        for &d in dims {
            acc += d;
            offsets.push(acc);
        }
        Ok(Self {
            offsets: offsets.into(),
        })
    }

    /// Single-layer shape of dimension `d`.
    pub fn flat(d: usize) -> Result<Self> {
        Self::new(&[d])
    }

    pub fn num_layers(&self) -> usize {
        self.offsets.len() - 1
    }

    /// Total dimension `d`.
    pub fn dim(&self) -> usize {
        self.offsets[self.offsets.len() - 1]
    }

    pub fn layer_dim(&self, layer: usize) -> usize {
        self.offsets[layer + 1] - self.offsets[layer]
    }

    pub fn layer_range(&self, layer: usize) -> Range<usize> {
        self.offsets[layer]..self.offsets[layer + 1]
    }

    pub fn dims(&self) -> Vec<usize> {
        (0..self.num_layers()).map(|j| self.layer_dim(j)).collect()
    }

    pub fn ranges(&self) -> impl Iterator<Item = Range<usize>> + '_ {
        self.offsets.windows(2).map(|w| w[0]..w[1])
    }

    fn check_same(&self, other: &LayerShape) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::ShapeMismatch {
                expected: self.dims(),
                found: other.dims(),
            })
        }
    }
}

/// A model-shaped vector: parameters, gradients and compressed gradients all
/// share this representation.
#[derive(Clone, Debug, PartialEq)]
pub struct LayeredVector {
    shape: LayerShape,
    values: Vec<f64>,
}

impl LayeredVector {
    pub fn new(shape: LayerShape, values: Vec<f64>) -> Result<Self> {
        if values.len() != shape.dim() {
            return Err(Error::LengthMismatch {
                expected: shape.dim(),
                found: values.len(),
            });
        }
        Ok(Self { shape, values })
    }

    pub fn zeros(shape: LayerShape) -> Self {
        let values = vec![0.0; shape.dim()];
        Self { shape, values }
    }

    pub fn filled(shape: LayerShape, value: f64) -> Self {
        let values = vec![value; shape.dim()];
        Self { shape, values }
    }

    /// Concatenates per-layer slices; the layer sizes define the shape.
    pub fn from_layers<S: AsRef<[f64]>>(layers: &[S]) -> Result<Self> {
        let dims: Vec<usize> = layers.iter().map(|l| l.as_ref().len()).collect();
        let shape = LayerShape::new(&dims)?;
        let values = layers.iter().flat_map(|l| l.as_ref().iter().copied()).collect();
        Ok(Self { shape, values })
    }

    pub fn shape(&self) -> &LayerShape {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn layer(&self, layer: usize) -> &[f64] {
        &self.values[self.shape.layer_range(layer)]
    }

    pub fn layer_mut(&mut self, layer: usize) -> &mut [f64] {
        let range = self.shape.layer_range(layer);
        &mut self.values[range]
    }

    pub fn layers(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.shape.ranges().map(move |r| &self.values[r])
    }

    pub fn norm_l1(&self) -> f64 {
        self.values.iter().map(|v| v.abs()).sum()
    }

    pub fn norm_l2_sq(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    /// Squared norm of a single layer slice.
    pub fn layer_norm_sq(&self, layer: usize) -> f64 {
        self.layer(layer).iter().map(|v| v * v).sum()
    }

    /// `xᵀ M x` for block-diagonal `M`.
    pub fn weighted_norm_sq(&self, weights: &BlockWeights) -> Result<f64> {
        self.shape.check_same(&weights.shape)?;
        Ok((0..self.shape.num_layers())
            .map(|j| weights.per_layer[j] * self.layer_norm_sq(j))
            .sum())
    }

    pub fn inner(&self, other: &LayeredVector) -> Result<f64> {
        self.shape.check_same(&other.shape)?;
        Ok(dot(&self.values, &other.values))
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &LayeredVector) -> Result<()> {
        self.shape.check_same(&other.shape)?;
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn scale(&mut self, alpha: f64) {
        for v in &mut self.values {
            *v *= alpha;
        }
    }

    pub fn distance_sq(&self, other: &LayeredVector) -> Result<f64> {
        self.shape.check_same(&other.shape)?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b) * (a - b))
            .sum())
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn same_shape(&self, other: &LayeredVector) -> Result<()> {
        self.shape.check_same(&other.shape)
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Per-layer positive scalars of a block-diagonal SPD matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockWeights {
    shape: LayerShape,
    per_layer: Vec<f64>,
}

impl BlockWeights {
    pub fn new(shape: LayerShape, per_layer: Vec<f64>) -> Result<Self> {
        if per_layer.len() != shape.num_layers() {
            return Err(Error::LengthMismatch {
                expected: shape.num_layers(),
                found: per_layer.len(),
            });
        }
        if let Some(w) = per_layer.iter().find(|w| !(**w > 0.0 && w.is_finite())) {
            return Err(Error::param(
                "block weight",
                format!("{w} is not a positive finite number"),
            ));
        }
        Ok(Self { shape, per_layer })
    }

    pub fn identity(shape: LayerShape) -> Self {
        let per_layer = vec![1.0; shape.num_layers()];
        Self { shape, per_layer }
    }

    /// `W = diag((1 + Ω_j) I_j)` from per-layer inflation constants.
    pub fn from_omegas(shape: LayerShape, omegas: &[f64]) -> Result<Self> {
        if let Some(o) = omegas.iter().find(|o| o.is_nan() || **o < 0.0) {
            return Err(Error::param("omega", format!("{o} is negative")));
        }
        Self::new(shape, omegas.iter().map(|o| 1.0 + o).collect())
    }

    /// `B = diag((k_Mj k_Wj / d_j²) I_j)` for layer-wise Random k with kept
    /// coordinate counts on the master and worker side.
    pub fn random_k_descent(shape: LayerShape, master_kept: &[usize], worker_kept: &[usize]) -> Result<Self> {
        let l = shape.num_layers();
        if master_kept.len() != l || worker_kept.len() != l {
            return Err(Error::LengthMismatch {
                expected: l,
                found: master_kept.len().min(worker_kept.len()),
            });
        }
        let per_layer = (0..l)
            .map(|j| {
                let d = shape.layer_dim(j) as f64;
                (master_kept[j] as f64) * (worker_kept[j] as f64) / (d * d)
            })
            .collect();
        Self::new(shape, per_layer)
    }

    pub fn shape(&self) -> &LayerShape {
        &self.shape
    }

    pub fn per_layer(&self) -> &[f64] {
        &self.per_layer
    }

    /// Layer-by-layer product, e.g. `A = W_M W_W`.
    pub fn product(&self, other: &BlockWeights) -> Result<BlockWeights> {
        self.shape.check_same(&other.shape)?;
        Ok(BlockWeights {
            shape: self.shape.clone(),
            per_layer: self
                .per_layer
                .iter()
                .zip(&other.per_layer)
                .map(|(a, b)| a * b)
                .collect(),
        })
    }

    /// With `weighted_by_dim` the trace of the `d × d` matrix, `Σ d_j w_j`;
    /// otherwise the per-block sum `Σ w_j`.
    pub fn trace(&self, weighted_by_dim: bool) -> f64 {
        self.per_layer
            .iter()
            .enumerate()
            .map(|(j, w)| {
                if weighted_by_dim {
                    self.shape.layer_dim(j) as f64 * w
                } else {
                    *w
                }
            })
            .sum()
    }

    pub fn max_weight(&self) -> f64 {
        self.per_layer.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min_weight(&self) -> f64 {
        self.per_layer.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// `Trace(M Σ)` for a diagonal covariance given per coordinate.
    pub fn trace_with_diagonal(&self, variances: &[f64]) -> Result<f64> {
        if variances.len() != self.shape.dim() {
            return Err(Error::LengthMismatch {
                expected: self.shape.dim(),
                found: variances.len(),
            });
        }
        Ok(self
            .shape
            .ranges()
            .zip(&self.per_layer)
            .map(|(r, w)| w * variances[r].iter().sum::<f64>())
            .sum())
    }
}
