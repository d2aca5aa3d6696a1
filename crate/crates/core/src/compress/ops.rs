//! Slice-level compression operators.
//!
//! Every operator maps a slice to a dense slice of the same length; zeros are
//! materialised. The `*_into` forms write into a caller-provided buffer and are
//! what [`super::Compressor`] uses; the allocating forms are conveniences.

use std::cmp::Ordering;

use rand::Rng;

use crate::error::{Error, Result};

/// Number of coordinates kept for ratio `k` on a slice of length `len`:
/// `max(1, round(k * len))`, capped at `len`.
pub fn kept_count(len: usize, ratio: f64) -> usize {
    ((ratio * len as f64).round() as usize).clamp(1, len.max(1))
}

/// Copies `x` on `indices` scaled by `scale`, zero elsewhere.
pub fn keep_subset_into(x: &[f64], indices: &[usize], scale: f64, out: &mut [f64]) {
    out.fill(0.0);
    for &i in indices {
        out[i] = x[i] * scale;
    }
}

pub fn keep_subset(x: &[f64], indices: &[usize], scale: f64) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    keep_subset_into(x, indices, scale, &mut out);
    out
}

fn check_ratio(ratio: f64) -> Result<()> {
    if ratio > 0.0 && ratio <= 1.0 {
        Ok(())
    } else {
        Err(Error::param("ratio", format!("{ratio} is outside (0, 1]")))
    }
}

pub(crate) fn random_k_into<R: Rng + ?Sized>(
    x: &[f64],
    ratio: f64,
    unbiased: bool,
    rng: &mut R,
    out: &mut [f64],
) -> Result<()> {
    check_ratio(ratio)?;
    if x.is_empty() {
        return Err(Error::EmptyInput);
    }
    let m = kept_count(x.len(), ratio);
    let scale = if unbiased { x.len() as f64 / m as f64 } else { 1.0 };
    let picked = rand::seq::index::sample(rng, x.len(), m);
    out.fill(0.0);
    for i in picked.iter() {
        out[i] = x[i] * scale;
    }
    Ok(())
}

/// Keeps a uniformly random subset of `max(1, round(k·len))` coordinates,
/// unscaled.
pub fn random_k<R: Rng + ?Sized>(x: &[f64], ratio: f64, rng: &mut R) -> Result<Vec<f64>> {
    let mut out = vec![0.0; x.len()];
    random_k_into(x, ratio, false, rng, &mut out)?;
    Ok(out)
}

/// Random k with survivors scaled by `len / m`, which makes it unbiased.
pub fn random_k_unbiased<R: Rng + ?Sized>(x: &[f64], ratio: f64, rng: &mut R) -> Result<Vec<f64>> {
    let mut out = vec![0.0; x.len()];
    random_k_into(x, ratio, true, rng, &mut out)?;
    Ok(out)
}

// Larger magnitude first, then lower index.
fn magnitude_order(x: &[f64], a: usize, b: usize) -> Ordering {
    x[b].abs().total_cmp(&x[a].abs()).then(a.cmp(&b))
}

pub(crate) fn top_k_into(x: &[f64], ratio: f64, out: &mut [f64]) -> Result<()> {
    check_ratio(ratio)?;
    if x.is_empty() {
        return Err(Error::EmptyInput);
    }
    let m = kept_count(x.len(), ratio);
    let mut idx: Vec<usize> = (0..x.len()).collect();
    if m < idx.len() {
        idx.select_nth_unstable_by(m - 1, |&a, &b| magnitude_order(x, a, b));
    }
    keep_subset_into(x, &idx[..m], 1.0, out);
    Ok(())
}

/// Keeps the `max(1, round(k·len))` largest-magnitude entries; ties go to the
/// lower index.
pub fn top_k(x: &[f64], ratio: f64) -> Result<Vec<f64>> {
    let mut out = vec![0.0; x.len()];
    top_k_into(x, ratio, &mut out)?;
    Ok(out)
}

pub(crate) fn threshold_into(x: &[f64], threshold: f64, out: &mut [f64]) {
    for (o, &v) in out.iter_mut().zip(x) {
        *o = if v.abs() >= threshold { v } else { 0.0 };
    }
}

/// Keeps entries with `|x_i| ≥ v`.
pub fn threshold_v(x: &[f64], threshold: f64) -> Result<Vec<f64>> {
    if threshold.is_nan() || threshold <= 0.0 {
        return Err(Error::param("threshold", format!("{threshold} is not positive")));
    }
    let mut out = vec![0.0; x.len()];
    threshold_into(x, threshold, &mut out);
    Ok(out)
}

fn max_abs(x: &[f64]) -> f64 {
    x.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

pub(crate) fn adaptive_threshold_into(x: &[f64], fraction: f64, out: &mut [f64]) {
    let v = fraction * max_abs(x);
    if v == 0.0 {
        // Zero input, or a fraction so small the threshold underflows: keep
        // every nonzero entry.
        out.copy_from_slice(x);
        return;
    }
    threshold_into(x, v, out);
}

/// Threshold at `φ · max|x_i|` of the slice it is applied to.
pub fn adaptive_threshold(x: &[f64], fraction: f64) -> Result<Vec<f64>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::param("fraction", format!("{fraction} is outside (0, 1]")));
    }
    let mut out = vec![0.0; x.len()];
    adaptive_threshold_into(x, fraction, &mut out);
    Ok(out)
}

pub(crate) fn terngrad_into<R: Rng + ?Sized>(x: &[f64], rng: &mut R, out: &mut [f64]) {
    let s = max_abs(x);
    if s == 0.0 {
        out.fill(0.0);
        return;
    }
    for (o, &v) in out.iter_mut().zip(x) {
        let p = v.abs() / s;
        let keep = rng.random::<f64>() < p;
        *o = if keep { s * v.signum() } else { 0.0 };
    }
}

/// Ternary quantisation: `s · sign(x_i) · b_i` with `s = max|x_i|` and
/// `b_i ~ Bernoulli(|x_i| / s)`.
pub fn terngrad<R: Rng + ?Sized>(x: &[f64], rng: &mut R) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    terngrad_into(x, rng, &mut out);
    out
}

pub(crate) fn qsgd_into<R: Rng + ?Sized>(x: &[f64], levels: u32, rng: &mut R, out: &mut [f64]) {
    let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if r == 0.0 {
        out.fill(0.0);
        return;
    }
    let s = levels as f64;
    for (o, &v) in out.iter_mut().zip(x) {
        let a = s * (v.abs() / r).min(1.0);
        let lower = a.floor();
        let p = a - lower;
        let level = if p > 0.0 && rng.random::<f64>() < p {
            lower + 1.0
        } else {
            lower
        };
        *o = r * v.signum() * (level / s);
    }
}

/// Stochastic quantisation onto `{0, 1/s, …, 1}` of `‖x‖₂`.
pub fn qsgd<R: Rng + ?Sized>(x: &[f64], levels: u32, rng: &mut R) -> Result<Vec<f64>> {
    if levels == 0 {
        return Err(Error::param("levels", "must be at least 1"));
    }
    let mut out = vec![0.0; x.len()];
    qsgd_into(x, levels, rng, &mut out);
    Ok(out)
}

pub(crate) fn sign_into(x: &[f64], out: &mut [f64]) {
    for (o, &v) in out.iter_mut().zip(x) {
        *o = if v > 0.0 {
            1.0
        } else if v < 0.0 {
            -1.0
        } else {
            0.0
        };
    }
}

/// Elementwise sign with `sign(0) = 0`.
pub fn sign_op(x: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    sign_into(x, &mut out);
    out
}
