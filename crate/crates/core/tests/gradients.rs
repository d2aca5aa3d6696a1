use std::sync::Arc;

use gradsq_core::rng::{RngStream, Side, StreamId};
use gradsq_core::sim::{Dataset, Logistic, Mlp, NoiseModel, Problem, Quadratic};
use gradsq_core::{LayerShape, LayeredVector};
use rand::Rng;
use rand_distr::StandardNormal;

const STEP: f64 = 1e-5;
const POINTS: u64 = 20;

fn central_differences(problem: &Problem, x: &LayeredVector) -> Vec<f64> {
    let mut probe = x.clone();
    (0..x.len())
        .map(|i| {
            let xi = x.values()[i];
            probe.values_mut()[i] = xi + STEP;
            let up = problem.loss(&probe).unwrap();
            probe.values_mut()[i] = xi - STEP;
            let down = problem.loss(&probe).unwrap();
            probe.values_mut()[i] = xi;
            (up - down) / (2.0 * STEP)
        })
        .collect()
}

fn random_point(shape: &LayerShape, scale: f64, seed: u64) -> LayeredVector {
    let mut rng = RngStream::new(seed, StreamId::new(Side::Probe, 0, seed));
    let values = (0..shape.dim())
        .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
        .collect();
    LayeredVector::new(shape.clone(), values).unwrap()
}

fn assert_matches_differences(problem: &Problem, scale: f64) {
    for p in 0..POINTS {
        let x = random_point(problem.shape(), scale, p);
        let g = problem.full_gradient(&x).unwrap();
        let fd = central_differences(problem, &x);
        let err: f64 = g
            .values()
            .iter()
            .zip(&fd)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        let norm = g.norm_l2_sq().sqrt();
        assert!(
            err <= 1e-5 * norm,
            "{} point {p}: error {err:e} vs norm {norm:e}",
            problem.kind_name()
        );
    }
}

fn data(features: usize) -> Arc<Dataset> {
    let scales: Vec<f64> = (0..features).map(|f| 1.0 / (1.0 + f as f64)).collect();
    Arc::new(Dataset::two_class(60, &scales, 0.7, 4).unwrap())
}

#[test]
fn quadratic_gradient_matches_differences() {
    let shape = LayerShape::new(&[3, 2, 4]).unwrap();
    let h = vec![0.5, 1.0, 2.0, 3.0, 0.1, 1.5, 2.5, 4.0, 0.0];
    let b = vec![1.0, -1.0, 0.5, 2.0, -0.5, 0.0, 1.0, -2.0, 0.3];
    let q = Quadratic::new(shape, h, b, 3, NoiseModel::None).unwrap();
    assert_matches_differences(&Problem::Quadratic(q), 1.0);
}

#[test]
fn logistic_gradient_matches_differences() {
    let shape = LayerShape::new(&[2, 3, 1]).unwrap();
    let l = Logistic::new(shape, data(6), 4, 0.01, NoiseModel::None).unwrap();
    assert_matches_differences(&Problem::Logistic(l), 1.0);
}

#[test]
fn mlp_gradient_matches_differences() {
    let m = Mlp::new(data(3), 5, 2, 0.001, NoiseModel::None).unwrap();
    assert_matches_differences(&Problem::Mlp(m), 0.7);
}

#[test]
fn worker_gradients_average_to_full_gradient() {
    let m = Problem::Mlp(Mlp::new(data(3), 4, 3, 0.01, NoiseModel::None).unwrap());
    let x = random_point(m.shape(), 0.5, 99);
    let full = m.full_gradient(&x).unwrap();
    let mut avg = vec![0.0; x.len()];
    for w in 0..3 {
        for (a, g) in avg.iter_mut().zip(m.local_gradient(&x, w).unwrap().values()) {
            *a += g / 3.0;
        }
    }
    for (a, b) in avg.iter().zip(full.values()) {
        assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
    }
}
