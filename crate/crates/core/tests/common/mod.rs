#![allow(dead_code)]

use mecm::linalg::{standard_normal_matrix, MatNormSpec, MatrixSeries};
use mecm::{MecmParams, RankPair};
use nalgebra::DMatrix;
use rand::Rng;

pub fn normal<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> DMatrix<f64> {
    standard_normal_matrix(rng, rows, cols)
}

/// Well-conditioned random SPD matrix `AAᵀ/n + I/2`.
pub fn random_spd<R: Rng>(rng: &mut R, n: usize) -> DMatrix<f64> {
    let a = normal(rng, n, n);
    let m = &a * a.transpose() / n as f64 + DMatrix::identity(n, n) * 0.5;
    (&m + m.transpose()) * 0.5
}

pub fn scaled_normal<R: Rng>(rng: &mut R, rows: usize, cols: usize, s: f64) -> DMatrix<f64> {
    normal(rng, rows, cols) * s
}

pub fn random_params<R: Rng>(rng: &mut R, n1: usize, n2: usize, ranks: RankPair, p: usize) -> MecmParams {
    MecmParams::new(
        scaled_normal(rng, n1, n2, 0.3),
        scaled_normal(rng, n1, ranks.r1, 0.4),
        scaled_normal(rng, n2, ranks.r2, 0.4),
        scaled_normal(rng, n1, ranks.r1, 0.6),
        scaled_normal(rng, n2, ranks.r2, 0.6),
        (0..p).map(|_| scaled_normal(rng, n1, n1, 0.3)).collect(),
        (0..p).map(|_| scaled_normal(rng, n2, n2, 0.3)).collect(),
        MatNormSpec::new(random_spd(rng, n1), random_spd(rng, n2)).unwrap(),
    )
    .unwrap()
}

/// Random-walk panel of `t` observations.
pub fn random_walk<R: Rng>(rng: &mut R, n1: usize, n2: usize, t: usize) -> MatrixSeries {
    let mut y = DMatrix::zeros(n1, n2);
    let data = (0..t)
        .map(|_| {
            y += normal(rng, n1, n2);
            y.clone()
        })
        .collect();
    MatrixSeries::new(data).unwrap()
}

pub fn random_ranks<R: Rng>(rng: &mut R, n1: usize, n2: usize) -> RankPair {
    RankPair::new(rng.random_range(1..=n1), rng.random_range(1..=n2))
}

pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax()
}
