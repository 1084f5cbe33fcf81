#![allow(dead_code)]

use ndarray::{Array1, Array2};
use rand::Rng;
use vhem::{Covariance, CovarianceType, Gaussian, GaussianMixture, Hmm};

pub fn stochastic<R: Rng>(rng: &mut R, n: usize) -> Array1<f64> {
    let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|x| x / s).collect()
}

/// Symmetric positive-definite `d × d` matrix with eigenvalues roughly in [0.3, 3].
pub fn spd<R: Rng>(rng: &mut R, d: usize) -> Array2<f64> {
    let a = Array2::from_shape_fn((d, d), |_| rng.random_range(-0.7..0.7));
    let mut m = a.dot(&a.t());
    for k in 0..d {
        m[[k, k]] += rng.random_range(0.3..1.5);
    }
    m
}

pub fn gaussian<R: Rng>(rng: &mut R, d: usize, kind: CovarianceType) -> Gaussian<f64> {
    let mean: Array1<f64> = (0..d).map(|_| rng.random_range(-3.0..3.0)).collect();
    let cov = match kind {
        CovarianceType::Diagonal => Covariance::Diagonal((0..d).map(|_| rng.random_range(0.3..2.0)).collect()),
        CovarianceType::Full => Covariance::Full(spd(rng, d)),
    };
    Gaussian::new(mean, cov).unwrap()
}

pub fn random_hmm<R: Rng>(rng: &mut R, n: usize, m: usize, d: usize, kind: CovarianceType) -> Hmm<f64> {
    let emissions = (0..n)
        .map(|_| GaussianMixture::new(stochastic(rng, m), (0..m).map(|_| gaussian(rng, d, kind)).collect()).unwrap())
        .collect();
    let mut trans = Array2::zeros((n, n));
    for r in 0..n {
        trans.row_mut(r).assign(&stochastic(rng, n));
    }
    Hmm::new(stochastic(rng, n), trans, emissions).unwrap()
}

pub fn random_kind<R: Rng>(rng: &mut R, d: usize) -> CovarianceType {
    if d > 1 && rng.random_bool(0.5) {
        CovarianceType::Full
    } else {
        CovarianceType::Diagonal
    }
}

/// Random HMM with `1..=max_n` states and `1..=max_m` components per state.
pub fn random_hmm_upto<R: Rng>(rng: &mut R, max_n: usize, max_m: usize, d: usize, kind: CovarianceType) -> Hmm<f64> {
    let (n, m) = (rng.random_range(1..=max_n), rng.random_range(1..=max_m));
    random_hmm(rng, n, m, d, kind)
}
