use ndarray::{Array1, Array2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::gaussian::{Covariance, Gaussian};
use crate::gmm::GaussianMixture;
use crate::hmm::Hmm;

pub(crate) fn random_stochastic(rng: &mut ChaCha8Rng, n: usize) -> Array1<f64> {
    let raw: Array1<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
    let s = raw.sum();
    raw / s
}

/// Diagonal-covariance HMM with means in [-3, 3] and variances in [0.3, 2].
pub(crate) fn random_hmm(rng: &mut ChaCha8Rng, n: usize, m: usize, d: usize) -> Hmm<f64> {
    let initial = random_stochastic(rng, n);
    let mut trans = Array2::zeros((n, n));
    for r in 0..n {
        trans.row_mut(r).assign(&random_stochastic(rng, n));
    }
    let emissions = (0..n)
        .map(|_| {
            let comps = (0..m)
                .map(|_| {
                    let mean: Array1<f64> = (0..d).map(|_| rng.random_range(-3.0..3.0)).collect();
                    let var: Array1<f64> = (0..d).map(|_| rng.random_range(0.3..2.0)).collect();
                    Gaussian::new(mean, Covariance::Diagonal(var)).unwrap()
                })
                .collect();
            GaussianMixture::new(random_stochastic(rng, m), comps).unwrap()
        })
        .collect();
    Hmm::new(initial, trans, emissions).unwrap()
}
