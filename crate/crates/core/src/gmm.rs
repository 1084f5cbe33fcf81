//! Gaussian mixtures used as HMM emission densities, and the variational
//! expected log-likelihood between two of them.

use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;

use crate::error::{Error, Result};
use crate::gaussian::{gauss_expected_loglik, CovarianceType, Gaussian};
use crate::optim::{log_sum_exp, softmax_into};
use crate::scalar::Scalar;

pub(crate) fn check_stochastic<T: Scalar>(v: &[T], what: &str) -> Result<()> {
    if v.is_empty() {
        return Err(Error::InvalidModel(format!("{what} is empty")));
    }
    if let Some(bad) = v.iter().find(|x| !(x.is_finite() && **x >= T::zero())) {
        return Err(Error::InvalidModel(format!("{what} has invalid entry {bad}")));
    }
    let s: T = v.iter().copied().sum();
    if (s - T::one()).abs() > T::stochastic_tol() {
        return Err(Error::InvalidModel(format!("{what} sums to {s}, not 1")));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixture<T> {
    weights: Array1<T>,
    components: Vec<Gaussian<T>>,
}

impl<T: Scalar> GaussianMixture<T> {
    pub fn new(weights: Array1<T>, components: Vec<Gaussian<T>>) -> Result<Self> {
        if weights.len() != components.len() {
            return Err(Error::DimensionMismatch { expected: components.len(), got: weights.len() });
        }
        check_stochastic(weights.as_slice().expect("contiguous"), "mixture weights")?;
        let d = components[0].dim();
        if let Some(g) = components.iter().find(|g| g.dim() != d) {
            return Err(Error::DimensionMismatch { expected: d, got: g.dim() });
        }
        Ok(Self { weights, components })
    }

    pub fn single(g: Gaussian<T>) -> Self {
        Self { weights: Array1::ones(1), components: vec![g] }
    }

    pub fn dim(&self) -> usize {
        self.components[0].dim()
    }

    pub fn n_components(&self) -> usize {
        self.components.len()
    }

    pub fn weights(&self) -> &Array1<T> {
        &self.weights
    }

    pub fn components(&self) -> &[Gaussian<T>] {
        &self.components
    }

    pub fn covariance_kind(&self) -> CovarianceType {
        self.components[0].covariance().kind()
    }

    /// `log c_m + log N(y; μ_m, Σ_m)` for every component, written into `out`.
    pub fn component_log_densities(&self, y: ArrayView1<T>, out: &mut [T]) {
        for ((o, w), g) in out.iter_mut().zip(&self.weights).zip(&self.components) {
            *o = w.ln() + g.log_density(y);
        }
    }

    pub fn log_density(&self, y: ArrayView1<T>) -> T {
        let mut buf = vec![T::zero(); self.n_components()];
        self.component_log_densities(y, &mut buf);
        log_sum_exp(&buf)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Array1<T> {
        let u = T::of(rng.random::<f64>());
        let mut acc = T::zero();
        let mut pick = self.components.len() - 1;
        for (m, &w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                pick = m;
                break;
            }
        }
        self.components[pick].sample(rng)
    }

    pub(crate) fn into_parts(self) -> (Array1<T>, Vec<Gaussian<T>>) {
        (self.weights, self.components)
    }
}

/// `η[m][ℓ]`: probability that a draw from base component `m` is explained by
/// reduced component `ℓ`. Rows sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct EmissionResponsibility<T> {
    pub eta: Array2<T>,
}

fn check_pair<T: Scalar>(base: &GaussianMixture<T>, reduced: &GaussianMixture<T>) -> Result<()> {
    if base.dim() != reduced.dim() {
        return Err(Error::DimensionMismatch { expected: reduced.dim(), got: base.dim() });
    }
    Ok(())
}

/// Matrix of exact Gaussian cross terms `L_G(m, ℓ)`.
fn cross_loglik<T: Scalar>(base: &GaussianMixture<T>, reduced: &GaussianMixture<T>) -> Result<Array2<T>> {
    check_pair(base, reduced)?;
    let mut lg = Array2::zeros((base.n_components(), reduced.n_components()));
    for (m, gb) in base.components.iter().enumerate() {
        for (l, gr) in reduced.components.iter().enumerate() {
            lg[[m, l]] = gauss_expected_loglik(gb, gr)?;
        }
    }
    Ok(lg)
}

/// Optimal responsibilities together with the optimal bound value; the E-step
/// uses this to avoid evaluating the Gaussian cross terms twice.
pub fn gmm_variational<T: Scalar>(
    base: &GaussianMixture<T>,
    reduced: &GaussianMixture<T>,
) -> Result<(EmissionResponsibility<T>, T)> {
    let lg = cross_loglik(base, reduced)?;
    let (mb, mr) = lg.dim();
    let mut eta = Array2::zeros((mb, mr));
    let mut logits = vec![T::zero(); mr];
    let mut row = vec![T::zero(); mr];
    let mut value = T::zero();
    for m in 0..mb {
        for l in 0..mr {
            logits[l] = reduced.weights[l].ln() + lg[[m, l]];
        }
        let lse = softmax_into(&logits, &mut row)?;
        for l in 0..mr {
            eta[[m, l]] = row[l];
        }
        if base.weights[m] > T::zero() {
            value += base.weights[m] * lse;
        }
    }
    Ok((EmissionResponsibility { eta }, value))
}

/// `η̂[m][ℓ] ∝ c_ℓ exp L_G(m, ℓ)`, normalized over `ℓ` in the log domain.
pub fn gmm_responsibilities<T: Scalar>(
    base: &GaussianMixture<T>,
    reduced: &GaussianMixture<T>,
) -> Result<EmissionResponsibility<T>> {
    gmm_variational(base, reduced).map(|(eta, _)| eta)
}

/// The variational lower bound
/// `Σ_m c_m Σ_ℓ η[m][ℓ] (log c_ℓ + L_G(m, ℓ) − log η[m][ℓ])` at an arbitrary
/// row-stochastic `eta`. Zero entries of `eta` contribute nothing.
pub fn gmm_expected_loglik_bound<T: Scalar>(
    base: &GaussianMixture<T>,
    reduced: &GaussianMixture<T>,
    eta: &EmissionResponsibility<T>,
) -> Result<T> {
    let lg = cross_loglik(base, reduced)?;
    if eta.eta.dim() != lg.dim() {
        return Err(Error::DimensionMismatch { expected: lg.len(), got: eta.eta.len() });
    }
    let mut total = T::zero();
    for m in 0..base.n_components() {
        let cm = base.weights[m];
        if cm == T::zero() {
            continue;
        }
        let mut inner = T::zero();
        for l in 0..reduced.n_components() {
            let e = eta.eta[[m, l]];
            if e > T::zero() {
                inner += e * (reduced.weights[l].ln() + lg[[m, l]] - e.ln());
            }
        }
        total += cm * inner;
    }
    Ok(total)
}

/// The bound at its optimum: `Σ_m c_m log Σ_ℓ c_ℓ exp L_G(m, ℓ)`.
pub fn gmm_expected_loglik_opt<T: Scalar>(base: &GaussianMixture<T>, reduced: &GaussianMixture<T>) -> Result<T> {
    gmm_variational(base, reduced).map(|(_, v)| v)
}
