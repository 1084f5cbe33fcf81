//! Closed-form re-estimation of the reduced mixture from E-step statistics.

use ndarray::{Array1, Array2};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gaussian::{Covariance, CovarianceType, Gaussian};
use crate::gmm::GaussianMixture;
use crate::h3m::H3m;
use crate::hmm::{gaussian_floored, Hmm};
use crate::optim::solve_weighted_log;
use crate::scalar::Scalar;

use super::estep::{AssignmentMatrix, PairEstepResult, SummaryStats};

/// Normalizes `mass`, or returns `fallback` when there is nothing to normalize.
fn normalize_or_keep<T: Scalar>(mass: &[T], fallback: ndarray::ArrayView1<T>) -> Result<Array1<T>> {
    if mass.iter().copied().sum::<T>() > T::zero() {
        Ok(Array1::from(solve_weighted_log(mass)?))
    } else {
        Ok(fallback.to_owned())
    }
}

/// Updates every reduced component from the statistics of one E-step.
///
/// `stats` and `pairs` are indexed `i · K_r + j`. Reduced states or mixture
/// components that receive no mass keep their previous parameters. Sums run in
/// fixed `(i, β, m)` order for each reduced component, so the result does not
/// depend on the thread pool.
#[allow(clippy::too_many_arguments)]
pub fn mstep<T: Scalar>(
    base: &H3m<T>,
    previous: &H3m<T>,
    z: &AssignmentMatrix<T>,
    stats: &[SummaryStats<T>],
    pairs: &[PairEstepResult<T>],
    virtual_counts: &[T],
    cov_floor: T,
) -> Result<H3m<T>> {
    let (kb, kr) = z.z.dim();
    if kb != base.len() || kr != previous.len() {
        return Err(Error::DimensionMismatch { expected: base.len() * previous.len(), got: kb * kr });
    }
    if stats.len() != kb * kr || pairs.len() != kb * kr || virtual_counts.len() != kb {
        return Err(Error::DimensionMismatch { expected: kb * kr, got: stats.len().min(pairs.len()) });
    }
    let omega: Vec<T> = (0..kr).map(|j| (0..kb).map(|i| base.weights()[i] * z.z[[i, j]]).sum()).collect();
    let omega = Array1::from(solve_weighted_log(&omega)?);
    let comps = (0..kr)
        .into_par_iter()
        .map(|j| {
            let w: Vec<T> = (0..kb).map(|i| z.z[[i, j]] * virtual_counts[i]).collect();
            update_component(base, &previous.components()[j], j, kr, &w, stats, pairs, cov_floor)
        })
        .collect::<Result<Vec<_>>>()?;
    H3m::new(omega, comps)
}

#[allow(clippy::too_many_arguments)]
fn update_component<T: Scalar>(
    base: &H3m<T>,
    prev: &Hmm<T>,
    j: usize,
    kr: usize,
    w: &[T],
    stats: &[SummaryStats<T>],
    pairs: &[PairEstepResult<T>],
    cov_floor: T,
) -> Result<Hmm<T>> {
    let (nr, mr, d) = (prev.n_states(), prev.n_mix(), prev.dim());
    let kind = prev.covariance_kind();
    let live = |i: usize| w[i] > T::zero();

    let mut start = vec![T::zero(); nr];
    let mut trans = Array2::<T>::zeros((nr, nr));
    for (i, st) in stats.iter().skip(j).step_by(kr).enumerate() {
        if !live(i) {
            continue;
        }
        for s in 0..nr {
            start[s] += w[i] * st.nu1_agg[s];
        }
        trans.scaled_add(w[i], &st.xi_agg);
    }
    let initial = normalize_or_keep(&start, prev.initial().view())?;
    let mut transitions = Array2::zeros((nr, nr));
    for r in 0..nr {
        let row = normalize_or_keep(&trans.row(r).to_vec(), prev.transitions().row(r))?;
        transitions.row_mut(r).assign(&row);
    }

    let mut emissions = Vec::with_capacity(nr);
    for rho in 0..nr {
        let prev_mix = &prev.emissions()[rho];
        // Weight of base Gaussian (i, β, m) in reduced component ℓ of state ρ.
        let weight = |i: usize, beta: usize, m: usize, l: usize| -> T {
            let idx = i * kr + j;
            let nu = stats[idx].nu_agg[[rho, beta]];
            let c = base.components()[i].emissions()[beta].weights()[m];
            w[i] * nu * c * pairs[idx].eta_at(beta, rho).eta[[m, l]]
        };
        let mut masses = vec![T::zero(); mr];
        let mut gaussians = Vec::with_capacity(mr);
        for l in 0..mr {
            let mut mass = T::zero();
            let mut mean = Array1::<T>::zeros(d);
            for (i, bi) in base.components().iter().enumerate() {
                if !live(i) {
                    continue;
                }
                for (beta, mix) in bi.emissions().iter().enumerate() {
                    for (m, g) in mix.components().iter().enumerate() {
                        let wt = weight(i, beta, m, l);
                        if wt > T::zero() {
                            mass += wt;
                            mean.scaled_add(wt, g.mean());
                        }
                    }
                }
            }
            masses[l] = mass;
            if !(mass > T::zero()) {
                gaussians.push(prev_mix.components()[l].clone());
                continue;
            }
            mean /= mass;
            let mut cov = match kind {
                CovarianceType::Diagonal => Covariance::Diagonal(Array1::zeros(d)),
                CovarianceType::Full => Covariance::Full(Array2::zeros((d, d))),
            };
            for (i, bi) in base.components().iter().enumerate() {
                if !live(i) {
                    continue;
                }
                for (beta, mix) in bi.emissions().iter().enumerate() {
                    for (m, g) in mix.components().iter().enumerate() {
                        let wt = weight(i, beta, m, l);
                        if wt > T::zero() {
                            accumulate_spread(&mut cov, g, &mean, wt);
                        }
                    }
                }
            }
            let cov = match cov {
                Covariance::Diagonal(v) => Covariance::Diagonal(v / mass),
                Covariance::Full(m) => Covariance::Full(m / mass),
            };
            gaussians.push(gaussian_floored(mean, cov, cov_floor)?);
        }
        if masses.iter().copied().sum::<T>() > T::zero() {
            let c = Array1::from(solve_weighted_log(&masses)?);
            emissions.push(GaussianMixture::new(c, gaussians)?);
        } else {
            emissions.push(prev_mix.clone());
        }
    }
    Hmm::new(initial, transitions, emissions)
}

/// Adds `wt · [Σ_b + (μ_b − μ)(μ_b − μ)ᵀ]`, keeping only the diagonal when the
/// target is diagonal.
fn accumulate_spread<T: Scalar>(acc: &mut Covariance<T>, g: &Gaussian<T>, mean: &Array1<T>, wt: T) {
    let diff = g.mean() - mean;
    match acc {
        Covariance::Diagonal(v) => {
            for k in 0..v.len() {
                v[k] += wt * (g.covariance().diag(k) + diff[k] * diff[k]);
            }
        }
        Covariance::Full(m) => {
            let d = m.nrows();
            match g.covariance() {
                Covariance::Diagonal(var) => {
                    for k in 0..d {
                        m[[k, k]] += wt * var[k];
                    }
                }
                Covariance::Full(c) => m.scaled_add(wt, c),
            }
            for a in 0..d {
                for b in 0..d {
                    m[[a, b]] += wt * diff[a] * diff[b];
                }
            }
        }
    }
}
