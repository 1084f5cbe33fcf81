//! Variational E-step for one (base, reduced) HMM pair, the summary statistics
//! derived from it, and the component assignments across the whole mixture.

use ndarray::{Array1, Array2, Array3};

use crate::error::{Error, Result};
use crate::gmm::{gmm_variational, EmissionResponsibility};
use crate::hmm::Hmm;
use crate::optim::{softmax_into, solve_softmax_log};
use crate::scalar::Scalar;

/// Optimal variational factors for one pair of HMMs over sequences of length τ.
#[derive(Debug, Clone, PartialEq)]
pub struct PairEstepResult<T> {
    /// Emission responsibilities, indexed `β · N_r + ρ`.
    pub eta: Vec<EmissionResponsibility<T>>,
    /// `[ρ, β]`: reduced start-state distribution for each base start state.
    pub phi_initial: Array2<T>,
    /// One `[ρ_prev, ρ, β]` table per step `t = 2..τ`.
    pub phi_step: Vec<Array3<T>>,
    /// `[β, ρ]`: variational expected log-likelihood between emission mixtures.
    pub state_ell: Array2<T>,
    /// Lower bound on `E_{y ~ base}[log p(y_{1:τ} | reduced)]`.
    pub objective: T,
}

impl<T> PairEstepResult<T> {
    pub fn tau(&self) -> usize {
        self.phi_step.len() + 1
    }

    pub fn eta_at(&self, beta: usize, rho: usize) -> &EmissionResponsibility<T> {
        &self.eta[beta * self.state_ell.ncols() + rho]
    }
}

/// `log x`, with the convention that zero probabilities stay `-inf` without
/// producing NaNs downstream.
fn ln<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        x.ln()
    } else {
        T::neg_infinity()
    }
}

/// Backward recursion over the reduced state chain. Everything is carried in
/// the log domain; only the normalized factors are exponentiated.
pub fn estep_pair<T: Scalar>(base: &Hmm<T>, reduced: &Hmm<T>, tau: usize) -> Result<PairEstepResult<T>> {
    if tau == 0 {
        return Err(Error::Config("virtual sequence length must be at least 1".into()));
    }
    if base.dim() != reduced.dim() {
        return Err(Error::DimensionMismatch { expected: reduced.dim(), got: base.dim() });
    }
    let (nb, nr) = (base.n_states(), reduced.n_states());
    let mut eta = Vec::with_capacity(nb * nr);
    let mut ell = Array2::zeros((nb, nr));
    for b in 0..nb {
        for r in 0..nr {
            let (e, v) = gmm_variational(&base.emissions()[b], &reduced.emissions()[r])?;
            eta.push(e);
            ell[[b, r]] = v;
        }
    }

    let log_ar = reduced.transitions().mapv(ln);
    let ab = base.transitions();
    let mut future = Array2::<T>::zeros((nb, nr));
    let mut phi_step = vec![Array3::zeros((nr, nr, nb)); tau - 1];
    let mut logits = vec![T::zero(); nr];
    let mut row = vec![T::zero(); nr];
    for t in (2..=tau).rev() {
        let phi = &mut phi_step[t - 2];
        let mut lse = Array2::<T>::zeros((nr, nb));
        for rp in 0..nr {
            for b in 0..nb {
                for r in 0..nr {
                    logits[r] = log_ar[[rp, r]] + ell[[b, r]] + future[[b, r]];
                }
                lse[[rp, b]] = softmax_into(&logits, &mut row)?;
                for r in 0..nr {
                    phi[[rp, r, b]] = row[r];
                }
            }
        }
        let mut next = Array2::<T>::zeros((nb, nr));
        for bp in 0..nb {
            for rp in 0..nr {
                let mut acc = T::zero();
                for b in 0..nb {
                    let a = ab[[bp, b]];
                    if a > T::zero() {
                        acc += a * lse[[rp, b]];
                    }
                }
                next[[bp, rp]] = acc;
            }
        }
        future = next;
    }

    let log_pr = reduced.initial().mapv(ln);
    let mut phi_initial = Array2::zeros((nr, nb));
    let mut objective = T::zero();
    for b in 0..nb {
        for r in 0..nr {
            logits[r] = log_pr[r] + ell[[b, r]] + future[[b, r]];
        }
        let lse = softmax_into(&logits, &mut row)?;
        for r in 0..nr {
            phi_initial[[r, b]] = row[r];
        }
        let pb = base.initial()[b];
        if pb > T::zero() {
            objective += pb * lse;
        }
    }
    Ok(PairEstepResult { eta, phi_initial, phi_step, state_ell: ell, objective })
}

/// Expected state-pair counts under the base chain and the variational factors.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryStats<T> {
    /// `[σ, γ]` at the first step.
    pub nu_1: Array2<T>,
    /// `[σ, γ]` for every step `t = 1..τ`.
    pub nu_steps: Vec<Array2<T>>,
    /// `[σ, γ]` summed over steps.
    pub nu_agg: Array2<T>,
    /// Expected number of starts in each reduced state.
    pub nu1_agg: Array1<T>,
    /// `[ρ, σ]`: expected reduced transitions, summed over steps and base states.
    pub xi_agg: Array2<T>,
}

pub fn summary_stats<T: Scalar>(base: &Hmm<T>, pair: &PairEstepResult<T>) -> Result<SummaryStats<T>> {
    let (nr, nb) = pair.phi_initial.dim();
    if nb != base.n_states() {
        return Err(Error::DimensionMismatch { expected: base.n_states(), got: nb });
    }
    let ab = base.transitions();
    let mut nu_1 = Array2::zeros((nr, nb));
    for s in 0..nr {
        for g in 0..nb {
            nu_1[[s, g]] = base.initial()[g] * pair.phi_initial[[s, g]];
        }
    }
    let mut xi_agg = Array2::zeros((nr, nr));
    let mut nu_steps = Vec::with_capacity(pair.tau());
    nu_steps.push(nu_1.clone());
    for phi in &pair.phi_step {
        let prev = nu_steps.last().expect("seeded with the first step");
        // `reach[ρ, γ] = Σ_β ν_{t−1}(ρ, β) a^b_{βγ}`
        let reach = prev.dot(ab);
        let mut nu = Array2::zeros((nr, nb));
        for r in 0..nr {
            for s in 0..nr {
                let mut row_sum = T::zero();
                for g in 0..nb {
                    let xi = reach[[r, g]] * phi[[r, s, g]];
                    nu[[s, g]] += xi;
                    row_sum += xi;
                }
                xi_agg[[r, s]] += row_sum;
            }
        }
        nu_steps.push(nu);
    }
    let mut nu_agg = Array2::zeros((nr, nb));
    for nu in &nu_steps {
        nu_agg += nu;
    }
    let nu1_agg = nu_1.sum_axis(ndarray::Axis(1));
    Ok(SummaryStats { nu_1, nu_steps, nu_agg, nu1_agg, xi_agg })
}

/// Soft assignment of base components (rows) to reduced components (columns).
#[derive(Debug, Clone, PartialEq)]
pub struct AssignmentMatrix<T> {
    pub z: Array2<T>,
}

impl<T: Scalar> AssignmentMatrix<T> {
    /// Argmax per row; ties go to the lowest column.
    pub fn hard_labels(&self) -> Vec<usize> {
        self.z
            .rows()
            .into_iter()
            .map(|row| {
                let mut best = 0;
                for (j, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = j;
                    }
                }
                best
            })
            .collect()
    }
}

/// `z_ij ∝ ω_j exp(N_i J_ij)`, normalized per row in the log domain.
pub fn compute_assignments<T: Scalar>(
    objectives: &Array2<T>,
    reduced_weights: &[T],
    virtual_counts: &[T],
) -> Result<AssignmentMatrix<T>> {
    let (kb, kr) = objectives.dim();
    if reduced_weights.len() != kr {
        return Err(Error::DimensionMismatch { expected: kr, got: reduced_weights.len() });
    }
    if virtual_counts.len() != kb {
        return Err(Error::DimensionMismatch { expected: kb, got: virtual_counts.len() });
    }
    let mut z = Array2::zeros((kb, kr));
    for i in 0..kb {
        let logits: Vec<T> = (0..kr).map(|j| ln(reduced_weights[j]) + virtual_counts[i] * objectives[[i, j]]).collect();
        let (p, _) = solve_softmax_log(&logits)?;
        for j in 0..kr {
            z[[i, j]] = p[j];
        }
    }
    Ok(AssignmentMatrix { z })
}

/// `Σ_ij z_ij [log ω_j − log z_ij + N_i J_ij]`; zero assignments contribute nothing.
pub fn lower_bound<T: Scalar>(
    reduced_weights: &[T],
    z: &AssignmentMatrix<T>,
    objectives: &Array2<T>,
    virtual_counts: &[T],
) -> T {
    let mut total = T::zero();
    for ((i, j), &zij) in z.z.indexed_iter() {
        if zij > T::zero() {
            total += zij * (ln(reduced_weights[j]) - zij.ln() + virtual_counts[i] * objectives[[i, j]]);
        }
    }
    total
}
