//! Reference value of the pairwise variational objective by explicit path
//! enumeration. Slow by design; used to validate the backward recursion.

use ndarray::{Array2, Array3};

use crate::error::{Error, Result};
use crate::gmm::gmm_expected_loglik_opt;
use crate::hmm::Hmm;
use crate::optim::solve_softmax_log;
use crate::scalar::Scalar;

/// Largest number of joint (base, reduced) state paths the oracle will enumerate.
pub const BRUTEFORCE_LIMIT: u128 = 1_000_000;

fn paths(n: usize, len: usize) -> Vec<Vec<usize>> {
    let count = n.pow(len as u32);
    (0..count)
        .map(|mut code| {
            (0..len)
                .map(|_| {
                    let s = code % n;
                    code /= n;
                    s
                })
                .collect()
        })
        .collect()
}

fn ln<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        x.ln()
    } else {
        T::neg_infinity()
    }
}

struct Tables<'a, T> {
    base: &'a Hmm<T>,
    reduced: &'a Hmm<T>,
    ell: Array2<T>,
    tau: usize,
    /// `[β, ρ]` for the first step.
    first: Array2<T>,
    /// `[ρ_prev, β, ρ]` for steps `2..=τ`, stored at `t − 2`.
    later: Vec<Array3<T>>,
}

impl<T: Scalar> Tables<'_, T> {
    fn factor(&self, t: usize, prev: usize, b: usize, r: usize) -> T {
        self.later[t - 2][[prev, b, r]]
    }

    /// Expected value of the remaining steps after `t`, given the base is in
    /// `bt` and the reduced chain in `rt` at step `t`, under the factors
    /// already fixed for steps after `t`.
    fn future(&self, t: usize, bt: usize, rt: usize) -> T {
        let len = self.tau - t;
        if len == 0 {
            return T::zero();
        }
        let ab = self.base.transitions();
        let ar = self.reduced.transitions();
        let mut total = T::zero();
        for bs in paths(self.base.n_states(), len) {
            let mut pb = T::one();
            let mut prev = bt;
            for &b in &bs {
                pb *= ab[[prev, b]];
                prev = b;
            }
            if pb == T::zero() {
                continue;
            }
            for rs in paths(self.reduced.n_states(), len) {
                let (mut q, mut val, mut rp) = (T::one(), T::zero(), rt);
                for (k, (&b, &r)) in bs.iter().zip(&rs).enumerate() {
                    let phi = self.factor(t + 1 + k, rp, b, r);
                    if phi == T::zero() {
                        q = T::zero();
                        break;
                    }
                    q *= phi;
                    val = val + ln(ar[[rp, r]]) + self.ell[[b, r]] - phi.ln();
                    rp = r;
                }
                if q > T::zero() {
                    total += pb * q * val;
                }
            }
        }
        total
    }

    /// The variational objective at the stored factors, summed over every
    /// joint path.
    fn evaluate(&self) -> T {
        let (nb, nr) = (self.base.n_states(), self.reduced.n_states());
        let (pb0, ab) = (self.base.initial(), self.base.transitions());
        let (pr0, ar) = (self.reduced.initial(), self.reduced.transitions());
        let all_r = paths(nr, self.tau);
        let mut total = T::zero();
        for bs in paths(nb, self.tau) {
            let mut pb = pb0[bs[0]];
            for w in bs.windows(2) {
                pb *= ab[[w[0], w[1]]];
            }
            if pb == T::zero() {
                continue;
            }
            for rs in &all_r {
                let mut q = self.first[[bs[0], rs[0]]];
                if q == T::zero() {
                    continue;
                }
                let mut val = ln(pr0[rs[0]]) + self.ell[[bs[0], rs[0]]] - q.ln();
                for t in 2..=self.tau {
                    let (b, r, rp) = (bs[t - 1], rs[t - 1], rs[t - 2]);
                    let phi = self.factor(t, rp, b, r);
                    if phi == T::zero() {
                        q = T::zero();
                        break;
                    }
                    q *= phi;
                    val = val + ln(ar[[rp, r]]) + self.ell[[b, r]] - phi.ln();
                }
                if q > T::zero() {
                    total += pb * q * val;
                }
            }
        }
        total
    }
}

/// Maximizes the pairwise objective over factored variational distributions by
/// solving each stage's simplex problem with every later stage fixed, then
/// evaluates the objective at the optimum by summing over all joint paths.
pub fn elhmm_bruteforce<T: Scalar>(base: &Hmm<T>, reduced: &Hmm<T>, tau: usize) -> Result<T> {
    if tau == 0 {
        return Err(Error::Config("virtual sequence length must be at least 1".into()));
    }
    if base.dim() != reduced.dim() {
        return Err(Error::DimensionMismatch { expected: reduced.dim(), got: base.dim() });
    }
    let (nb, nr) = (base.n_states(), reduced.n_states());
    let size = ((nb * nr) as u128).checked_pow(tau as u32).unwrap_or(u128::MAX);
    if size > BRUTEFORCE_LIMIT {
        return Err(Error::SizeGuard { size, limit: BRUTEFORCE_LIMIT });
    }
    let mut ell = Array2::zeros((nb, nr));
    for b in 0..nb {
        for r in 0..nr {
            ell[[b, r]] = gmm_expected_loglik_opt(&base.emissions()[b], &reduced.emissions()[r])?;
        }
    }
    let mut tables = Tables {
        base,
        reduced,
        ell,
        tau,
        first: Array2::zeros((nb, nr)),
        later: vec![Array3::zeros((nr, nb, nr)); tau - 1],
    };
    let ar = reduced.transitions();
    for t in (2..=tau).rev() {
        let mut stage = Array3::zeros((nr, nb, nr));
        for rp in 0..nr {
            for b in 0..nb {
                let gains: Vec<T> =
                    (0..nr).map(|r| ln(ar[[rp, r]]) + tables.ell[[b, r]] + tables.future(t, b, r)).collect();
                let (p, _) = solve_softmax_log(&gains)?;
                for r in 0..nr {
                    stage[[rp, b, r]] = p[r];
                }
            }
        }
        tables.later[t - 2] = stage;
    }
    for b in 0..nb {
        let gains: Vec<T> =
            (0..nr).map(|r| ln(reduced.initial()[r]) + tables.ell[[b, r]] + tables.future(1, b, r)).collect();
        let (p, _) = solve_softmax_log(&gains)?;
        for r in 0..nr {
            tables.first[[b, r]] = p[r];
        }
    }
    Ok(tables.evaluate())
}
