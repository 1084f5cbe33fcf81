//! Hidden Markov models with Gaussian-mixture emissions.

mod baum_welch;
mod kmeans;

pub use baum_welch::{baum_welch, EmConfig, HmmFit};
pub(crate) use baum_welch::{
    forward_backward, gaussian_floored, init_hmm, reestimate, relative_improvement, StatsAccumulator,
};
pub(crate) use kmeans::kmeans;

use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;

use crate::error::{Error, Result};
use crate::gaussian::CovarianceType;
use crate::gmm::{check_stochastic, GaussianMixture};
use crate::scalar::Scalar;

/// An observation sequence: `τ` rows of dimension `d`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequence<T> {
    observations: Array2<T>,
    pub id: Option<String>,
}

impl<T: Scalar> Sequence<T> {
    pub fn new(observations: Array2<T>) -> Result<Self> {
        if observations.nrows() == 0 {
            return Err(Error::EmptySequence);
        }
        if observations.ncols() == 0 {
            return Err(Error::InvalidModel("observations have dimension 0".into()));
        }
        if observations.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidModel("observation is not finite".into()));
        }
        Ok(Self { observations, id: None })
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = Some(id.into());
        self
    }

    pub fn len(&self) -> usize {
        self.observations.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.observations.ncols()
    }

    pub fn observations(&self) -> &Array2<T> {
        &self.observations
    }

    pub fn at(&self, t: usize) -> ArrayView1<'_, T> {
        self.observations.row(t)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hmm<T> {
    initial: Array1<T>,
    transitions: Array2<T>,
    emissions: Vec<GaussianMixture<T>>,
}

impl<T: Scalar> Hmm<T> {
    pub fn new(initial: Array1<T>, transitions: Array2<T>, emissions: Vec<GaussianMixture<T>>) -> Result<Self> {
        let n = initial.len();
        if n == 0 {
            return Err(Error::InvalidModel("hmm needs at least one state".into()));
        }
        if transitions.dim() != (n, n) {
            return Err(Error::InvalidModel(format!("transition matrix is {:?}, expected {n}x{n}", transitions.dim())));
        }
        if emissions.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: emissions.len() });
        }
        check_stochastic(initial.as_slice().expect("contiguous"), "initial distribution")?;
        for (r, row) in transitions.rows().into_iter().enumerate() {
            check_stochastic(&row.to_vec(), &format!("transition row {r}"))?;
        }
        let (m, d) = (emissions[0].n_components(), emissions[0].dim());
        for (s, e) in emissions.iter().enumerate() {
            if e.n_components() != m || e.dim() != d {
                return Err(Error::InvalidModel(format!(
                    "emission of state {s} has shape (M={}, d={}), expected (M={m}, d={d})",
                    e.n_components(),
                    e.dim()
                )));
            }
        }
        Ok(Self { initial, transitions, emissions })
    }

    pub fn n_states(&self) -> usize {
        self.initial.len()
    }

    pub fn n_mix(&self) -> usize {
        self.emissions[0].n_components()
    }

    pub fn dim(&self) -> usize {
        self.emissions[0].dim()
    }

    pub fn initial(&self) -> &Array1<T> {
        &self.initial
    }

    pub fn transitions(&self) -> &Array2<T> {
        &self.transitions
    }

    pub fn emissions(&self) -> &[GaussianMixture<T>] {
        &self.emissions
    }

    pub fn covariance_kind(&self) -> CovarianceType {
        self.emissions[0].covariance_kind()
    }

    /// True when both models have the same number of states, mixture size and dimension.
    pub fn compatible_with(&self, other: &Hmm<T>) -> bool {
        self.n_states() == other.n_states() && self.n_mix() == other.n_mix() && self.dim() == other.dim()
    }

    /// `log p(y_t | x_t = β)` for every time step and state.
    pub fn emission_logprobs(&self, seq: &Sequence<T>) -> Result<Array2<T>> {
        if seq.dim() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: seq.dim() });
        }
        let mut out = Array2::zeros((seq.len(), self.n_states()));
        for t in 0..seq.len() {
            for (b, e) in self.emissions.iter().enumerate() {
                out[[t, b]] = e.log_density(seq.at(t));
            }
        }
        Ok(out)
    }
}

/// Scaled forward pass over precomputed emission log-probabilities. Each step
/// is normalized, so only the running log-scale grows with `τ`.
pub(crate) fn scaled_forward<T: Scalar>(model: &Hmm<T>, logb: &Array2<T>) -> (Array2<T>, Vec<T>, T) {
    let (tau, n) = logb.dim();
    let mut alpha = Array2::zeros((tau, n));
    let mut scales = Vec::with_capacity(tau);
    let mut loglik = T::zero();
    for t in 0..tau {
        let shift = logb.row(t).iter().copied().fold(T::neg_infinity(), T::max);
        let mut total = T::zero();
        for g in 0..n {
            let prior = if t == 0 {
                model.initial[g]
            } else {
                (0..n).map(|b| alpha[[t - 1, b]] * model.transitions[[b, g]]).sum()
            };
            let v = prior * (logb[[t, g]] - shift).exp();
            alpha[[t, g]] = v;
            total += v;
        }
        for g in 0..n {
            alpha[[t, g]] /= total;
        }
        scales.push(total);
        loglik = loglik + total.ln() + shift;
    }
    (alpha, scales, loglik)
}

/// `log p(y_{1:τ} | model)` via the scaled forward recursion.
pub fn forward_loglik<T: Scalar>(model: &Hmm<T>, seq: &Sequence<T>) -> Result<T> {
    let logb = model.emission_logprobs(seq)?;
    let (_, _, ll) = scaled_forward(model, &logb);
    Ok(ll)
}

pub(crate) fn draw_index<T: Scalar, R: Rng + ?Sized>(probs: ArrayView1<T>, rng: &mut R) -> usize {
    let u = T::of(rng.random::<f64>());
    let mut acc = T::zero();
    for (k, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return k;
        }
    }
    // Rounding left u above the cumulative sum; fall back to the last state with mass.
    probs.iter().rposition(|&p| p > T::zero()).unwrap_or(probs.len() - 1)
}

/// Draws a state path from `π` and `A`, then one observation per step from the
/// state's mixture. Returns the sequence and the path.
pub fn sample<T: Scalar, R: Rng + ?Sized>(
    model: &Hmm<T>,
    tau: usize,
    rng: &mut R,
) -> Result<(Sequence<T>, Vec<usize>)> {
    if tau == 0 {
        return Err(Error::EmptySequence);
    }
    let mut states = Vec::with_capacity(tau);
    let mut obs = Array2::zeros((tau, model.dim()));
    let mut state = draw_index(model.initial.view(), rng);
    for t in 0..tau {
        if t > 0 {
            state = draw_index(model.transitions.row(state), rng);
        }
        states.push(state);
        obs.row_mut(t).assign(&model.emissions[state].sample(rng));
    }
    Ok((Sequence::new(obs)?, states))
}

/// Prior state occupancy `P(x_t = γ)` for `t = 1..τ` (rows).
pub fn state_marginals<T: Scalar>(model: &Hmm<T>, tau: usize) -> Array2<T> {
    let n = model.n_states();
    let mut out = Array2::zeros((tau, n));
    if tau == 0 {
        return out;
    }
    out.row_mut(0).assign(&model.initial);
    for t in 1..tau {
        let next = out.row(t - 1).dot(&model.transitions);
        out.row_mut(t).assign(&next);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::{Covariance, Gaussian};
    use crate::optim::log_sum_exp;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn g1(mean: f64, var: f64) -> Gaussian<f64> {
        Gaussian::new(array![mean], Covariance::Diagonal(array![var])).unwrap()
    }

    fn random_stochastic(rng: &mut ChaCha8Rng, n: usize) -> Array1<f64> {
        let raw: Array1<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
        let s = raw.sum();
        raw / s
    }

    fn random_hmm(rng: &mut ChaCha8Rng, n: usize, m: usize) -> Hmm<f64> {
        let initial = random_stochastic(rng, n);
        let mut trans = Array2::zeros((n, n));
        for r in 0..n {
            trans.row_mut(r).assign(&random_stochastic(rng, n));
        }
        let emissions = (0..n)
            .map(|_| {
                let comps = (0..m).map(|_| g1(rng.random_range(-3.0..3.0), rng.random_range(0.3..2.0))).collect();
                GaussianMixture::new(random_stochastic(rng, m), comps).unwrap()
            })
            .collect();
        Hmm::new(initial, trans, emissions).unwrap()
    }

    /// Sum over every state path of π_{x_{1:τ}} ∏ p(y_t | x_t).
    fn enumerate_loglik(model: &Hmm<f64>, seq: &Sequence<f64>) -> f64 {
        let n = model.n_states();
        let tau = seq.len();
        let logb = model.emission_logprobs(seq).unwrap();
        let mut terms = Vec::new();
        for code in 0..n.pow(tau as u32) {
            let mut c = code;
            let path: Vec<usize> = (0..tau)
                .map(|_| {
                    let s = c % n;
                    c /= n;
                    s
                })
                .collect();
            let mut lp = model.initial()[path[0]].ln() + logb[[0, path[0]]];
            for t in 1..tau {
                lp += model.transitions()[[path[t - 1], path[t]]].ln() + logb[[t, path[t]]];
            }
            terms.push(lp);
        }
        log_sum_exp(&terms)
    }

    #[test]
    fn single_state_single_component_is_iid() {
        let g = g1(0.5, 2.0);
        let model = Hmm::new(array![1.0], array![[1.0]], vec![GaussianMixture::single(g.clone())]).unwrap();
        let seq = Sequence::new(array![[0.1], [1.2], [-0.3]]).unwrap();
        let expect: f64 = (0..3).map(|t| g.log_density(seq.at(t))).sum();
        assert_abs_diff_eq!(forward_loglik(&model, &seq).unwrap(), expect, epsilon = 1e-12);
    }

    #[test]
    fn one_step_is_initial_marginal() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let model = random_hmm(&mut rng, 3, 2);
        let seq = Sequence::new(array![[0.7]]).unwrap();
        let terms: Vec<f64> =
            (0..3).map(|b| model.initial()[b].ln() + model.emissions()[b].log_density(seq.at(0))).collect();
        assert_abs_diff_eq!(forward_loglik(&model, &seq).unwrap(), log_sum_exp(&terms), epsilon = 1e-12);
    }

    #[test]
    fn forward_matches_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for (n, tau) in [(2, 4), (3, 5), (2, 10), (4, 6)] {
            let model = random_hmm(&mut rng, n, 2);
            let (seq, _) = sample(&model, tau, &mut rng).unwrap();
            let fwd = forward_loglik(&model, &seq).unwrap();
            assert_abs_diff_eq!(fwd, enumerate_loglik(&model, &seq), epsilon = 1e-9);
        }
    }

    #[test]
    fn long_sequences_do_not_underflow() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let model = random_hmm(&mut rng, 3, 1);
        let (seq, _) = sample(&model, 2000, &mut rng).unwrap();
        let ll = forward_loglik(&model, &seq).unwrap();
        assert!(ll.is_finite() && ll < -100.0);
    }

    #[test]
    fn forward_rejects_wrong_dimension() {
        let model = Hmm::new(array![1.0], array![[1.0]], vec![GaussianMixture::single(g1(0.0, 1.0))]).unwrap();
        let seq = Sequence::new(array![[0.0, 1.0]]).unwrap();
        assert!(matches!(forward_loglik(&model, &seq), Err(Error::DimensionMismatch { .. })));
        assert!(matches!(Sequence::<f64>::new(Array2::zeros((0, 1))), Err(Error::EmptySequence)));
    }

    #[test]
    fn degenerate_model_samples_deterministic_path() {
        let model = Hmm::new(
            array![1.0, 0.0],
            array![[0.0, 1.0], [1.0, 0.0]],
            vec![GaussianMixture::single(g1(-1.0, 1.0)), GaussianMixture::single(g1(1.0, 1.0))],
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (_, path) = sample(&model, 6, &mut rng).unwrap();
        assert_eq!(path, vec![0, 1, 0, 1, 0, 1]);
    }

    #[test]
    fn sampling_is_seed_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let model = random_hmm(&mut rng, 3, 2);
        let a = sample(&model, 20, &mut ChaCha8Rng::seed_from_u64(99)).unwrap();
        let b = sample(&model, 20, &mut ChaCha8Rng::seed_from_u64(99)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn initial_state_frequencies_match_pi() {
        let model = Hmm::new(
            array![0.2, 0.3, 0.5],
            Array2::from_elem((3, 3), 1.0 / 3.0),
            (0..3).map(|b| GaussianMixture::single(g1(b as f64, 1.0))).collect(),
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let n = 100_000;
        let mut counts = [0usize; 3];
        for _ in 0..n {
            counts[sample(&model, 1, &mut rng).unwrap().1[0]] += 1;
        }
        for (b, &c) in counts.iter().enumerate() {
            let p = model.initial()[b];
            let sd = (p * (1.0 - p) / n as f64).sqrt();
            assert!((c as f64 / n as f64 - p).abs() <= 3.0 * sd, "state {b}: {c}");
        }
    }

    #[test]
    fn marginals_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let model = random_hmm(&mut rng, 3, 1);
        let m = state_marginals(&model, 5);
        assert_eq!(m.row(0), model.initial().view());
        for row in m.rows() {
            assert_abs_diff_eq!(row.sum(), 1.0, epsilon = 1e-12);
        }

        let flip = Hmm::new(
            array![1.0, 0.0],
            array![[0.0, 1.0], [1.0, 0.0]],
            vec![GaussianMixture::single(g1(0.0, 1.0)), GaussianMixture::single(g1(1.0, 1.0))],
        )
        .unwrap();
        assert_eq!(state_marginals(&flip, 3).row(2), array![1.0, 0.0].view());

        let doubly = Hmm::new(
            array![0.5, 0.5],
            array![[0.3, 0.7], [0.7, 0.3]],
            vec![GaussianMixture::single(g1(0.0, 1.0)), GaussianMixture::single(g1(1.0, 1.0))],
        )
        .unwrap();
        for row in state_marginals(&doubly, 6).rows() {
            assert_abs_diff_eq!(row[0], 0.5, epsilon = 1e-15);
        }
    }

    #[test]
    fn validation_names_the_bad_row() {
        let err = Hmm::new(
            array![0.5, 0.5],
            array![[0.5, 0.4], [0.5, 0.5]],
            vec![GaussianMixture::single(g1(0.0, 1.0)), GaussianMixture::single(g1(1.0, 1.0))],
        )
        .unwrap_err();
        assert!(err.to_string().contains("transition row 0"), "{err}");
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]
            #[test]
            fn forward_equals_enumeration(seed in 0u64..100_000, n in 1usize..=3, tau in 1usize..=6) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let model = random_hmm(&mut rng, n, 2);
                let (seq, _) = sample(&model, tau, &mut rng).unwrap();
                let fwd = forward_loglik(&model, &seq).unwrap();
                prop_assert!((fwd - enumerate_loglik(&model, &seq)).abs() <= 1e-9);
            }
        }
    }
}
