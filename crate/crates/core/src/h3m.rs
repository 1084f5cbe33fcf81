//! Mixtures of HMMs: likelihood, EM estimation from sequences, sampling, and
//! a Monte Carlo estimator of the expected log-likelihood between two HMMs.

use ndarray::{Array1, Array2};
use rand::Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gmm::check_stochastic;
use crate::hmm::{
    self, draw_index, forward_backward, forward_loglik, init_hmm, reestimate, EmConfig, Hmm, Sequence, StatsAccumulator,
};
use crate::optim::{log_sum_exp, solve_weighted_log};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct H3m<T> {
    weights: Array1<T>,
    components: Vec<Hmm<T>>,
}

impl<T: Scalar> H3m<T> {
    pub fn new(weights: Array1<T>, components: Vec<Hmm<T>>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::InvalidModel("mixture has no components".into()));
        }
        if weights.len() != components.len() {
            return Err(Error::DimensionMismatch { expected: components.len(), got: weights.len() });
        }
        check_stochastic(weights.as_slice().expect("contiguous"), "mixture weights")?;
        if let Some((i, _)) = components.iter().enumerate().find(|(_, c)| !c.compatible_with(&components[0])) {
            return Err(Error::InvalidModel(format!("component {i} is not structurally compatible with component 0")));
        }
        Ok(Self { weights, components })
    }

    /// Equal-weight mixture of the given HMMs.
    pub fn uniform(components: Vec<Hmm<T>>) -> Result<Self> {
        let k = components.len().max(1);
        Self::new(Array1::from_elem(components.len(), T::one() / T::of_usize(k)), components)
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn weights(&self) -> &Array1<T> {
        &self.weights
    }

    pub fn components(&self) -> &[Hmm<T>] {
        &self.components
    }

    pub fn into_parts(self) -> (Array1<T>, Vec<Hmm<T>>) {
        (self.weights, self.components)
    }
}

/// `log Σ_i ω_i p(y | M_i)`.
pub fn h3m_loglik<T: Scalar>(model: &H3m<T>, seq: &Sequence<T>) -> Result<T> {
    let terms = component_logliks(model, seq)?;
    Ok(log_sum_exp(&terms))
}

fn component_logliks<T: Scalar>(model: &H3m<T>, seq: &Sequence<T>) -> Result<Vec<T>> {
    model.components.iter().zip(&model.weights).map(|(c, w)| forward_loglik(c, seq).map(|ll| w.ln() + ll)).collect()
}

/// Posterior probability of each component for each sequence (rows).
pub fn h3m_posteriors<T: Scalar>(model: &H3m<T>, data: &[Sequence<T>]) -> Result<Array2<T>> {
    let rows = data.par_iter().map(|s| component_logliks(model, s)).collect::<Result<Vec<_>>>()?;
    let mut post = Array2::zeros((data.len(), model.len()));
    for (s, terms) in rows.iter().enumerate() {
        let lse = log_sum_exp(terms);
        for (k, t) in terms.iter().enumerate() {
            post[[s, k]] = (*t - lse).exp();
        }
    }
    Ok(post)
}

/// Most probable component for each sequence; ties go to the lowest index.
pub fn h3m_labels<T: Scalar>(model: &H3m<T>, data: &[Sequence<T>]) -> Result<Vec<usize>> {
    let post = h3m_posteriors(model, data)?;
    Ok(crate::vhem::AssignmentMatrix { z: post }.hard_labels())
}

#[derive(Debug, Clone)]
pub struct H3mFit<T> {
    pub model: H3m<T>,
    /// Row `s` is the posterior over components for sequence `s` under `model`.
    pub posteriors: Array2<T>,
    pub loglik_trace: Vec<T>,
    /// Trace indices at which a collapsed component was re-seeded. The trace is
    /// monotone within each segment between these indices.
    pub reseeds: Vec<usize>,
    pub converged: bool,
}

const MAX_RESEEDS: usize = 2;

fn sequence_means<T: Scalar>(data: &[Sequence<T>]) -> Array2<T> {
    let d = data[0].dim();
    let mut out = Array2::zeros((data.len(), d));
    for (s, seq) in data.iter().enumerate() {
        let n = T::of_usize(seq.len());
        for j in 0..d {
            out[[s, j]] = seq.observations().column(j).sum() / n;
        }
    }
    out
}

/// EM for a mixture of `k` HMMs, one component per sequence. With `k = 1` the
/// iterations are identical to [`hmm::baum_welch`] under the same seed.
pub fn h3m_em<T: Scalar, R: Rng + ?Sized>(
    data: &[Sequence<T>],
    k: usize,
    n_states: usize,
    n_mix: usize,
    config: &EmConfig,
    rng: &mut R,
) -> Result<H3mFit<T>> {
    if k == 0 {
        return Err(Error::Config("need at least one component".into()));
    }
    if data.len() < k {
        return Err(Error::Config(format!("{} sequences for {k} components", data.len())));
    }
    let n_seq = data.len();
    let (mut weights, mut comps) = if k == 1 {
        let refs: Vec<&Sequence<T>> = data.iter().collect();
        (Array1::ones(1), vec![init_hmm(&refs, n_states, n_mix, config, rng)?])
    } else {
        let (_, labels) = crate::hmm::kmeans(&sequence_means(data), k, 100, rng);
        let mut comps = Vec::with_capacity(k);
        let mut sizes = Vec::with_capacity(k);
        for c in 0..k {
            let mut subset: Vec<&Sequence<T>> =
                data.iter().zip(&labels).filter(|(_, &l)| l == c).map(|(s, _)| s).collect();
            if subset.is_empty() {
                subset.push(&data[rng.random_range(0..n_seq)]);
            }
            sizes.push(T::of_usize(subset.len()));
            comps.push(init_hmm(&subset, n_states, n_mix, config, rng)?);
        }
        (Array1::from(solve_weighted_log(&sizes)?), comps)
    };

    let d = comps[0].dim();
    let mut trace: Vec<T> = Vec::new();
    let mut reseeds: Vec<usize> = Vec::new();
    let mut converged = false;
    let mut post = Array2::zeros((n_seq, k));
    for iter in 0..config.max_iters {
        let stats = data
            .par_iter()
            .map(|s| comps.iter().map(|c| forward_backward(c, s, config.cov_type)).collect::<Result<Vec<_>>>())
            .collect::<Result<Vec<_>>>()?;
        let mut total = T::zero();
        let mut per_seq = Vec::with_capacity(n_seq);
        for (s, row) in stats.iter().enumerate() {
            let terms: Vec<T> = row.iter().zip(&weights).map(|(st, w)| w.ln() + st.loglik).collect();
            let lse = log_sum_exp(&terms);
            for (c, t) in terms.iter().enumerate() {
                post[[s, c]] = (*t - lse).exp();
            }
            per_seq.push(lse);
            total += lse;
        }
        if !total.is_finite() {
            return Err(Error::Estimation("mixture log-likelihood is not finite".into()));
        }
        let segment_start = reseeds.last().copied().unwrap_or(0);
        let prev = if trace.len() > segment_start { trace.last().copied() } else { None };
        trace.push(total);
        if let Some(p) = prev {
            if crate::hmm::relative_improvement(p.to_f64_lossy(), total.to_f64_lossy()) < config.tol {
                converged = true;
                break;
            }
        }
        if iter + 1 == config.max_iters {
            break;
        }

        let mass: Vec<T> = (0..k).map(|c| post.column(c).sum()).collect();
        let threshold = T::of_usize(n_seq) / T::of_usize(10 * k);
        if k > 1 && reseeds.len() < MAX_RESEEDS {
            if let Some(empty) = mass.iter().position(|&m| m < threshold) {
                let worst = per_seq
                    .iter()
                    .enumerate()
                    .min_by(|a, b| a.1.partial_cmp(b.1).unwrap_or(std::cmp::Ordering::Equal))
                    .map(|(s, _)| s)
                    .expect("nonempty data");
                if let Ok(h) = init_hmm(&[&data[worst]], n_states, n_mix, config, rng) {
                    comps[empty] = h;
                    weights[empty] = T::one() / T::of_usize(k);
                    let w = solve_weighted_log(weights.as_slice().expect("contiguous"))?;
                    weights = Array1::from(w);
                    reseeds.push(trace.len());
                    continue;
                }
            }
        }

        weights = Array1::from(solve_weighted_log(&mass)?);
        let mut next = Vec::with_capacity(k);
        for (c, comp) in comps.iter().enumerate() {
            let mut acc = StatsAccumulator::zeros(n_states, n_mix, d, config.cov_type);
            for (s, row) in stats.iter().enumerate() {
                let w = post[[s, c]];
                if w > T::zero() {
                    acc.add_scaled(&row[c], w);
                }
            }
            next.push(reestimate(comp, &acc, config)?);
        }
        comps = next;
    }
    Ok(H3mFit { model: H3m::new(weights, comps)?, posteriors: post, loglik_trace: trace, reseeds, converged })
}

/// Draws `count` sequences, each from a component chosen by `ω`. Returns the
/// sequence with its component index.
pub fn h3m_sample<T: Scalar, R: Rng + ?Sized>(
    model: &H3m<T>,
    tau: usize,
    count: usize,
    rng: &mut R,
) -> Result<Vec<(Sequence<T>, usize)>> {
    (0..count)
        .map(|_| {
            let z = draw_index(model.weights.view(), rng);
            hmm::sample(&model.components[z], tau, rng).map(|(s, _)| (s, z))
        })
        .collect()
}

/// Monte Carlo estimate of `E_{y ~ base}[log p(y_{1:τ} | reduced)]` with the
/// standard error of the mean.
pub fn mc_expected_loglik<T: Scalar, R: Rng + ?Sized>(
    base: &Hmm<T>,
    reduced: &Hmm<T>,
    tau: usize,
    n_samples: usize,
    rng: &mut R,
) -> Result<(T, T)> {
    if n_samples < 2 {
        return Err(Error::Config("need at least two samples".into()));
    }
    if base.dim() != reduced.dim() {
        return Err(Error::DimensionMismatch { expected: reduced.dim(), got: base.dim() });
    }
    let samples = (0..n_samples).map(|_| hmm::sample(base, tau, rng).map(|(s, _)| s)).collect::<Result<Vec<_>>>()?;
    let values = samples
        .par_iter()
        .map(|s| forward_loglik(reduced, s).map(|v| v.to_f64_lossy()))
        .collect::<Result<Vec<f64>>>()?;
    let n = n_samples as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    Ok((T::of(mean), T::of((var / n).sqrt())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::{gauss_expected_loglik, Covariance, Gaussian};
    use crate::gmm::GaussianMixture;
    use crate::hmm::baum_welch;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn g1(mean: f64, var: f64) -> Gaussian<f64> {
        Gaussian::new(array![mean], Covariance::Diagonal(array![var])).unwrap()
    }

    fn two_state(offset: f64) -> Hmm<f64> {
        Hmm::new(
            array![0.5, 0.5],
            array![[0.8, 0.2], [0.2, 0.8]],
            vec![GaussianMixture::single(g1(offset - 1.0, 1.0)), GaussianMixture::single(g1(offset + 1.0, 1.0))],
        )
        .unwrap()
    }

    fn std_normal_1state() -> Hmm<f64> {
        Hmm::new(array![1.0], array![[1.0]], vec![GaussianMixture::single(g1(0.0, 1.0))]).unwrap()
    }

    #[test]
    fn single_component_equals_forward() {
        let h = two_state(0.0);
        let mix = H3m::uniform(vec![h.clone()]).unwrap();
        let seq = Sequence::new(array![[0.1], [1.0], [-2.0]]).unwrap();
        assert_eq!(h3m_loglik(&mix, &seq).unwrap(), forward_loglik(&h, &seq).unwrap());
    }

    #[test]
    fn identical_components_collapse() {
        let h = two_state(1.0);
        let mix = H3m::new(array![0.2, 0.8], vec![h.clone(), h.clone()]).unwrap();
        let seq = Sequence::new(array![[0.3], [2.0]]).unwrap();
        assert_abs_diff_eq!(h3m_loglik(&mix, &seq).unwrap(), forward_loglik(&h, &seq).unwrap(), epsilon = 1e-12);
    }

    #[test]
    fn two_component_mixture_composes_forward_values() {
        let (a, b) = (two_state(-2.0), two_state(3.0));
        let mix = H3m::new(array![0.3, 0.7], vec![a.clone(), b.clone()]).unwrap();
        let seq = Sequence::new(array![[0.3], [2.0], [-1.0]]).unwrap();
        let (l1, l2) = (forward_loglik(&a, &seq).unwrap(), forward_loglik(&b, &seq).unwrap());
        let expect = (0.3 * l1.exp() + 0.7 * l2.exp()).ln();
        let got = h3m_loglik(&mix, &seq).unwrap();
        assert_abs_diff_eq!(got, expect, epsilon = 1e-12);
        assert!(got >= 0.3f64.ln() + l1 && got >= 0.7f64.ln() + l2);
    }

    #[test]
    fn sampling_respects_weights() {
        let mix = H3m::new(array![1.0, 0.0], vec![two_state(-5.0), two_state(5.0)]).unwrap();
        let draws = h3m_sample(&mix, 4, 200, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert!(draws.iter().all(|(_, z)| *z == 0));

        let mix = H3m::new(array![0.3, 0.7], vec![two_state(-5.0), two_state(5.0)]).unwrap();
        let n = 100_000;
        let draws = h3m_sample(&mix, 1, n, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let ones = draws.iter().filter(|(_, z)| *z == 1).count() as f64 / n as f64;
        assert!((ones - 0.7).abs() <= 3.0 * (0.21f64 / n as f64).sqrt());

        let a = h3m_sample(&mix, 5, 10, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let b = h3m_sample(&mix, 5, 10, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn monte_carlo_standard_normal_self_expectation() {
        let h = std_normal_1state();
        let (mean, se) = mc_expected_loglik(&h, &h, 10, 20_000, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let g = &h.emissions()[0].components()[0];
        let exact = 10.0 * gauss_expected_loglik(g, g).unwrap();
        assert_abs_diff_eq!(exact, -14.1894, epsilon = 1e-4);
        assert!((mean - exact).abs() <= 3.0 * se, "{mean} vs {exact} ± {se}");
    }

    #[test]
    fn monte_carlo_error_shrinks_with_samples() {
        let h = two_state(0.0);
        let (_, se1) = mc_expected_loglik(&h, &h, 5, 4_000, &mut ChaCha8Rng::seed_from_u64(6)).unwrap();
        let (_, se4) = mc_expected_loglik(&h, &h, 5, 16_000, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        let ratio = se1 / se4;
        assert!((ratio - 2.0).abs() <= 0.4, "ratio {ratio}");
    }

    #[test]
    fn monte_carlo_gibbs_inequality() {
        let (b, r) = (two_state(0.0), two_state(0.7));
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (self_mean, se_a) = mc_expected_loglik(&b, &b, 6, 20_000, &mut rng).unwrap();
        let (cross, se_b) = mc_expected_loglik(&b, &r, 6, 20_000, &mut rng).unwrap();
        assert!(cross <= self_mean + 3.0 * (se_a * se_a + se_b * se_b).sqrt());
    }

    fn two_population_data(seed: u64, per_pop: usize) -> (Vec<Sequence<f64>>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut data = Vec::new();
        let mut labels = Vec::new();
        for (z, h) in [two_state(-5.0), two_state(5.0)].iter().enumerate() {
            for _ in 0..per_pop {
                data.push(hmm::sample(h, 20, &mut rng).unwrap().0);
                labels.push(z);
            }
        }
        (data, labels)
    }

    #[test]
    fn mixture_em_separates_populations() {
        let (data, labels) = two_population_data(1, 30);
        let fit = h3m_em(&data, 2, 2, 1, &EmConfig::default(), &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let hard: Vec<usize> = fit.posteriors.rows().into_iter().map(|r| if r[0] >= r[1] { 0 } else { 1 }).collect();
        let agree = hard.iter().zip(&labels).filter(|(a, b)| a == b).count() as f64 / labels.len() as f64;
        assert!(agree.max(1.0 - agree) >= 0.95);
        for w in fit.loglik_trace.windows(2) {
            assert!(w[1] - w[0] >= -1e-8 * w[0].abs());
        }
    }

    #[test]
    fn single_component_em_is_baum_welch() {
        let (data, _) = two_population_data(2, 10);
        let cfg = EmConfig { max_iters: 15, ..EmConfig::default() };
        let em = h3m_em(&data, 1, 2, 1, &cfg, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let bw = baum_welch(&data, 2, 1, &cfg, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(em.loglik_trace, bw.loglik_trace);
        assert_eq!(em.model.components()[0], bw.model);
    }

    #[test]
    fn rejects_too_few_sequences() {
        let (data, _) = two_population_data(3, 1);
        assert!(h3m_em(&data, 3, 2, 1, &EmConfig::default(), &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }

    #[test]
    fn rejects_incompatible_components() {
        let err = H3m::uniform(vec![two_state(0.0), std_normal_1state()]).unwrap_err();
        assert!(matches!(err, Error::InvalidModel(_)));
    }
}
