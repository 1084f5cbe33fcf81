//! Maximum-likelihood estimation of a single HMM (Baum-Welch), with the
//! per-sequence statistics kept separate so mixture EM can reuse them with
//! sequence weights.

use std::collections::HashSet;

use ndarray::{s, Array1, Array2};
use rand::Rng;
use rand_distr::Exp1;
use rayon::prelude::*;

use super::kmeans::kmeans;
use super::{scaled_forward, Hmm, Sequence};
use crate::error::{Error, Result};
use crate::gaussian::{Covariance, CovarianceType, Gaussian};
use crate::gmm::GaussianMixture;
use crate::optim::{log_sum_exp, solve_weighted_log};
use crate::scalar::Scalar;

/// Settings shared by the EM estimators.
#[derive(Debug, Clone, PartialEq)]
pub struct EmConfig {
    pub max_iters: usize,
    /// Stop once the relative log-likelihood improvement falls below this.
    pub tol: f64,
    pub cov_floor: f64,
    pub cov_type: CovarianceType,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self { max_iters: 100, tol: 1e-6, cov_floor: 1e-6, cov_type: CovarianceType::Diagonal }
    }
}

#[derive(Debug, Clone)]
pub struct HmmFit<T> {
    pub model: Hmm<T>,
    /// Total log-likelihood of the data under the model at each iteration.
    pub loglik_trace: Vec<T>,
    pub converged: bool,
}

/// Expected sufficient statistics of one or more sequences.
#[derive(Debug, Clone)]
pub(crate) struct StatsAccumulator<T> {
    pub loglik: T,
    init: Array1<T>,
    trans: Array2<T>,
    /// Posterior mass per (state, component).
    occ: Array2<T>,
    /// Weighted first moments, row `β·M + m`.
    sum_y: Array2<T>,
    /// Weighted second moments per (state, component); `1×d` squares when diagonal.
    sum_yy: Vec<Array2<T>>,
}

impl<T: Scalar> StatsAccumulator<T> {
    pub fn zeros(n: usize, m: usize, d: usize, kind: CovarianceType) -> Self {
        let rows = if kind == CovarianceType::Full { d } else { 1 };
        Self {
            loglik: T::zero(),
            init: Array1::zeros(n),
            trans: Array2::zeros((n, n)),
            occ: Array2::zeros((n, m)),
            sum_y: Array2::zeros((n * m, d)),
            sum_yy: vec![Array2::zeros((rows, d)); n * m],
        }
    }

    pub fn add_scaled(&mut self, other: &Self, w: T) {
        self.loglik += w * other.loglik;
        self.init.scaled_add(w, &other.init);
        self.trans.scaled_add(w, &other.trans);
        self.occ.scaled_add(w, &other.occ);
        self.sum_y.scaled_add(w, &other.sum_y);
        for (a, b) in self.sum_yy.iter_mut().zip(&other.sum_yy) {
            a.scaled_add(w, b);
        }
    }
}

/// Forward-backward pass for one sequence, returning its expected statistics
/// and log-likelihood.
pub(crate) fn forward_backward<T: Scalar>(
    model: &Hmm<T>,
    seq: &Sequence<T>,
    kind: CovarianceType,
) -> Result<StatsAccumulator<T>> {
    if seq.dim() != model.dim() {
        return Err(Error::DimensionMismatch { expected: model.dim(), got: seq.dim() });
    }
    let (n, m, d, tau) = (model.n_states(), model.n_mix(), model.dim(), seq.len());
    let mut comp_log = vec![T::zero(); tau * n * m];
    let mut logb = Array2::zeros((tau, n));
    for t in 0..tau {
        for b in 0..n {
            let slot = &mut comp_log[(t * n + b) * m..(t * n + b + 1) * m];
            model.emissions()[b].component_log_densities(seq.at(t), slot);
            logb[[t, b]] = log_sum_exp(slot);
        }
    }
    let (alpha, scales, loglik) = scaled_forward(model, &logb);
    let emit: Array2<T> = {
        let mut e = Array2::zeros((tau, n));
        for t in 0..tau {
            let shift = logb.row(t).iter().copied().fold(T::neg_infinity(), T::max);
            for g in 0..n {
                e[[t, g]] = (logb[[t, g]] - shift).exp();
            }
        }
        e
    };
    let a = model.transitions();
    let mut beta = Array2::from_elem((tau, n), T::one());
    for t in (0..tau.saturating_sub(1)).rev() {
        for b in 0..n {
            let v: T = (0..n).map(|g| a[[b, g]] * emit[[t + 1, g]] * beta[[t + 1, g]]).sum();
            beta[[t, b]] = v / scales[t + 1];
        }
    }

    let mut stats = StatsAccumulator::zeros(n, m, d, kind);
    stats.loglik = loglik;
    for t in 0..tau {
        let mut gamma: Array1<T> = (&alpha.row(t) * &beta.row(t)).to_owned();
        let total = gamma.sum();
        gamma.mapv_inplace(|x| x / total);
        if t == 0 {
            stats.init.assign(&gamma);
        } else {
            for b in 0..n {
                for g in 0..n {
                    let x = alpha[[t - 1, b]] * a[[b, g]] * emit[[t, g]] * beta[[t, g]] / scales[t];
                    stats.trans[[b, g]] += x;
                }
            }
        }
        let y = seq.at(t);
        for b in 0..n {
            if gamma[b] == T::zero() {
                continue;
            }
            for k in 0..m {
                let r = gamma[b] * (comp_log[(t * n + b) * m + k] - logb[[t, b]]).exp();
                if r == T::zero() {
                    continue;
                }
                let idx = b * m + k;
                stats.occ[[b, k]] += r;
                stats.sum_y.row_mut(idx).scaled_add(r, &y);
                let yy = &mut stats.sum_yy[idx];
                match kind {
                    CovarianceType::Diagonal => {
                        for j in 0..d {
                            yy[[0, j]] += r * y[j] * y[j];
                        }
                    }
                    CovarianceType::Full => {
                        for i in 0..d {
                            for j in 0..d {
                                yy[[i, j]] += r * y[i] * y[j];
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(stats)
}

fn normalize_or_keep<T: Scalar>(mass: &[T], old: &[T]) -> Vec<T> {
    match solve_weighted_log(mass) {
        Ok(p) => p,
        Err(_) => old.to_vec(),
    }
}

/// M-step from accumulated statistics. Rows or components with no posterior
/// mass keep their previous parameters.
pub(crate) fn reestimate<T: Scalar>(model: &Hmm<T>, acc: &StatsAccumulator<T>, config: &EmConfig) -> Result<Hmm<T>> {
    let (n, m, d) = (model.n_states(), model.n_mix(), model.dim());
    let floor = T::of(config.cov_floor);
    let initial = Array1::from(normalize_or_keep(
        acc.init.as_slice().expect("contiguous"),
        model.initial().as_slice().expect("contiguous"),
    ));
    let mut trans = Array2::zeros((n, n));
    for b in 0..n {
        let row = normalize_or_keep(&acc.trans.row(b).to_vec(), &model.transitions().row(b).to_vec());
        trans.row_mut(b).assign(&Array1::from(row));
    }
    let total_occ: T = acc.occ.sum();
    let tiny = T::epsilon() * total_occ.max(T::one());
    let mut emissions = Vec::with_capacity(n);
    for b in 0..n {
        let old = &model.emissions()[b];
        let state_occ: T = acc.occ.row(b).sum();
        if !(state_occ > tiny) {
            emissions.push(old.clone().into_kind(config.cov_type)?);
            continue;
        }
        let weights = Array1::from(solve_weighted_log(&acc.occ.row(b).to_vec())?);
        let mut comps = Vec::with_capacity(m);
        for k in 0..m {
            let w = acc.occ[[b, k]];
            let prev = &old.components()[k];
            if !(w > tiny) {
                comps.push(prev.clone().with_kind(config.cov_type)?.with_floor(floor)?);
                continue;
            }
            let idx = b * m + k;
            let mean = &acc.sum_y.row(idx) / w;
            let sq = &acc.sum_yy[idx];
            let cov = match config.cov_type {
                CovarianceType::Diagonal => {
                    Covariance::Diagonal((0..d).map(|j| sq[[0, j]] / w - mean[j] * mean[j]).collect())
                }
                CovarianceType::Full => {
                    let mut c = Array2::zeros((d, d));
                    for i in 0..d {
                        for j in 0..d {
                            c[[i, j]] = sq[[i, j]] / w - mean[i] * mean[j];
                        }
                    }
                    // symmetrize rounding noise
                    let ct = c.t().to_owned();
                    Covariance::Full((&c + &ct) * T::of(0.5))
                }
            };
            comps.push(gaussian_floored(mean, cov, floor)?);
        }
        emissions.push(GaussianMixture::new(weights, comps)?);
    }
    Hmm::new(initial, trans, emissions)
}

/// Builds a Gaussian after clamping variances to `floor`; a moment estimate
/// that went slightly negative still yields a valid density.
pub(crate) fn gaussian_floored<T: Scalar>(mean: Array1<T>, cov: Covariance<T>, floor: T) -> Result<Gaussian<T>> {
    match cov {
        Covariance::Diagonal(v) => {
            Gaussian::new(mean, Covariance::Diagonal(v.mapv(|x| if x >= floor { x } else { floor })))
        }
        Covariance::Full(mut c) => {
            let d = c.nrows();
            for k in 0..d {
                if !(c[[k, k]] >= floor) {
                    c[[k, k]] = floor;
                }
            }
            let mut jitter = floor.max(T::min_positive_value());
            for _ in 0..60 {
                if crate::gaussian::cholesky(&c).is_some() {
                    return Gaussian::new(mean, Covariance::Full(c));
                }
                for k in 0..d {
                    c[[k, k]] += jitter;
                }
                jitter *= T::of(2.0);
            }
            Err(Error::Estimation("covariance update is not positive definite".into()))
        }
    }
}

impl<T: Scalar> GaussianMixture<T> {
    pub(crate) fn into_kind(self, kind: CovarianceType) -> Result<Self> {
        if self.covariance_kind() == kind {
            return Ok(self);
        }
        let (w, comps) = self.into_parts();
        let comps = comps.into_iter().map(|g| g.with_kind(kind)).collect::<Result<Vec<_>>>()?;
        GaussianMixture::new(w, comps)
    }
}

fn jittered_uniform<T: Scalar, R: Rng + ?Sized>(n: usize, rng: &mut R) -> Array1<T> {
    const JITTER: f64 = 0.1;
    let g: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(Exp1)).collect();
    let total: f64 = g.iter().sum();
    let raw: Vec<T> = g.iter().map(|x| T::of((1.0 - JITTER) / n as f64 + JITTER * x / total)).collect();
    Array1::from(solve_weighted_log(&raw).expect("positive by construction"))
}

fn variances<T: Scalar>(points: &Array2<T>, rows: &[usize], fallback: &Array1<T>, floor: T) -> Array1<T> {
    let d = points.ncols();
    if rows.len() < 2 {
        return fallback.clone();
    }
    let cnt = T::of_usize(rows.len());
    let mut mean = Array1::<T>::zeros(d);
    for &r in rows {
        mean += &points.row(r);
    }
    mean /= cnt;
    let mut var = Array1::<T>::zeros(d);
    for &r in rows {
        let diff = &points.row(r) - &mean;
        var += &(&diff * &diff);
    }
    (var / cnt).mapv(|v| v.max(floor))
}

/// Seeds an HMM from pooled observations: k-means over states, then k-means
/// within each state's members for its mixture components. Initial and
/// transition probabilities are uniform with a small Dirichlet jitter.
pub(crate) fn init_hmm<T: Scalar, R: Rng + ?Sized>(
    data: &[&Sequence<T>],
    n_states: usize,
    n_mix: usize,
    config: &EmConfig,
    rng: &mut R,
) -> Result<Hmm<T>> {
    if data.is_empty() {
        return Err(Error::Estimation("no training sequences".into()));
    }
    if n_states == 0 || n_mix == 0 {
        return Err(Error::Config("need at least one state and one mixture component".into()));
    }
    let d = data[0].dim();
    if let Some(s) = data.iter().find(|s| s.dim() != d) {
        return Err(Error::DimensionMismatch { expected: d, got: s.dim() });
    }
    let total: usize = data.iter().map(|s| s.len()).sum();
    let mut points = Array2::zeros((total, d));
    let mut off = 0;
    for s in data {
        points.slice_mut(s![off..off + s.len(), ..]).assign(s.observations());
        off += s.len();
    }
    let distinct: HashSet<Vec<u64>> =
        points.rows().into_iter().map(|r| r.iter().map(|x| x.to_f64_lossy().to_bits()).collect()).collect();
    let needed = n_states * n_mix;
    if distinct.len() < needed {
        return Err(Error::Estimation(format!(
            "only {} distinct observation vectors for {needed} emission components",
            distinct.len()
        )));
    }

    let floor = T::of(config.cov_floor);
    let all: Vec<usize> = (0..total).collect();
    let global_var = variances(&points, &all, &Array1::from_elem(d, T::one()), floor);
    let (state_centers, state_labels) = kmeans(&points, n_states, 100, rng);

    let mut emissions = Vec::with_capacity(n_states);
    for b in 0..n_states {
        let members: Vec<usize> = (0..total).filter(|&i| state_labels[i] == b).collect();
        let state_var = variances(&points, &members, &global_var, floor);
        let mut means = Vec::with_capacity(n_mix);
        let mut vars = Vec::with_capacity(n_mix);
        if n_mix == 1 || members.len() < n_mix {
            for k in 0..n_mix {
                let offset = T::of(k as f64 - (n_mix as f64 - 1.0) / 2.0) * T::of(0.5);
                let mean = &state_centers.row(b) + &state_var.mapv(|v| v.sqrt() * offset);
                means.push(mean);
                vars.push(state_var.clone());
            }
        } else {
            let sub = points.select(ndarray::Axis(0), &members);
            let (centers, labels) = kmeans(&sub, n_mix, 100, rng);
            for k in 0..n_mix {
                let rows: Vec<usize> = (0..sub.nrows()).filter(|&i| labels[i] == k).collect();
                means.push(centers.row(k).to_owned());
                vars.push(variances(&sub, &rows, &state_var, floor));
            }
        }
        let comps = means
            .into_iter()
            .zip(vars)
            .map(|(mu, var)| Gaussian::new(mu, Covariance::Diagonal(var)).and_then(|g| g.with_kind(config.cov_type)))
            .collect::<Result<Vec<_>>>()?;
        emissions.push(GaussianMixture::new(Array1::from_elem(n_mix, T::one() / T::of_usize(n_mix)), comps)?);
    }
    let initial = jittered_uniform(n_states, rng);
    let mut trans = Array2::zeros((n_states, n_states));
    for b in 0..n_states {
        trans.row_mut(b).assign(&jittered_uniform::<T, _>(n_states, rng));
    }
    Hmm::new(initial, trans, emissions)
}

pub(crate) fn relative_improvement(prev: f64, cur: f64) -> f64 {
    (cur - prev) / prev.abs().max(f64::MIN_POSITIVE)
}

/// Baum-Welch estimation of an HMM with `n_states` states and `n_mix`
/// Gaussian components per state.
pub fn baum_welch<T: Scalar, R: Rng + ?Sized>(
    data: &[Sequence<T>],
    n_states: usize,
    n_mix: usize,
    config: &EmConfig,
    rng: &mut R,
) -> Result<HmmFit<T>> {
    let refs: Vec<&Sequence<T>> = data.iter().collect();
    let mut model = init_hmm(&refs, n_states, n_mix, config, rng)?;
    let mut trace: Vec<T> = Vec::new();
    let mut converged = false;
    for iter in 0..config.max_iters {
        let stats =
            data.par_iter().map(|s| forward_backward(&model, s, config.cov_type)).collect::<Result<Vec<_>>>()?;
        let mut acc = StatsAccumulator::zeros(n_states, n_mix, model.dim(), config.cov_type);
        for s in &stats {
            acc.add_scaled(s, T::one());
        }
        if !acc.loglik.is_finite() {
            return Err(Error::Estimation("log-likelihood is not finite".into()));
        }
        let ll = acc.loglik;
        let prev = trace.last().copied();
        trace.push(ll);
        if let Some(p) = prev {
            if relative_improvement(p.to_f64_lossy(), ll.to_f64_lossy()) < config.tol {
                converged = true;
                break;
            }
        }
        if iter + 1 == config.max_iters {
            break;
        }
        model = reestimate(&model, &acc, config)?;
    }
    Ok(HmmFit { model, loglik_trace: trace, converged })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hmm::{forward_loglik, sample};
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn g1(mean: f64, var: f64) -> Gaussian<f64> {
        Gaussian::new(array![mean], Covariance::Diagonal(array![var])).unwrap()
    }

    fn two_state_truth() -> Hmm<f64> {
        Hmm::new(
            array![0.6, 0.4],
            array![[0.8, 0.2], [0.3, 0.7]],
            vec![GaussianMixture::single(g1(-5.0, 1.0)), GaussianMixture::single(g1(5.0, 1.0))],
        )
        .unwrap()
    }

    fn assert_monotone(trace: &[f64]) {
        for w in trace.windows(2) {
            assert!(w[1] - w[0] >= -1e-8 * w[0].abs(), "trace decreased: {:?}", w);
        }
    }

    #[test]
    fn forward_backward_loglik_matches_forward() {
        let truth = two_state_truth();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (seq, _) = sample(&truth, 15, &mut rng).unwrap();
        let st = forward_backward(&truth, &seq, CovarianceType::Diagonal).unwrap();
        assert_abs_diff_eq!(st.loglik, forward_loglik(&truth, &seq).unwrap(), epsilon = 1e-10);
        assert_abs_diff_eq!(st.occ.sum(), 15.0, epsilon = 1e-10);
        assert_abs_diff_eq!(st.trans.sum(), 14.0, epsilon = 1e-10);
        assert_abs_diff_eq!(st.init.sum(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn recovers_well_separated_means() {
        let truth = two_state_truth();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let data: Vec<_> = (0..200).map(|_| sample(&truth, 20, &mut rng).unwrap().0).collect();
        let fit = baum_welch(&data, 2, 1, &EmConfig::default(), &mut rng).unwrap();
        let mut means: Vec<f64> = fit.model.emissions().iter().map(|e| e.components()[0].mean()[0]).collect();
        means.sort_by(f64::total_cmp);
        assert!((means[0] + 5.0).abs() < 0.2 && (means[1] - 5.0).abs() < 0.2, "{means:?}");
        assert_monotone(&fit.loglik_trace);
        for row in fit.model.transitions().rows() {
            assert_abs_diff_eq!(row.sum(), 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn single_state_single_component_is_sample_moments() {
        let data = vec![
            Sequence::new(array![[1.0, 0.0], [2.0, 1.0], [4.0, 0.5]]).unwrap(),
            Sequence::new(array![[0.0, -1.0], [3.0, 2.0]]).unwrap(),
        ];
        for kind in [CovarianceType::Diagonal, CovarianceType::Full] {
            let cfg = EmConfig { cov_type: kind, ..EmConfig::default() };
            let fit = baum_welch(&data, 1, 1, &cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
            let g = &fit.model.emissions()[0].components()[0];
            assert_abs_diff_eq!(g.mean()[0], 2.0, epsilon = 1e-12);
            assert_abs_diff_eq!(g.mean()[1], 0.5, epsilon = 1e-12);
            // population variance of [1,2,4,0,3] = 2, of [0,1,0.5,-1,2] = 1.0
            assert_abs_diff_eq!(g.covariance().diag(0), 2.0, epsilon = 1e-12);
            assert_abs_diff_eq!(g.covariance().diag(1), 1.0, epsilon = 1e-12);
            if kind == CovarianceType::Full {
                // cov = mean(xy) - mean(x)mean(y) = (0 + 2 + 2 + 0 + 6)/5 - 1 = 1
                assert_abs_diff_eq!(g.covariance().to_dense()[[0, 1]], 1.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn too_few_distinct_observations_is_an_error() {
        let data = vec![Sequence::new(array![[1.0], [1.0], [1.0]]).unwrap()];
        let err = baum_welch(&data, 2, 1, &EmConfig::default(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap_err();
        assert!(matches!(err, Error::Estimation(_)));
    }

    #[test]
    fn mixture_emissions_and_full_covariance_stay_monotone() {
        let truth = Hmm::new(
            array![0.5, 0.5],
            array![[0.9, 0.1], [0.2, 0.8]],
            vec![
                GaussianMixture::new(array![0.3, 0.7], vec![g1(-4.0, 0.5), g1(-1.0, 1.0)]).unwrap(),
                GaussianMixture::new(array![0.5, 0.5], vec![g1(2.0, 1.0), g1(5.0, 0.3)]).unwrap(),
            ],
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let data: Vec<_> = (0..60).map(|_| sample(&truth, 25, &mut rng).unwrap().0).collect();
        for kind in [CovarianceType::Diagonal, CovarianceType::Full] {
            let cfg = EmConfig { cov_type: kind, max_iters: 60, tol: 1e-10, ..EmConfig::default() };
            let fit = baum_welch(&data, 2, 2, &cfg, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
            assert_monotone(&fit.loglik_trace);
            for e in fit.model.emissions() {
                for g in e.components() {
                    assert!(g.covariance().diag(0) >= 1e-6);
                }
            }
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;
        use rand::Rng;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(16))]
            #[test]
            fn loglik_trace_is_monotone(seed in 0u64..10_000, n in 1usize..=3, m in 1usize..=2) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let data: Vec<_> = (0..8)
                    .map(|_| {
                        let obs: Array2<f64> = Array2::from_shape_fn((12, 2), |_| rng.random_range(-3.0..3.0));
                        Sequence::new(obs).unwrap()
                    })
                    .collect();
                let cfg = EmConfig { max_iters: 30, tol: 0.0, ..EmConfig::default() };
                let fit = baum_welch(&data, n, m, &cfg, &mut rng).unwrap();
                for w in fit.loglik_trace.windows(2) {
                    prop_assert!(w[1] - w[0] >= -1e-8 * w[0].abs());
                }
            }
        }
    }
}
