//! Variational hierarchical EM: reduces a large mixture of HMMs to a smaller
//! one whose components summarize groups of the input components.

mod estep;
mod mstep;
mod oracle;
#[cfg(test)]
pub(crate) mod testutil;

pub use estep::{
    compute_assignments, estep_pair, lower_bound, summary_stats, AssignmentMatrix, PairEstepResult, SummaryStats,
};
pub use mstep::mstep;
pub use oracle::{elhmm_bruteforce, BRUTEFORCE_LIMIT};

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::gaussian::{CovarianceType, Gaussian};
use crate::gmm::GaussianMixture;
use crate::h3m::H3m;
use crate::hmm::{draw_index, Hmm};
use crate::optim::solve_weighted_log;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InitStrategy {
    /// Copies of base components picked by weighted farthest-first sampling,
    /// with emission means scaled by `1 + ε`, `ε ~ U(−0.01, 0.01)`.
    #[default]
    SubsetPerturb,
    /// Dirichlet(1) start and transition probabilities; emission means drawn
    /// near randomly chosen base emission means.
    Random,
    /// The caller supplies the starting mixture through [`vhem_reduce_from`].
    Provided,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VhemConfig {
    pub k_reduced: usize,
    /// Total virtual sample mass; `None` means `10⁴ · K_b`.
    pub n_virtual: Option<f64>,
    pub tau_virtual: usize,
    pub max_iters: usize,
    pub tol: f64,
    pub init: InitStrategy,
    pub cov_floor: f64,
    /// Covariance representation of the reduced model; `None` keeps the base's.
    pub cov_type: Option<CovarianceType>,
    pub seed: u64,
    /// Independent initializations; the run with the highest final bound wins.
    pub restarts: usize,
}

impl VhemConfig {
    pub fn new(k_reduced: usize) -> Self {
        Self {
            k_reduced,
            n_virtual: None,
            tau_virtual: 10,
            max_iters: 100,
            tol: 1e-6,
            init: InitStrategy::SubsetPerturb,
            cov_floor: 1e-6,
            cov_type: None,
            seed: 0,
            restarts: 5,
        }
    }

    pub fn virtual_mass(&self, n_base: usize) -> f64 {
        self.n_virtual.unwrap_or(1e4 * n_base as f64)
    }

    fn validate(&self, n_base: usize) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.k_reduced == 0 || self.k_reduced > n_base {
            return fail(format!("reduced size {} must be in 1..={n_base}", self.k_reduced));
        }
        if let Some(n) = self.n_virtual {
            if !(n >= 1.0 && n.is_finite()) {
                return fail(format!("virtual sample mass must be at least 1, got {n}"));
            }
        }
        if self.tau_virtual == 0 {
            return fail("virtual sequence length must be at least 1".into());
        }
        if self.max_iters == 0 {
            return fail("max_iters must be at least 1".into());
        }
        if !(self.tol >= 0.0 && self.tol.is_finite()) {
            return fail(format!("tolerance must be finite and nonnegative, got {}", self.tol));
        }
        if !(self.cov_floor >= 0.0 && self.cov_floor.is_finite()) {
            return fail(format!("covariance floor must be finite and nonnegative, got {}", self.cov_floor));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ReductionResult<T> {
    pub reduced: H3m<T>,
    /// Assignments computed against `reduced`.
    pub assignments: AssignmentMatrix<T>,
    pub bound_history: Vec<T>,
    pub hard_labels: Vec<usize>,
    /// Indices into `bound_history` from which a rescued component is in
    /// effect. The bound is monotone within each segment between rescues.
    pub rescues: Vec<usize>,
    /// Reduced components that still hold mass at the end.
    pub effective_k: usize,
    pub converged: bool,
    /// Which restart produced this result.
    pub restart: usize,
}

impl<T: Scalar> ReductionResult<T> {
    /// Largest relative decrease between consecutive bounds, ignoring the
    /// transitions caused by rescues. Zero or negative means monotone.
    pub fn worst_relative_drop(&self) -> f64 {
        let h: Vec<f64> = self.bound_history.iter().map(|v| v.to_f64_lossy()).collect();
        (1..h.len())
            .filter(|k| !self.rescues.contains(k))
            .map(|k| (h[k - 1] - h[k]) / h[k].abs().max(f64::MIN_POSITIVE))
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

const MAX_RESCUES: usize = 2;
const EMPTY_FRACTION: f64 = 1e-3;
const RESCUE_WEIGHT_FLOOR: f64 = 1e-6;

fn with_kind<T: Scalar>(h: &Hmm<T>, kind: CovarianceType) -> Result<Hmm<T>> {
    if h.covariance_kind() == kind {
        return Ok(h.clone());
    }
    let emissions = h.emissions().iter().map(|e| e.clone().into_kind(kind)).collect::<Result<Vec<_>>>()?;
    Hmm::new(h.initial().clone(), h.transitions().clone(), emissions)
}

fn reduced_kind<T: Scalar>(base: &H3m<T>, config: &VhemConfig) -> CovarianceType {
    config.cov_type.unwrap_or_else(|| base.components()[0].covariance_kind())
}

/// Reduces `base` to `config.k_reduced` components, running `config.restarts`
/// independent initializations and keeping the one with the highest final bound.
pub fn vhem_reduce<T: Scalar>(base: &H3m<T>, config: &VhemConfig) -> Result<ReductionResult<T>> {
    config.validate(base.len())?;
    if config.init == InitStrategy::Provided {
        return Err(Error::Config("a provided initialization must be passed to vhem_reduce_from".into()));
    }
    let runs: Vec<Result<ReductionResult<T>>> = (0..config.restarts.max(1))
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(r as u64);
            let init = initialize(base, config, &mut rng)?;
            run(base, init, config).map(|res| ReductionResult { restart: r, ..res })
        })
        .collect();
    let mut best: Option<ReductionResult<T>> = None;
    let mut first_err = None;
    for run in runs {
        match run {
            Ok(res) => {
                let better = match &best {
                    None => true,
                    Some(b) => res.bound_history.last() > b.bound_history.last(),
                };
                if better {
                    best = Some(res);
                }
            }
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    match best {
        Some(b) => Ok(b),
        None => Err(first_err.expect("at least one restart ran")),
    }
}

/// Runs the reduction from a caller-supplied starting mixture.
pub fn vhem_reduce_from<T: Scalar>(base: &H3m<T>, initial: H3m<T>, config: &VhemConfig) -> Result<ReductionResult<T>> {
    config.validate(base.len())?;
    if initial.len() != config.k_reduced {
        return Err(Error::Config(format!(
            "initial mixture has {} components, expected {}",
            initial.len(),
            config.k_reduced
        )));
    }
    if initial.components()[0].dim() != base.components()[0].dim() {
        return Err(Error::DimensionMismatch {
            expected: base.components()[0].dim(),
            got: initial.components()[0].dim(),
        });
    }
    let kind = reduced_kind(base, config);
    let (w, comps) = initial.into_parts();
    let comps = comps.iter().map(|h| with_kind(h, kind)).collect::<Result<Vec<_>>>()?;
    run(base, H3m::new(w, comps)?, config)
}

fn run<T: Scalar>(base: &H3m<T>, mut reduced: H3m<T>, config: &VhemConfig) -> Result<ReductionResult<T>> {
    let (kb, kr) = (base.len(), reduced.len());
    let total = config.virtual_mass(kb);
    let counts: Vec<T> = base.weights().iter().map(|&w| w * T::of(total)).collect();
    let floor = T::of(config.cov_floor);
    let empty_mass = T::of(EMPTY_FRACTION * total);
    let mut history: Vec<T> = Vec::new();
    let mut rescues: Vec<usize> = Vec::new();
    let mut converged = false;
    let z = loop {
        let pairs = (0..kb * kr)
            .into_par_iter()
            .map(|idx| estep_pair(&base.components()[idx / kr], &reduced.components()[idx % kr], config.tau_virtual))
            .collect::<Result<Vec<_>>>()?;
        let objectives = Array2::from_shape_fn((kb, kr), |(i, j)| pairs[i * kr + j].objective);
        let weights = reduced.weights().to_vec();
        let z = compute_assignments(&objectives, &weights, &counts)?;
        let bound = lower_bound(&weights, &z, &objectives, &counts);
        if !bound.is_finite() {
            return Err(Error::Estimation("variational bound is not finite".into()));
        }
        let segment_start = rescues.last().copied().unwrap_or(0);
        let prev = if history.len() > segment_start { history.last().copied() } else { None };
        history.push(bound);
        if let Some(p) = prev {
            let change = ((bound - p) / bound.abs()).abs().to_f64_lossy();
            if change < config.tol {
                converged = true;
                break z;
            }
        }
        if history.len() == config.max_iters {
            break z;
        }

        let stats = (0..kb * kr)
            .into_par_iter()
            .map(|idx| summary_stats(&base.components()[idx / kr], &pairs[idx]))
            .collect::<Result<Vec<_>>>()?;
        let mut next = mstep(base, &reduced, &z, &stats, &pairs, &counts, floor)?;
        let mass: Vec<T> = (0..kr).map(|j| (0..kb).map(|i| z.z[[i, j]] * counts[i]).sum()).collect();
        let empty: Vec<usize> = (0..kr).filter(|&j| mass[j] < empty_mass).collect();
        if !empty.is_empty() && rescues.len() < MAX_RESCUES {
            next =
                rescue(base, next, &empty, MAX_RESCUES - rescues.len(), &z, &objectives, reduced_kind(base, config))?;
            rescues.extend(std::iter::repeat_n(history.len(), empty.len().min(MAX_RESCUES - rescues.len())));
        }
        reduced = next;
    };
    let effective_k = (0..kr).filter(|&j| (0..kb).map(|i| z.z[[i, j]] * counts[i]).sum::<T>() >= empty_mass).count();
    Ok(ReductionResult {
        hard_labels: z.hard_labels(),
        reduced,
        assignments: z,
        bound_history: history,
        rescues,
        effective_k,
        converged,
        restart: 0,
    })
}

/// Re-seeds empty reduced components with the base components the current
/// model explains worst.
fn rescue<T: Scalar>(
    base: &H3m<T>,
    model: H3m<T>,
    empty: &[usize],
    budget: usize,
    z: &AssignmentMatrix<T>,
    objectives: &Array2<T>,
    kind: CovarianceType,
) -> Result<H3m<T>> {
    let kb = base.len();
    let fit: Vec<T> =
        (0..kb).map(|i| (0..objectives.ncols()).map(|j| z.z[[i, j]] * objectives[[i, j]]).sum()).collect();
    let mut order: Vec<usize> = (0..kb).collect();
    order.sort_by(|&a, &b| fit[a].partial_cmp(&fit[b]).unwrap_or(std::cmp::Ordering::Equal).then(a.cmp(&b)));
    let (weights, mut comps) = model.into_parts();
    let mut weights = weights.to_vec();
    for (&j, &i) in empty.iter().zip(&order).take(budget) {
        comps[j] = with_kind(&base.components()[i], kind)?;
        weights[j] = weights[j].max(T::of(RESCUE_WEIGHT_FLOOR));
    }
    H3m::new(Array1::from(solve_weighted_log(&weights)?), comps)
}

fn initialize<T: Scalar, R: Rng + ?Sized>(base: &H3m<T>, config: &VhemConfig, rng: &mut R) -> Result<H3m<T>> {
    let kind = reduced_kind(base, config);
    let kr = config.k_reduced;
    let comps = match config.init {
        InitStrategy::SubsetPerturb => {
            let picks = spread_subset(base, kr, config.tau_virtual, rng)?;
            picks
                .into_iter()
                .map(|i| perturb_means(&with_kind(&base.components()[i], kind)?, rng))
                .collect::<Result<Vec<_>>>()?
        }
        InitStrategy::Random => (0..kr).map(|_| random_hmm(base, kind, rng)).collect::<Result<Vec<_>>>()?,
        InitStrategy::Provided => {
            return Err(Error::Config("a provided initialization must be passed to vhem_reduce_from".into()))
        }
    };
    H3m::uniform(comps)
}

/// Picks `k` distinct base components. The first is drawn by base weight; each
/// further one by base weight times how much worse the closest pick explains it
/// than it explains itself, so well-separated groups tend to be covered.
fn spread_subset<T: Scalar, R: Rng + ?Sized>(base: &H3m<T>, k: usize, tau: usize, rng: &mut R) -> Result<Vec<usize>> {
    let kb = base.len();
    let comps = base.components();
    let cross = |c: usize| -> Result<Vec<T>> {
        (0..kb).into_par_iter().map(|i| estep_pair(&comps[i], &comps[c], tau).map(|p| p.objective)).collect()
    };
    let own: Vec<T> = (0..kb)
        .into_par_iter()
        .map(|i| estep_pair(&comps[i], &comps[i], tau).map(|p| p.objective))
        .collect::<Result<_>>()?;
    let w = base.weights();
    let first = draw_index(w.view(), rng);
    let mut picked = vec![first];
    let mut closest = cross(first)?;
    while picked.len() < k {
        let gap: Vec<T> = (0..kb)
            .map(|i| if picked.contains(&i) { T::zero() } else { w[i] * (own[i] - closest[i]).max(T::zero()) })
            .collect();
        let fallback: Vec<T> = (0..kb).map(|i| if picked.contains(&i) { T::zero() } else { w[i] }).collect();
        let uniform: Vec<T> = (0..kb).map(|i| if picked.contains(&i) { T::zero() } else { T::one() }).collect();
        let scores = [gap, fallback, uniform]
            .into_iter()
            .find(|s| s.iter().copied().sum::<T>() > T::zero())
            .expect("fewer picks than components");
        let probs = Array1::from(solve_weighted_log(&scores)?);
        let next = draw_index(probs.view(), rng);
        let sim = cross(next)?;
        for i in 0..kb {
            closest[i] = closest[i].max(sim[i]);
        }
        picked.push(next);
    }
    Ok(picked)
}

fn perturb_means<T: Scalar, R: Rng + ?Sized>(h: &Hmm<T>, rng: &mut R) -> Result<Hmm<T>> {
    let emissions = h
        .emissions()
        .iter()
        .map(|mix| {
            let comps = mix
                .components()
                .iter()
                .map(|g| {
                    let eps = T::of(rng.random_range(-0.01..0.01));
                    Gaussian::new(g.mean() * (T::one() + eps), g.covariance().clone())
                })
                .collect::<Result<Vec<_>>>()?;
            GaussianMixture::new(mix.weights().clone(), comps)
        })
        .collect::<Result<Vec<_>>>()?;
    Hmm::new(h.initial().clone(), h.transitions().clone(), emissions)
}

fn dirichlet_ones<T: Scalar, R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<Array1<T>> {
    let g: Vec<T> = (0..n).map(|_| T::of(rng.sample::<f64, _>(Exp1).max(1e-12))).collect();
    Ok(Array1::from(solve_weighted_log(&g)?))
}

/// Same structure as the base components, with random parameters centred on
/// the base emission means.
fn random_hmm<T: Scalar, R: Rng + ?Sized>(base: &H3m<T>, kind: CovarianceType, rng: &mut R) -> Result<Hmm<T>> {
    let proto = &base.components()[0];
    let (n, m, d) = (proto.n_states(), proto.n_mix(), proto.dim());
    let pool: Vec<&Gaussian<T>> =
        base.components().iter().flat_map(|h| h.emissions().iter().flat_map(|e| e.components().iter())).collect();
    let count = T::of_usize(pool.len());
    let centre: Array1<T> = pool.iter().fold(Array1::zeros(d), |acc, g| acc + g.mean()) / count;
    let spread: Array1<T> = pool
        .iter()
        .fold(Array1::zeros(d), |acc: Array1<T>, g| {
            let diff = g.mean() - &centre;
            acc + &diff * &diff
        })
        .mapv(|v| {
            let sd = (v / count).sqrt();
            if sd > T::zero() {
                sd
            } else {
                T::one()
            }
        });
    let initial = dirichlet_ones(n, rng)?;
    let mut trans = Array2::zeros((n, n));
    for r in 0..n {
        trans.row_mut(r).assign(&dirichlet_ones(n, rng)?);
    }
    let mut emissions = Vec::with_capacity(n);
    for _ in 0..n {
        let comps = (0..m)
            .map(|_| {
                let g = pool[rng.random_range(0..pool.len())];
                let noise: Array1<T> = (0..d).map(|_| T::of(0.1 * rng.sample::<f64, _>(StandardNormal))).collect();
                Gaussian::new(g.mean() + &(&noise * &spread), g.covariance().clone().into_kind(kind))
            })
            .collect::<Result<Vec<_>>>()?;
        emissions.push(GaussianMixture::new(dirichlet_ones(m, rng)?, comps)?);
    }
    Hmm::new(initial, trans, emissions)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gaussian::Covariance;
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use testutil::random_hmm as rand_hmm;

    fn shifted(h: &Hmm<f64>, shift: f64) -> Hmm<f64> {
        let emissions = h
            .emissions()
            .iter()
            .map(|e| {
                let comps = e
                    .components()
                    .iter()
                    .map(|g| Gaussian::new(g.mean() + shift, g.covariance().clone()).unwrap())
                    .collect();
                GaussianMixture::new(e.weights().clone(), comps).unwrap()
            })
            .collect();
        Hmm::new(h.initial().clone(), h.transitions().clone(), emissions).unwrap()
    }

    fn grouped_base(seed: u64, groups: &[f64], per_group: usize) -> (H3m<f64>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut comps = Vec::new();
        let mut labels = Vec::new();
        for (g, &centre) in groups.iter().enumerate() {
            let proto = rand_hmm(&mut rng, 2, 1, 1);
            for _ in 0..per_group {
                comps.push(shifted(&proto, centre + rng.random_range(-0.2..0.2)));
                labels.push(g);
            }
        }
        (H3m::uniform(comps).unwrap(), labels)
    }

    /// Two states whose emissions barely overlap, so the variational factors are
    /// effectively hard and a model is its own best summary.
    fn separated(centre: f64) -> Hmm<f64> {
        let g = |m: f64| Gaussian::new(array![centre + m], Covariance::Diagonal(array![1.0])).unwrap();
        Hmm::new(
            array![0.4, 0.6],
            array![[0.85, 0.15], [0.3, 0.7]],
            vec![GaussianMixture::single(g(-40.0)), GaussianMixture::single(g(40.0))],
        )
        .unwrap()
    }

    #[test]
    fn identity_start_is_a_fixed_point() {
        let base = H3m::uniform(vec![separated(-500.0), separated(0.0), separated(500.0)]).unwrap();
        let cfg = VhemConfig { max_iters: 5, tol: 0.0, ..VhemConfig::new(3) };
        let res = vhem_reduce_from(&base, base.clone(), &cfg).unwrap();
        assert_eq!(res.hard_labels, vec![0, 1, 2]);
        let (first, last) = (res.bound_history[0], *res.bound_history.last().unwrap());
        assert!(((last - first) / first).abs() <= 1e-6, "{:?}", res.bound_history);
    }

    #[test]
    fn recovers_groups_and_is_monotone() {
        let (base, labels) = grouped_base(2, &[-6.0, -2.0, 2.0, 6.0], 5);
        let cfg = VhemConfig { seed: 3, ..VhemConfig::new(4) };
        let res = vhem_reduce(&base, &cfg).unwrap();
        assert!(res.worst_relative_drop() <= 1e-8, "{:?}", res.bound_history);
        for g in 0..4 {
            let members: Vec<usize> = (0..20).filter(|&i| labels[i] == g).map(|i| res.hard_labels[i]).collect();
            assert!(members.iter().all(|&l| l == members[0]), "{:?}", res.hard_labels);
        }
        assert_eq!(res.effective_k, 4);
    }

    #[test]
    fn single_center_stays_in_hull() {
        let (base, _) = grouped_base(4, &[-3.0, 5.0], 3);
        let res = vhem_reduce(&base, &VhemConfig::new(1)).unwrap();
        let means: Vec<f64> =
            base.components().iter().flat_map(|h| h.emissions().iter().map(|e| e.components()[0].mean()[0])).collect();
        let lo = means.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = means.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for e in res.reduced.components()[0].emissions() {
            let m = e.components()[0].mean()[0];
            assert!(m >= lo && m <= hi);
        }
        assert!(res.assignments.z.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn seeded_runs_repeat_exactly() {
        let (base, _) = grouped_base(5, &[-6.0, -2.0, 2.0, 6.0], 3);
        for init in [InitStrategy::SubsetPerturb, InitStrategy::Random] {
            let cfg = VhemConfig { seed: 9, init, ..VhemConfig::new(2) };
            let a = vhem_reduce(&base, &cfg).unwrap();
            let b = vhem_reduce(&base, &cfg).unwrap();
            assert_eq!(a.bound_history, b.bound_history);
            assert_eq!(a.hard_labels, b.hard_labels);
            assert_eq!(a.reduced, b.reduced);
        }
    }

    #[test]
    fn random_init_is_monotone() {
        let (base, _) = grouped_base(6, &[-4.0, 0.0, 4.0], 4);
        for seed in 0..4 {
            let cfg = VhemConfig { seed, init: InitStrategy::Random, restarts: 1, ..VhemConfig::new(3) };
            let res = vhem_reduce(&base, &cfg).unwrap();
            assert!(res.worst_relative_drop() <= 1e-8, "{:?}", res.bound_history);
        }
    }

    #[test]
    fn full_covariance_reduction() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let comps: Vec<_> = (0..6)
            .map(|k| {
                let h = rand_hmm(&mut rng, 2, 2, 2);
                let h = with_kind(&h, CovarianceType::Full).unwrap();
                shifted(&h, if k < 3 { -10.0 } else { 10.0 })
            })
            .collect();
        let base = H3m::uniform(comps).unwrap();
        let res = vhem_reduce(&base, &VhemConfig { seed: 1, ..VhemConfig::new(2) }).unwrap();
        assert_eq!(res.reduced.components()[0].covariance_kind(), CovarianceType::Full);
        assert!(res.worst_relative_drop() <= 1e-8);
        assert_eq!(res.hard_labels[0], res.hard_labels[2]);
        assert_ne!(res.hard_labels[0], res.hard_labels[5]);

        let diag =
            vhem_reduce(&base, &VhemConfig { cov_type: Some(CovarianceType::Diagonal), ..VhemConfig::new(2) }).unwrap();
        assert!(matches!(
            diag.reduced.components()[0].emissions()[0].components()[0].covariance(),
            Covariance::Diagonal(_)
        ));
    }

    #[test]
    fn spread_subset_covers_separated_groups() {
        let (base, labels) = grouped_base(8, &[-30.0, -10.0, 10.0, 30.0], 5);
        let mut covered = 0;
        for seed in 0..20 {
            let picks = spread_subset(&base, 4, 10, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            let mut groups: Vec<usize> = picks.iter().map(|&i| labels[i]).collect();
            groups.sort();
            groups.dedup();
            covered += (groups.len() == 4) as usize;
        }
        assert!(covered >= 19, "{covered}");
    }

    #[test]
    fn rescues_are_bounded_and_reported() {
        // Two identical bases, three centres: one centre must end up empty.
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let h = rand_hmm(&mut rng, 1, 1, 1);
        let base = H3m::uniform(vec![h.clone(), h.clone(), shifted(&h, 50.0)]).unwrap();
        let far = shifted(&h, 500.0);
        let start = H3m::uniform(vec![h.clone(), shifted(&h, 50.0), far]).unwrap();
        let cfg = VhemConfig { tol: 0.0, max_iters: 10, ..VhemConfig::new(3) };
        let res = vhem_reduce_from(&base, start, &cfg).unwrap();
        assert!(res.rescues.len() <= MAX_RESCUES);
        assert!(!res.rescues.is_empty());
        assert!(res.effective_k <= 3);
        assert_abs_diff_eq!(res.reduced.weights().sum(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn config_validation() {
        let (base, _) = grouped_base(10, &[0.0], 2);
        assert!(vhem_reduce(&base, &VhemConfig::new(3)).is_err());
        assert!(vhem_reduce(&base, &VhemConfig::new(0)).is_err());
        assert!(vhem_reduce(&base, &VhemConfig { tau_virtual: 0, ..VhemConfig::new(1) }).is_err());
        assert!(vhem_reduce(&base, &VhemConfig { n_virtual: Some(0.5), ..VhemConfig::new(1) }).is_err());
        assert!(vhem_reduce(&base, &VhemConfig { init: InitStrategy::Provided, ..VhemConfig::new(1) }).is_err());
    }
}
