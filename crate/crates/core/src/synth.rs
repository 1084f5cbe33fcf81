//! Synthetic HMM collections with known group structure.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::{Gamma, StandardNormal};

use crate::error::{Error, Result};
use crate::gaussian::{Covariance, Gaussian};
use crate::gmm::GaussianMixture;
use crate::hmm::{self, Hmm, Sequence};
use crate::optim::solve_weighted_log;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthSpec {
    pub n_groups: usize,
    pub per_group: usize,
    /// Distance between consecutive group centres along every coordinate.
    pub separation: f64,
    pub n_states: usize,
    pub n_mix: usize,
    pub dim: usize,
}

impl SynthSpec {
    /// 4 groups × 5 members, separation 4, one-dimensional two-state models.
    pub fn recovery_benchmark() -> Self {
        Self { n_groups: 4, per_group: 5, separation: 4.0, n_states: 2, n_mix: 1, dim: 1 }
    }
}

#[derive(Debug, Clone)]
pub struct SynthBenchmark<T> {
    /// Members, grouped: indices `g·per_group .. (g+1)·per_group` belong to group `g`.
    pub hmms: Vec<Hmm<T>>,
    pub labels: Vec<usize>,
    pub prototypes: Vec<Hmm<T>>,
}

/// Concentration of the Dirichlet used to jitter member transition rows.
const ROW_CONCENTRATION: f64 = 100.0;
const STAY: f64 = 0.8;

/// Group `g`'s prototype has its emission means centred at
/// `(g − (G−1)/2) · separation`, with states spaced 2 apart and mixture
/// components 0.5 apart around that centre, unit variances, and sticky
/// transitions. Members add `N(0, (separation/20)²)` noise to every mean and
/// redraw each transition row from a Dirichlet centred on the prototype row.
pub fn synth_benchmark<T: Scalar, R: Rng + ?Sized>(spec: &SynthSpec, rng: &mut R) -> Result<SynthBenchmark<T>> {
    if spec.n_groups < 2 {
        return Err(Error::Config("need at least two groups".into()));
    }
    if spec.per_group == 0 || spec.n_states == 0 || spec.n_mix == 0 || spec.dim == 0 {
        return Err(Error::Config("group size, states, components and dimension must be positive".into()));
    }
    if !(spec.separation >= 0.0 && spec.separation.is_finite()) {
        return Err(Error::Config(format!("separation must be finite and nonnegative, got {}", spec.separation)));
    }
    let centred = |k: usize, n: usize| k as f64 - (n as f64 - 1.0) / 2.0;
    let prototypes = (0..spec.n_groups)
        .map(|g| prototype(spec, centred(g, spec.n_groups) * spec.separation, &centred))
        .collect::<Result<Vec<Hmm<f64>>>>()?;
    let noise = spec.separation / 20.0;
    let mut hmms = Vec::with_capacity(spec.n_groups * spec.per_group);
    let mut labels = Vec::with_capacity(hmms.capacity());
    for (g, proto) in prototypes.iter().enumerate() {
        for _ in 0..spec.per_group {
            hmms.push(member(proto, noise, rng)?);
            labels.push(g);
        }
    }
    Ok(SynthBenchmark { hmms, labels, prototypes: prototypes.iter().map(cast).collect::<Result<_>>()? })
}

fn prototype(spec: &SynthSpec, centre: f64, centred: &dyn Fn(usize, usize) -> f64) -> Result<Hmm<f64>> {
    let n = spec.n_states;
    let emissions = (0..n)
        .map(|b| {
            let comps = (0..spec.n_mix)
                .map(|m| {
                    let mean = centre + 2.0 * centred(b, n) + 0.5 * centred(m, spec.n_mix);
                    Gaussian::new(Array1::from_elem(spec.dim, mean), Covariance::Diagonal(Array1::ones(spec.dim)))
                })
                .collect::<Result<Vec<_>>>()?;
            GaussianMixture::new(Array1::from_elem(spec.n_mix, 1.0 / spec.n_mix as f64), comps)
        })
        .collect::<Result<Vec<_>>>()?;
    let trans = if n == 1 {
        Array2::ones((1, 1))
    } else {
        Array2::from_shape_fn((n, n), |(r, c)| if r == c { STAY } else { (1.0 - STAY) / (n - 1) as f64 })
    };
    Hmm::new(Array1::from_elem(n, 1.0 / n as f64), trans, emissions)
}

fn member<T: Scalar, R: Rng + ?Sized>(proto: &Hmm<f64>, noise: f64, rng: &mut R) -> Result<Hmm<T>> {
    let emissions = proto
        .emissions()
        .iter()
        .map(|e| {
            let comps = e
                .components()
                .iter()
                .map(|g| {
                    let mean: Array1<T> =
                        g.mean().iter().map(|&m| T::of(m + noise * rng.sample::<f64, _>(StandardNormal))).collect();
                    let var = (0..g.dim()).map(|k| T::of(g.covariance().diag(k))).collect();
                    Gaussian::new(mean, Covariance::Diagonal(var))
                })
                .collect::<Result<Vec<_>>>()?;
            GaussianMixture::new(e.weights().mapv(T::of), comps)
        })
        .collect::<Result<Vec<_>>>()?;
    let n = proto.n_states();
    let mut trans = Array2::zeros((n, n));
    for r in 0..n {
        let draws = proto
            .transitions()
            .row(r)
            .iter()
            .map(|&p| {
                let gamma = Gamma::new(ROW_CONCENTRATION * p, 1.0).map_err(|e| Error::Config(e.to_string()))?;
                Ok(T::of(rng.sample(gamma).max(1e-300)))
            })
            .collect::<Result<Vec<T>>>()?;
        trans.row_mut(r).assign(&Array1::from(solve_weighted_log(&draws)?));
    }
    Hmm::new(proto.initial().mapv(T::of), trans, emissions)
}

fn cast<T: Scalar>(h: &Hmm<f64>) -> Result<Hmm<T>> {
    let emissions = h
        .emissions()
        .iter()
        .map(|e| {
            let comps = e
                .components()
                .iter()
                .map(|g| {
                    let var = (0..g.dim()).map(|k| T::of(g.covariance().diag(k))).collect();
                    Gaussian::new(g.mean().mapv(T::of), Covariance::Diagonal(var))
                })
                .collect::<Result<Vec<_>>>()?;
            GaussianMixture::new(e.weights().mapv(T::of), comps)
        })
        .collect::<Result<Vec<_>>>()?;
    Hmm::new(h.initial().mapv(T::of), h.transitions().mapv(T::of), emissions)
}

/// Draws `per_model` sequences of length `tau` from each model, labelled by
/// `labels[model]`. Sequence ids are `seq-<k>` in generation order.
pub fn sample_dataset<T: Scalar, R: Rng + ?Sized>(
    models: &[Hmm<T>],
    labels: &[usize],
    per_model: usize,
    tau: usize,
    rng: &mut R,
) -> Result<(Vec<Sequence<T>>, Vec<usize>)> {
    if models.len() != labels.len() {
        return Err(Error::DimensionMismatch { expected: models.len(), got: labels.len() });
    }
    let mut data = Vec::with_capacity(models.len() * per_model);
    let mut truth = Vec::with_capacity(data.capacity());
    for (h, &l) in models.iter().zip(labels) {
        for _ in 0..per_model {
            let (seq, _) = hmm::sample(h, tau, rng)?;
            data.push(seq.with_id(format!("seq-{}", data.len())));
            truth.push(l);
        }
    }
    Ok((data, truth))
}

/// Two populations of one-dimensional two-state sequences with emission
/// centres at ±5, `per_population` sequences each.
pub fn two_population_dataset<T: Scalar, R: Rng + ?Sized>(
    per_population: usize,
    tau: usize,
    rng: &mut R,
) -> Result<(Vec<Sequence<T>>, Vec<usize>)> {
    let spec = SynthSpec { n_groups: 2, per_group: 1, separation: 10.0, n_states: 2, n_mix: 1, dim: 1 };
    let bench = synth_benchmark::<T, R>(&spec, rng)?;
    sample_dataset(&bench.prototypes, &[0, 1], per_population, tau, rng)
}
