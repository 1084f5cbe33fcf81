//! Split-estimate-aggregate: fit small mixtures on disjoint portions of the
//! data, pool them, and reduce the pool to the final mixture.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::h3m::{h3m_em, H3m};
use crate::hmm::{EmConfig, Sequence};
use crate::scalar::Scalar;
use crate::vhem::{vhem_reduce, VhemConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub n_portions: usize,
    /// Mixture size fitted on each portion.
    pub portion_k: usize,
    pub n_states: usize,
    pub n_mix: usize,
    pub em: EmConfig,
    /// Reduction settings; `k_reduced` is the final mixture size.
    pub reduce: VhemConfig,
    /// Portion `p` is fitted with stream `p` of this seed.
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct PipelineReport<T> {
    pub portion_sizes: Vec<usize>,
    /// Final log-likelihood of each portion's mixture on its own data.
    pub portion_logliks: Vec<T>,
    pub pooled_size: usize,
    pub bound_history: Vec<T>,
}

#[derive(Debug, Clone)]
pub struct PipelineResult<T> {
    pub model: H3m<T>,
    pub report: PipelineReport<T>,
}

/// Sequence `s` goes to portion `s mod n_portions`.
pub fn partition<T: Clone>(data: &[T], n_portions: usize) -> Vec<Vec<T>> {
    let mut out = vec![Vec::new(); n_portions];
    for (s, item) in data.iter().enumerate() {
        out[s % n_portions].push(item.clone());
    }
    out
}

pub fn split_estimate_aggregate<T: Scalar>(data: &[Sequence<T>], config: &PipelineConfig) -> Result<PipelineResult<T>> {
    if config.n_portions == 0 {
        return Err(Error::Config("need at least one portion".into()));
    }
    let portions = partition(data, config.n_portions);
    if let Some((p, part)) = portions.iter().enumerate().find(|(_, part)| part.len() < config.portion_k.max(1)) {
        return Err(Error::Config(format!(
            "portion {p} has {} sequences, fewer than the {} components fitted per portion",
            part.len(),
            config.portion_k
        )));
    }
    let fits = portions
        .par_iter()
        .enumerate()
        .map(|(p, part)| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(p as u64);
            h3m_em(part, config.portion_k, config.n_states, config.n_mix, &config.em, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;

    let total = T::of_usize(data.len());
    let mut weights = Vec::new();
    let mut comps = Vec::new();
    for (part, fit) in portions.iter().zip(&fits) {
        let share = T::of_usize(part.len()) / total;
        for (w, h) in fit.model.weights().iter().zip(fit.model.components()) {
            weights.push(share * *w);
            comps.push(h.clone());
        }
    }
    let weights = crate::optim::solve_weighted_log(&weights)?;
    let pooled = H3m::new(weights.into(), comps)?;
    let res = vhem_reduce(&pooled, &config.reduce)?;
    Ok(PipelineResult {
        model: res.reduced,
        report: PipelineReport {
            portion_sizes: portions.iter().map(Vec::len).collect(),
            portion_logliks: fits.iter().map(|f| *f.loglik_trace.last().expect("at least one iteration")).collect(),
            pooled_size: pooled.len(),
            bound_history: res.bound_history,
        },
    })
}
