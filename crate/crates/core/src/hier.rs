//! Hierarchical clustering of HMM collections by repeated reduction, and
//! clustering-quality measures.

use std::collections::HashMap;
use std::hash::Hash;

use crate::error::{Error, Result};
use crate::h3m::H3m;
use crate::hmm::Hmm;
use crate::scalar::Scalar;
use crate::vhem::{vhem_reduce, AssignmentMatrix, VhemConfig};

#[derive(Debug, Clone)]
pub struct HierarchyLevel<T> {
    pub models: H3m<T>,
    /// Maps each component of the previous level to its cluster here. Empty at level 0.
    pub parent_of: Vec<usize>,
    pub level_size: usize,
    /// Bound history of the reduction that produced this level. Empty at level 0.
    pub bound_history: Vec<T>,
}

/// Level 0 holds the leaves with uniform weights; level `ℓ + 1` reduces level
/// `ℓ` to `ladder[ℓ]` components. Each level uses seed `config.seed + ℓ`.
pub fn hier_cluster<T: Scalar>(
    leaves: &[Hmm<T>],
    ladder: &[usize],
    config: &VhemConfig,
) -> Result<Vec<HierarchyLevel<T>>> {
    if leaves.is_empty() {
        return Err(Error::Config("no leaves to cluster".into()));
    }
    if let Some(&first) = ladder.first() {
        if first == 0 || first > leaves.len() {
            return Err(Error::Config(format!("first level size {first} must be in 1..={}", leaves.len())));
        }
    }
    if ladder.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::Config(format!("level sizes {ladder:?} must be strictly decreasing")));
    }
    let mut levels = vec![HierarchyLevel {
        models: H3m::uniform(leaves.to_vec())?,
        parent_of: Vec::new(),
        level_size: leaves.len(),
        bound_history: Vec::new(),
    }];
    for (l, &k) in ladder.iter().enumerate() {
        let cfg = VhemConfig { k_reduced: k, seed: config.seed.wrapping_add(l as u64), ..config.clone() };
        let res = vhem_reduce(&levels[l].models, &cfg)?;
        levels.push(HierarchyLevel {
            models: res.reduced,
            parent_of: res.hard_labels,
            level_size: k,
            bound_history: res.bound_history,
        });
    }
    Ok(levels)
}

/// Cluster of every leaf at `level`, composing `parent_of` maps down the tree.
pub fn leaf_labels<T>(levels: &[HierarchyLevel<T>], level: usize) -> Vec<usize> {
    let mut labels: Vec<usize> = (0..levels[0].level_size).collect();
    for lv in &levels[1..=level] {
        for l in labels.iter_mut() {
            *l = lv.parent_of[*l];
        }
    }
    labels
}

/// Argmax per row, ties to the lowest index.
pub fn assign_labels<T: Scalar>(z: &AssignmentMatrix<T>) -> Vec<usize> {
    z.hard_labels()
}

/// Fraction of unordered item pairs on which two labelings agree about
/// being together or apart.
pub fn rand_index<A: Eq, B: Eq>(a: &[A], b: &[B]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch { expected: a.len(), got: b.len() });
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::Config("rand index needs at least two items".into()));
    }
    let mut agree = 0usize;
    for i in 0..n {
        for j in i + 1..n {
            agree += ((a[i] == a[j]) == (b[i] == b[j])) as usize;
        }
    }
    Ok(agree as f64 / (n * (n - 1) / 2) as f64)
}

/// Accuracy of `pred` against `truth` under the best one-to-one relabeling of
/// `pred`, found by exhaustive search (intended for a handful of clusters).
pub fn matching_accuracy<A: Eq + Hash + Clone, B: Eq + Hash + Clone>(pred: &[A], truth: &[B]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::DimensionMismatch { expected: truth.len(), got: pred.len() });
    }
    if pred.is_empty() {
        return Err(Error::Config("no items to score".into()));
    }
    fn index<L: Eq + Hash + Clone>(xs: &[L]) -> (Vec<usize>, usize) {
        let mut ids = HashMap::new();
        let out = xs.iter().map(|x| {
            let next = ids.len();
            *ids.entry(x.clone()).or_insert(next)
        });
        let v: Vec<usize> = out.collect();
        (v, ids.len())
    }
    let (p, kp) = index(pred);
    let (t, kt) = index(truth);
    if kp.max(kt) > 9 {
        return Err(Error::Config("too many clusters for exhaustive matching".into()));
    }
    let k = kp.max(kt);
    let mut counts = vec![vec![0usize; k]; k];
    for (&a, &b) in p.iter().zip(&t) {
        counts[a][b] += 1;
    }
    let mut perm: Vec<usize> = (0..k).collect();
    let mut best = 0usize;
    permute(&mut perm, 0, &mut |pm| {
        let hits: usize = (0..k).map(|a| counts[a][pm[a]]).sum();
        best = best.max(hits);
    });
    Ok(best as f64 / pred.len() as f64)
}

fn permute(v: &mut Vec<usize>, at: usize, visit: &mut dyn FnMut(&[usize])) {
    if at == v.len() {
        visit(v);
        return;
    }
    for i in at..v.len() {
        v.swap(at, i);
        permute(v, at + 1, visit);
        v.swap(at, i);
    }
}
