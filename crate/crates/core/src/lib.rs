//! Clustering of hidden Markov models through the distributions they
//! represent, by variational hierarchical EM.
//!
//! A base mixture of HMMs (an H3M) is reduced to a smaller H3M whose
//! components are newly estimated "cluster center" HMMs. The crate also
//! provides the maximum-likelihood estimators used to build input mixtures
//! (Baum-Welch and mixture EM), a Monte Carlo estimator of the expected
//! log-likelihood between two HMMs, hierarchical clustering by repeated
//! reduction, and the file formats used by the `vhem` command-line tool.
//!
//! All algorithms are generic over the floating-point type through
//! [`Scalar`]; the `*64` and `*32` aliases name the common instantiations.
//!
//! ```
//! use rand::SeedableRng;
//! use rand_chacha::ChaCha8Rng;
//! use vhem::{leaf_labels, hier_cluster, rand_index, synth_benchmark, vhem_reduce, H3m64, SynthSpec, VhemConfig};
//!
//! let bench = synth_benchmark::<f64, _>(&SynthSpec::recovery_benchmark(), &mut ChaCha8Rng::seed_from_u64(1))?;
//! let base = H3m64::uniform(bench.hmms.clone())?;
//! let res = vhem_reduce(&base, &VhemConfig { seed: 1, ..VhemConfig::new(4) })?;
//! assert!(rand_index(&res.hard_labels, &bench.labels)? > 0.9);
//!
//! let levels = hier_cluster(&bench.hmms, &[4, 2], &VhemConfig::new(4))?;
//! assert_eq!(leaf_labels(&levels, 2).len(), 20);
//! # Ok::<(), vhem::Error>(())
//! ```

// `!(x > 0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod error;
pub mod gaussian;
pub mod gmm;
pub mod h3m;
pub mod hier;
pub mod hmm;
pub mod io;
pub mod optim;
pub mod pipeline;
pub mod scalar;
pub mod synth;
pub mod vhem;

pub use error::{Error, Result};
pub use gaussian::{gauss_expected_loglik, Covariance, CovarianceType, Gaussian};
pub use gmm::{
    gmm_expected_loglik_bound, gmm_expected_loglik_opt, gmm_responsibilities, EmissionResponsibility, GaussianMixture,
};
pub use h3m::{h3m_em, h3m_labels, h3m_loglik, h3m_posteriors, h3m_sample, mc_expected_loglik, H3m, H3mFit};
pub use hier::{assign_labels, hier_cluster, leaf_labels, matching_accuracy, rand_index, HierarchyLevel};
pub use hmm::{baum_welch, forward_loglik, sample, state_marginals, EmConfig, Hmm, HmmFit, Sequence};
pub use optim::{log_sum_exp, solve_softmax_log, solve_weighted_log};
pub use pipeline::{split_estimate_aggregate, PipelineConfig, PipelineReport, PipelineResult};
pub use scalar::Scalar;
pub use synth::{sample_dataset, synth_benchmark, two_population_dataset, SynthBenchmark, SynthSpec};
pub use vhem::{
    compute_assignments, elhmm_bruteforce, estep_pair, lower_bound, mstep, summary_stats, vhem_reduce,
    vhem_reduce_from, AssignmentMatrix, InitStrategy, PairEstepResult, ReductionResult, SummaryStats, VhemConfig,
};

pub type Gaussian64 = Gaussian<f64>;
pub type Gaussian32 = Gaussian<f32>;
pub type GaussianMixture64 = GaussianMixture<f64>;
pub type GaussianMixture32 = GaussianMixture<f32>;
pub type Hmm64 = Hmm<f64>;
pub type Hmm32 = Hmm<f32>;
pub type H3m64 = H3m<f64>;
pub type H3m32 = H3m<f32>;
pub type Sequence64 = Sequence<f64>;
pub type Sequence32 = Sequence<f32>;
