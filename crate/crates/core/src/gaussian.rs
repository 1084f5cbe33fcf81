//! Multivariate Gaussian with diagonal or full covariance.

use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CovarianceType {
    #[default]
    Diagonal,
    Full,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Covariance<T> {
    /// Per-dimension variances.
    Diagonal(Array1<T>),
    /// Symmetric positive-definite matrix.
    Full(Array2<T>),
}

impl<T: Scalar> Covariance<T> {
    pub fn dim(&self) -> usize {
        match self {
            Covariance::Diagonal(v) => v.len(),
            Covariance::Full(m) => m.nrows(),
        }
    }

    pub fn kind(&self) -> CovarianceType {
        match self {
            Covariance::Diagonal(_) => CovarianceType::Diagonal,
            Covariance::Full(_) => CovarianceType::Full,
        }
    }

    pub fn diag(&self, k: usize) -> T {
        match self {
            Covariance::Diagonal(v) => v[k],
            Covariance::Full(m) => m[[k, k]],
        }
    }

    pub fn to_dense(&self) -> Array2<T> {
        match self {
            Covariance::Diagonal(v) => Array2::from_diag(v),
            Covariance::Full(m) => m.clone(),
        }
    }

    /// Converts to the requested representation. Full to diagonal keeps only the variances.
    pub fn into_kind(self, kind: CovarianceType) -> Self {
        match (self, kind) {
            (Covariance::Full(m), CovarianceType::Diagonal) => Covariance::Diagonal(m.diag().to_owned()),
            (Covariance::Diagonal(v), CovarianceType::Full) => Covariance::Full(Array2::from_diag(&v)),
            (c, _) => c,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Factor<T> {
    /// Standard deviations.
    Diagonal(Array1<T>),
    /// Lower Cholesky factor.
    Lower(Array2<T>),
}

/// Gaussian density `N(mean, covariance)`; the Cholesky factor and log-determinant
/// are computed once at construction.
#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian<T> {
    mean: Array1<T>,
    cov: Covariance<T>,
    factor: Factor<T>,
    log_det: T,
}

/// Lower Cholesky factor of a symmetric matrix, or `None` if it is not positive definite.
pub(crate) fn cholesky<T: Scalar>(a: &Array2<T>) -> Option<Array2<T>> {
    let n = a.nrows();
    let mut l = Array2::<T>::zeros((n, n));
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[[i, j]];
            for k in 0..j {
                s -= l[[i, k]] * l[[j, k]];
            }
            if i == j {
                if !(s > T::zero()) || !s.is_finite() {
                    return None;
                }
                l[[i, i]] = s.sqrt();
            } else {
                l[[i, j]] = s / l[[j, j]];
            }
        }
    }
    Some(l)
}

fn forward_substitute<T: Scalar>(l: &Array2<T>, b: ArrayView1<T>) -> Array1<T> {
    let n = l.nrows();
    let mut x = Array1::<T>::zeros(n);
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[[i, k]] * x[k];
        }
        x[i] = s / l[[i, i]];
    }
    x
}

impl<T: Scalar> Gaussian<T> {
    pub fn new(mean: Array1<T>, cov: Covariance<T>) -> Result<Self> {
        let d = mean.len();
        if d == 0 {
            return Err(Error::InvalidModel("gaussian must have dimension >= 1".into()));
        }
        if cov.dim() != d {
            return Err(Error::DimensionMismatch { expected: d, got: cov.dim() });
        }
        if mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::InvalidModel("gaussian mean is not finite".into()));
        }
        let (factor, log_det) = match &cov {
            Covariance::Diagonal(v) => {
                if let Some(bad) = v.iter().find(|x| !(x.is_finite() && **x > T::zero())) {
                    return Err(Error::InvalidModel(format!("variance must be positive and finite, got {bad}")));
                }
                let log_det = v.iter().map(|x| x.ln()).sum();
                (Factor::Diagonal(v.mapv(|x| x.sqrt())), log_det)
            }
            Covariance::Full(m) => {
                if m.ncols() != d {
                    return Err(Error::DimensionMismatch { expected: d, got: m.ncols() });
                }
                let scale = m.iter().fold(T::zero(), |a, x| a.max(x.abs()));
                for i in 0..d {
                    for j in 0..i {
                        if (m[[i, j]] - m[[j, i]]).abs() > T::stochastic_tol() * scale.max(T::one()) {
                            return Err(Error::InvalidModel(format!("covariance is not symmetric at ({i}, {j})")));
                        }
                    }
                }
                let l = cholesky(m).ok_or_else(|| Error::InvalidModel("covariance is not positive definite".into()))?;
                let log_det = (0..d).map(|i| l[[i, i]].ln()).sum::<T>() * T::of(2.0);
                (Factor::Lower(l), log_det)
            }
        };
        Ok(Self { mean, cov, factor, log_det })
    }

    /// Zero-mean, identity-covariance Gaussian.
    pub fn standard(dim: usize, kind: CovarianceType) -> Self {
        let cov = Covariance::Diagonal(Array1::from_elem(dim, T::one())).into_kind(kind);
        Self::new(Array1::zeros(dim), cov).expect("identity covariance is valid")
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &Array1<T> {
        &self.mean
    }

    pub fn covariance(&self) -> &Covariance<T> {
        &self.cov
    }

    pub fn log_det(&self) -> T {
        self.log_det
    }

    /// `L⁻¹ v` where `L Lᵀ` is the covariance.
    fn whiten(&self, v: ArrayView1<T>) -> Array1<T> {
        match &self.factor {
            Factor::Diagonal(sd) => &v / sd,
            Factor::Lower(l) => forward_substitute(l, v),
        }
    }

    fn dense_factor(&self) -> Array2<T> {
        match &self.factor {
            Factor::Diagonal(sd) => Array2::from_diag(sd),
            Factor::Lower(l) => l.clone(),
        }
    }

    /// `(y − μ)ᵀ Σ⁻¹ (y − μ)`.
    pub fn mahalanobis_sq(&self, y: ArrayView1<T>) -> T {
        let diff = &y - &self.mean;
        let w = self.whiten(diff.view());
        w.dot(&w)
    }

    pub fn log_density(&self, y: ArrayView1<T>) -> T {
        let d = T::of_usize(self.dim());
        let two_pi = T::PI() * T::of(2.0);
        -T::of(0.5) * (d * two_pi.ln() + self.log_det + self.mahalanobis_sq(y))
    }

    /// `tr(Σ⁻¹ Σ_other)`.
    fn trace_inv_times(&self, other: &Gaussian<T>) -> T {
        match &self.factor {
            Factor::Diagonal(sd) => (0..self.dim()).map(|k| other.cov.diag(k) / (sd[k] * sd[k])).sum(),
            Factor::Lower(_) => {
                let b = other.dense_factor();
                (0..b.ncols())
                    .map(|c| {
                        let w = self.whiten(b.column(c));
                        w.dot(&w)
                    })
                    .sum()
            }
        }
    }

    /// Clamps every variance to at least `floor`. A full covariance that loses
    /// positive-definiteness afterwards gets `floor` added to its diagonal until it
    /// factors again.
    pub fn with_floor(self, floor: T) -> Result<Self> {
        match self.cov {
            Covariance::Diagonal(v) => {
                if v.iter().all(|x| *x >= floor) {
                    let cov = Covariance::Diagonal(v);
                    return Ok(Self { cov, ..self });
                }
                Self::new(self.mean, Covariance::Diagonal(v.mapv(|x| x.max(floor))))
            }
            Covariance::Full(mut m) => {
                let d = m.nrows();
                let mut clamped = false;
                for k in 0..d {
                    if !(m[[k, k]] >= floor) {
                        m[[k, k]] = floor;
                        clamped = true;
                    }
                }
                if !clamped {
                    let cov = Covariance::Full(m);
                    return Ok(Self { cov, ..self });
                }
                let mut jitter = floor.max(T::min_positive_value());
                for _ in 0..60 {
                    if cholesky(&m).is_some() {
                        return Self::new(self.mean, Covariance::Full(m));
                    }
                    for k in 0..d {
                        m[[k, k]] += jitter;
                    }
                    jitter *= T::of(2.0);
                }
                Err(Error::InvalidModel("covariance could not be regularized to positive definite".into()))
            }
        }
    }

    pub fn with_kind(self, kind: CovarianceType) -> Result<Self> {
        if self.cov.kind() == kind {
            return Ok(self);
        }
        Self::new(self.mean, self.cov.into_kind(kind))
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Array1<T> {
        let z: Array1<T> = (0..self.dim()).map(|_| T::of(rng.sample::<f64, _>(StandardNormal))).collect();
        match &self.factor {
            Factor::Diagonal(sd) => &self.mean + &(&z * sd),
            Factor::Lower(l) => &self.mean + &l.dot(&z),
        }
    }
}

/// Exact `E_{y ~ base}[log N(y; reduced)]`:
/// `−½[d log 2π + log|Σ_r| + tr(Σ_r⁻¹ Σ_b) + (μ_r − μ_b)ᵀ Σ_r⁻¹ (μ_r − μ_b)]`.
pub fn gauss_expected_loglik<T: Scalar>(base: &Gaussian<T>, reduced: &Gaussian<T>) -> Result<T> {
    if base.dim() != reduced.dim() {
        return Err(Error::DimensionMismatch { expected: reduced.dim(), got: base.dim() });
    }
    let d = T::of_usize(base.dim());
    let two_pi = T::PI() * T::of(2.0);
    let quad = reduced.mahalanobis_sq(base.mean.view());
    let trace = reduced.trace_inv_times(base);
    let value = -T::of(0.5) * (d * two_pi.ln() + reduced.log_det + trace + quad);
    if !value.is_finite() {
        return Err(Error::InvalidModel("expected log-likelihood is not finite".into()));
    }
    Ok(value)
}
