use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::format::{to_writer, Precise};
use crate::error::{Error, Result};
use crate::gaussian::{Covariance, Gaussian};
use crate::gmm::GaussianMixture;
use crate::h3m::H3m;
use crate::hmm::Hmm;
use crate::scalar::Scalar;

pub const SCHEMA_VERSION: &str = "vhem-model/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Hmm,
    H3m,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Model<T> {
    Hmm(Hmm<T>),
    H3m(H3m<T>),
}

impl<T: Scalar> Model<T> {
    pub fn kind(&self) -> ModelKind {
        match self {
            Model::Hmm(_) => ModelKind::Hmm,
            Model::H3m(_) => ModelKind::H3m,
        }
    }

    /// A single HMM becomes a one-component mixture.
    pub fn into_h3m(self) -> H3m<T> {
        match self {
            Model::Hmm(h) => H3m::uniform(vec![h]).expect("one component is a valid mixture"),
            Model::H3m(m) => m,
        }
    }
}

/// A model together with the seed that produced it, if any.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile<T> {
    pub model: Model<T>,
    pub seed: Option<u64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Repr {
    schema_version: String,
    kind: ModelKind,
    metadata: Metadata,
    payload: Payload,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Metadata {
    dim: usize,
    n_states: usize,
    n_mix: usize,
    n_components: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Payload {
    weights: Vec<f64>,
    components: Vec<HmmRepr>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HmmRepr {
    initial: Vec<f64>,
    transitions: Vec<Vec<f64>>,
    emissions: Vec<MixtureRepr>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MixtureRepr {
    weights: Vec<f64>,
    components: Vec<GaussianRepr>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GaussianRepr {
    mean: Vec<f64>,
    covariance: CovarianceRepr,
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", content = "values", rename_all = "lowercase")]
enum CovarianceRepr {
    Diag(Vec<f64>),
    Full(Vec<Vec<f64>>),
}

#[derive(Deserialize)]
struct Header {
    schema_version: Option<String>,
}

fn gaussian_repr<T: Scalar>(g: &Gaussian<T>) -> GaussianRepr {
    let f = |x: &T| x.to_f64_lossy();
    GaussianRepr {
        mean: g.mean().iter().map(f).collect(),
        covariance: match g.covariance() {
            Covariance::Diagonal(v) => CovarianceRepr::Diag(v.iter().map(f).collect()),
            Covariance::Full(m) => {
                CovarianceRepr::Full(m.rows().into_iter().map(|r| r.iter().map(f).collect()).collect())
            }
        },
    }
}

fn hmm_repr<T: Scalar>(h: &Hmm<T>) -> HmmRepr {
    let f = |x: &T| x.to_f64_lossy();
    HmmRepr {
        initial: h.initial().iter().map(f).collect(),
        transitions: h.transitions().rows().into_iter().map(|r| r.iter().map(f).collect()).collect(),
        emissions: h
            .emissions()
            .iter()
            .map(|e| MixtureRepr {
                weights: e.weights().iter().map(f).collect(),
                components: e.components().iter().map(gaussian_repr).collect(),
            })
            .collect(),
    }
}

fn repr<T: Scalar>(file: &ModelFile<T>) -> Repr {
    let (weights, comps): (Vec<f64>, Vec<&Hmm<T>>) = match &file.model {
        Model::Hmm(h) => (vec![1.0], vec![h]),
        Model::H3m(m) => (m.weights().iter().map(|w| w.to_f64_lossy()).collect(), m.components().iter().collect()),
    };
    let first = comps[0];
    Repr {
        schema_version: SCHEMA_VERSION.into(),
        kind: file.model.kind(),
        metadata: Metadata {
            dim: first.dim(),
            n_states: first.n_states(),
            n_mix: first.n_mix(),
            n_components: comps.len(),
            seed: file.seed,
        },
        payload: Payload { weights, components: comps.into_iter().map(hmm_repr).collect() },
    }
}

pub fn model_to_string<T: Scalar>(file: &ModelFile<T>) -> String {
    let mut out = Vec::new();
    to_writer(&mut out, Precise::pretty(), &repr(file)).expect("writing to memory cannot fail");
    out.push(b'\n');
    String::from_utf8(out).expect("serializer emits UTF-8")
}

pub fn save_model<T: Scalar>(path: impl AsRef<Path>, file: &ModelFile<T>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(model_to_string(file).as_bytes())?;
    w.flush()?;
    Ok(())
}

pub fn load_model<T: Scalar>(path: impl AsRef<Path>) -> Result<ModelFile<T>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    model_from_str(&text, &path.display().to_string())
}

fn parse_error(e: serde_json::Error, source_name: &str) -> Error {
    Error::Parse { source_name: source_name.into(), line: e.line(), column: e.column(), message: e.to_string() }
}

/// Parses and validates a model file. `source_name` labels parse errors.
pub fn model_from_str<T: Scalar>(text: &str, source_name: &str) -> Result<ModelFile<T>> {
    let header: Header = serde_json::from_str(text).map_err(|e| parse_error(e, source_name))?;
    match header.schema_version {
        Some(v) if v == SCHEMA_VERSION => {}
        found => {
            return Err(Error::SchemaVersion {
                found: found.unwrap_or_else(|| "<missing>".into()),
                expected: SCHEMA_VERSION.into(),
            })
        }
    }
    let repr: Repr = serde_json::from_str(text).map_err(|e| parse_error(e, source_name))?;
    build(repr)
}

fn invalid(path: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Validation { path: path.into(), message: message.into() }
}

const STOCHASTIC_TOL: f64 = 1e-9;

fn check_probs(v: &[f64], path: &str) -> Result<()> {
    if v.is_empty() {
        return Err(invalid(path, "is empty"));
    }
    if let Some((k, x)) = v.iter().enumerate().find(|(_, x)| !(x.is_finite() && **x >= 0.0)) {
        return Err(invalid(format!("{path}[{k}]"), format!("{x} is not a probability")));
    }
    let s: f64 = v.iter().sum();
    if (s - 1.0).abs() > STOCHASTIC_TOL {
        return Err(invalid(path, format!("sums to {s}")));
    }
    Ok(())
}

fn check_len(got: usize, expected: usize, path: &str, what: &str) -> Result<()> {
    if got != expected {
        return Err(invalid(path, format!("has {got} {what}, expected {expected}")));
    }
    Ok(())
}

fn check_finite(v: &[f64], path: &str) -> Result<()> {
    match v.iter().position(|x| !x.is_finite()) {
        Some(k) => Err(invalid(format!("{path}[{k}]"), "is not finite")),
        None => Ok(()),
    }
}

fn build<T: Scalar>(r: Repr) -> Result<ModelFile<T>> {
    let md = &r.metadata;
    let p = &r.payload;
    check_len(p.components.len(), md.n_components, "payload.components", "entries")?;
    check_len(p.weights.len(), md.n_components, "payload.weights", "entries")?;
    if md.n_components == 0 || md.n_states == 0 || md.n_mix == 0 || md.dim == 0 {
        return Err(invalid("metadata", "dim, n_states, n_mix and n_components must be positive"));
    }
    if r.kind == ModelKind::Hmm && md.n_components != 1 {
        return Err(invalid("metadata.n_components", "an hmm file holds exactly one component"));
    }
    check_probs(&p.weights, "payload.weights")?;
    let comps = p
        .components
        .iter()
        .enumerate()
        .map(|(k, h)| build_hmm(h, md, &format!("components[{k}]")))
        .collect::<Result<Vec<_>>>()?;
    let model = match r.kind {
        ModelKind::Hmm => Model::Hmm(comps.into_iter().next().expect("one component")),
        ModelKind::H3m => Model::H3m(
            H3m::new(p.weights.iter().map(|&w| T::of(w)).collect(), comps)
                .map_err(|e| invalid("payload", e.to_string()))?,
        ),
    };
    Ok(ModelFile { model, seed: md.seed })
}

fn build_hmm<T: Scalar>(h: &HmmRepr, md: &Metadata, path: &str) -> Result<Hmm<T>> {
    let n = md.n_states;
    check_len(h.initial.len(), n, &format!("{path}.initial"), "entries")?;
    check_probs(&h.initial, &format!("{path}.initial"))?;
    check_len(h.transitions.len(), n, &format!("{path}.transitions"), "rows")?;
    let mut trans = Array2::zeros((n, n));
    for (r, row) in h.transitions.iter().enumerate() {
        let rp = format!("{path}.transitions row {r}");
        check_len(row.len(), n, &rp, "entries")?;
        check_probs(row, &rp)?;
        for (c, &x) in row.iter().enumerate() {
            trans[[r, c]] = T::of(x);
        }
    }
    check_len(h.emissions.len(), n, &format!("{path}.emissions"), "entries")?;
    let emissions = h
        .emissions
        .iter()
        .enumerate()
        .map(|(s, e)| {
            let ep = format!("{path}.emissions[{s}]");
            check_len(e.weights.len(), md.n_mix, &format!("{ep}.weights"), "entries")?;
            check_probs(&e.weights, &format!("{ep}.weights"))?;
            check_len(e.components.len(), md.n_mix, &format!("{ep}.components"), "entries")?;
            let gs = e
                .components
                .iter()
                .enumerate()
                .map(|(m, g)| build_gaussian(g, md.dim, &format!("{ep}.components[{m}]")))
                .collect::<Result<Vec<_>>>()?;
            GaussianMixture::new(e.weights.iter().map(|&w| T::of(w)).collect(), gs)
                .map_err(|err| invalid(&ep, err.to_string()))
        })
        .collect::<Result<Vec<_>>>()?;
    Hmm::new(h.initial.iter().map(|&x| T::of(x)).collect(), trans, emissions).map_err(|e| invalid(path, e.to_string()))
}

fn build_gaussian<T: Scalar>(g: &GaussianRepr, d: usize, path: &str) -> Result<Gaussian<T>> {
    check_len(g.mean.len(), d, &format!("{path}.mean"), "entries")?;
    check_finite(&g.mean, &format!("{path}.mean"))?;
    let cp = format!("{path}.covariance");
    let cov = match &g.covariance {
        CovarianceRepr::Diag(v) => {
            check_len(v.len(), d, &cp, "entries")?;
            check_finite(v, &cp)?;
            Covariance::Diagonal(v.iter().map(|&x| T::of(x)).collect::<Array1<T>>())
        }
        CovarianceRepr::Full(rows) => {
            check_len(rows.len(), d, &cp, "rows")?;
            let mut m = Array2::zeros((d, d));
            for (r, row) in rows.iter().enumerate() {
                check_len(row.len(), d, &format!("{cp} row {r}"), "entries")?;
                check_finite(row, &format!("{cp} row {r}"))?;
                for (c, &x) in row.iter().enumerate() {
                    m[[r, c]] = T::of(x);
                }
            }
            Covariance::Full(m)
        }
    };
    Gaussian::new(g.mean.iter().map(|&x| T::of(x)).collect(), cov).map_err(|e| invalid(path, e.to_string()))
}
