//! Model persistence.
//!
//! A model file is one JSON object: a schema version, the model kind, the
//! data columns it was fitted on, provenance, fit metadata and a kind-specific
//! parameter payload. Floats are written in shortest round-trip form and read
//! back with exact parsing, so a save/load cycle reproduces every bit.

use crate::data::Provenance;
use crate::error::{CliError, Result};
use lvm_core::fa::FaParams;
use lvm_core::glm::GlimFamily;
use lvm_core::gmm::GmmParams;
use lvm_core::hmm::HmmParams;
use lvm_core::ica::{IcaModel, Nonlinearity};
use lvm_core::info::DiscreteLatentModel;
use lvm_core::rbm::RbmParams;
use lvm_core::sparse::SparseCodingParams;
use lvm_core::ssm::SsmParams;
use lvm_core::{AffineGaussianChannel, DiscreteDistribution, GaussianBelief};
use nalgebra::{DMatrix, DVector};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    /// Gaussian mixture.
    Gmm,
    /// Factor analysis.
    Fa,
    /// Sparse coding with a Laplace prior.
    Sc,
    /// Hidden Markov model with Gaussian emissions.
    Hmm,
    /// Linear-Gaussian state-space model.
    Ssm,
    /// Binary restricted Boltzmann machine.
    Rbm,
    /// Generalized linear model.
    Glim,
    /// InfoMax independent component analysis.
    Ica,
    /// Mixture of categoricals over one integer symbol column.
    Cat,
}

impl Kind {
    pub fn name(self) -> &'static str {
        match self {
            Kind::Gmm => "gmm",
            Kind::Fa => "fa",
            Kind::Sc => "sc",
            Kind::Hmm => "hmm",
            Kind::Ssm => "ssm",
            Kind::Rbm => "rbm",
            Kind::Glim => "glim",
            Kind::Ica => "ica",
            Kind::Cat => "cat",
        }
    }

    pub fn is_sequential(self) -> bool {
        matches!(self, Kind::Hmm | Kind::Ssm)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitMeta {
    pub seed: u64,
    pub iterations: usize,
    /// Last entry of the fit's objective trace (free energy per sample for EM models).
    pub final_free_energy: Option<f64>,
    pub converged: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile<P> {
    pub schema_version: u32,
    pub kind: Kind,
    /// Data columns the model reads, in order.
    pub columns: Vec<String>,
    /// Response columns of a generalized linear model.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub targets: Vec<String>,
    /// Control-input columns of a state-space model.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub controls: Vec<String>,
    pub data: Provenance,
    pub fit: FitMeta,
    pub params: P,
}

impl<P: Serialize> ModelFile<P> {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("model file serializes");
        s.push('\n');
        s
    }
}

/// Parses a model file, checking the version and then the kind before the payload.
pub fn decode<P: DeserializeOwned>(text: &str, expected: Kind) -> Result<ModelFile<P>> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| CliError::parse(format!("model file is not valid JSON: {e}")))?;
    let version = value
        .get("schema_version")
        .and_then(serde_json::Value::as_u64)
        .ok_or_else(|| CliError::parse("model file has no integer schema_version"))?;
    if version != u64::from(SCHEMA_VERSION) {
        return Err(CliError::Version {
            found: version,
            supported: SCHEMA_VERSION,
        });
    }
    let kind = value
        .get("kind")
        .and_then(serde_json::Value::as_str)
        .ok_or_else(|| CliError::parse("model file has no kind tag"))?
        .to_string();
    if kind != expected.name() {
        return Err(CliError::KindMismatch {
            expected: expected.name().into(),
            found: kind,
        });
    }
    serde_json::from_value(value).map_err(|e| CliError::parse(format!("malformed {kind} model file: {e}")))
}

pub fn read_model<P: DeserializeOwned>(path: &Path, expected: Kind) -> Result<ModelFile<P>> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    decode(&text, expected)
}

fn vector(v: &DVector<f64>) -> Vec<f64> {
    v.iter().copied().collect()
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Matrix from a list of rows; `ncols` fixes the width when there are no rows.
fn matrix(rows: &[Vec<f64>], ncols: usize, field: &str) -> Result<DMatrix<f64>> {
    let width = rows.first().map_or(ncols, Vec::len);
    if rows.iter().any(|r| r.len() != width) {
        return Err(CliError::parse(format!("{field} has rows of different lengths")));
    }
    Ok(DMatrix::from_fn(rows.len(), width, |i, j| rows[i][j]))
}

fn dvec(v: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(v)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GmmPayload {
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub covs: Vec<Vec<Vec<f64>>>,
}

impl From<&GmmParams> for GmmPayload {
    fn from(p: &GmmParams) -> Self {
        Self {
            weights: p.weights.probs().to_vec(),
            means: p.means.iter().map(vector).collect(),
            covs: p.covs.iter().map(rows).collect(),
        }
    }
}

impl GmmPayload {
    pub fn params(&self) -> Result<GmmParams> {
        let covs = self
            .covs
            .iter()
            .map(|c| matrix(c, 0, "covs"))
            .collect::<Result<Vec<_>>>()?;
        Ok(GmmParams::new(
            DiscreteDistribution::new(self.weights.clone())?,
            self.means.iter().map(|m| dvec(m)).collect(),
            covs,
        )?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaPayload {
    /// `D x K`.
    pub loading: Vec<Vec<f64>>,
    pub offset: Vec<f64>,
    pub diag_noise: Vec<f64>,
}

impl From<&FaParams> for FaPayload {
    fn from(p: &FaParams) -> Self {
        Self {
            loading: rows(&p.loading),
            offset: vector(&p.offset),
            diag_noise: vector(&p.diag_noise),
        }
    }
}

impl FaPayload {
    pub fn params(&self) -> Result<FaParams> {
        Ok(FaParams::new(
            matrix(&self.loading, 0, "loading")?,
            dvec(&self.offset),
            dvec(&self.diag_noise),
        )?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScPayload {
    /// `D x K` dictionary.
    pub dict: Vec<Vec<f64>>,
    pub lambda: f64,
    pub alpha: Vec<f64>,
    pub beta: f64,
}

impl From<&SparseCodingParams> for ScPayload {
    fn from(p: &SparseCodingParams) -> Self {
        Self {
            dict: rows(&p.dict),
            lambda: p.lambda,
            alpha: vector(&p.alpha),
            beta: p.beta,
        }
    }
}

impl ScPayload {
    pub fn params(&self) -> Result<SparseCodingParams> {
        Ok(SparseCodingParams::new(
            matrix(&self.dict, self.alpha.len(), "dict")?,
            self.lambda,
            dvec(&self.alpha),
            self.beta,
        )?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HmmPayload {
    pub init: Vec<f64>,
    /// With `columns_are_source_state`, entry `j` lists `p(next | current = j)`;
    /// otherwise entry `i` lists `p(next = i | current = .)`.
    pub trans: Vec<Vec<f64>>,
    pub columns_are_source_state: bool,
    pub means: Vec<Vec<f64>>,
    pub covs: Vec<Vec<Vec<f64>>>,
}

impl From<&HmmParams> for HmmPayload {
    fn from(p: &HmmParams) -> Self {
        Self {
            init: p.init.probs().to_vec(),
            trans: p.trans.column_iter().map(|c| c.iter().copied().collect()).collect(),
            columns_are_source_state: true,
            means: p.means.iter().map(vector).collect(),
            covs: p.covs.iter().map(rows).collect(),
        }
    }
}

impl HmmPayload {
    pub fn params(&self) -> Result<HmmParams> {
        let listed = matrix(&self.trans, 0, "trans")?;
        let trans = if self.columns_are_source_state {
            listed.transpose()
        } else {
            listed
        };
        let covs = self
            .covs
            .iter()
            .map(|c| matrix(c, 0, "covs"))
            .collect::<Result<Vec<_>>>()?;
        Ok(HmmParams::new(
            DiscreteDistribution::new(self.init.clone())?,
            trans,
            self.means.iter().map(|m| dvec(m)).collect(),
            covs,
        )?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[allow(non_snake_case)]
pub struct SsmPayload {
    pub A: Vec<Vec<f64>>,
    /// `K x U` control gain; rows are empty without controls.
    pub B: Vec<Vec<f64>>,
    pub a: Vec<f64>,
    pub Q: Vec<Vec<f64>>,
    pub C: Vec<Vec<f64>>,
    pub c: Vec<f64>,
    pub R: Vec<Vec<f64>>,
    pub mu1: Vec<f64>,
    pub V1: Vec<Vec<f64>>,
}

impl From<&SsmParams> for SsmPayload {
    fn from(p: &SsmParams) -> Self {
        Self {
            A: rows(p.trans.weights()),
            B: rows(&p.control_gain),
            a: vector(p.trans.offset()),
            Q: rows(p.trans.noise_cov()),
            C: rows(p.emission.weights()),
            c: vector(p.emission.offset()),
            R: rows(p.emission.noise_cov()),
            mu1: vector(p.init.mean()),
            V1: rows(p.init.cov()),
        }
    }
}

impl SsmPayload {
    pub fn params(&self) -> Result<SsmParams> {
        let k = self.mu1.len();
        let trans = AffineGaussianChannel::new(matrix(&self.A, k, "A")?, dvec(&self.a), matrix(&self.Q, k, "Q")?)?;
        let emission = AffineGaussianChannel::new(matrix(&self.C, k, "C")?, dvec(&self.c), matrix(&self.R, 0, "R")?)?;
        let init = GaussianBelief::new(dvec(&self.mu1), matrix(&self.V1, k, "V1")?)?;
        Ok(SsmParams::new(trans, matrix(&self.B, 0, "B")?, emission, init)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RbmPayload {
    /// `V x H`.
    pub weights: Vec<Vec<f64>>,
    pub visible_bias: Vec<f64>,
    pub hidden_bias: Vec<f64>,
}

impl From<&RbmParams> for RbmPayload {
    fn from(p: &RbmParams) -> Self {
        Self {
            weights: rows(&p.weights),
            visible_bias: vector(&p.visible_bias),
            hidden_bias: vector(&p.hidden_bias),
        }
    }
}

impl RbmPayload {
    pub fn params(&self) -> Result<RbmParams> {
        Ok(RbmParams::new(
            matrix(&self.weights, self.hidden_bias.len(), "weights")?,
            dvec(&self.visible_bias),
            dvec(&self.hidden_bias),
        )?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlimPayload {
    pub family: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma_scale: Option<f64>,
    /// Whether a constant input of one follows the data columns.
    pub intercept: bool,
    /// One row of coefficients per target column.
    pub weights: Vec<Vec<f64>>,
}

impl GlimPayload {
    pub fn new(family: &GlimFamily, intercept: bool, weights: &DMatrix<f64>) -> Self {
        Self {
            family: family.name().into(),
            gamma_scale: match family {
                GlimFamily::GammaShapeLog { scale } => Some(*scale),
                _ => None,
            },
            intercept,
            weights: rows(weights),
        }
    }

    pub fn family(&self) -> Result<GlimFamily> {
        family_from_name(&self.family, self.gamma_scale)
            .ok_or_else(|| CliError::parse(format!("unknown family {:?}", self.family)))
    }

    pub fn weights(&self) -> Result<DMatrix<f64>> {
        matrix(&self.weights, 0, "weights")
    }
}

pub fn family_from_name(name: &str, gamma_scale: Option<f64>) -> Option<GlimFamily> {
    Some(match name {
        "gaussian" => GlimFamily::Gaussian,
        "bernoulli-logit" => GlimFamily::BernoulliLogit,
        "poisson-log" => GlimFamily::PoissonLog,
        "gamma-shape-log" => GlimFamily::GammaShapeLog {
            scale: gamma_scale.unwrap_or(1.0),
        },
        _ => return None,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IcaPayload {
    pub nonlinearity: String,
    pub unmixing: Vec<Vec<f64>>,
}

impl From<&IcaModel> for IcaPayload {
    fn from(m: &IcaModel) -> Self {
        Self {
            nonlinearity: m.nonlinearity.name().into(),
            unmixing: rows(&m.unmixing),
        }
    }
}

impl IcaPayload {
    pub fn model(&self) -> Result<IcaModel> {
        let g = [Nonlinearity::Logistic, Nonlinearity::GaussianCdf]
            .into_iter()
            .find(|g| g.name() == self.nonlinearity)
            .ok_or_else(|| CliError::parse(format!("unknown nonlinearity {:?}", self.nonlinearity)))?;
        Ok(IcaModel::new(matrix(&self.unmixing, 0, "unmixing")?, g)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatPayload {
    pub source: Vec<f64>,
    /// Row `k` is the symbol distribution of class `k`.
    pub emission: Vec<Vec<f64>>,
}

impl From<&DiscreteLatentModel> for CatPayload {
    fn from(m: &DiscreteLatentModel) -> Self {
        Self {
            source: m.source().probs().to_vec(),
            emission: rows(m.emission()),
        }
    }
}

impl CatPayload {
    pub fn model(&self) -> Result<DiscreteLatentModel> {
        Ok(DiscreteLatentModel::new(
            DiscreteDistribution::new(self.source.clone())?,
            matrix(&self.emission, 0, "emission")?,
        )?)
    }
}
