//! InfoMax independent-components analysis.
//!
//! Sources are `s = W x` passed through an elementwise cdf `f`. Maximizing
//! the output entropy is the same as minimizing
//! `L(W) = <sum_k -log f'(s_k)> - log|det W|`, which is also the cross
//! entropy of the data under the generative model `x = W^-1 s` with
//! independent sources of density `f'`.

use crate::data::Dataset;
use crate::prelude::*;
use crate::special::{normal_cdf, sigmoid, softplus};
use rand::Rng;

/// Smallest `|det W|` accepted.
pub const DET_FLOOR: f64 = 1e-12;

const ROUNDING: f64 = 8.0 * f64::EPSILON;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Nonlinearity {
    /// Logistic sigmoid; sources with density `sigma(s)(1 - sigma(s))`.
    #[default]
    Logistic,
    /// Standard normal cdf; Gaussian sources.
    GaussianCdf,
}

impl Nonlinearity {
    pub fn name(&self) -> &'static str {
        match self {
            Nonlinearity::Logistic => "logistic-cdf",
            Nonlinearity::GaussianCdf => "gaussian-cdf",
        }
    }

    pub fn cdf(&self, s: f64) -> f64 {
        match self {
            Nonlinearity::Logistic => sigmoid(s),
            Nonlinearity::GaussianCdf => normal_cdf(s),
        }
    }

    /// `-log f'(s)`.
    pub fn neg_log_density(&self, s: f64) -> f64 {
        match self {
            Nonlinearity::Logistic => softplus(s) + softplus(-s),
            Nonlinearity::GaussianCdf => 0.5 * s * s + 0.5 * crate::linalg::LN_2PI,
        }
    }

    /// `d/ds -log f'(s)`.
    pub fn score(&self, s: f64) -> f64 {
        match self {
            Nonlinearity::Logistic => (0.5 * s).tanh(),
            Nonlinearity::GaussianCdf => s,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IcaModel {
    /// Square `K x K` unmixing matrix.
    pub unmixing: DMatrix<f64>,
    pub nonlinearity: Nonlinearity,
}

impl IcaModel {
    pub fn new(unmixing: DMatrix<f64>, nonlinearity: Nonlinearity) -> Result<Self> {
        let m = Self { unmixing, nonlinearity };
        m.log_abs_det()?;
        Ok(m)
    }

    pub fn dim(&self) -> usize {
        self.unmixing.nrows()
    }

    pub fn log_abs_det(&self) -> Result<f64> {
        if !self.unmixing.is_square() {
            return Err(dim_err!(
                "unmixing matrix is {}x{}",
                self.unmixing.nrows(),
                self.unmixing.ncols()
            ));
        }
        let det = self.unmixing.clone().lu().determinant();
        if !(det.abs() > DET_FLOOR) {
            return Err(singular!("unmixing matrix has |det| = {:e}", det.abs()));
        }
        Ok(det.abs().ln())
    }

    /// Unmixed sources `W x` for every row, `N x K`.
    pub fn sources(&self, batch: &Dataset) -> Result<DMatrix<f64>> {
        batch.check_dim(self.dim())?;
        Ok(batch.matrix() * self.unmixing.transpose())
    }

    /// `log p(x)` for every row under the generative reading of the model.
    pub fn log_density(&self, batch: &Dataset) -> Result<DVector<f64>> {
        let ld = self.log_abs_det()?;
        let s = self.sources(batch)?;
        Ok(DVector::from_iterator(
            s.nrows(),
            s.row_iter()
                .map(|r| ld - r.iter().map(|v| self.nonlinearity.neg_log_density(*v)).sum::<f64>()),
        ))
    }
}

/// `<sum_k -log f'((W x)_k)>`.
pub fn ica_data_term(model: &IcaModel, batch: &Dataset) -> Result<f64> {
    let s = model.sources(batch)?;
    Ok(s.iter().map(|v| model.nonlinearity.neg_log_density(*v)).sum::<f64>() / batch.n() as f64)
}

/// `<sum_k -log f'((W x)_k)> - log|det W|`.
pub fn ica_loss(model: &IcaModel, batch: &Dataset) -> Result<f64> {
    Ok(ica_data_term(model, batch)? - model.log_abs_det()?)
}

/// `<psi(W x) x'> - W^-T`, with `psi` the elementwise score.
pub fn ica_gradient(model: &IcaModel, batch: &Dataset) -> Result<DMatrix<f64>> {
    model.log_abs_det()?;
    let s = model.sources(batch)?;
    let psi = s.map(|v| model.nonlinearity.score(v));
    let inv = crate::linalg::inverse(&model.unmixing, "unmixing matrix")?;
    Ok(psi.tr_mul(batch.matrix()) / batch.n() as f64 - inv.transpose())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IcaConfig {
    /// Initial step of each backtracking search.
    pub lr: f64,
    pub iters: usize,
    pub seed: u64,
    pub nonlinearity: Nonlinearity,
}

impl Default for IcaConfig {
    fn default() -> Self {
        Self {
            lr: 0.1,
            iters: 500,
            seed: 0,
            nonlinearity: Nonlinearity::Logistic,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IcaFit {
    pub model: IcaModel,
    /// Loss at the initialization and after every accepted step.
    pub loss: Vec<f64>,
}

/// Identity plus a small seeded perturbation.
pub fn ica_init(k: usize, config: &IcaConfig) -> Result<IcaModel> {
    let mut rng = crate::rng::substream(config.seed, "ica-init", 0);
    let w = DMatrix::identity(k, k)
        + DMatrix::from_fn(k, k, |_, _| 0.01 * rng.sample::<f64, _>(rand_distr::StandardNormal));
    IcaModel::new(w, config.nonlinearity)
}

/// Gradient descent with backtracking: each iteration starts from `lr` and
/// halves until the loss does not increase.
pub fn ica_fit(batch: &Dataset, config: &IcaConfig) -> Result<IcaFit> {
    if !(config.lr > 0.0) {
        return Err(Error::Precondition(alloc::format!(
            "learning rate {} must be positive",
            config.lr
        )));
    }
    let mut model = ica_init(batch.dim(), config)?;
    let mut loss = ica_loss(&model, batch)?;
    let mut trace = vec![loss];
    for _ in 0..config.iters {
        let g = ica_gradient(&model, batch)?;
        let mut step = config.lr;
        let mut accepted = None;
        for _ in 0..=crate::glm::MAX_HALVINGS {
            let cand = IcaModel {
                unmixing: &model.unmixing - &g * step,
                nonlinearity: model.nonlinearity,
            };
            if let Ok(l) = ica_loss(&cand, batch) {
                if l <= loss + ROUNDING * loss.abs() {
                    accepted = Some((cand, l));
                    break;
                }
            }
            step *= 0.5;
        }
        match accepted {
            Some((m, l)) => {
                model = m;
                loss = l;
                trace.push(l);
            }
            None => break,
        }
    }
    Ok(IcaFit { model, loss: trace })
}

/// Amari-style index of `P = W A`: zero exactly when `P` is a scaled
/// permutation, at most one.
pub fn amari_index(p: &DMatrix<f64>) -> f64 {
    let k = p.nrows();
    if k < 2 {
        return 0.0;
    }
    let a = p.abs();
    let rows: f64 = a.row_iter().map(|r| r.sum() / r.max() - 1.0).sum();
    let cols: f64 = a.column_iter().map(|c| c.sum() / c.max() - 1.0).sum();
    (rows + cols) / (2.0 * k as f64 * (k as f64 - 1.0))
}

fn abs_correlation(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    (sab / (saa * sbb).sqrt()).abs()
}

fn permutations(k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for p in permutations(k - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, k - 1);
            out.push(q);
        }
    }
    out
}

/// Absolute correlation of each true source with its matched estimate, under
/// the permutation maximizing the total. Columns are sources.
pub fn aligned_correlations(estimated: &DMatrix<f64>, truth: &DMatrix<f64>) -> Result<Vec<f64>> {
    if estimated.shape() != truth.shape() {
        return Err(dim_err!(
            "estimated sources {:?} vs true {:?}",
            estimated.shape(),
            truth.shape()
        ));
    }
    let k = truth.ncols();
    if k > 8 {
        return Err(Error::Precondition(
            "source alignment enumerates permutations; at most 8 sources".into(),
        ));
    }
    let c = DMatrix::from_fn(k, k, |i, j| {
        abs_correlation(truth.column(i).as_slice(), estimated.column(j).as_slice())
    });
    let best = permutations(k)
        .into_iter()
        .max_by(|p, q| {
            let sp: f64 = p.iter().enumerate().map(|(i, j)| c[(i, *j)]).sum();
            let sq: f64 = q.iter().enumerate().map(|(i, j)| c[(i, *j)]).sum();
            sp.total_cmp(&sq)
        })
        .expect("at least one permutation");
    Ok(best.iter().enumerate().map(|(i, j)| c[(i, *j)]).collect())
}
