//! Discriminative regression: least squares in its plain, ridge and weighted
//! forms, and Newton-Raphson (IRLS) for generalized linear models.
//!
//! Data sets hold one sample per row. A fitted [`LinearMap`] predicts
//! `z = W x + offset`. The least-squares fits center both sides first and
//! put the means into `offset`; IRLS works on the raw inputs, so an intercept
//! needs a constant input column.

use crate::data::Dataset;
use crate::linalg::symmetrize;
use crate::prelude::*;
use crate::special::{digamma, ln_gamma, sigmoid, softplus, trigamma};
use nalgebra::{Cholesky, Dyn};

/// Smallest pivot ratio accepted by the strict Cholesky factorization.
const PIVOT_TOL: f64 = 1e-13;

/// Maximum number of step halvings in one IRLS iteration.
pub const MAX_HALVINGS: usize = 30;

/// Relative objective change treated as rounding noise by the step search.
const ROUNDING: f64 = 8.0 * f64::EPSILON;

/// Weight norm beyond which a logistic fit is declared separated.
pub const SEPARATION_NORM: f64 = 1e6;

#[derive(Debug, Clone, PartialEq)]
pub struct LinearMap {
    /// `K x D`.
    pub weights: DMatrix<f64>,
    /// `K`.
    pub offset: DVector<f64>,
}

impl LinearMap {
    pub fn new(weights: DMatrix<f64>, offset: DVector<f64>) -> Result<Self> {
        if weights.nrows() != offset.len() {
            return Err(dim_err!("{} output rows but {} offsets", weights.nrows(), offset.len()));
        }
        crate::linalg::check_finite(&weights, "weights")?;
        Ok(Self { weights, offset })
    }

    /// Predictions for every input row, `N x K`.
    pub fn predict(&self, inputs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if inputs.ncols() != self.weights.ncols() {
            return Err(dim_err!(
                "inputs have {} columns, map expects {}",
                inputs.ncols(),
                self.weights.ncols()
            ));
        }
        let mut z = inputs * self.weights.transpose();
        for mut r in z.row_iter_mut() {
            r += self.offset.transpose();
        }
        Ok(z)
    }
}

/// Factorization without jitter that also rejects near-zero pivots.
fn strict_cholesky(m: &DMatrix<f64>, what: &str) -> Result<Cholesky<f64, Dyn>> {
    let sym = symmetrize(m);
    let scale = sym.diagonal().iter().cloned().fold(0.0, f64::max);
    let chol = sym
        .cholesky()
        .ok_or_else(|| singular!("{what} is not positive definite"))?;
    let min_pivot = chol
        .l_dirty()
        .diagonal()
        .iter()
        .map(|d| d * d)
        .fold(f64::INFINITY, f64::min);
    if !(min_pivot > PIVOT_TOL * scale) {
        return Err(singular!("{what} is numerically singular"));
    }
    Ok(chol)
}

fn check_pair(inputs: &Dataset, outputs: &Dataset) -> Result<()> {
    if inputs.n() != outputs.n() {
        return Err(dim_err!("{} input rows but {} output rows", inputs.n(), outputs.n()));
    }
    Ok(())
}

fn centered(data: &Dataset) -> (DMatrix<f64>, DVector<f64>) {
    let mean = data.mean();
    (crate::linalg::center_rows(data.matrix(), &mean), mean)
}

fn with_offset(weights: DMatrix<f64>, x_mean: &DVector<f64>, z_mean: &DVector<f64>) -> LinearMap {
    let offset = z_mean - &weights * x_mean;
    LinearMap { weights, offset }
}

/// `W = <z x'><x x'>^-1` on raw (uncentered) rows.
pub fn normal_equations(x: &DMatrix<f64>, z: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if x.nrows() != z.nrows() {
        return Err(dim_err!("{} input rows but {} output rows", x.nrows(), z.nrows()));
    }
    let n = x.nrows() as f64;
    let gram = x.tr_mul(x) / n;
    let cross = z.tr_mul(x) / n;
    let chol = strict_cholesky(&gram, "input Gram matrix <xx'> (use ridge_fit to regularize)")?;
    Ok(chol.solve(&cross.transpose()).transpose())
}

/// Ordinary least squares on centered data.
pub fn ols_fit(inputs: &Dataset, outputs: &Dataset) -> Result<LinearMap> {
    check_pair(inputs, outputs)?;
    let (x, xm) = centered(inputs);
    let (z, zm) = centered(outputs);
    Ok(with_offset(normal_equations(&x, &z)?, &xm, &zm))
}

#[derive(Debug, Clone, PartialEq)]
pub enum Regularizer {
    /// `lambda I`.
    Scalar(f64),
    /// Symmetric positive-definite `D x D`.
    Matrix(DMatrix<f64>),
}

/// `W = <z x'>(<x x'> + Sigma)^-1` on centered data.
pub fn ridge_fit(inputs: &Dataset, outputs: &Dataset, reg: &Regularizer) -> Result<LinearMap> {
    check_pair(inputs, outputs)?;
    let d = inputs.dim();
    let sigma = match reg {
        Regularizer::Scalar(l) if *l >= 0.0 && l.is_finite() => DMatrix::identity(d, d) * *l,
        Regularizer::Scalar(l) => return Err(Error::Precondition(alloc::format!("ridge strength {l} must be >= 0"))),
        Regularizer::Matrix(m) if m.nrows() == d && m.ncols() == d => {
            strict_cholesky(m, "ridge regularizer")?;
            m.clone()
        }
        Regularizer::Matrix(m) => return Err(dim_err!("regularizer is {}x{}, inputs have {d}", m.nrows(), m.ncols())),
    };
    let (x, xm) = centered(inputs);
    let (z, zm) = centered(outputs);
    let n = x.nrows() as f64;
    let lhs = x.tr_mul(&x) / n + sigma;
    let cross = z.tr_mul(&x) / n;
    let chol = strict_cholesky(&lhs, "regularized Gram matrix")?;
    Ok(with_offset(chol.solve(&cross.transpose()).transpose(), &xm, &zm))
}

/// Weighted least squares `W = Z U^-1 X'(X U^-1 X')^-1`, with `X`, `Z` the
/// centered data matrices holding samples in columns and `U` the `N x N`
/// noise covariance.
pub fn wls_fit(inputs: &Dataset, outputs: &Dataset, weight_matrix: &DMatrix<f64>) -> Result<LinearMap> {
    check_pair(inputs, outputs)?;
    let n = inputs.n();
    if weight_matrix.nrows() != n || weight_matrix.ncols() != n {
        return Err(dim_err!(
            "weight matrix is {}x{}, expected {n}x{n}",
            weight_matrix.nrows(),
            weight_matrix.ncols()
        ));
    }
    let (x, xm) = centered(inputs);
    let (z, zm) = centered(outputs);
    let u = strict_cholesky(weight_matrix, "weight matrix")?;
    let ux = u.solve(&x);
    let gram = x.tr_mul(&ux);
    let cross = z.tr_mul(&ux);
    let chol = strict_cholesky(&gram, "weighted Gram matrix")?;
    Ok(with_offset(chol.solve(&cross.transpose()).transpose(), &xm, &zm))
}

/// Exponential families for the response, each with natural parameter
/// `eta = g(w'x)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GlimFamily {
    /// Unit-variance Gaussian, identity link.
    Gaussian,
    /// Bernoulli, logit link.
    BernoulliLogit,
    /// Poisson, log link.
    PoissonLog,
    /// Gamma with known scale; the shape is `k = exp(w'x)`, the sufficient
    /// statistic is `log y` and the natural parameter `k - 1`.
    GammaShapeLog { scale: f64 },
}

impl GlimFamily {
    pub fn name(&self) -> &'static str {
        match self {
            GlimFamily::Gaussian => "gaussian",
            GlimFamily::BernoulliLogit => "bernoulli-logit",
            GlimFamily::PoissonLog => "poisson-log",
            GlimFamily::GammaShapeLog { .. } => "gamma-shape-log",
        }
    }

    /// Natural parameter and its derivative at the linear predictor `s`.
    pub fn link(&self, s: f64) -> (f64, f64) {
        match self {
            GlimFamily::GammaShapeLog { .. } => {
                let k = s.exp();
                (k - 1.0, k)
            }
            _ => (s, 1.0),
        }
    }

    /// Log-partition function `A(eta)`.
    pub fn log_partition(&self, eta: f64) -> f64 {
        match self {
            GlimFamily::Gaussian => 0.5 * eta * eta,
            GlimFamily::BernoulliLogit => softplus(eta),
            GlimFamily::PoissonLog => eta.exp(),
            GlimFamily::GammaShapeLog { scale } => ln_gamma(eta + 1.0) + (eta + 1.0) * scale.ln(),
        }
    }

    /// `A'(eta)`, the mean of the sufficient statistic.
    pub fn mean_fn(&self, eta: f64) -> f64 {
        match self {
            GlimFamily::Gaussian => eta,
            GlimFamily::BernoulliLogit => sigmoid(eta),
            GlimFamily::PoissonLog => eta.exp(),
            GlimFamily::GammaShapeLog { scale } => digamma(eta + 1.0) + scale.ln(),
        }
    }

    /// `A''(eta)`, the variance of the sufficient statistic.
    pub fn variance_fn(&self, eta: f64) -> f64 {
        match self {
            GlimFamily::Gaussian => 1.0,
            GlimFamily::BernoulliLogit => {
                let p = sigmoid(eta);
                p * (1.0 - p)
            }
            GlimFamily::PoissonLog => eta.exp(),
            GlimFamily::GammaShapeLog { .. } => trigamma(eta + 1.0),
        }
    }

    pub fn sufficient_stat(&self, y: f64) -> f64 {
        match self {
            GlimFamily::GammaShapeLog { .. } => y.ln(),
            _ => y,
        }
    }

    /// `log h(y)`, the base measure.
    pub fn log_base(&self, y: f64) -> f64 {
        match self {
            GlimFamily::Gaussian => -0.5 * y * y - 0.5 * crate::linalg::LN_2PI,
            GlimFamily::BernoulliLogit => 0.0,
            GlimFamily::PoissonLog => -ln_gamma(y + 1.0),
            GlimFamily::GammaShapeLog { scale } => -y / scale,
        }
    }

    pub fn in_support(&self, y: f64) -> bool {
        match self {
            GlimFamily::Gaussian => y.is_finite(),
            GlimFamily::BernoulliLogit => y == 0.0 || y == 1.0,
            GlimFamily::PoissonLog => y >= 0.0 && y.fract() == 0.0 && y.is_finite(),
            GlimFamily::GammaShapeLog { .. } => y > 0.0 && y.is_finite(),
        }
    }

    /// `log p(y | s)` with `s` the linear predictor.
    pub fn log_likelihood(&self, y: f64, s: f64) -> f64 {
        let (eta, _) = self.link(s);
        self.sufficient_stat(y) * eta - self.log_partition(eta) + self.log_base(y)
    }

    fn validate(&self) -> Result<()> {
        match self {
            GlimFamily::GammaShapeLog { scale } if !(*scale > 0.0 && scale.is_finite()) => Err(
                Error::InvalidDistribution(alloc::format!("gamma scale {scale} must be positive")),
            ),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IrlsConfig {
    pub max_iter: usize,
    /// Stop once the gradient of the mean log-likelihood has smaller norm.
    pub tol: f64,
}

impl Default for IrlsConfig {
    fn default() -> Self {
        Self {
            max_iter: 100,
            tol: 1e-10,
        }
    }
}

/// Per-output record of one IRLS run.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct IrlsTrace {
    /// Cross entropy `-<log p(y | x)>` before the first step and after each accepted step.
    pub objective: Vec<f64>,
    /// Gradient norm at the same points.
    pub grad_norm: Vec<f64>,
    /// Halvings applied in each accepted step.
    pub halvings: Vec<usize>,
    /// Newton steps taken.
    pub iterations: usize,
    pub converged: bool,
}

/// Cross entropy `-<log p(y | x)>` of one output column under weights `w`.
pub fn glim_cross_entropy(family: &GlimFamily, x: &DMatrix<f64>, y: &DVector<f64>, w: &DVector<f64>) -> f64 {
    let s = x * w;
    -s.iter()
        .zip(y.iter())
        .map(|(s, y)| family.log_likelihood(*y, *s))
        .sum::<f64>()
        / x.nrows() as f64
}

/// Gradient of the mean log-likelihood and the expected (Fisher) Hessian
/// magnitude `<var(eta) g'(s)^2 x x'>`.
fn score_and_fisher(
    family: &GlimFamily,
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    w: &DVector<f64>,
) -> (DVector<f64>, DMatrix<f64>) {
    let n = x.nrows() as f64;
    let s = x * w;
    let mut resid = DVector::zeros(x.nrows());
    let mut scaled = x.clone();
    for i in 0..x.nrows() {
        let (eta, d) = family.link(s[i]);
        resid[i] = (family.sufficient_stat(y[i]) - family.mean_fn(eta)) * d;
        let wt = (family.variance_fn(eta) * d * d).sqrt();
        scaled.row_mut(i).scale_mut(wt);
    }
    (x.tr_mul(&resid) / n, scaled.tr_mul(&scaled) / n)
}

fn irls_column(
    family: &GlimFamily,
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    config: &IrlsConfig,
) -> Result<(DVector<f64>, IrlsTrace)> {
    let mut w = DVector::zeros(x.ncols());
    let mut trace = IrlsTrace::default();
    let mut obj = glim_cross_entropy(family, x, y, &w);
    for iteration in 0..=config.max_iter {
        let (grad, fisher) = score_and_fisher(family, x, y, &w);
        let gnorm = grad.norm();
        trace.objective.push(obj);
        trace.grad_norm.push(gnorm);
        if gnorm < config.tol {
            trace.converged = true;
            break;
        }
        if iteration == config.max_iter {
            break;
        }
        let chol = match strict_cholesky(&fisher, "working Hessian") {
            Ok(c) => c,
            Err(_) => {
                separation_check(family, x, y, &w)?;
                return Err(Error::Hessian { iteration });
            }
        };
        let step = chol.solve(&grad);
        let mut scale = 1.0;
        let mut halvings = 0;
        let (next, next_obj) = loop {
            let cand = &w + &step * scale;
            let cand_obj = glim_cross_entropy(family, x, y, &cand);
            if cand_obj <= obj + ROUNDING * obj.abs() || halvings == MAX_HALVINGS {
                break (cand, cand_obj);
            }
            scale *= 0.5;
            halvings += 1;
        };
        if next_obj > obj + ROUNDING * obj.abs() {
            log::warn!("IRLS step could not decrease the objective after {MAX_HALVINGS} halvings; stopping");
            break;
        }
        w = next;
        obj = next_obj;
        trace.halvings.push(halvings);
        trace.iterations += 1;
        let norm = w.norm();
        if norm > SEPARATION_NORM {
            return Err(Error::Separation { norm });
        }
    }
    separation_check(family, x, y, &w)?;
    Ok((w, trace))
}

/// On separable data the logistic optimum lies at infinity; Newton stalls
/// with every fitted probability numerically equal to its label.
fn separation_check(family: &GlimFamily, x: &DMatrix<f64>, y: &DVector<f64>, w: &DVector<f64>) -> Result<()> {
    if *family != GlimFamily::BernoulliLogit {
        return Ok(());
    }
    let s = x * w;
    let perfect = s.iter().zip(y.iter()).all(|(s, y)| (y - sigmoid(*s)).abs() < 1e-6);
    if perfect {
        return Err(Error::Separation { norm: w.norm() });
    }
    Ok(())
}

/// Newton-Raphson with the expected Hessian, one output column at a time,
/// halving steps that would raise the cross entropy. Returns `K x D` weights
/// and one trace per output.
pub fn irls_fit(
    inputs: &Dataset,
    outputs: &Dataset,
    family: &GlimFamily,
    config: &IrlsConfig,
) -> Result<(DMatrix<f64>, Vec<IrlsTrace>)> {
    check_pair(inputs, outputs)?;
    family.validate()?;
    if let Some(bad) = outputs.matrix().iter().find(|y| !family.in_support(**y)) {
        return Err(Error::Precondition(alloc::format!(
            "output {bad} is outside the {} support",
            family.name()
        )));
    }
    let x = inputs.matrix();
    let mut weights = DMatrix::zeros(outputs.dim(), inputs.dim());
    let mut traces = Vec::with_capacity(outputs.dim());
    for k in 0..outputs.dim() {
        let y = outputs.matrix().column(k).into_owned();
        let (w, t) = irls_column(family, x, &y, config)?;
        weights.row_mut(k).copy_from(&w.transpose());
        traces.push(t);
    }
    Ok((weights, traces))
}
