//! Sparse coding: Laplace sources `p(z_k) = a_k/2 exp(-a_k |z_k|)` and
//! isotropic Gaussian emissions `x | z ~ N(C z, I / lambda)`, with
//! Laplace-method recognition and a Gaussian-proxy EM.
//!
//! The recognition mean is the basis-pursuit-denoising solution. The
//! precision uses the smooth stand-in `(a/b) log cosh(b z)` for the
//! absolute value, and only in the Hessian.

use crate::data::Dataset;
use crate::em::EmModel;
use crate::linalg::{self, LN_2PI};
use crate::prelude::*;
use nalgebra::SymmetricEigen;
use rand::Rng;

pub const DEFAULT_BETA: f64 = 100.0;

#[derive(Debug, Clone, PartialEq)]
pub struct SparseCodingParams {
    pub dict: DMatrix<f64>,
    /// Emission precision.
    pub lambda: f64,
    /// Laplace scales, one per source.
    pub alpha: DVector<f64>,
    /// Sharpness of the log-cosh surrogate used in the Hessian.
    pub beta: f64,
}

impl SparseCodingParams {
    pub fn new(dict: DMatrix<f64>, lambda: f64, alpha: DVector<f64>, beta: f64) -> Result<Self> {
        if alpha.len() != dict.ncols() {
            return Err(dim_err!(
                "dictionary has {} atoms, alpha has {}",
                dict.ncols(),
                alpha.len()
            ));
        }
        if !(lambda > 0.0) || !(beta > 0.0) || alpha.iter().any(|a| !(*a > 0.0)) {
            return Err(Error::Precondition("lambda, alpha and beta must be positive".into()));
        }
        linalg::check_finite(&dict, "dictionary")?;
        Ok(Self {
            dict,
            lambda,
            alpha,
            beta,
        })
    }

    pub fn dim(&self) -> usize {
        self.dict.nrows()
    }

    pub fn sources(&self) -> usize {
        self.dict.ncols()
    }

    /// Draws `(z, x)` from the generative model.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (DVector<f64>, DVector<f64>) {
        let z = DVector::from_fn(self.sources(), |k, _| {
            let e: f64 = rng.sample(rand_distr::Exp1);
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            sign * e / self.alpha[k]
        });
        let noise = crate::rng::standard_normal_vector(rng, self.dim()) / self.lambda.sqrt();
        let x = &self.dict * &z + noise;
        (z, x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BpdnConfig {
    pub max_iter: usize,
    /// Tolerance on the subgradient optimality residual.
    pub gap_tol: f64,
}

impl Default for BpdnConfig {
    fn default() -> Self {
        Self {
            max_iter: 10_000,
            gap_tol: 1e-8,
        }
    }
}

/// Largest violation of the optimality conditions of
/// `lambda/2 |x - C z|^2 + sum_k a_k |z_k|` at `z`.
pub fn subgradient_residual(
    dict: &DMatrix<f64>,
    x: &DVector<f64>,
    lambda: f64,
    alpha: &DVector<f64>,
    z: &DVector<f64>,
) -> f64 {
    let g = dict.transpose() * (x - dict * z) * lambda;
    g.iter()
        .zip(alpha.iter())
        .zip(z.iter())
        .map(|((g, a), z)| {
            if *z == 0.0 {
                (g.abs() - a).max(0.0)
            } else {
                (g - a * z.signum()).abs()
            }
        })
        .fold(0.0, f64::max)
}

fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

fn bpdn_objective(dict: &DMatrix<f64>, x: &DVector<f64>, lambda: f64, alpha: &DVector<f64>, z: &DVector<f64>) -> f64 {
    0.5 * lambda * (x - dict * z).norm_squared() + alpha.iter().zip(z.iter()).map(|(a, v)| a * v.abs()).sum::<f64>()
}

/// While the active columns are linearly dependent, slides `z` along a null
/// direction of them (the fit is unchanged and the penalty falls linearly)
/// until a coordinate reaches zero.
fn shed_dependent(dict: &DMatrix<f64>, alpha: &DVector<f64>, z: &DVector<f64>) -> DVector<f64> {
    let mut z = z.clone();
    loop {
        let active: Vec<usize> = (0..z.len()).filter(|k| z[*k] != 0.0).collect();
        if active.len() < 2 {
            return z;
        }
        let ca = dict.select_columns(active.iter());
        let eig = SymmetricEigen::new(ca.transpose() * &ca);
        let (low, _) = eig.eigenvalues.argmin();
        if eig.eigenvalues[low] > 1e-12 * eig.eigenvalues.amax().max(1.0) {
            return z;
        }
        let mut v = eig.eigenvectors.column(low).into_owned();
        let slope: f64 = active
            .iter()
            .enumerate()
            .map(|(j, k)| alpha[*k] * z[*k].signum() * v[j])
            .sum();
        if slope > 0.0 {
            v = -v;
        }
        let hit = active
            .iter()
            .enumerate()
            .filter(|(j, k)| z[**k] * v[*j] < 0.0)
            .map(|(j, k)| (-z[*k] / v[j], j))
            .min_by(|a, b| a.0.total_cmp(&b.0));
        let Some((t, stop)) = hit else {
            return z;
        };
        for (j, k) in active.iter().enumerate() {
            z[*k] += t * v[j];
        }
        z[active[stop]] = 0.0;
    }
}

/// Solves the stationarity system on the current support with the current
/// signs. Coordinates whose solution flips sign are dropped and the system
/// re-solved; a singular system sheds its smallest coordinate.
fn polish(dict: &DMatrix<f64>, x: &DVector<f64>, lambda: f64, alpha: &DVector<f64>, z: &DVector<f64>) -> DVector<f64> {
    let mut active: Vec<usize> = (0..z.len()).filter(|k| z[*k] != 0.0).collect();
    while !active.is_empty() {
        let ca = dict.select_columns(active.iter());
        let gram = ca.transpose() * &ca * lambda;
        let Some(chol) = gram.cholesky() else {
            let smallest = (0..active.len()).min_by(|a, b| z[active[*a]].abs().total_cmp(&z[active[*b]].abs()));
            active.remove(smallest.unwrap_or(0));
            continue;
        };
        let rhs = ca.transpose() * x * lambda
            - DVector::from_iterator(active.len(), active.iter().map(|k| alpha[*k] * z[*k].signum()));
        let za = chol.solve(&rhs);
        let keep: Vec<usize> = active
            .iter()
            .enumerate()
            .filter(|(j, k)| za[*j] != 0.0 && za[*j].signum() == z[**k].signum())
            .map(|(_, k)| *k)
            .collect();
        if keep.len() == active.len() {
            let mut out = DVector::zeros(z.len());
            for (j, k) in active.iter().enumerate() {
                out[*k] = za[j];
            }
            return out;
        }
        active = keep;
    }
    DVector::zeros(z.len())
}

/// Basis-pursuit denoising by cyclic coordinate descent from zero, with the
/// support-restricted stationarity system solved exactly once the support
/// settles.
pub fn bpdn_solve(
    dict: &DMatrix<f64>,
    x: &DVector<f64>,
    lambda: f64,
    alpha: &DVector<f64>,
    config: &BpdnConfig,
) -> Result<DVector<f64>> {
    let k = dict.ncols();
    if x.len() != dict.nrows() || alpha.len() != k {
        return Err(dim_err!(
            "dictionary {}x{}, signal {}, alpha {}",
            dict.nrows(),
            k,
            x.len(),
            alpha.len()
        ));
    }
    let norms: Vec<f64> = dict.column_iter().map(|c| c.norm_squared()).collect();
    let mut z = DVector::zeros(k);
    let mut r = x.clone();
    let mut residual = subgradient_residual(dict, x, lambda, alpha, &z);
    for _ in 0..config.max_iter {
        if residual <= config.gap_tol {
            return Ok(z);
        }
        for j in 0..k {
            if norms[j] == 0.0 {
                continue;
            }
            let c = dict.column(j);
            let rho = c.dot(&r) + norms[j] * z[j];
            let next = soft_threshold(rho, alpha[j] / lambda) / norms[j];
            if next != z[j] {
                r.axpy(z[j] - next, &c, 1.0);
                z[j] = next;
            }
        }
        let reduced = shed_dependent(dict, alpha, &z);
        if reduced != z
            && bpdn_objective(dict, x, lambda, alpha, &reduced) <= bpdn_objective(dict, x, lambda, alpha, &z)
        {
            z = reduced;
        }
        r = x - dict * &z;
        residual = subgradient_residual(dict, x, lambda, alpha, &z);
        if residual > config.gap_tol {
            let p = polish(dict, x, lambda, alpha, &z);
            let pr = subgradient_residual(dict, x, lambda, alpha, &p);
            if pr <= config.gap_tol {
                return Ok(p);
            }
        }
    }
    if residual <= config.gap_tol {
        return Ok(z);
    }
    Err(Error::Convergence {
        iterations: config.max_iter,
        residual,
    })
}

/// `sech^2(y)` without overflow.
fn sech2(y: f64) -> f64 {
    let e = (-2.0 * y.abs()).exp();
    4.0 * e / ((1.0 + e) * (1.0 + e))
}

/// Energy of the sources. `Quadratic` (`z'z / 2`, a standard normal prior)
/// is a control under which the Laplace method is exact.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SourceEnergy {
    #[default]
    Laplace,
    Quadratic,
}

/// Gaussian approximation `N(mode, precision^-1)` to the recognition distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct LaplaceRecognition {
    pub mode: DVector<f64>,
    pub precision: DMatrix<f64>,
}

impl LaplaceRecognition {
    pub fn cov(&self) -> Result<DMatrix<f64>> {
        linalg::spd_inverse(&self.precision, "recognition precision")
    }
}

fn source_hessian_diag(params: &SparseCodingParams, energy: SourceEnergy, z: &DVector<f64>) -> DVector<f64> {
    match energy {
        SourceEnergy::Laplace => DVector::from_fn(z.len(), |k, _| {
            params.alpha[k] * params.beta * sech2(params.beta * z[k])
        }),
        SourceEnergy::Quadratic => DVector::from_element(z.len(), 1.0),
    }
}

fn precision_at(params: &SparseCodingParams, energy: SourceEnergy, z: &DVector<f64>) -> DMatrix<f64> {
    let c = &params.dict;
    let h = c.transpose() * c * params.lambda + DMatrix::from_diagonal(&source_hessian_diag(params, energy, z));
    linalg::symmetrize(&h)
}

pub fn sc_recognition_with(
    params: &SparseCodingParams,
    x: &DVector<f64>,
    energy: SourceEnergy,
    config: &BpdnConfig,
) -> Result<LaplaceRecognition> {
    if x.len() != params.dim() {
        return Err(dim_err!(
            "signal has length {}, dictionary has {} rows",
            x.len(),
            params.dim()
        ));
    }
    let mode = match energy {
        SourceEnergy::Laplace => bpdn_solve(&params.dict, x, params.lambda, &params.alpha, config)?,
        SourceEnergy::Quadratic => {
            let p = precision_at(params, energy, &DVector::zeros(params.sources()));
            let rhs = params.dict.transpose() * x * params.lambda;
            linalg::cholesky(&p, "recognition precision")?.solve(&rhs)
        }
    };
    let precision = precision_at(params, energy, &mode);
    Ok(LaplaceRecognition { mode, precision })
}

pub fn sc_recognition(params: &SparseCodingParams, x: &DVector<f64>) -> Result<LaplaceRecognition> {
    sc_recognition_with(params, x, SourceEnergy::Laplace, &BpdnConfig::default())
}

fn log_prior(params: &SparseCodingParams, energy: SourceEnergy, z: &DVector<f64>) -> f64 {
    match energy {
        SourceEnergy::Laplace => params
            .alpha
            .iter()
            .zip(z.iter())
            .map(|(a, z)| (a / 2.0).ln() - a * z.abs())
            .sum(),
        SourceEnergy::Quadratic => -0.5 * (z.len() as f64 * LN_2PI + z.norm_squared()),
    }
}

fn log_emission(params: &SparseCodingParams, x: &DVector<f64>, z: &DVector<f64>) -> f64 {
    let d = x.len() as f64;
    0.5 * d * (params.lambda.ln() - LN_2PI) - 0.5 * params.lambda * (x - &params.dict * z).norm_squared()
}

/// Laplace-method log marginal: log joint at the mode plus
/// `K/2 log 2pi - 1/2 log |precision|`.
pub fn sc_log_marginal_with(
    params: &SparseCodingParams,
    x: &DVector<f64>,
    energy: SourceEnergy,
    config: &BpdnConfig,
) -> Result<f64> {
    let rec = sc_recognition_with(params, x, energy, config)?;
    let chol = linalg::cholesky(&rec.precision, "recognition precision")?;
    let k = params.sources() as f64;
    Ok(
        log_prior(params, energy, &rec.mode) + log_emission(params, x, &rec.mode) + 0.5 * k * LN_2PI
            - 0.5 * linalg::log_det(&chol),
    )
}

pub fn sc_log_marginal(params: &SparseCodingParams, x: &DVector<f64>) -> Result<f64> {
    sc_log_marginal_with(params, x, SourceEnergy::Laplace, &BpdnConfig::default())
}

pub fn sc_e_step(params: &SparseCodingParams, data: &Dataset) -> Result<Vec<LaplaceRecognition>> {
    data.check_dim(params.dim())?;
    data.rows().map(|x| sc_recognition(params, &x)).collect()
}

fn moment_sums(data: &Dataset, recs: &[LaplaceRecognition]) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    if recs.len() != data.n() {
        return Err(dim_err!("{} recognitions for {} samples", recs.len(), data.n()));
    }
    let k = recs.first().map_or(0, |r| r.mode.len());
    let mut xz = DMatrix::zeros(data.dim(), k);
    let mut zz = DMatrix::zeros(k, k);
    for (x, r) in data.rows().zip(recs) {
        xz += &x * r.mode.transpose();
        zz += r.cov()? + &r.mode * r.mode.transpose();
    }
    Ok((xz, zz))
}

/// `C = <x nu'> <P^-1 + nu nu'>^-1`.
pub fn sc_m_step(data: &Dataset, recs: &[LaplaceRecognition]) -> Result<DMatrix<f64>> {
    let (xz, zz) = moment_sums(data, recs)?;
    linalg::spd_right_solve(&xz, &zz, "expected source second moment")
}

/// The same update by `iters` fixed-size gradient steps on the free energy,
/// for when the second-moment matrix is ill-conditioned.
pub fn sc_m_step_gradient(
    data: &Dataset,
    recs: &[LaplaceRecognition],
    dict: &DMatrix<f64>,
    lambda: f64,
    step: f64,
    iters: usize,
) -> Result<DMatrix<f64>> {
    let (xz, zz) = moment_sums(data, recs)?;
    let n = data.n() as f64;
    let mut c = dict.clone();
    for _ in 0..iters {
        let grad = (&c * &zz - &xz) * (lambda / n);
        c -= grad * step;
    }
    Ok(c)
}

/// `E|z|` for `z ~ N(mean, var)`.
fn expected_abs(mean: f64, var: f64) -> f64 {
    if var <= 0.0 {
        return mean.abs();
    }
    let sd = var.sqrt();
    let t = mean / sd;
    sd * crate::special::normal_pdf(t) * 2.0 + mean * (1.0 - 2.0 * crate::special::normal_cdf(-t))
}

/// Per-sample free energy of the Gaussian proxy `N(nu, P^-1)`. The
/// expected source energy is exact under the proxy, so this is a true
/// upper bound on `-log p(x)`.
fn sample_free_energy(
    params: &SparseCodingParams,
    energy: SourceEnergy,
    x: &DVector<f64>,
    rec: &LaplaceRecognition,
) -> Result<f64> {
    let chol = linalg::cholesky(&rec.precision, "recognition precision")?;
    let s = chol.inverse();
    let c = &params.dict;
    let k = params.sources() as f64;
    let lam = params.lambda;
    let nu = &rec.mode;
    let emission = 0.5 * lam * ((x - c * nu).norm_squared() + (c * &s * c.transpose()).trace())
        - 0.5 * x.len() as f64 * (lam.ln() - LN_2PI);
    let source = match energy {
        SourceEnergy::Laplace => params
            .alpha
            .iter()
            .enumerate()
            .map(|(i, a)| a * expected_abs(nu[i], s[(i, i)]) - (a / 2.0).ln())
            .sum::<f64>(),
        SourceEnergy::Quadratic => 0.5 * (k * LN_2PI + nu.norm_squared() + s.trace()),
    };
    let neg_entropy = -0.5 * k * (1.0 + LN_2PI) + 0.5 * linalg::log_det(&chol);
    Ok(emission + source + neg_entropy)
}

/// Mean free energy of a batch of recognitions.
pub fn sc_free_energy(params: &SparseCodingParams, data: &Dataset, recs: &[LaplaceRecognition]) -> Result<f64> {
    sc_free_energy_with(params, SourceEnergy::Laplace, data, recs)
}

pub fn sc_free_energy_with(
    params: &SparseCodingParams,
    energy: SourceEnergy,
    data: &Dataset,
    recs: &[LaplaceRecognition],
) -> Result<f64> {
    if recs.len() != data.n() {
        return Err(dim_err!("{} recognitions for {} samples", recs.len(), data.n()));
    }
    let mut total = 0.0;
    for (x, r) in data.rows().zip(recs) {
        total += sample_free_energy(params, energy, &x, r)?;
    }
    Ok(total / data.n() as f64)
}

/// EM handle: learns the dictionary with `lambda`, `alpha`, `beta` fixed.
#[derive(Debug, Clone)]
pub struct SparseCodingModel<'a> {
    data: &'a Dataset,
    k: usize,
    lambda: f64,
    alpha: DVector<f64>,
    beta: f64,
    pub energy: SourceEnergy,
    pub bpdn: BpdnConfig,
}

impl<'a> SparseCodingModel<'a> {
    pub fn new(data: &'a Dataset, k: usize, lambda: f64, alpha: DVector<f64>, beta: f64) -> Result<Self> {
        SparseCodingParams::new(DMatrix::zeros(data.dim(), k), lambda, alpha.clone(), beta)?;
        Ok(Self {
            data,
            k,
            lambda,
            alpha,
            beta,
            energy: SourceEnergy::Laplace,
            bpdn: BpdnConfig::default(),
        })
    }

    pub fn params(&self, dict: DMatrix<f64>) -> Result<SparseCodingParams> {
        SparseCodingParams::new(dict, self.lambda, self.alpha.clone(), self.beta)
    }

    fn recognize(&self, params: &SparseCodingParams, x: &DVector<f64>) -> Result<LaplaceRecognition> {
        sc_recognition_with(params, x, self.energy, &self.bpdn)
    }
}

impl EmModel for SparseCodingModel<'_> {
    type Params = SparseCodingParams;
    type Posterior = Vec<LaplaceRecognition>;

    /// Gaussian atoms rescaled to the root-mean-square data norm.
    fn init_params<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<SparseCodingParams> {
        let rms = (self.data.matrix().norm_squared() / self.data.n() as f64)
            .sqrt()
            .max(1e-6);
        let mut dict = DMatrix::from_fn(self.data.dim(), self.k, |_, _| {
            rng.sample::<f64, _>(rand_distr::StandardNormal)
        });
        for mut col in dict.column_iter_mut() {
            let norm = col.norm().max(f64::MIN_POSITIVE);
            col *= rms / norm;
        }
        self.params(dict)
    }

    fn e_step(&self, params: &SparseCodingParams) -> Result<Self::Posterior> {
        self.data.rows().map(|x| self.recognize(params, &x)).collect()
    }

    /// Per sample, keeps whichever of the new Laplace recognition and the
    /// previous proxy has the lower free energy. The Laplace proxy only
    /// approximately minimizes the free energy, and on its own it can raise
    /// it when a source switches on or off.
    fn e_step_after(&self, params: &SparseCodingParams, prev: &Self::Posterior) -> Result<Self::Posterior> {
        let mut out = Vec::with_capacity(prev.len());
        let mut kept = 0;
        for (x, old) in self.data.rows().zip(prev) {
            let fresh = self.recognize(params, &x)?;
            if sample_free_energy(params, self.energy, &x, old)? < sample_free_energy(params, self.energy, &x, &fresh)?
            {
                kept += 1;
                out.push(old.clone());
            } else {
                out.push(fresh);
            }
        }
        if kept > 0 {
            log::debug!("sparse coding: kept the previous mode for {kept} samples");
        }
        Ok(out)
    }

    fn m_step(&self, post: &Self::Posterior, _prev: &SparseCodingParams) -> Result<SparseCodingParams> {
        self.params(sc_m_step(self.data, post)?)
    }

    fn free_energy(&self, params: &SparseCodingParams, post: &Self::Posterior) -> Result<f64> {
        sc_free_energy_with(params, self.energy, self.data, post)
    }

    /// Laplace-method approximation.
    fn log_likelihood(&self, params: &SparseCodingParams) -> Result<f64> {
        let mut total = 0.0;
        for x in self.data.rows() {
            total += sc_log_marginal_with(params, &x, self.energy, &self.bpdn)?;
        }
        Ok(total / self.data.n() as f64)
    }
}
