//! Cumulant algebra for a Gaussian source `z ~ N(mu, Sigma_z)` feeding an
//! affine Gaussian channel `x | z ~ N(W z + b, Sigma_e)`.

use crate::linalg::{self, symmetrize};
use crate::prelude::*;
use rand::Rng;

/// Eigenvalue tolerance for the PSD check on [`GaussianBelief::new`].
pub const PSD_TOL: f64 = 1e-10;

/// Mean and covariance of a multivariate normal.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianBelief {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
}

impl GaussianBelief {
    /// Symmetrizes `cov` and checks that it is positive semi-definite.
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        if cov.nrows() != mean.len() || cov.ncols() != mean.len() {
            return Err(dim_err!(
                "mean has length {}, covariance is {}x{}",
                mean.len(),
                cov.nrows(),
                cov.ncols()
            ));
        }
        let cov = symmetrize(&cov);
        if cov.iter().chain(mean.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Precondition("belief has non-finite entries".into()));
        }
        let min = linalg::min_eigenvalue(&cov);
        if min < -PSD_TOL {
            return Err(Error::Precondition(alloc::format!("covariance has eigenvalue {min:e}")));
        }
        Ok(Self { mean, cov })
    }

    /// Builds a belief from a covariance known to be PSD up to rounding.
    /// Only symmetrizes; used on the hot paths of the filters.
    pub(crate) fn from_parts(mean: DVector<f64>, cov: DMatrix<f64>) -> Self {
        debug_assert_eq!(mean.len(), cov.nrows());
        Self {
            mean,
            cov: symmetrize(&cov),
        }
    }

    pub fn standard(dim: usize) -> Self {
        Self {
            mean: DVector::zeros(dim),
            cov: DMatrix::identity(dim, dim),
        }
    }

    /// A point mass at `mean`.
    pub fn point(mean: DVector<f64>) -> Self {
        let n = mean.len();
        Self {
            mean,
            cov: DMatrix::zeros(n, n),
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn into_parts(self) -> (DVector<f64>, DMatrix<f64>) {
        (self.mean, self.cov)
    }

    /// Second moment `E[z z'] = Sigma + mu mu'`.
    pub fn second_moment(&self) -> DMatrix<f64> {
        &self.cov + &self.mean * self.mean.transpose()
    }

    /// Differential entropy in nats. Fails on a singular covariance.
    pub fn entropy(&self) -> Result<f64> {
        let chol = linalg::cholesky(&self.cov, "belief covariance")?;
        Ok(0.5 * (self.dim() as f64 * (1.0 + linalg::LN_2PI) + linalg::log_det(&chol)))
    }

    pub fn log_density(&self, x: &DVector<f64>) -> Result<f64> {
        linalg::mvn_log_density(x, &self.mean, &self.cov)
    }

    /// Draws a sample through a symmetric square root, so singular
    /// covariances are fine.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let root = psd_sqrt(&self.cov);
        &self.mean + root * crate::rng::standard_normal_vector(rng, self.dim())
    }
}

/// Symmetric square root of a PSD matrix; negative rounding modes are clipped.
pub fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    if m.nrows() == 0 {
        return m.clone();
    }
    if let Some(c) = symmetrize(m).cholesky() {
        return c.unpack();
    }
    let eig = symmetrize(m).symmetric_eigen();
    let s = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&s)
}

/// `x | z ~ N(W z + b, Sigma_e)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineGaussianChannel {
    weights: DMatrix<f64>,
    offset: DVector<f64>,
    noise_cov: DMatrix<f64>,
}

impl AffineGaussianChannel {
    /// Checks shapes and that the noise covariance is positive definite
    /// (after the jitter retry).
    pub fn new(weights: DMatrix<f64>, offset: DVector<f64>, noise_cov: DMatrix<f64>) -> Result<Self> {
        let m = weights.nrows();
        if offset.len() != m || noise_cov.nrows() != m || noise_cov.ncols() != m {
            return Err(dim_err!(
                "weights are {}x{}, offset has length {}, noise covariance is {}x{}",
                m,
                weights.ncols(),
                offset.len(),
                noise_cov.nrows(),
                noise_cov.ncols()
            ));
        }
        let noise_cov = symmetrize(&noise_cov);
        linalg::cholesky(&noise_cov, "channel noise covariance")?;
        Ok(Self {
            weights,
            offset,
            noise_cov,
        })
    }

    /// Same as [`new`](Self::new) but skips the positive-definiteness check,
    /// for channels whose noise is allowed to degenerate (e.g. a noiseless
    /// deterministic map used only through the Woodbury form).
    pub fn new_unchecked_noise(weights: DMatrix<f64>, offset: DVector<f64>, noise_cov: DMatrix<f64>) -> Result<Self> {
        let m = weights.nrows();
        if offset.len() != m || noise_cov.nrows() != m || noise_cov.ncols() != m {
            return Err(dim_err!("channel blocks do not conform"));
        }
        Ok(Self {
            weights,
            offset,
            noise_cov: symmetrize(&noise_cov),
        })
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            weights: DMatrix::identity(dim, dim),
            offset: DVector::zeros(dim),
            noise_cov: DMatrix::identity(dim, dim),
        }
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    pub fn offset(&self) -> &DVector<f64> {
        &self.offset
    }

    pub fn noise_cov(&self) -> &DMatrix<f64> {
        &self.noise_cov
    }

    pub fn input_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.nrows()
    }

    /// `W z + b`.
    pub fn mean(&self, z: &DVector<f64>) -> DVector<f64> {
        &self.weights * z + &self.offset
    }

    pub fn sample<R: Rng + ?Sized>(&self, z: &DVector<f64>, rng: &mut R) -> DVector<f64> {
        GaussianBelief::from_parts(self.mean(z), self.noise_cov.clone()).sample(rng)
    }

    fn check_source(&self, source: &GaussianBelief) -> Result<()> {
        if source.dim() != self.input_dim() {
            return Err(dim_err!(
                "source has dimension {}, channel expects {}",
                source.dim(),
                self.input_dim()
            ));
        }
        Ok(())
    }
}

/// `Sigma_z W' (W Sigma_z W' + Sigma_e)^-1`.
#[derive(Debug, Clone, PartialEq)]
pub struct GainMatrix {
    pub gain: DMatrix<f64>,
}

/// How [`bayes_invert`] computes the posterior.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InversionForm {
    /// Invert in source space: needs the source and noise covariances invertible.
    Direct,
    /// Invert in emission space: needs only the marginal covariance invertible.
    Woodbury,
    /// Woodbury when the emission is smaller than the source, direct otherwise.
    #[default]
    Auto,
}

/// Marginal of the emission: `N(W mu + b, W Sigma_z W' + Sigma_e)`.
pub fn marginal_cumulants(source: &GaussianBelief, channel: &AffineGaussianChannel) -> Result<GaussianBelief> {
    channel.check_source(source)?;
    let w = channel.weights();
    let cov = w * source.cov() * w.transpose() + channel.noise_cov();
    Ok(GaussianBelief::from_parts(channel.mean(source.mean()), cov))
}

/// `Cov[z, x] = Sigma_z W'`.
pub fn cross_covariance(source: &GaussianBelief, channel: &AffineGaussianChannel) -> Result<DMatrix<f64>> {
    channel.check_source(source)?;
    Ok(source.cov() * channel.weights().transpose())
}

/// The joint Gaussian over `[z; x]`.
pub fn joint(source: &GaussianBelief, channel: &AffineGaussianChannel) -> Result<GaussianBelief> {
    let marg = marginal_cumulants(source, channel)?;
    let cross = cross_covariance(source, channel)?;
    let (k, m) = (source.dim(), channel.output_dim());
    let mut mean = DVector::zeros(k + m);
    mean.rows_mut(0, k).copy_from(source.mean());
    mean.rows_mut(k, m).copy_from(marg.mean());
    let mut cov = DMatrix::zeros(k + m, k + m);
    cov.view_mut((0, 0), (k, k)).copy_from(source.cov());
    cov.view_mut((0, k), (k, m)).copy_from(&cross);
    cov.view_mut((k, 0), (m, k)).copy_from(&cross.transpose());
    cov.view_mut((k, k), (m, m)).copy_from(marg.cov());
    Ok(GaussianBelief::from_parts(mean, cov))
}

/// Kalman gain `Sigma_z W' (W Sigma_z W' + Sigma_e)^-1`.
pub fn gain(source: &GaussianBelief, channel: &AffineGaussianChannel) -> Result<GainMatrix> {
    let marg = marginal_cumulants(source, channel)?;
    let cross = source.cov() * channel.weights().transpose();
    let gain = linalg::spd_right_solve(&cross, marg.cov(), "marginal covariance")?;
    Ok(GainMatrix { gain })
}

/// The same gain written as `Sigma_rec W' Sigma_e^-1`, from a recognition covariance.
pub fn gain_from_recognition(recognition_cov: &DMatrix<f64>, channel: &AffineGaussianChannel) -> Result<GainMatrix> {
    if recognition_cov.nrows() != channel.input_dim() {
        return Err(dim_err!(
            "recognition covariance is {}x{}, channel input is {}",
            recognition_cov.nrows(),
            recognition_cov.ncols(),
            channel.input_dim()
        ));
    }
    let a = recognition_cov * channel.weights().transpose();
    let gain = linalg::spd_right_solve(&a, channel.noise_cov(), "channel noise covariance")?;
    Ok(GainMatrix { gain })
}

/// Posterior over the source given an emission `obs`.
pub fn bayes_invert(
    source: &GaussianBelief,
    channel: &AffineGaussianChannel,
    obs: &DVector<f64>,
    form: InversionForm,
) -> Result<GaussianBelief> {
    channel.check_source(source)?;
    if obs.len() != channel.output_dim() {
        return Err(dim_err!(
            "observation has length {}, channel emits {}",
            obs.len(),
            channel.output_dim()
        ));
    }
    let use_direct = match form {
        InversionForm::Direct => true,
        InversionForm::Woodbury => false,
        InversionForm::Auto => channel.output_dim() >= channel.input_dim(),
    };
    if use_direct {
        match invert_direct(source, channel, obs) {
            Ok(b) => return Ok(b),
            // a singular prior has no source-space precision; the emission-space
            // form only needs the marginal covariance
            Err(Error::Singularity(msg)) if msg.starts_with("source covariance") => {}
            Err(e) => return Err(e),
        }
    }
    invert_woodbury(source, channel, obs)
}

fn invert_direct(
    source: &GaussianBelief,
    channel: &AffineGaussianChannel,
    obs: &DVector<f64>,
) -> Result<GaussianBelief> {
    let w = channel.weights();
    let prior = strict_cholesky(source.cov(), "source covariance")?;
    let noise = linalg::cholesky(channel.noise_cov(), "channel noise covariance")?;
    let noise_inv_w = noise.solve(w);
    let precision = w.transpose() * &noise_inv_w + prior.inverse();
    let cov = linalg::spd_inverse(&precision, "recognition precision")?;
    let info = noise_inv_w.transpose() * (obs - channel.offset()) + prior.solve(source.mean());
    let mean = &cov * info;
    Ok(GaussianBelief::from_parts(mean, cov))
}

/// A Cholesky without the jitter rescue, so that a genuinely singular prior
/// is routed to the Woodbury form instead of being perturbed.
fn strict_cholesky(m: &DMatrix<f64>, what: &str) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    let c = symmetrize(m)
        .cholesky()
        .ok_or_else(|| singular!("{what} is not positive definite"))?;
    let d = c.l_dirty().diagonal();
    let (lo, hi) = d
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), v| (lo.min(*v), hi.max(*v)));
    if lo <= hi * 1e-7 {
        return Err(singular!("{what} is numerically singular"));
    }
    Ok(c)
}

fn invert_woodbury(
    source: &GaussianBelief,
    channel: &AffineGaussianChannel,
    obs: &DVector<f64>,
) -> Result<GaussianBelief> {
    let w = channel.weights();
    let k = gain(source, channel)?.gain;
    let innovation = obs - channel.mean(source.mean());
    let mean = source.mean() + &k * innovation;
    // Joseph form keeps the result PSD under rounding
    let i_kw = DMatrix::identity(source.dim(), source.dim()) - &k * w;
    let cov = &i_kw * source.cov() * i_kw.transpose() + &k * channel.noise_cov() * k.transpose();
    Ok(GaussianBelief::from_parts(mean, cov))
}

/// `(A + U C V)^-1 = A^-1 - A^-1 U (C^-1 + V A^-1 U)^-1 V A^-1`.
pub fn woodbury_inverse(
    a: &DMatrix<f64>,
    u: &DMatrix<f64>,
    c: &DMatrix<f64>,
    v: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    if a.ncols() != n || u.nrows() != n || c.nrows() != u.ncols() || c.ncols() != v.nrows() || v.ncols() != n {
        return Err(dim_err!(
            "woodbury blocks A {}x{}, U {}x{}, C {}x{}, V {}x{} do not conform",
            a.nrows(),
            a.ncols(),
            u.nrows(),
            u.ncols(),
            c.nrows(),
            c.ncols(),
            v.nrows(),
            v.ncols()
        ));
    }
    let a_inv = linalg::inverse(a, "A")?;
    let c_inv = linalg::inverse(c, "C")?;
    let a_inv_u = &a_inv * u;
    let inner = linalg::inverse(&(c_inv + v * &a_inv_u), "inner matrix C^-1 + V A^-1 U")?;
    Ok(&a_inv - a_inv_u * inner * (v * &a_inv))
}

/// Rank-one update `(A + u v')^-1` from `A^-1`.
pub fn sherman_morrison(a_inv: &DMatrix<f64>, u: &DVector<f64>, v: &DVector<f64>) -> Result<DMatrix<f64>> {
    let n = a_inv.nrows();
    if a_inv.ncols() != n || u.len() != n || v.len() != n {
        return Err(dim_err!("rank-one update vectors do not match a {n}x{n} inverse"));
    }
    let au = a_inv * u;
    let va = v.transpose() * a_inv;
    let denom = 1.0 + (v.transpose() * &au)[(0, 0)];
    if denom.abs() < f64::EPSILON {
        return Err(singular!("A + u v' is singular"));
    }
    Ok(a_inv - au * va / denom)
}

/// `E[(b - W z)' A (b - W z)]` for `z ~ belief`.
pub fn expected_quadratic(
    belief: &GaussianBelief,
    w: &DMatrix<f64>,
    a: &DMatrix<f64>,
    b: &DVector<f64>,
) -> Result<f64> {
    if w.ncols() != belief.dim() || w.nrows() != a.nrows() || a.ncols() != a.nrows() || b.len() != a.nrows() {
        return Err(dim_err!("quadratic form blocks do not conform"));
    }
    let r = b - w * belief.mean();
    let trace = (a * w * belief.cov() * w.transpose()).trace();
    Ok(trace + (r.transpose() * a * r)[(0, 0)])
}
