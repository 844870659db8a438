//! Factor analysis: `z ~ N(0, I)`, `x | z ~ N(C z + c, diag(d))`, plus the
//! zero-noise iterative PCA limit.

use crate::data::Dataset;
use crate::em::EmModel;
use crate::gaussian::GaussianBelief;
use crate::linalg::{self, LN_2PI};
use crate::prelude::*;
use rand::Rng;

/// Lower bound on every noise variance.
pub const NOISE_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct FaParams {
    pub loading: DMatrix<f64>,
    pub offset: DVector<f64>,
    pub diag_noise: DVector<f64>,
}

impl FaParams {
    /// Checks shapes; noise variances below [`NOISE_FLOOR`] are raised to it.
    pub fn new(loading: DMatrix<f64>, offset: DVector<f64>, diag_noise: DVector<f64>) -> Result<Self> {
        let d = loading.nrows();
        if offset.len() != d || diag_noise.len() != d {
            return Err(dim_err!(
                "loading has {d} rows, offset {}, noise {}",
                offset.len(),
                diag_noise.len()
            ));
        }
        if diag_noise.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Precondition("noise variances must be non-negative".into()));
        }
        if loading.ncols() > d {
            log::warn!(
                "factor analyzer has more factors ({}) than dimensions ({d})",
                loading.ncols()
            );
        }
        let diag_noise = diag_noise.map(|v| v.max(NOISE_FLOOR));
        Ok(Self {
            loading,
            offset,
            diag_noise,
        })
    }

    pub fn dim(&self) -> usize {
        self.loading.nrows()
    }

    pub fn factors(&self) -> usize {
        self.loading.ncols()
    }

    /// `C C' + diag(d)`.
    pub fn marginal_cov(&self) -> DMatrix<f64> {
        &self.loading * self.loading.transpose() + DMatrix::from_diagonal(&self.diag_noise)
    }

    /// The equivalent source/channel pair.
    pub fn channel(&self) -> Result<crate::gaussian::AffineGaussianChannel> {
        crate::gaussian::AffineGaussianChannel::new(
            self.loading.clone(),
            self.offset.clone(),
            DMatrix::from_diagonal(&self.diag_noise),
        )
    }

    /// `(C' D^-1 C + I)^-1`, shared by every sample.
    pub fn recognition_cov(&self) -> Result<DMatrix<f64>> {
        let k = self.factors();
        let dinv_c = self.noise_inv_loading();
        let precision = self.loading.transpose() * dinv_c + DMatrix::identity(k, k);
        linalg::spd_inverse(&precision, "factor recognition precision")
    }

    fn noise_inv_loading(&self) -> DMatrix<f64> {
        let mut m = self.loading.clone();
        for (mut row, d) in m.row_iter_mut().zip(self.diag_noise.iter()) {
            row /= *d;
        }
        m
    }

    /// Recognition gain `Sigma_rec C' D^-1`, mapping `x - c` to the posterior mean.
    fn recognition_gain(&self, rec_cov: &DMatrix<f64>) -> DMatrix<f64> {
        rec_cov * self.noise_inv_loading().transpose()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (DVector<f64>, DVector<f64>) {
        let z = crate::rng::standard_normal_vector(rng, self.factors());
        let e = crate::rng::standard_normal_vector(rng, self.dim()).component_mul(&self.diag_noise.map(f64::sqrt));
        let x = &self.loading * &z + &self.offset + e;
        (z, x)
    }
}

pub fn fa_recognize(params: &FaParams, x: &DVector<f64>) -> Result<GaussianBelief> {
    if x.len() != params.dim() {
        return Err(dim_err!("point has dimension {}, model has {}", x.len(), params.dim()));
    }
    let cov = params.recognition_cov()?;
    let mean = params.recognition_gain(&cov) * (x - &params.offset);
    Ok(GaussianBelief::from_parts(mean, cov))
}

pub fn fa_log_marginal(params: &FaParams, x: &DVector<f64>) -> Result<f64> {
    linalg::mvn_log_density(x, &params.offset, &params.marginal_cov())
}

/// Expected sufficient statistics of the offset-centred data.
#[derive(Debug, Clone, PartialEq)]
pub struct FaExpectedStats {
    /// `sum_n (x_n - c) E[z | x_n]'`.
    pub sum_x_z: DMatrix<f64>,
    /// `sum_n E[z z' | x_n]`.
    pub sum_zz: DMatrix<f64>,
    /// `sum_n (x_n - c)^2`, elementwise.
    pub sum_xx_diag: DVector<f64>,
    pub n: usize,
    /// The offset the data were centred by.
    pub offset: DVector<f64>,
    /// Recognition covariance (identical for every sample).
    pub rec_cov: DMatrix<f64>,
}

pub fn fa_e_step(params: &FaParams, data: &Dataset) -> Result<FaExpectedStats> {
    data.check_dim(params.dim())?;
    let rec_cov = params.recognition_cov()?;
    let gain = params.recognition_gain(&rec_cov);
    let centered = linalg::center_rows(data.matrix(), &params.offset);
    // row n of `means` is E[z | x_n]'
    let means = &centered * gain.transpose();
    let n = data.n();
    let sum_x_z = centered.transpose() * &means;
    let sum_zz = linalg::symmetrize(&(&rec_cov * n as f64 + means.transpose() * &means));
    let sum_xx_diag = DVector::from_iterator(params.dim(), centered.column_iter().map(|c| c.norm_squared()));
    Ok(FaExpectedStats {
        sum_x_z,
        sum_zz,
        sum_xx_diag,
        n,
        offset: params.offset.clone(),
        rec_cov,
    })
}

/// Linear regression of the data on the expected factors.
pub fn fa_m_step(stats: &FaExpectedStats) -> Result<FaParams> {
    let loading = linalg::spd_right_solve(&stats.sum_x_z, &stats.sum_zz, "expected factor second moment")?;
    let n = stats.n as f64;
    let explained = loading.component_mul(&stats.sum_x_z).column_sum();
    let noise = (&stats.sum_xx_diag - explained) / n;
    FaParams::new(loading, stats.offset.clone(), noise)
}

/// Iterative PCA: alternate `Z = (W'W)^-1 W' X` and `W = <x z'><z z'>^-1`
/// on centred data until the relative change of `W` drops below `1e-10`
/// or `iters` sweeps have run.
pub fn pca_iterate(w: &DMatrix<f64>, data: &Dataset, iters: usize) -> Result<DMatrix<f64>> {
    data.check_dim(w.nrows())?;
    let x = linalg::center_rows(data.matrix(), &data.mean()).transpose();
    let mut w = w.clone();
    for _ in 0..iters {
        let wtw = w.transpose() * &w;
        let chol = wtw
            .cholesky()
            .ok_or_else(|| Error::Rank("loading matrix is rank deficient".into()))?;
        let z = chol.solve(&(w.transpose() * &x));
        let zzt = &z * z.transpose();
        let zc = zzt
            .cholesky()
            .ok_or_else(|| Error::Rank("projected data are rank deficient".into()))?;
        let next = zc.solve(&(&z * x.transpose())).transpose();
        let change = (&next - &w).norm() / w.norm().max(f64::MIN_POSITIVE);
        w = next;
        if change < 1e-10 {
            break;
        }
    }
    Ok(w)
}

/// EM handle for a `k`-factor analyzer. The offset is fixed at the data mean.
#[derive(Debug, Clone)]
pub struct FaModel<'a> {
    data: &'a Dataset,
    k: usize,
    mean: DVector<f64>,
    cov_diag: DVector<f64>,
}

impl<'a> FaModel<'a> {
    pub fn new(data: &'a Dataset, k: usize) -> Result<Self> {
        let cov_diag = data.covariance().diagonal();
        Ok(Self {
            data,
            k,
            mean: data.mean(),
            cov_diag,
        })
    }
}

impl EmModel for FaModel<'_> {
    type Params = FaParams;
    type Posterior = FaExpectedStats;

    /// Random orthonormal loading columns scaled to the average data variance.
    fn init_params<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<FaParams> {
        let d = self.data.dim();
        let g = DMatrix::from_fn(d, self.k, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal));
        let q = if self.k == 0 {
            g
        } else {
            linalg::orthonormal_basis(&g).columns(0, self.k.min(d)).into_owned()
        };
        let q = if q.ncols() < self.k {
            let mut padded = DMatrix::zeros(d, self.k);
            padded.columns_mut(0, q.ncols()).copy_from(&q);
            padded
        } else {
            q
        };
        let scale = (self.cov_diag.mean() * 0.5).sqrt().max(1e-6);
        let noise = self.cov_diag.map(|v| (0.5 * v).max(NOISE_FLOOR));
        FaParams::new(q * scale, self.mean.clone(), noise)
    }

    fn e_step(&self, params: &FaParams) -> Result<FaExpectedStats> {
        fa_e_step(params, self.data)
    }

    fn m_step(&self, post: &FaExpectedStats, _prev: &FaParams) -> Result<FaParams> {
        fa_m_step(post)
    }

    fn free_energy(&self, params: &FaParams, post: &FaExpectedStats) -> Result<f64> {
        let n = post.n as f64;
        let c = &params.loading;
        let k = params.factors() as f64;
        // sum_n E|x_n - c - C z|^2 per coordinate
        let resid = &post.sum_xx_diag - c.component_mul(&post.sum_x_z).column_sum() * 2.0
            + (c * &post.sum_zz * c.transpose()).diagonal();
        let emission: f64 = (0..params.dim())
            .map(|d| 0.5 * (n * (LN_2PI + params.diag_noise[d].ln()) + resid[d] / params.diag_noise[d]))
            .sum();
        let source = 0.5 * (n * k * LN_2PI + post.sum_zz.trace());
        let entropy = if params.factors() == 0 {
            0.0
        } else {
            GaussianBelief::from_parts(DVector::zeros(params.factors()), post.rec_cov.clone()).entropy()?
        };
        Ok((emission + source) / n - entropy)
    }

    fn log_likelihood(&self, params: &FaParams) -> Result<f64> {
        let f = linalg::MvnFactor::new(&params.offset, &params.marginal_cov(), "factor marginal covariance")?;
        Ok(self.data.rows().map(|x| f.log_density(&x)).sum::<f64>() / self.data.n() as f64)
    }
}
