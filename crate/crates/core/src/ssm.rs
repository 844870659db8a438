//! Linear-Gaussian state-space models: Kalman filter, RTS smoother and EM.
//!
//! `z_1 ~ N(mu1, V1)`, `z_t = A z_{t-1} + B u_{t-1} + a + w_t` with
//! `w_t ~ N(0, Q)`, and `x_t = C z_t + c + v_t` with `v_t ~ N(0, R)`.
//! Controls are given as a `T x U` matrix whose row `t - 1` drives the
//! transition into step `t`; a missing control matrix means zero controls.

use crate::data::SequenceDataset;
use crate::em::EmModel;
use crate::gaussian::{psd_sqrt, AffineGaussianChannel, GaussianBelief};
use crate::gmm::covariance_floor;
use crate::linalg::{self, LN_2PI};
use crate::prelude::*;
use crate::recursion::{self, ForwardBackward, ForwardPass};
use crate::rng::standard_normal_vector;
use rand::Rng;

/// Relative eigenvalue floor for state covariances re-estimated by EM.
pub const STATE_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct SsmParams {
    /// Weights `A`, offset `a`, noise `Q`.
    pub trans: AffineGaussianChannel,
    /// `B`, `K x U`.
    pub control_gain: DMatrix<f64>,
    /// Weights `C`, offset `c`, noise `R`.
    pub emission: AffineGaussianChannel,
    /// `N(mu1, V1)`.
    pub init: GaussianBelief,
}

impl SsmParams {
    pub fn new(
        trans: AffineGaussianChannel,
        control_gain: DMatrix<f64>,
        emission: AffineGaussianChannel,
        init: GaussianBelief,
    ) -> Result<Self> {
        let k = init.dim();
        if trans.input_dim() != k || trans.output_dim() != k {
            return Err(dim_err!(
                "transition maps {} -> {}, state dimension is {k}",
                trans.input_dim(),
                trans.output_dim()
            ));
        }
        if emission.input_dim() != k {
            return Err(dim_err!(
                "emission reads {} states, state dimension is {k}",
                emission.input_dim()
            ));
        }
        if control_gain.nrows() != k {
            return Err(dim_err!(
                "control gain has {} rows, state dimension is {k}",
                control_gain.nrows()
            ));
        }
        Ok(Self {
            trans,
            control_gain,
            emission,
            init,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.init.dim()
    }

    pub fn obs_dim(&self) -> usize {
        self.emission.output_dim()
    }

    pub fn control_dim(&self) -> usize {
        self.control_gain.ncols()
    }

    /// Draws `T x K` states and `T x D` observations.
    pub fn sample<R: Rng + ?Sized>(
        &self,
        t_len: usize,
        controls: Option<&DMatrix<f64>>,
        rng: &mut R,
    ) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        check_controls(self, controls, t_len)?;
        let (k, d) = (self.state_dim(), self.obs_dim());
        let q_root = psd_sqrt(self.trans.noise_cov());
        let r_root = psd_sqrt(self.emission.noise_cov());
        let mut states = DMatrix::zeros(t_len, k);
        let mut obs = DMatrix::zeros(t_len, d);
        let mut z = self.init.sample(rng);
        for t in 0..t_len {
            if t > 0 {
                z = self.trans.mean(&z) + self.drive(controls, t - 1) + &q_root * standard_normal_vector(rng, k);
            }
            let x = self.emission.mean(&z) + &r_root * standard_normal_vector(rng, d);
            states.row_mut(t).copy_from(&z.transpose());
            obs.row_mut(t).copy_from(&x.transpose());
        }
        Ok((states, obs))
    }

    /// `B u_t`, zero without controls.
    fn drive(&self, controls: Option<&DMatrix<f64>>, t: usize) -> DVector<f64> {
        match controls {
            Some(u) if self.control_dim() > 0 => &self.control_gain * u.row(t).transpose(),
            _ => DVector::zeros(self.state_dim()),
        }
    }
}

fn check_controls(params: &SsmParams, controls: Option<&DMatrix<f64>>, t_len: usize) -> Result<()> {
    if let Some(u) = controls {
        if u.ncols() != params.control_dim() {
            return Err(dim_err!(
                "controls have {} columns, control gain has {}",
                u.ncols(),
                params.control_dim()
            ));
        }
        if u.nrows() + 1 < t_len {
            return Err(dim_err!("{} control rows for a sequence of length {t_len}", u.nrows()));
        }
    }
    Ok(())
}

fn plain_cholesky(m: &DMatrix<f64>, what: &str) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(singular!("{what} has non-finite entries"));
    }
    linalg::symmetrize(m)
        .cholesky()
        .ok_or_else(|| singular!("{what} is not positive definite"))
}

/// Predict: mean `A mu + B u + a`, covariance `A V A' + Q`.
pub fn kf_time_update(
    belief: &GaussianBelief,
    params: &SsmParams,
    control: Option<&DVector<f64>>,
) -> Result<GaussianBelief> {
    if belief.dim() != params.state_dim() {
        return Err(dim_err!(
            "belief has dimension {}, state dimension is {}",
            belief.dim(),
            params.state_dim()
        ));
    }
    let a = params.trans.weights();
    let mut mean = params.trans.mean(belief.mean());
    if let Some(u) = control {
        if u.len() != params.control_dim() {
            return Err(dim_err!(
                "control has length {}, control gain has {} columns",
                u.len(),
                params.control_dim()
            ));
        }
        mean += &params.control_gain * u;
    }
    let cov = linalg::symmetrize(&(a * belief.cov() * a.transpose() + params.trans.noise_cov()));
    Ok(GaussianBelief::from_parts(mean, cov))
}

/// Condition on `y`; also returns `log N(y; C mu + c, C V C' + R)`.
pub fn kf_measurement_update(
    belief: &GaussianBelief,
    params: &SsmParams,
    y: &DVector<f64>,
) -> Result<(GaussianBelief, f64)> {
    if belief.dim() != params.state_dim() || y.len() != params.obs_dim() {
        return Err(dim_err!("belief/observation dimensions do not match the model"));
    }
    let c = params.emission.weights();
    let v = belief.cov();
    let vct = v * c.transpose();
    let s = c * &vct + params.emission.noise_cov();
    let chol = plain_cholesky(&s, "innovation covariance")?;
    let innovation = y - params.emission.mean(belief.mean());
    let solved = chol.solve(&innovation);
    let d = y.len() as f64;
    let log_evidence = -0.5 * (d * LN_2PI + linalg::log_det(&chol) + innovation.dot(&solved));
    // K = V C' S^-1
    let gain = chol.solve(&vct.transpose()).transpose();
    let mean = belief.mean() + &vct * solved;
    let cov = linalg::symmetrize(&(v - &gain * vct.transpose()));
    Ok((GaussianBelief::from_parts(mean, cov), log_evidence))
}

struct LinearGaussianChain<'a> {
    params: &'a SsmParams,
    obs: &'a DMatrix<f64>,
    controls: Option<&'a DMatrix<f64>>,
}

impl ForwardBackward for LinearGaussianChain<'_> {
    type Belief = GaussianBelief;
    /// `Cov[z_{t+1}, z_t | x]`.
    type Pair = DMatrix<f64>;

    fn len(&self) -> usize {
        self.obs.nrows()
    }

    fn prior(&self) -> Result<GaussianBelief> {
        Ok(self.params.init.clone())
    }

    fn time_update(&self, filtered: &GaussianBelief, t: usize) -> Result<GaussianBelief> {
        let u = match self.controls {
            Some(u) if self.params.control_dim() > 0 => Some(u.row(t).transpose()),
            _ => None,
        };
        kf_time_update(filtered, self.params, u.as_ref())
    }

    fn measurement_update(&self, predicted: &GaussianBelief, t: usize) -> Result<(GaussianBelief, f64)> {
        kf_measurement_update(predicted, self.params, &self.obs.row(t).transpose())
    }

    fn backward_step(
        &self,
        filtered: &GaussianBelief,
        predicted_next: &GaussianBelief,
        smoothed_next: &GaussianBelief,
        _t: usize,
    ) -> Result<(GaussianBelief, DMatrix<f64>)> {
        // J = V_f A' V_p^-1
        let a = self.params.trans.weights();
        let chol = plain_cholesky(predicted_next.cov(), "predicted state covariance")?;
        let j = chol.solve(&(a * filtered.cov())).transpose();
        let mean = filtered.mean() + &j * (smoothed_next.mean() - predicted_next.mean());
        let cov =
            linalg::symmetrize(&(filtered.cov() + &j * (smoothed_next.cov() - predicted_next.cov()) * j.transpose()));
        let cross = smoothed_next.cov() * j.transpose();
        Ok((GaussianBelief::from_parts(mean, cov), cross))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SsmPosteriors {
    pub filtered: Vec<GaussianBelief>,
    pub predicted: Vec<GaussianBelief>,
    pub smoothed: Vec<GaussianBelief>,
    /// `cross_cov[t] = Cov[z_{t+1}, z_t | x_1..T]`.
    pub cross_cov: Vec<DMatrix<f64>>,
    pub loglik: f64,
}

/// Filtered and predicted beliefs for one `T x D` sequence, plus `log p(x)`.
pub fn kalman_filter(
    params: &SsmParams,
    obs: &DMatrix<f64>,
    controls: Option<&DMatrix<f64>>,
) -> Result<(Vec<GaussianBelief>, Vec<GaussianBelief>, f64)> {
    check_controls(params, controls, obs.nrows())?;
    let chain = LinearGaussianChain { params, obs, controls };
    let fwd = recursion::forward(&chain)?;
    let ll = fwd.log_likelihood();
    Ok((fwd.filtered, fwd.predicted, ll))
}

/// Backward pass from filter statistics alone.
pub fn rts_smoother(
    params: &SsmParams,
    filtered: &[GaussianBelief],
    predicted: &[GaussianBelief],
) -> Result<(Vec<GaussianBelief>, Vec<DMatrix<f64>>)> {
    if filtered.len() != predicted.len() {
        return Err(dim_err!(
            "{} filtered and {} predicted beliefs",
            filtered.len(),
            predicted.len()
        ));
    }
    let empty = DMatrix::zeros(0, params.obs_dim());
    let chain = LinearGaussianChain {
        params,
        obs: &empty,
        controls: None,
    };
    let fwd = ForwardPass {
        filtered: filtered.to_vec(),
        predicted: predicted.to_vec(),
        log_normalizers: Vec::new(),
    };
    let bwd = recursion::backward(&chain, &fwd)?;
    Ok((bwd.smoothed, bwd.pairs))
}

pub fn ssm_smoother(params: &SsmParams, obs: &DMatrix<f64>, controls: Option<&DMatrix<f64>>) -> Result<SsmPosteriors> {
    let (filtered, predicted, loglik) = kalman_filter(params, obs, controls)?;
    let (smoothed, cross_cov) = rts_smoother(params, &filtered, &predicted)?;
    Ok(SsmPosteriors {
        filtered,
        predicted,
        smoothed,
        cross_cov,
        loglik,
    })
}

/// Entropy of the smoothed chain posterior `q(z_1..T)`, which is Markov:
/// `sum_t H(z_t, z_{t+1}) - sum_{1<t<T} H(z_t)`.
pub fn posterior_entropy(post: &SsmPosteriors) -> Result<f64> {
    let s = &post.smoothed;
    let t_len = s.len();
    if t_len == 1 {
        return s[0].entropy();
    }
    let k = s[0].dim();
    let mut h = 0.0;
    for t in 0..t_len - 1 {
        let mut joint = DMatrix::zeros(2 * k, 2 * k);
        joint.view_mut((0, 0), (k, k)).copy_from(s[t].cov());
        joint.view_mut((k, k), (k, k)).copy_from(s[t + 1].cov());
        joint.view_mut((k, 0), (k, k)).copy_from(&post.cross_cov[t]);
        joint.view_mut((0, k), (k, k)).copy_from(&post.cross_cov[t].transpose());
        h += GaussianBelief::from_parts(DVector::zeros(2 * k), joint).entropy()?;
        if t > 0 {
            h -= s[t].entropy()?;
        }
    }
    Ok(h)
}

/// Expected sufficient statistics, summed over sequences and steps.
///
/// Transition regressors are `r = [z_{t-1}; u_{t-1}; 1]` over `t = 2..T`;
/// emission regressors are `s = [z_t; 1]` over `t = 1..T`.
#[derive(Debug, Clone, PartialEq)]
pub struct LdsStats {
    pub sequences: usize,
    /// Number of emissions, `sum T`.
    pub steps: usize,
    /// Number of transitions, `sum (T - 1)`.
    pub transitions: usize,
    pub trans_rr: DMatrix<f64>,
    /// `sum E[z_t r_{t-1}']`.
    pub trans_zr: DMatrix<f64>,
    /// `sum_{t>=2} E[z_t z_t']`.
    pub trans_zz: DMatrix<f64>,
    pub emit_ss: DMatrix<f64>,
    /// `sum x_t E[s_t]'`.
    pub emit_xs: DMatrix<f64>,
    pub emit_xx: DMatrix<f64>,
    /// `sum E[z_1]`.
    pub init_z: DVector<f64>,
    /// `sum E[z_1 z_1']`.
    pub init_zz: DMatrix<f64>,
}

impl LdsStats {
    pub fn state_dim(&self) -> usize {
        self.init_z.len()
    }

    pub fn control_dim(&self) -> usize {
        self.trans_rr.nrows() - self.state_dim() - 1
    }

    pub fn obs_dim(&self) -> usize {
        self.emit_xx.nrows()
    }
}

/// Accumulates statistics from per-sequence posteriors.
pub fn lds_stats(
    data: &SequenceDataset,
    controls: Option<&[DMatrix<f64>]>,
    control_dim: usize,
    posts: &[SsmPosteriors],
) -> Result<LdsStats> {
    let seqs = data.sequences();
    if posts.len() != seqs.len() || controls.is_some_and(|c| c.len() != seqs.len()) {
        return Err(dim_err!("posteriors or controls do not match {} sequences", seqs.len()));
    }
    let k = posts.first().map_or(0, |p| p.smoothed[0].dim());
    let (d, u) = (data.dim(), control_dim);
    let nr = k + u + 1;
    let mut st = LdsStats {
        sequences: seqs.len(),
        steps: 0,
        transitions: 0,
        trans_rr: DMatrix::zeros(nr, nr),
        trans_zr: DMatrix::zeros(k, nr),
        trans_zz: DMatrix::zeros(k, k),
        emit_ss: DMatrix::zeros(k + 1, k + 1),
        emit_xs: DMatrix::zeros(d, k + 1),
        emit_xx: DMatrix::zeros(d, d),
        init_z: DVector::zeros(k),
        init_zz: DMatrix::zeros(k, k),
    };
    for (n, (seq, post)) in seqs.iter().zip(posts).enumerate() {
        let t_len = seq.nrows();
        if post.smoothed.len() != t_len || post.cross_cov.len() + 1 != t_len {
            return Err(dim_err!("posterior does not match a sequence of length {t_len}"));
        }
        let ctrl = controls.map(|c| &c[n]);
        if let Some(c) = ctrl {
            if c.ncols() != u || c.nrows() + 1 < t_len {
                return Err(dim_err!("controls for sequence {n} are {}x{}", c.nrows(), c.ncols()));
            }
        }
        st.steps += t_len;
        st.transitions += t_len - 1;
        let first = &post.smoothed[0];
        st.init_z += first.mean();
        st.init_zz += first.second_moment();
        for t in 0..t_len {
            let b = &post.smoothed[t];
            let x = seq.row(t).transpose();
            let mut s = DVector::zeros(k + 1);
            s.rows_mut(0, k).copy_from(b.mean());
            s[k] = 1.0;
            let mut ss = &s * s.transpose();
            {
                let mut v = ss.view_mut((0, 0), (k, k));
                v += b.cov();
            }
            st.emit_ss += ss;
            st.emit_xs += &x * s.transpose();
            st.emit_xx += &x * x.transpose();
            if t + 1 < t_len {
                let next = &post.smoothed[t + 1];
                let mut r = DVector::zeros(nr);
                r.rows_mut(0, k).copy_from(b.mean());
                if let Some(c) = ctrl {
                    r.rows_mut(k, u).copy_from(&c.row(t).transpose());
                }
                r[nr - 1] = 1.0;
                let mut rr = &r * r.transpose();
                {
                    let mut v = rr.view_mut((0, 0), (k, k));
                    v += b.cov();
                }
                st.trans_rr += rr;
                let mut zr = next.mean() * r.transpose();
                {
                    let mut v = zr.view_mut((0, 0), (k, k));
                    v += &post.cross_cov[t];
                }
                st.trans_zr += zr;
                st.trans_zz += next.second_moment();
            }
        }
    }
    Ok(st)
}

/// Statistics under the smoother of `params`.
pub fn lds_e_step(params: &SsmParams, data: &SequenceDataset, controls: Option<&[DMatrix<f64>]>) -> Result<LdsStats> {
    let posts = lds_posteriors(params, data, controls)?;
    lds_stats(data, controls, params.control_dim(), &posts)
}

pub fn lds_posteriors(
    params: &SsmParams,
    data: &SequenceDataset,
    controls: Option<&[DMatrix<f64>]>,
) -> Result<Vec<SsmPosteriors>> {
    if controls.is_some_and(|c| c.len() != data.sequences().len()) {
        return Err(dim_err!("controls do not match {} sequences", data.sequences().len()));
    }
    data.sequences()
        .iter()
        .enumerate()
        .map(|(n, s)| ssm_smoother(params, s, controls.map(|c| &c[n])))
        .collect()
}

fn strict_solve(gram: &DMatrix<f64>, rhs_t: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    // W = rhs gram^-1, computed as (gram^-1 rhs')'
    let chol = plain_cholesky(gram, what)?;
    Ok(chol.solve(&rhs_t.transpose()).transpose())
}

fn floored(m: &DMatrix<f64>, floor: f64) -> DMatrix<f64> {
    linalg::floor_eigenvalues(&linalg::symmetrize(m), floor)
}

/// Closed-form M-step. Noise covariances are symmetrized; `R` is floored at
/// eigenvalue `emission_floor`, `Q` and `V1` at [`STATE_FLOOR`] times their
/// mean diagonal.
pub fn lds_m_step(stats: &LdsStats, emission_floor: f64) -> Result<SsmParams> {
    let (k, u, d) = (stats.state_dim(), stats.control_dim(), stats.obs_dim());
    if stats.transitions == 0 {
        return Err(Error::Precondition(
            "transition statistics need a sequence of length two or more".into(),
        ));
    }
    let w = strict_solve(&stats.trans_rr, &stats.trans_zr, "transition second moment")?;
    let q = (&stats.trans_zz - &w * stats.trans_zr.transpose()) / stats.transitions as f64;
    let q_floor = STATE_FLOOR * (stats.trans_zz.trace() / (k.max(1) * stats.transitions) as f64).max(1e-300);
    let a = w.columns(0, k).into_owned();
    let b = w.columns(k, u).into_owned();
    let a_off = w.column(k + u).into_owned();

    let e = strict_solve(&stats.emit_ss, &stats.emit_xs, "emission second moment")?;
    let r = (&stats.emit_xx - &e * stats.emit_xs.transpose()) / stats.steps as f64;
    let c = e.columns(0, k).into_owned();
    let c_off = e.column(k).into_owned();

    let n = stats.sequences as f64;
    let mu1 = &stats.init_z / n;
    let v1 = &stats.init_zz / n - &mu1 * mu1.transpose();
    let v_floor = STATE_FLOOR * (stats.init_zz.trace() / (k.max(1) as f64 * n)).max(1e-300);

    let trans = AffineGaussianChannel::new_unchecked_noise(a, a_off, floored(&q, q_floor))?;
    let emission = AffineGaussianChannel::new_unchecked_noise(c, c_off, floored(&r, emission_floor.max(0.0)))?;
    let _ = d;
    SsmParams::new(
        trans,
        b,
        emission,
        GaussianBelief::from_parts(mu1, floored(&v1, v_floor)),
    )
}

/// `sum E[-log N(y; W r, S)]` from summed moments `yy`, `yr = sum y r'`, `rr`.
fn expected_gauss_energy(
    n: usize,
    yy: &DMatrix<f64>,
    yr: &DMatrix<f64>,
    rr: &DMatrix<f64>,
    w: &DMatrix<f64>,
    s: &DMatrix<f64>,
) -> Result<f64> {
    if n == 0 {
        return Ok(0.0);
    }
    let chol = linalg::cholesky(s, "noise covariance")?;
    let wyr = w * yr.transpose();
    let resid = yy - &wyr - wyr.transpose() + w * rr * w.transpose();
    let d = s.nrows() as f64;
    Ok(0.5 * (n as f64 * (d * LN_2PI + linalg::log_det(&chol)) + chol.solve(&resid).trace()))
}

/// Free energy per emission: `(E_q[-log p(x, z)] - H(q)) / sum T`.
pub fn lds_free_energy(params: &SsmParams, stats: &LdsStats, entropy: f64) -> Result<f64> {
    let (k, u) = (params.state_dim(), params.control_dim());
    if stats.state_dim() != k || stats.control_dim() != u || stats.obs_dim() != params.obs_dim() {
        return Err(dim_err!("statistics do not match the model shape"));
    }
    let mut wt = DMatrix::zeros(k, k + u + 1);
    wt.columns_mut(0, k).copy_from(params.trans.weights());
    wt.columns_mut(k, u).copy_from(&params.control_gain);
    wt.column_mut(k + u).copy_from(params.trans.offset());
    let mut we = DMatrix::zeros(params.obs_dim(), k + 1);
    we.columns_mut(0, k).copy_from(params.emission.weights());
    we.column_mut(k).copy_from(params.emission.offset());
    let trans = expected_gauss_energy(
        stats.transitions,
        &stats.trans_zz,
        &stats.trans_zr,
        &stats.trans_rr,
        &wt,
        params.trans.noise_cov(),
    )?;
    let emit = expected_gauss_energy(
        stats.steps,
        &stats.emit_xx,
        &stats.emit_xs,
        &stats.emit_ss,
        &we,
        params.emission.noise_cov(),
    )?;
    // initial state: regress z_1 on the constant 1
    let one = DMatrix::from_element(1, 1, stats.sequences as f64);
    let init = expected_gauss_energy(
        stats.sequences,
        &stats.init_zz,
        &DMatrix::from_column_slice(k, 1, stats.init_z.as_slice()),
        &one,
        &DMatrix::from_column_slice(k, 1, params.init.mean().as_slice()),
        params.init.cov(),
    )?;
    Ok((trans + emit + init - entropy) / stats.steps as f64)
}

/// Statistics plus posterior entropy: all the EM driver needs from an E-step.
#[derive(Debug, Clone, PartialEq)]
pub struct LdsPosterior {
    pub stats: LdsStats,
    pub entropy: f64,
}

/// EM handle for a `k`-dimensional state-space model.
#[derive(Debug, Clone)]
pub struct SsmModel<'a> {
    data: &'a SequenceDataset,
    controls: Option<&'a [DMatrix<f64>]>,
    control_dim: usize,
    k: usize,
    floor: f64,
}

impl<'a> SsmModel<'a> {
    pub fn new(data: &'a SequenceDataset, controls: Option<&'a [DMatrix<f64>]>, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::Precondition("state dimension must be positive".into()));
        }
        if data.total_len() <= data.sequences().len() {
            return Err(Error::Precondition("no sequence has two or more steps".into()));
        }
        let control_dim = match controls {
            Some(c) => {
                if c.len() != data.sequences().len() {
                    return Err(dim_err!(
                        "{} control sequences for {} sequences",
                        c.len(),
                        data.sequences().len()
                    ));
                }
                c.first().map_or(0, |m| m.ncols())
            }
            None => 0,
        };
        Ok(Self {
            data,
            controls,
            control_dim,
            k,
            floor: covariance_floor(&data.pooled()),
        })
    }
}

impl EmModel for SsmModel<'_> {
    type Params = SsmParams;
    type Posterior = LdsPosterior;

    /// Emission weights from the leading principal directions of the pooled
    /// data (perturbed by `rng`), stable dynamics `A = 0.9 I` whose
    /// stationary state covariance is the identity, no control gain.
    fn init_params<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<SsmParams> {
        let pooled = self.data.pooled();
        let cov = pooled.covariance();
        let d = pooled.dim();
        let eig = cov.clone().symmetric_eigen();
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|a, b| eig.eigenvalues[*b].total_cmp(&eig.eigenvalues[*a]));
        let mut c = DMatrix::zeros(d, self.k);
        for j in 0..self.k {
            let (col, scale) = if j < d {
                let o = order[j];
                (
                    eig.eigenvectors.column(o).into_owned(),
                    (0.5 * eig.eigenvalues[o]).max(self.floor).sqrt(),
                )
            } else {
                (DVector::zeros(d), self.floor.sqrt())
            };
            let jitter = standard_normal_vector(rng, d) * (0.1 * scale);
            c.column_mut(j).copy_from(&(col * scale + jitter));
        }
        let r = DMatrix::from_diagonal(&cov.diagonal().map(|v| (0.5 * v).max(self.floor)));
        let k = self.k;
        let trans = AffineGaussianChannel::new(
            DMatrix::identity(k, k) * 0.9,
            DVector::zeros(k),
            DMatrix::identity(k, k) * (1.0 - 0.81),
        )?;
        let emission = AffineGaussianChannel::new(c, pooled.mean(), r)?;
        SsmParams::new(
            trans,
            DMatrix::zeros(k, self.control_dim),
            emission,
            GaussianBelief::standard(k),
        )
    }

    fn e_step(&self, params: &SsmParams) -> Result<LdsPosterior> {
        let posts = lds_posteriors(params, self.data, self.controls)?;
        let mut entropy = 0.0;
        for p in &posts {
            entropy += posterior_entropy(p)?;
        }
        Ok(LdsPosterior {
            stats: lds_stats(self.data, self.controls, self.control_dim, &posts)?,
            entropy,
        })
    }

    fn m_step(&self, post: &LdsPosterior, _prev: &SsmParams) -> Result<SsmParams> {
        lds_m_step(&post.stats, self.floor)
    }

    fn free_energy(&self, params: &SsmParams, post: &LdsPosterior) -> Result<f64> {
        lds_free_energy(params, &post.stats, post.entropy)
    }

    fn log_likelihood(&self, params: &SsmParams) -> Result<f64> {
        let mut total = 0.0;
        for (n, s) in self.data.sequences().iter().enumerate() {
            total += kalman_filter(params, s, self.controls.map(|c| &c[n]))?.2;
        }
        Ok(total / self.data.total_len() as f64)
    }
}
