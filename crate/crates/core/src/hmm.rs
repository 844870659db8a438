//! Hidden Markov models with Gaussian emissions.
//!
//! Transition matrices are column-stochastic: `trans[(i, j)] = P(next = i | prev = j)`.
//! Inference runs the scaled filter and smoother through
//! [`recursion`](crate::recursion); the likelihood table is an input, so any
//! emission family can be plugged in through [`filter_log_lik`] and
//! [`smooth_log_lik`].

use crate::data::SequenceDataset;
use crate::dist::DiscreteDistribution;
use crate::em::EmModel;
use crate::gaussian::psd_sqrt;
use crate::gmm::{covariance_floor, EMPTY_MASS};
use crate::info::sample_index;
use crate::linalg::{self, MvnFactor};
use crate::prelude::*;
use crate::recursion::{self, ForwardBackward};
use crate::rng::standard_normal_vector;
use rand::Rng;

/// Tolerance on column sums of a transition matrix.
pub const STOCHASTIC_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct HmmParams {
    pub init: DiscreteDistribution,
    pub trans: DMatrix<f64>,
    pub means: Vec<DVector<f64>>,
    pub covs: Vec<DMatrix<f64>>,
}

/// Checks that `trans` is square, non-negative and has columns summing to one.
pub fn check_column_stochastic(trans: &DMatrix<f64>) -> Result<()> {
    if trans.nrows() != trans.ncols() {
        return Err(dim_err!("transition matrix is {}x{}", trans.nrows(), trans.ncols()));
    }
    for (j, col) in trans.column_iter().enumerate() {
        if col.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::InvalidDistribution(alloc::format!(
                "transition column {j} has a negative or non-finite entry"
            )));
        }
        let s = col.sum();
        if (s - 1.0).abs() > STOCHASTIC_TOL {
            return Err(Error::InvalidDistribution(alloc::format!(
                "transition column {j} sums to {s}"
            )));
        }
    }
    Ok(())
}

impl HmmParams {
    pub fn new(
        init: DiscreteDistribution,
        trans: DMatrix<f64>,
        means: Vec<DVector<f64>>,
        covs: Vec<DMatrix<f64>>,
    ) -> Result<Self> {
        let k = init.len();
        check_column_stochastic(&trans)?;
        if trans.nrows() != k || means.len() != k || covs.len() != k {
            return Err(dim_err!(
                "{k} initial states, {}x{} transitions, {} means, {} covariances",
                trans.nrows(),
                trans.ncols(),
                means.len(),
                covs.len()
            ));
        }
        let d = means.first().map_or(0, |m| m.len());
        let mut sym = Vec::with_capacity(k);
        for (m, c) in means.iter().zip(&covs) {
            if m.len() != d || c.nrows() != d || c.ncols() != d {
                return Err(dim_err!("emission blocks do not share dimension {d}"));
            }
            let c = linalg::symmetrize(c);
            linalg::cholesky(&c, "emission covariance")?;
            sym.push(c);
        }
        Ok(Self {
            init,
            trans,
            means,
            covs: sym,
        })
    }

    pub fn states(&self) -> usize {
        self.init.len()
    }

    pub fn dim(&self) -> usize {
        self.means.first().map_or(0, |m| m.len())
    }

    /// `table[(t, k)] = log N(x_t; mean_k, cov_k)` for a `T x D` sequence.
    pub fn emission_log_likelihoods(&self, seq: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if seq.ncols() != self.dim() {
            return Err(dim_err!(
                "sequence has {} columns, model dimension is {}",
                seq.ncols(),
                self.dim()
            ));
        }
        let factors = self
            .means
            .iter()
            .zip(&self.covs)
            .map(|(m, c)| MvnFactor::new(m, c, "emission covariance"))
            .collect::<Result<Vec<_>>>()?;
        let mut table = DMatrix::zeros(seq.nrows(), self.states());
        for t in 0..seq.nrows() {
            let x = seq.row(t).transpose();
            for (k, f) in factors.iter().enumerate() {
                table[(t, k)] = f.log_density(&x);
            }
        }
        Ok(table)
    }

    /// Draws a state path and a `T x D` observation sequence.
    pub fn sample<R: Rng + ?Sized>(&self, t_len: usize, rng: &mut R) -> (Vec<usize>, DMatrix<f64>) {
        let roots: Vec<_> = self.covs.iter().map(psd_sqrt).collect();
        let d = self.dim();
        let mut states = Vec::with_capacity(t_len);
        let mut obs = DMatrix::zeros(t_len, d);
        for t in 0..t_len {
            let z = match states.last() {
                None => sample_index(self.init.probs(), rng),
                Some(&prev) => sample_index(self.trans.column(prev).as_slice(), rng),
            };
            let x = &self.means[z] + &roots[z] * standard_normal_vector(rng, d);
            obs.row_mut(t).copy_from(&x.transpose());
            states.push(z);
        }
        (states, obs)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HmmPosteriors {
    /// `T x K`, row `t` is `p(z_t | x_<=t)`.
    pub filter: DMatrix<f64>,
    /// `T x K`, row `t` is `p(z_t | x_1..T)`.
    pub smoother: DMatrix<f64>,
    /// `pairwise[t][(i, j)] = p(z_{t+1} = i, z_t = j | x_1..T)`.
    pub pairwise: Vec<DMatrix<f64>>,
    pub loglik: f64,
}

struct DiscreteChain<'a> {
    init: &'a [f64],
    trans: &'a DMatrix<f64>,
    log_lik: &'a DMatrix<f64>,
}

impl ForwardBackward for DiscreteChain<'_> {
    type Belief = DVector<f64>;
    type Pair = DMatrix<f64>;

    fn len(&self) -> usize {
        self.log_lik.nrows()
    }

    fn prior(&self) -> Result<DVector<f64>> {
        Ok(DVector::from_row_slice(self.init))
    }

    fn time_update(&self, filtered: &DVector<f64>, _t: usize) -> Result<DVector<f64>> {
        Ok(self.trans * filtered)
    }

    fn measurement_update(&self, predicted: &DVector<f64>, t: usize) -> Result<(DVector<f64>, f64)> {
        let row = self.log_lik.row(t);
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if m.is_nan() || m == f64::INFINITY {
            return Err(Error::Precondition(alloc::format!(
                "non-finite emission log-likelihood at step {t}"
            )));
        }
        let w = DVector::from_iterator(
            predicted.len(),
            predicted
                .iter()
                .zip(row.iter())
                .map(|(p, l)| if *p > 0.0 { p * (l - m).exp() } else { 0.0 }),
        );
        let s = w.sum();
        if !(s > 0.0) || !m.is_finite() {
            return Err(Error::Underflow {
                step: t,
                detail: "no state can explain the observation".into(),
            });
        }
        Ok((w / s, s.ln() + m))
    }

    fn backward_step(
        &self,
        filtered: &DVector<f64>,
        predicted_next: &DVector<f64>,
        smoothed_next: &DVector<f64>,
        t: usize,
    ) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let k = filtered.len();
        let mut pair = DMatrix::zeros(k, k);
        for i in 0..k {
            if smoothed_next[i] == 0.0 {
                continue;
            }
            if !(predicted_next[i] > 0.0) {
                return Err(Error::Underflow {
                    step: t + 1,
                    detail: alloc::format!("state {i} has smoother mass but zero predicted mass"),
                });
            }
            let ratio = smoothed_next[i] / predicted_next[i];
            for j in 0..k {
                pair[(i, j)] = ratio * self.trans[(i, j)] * filtered[j];
            }
        }
        let smoothed = pair.row_sum().transpose();
        Ok((smoothed, pair))
    }
}

fn check_chain(init: &DiscreteDistribution, trans: &DMatrix<f64>, log_lik: &DMatrix<f64>) -> Result<()> {
    check_column_stochastic(trans)?;
    if trans.nrows() != init.len() || log_lik.ncols() != init.len() {
        return Err(dim_err!(
            "{} initial states, {}x{} transitions, {} likelihood columns",
            init.len(),
            trans.nrows(),
            trans.ncols(),
            log_lik.ncols()
        ));
    }
    Ok(())
}

fn rows_to_matrix(rows: &[DVector<f64>]) -> DMatrix<f64> {
    let k = rows.first().map_or(0, |r| r.len());
    DMatrix::from_fn(rows.len(), k, |t, j| rows[t][j])
}

/// Scaled forward filter over a `T x K` table of emission log-likelihoods.
/// Returns the filter rows and `log p(x_t | x_<t)` for every step.
pub fn filter_log_lik(
    init: &DiscreteDistribution,
    trans: &DMatrix<f64>,
    log_lik: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, Vec<f64>)> {
    check_chain(init, trans, log_lik)?;
    let chain = DiscreteChain {
        init: init.probs(),
        trans,
        log_lik,
    };
    let fwd = recursion::forward(&chain)?;
    Ok((rows_to_matrix(&fwd.filtered), fwd.log_normalizers))
}

/// Filter, smoother and pairwise tables over a `T x K` log-likelihood table.
pub fn smooth_log_lik(
    init: &DiscreteDistribution,
    trans: &DMatrix<f64>,
    log_lik: &DMatrix<f64>,
) -> Result<HmmPosteriors> {
    check_chain(init, trans, log_lik)?;
    let chain = DiscreteChain {
        init: init.probs(),
        trans,
        log_lik,
    };
    let fwd = recursion::forward(&chain)?;
    let bwd = recursion::backward(&chain, &fwd)?;
    Ok(HmmPosteriors {
        filter: rows_to_matrix(&fwd.filtered),
        smoother: rows_to_matrix(&bwd.smoothed),
        pairwise: bwd.pairs,
        loglik: fwd.log_likelihood(),
    })
}

/// Scaled filter for one `T x D` sequence.
pub fn hmm_filter(params: &HmmParams, seq: &DMatrix<f64>) -> Result<(DMatrix<f64>, Vec<f64>)> {
    filter_log_lik(&params.init, &params.trans, &params.emission_log_likelihoods(seq)?)
}

pub fn hmm_smoother(params: &HmmParams, seq: &DMatrix<f64>) -> Result<HmmPosteriors> {
    smooth_log_lik(&params.init, &params.trans, &params.emission_log_likelihoods(seq)?)
}

/// Unnormalized forward recursion `alpha_t(k) = p(z_t = k, x_<=t)`.
///
/// Kept as a reference implementation: on long sequences the entries leave
/// floating-point range, which is reported as an underflow. Use
/// [`hmm_filter`] there.
pub fn hmm_alpha(params: &HmmParams, seq: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
    let lik = params.emission_log_likelihoods(seq)?.map(f64::exp);
    let (t_len, k) = lik.shape();
    if t_len == 0 {
        return Err(Error::Precondition("a sequence needs at least one observation".into()));
    }
    let mut alpha = DMatrix::zeros(t_len, k);
    let mut prev = params.init.to_vector();
    for t in 0..t_len {
        let pred = if t == 0 { prev.clone() } else { &params.trans * &prev };
        let a = pred.component_mul(&lik.row(t).transpose());
        if !(a.sum() >= f64::MIN_POSITIVE) {
            return Err(Error::Underflow {
                step: t,
                detail: "unnormalized forward messages left floating-point range; use the scaled filter".into(),
            });
        }
        alpha.row_mut(t).copy_from(&a.transpose());
        prev = a;
    }
    let loglik = prev.sum().ln();
    Ok((alpha, loglik))
}

/// Posteriors for every sequence of a dataset.
pub fn hmm_posteriors(params: &HmmParams, data: &SequenceDataset) -> Result<Vec<HmmPosteriors>> {
    data.sequences().iter().map(|s| hmm_smoother(params, s)).collect()
}

/// Expected sufficient statistics summed over sequences.
#[derive(Debug, Clone, PartialEq)]
pub struct HmmStats {
    /// `sum_seq gamma_1(k)`.
    pub first: DVector<f64>,
    /// `sum_seq sum_t gamma_t(k)`.
    pub occupancy: DVector<f64>,
    /// `sum_seq sum_{t<T} gamma_t(j)`: expected departures from each state.
    pub departures: DVector<f64>,
    /// `sum_seq sum_t pairwise_t(i, j)`.
    pub transitions: DMatrix<f64>,
    /// `sum gamma_t(k) x_t`.
    pub sum_x: Vec<DVector<f64>>,
    /// `sum gamma_t(k) x_t x_t'`.
    pub sum_xx: Vec<DMatrix<f64>>,
    pub sequences: usize,
    pub steps: usize,
}

/// Accumulates statistics under given posteriors (one per sequence).
pub fn hmm_stats(data: &SequenceDataset, posts: &[HmmPosteriors]) -> Result<HmmStats> {
    if posts.len() != data.sequences().len() {
        return Err(dim_err!(
            "{} posteriors for {} sequences",
            posts.len(),
            data.sequences().len()
        ));
    }
    let k = posts.first().map_or(0, |p| p.smoother.ncols());
    let d = data.dim();
    let mut s = HmmStats {
        first: DVector::zeros(k),
        occupancy: DVector::zeros(k),
        departures: DVector::zeros(k),
        transitions: DMatrix::zeros(k, k),
        sum_x: vec![DVector::zeros(d); k],
        sum_xx: vec![DMatrix::zeros(d, d); k],
        sequences: posts.len(),
        steps: 0,
    };
    for (seq, post) in data.sequences().iter().zip(posts) {
        let t_len = seq.nrows();
        if post.smoother.shape() != (t_len, k) || post.pairwise.len() + 1 != t_len {
            return Err(dim_err!("posterior tables do not match a sequence of length {t_len}"));
        }
        s.steps += t_len;
        s.first += post.smoother.row(0).transpose();
        for t in 0..t_len {
            let x = seq.row(t).transpose();
            let xx = &x * x.transpose();
            for j in 0..k {
                let g = post.smoother[(t, j)];
                s.occupancy[j] += g;
                if t + 1 < t_len {
                    s.departures[j] += g;
                }
                s.sum_x[j].axpy(g, &x, 1.0);
                s.sum_xx[j] += &xx * g;
            }
        }
        for p in &post.pairwise {
            s.transitions += p;
        }
    }
    Ok(s)
}

/// Statistics under the smoother of `params`.
pub fn hmm_e_step(params: &HmmParams, data: &SequenceDataset) -> Result<HmmStats> {
    hmm_stats(data, &hmm_posteriors(params, data)?)
}

/// Closed-form update. A state never departed from gets a uniform column; a
/// state with no occupancy at all is an error. Covariances are floored at
/// eigenvalue `floor`.
pub fn hmm_m_step(stats: &HmmStats, floor: f64) -> Result<HmmParams> {
    let k = stats.occupancy.len();
    if let Some(j) = (0..k).find(|j| stats.occupancy[*j] < EMPTY_MASS) {
        return Err(Error::EmptyComponent(j));
    }
    let init = DiscreteDistribution::from_weights(stats.first.as_slice())?;
    let mut trans = DMatrix::zeros(k, k);
    for j in 0..k {
        let dep = stats.departures[j];
        if dep < EMPTY_MASS {
            trans.column_mut(j).fill(1.0 / k as f64);
        } else {
            let col = stats.transitions.column(j) / dep;
            // renormalize away rounding so columns sum to one
            let s = col.sum();
            trans.column_mut(j).copy_from(&(col / s));
        }
    }
    let mut means = Vec::with_capacity(k);
    let mut covs = Vec::with_capacity(k);
    for j in 0..k {
        let occ = stats.occupancy[j];
        let m = &stats.sum_x[j] / occ;
        let c = &stats.sum_xx[j] / occ - &m * m.transpose();
        covs.push(linalg::floor_eigenvalues(&linalg::symmetrize(&c), floor));
        means.push(m);
    }
    HmmParams::new(init, trans, means, covs)
}

fn xlogy(x: f64, y: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * y.ln()
    }
}

/// Free energy of `params` under the chain posteriors `posts`, per time step.
pub fn hmm_free_energy(params: &HmmParams, data: &SequenceDataset, posts: &[HmmPosteriors]) -> Result<f64> {
    if posts.len() != data.sequences().len() {
        return Err(dim_err!(
            "{} posteriors for {} sequences",
            posts.len(),
            data.sequences().len()
        ));
    }
    let k = params.states();
    let mut energy = 0.0;
    let mut entropy = 0.0;
    let mut steps = 0usize;
    for (seq, post) in data.sequences().iter().zip(posts) {
        let ll = params.emission_log_likelihoods(seq)?;
        steps += seq.nrows();
        for j in 0..k {
            let g = post.smoother[(0, j)];
            energy -= xlogy(g, params.init[j]);
            entropy -= xlogy(g, g);
            for t in 0..seq.nrows() {
                let g = post.smoother[(t, j)];
                if g > 0.0 {
                    energy -= g * ll[(t, j)];
                }
            }
        }
        for (t, p) in post.pairwise.iter().enumerate() {
            for i in 0..k {
                for j in 0..k {
                    let q = p[(i, j)];
                    if q > 0.0 {
                        energy -= xlogy(q, params.trans[(i, j)]);
                        entropy -= q * (q / post.smoother[(t, j)]).ln();
                    }
                }
            }
        }
    }
    Ok((energy - entropy) / steps as f64)
}

/// EM handle for a `k`-state Gaussian HMM over a set of sequences.
#[derive(Debug, Clone)]
pub struct HmmModel<'a> {
    data: &'a SequenceDataset,
    k: usize,
    floor: f64,
}

impl<'a> HmmModel<'a> {
    pub fn new(data: &'a SequenceDataset, k: usize) -> Result<Self> {
        if k == 0 || k > data.total_len() {
            return Err(Error::Precondition(alloc::format!(
                "cannot fit {k} states to {} observations",
                data.total_len()
            )));
        }
        Ok(Self {
            data,
            k,
            floor: covariance_floor(&data.pooled()),
        })
    }

    pub fn floor(&self) -> f64 {
        self.floor
    }
}

impl EmModel for HmmModel<'_> {
    type Params = HmmParams;
    type Posterior = Vec<HmmPosteriors>;

    /// Means at distinct random observations, pooled covariance, uniform
    /// start and a sticky transition matrix `0.5 I + 0.5 / K`.
    fn init_params<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<HmmParams> {
        let pooled = self.data.pooled();
        let picks = rand::seq::index::sample(rng, pooled.n(), self.k);
        let means = picks.iter().map(|i| pooled.row(i)).collect();
        let cov = linalg::floor_eigenvalues(&pooled.covariance(), self.floor);
        let k = self.k as f64;
        let trans = DMatrix::from_fn(self.k, self.k, |i, j| if i == j { 0.5 + 0.5 / k } else { 0.5 / k });
        HmmParams::new(DiscreteDistribution::uniform(self.k), trans, means, vec![cov; self.k])
    }

    fn e_step(&self, params: &HmmParams) -> Result<Vec<HmmPosteriors>> {
        hmm_posteriors(params, self.data)
    }

    fn m_step(&self, posts: &Vec<HmmPosteriors>, _prev: &HmmParams) -> Result<HmmParams> {
        hmm_m_step(&hmm_stats(self.data, posts)?, self.floor)
    }

    fn free_energy(&self, params: &HmmParams, posts: &Vec<HmmPosteriors>) -> Result<f64> {
        hmm_free_energy(params, self.data, posts)
    }

    fn log_likelihood(&self, params: &HmmParams) -> Result<f64> {
        let mut total = 0.0;
        for s in self.data.sequences() {
            total += hmm_filter(params, s)?.1.iter().sum::<f64>();
        }
        Ok(total / self.data.total_len() as f64)
    }
}
