//! Sequential Monte Carlo filtering and smoothing.
//!
//! Of the four half-updates only the time update samples: ancestors are
//! drawn from the filter weights and pushed through the transition sampler.
//! The measurement update, future conditioning and backward step are the
//! HMM recursions applied to the categorical distribution over particles.

use crate::dist::DiscreteDistribution;
use crate::gaussian::psd_sqrt;
use crate::hmm::HmmParams;
use crate::linalg::{self, MvnFactor};
use crate::prelude::*;
use crate::rng::standard_normal_vector;
use crate::ssm::SsmParams;
use rand::Rng;
use rand_distr::Exp1;

/// Draws initial states and propagates particles through the transition.
pub trait TransitionSampler {
    type Particle: Clone;
    fn sample_initial<R: Rng + ?Sized>(&self, rng: &mut R) -> Self::Particle;
    fn sample_next<R: Rng + ?Sized>(&self, prev: &Self::Particle, rng: &mut R) -> Self::Particle;
}

/// `log p(next | prev)`.
pub trait TransitionDensity {
    type Particle;
    fn log_density(&self, next: &Self::Particle, prev: &Self::Particle) -> f64;
}

/// `log p(obs | particle)`.
pub trait ObservationLikelihood {
    type Particle;
    type Obs: ?Sized;
    fn log_likelihood(&self, particle: &Self::Particle, obs: &Self::Obs) -> f64;
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParticleCloud<P> {
    pub particles: Vec<P>,
    pub filter_weights: DiscreteDistribution,
    /// Filled in by [`particle_smoother`].
    pub smoother_weights: Option<DiscreteDistribution>,
}

impl<P> ParticleCloud<P> {
    pub fn uniform(particles: Vec<P>) -> Result<Self> {
        if particles.is_empty() {
            return Err(Error::Precondition(
                "a particle cloud needs at least one particle".into(),
            ));
        }
        let n = particles.len();
        Ok(Self {
            particles,
            filter_weights: DiscreteDistribution::uniform(n),
            smoother_weights: None,
        })
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    /// Effective sample size `1 / sum w^2` of the filter weights.
    pub fn ess(&self) -> f64 {
        ess(self.filter_weights.probs())
    }
}

pub fn ess(weights: &[f64]) -> f64 {
    1.0 / weights.iter().map(|w| w * w).sum::<f64>()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Resampling {
    /// Independent categorical draws, as in the plain mixture-sampling view.
    #[default]
    Multinomial,
    /// One uniform offset, stratified positions `(i + u) / N`.
    Systematic,
}

/// Ancestor indices drawn from `weights` in `O(N)`.
pub fn resample<R: Rng + ?Sized>(weights: &[f64], n: usize, scheme: Resampling, rng: &mut R) -> Vec<usize> {
    // sorted uniforms: normalized partial sums of exponential spacings
    let positions: Vec<f64> = match scheme {
        Resampling::Multinomial => {
            let spacings: Vec<f64> = (0..=n).map(|_| rng.sample::<f64, _>(Exp1)).collect();
            let total: f64 = spacings.iter().sum();
            let mut acc = 0.0;
            spacings[..n]
                .iter()
                .map(|e| {
                    acc += e;
                    acc / total
                })
                .collect()
        }
        Resampling::Systematic => {
            let u: f64 = rng.random();
            (0..n).map(|i| (i as f64 + u) / n as f64).collect()
        }
    };
    let last = weights.iter().rposition(|w| *w > 0.0).unwrap_or(0);
    let mut out = Vec::with_capacity(n);
    let mut j = 0;
    let mut cum = weights[0];
    for u in positions {
        while u >= cum && j < last {
            j += 1;
            cum += weights[j];
        }
        out.push(j);
    }
    out
}

/// Particles drawn from the initial distribution with uniform weights.
pub fn pf_initialize<S: TransitionSampler, R: Rng + ?Sized>(
    dynamics: &S,
    n: usize,
    rng: &mut R,
) -> Result<ParticleCloud<S::Particle>> {
    ParticleCloud::uniform((0..n).map(|_| dynamics.sample_initial(rng)).collect())
}

/// Resample ancestors by the filter weights and propagate; output weights are uniform.
pub fn pf_time_update<S: TransitionSampler, R: Rng + ?Sized>(
    cloud: &ParticleCloud<S::Particle>,
    dynamics: &S,
    scheme: Resampling,
    rng: &mut R,
) -> Result<ParticleCloud<S::Particle>> {
    let w = cloud.filter_weights.probs();
    if w.iter().cloned().fold(0.0, f64::max) > 1.0 - 1e-12 && cloud.len() > 1 {
        log::warn!("particle weights are degenerate: one particle carries all the mass");
    }
    let ancestors = resample(w, cloud.len(), scheme, rng);
    let particles = ancestors
        .iter()
        .map(|a| dynamics.sample_next(&cloud.particles[*a], rng))
        .collect();
    ParticleCloud::uniform(particles)
}

/// Time update evaluated exactly on a given support: weight of `support[k]`
/// is `sum_i w_i p(support[k] | particle_i)`. On a finite state space with
/// the whole space as support this is the HMM prediction.
pub fn pf_time_update_on_support<D: TransitionDensity>(
    cloud: &ParticleCloud<D::Particle>,
    density: &D,
    support: Vec<D::Particle>,
    t: usize,
) -> Result<ParticleCloud<D::Particle>> {
    let log_w: Vec<f64> = support
        .iter()
        .map(|next| {
            let terms: Vec<f64> = cloud
                .particles
                .iter()
                .zip(cloud.filter_weights.probs())
                .map(|(prev, w)| {
                    if *w > 0.0 {
                        w.ln() + density.log_density(next, prev)
                    } else {
                        f64::NEG_INFINITY
                    }
                })
                .collect();
            linalg::log_sum_exp(&terms)
        })
        .collect();
    let filter_weights = normalize_log(&log_w, t, "no support point is reachable")?;
    Ok(ParticleCloud {
        particles: support,
        filter_weights,
        smoother_weights: None,
    })
}

fn normalize_log(log_w: &[f64], t: usize, what: &str) -> Result<DiscreteDistribution> {
    if log_w.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
        return Err(Error::Precondition(alloc::format!("non-finite log weight at step {t}")));
    }
    if log_w.iter().all(|v| *v == f64::NEG_INFINITY) {
        return Err(Error::Underflow {
            step: t,
            detail: what.into(),
        });
    }
    DiscreteDistribution::from_log_weights(log_w)
}

/// Reweight by `p(obs | particle)`, normalized with log-sum-exp.
pub fn pf_measurement_update<L: ObservationLikelihood>(
    cloud: &ParticleCloud<L::Particle>,
    likelihood: &L,
    obs: &L::Obs,
    t: usize,
) -> Result<ParticleCloud<L::Particle>>
where
    L::Particle: Clone,
{
    let log_w: Vec<f64> = cloud
        .particles
        .iter()
        .zip(cloud.filter_weights.probs())
        .map(|(p, w)| {
            if *w > 0.0 {
                w.ln() + likelihood.log_likelihood(p, obs)
            } else {
                f64::NEG_INFINITY
            }
        })
        .collect();
    let filter_weights = normalize_log(&log_w, t, "every particle has zero likelihood")?;
    Ok(ParticleCloud {
        particles: cloud.particles.clone(),
        filter_weights,
        smoother_weights: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParticleConfig {
    pub particles: usize,
    pub resampling: Resampling,
}

impl Default for ParticleConfig {
    fn default() -> Self {
        Self {
            particles: 1000,
            resampling: Resampling::Multinomial,
        }
    }
}

/// Bootstrap particle filter over `obs`; one cloud per step.
pub fn particle_filter<M, R>(
    model: &M,
    obs: &[&M::Obs],
    config: &ParticleConfig,
    rng: &mut R,
) -> Result<Vec<ParticleCloud<<M as TransitionSampler>::Particle>>>
where
    M: TransitionSampler + ObservationLikelihood<Particle = <M as TransitionSampler>::Particle>,
    R: Rng + ?Sized,
{
    if obs.is_empty() {
        return Err(Error::Precondition("a sequence needs at least one observation".into()));
    }
    let mut clouds = Vec::with_capacity(obs.len());
    let mut cloud = pf_initialize(model, config.particles, rng)?;
    for (t, y) in obs.iter().enumerate() {
        if t > 0 {
            cloud = pf_time_update(&cloud, model, config.resampling, rng)?;
        }
        cloud = pf_measurement_update(&cloud, model, y, t)?;
        clouds.push(cloud.clone());
    }
    Ok(clouds)
}

/// Backward reweighting of the filter particles (`O(N^2)` per step).
/// Sets `smoother_weights` on every cloud, starting from the last filter.
pub fn particle_smoother<D: TransitionDensity>(clouds: &mut [ParticleCloud<D::Particle>], density: &D) -> Result<()> {
    let t_len = clouds.len();
    if t_len == 0 {
        return Err(Error::Precondition("no clouds to smooth".into()));
    }
    clouds[t_len - 1].smoother_weights = Some(clouds[t_len - 1].filter_weights.clone());
    for t in (1..t_len).rev() {
        let (head, tail) = clouds.split_at_mut(t);
        let prev = &mut head[t - 1];
        let next = &tail[0];
        let v_next = next
            .smoother_weights
            .as_ref()
            .expect("filled on the previous step")
            .probs();
        let w_prev = prev.filter_weights.probs();
        let n_prev = prev.particles.len();
        let mut acc = vec![0.0; n_prev];
        let mut logs = vec![0.0; n_prev];
        for (k, zk) in next.particles.iter().enumerate() {
            if v_next[k] == 0.0 {
                continue;
            }
            // future conditioning: reverse-transition probabilities over the previous particles
            let mut m = f64::NEG_INFINITY;
            for (j, zj) in prev.particles.iter().enumerate() {
                logs[j] = if w_prev[j] > 0.0 {
                    w_prev[j].ln() + density.log_density(zk, zj)
                } else {
                    f64::NEG_INFINITY
                };
                m = m.max(logs[j]);
            }
            if m == f64::NEG_INFINITY {
                return Err(Error::Underflow {
                    step: t,
                    detail: alloc::format!("particle {k} is unreachable from every previous particle"),
                });
            }
            let denom: f64 = logs.iter().map(|l| (l - m).exp()).sum();
            let scale = v_next[k] / denom;
            for j in 0..n_prev {
                acc[j] += scale * (logs[j] - m).exp();
            }
        }
        prev.smoother_weights = Some(DiscreteDistribution::from_weights(&acc)?);
    }
    Ok(())
}

/// Total filter (or smoother) mass on each of `k` discrete states.
pub fn state_masses(cloud: &ParticleCloud<usize>, k: usize, smoothed: bool) -> Vec<f64> {
    let w = if smoothed {
        cloud.smoother_weights.as_ref().unwrap_or(&cloud.filter_weights)
    } else {
        &cloud.filter_weights
    };
    let mut out = vec![0.0; k];
    for (p, wi) in cloud.particles.iter().zip(w.probs()) {
        out[*p] += wi;
    }
    out
}

/// Gaussian HMM with integer-state particles.
#[derive(Debug, Clone)]
pub struct DiscreteChain<'a> {
    params: &'a HmmParams,
    emissions: Vec<MvnFactor>,
    cum_init: Vec<f64>,
    cum_trans: Vec<Vec<f64>>,
}

fn cumulative(p: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut acc = 0.0;
    p.map(|v| {
        acc += v;
        acc
    })
    .collect()
}

fn draw(cum: &[f64], u: f64) -> usize {
    let i = cum.partition_point(|c| *c <= u);
    i.min(cum.len() - 1)
}

impl<'a> DiscreteChain<'a> {
    pub fn new(params: &'a HmmParams) -> Result<Self> {
        let emissions = params
            .means
            .iter()
            .zip(&params.covs)
            .map(|(m, c)| MvnFactor::new(m, c, "emission covariance"))
            .collect::<Result<Vec<_>>>()?;
        let cum_init = cumulative(params.init.probs().iter().cloned());
        let cum_trans = params
            .trans
            .column_iter()
            .map(|c| cumulative(c.iter().cloned()))
            .collect();
        Ok(Self {
            params,
            emissions,
            cum_init,
            cum_trans,
        })
    }

    /// Every state, for the exact-support embedding.
    pub fn support(&self) -> Vec<usize> {
        (0..self.params.states()).collect()
    }

    /// Initial cloud on the whole state space weighted by the initial distribution.
    pub fn exact_initial(&self) -> ParticleCloud<usize> {
        ParticleCloud {
            particles: self.support(),
            filter_weights: self.params.init.clone(),
            smoother_weights: None,
        }
    }
}

impl TransitionSampler for DiscreteChain<'_> {
    type Particle = usize;

    fn sample_initial<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        draw(
            &self.cum_init,
            rng.random::<f64>() * self.cum_init[self.cum_init.len() - 1],
        )
    }

    fn sample_next<R: Rng + ?Sized>(&self, prev: &usize, rng: &mut R) -> usize {
        let cum = &self.cum_trans[*prev];
        draw(cum, rng.random::<f64>() * cum[cum.len() - 1])
    }
}

impl TransitionDensity for DiscreteChain<'_> {
    type Particle = usize;

    fn log_density(&self, next: &usize, prev: &usize) -> f64 {
        self.params.trans[(*next, *prev)].ln()
    }
}

impl ObservationLikelihood for DiscreteChain<'_> {
    type Particle = usize;
    type Obs = DVector<f64>;

    fn log_likelihood(&self, particle: &usize, obs: &DVector<f64>) -> f64 {
        self.emissions[*particle].log_density(obs)
    }
}

/// Exact filter and smoother of an HMM written as a particle recursion whose
/// support is the whole state space at every step.
pub fn exact_support_smoother(chain: &DiscreteChain<'_>, obs: &[&DVector<f64>]) -> Result<Vec<ParticleCloud<usize>>> {
    if obs.is_empty() {
        return Err(Error::Precondition("a sequence needs at least one observation".into()));
    }
    let mut clouds = Vec::with_capacity(obs.len());
    let mut cloud = chain.exact_initial();
    for (t, y) in obs.iter().enumerate() {
        if t > 0 {
            cloud = pf_time_update_on_support(&cloud, chain, chain.support(), t)?;
        }
        cloud = pf_measurement_update(&cloud, chain, y, t)?;
        clouds.push(cloud.clone());
    }
    particle_smoother(&mut clouds, chain)?;
    Ok(clouds)
}

/// Linear-Gaussian state-space model with vector particles (zero controls).
#[derive(Debug, Clone)]
pub struct LinearGaussian<'a> {
    params: &'a SsmParams,
    init_root: DMatrix<f64>,
    trans_root: DMatrix<f64>,
    trans_noise: MvnFactor,
    emission_noise: MvnFactor,
}

impl<'a> LinearGaussian<'a> {
    /// Needs positive-definite transition and emission noise for the densities.
    pub fn new(params: &'a SsmParams) -> Result<Self> {
        let k = params.state_dim();
        let d = params.obs_dim();
        Ok(Self {
            params,
            init_root: psd_sqrt(params.init.cov()),
            trans_root: psd_sqrt(params.trans.noise_cov()),
            trans_noise: MvnFactor::new(&DVector::zeros(k), params.trans.noise_cov(), "transition noise")?,
            emission_noise: MvnFactor::new(&DVector::zeros(d), params.emission.noise_cov(), "emission noise")?,
        })
    }
}

impl TransitionSampler for LinearGaussian<'_> {
    type Particle = DVector<f64>;

    fn sample_initial<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        self.params.init.mean() + &self.init_root * standard_normal_vector(rng, self.params.state_dim())
    }

    fn sample_next<R: Rng + ?Sized>(&self, prev: &DVector<f64>, rng: &mut R) -> DVector<f64> {
        self.params.trans.mean(prev) + &self.trans_root * standard_normal_vector(rng, self.params.state_dim())
    }
}

impl TransitionDensity for LinearGaussian<'_> {
    type Particle = DVector<f64>;

    fn log_density(&self, next: &DVector<f64>, prev: &DVector<f64>) -> f64 {
        self.trans_noise.log_density(&(next - self.params.trans.mean(prev)))
    }
}

impl ObservationLikelihood for LinearGaussian<'_> {
    type Particle = DVector<f64>;
    type Obs = DVector<f64>;

    fn log_likelihood(&self, particle: &DVector<f64>, obs: &DVector<f64>) -> f64 {
        self.emission_noise
            .log_density(&(obs - self.params.emission.mean(particle)))
    }
}
