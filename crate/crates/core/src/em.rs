//! The generic EM driver.
//!
//! A model exposes an E-step, an M-step and a free energy
//! `F(params, q) = E_q[-log p(x, z)] - H(q)`, normalized per observation.
//! After an exact E-step `F` equals the negative log-likelihood, and every
//! half-step can only lower it, so the recorded trace doubles as a
//! correctness check.

use crate::prelude::*;
use crate::rng::{substream, StreamRng};
use rand::Rng;

pub trait EmModel {
    type Params: Clone;
    type Posterior;

    fn init_params<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Self::Params>;
    fn e_step(&self, params: &Self::Params) -> Result<Self::Posterior>;
    /// E-step that may consult the previous posterior. Models whose E-step
    /// is only approximately optimal use this to never raise the free energy.
    fn e_step_after(&self, params: &Self::Params, _prev: &Self::Posterior) -> Result<Self::Posterior> {
        self.e_step(params)
    }
    fn m_step(&self, posterior: &Self::Posterior, prev: &Self::Params) -> Result<Self::Params>;
    /// Free energy per observation.
    fn free_energy(&self, params: &Self::Params, posterior: &Self::Posterior) -> Result<f64>;
    /// Log-likelihood per observation (exact or approximate, model-dependent).
    fn log_likelihood(&self, params: &Self::Params) -> Result<f64>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmConfig {
    pub max_iter: usize,
    /// Stop once the relative change of the post-E-step free energy drops below this.
    pub tol: f64,
    pub seed: u64,
    pub restarts: usize,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            max_iter: 200,
            tol: 1e-8,
            seed: 0,
            restarts: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitReport<P> {
    /// Free energy after the first E-step, then after every M- and E-step.
    pub free_energy_trace: Vec<f64>,
    pub params: P,
    /// Number of M-steps taken.
    pub iterations: usize,
    pub converged: bool,
    pub seed: u64,
    /// Which restart produced these parameters.
    pub restart: usize,
    pub log_likelihood: f64,
}

impl<P> FitReport<P> {
    pub fn final_free_energy(&self) -> f64 {
        *self.free_energy_trace.last().expect("trace is never empty")
    }

    /// Largest increase between consecutive trace entries (0 when monotone).
    pub fn max_increase(&self) -> f64 {
        self.free_energy_trace
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(0.0, f64::max)
    }
}

fn checked(value: f64, iteration: usize) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NumericalDivergence { iteration })
    }
}

/// Runs EM from the given parameters.
pub fn run_em_from<M: EmModel>(model: &M, init: M::Params, config: &EmConfig) -> Result<FitReport<M::Params>> {
    let mut params = init;
    let mut post = model.e_step(&params)?;
    let mut f_prev = checked(model.free_energy(&params, &post)?, 0)?;
    let mut trace = vec![f_prev];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < config.max_iter {
        iterations += 1;
        params = model.m_step(&post, &params)?;
        trace.push(checked(model.free_energy(&params, &post)?, iterations)?);
        post = model.e_step_after(&params, &post)?;
        let f = checked(model.free_energy(&params, &post)?, iterations)?;
        trace.push(f);
        let rel = (f_prev - f).abs() / f_prev.abs().max(f64::MIN_POSITIVE);
        f_prev = f;
        if rel < config.tol {
            converged = true;
            break;
        }
    }
    let log_likelihood = model.log_likelihood(&params)?;
    if iterations > 0 {
        log::debug!("em: {iterations} iterations, final free energy {f_prev}");
    }
    Ok(FitReport {
        free_energy_trace: trace,
        params,
        iterations,
        converged,
        seed: config.seed,
        restart: 0,
        log_likelihood,
    })
}

/// The RNG stream that initializes restart `restart`.
pub fn restart_rng(seed: u64, restart: usize) -> StreamRng {
    substream(seed, "em-restart", restart as u64)
}

/// One restart: initialize from its own stream, then iterate.
pub fn run_em_restart<M: EmModel>(model: &M, config: &EmConfig, restart: usize) -> Result<FitReport<M::Params>> {
    let mut rng = restart_rng(config.seed, restart);
    let init = model.init_params(&mut rng)?;
    let mut report = run_em_from(model, init, config)?;
    report.restart = restart;
    Ok(report)
}

/// Picks the lowest final free energy; ties go to the earliest restart.
pub fn select_best<P>(reports: Vec<FitReport<P>>) -> Option<FitReport<P>> {
    reports.into_iter().reduce(|best, r| {
        if r.final_free_energy() < best.final_free_energy() {
            r
        } else {
            best
        }
    })
}

/// Runs `config.restarts` independent fits (at least one) and keeps the best.
pub fn run_em<M: EmModel>(model: &M, config: &EmConfig) -> Result<FitReport<M::Params>> {
    let mut reports = Vec::with_capacity(config.restarts.max(1));
    for r in 0..config.restarts.max(1) {
        reports.push(run_em_restart(model, config, r)?);
    }
    Ok(select_best(reports).expect("at least one restart"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::info::{marginal_cross_entropy, CategoricalMixture};

    fn toy() -> CategoricalMixture {
        let symbols = [0, 0, 1, 2, 2, 2, 3, 1, 0, 3, 3, 3, 2];
        CategoricalMixture::new(&symbols, 4, 2).unwrap()
    }

    #[test]
    fn zero_iterations_returns_initial_parameters() {
        let m = toy();
        let config = EmConfig {
            max_iter: 0,
            ..Default::default()
        };
        let r = run_em(&m, &config).unwrap();
        assert_eq!(r.free_energy_trace.len(), 1);
        assert_eq!(r.iterations, 0);
        let init = m.init_params(&mut restart_rng(config.seed, 0)).unwrap();
        assert_eq!(r.params, init);
    }

    #[test]
    fn trace_is_monotone_and_tight() {
        let m = toy();
        let r = run_em(
            &m,
            &EmConfig {
                restarts: 3,
                seed: 5,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(r.max_increase() <= 1e-9, "increase {}", r.max_increase());
        let mce = marginal_cross_entropy(&r.params, &m.empirical()).unwrap();
        assert!((r.final_free_energy() - mce).abs() < 1e-9);
        assert!((r.log_likelihood + mce).abs() < 1e-12);
    }

    #[test]
    fn restarts_are_reproducible() {
        let m = toy();
        let c = EmConfig {
            restarts: 4,
            seed: 9,
            max_iter: 20,
            ..Default::default()
        };
        assert_eq!(run_em(&m, &c).unwrap(), run_em(&m, &c).unwrap());
    }
}
