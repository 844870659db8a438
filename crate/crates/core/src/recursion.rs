//! Forward filtering and backward smoothing, independent of the belief algebra.
//!
//! A chain model supplies four half-updates: the time update (predict the
//! next state from the current filter), the measurement update (condition the
//! prediction on the current observation), and, going backwards, the future
//! conditioning plus backward step that together turn the next smoother into
//! the current one. The driver only sequences them. Discrete beliefs give the
//! HMM forward-backward algorithm, Gaussian beliefs give the Kalman filter and
//! RTS smoother.

use crate::prelude::*;

pub trait ForwardBackward {
    type Belief: Clone;
    /// Statistic linking consecutive smoothed states.
    type Pair;

    /// Number of observations.
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Belief about the first state before any observation.
    fn prior(&self) -> Result<Self::Belief>;

    /// Predicted belief at `t + 1` from the filter at `t`.
    fn time_update(&self, filtered: &Self::Belief, t: usize) -> Result<Self::Belief>;

    /// Filter at `t` and `log p(x_t | x_<t)`.
    fn measurement_update(&self, predicted: &Self::Belief, t: usize) -> Result<(Self::Belief, f64)>;

    /// Smoother at `t` and the pair statistic for `(t + 1, t)`. Sees only
    /// filter-side beliefs, never the observations.
    fn backward_step(
        &self,
        filtered: &Self::Belief,
        predicted_next: &Self::Belief,
        smoothed_next: &Self::Belief,
        t: usize,
    ) -> Result<(Self::Belief, Self::Pair)>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardPass<B> {
    pub filtered: Vec<B>,
    /// `predicted[t]` is the belief about state `t` given observations before `t`.
    pub predicted: Vec<B>,
    pub log_normalizers: Vec<f64>,
}

impl<B> ForwardPass<B> {
    pub fn log_likelihood(&self) -> f64 {
        self.log_normalizers.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackwardPass<B, P> {
    pub smoothed: Vec<B>,
    /// `pairs[t]` links states `t + 1` and `t`.
    pub pairs: Vec<P>,
}

pub fn forward<M: ForwardBackward + ?Sized>(model: &M) -> Result<ForwardPass<M::Belief>> {
    let t_len = model.len();
    if t_len == 0 {
        return Err(Error::Precondition("a sequence needs at least one observation".into()));
    }
    let mut filtered = Vec::with_capacity(t_len);
    let mut predicted = Vec::with_capacity(t_len);
    let mut log_normalizers = Vec::with_capacity(t_len);
    let mut pred = model.prior()?;
    for t in 0..t_len {
        let (filt, ln) = model.measurement_update(&pred, t)?;
        log_normalizers.push(ln);
        predicted.push(pred);
        if t + 1 < t_len {
            pred = model.time_update(&filt, t)?;
        } else {
            pred = filt.clone();
        }
        filtered.push(filt);
    }
    Ok(ForwardPass {
        filtered,
        predicted,
        log_normalizers,
    })
}

pub fn backward<M: ForwardBackward + ?Sized>(
    model: &M,
    fwd: &ForwardPass<M::Belief>,
) -> Result<BackwardPass<M::Belief, M::Pair>> {
    let t_len = fwd.filtered.len();
    if t_len == 0 {
        return Err(Error::Precondition("backward pass over an empty filter".into()));
    }
    let mut smoothed = Vec::with_capacity(t_len);
    let mut pairs = Vec::with_capacity(t_len - 1);
    smoothed.push(fwd.filtered[t_len - 1].clone());
    for t in (0..t_len - 1).rev() {
        let next = smoothed.last().expect("seeded with the last filter");
        let (s, p) = model.backward_step(&fwd.filtered[t], &fwd.predicted[t + 1], next, t)?;
        smoothed.push(s);
        pairs.push(p);
    }
    smoothed.reverse();
    pairs.reverse();
    Ok(BackwardPass { smoothed, pairs })
}
