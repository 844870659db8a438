//! Binary-binary restricted Boltzmann machine (exponential-family harmonium).
//!
//! Energy `E(v, h) = -b_v'v - b_h'h - v'W h`, `p(v, h) ∝ exp(-E)`. Both
//! conditionals are factorial Bernoulli with natural parameters affine in the
//! other layer through the shared `W`. Gradients are gradients of the loss
//! `-<log p(v)>_data`, so a learning step is `params -= rate * grad`.

use crate::prelude::*;
use crate::special::{sigmoid, softplus};
use rand::Rng;

/// Largest `V + H` the enumerators accept.
pub const ENUMERATION_LIMIT: usize = 22;

#[derive(Debug, Clone, PartialEq)]
pub struct RbmParams {
    /// `V x H`.
    pub weights: DMatrix<f64>,
    pub visible_bias: DVector<f64>,
    pub hidden_bias: DVector<f64>,
}

impl RbmParams {
    pub fn new(weights: DMatrix<f64>, visible_bias: DVector<f64>, hidden_bias: DVector<f64>) -> Result<Self> {
        if weights.nrows() != visible_bias.len() || weights.ncols() != hidden_bias.len() {
            return Err(dim_err!(
                "weights are {}x{}, biases have lengths {} and {}",
                weights.nrows(),
                weights.ncols(),
                visible_bias.len(),
                hidden_bias.len()
            ));
        }
        if weights
            .iter()
            .chain(visible_bias.iter())
            .chain(hidden_bias.iter())
            .any(|v| !v.is_finite())
        {
            return Err(Error::Precondition("RBM parameters must be finite".into()));
        }
        Ok(Self {
            weights,
            visible_bias,
            hidden_bias,
        })
    }

    pub fn zeros(v: usize, h: usize) -> Self {
        Self {
            weights: DMatrix::zeros(v, h),
            visible_bias: DVector::zeros(v),
            hidden_bias: DVector::zeros(h),
        }
    }

    /// Small Gaussian weights (std `scale`), zero biases.
    pub fn random<R: Rng + ?Sized>(v: usize, h: usize, scale: f64, rng: &mut R) -> Self {
        let w = DMatrix::from_fn(v, h, |_, _| scale * rng.sample::<f64, _>(rand_distr::StandardNormal));
        Self {
            weights: w,
            visible_bias: DVector::zeros(v),
            hidden_bias: DVector::zeros(h),
        }
    }

    pub fn visible(&self) -> usize {
        self.visible_bias.len()
    }

    pub fn hidden(&self) -> usize {
        self.hidden_bias.len()
    }

    /// Parameters after one step `params - rate * grad`.
    pub fn step(&self, grad: &RbmGradient, rate: f64) -> Self {
        Self {
            weights: &self.weights - &grad.weights * rate,
            visible_bias: &self.visible_bias - &grad.visible_bias * rate,
            hidden_bias: &self.hidden_bias - &grad.hidden_bias * rate,
        }
    }
}

/// Rows are binary visible vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryBatch {
    states: DMatrix<f64>,
}

impl BinaryBatch {
    pub fn new(states: DMatrix<f64>) -> Result<Self> {
        if states.nrows() == 0 {
            return Err(Error::Precondition("empty binary batch".into()));
        }
        if states.iter().any(|v| *v != 0.0 && *v != 1.0) {
            return Err(Error::Precondition("binary batch entries must be 0 or 1".into()));
        }
        Ok(Self { states })
    }

    pub fn states(&self) -> &DMatrix<f64> {
        &self.states
    }

    pub fn n(&self) -> usize {
        self.states.nrows()
    }

    pub fn dim(&self) -> usize {
        self.states.ncols()
    }

    /// Empirical distribution over the `2^V` visible patterns, indexed by [`bits_of`].
    pub fn empirical(&self) -> Vec<f64> {
        let mut p = vec![0.0; 1 << self.dim()];
        for r in self.states.row_iter() {
            let code = r.iter().enumerate().fold(0usize, |c, (i, b)| c | ((*b as usize) << i));
            p[code] += 1.0 / self.n() as f64;
        }
        p
    }
}

/// Binary vector whose bit `i` is bit `i` of `code`.
pub fn bits_of(code: usize, len: usize) -> DVector<f64> {
    DVector::from_fn(len, |i, _| ((code >> i) & 1) as f64)
}

pub fn rbm_energy(params: &RbmParams, v: &DVector<f64>, h: &DVector<f64>) -> Result<f64> {
    if v.len() != params.visible() || h.len() != params.hidden() {
        return Err(dim_err!(
            "state has {}+{} units, model has {}+{}",
            v.len(),
            h.len(),
            params.visible(),
            params.hidden()
        ));
    }
    Ok(-params.visible_bias.dot(v) - params.hidden_bias.dot(h) - v.dot(&(&params.weights * h)))
}

/// `sigma(b_h + W'v)`.
pub fn hidden_means(params: &RbmParams, v: &DVector<f64>) -> DVector<f64> {
    (params.weights.tr_mul(v) + &params.hidden_bias).map(sigmoid)
}

/// `sigma(b_v + W h)`.
pub fn visible_means(params: &RbmParams, h: &DVector<f64>) -> DVector<f64> {
    (&params.weights * h + &params.visible_bias).map(sigmoid)
}

pub enum Layer<'a> {
    Visible(&'a DVector<f64>),
    Hidden(&'a DVector<f64>),
}

/// Bernoulli means of the other layer given one layer.
pub fn rbm_conditionals(params: &RbmParams, given: Layer<'_>) -> Result<DVector<f64>> {
    match given {
        Layer::Visible(v) if v.len() == params.visible() => Ok(hidden_means(params, v)),
        Layer::Hidden(h) if h.len() == params.hidden() => Ok(visible_means(params, h)),
        _ => Err(dim_err!("conditioning layer has the wrong length")),
    }
}

fn guard(params: &RbmParams) -> Result<()> {
    let bits = params.visible() + params.hidden();
    if bits > ENUMERATION_LIMIT {
        return Err(Error::Size {
            bits,
            limit: ENUMERATION_LIMIT,
        });
    }
    Ok(())
}

/// `log Z` by streaming log-sum-exp over all `2^(V+H)` joint configurations.
pub fn log_partition_bruteforce(params: &RbmParams) -> Result<f64> {
    guard(params)?;
    let (nv, nh) = (params.visible(), params.hidden());
    let mut m = f64::NEG_INFINITY;
    let mut s = 0.0;
    for vc in 0..1usize << nv {
        let v = bits_of(vc, nv);
        let a = params.visible_bias.dot(&v);
        let wv = params.weights.tr_mul(&v) + &params.hidden_bias;
        for hc in 0..1usize << nh {
            let mut x = a;
            for j in 0..nh {
                if (hc >> j) & 1 == 1 {
                    x += wv[j];
                }
            }
            if x > m {
                s = s * (m - x).exp() + 1.0;
                m = x;
            } else {
                s += (x - m).exp();
            }
        }
    }
    Ok(m + s.ln())
}

/// `-log sum_h exp(-E(v, h)) = -b_v'v - sum_j softplus(b_h + W'v)_j`.
pub fn free_energy(params: &RbmParams, v: &DVector<f64>) -> f64 {
    let act = params.weights.tr_mul(v) + &params.hidden_bias;
    -params.visible_bias.dot(v) - act.iter().map(|a| softplus(*a)).sum::<f64>()
}

/// `log p(v)` for every visible pattern, indexed by [`bits_of`].
pub fn visible_log_marginals(params: &RbmParams) -> Result<Vec<f64>> {
    guard(params)?;
    let nv = params.visible();
    let neg_f: Vec<f64> = (0..1usize << nv)
        .map(|c| -free_energy(params, &bits_of(c, nv)))
        .collect();
    let log_z = crate::linalg::log_sum_exp(&neg_f);
    Ok(neg_f.iter().map(|f| f - log_z).collect())
}

/// `-<log p(v)>` under the batch.
pub fn neg_log_likelihood(params: &RbmParams, data: &BinaryBatch) -> Result<f64> {
    check_batch(params, data)?;
    let lm = visible_log_marginals(params)?;
    Ok(-data
        .empirical()
        .iter()
        .zip(&lm)
        .map(|(p, l)| if *p > 0.0 { p * l } else { 0.0 })
        .sum::<f64>())
}

/// `KL(data || model visible marginal)` in nats.
pub fn kl_data_model(params: &RbmParams, data: &BinaryBatch) -> Result<f64> {
    check_batch(params, data)?;
    let lm = visible_log_marginals(params)?;
    Ok(data
        .empirical()
        .iter()
        .zip(&lm)
        .map(|(p, l)| if *p > 0.0 { p * (p.ln() - l) } else { 0.0 })
        .sum())
}

fn check_batch(params: &RbmParams, data: &BinaryBatch) -> Result<()> {
    if data.dim() != params.visible() {
        return Err(dim_err!(
            "batch has {} visible units, model has {}",
            data.dim(),
            params.visible()
        ));
    }
    Ok(())
}

/// Gradient of `-<log p(v)>` (or an estimate of it).
#[derive(Debug, Clone, PartialEq)]
pub struct RbmGradient {
    pub weights: DMatrix<f64>,
    pub visible_bias: DVector<f64>,
    pub hidden_bias: DVector<f64>,
}

impl RbmGradient {
    pub fn zeros(v: usize, h: usize) -> Self {
        Self {
            weights: DMatrix::zeros(v, h),
            visible_bias: DVector::zeros(v),
            hidden_bias: DVector::zeros(h),
        }
    }

    /// Weights (column-major), then visible biases, then hidden biases.
    pub fn flatten(&self) -> Vec<f64> {
        self.weights
            .iter()
            .chain(self.visible_bias.iter())
            .chain(self.hidden_bias.iter())
            .cloned()
            .collect()
    }

    pub fn norm(&self) -> f64 {
        self.flatten().iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    /// Cosine of the angle to `other`; diagnoses how well an estimate points
    /// along the exact gradient.
    pub fn cosine(&self, other: &Self) -> f64 {
        let a = self.flatten();
        let b = other.flatten();
        let dot: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        dot / (self.norm() * other.norm())
    }

    fn add_stats(&mut self, v: &DVector<f64>, h: &DVector<f64>, scale: f64) {
        self.weights += v * h.transpose() * scale;
        self.visible_bias.axpy(scale, v, 1.0);
        self.hidden_bias.axpy(scale, h, 1.0);
    }
}

/// Exact gradient for a data distribution given as weights over all `2^V`
/// visible patterns: model statistics minus data statistics.
pub fn exact_kl_gradient_weighted(params: &RbmParams, data_probs: &[f64]) -> Result<RbmGradient> {
    guard(params)?;
    let nv = params.visible();
    if data_probs.len() != 1 << nv {
        return Err(dim_err!("{} pattern weights for {nv} visible units", data_probs.len()));
    }
    let lm = visible_log_marginals(params)?;
    let mut g = RbmGradient::zeros(nv, params.hidden());
    for (c, (pd, l)) in data_probs.iter().zip(&lm).enumerate() {
        let pm = l.exp();
        let coef = pm - pd;
        if coef != 0.0 {
            let v = bits_of(c, nv);
            g.add_stats(&v, &hidden_means(params, &v), coef);
        }
    }
    Ok(g)
}

/// Exact gradient of `-<log p(v)>` under the batch's empirical distribution.
pub fn exact_kl_gradient(params: &RbmParams, data: &BinaryBatch) -> Result<RbmGradient> {
    check_batch(params, data)?;
    exact_kl_gradient_weighted(params, &data.empirical())
}

fn bernoulli<R: Rng + ?Sized>(means: &DVector<f64>, rng: &mut R) -> DVector<f64> {
    means.map(|p| if rng.random::<f64>() < p { 1.0 } else { 0.0 })
}

/// One block-Gibbs sweep `v -> h -> v'` with sampled states.
pub fn gibbs_sweep<R: Rng + ?Sized>(params: &RbmParams, v: &DVector<f64>, rng: &mut R) -> DVector<f64> {
    let h = bernoulli(&hidden_means(params, v), rng);
    bernoulli(&visible_means(params, &h), rng)
}

/// CD-n estimate for one chain started at `v0`: `<s^n> - <s^0>`, with the
/// final hidden layer at both ends entering through its conditional means.
pub fn cd_n_chain<R: Rng + ?Sized>(params: &RbmParams, v0: &DVector<f64>, n: usize, rng: &mut R) -> RbmGradient {
    let mut g = RbmGradient::zeros(params.visible(), params.hidden());
    if n == 0 {
        return g;
    }
    let mut v = v0.clone();
    for _ in 0..n {
        v = gibbs_sweep(params, &v, rng);
    }
    g.add_stats(&v, &hidden_means(params, &v), 1.0);
    g.add_stats(v0, &hidden_means(params, v0), -1.0);
    g
}

/// Mean CD-n estimate over chains started at every batch row.
pub fn cd_n_gradient<R: Rng + ?Sized>(
    params: &RbmParams,
    data: &BinaryBatch,
    n: usize,
    rng: &mut R,
) -> Result<RbmGradient> {
    check_batch(params, data)?;
    let mut g = RbmGradient::zeros(params.visible(), params.hidden());
    let scale = 1.0 / data.n() as f64;
    for r in data.states().row_iter() {
        let c = cd_n_chain(params, &r.transpose(), n, rng);
        g.weights += c.weights * scale;
        g.visible_bias += c.visible_bias * scale;
        g.hidden_bias += c.hidden_bias * scale;
    }
    Ok(g)
}

/// Full-batch CD-n descent with a constant learning rate.
pub fn train_cd<R: Rng + ?Sized>(
    init: &RbmParams,
    data: &BinaryBatch,
    n: usize,
    rate: f64,
    steps: usize,
    rng: &mut R,
) -> Result<RbmParams> {
    let mut p = init.clone();
    for _ in 0..steps {
        let g = cd_n_gradient(&p, data, n, rng)?;
        p = p.step(&g, rate);
    }
    Ok(p)
}

/// Visible-to-visible Gibbs kernel, `K[(v', v)] = sum_h p(h | v) p(v' | h)`.
pub fn visible_gibbs_kernel(params: &RbmParams) -> Result<DMatrix<f64>> {
    guard(params)?;
    let (nv, nh) = (params.visible(), params.hidden());
    let factorial = |means: &DVector<f64>, code: usize| -> f64 {
        means
            .iter()
            .enumerate()
            .map(|(i, m)| if (code >> i) & 1 == 1 { *m } else { 1.0 - m })
            .product()
    };
    let vis_given_h: Vec<DVector<f64>> = (0..1usize << nh)
        .map(|hc| visible_means(params, &bits_of(hc, nh)))
        .collect();
    let mut k = DMatrix::zeros(1 << nv, 1 << nv);
    for vc in 0..1usize << nv {
        let hm = hidden_means(params, &bits_of(vc, nv));
        for (hc, vm) in vis_given_h.iter().enumerate() {
            let ph = factorial(&hm, hc);
            for vn in 0..1usize << nv {
                k[(vn, vc)] += ph * factorial(vm, vn);
            }
        }
    }
    Ok(k)
}

/// Enumerated contrastive divergence `KL(p0 || p) - KL(p0 K^n || p)` with
/// `p` the model visible marginal and `K` the Gibbs kernel.
pub fn contrastive_divergence(params: &RbmParams, p0: &[f64], n: usize) -> Result<f64> {
    let lm = visible_log_marginals(params)?;
    if p0.len() != lm.len() {
        return Err(dim_err!("{} pattern weights for {} patterns", p0.len(), lm.len()));
    }
    let k = visible_gibbs_kernel(params)?;
    let mut pn = DVector::from_row_slice(p0);
    for _ in 0..n {
        pn = &k * pn;
    }
    let kl = |p: &[f64]| -> f64 {
        p.iter()
            .zip(&lm)
            .map(|(a, l)| if *a > 0.0 { a * (a.ln() - l) } else { 0.0 })
            .sum()
    };
    Ok(kl(p0) - kl(pn.as_slice()))
}

/// Six-unit toy data: the bits within each half agree (pairwise even
/// parity), giving the four patterns `000000`, `111000`, `000111`, `111111`
/// with frequencies 4:3:2:1 over 40 rows.
pub fn toy_dataset() -> BinaryBatch {
    let patterns: [([f64; 6], usize); 4] = [
        ([0.0; 6], 16),
        ([1.0, 1.0, 1.0, 0.0, 0.0, 0.0], 12),
        ([0.0, 0.0, 0.0, 1.0, 1.0, 1.0], 8),
        ([1.0; 6], 4),
    ];
    let rows: Vec<f64> = patterns
        .iter()
        .flat_map(|(p, c)| core::iter::repeat_n(p.iter().cloned(), *c).flatten())
        .collect();
    BinaryBatch::new(DMatrix::from_row_slice(40, 6, &rows)).expect("toy patterns are binary")
}
