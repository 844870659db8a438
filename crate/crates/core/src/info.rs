//! Entropies, the free energy of a discrete latent model, and bits-back
//! coding-cost accounting by exact enumeration.
//!
//! Everything is computed in nats; [`Base::Two`] only rescales the result.

use crate::dist::DiscreteDistribution;
use crate::em::EmModel;
use crate::prelude::*;
use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Base {
    Two,
    #[default]
    E,
}

impl Base {
    fn scale(self, nats: f64) -> f64 {
        match self {
            Base::Two => nats / core::f64::consts::LN_2,
            Base::E => nats,
        }
    }
}

/// `p log p` with `0 log 0 = 0`.
fn plogp(p: f64) -> f64 {
    if p > 0.0 {
        p * p.ln()
    } else {
        0.0
    }
}

/// `-p log q`, with `0 log q = 0` and `+inf` when `p > 0 = q`.
fn cross_term(p: f64, q: f64) -> f64 {
    if p == 0.0 {
        0.0
    } else if q == 0.0 {
        f64::INFINITY
    } else {
        -p * q.ln()
    }
}

pub fn entropy(p: &DiscreteDistribution, base: Base) -> f64 {
    base.scale(-p.probs().iter().map(|v| plogp(*v)).sum::<f64>())
}

/// `-sum p log q`; `+inf` when `p` puts mass outside the support of `q`.
pub fn cross_entropy(p: &DiscreteDistribution, q: &DiscreteDistribution, base: Base) -> Result<f64> {
    check_same_len(p, q)?;
    Ok(base.scale(p.probs().iter().zip(q.probs()).map(|(a, b)| cross_term(*a, *b)).sum()))
}

/// Relative entropy `KL(p || q)`.
pub fn kl(p: &DiscreteDistribution, q: &DiscreteDistribution, base: Base) -> Result<f64> {
    check_same_len(p, q)?;
    let mut total = 0.0;
    for (a, b) in p.probs().iter().zip(q.probs()) {
        if *a > 0.0 {
            if *b == 0.0 {
                return Ok(f64::INFINITY);
            }
            total += a * (a / b).ln();
        }
    }
    Ok(base.scale(total.max(0.0)))
}

fn check_same_len(p: &DiscreteDistribution, q: &DiscreteDistribution) -> Result<()> {
    if p.len() != q.len() {
        return Err(dim_err!("distributions have {} and {} categories", p.len(), q.len()));
    }
    Ok(())
}

/// A categorical source over `K` classes emitting one of `V` symbols.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteLatentModel {
    source: DiscreteDistribution,
    /// Row `k` is `p(x | z = k)`.
    emission: DMatrix<f64>,
}

impl DiscreteLatentModel {
    pub fn new(source: DiscreteDistribution, emission: DMatrix<f64>) -> Result<Self> {
        if emission.nrows() != source.len() {
            return Err(dim_err!(
                "{} classes but {} emission rows",
                source.len(),
                emission.nrows()
            ));
        }
        for row in emission.row_iter() {
            DiscreteDistribution::new(row.iter().copied().collect())?;
        }
        Ok(Self { source, emission })
    }

    pub fn source(&self) -> &DiscreteDistribution {
        &self.source
    }

    pub fn emission(&self) -> &DMatrix<f64> {
        &self.emission
    }

    pub fn classes(&self) -> usize {
        self.source.len()
    }

    pub fn symbols(&self) -> usize {
        self.emission.ncols()
    }

    pub fn joint(&self, k: usize, v: usize) -> f64 {
        self.source[k] * self.emission[(k, v)]
    }

    pub fn marginal(&self, v: usize) -> f64 {
        (0..self.classes()).map(|k| self.joint(k, v)).sum()
    }

    /// Exact recognition rows `p(z | x = v)`, one per symbol. Symbols the
    /// model cannot emit get the prior.
    pub fn exact_recognition(&self) -> DMatrix<f64> {
        let (k, v) = (self.classes(), self.symbols());
        DMatrix::from_fn(v, k, |sym, cls| {
            let m = self.marginal(sym);
            if m > 0.0 {
                self.joint(cls, sym) / m
            } else {
                self.source[cls]
            }
        })
    }

    /// Point mass at the most probable class for each symbol (ties go low).
    pub fn hard_recognition(&self) -> DMatrix<f64> {
        let exact = self.exact_recognition();
        let mut hard = DMatrix::zeros(exact.nrows(), exact.ncols());
        for (v, row) in exact.row_iter().enumerate() {
            let mut best = 0;
            for k in 1..row.len() {
                if row[k] > row[best] {
                    best = k;
                }
            }
            hard[(v, best)] = 1.0;
        }
        hard
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (usize, usize) {
        let k = sample_index(self.source.probs(), rng);
        let row: Vec<f64> = self.emission.row(k).iter().copied().collect();
        (k, sample_index(&row, rng))
    }

    fn check_data(&self, data: &DiscreteDistribution) -> Result<()> {
        if data.len() != self.symbols() {
            return Err(dim_err!(
                "data covers {} symbols, model emits {}",
                data.len(),
                self.symbols()
            ));
        }
        Ok(())
    }

    fn check_proxy(&self, proxy: &DMatrix<f64>) -> Result<()> {
        if proxy.nrows() != self.symbols() || proxy.ncols() != self.classes() {
            return Err(dim_err!(
                "proxy is {}x{}, expected {}x{}",
                proxy.nrows(),
                proxy.ncols(),
                self.symbols(),
                self.classes()
            ));
        }
        for row in proxy.row_iter() {
            DiscreteDistribution::new(row.iter().copied().collect())?;
        }
        Ok(())
    }
}

pub(crate) fn sample_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.iter().rposition(|p| *p > 0.0).unwrap_or(0)
}

/// `-sum_v data_v log p(v)`.
pub fn marginal_cross_entropy(model: &DiscreteLatentModel, data: &DiscreteDistribution) -> Result<f64> {
    model.check_data(data)?;
    Ok((0..model.symbols())
        .map(|v| cross_term(data[v], model.marginal(v)))
        .sum())
}

/// `E_{data, proxy}[log proxy - log p(z, x)]`.
pub fn free_energy(model: &DiscreteLatentModel, proxy: &DMatrix<f64>, data: &DiscreteDistribution) -> Result<f64> {
    model.check_data(data)?;
    model.check_proxy(proxy)?;
    let mut total = 0.0;
    for v in 0..model.symbols() {
        if data[v] == 0.0 {
            continue;
        }
        for k in 0..model.classes() {
            let q = proxy[(v, k)];
            total += data[v] * (plogp(q) + cross_term(q, model.joint(k, v)));
        }
    }
    Ok(total)
}

/// `sum_v data_v KL(proxy_v || p(z | v))`.
pub fn recognition_kl(model: &DiscreteLatentModel, proxy: &DMatrix<f64>, data: &DiscreteDistribution) -> Result<f64> {
    model.check_data(data)?;
    model.check_proxy(proxy)?;
    let exact = model.exact_recognition();
    let mut total = 0.0;
    for v in 0..model.symbols() {
        if data[v] == 0.0 {
            continue;
        }
        for k in 0..model.classes() {
            let q = proxy[(v, k)];
            if q > 0.0 {
                if exact[(v, k)] == 0.0 {
                    return Ok(f64::INFINITY);
                }
                total += data[v] * q * (q / exact[(v, k)]).ln();
            }
        }
    }
    Ok(total.max(0.0))
}

/// Which recognition distribution the sender uses to pick a code class.
#[derive(Debug, Clone, PartialEq)]
pub enum Proxy {
    Exact,
    /// Point mass at the argmax of the exact recognition.
    Hard,
    /// One row per symbol.
    Custom(DMatrix<f64>),
}

/// Expected message lengths, in nats per symbol.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CodingCostReport {
    /// `-E log p(x)`: the best any code can do.
    pub marginal_cross_entropy: f64,
    /// Cost of sending the argmax class and then the symbol given it.
    pub hard_assignment_cost: f64,
    /// Cost of sending a class drawn from the proxy and then the symbol.
    pub stochastic_cost_before_refund: f64,
    /// Bits recovered by the receiver: the proxy's expected entropy.
    pub refund: f64,
    /// Expected divergence of the proxy from exact recognition.
    pub proxy_kl: f64,
}

impl CodingCostReport {
    pub fn net_stochastic_cost(&self) -> f64 {
        self.stochastic_cost_before_refund - self.refund
    }
}

fn code_length(model: &DiscreteLatentModel, proxy: &DMatrix<f64>, data: &DiscreteDistribution) -> f64 {
    let mut total = 0.0;
    for v in 0..model.symbols() {
        if data[v] == 0.0 {
            continue;
        }
        for k in 0..model.classes() {
            let q = proxy[(v, k)];
            total += data[v] * (cross_term(q, model.source[k]) + cross_term(q, model.emission[(k, v)]));
        }
    }
    total
}

pub fn bits_back_costs(
    model: &DiscreteLatentModel,
    data: &DiscreteDistribution,
    proxy: &Proxy,
) -> Result<CodingCostReport> {
    model.check_data(data)?;
    let q = match proxy {
        Proxy::Exact => model.exact_recognition(),
        Proxy::Hard => model.hard_recognition(),
        Proxy::Custom(m) => {
            model.check_proxy(m)?;
            m.clone()
        }
    };
    let refund: f64 = (0..model.symbols())
        .map(|v| -data[v] * q.row(v).iter().map(|p| plogp(*p)).sum::<f64>())
        .sum();
    Ok(CodingCostReport {
        marginal_cross_entropy: marginal_cross_entropy(model, data)?,
        hard_assignment_cost: code_length(model, &model.hard_recognition(), data),
        stochastic_cost_before_refund: code_length(model, &q, data),
        refund,
        proxy_kl: recognition_kl(model, &q, data)?,
    })
}

/// EM for a [`DiscreteLatentModel`] on a sequence of observed symbols.
#[derive(Debug, Clone)]
pub struct CategoricalMixture {
    counts: Vec<f64>,
    classes: usize,
    n: f64,
}

impl CategoricalMixture {
    pub fn new(symbols: &[usize], vocabulary: usize, classes: usize) -> Result<Self> {
        if classes == 0 || vocabulary == 0 {
            return Err(Error::Precondition("need at least one class and one symbol".into()));
        }
        if symbols.is_empty() {
            return Err(Error::Precondition("no observations".into()));
        }
        let mut counts = vec![0.0; vocabulary];
        for s in symbols {
            if *s >= vocabulary {
                return Err(dim_err!("symbol {s} outside vocabulary of {vocabulary}"));
            }
            counts[*s] += 1.0;
        }
        Ok(Self {
            counts,
            classes,
            n: symbols.len() as f64,
        })
    }

    /// Empirical distribution of the observed symbols.
    pub fn empirical(&self) -> DiscreteDistribution {
        DiscreteDistribution::from_weights(&self.counts).expect("counts are non-empty")
    }
}

impl EmModel for CategoricalMixture {
    type Params = DiscreteLatentModel;
    /// Recognition rows, one per symbol.
    type Posterior = DMatrix<f64>;

    fn init_params<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<Self::Params> {
        let v = self.counts.len();
        let mut emission = DMatrix::zeros(self.classes, v);
        for k in 0..self.classes {
            let w: Vec<f64> = (0..v).map(|_| 0.5 + rng.random::<f64>()).collect();
            let total: f64 = w.iter().sum();
            for s in 0..v {
                emission[(k, s)] = w[s] / total;
            }
        }
        DiscreteLatentModel::new(DiscreteDistribution::uniform(self.classes), emission)
    }

    fn e_step(&self, params: &Self::Params) -> Result<Self::Posterior> {
        Ok(params.exact_recognition())
    }

    fn m_step(&self, post: &Self::Posterior, _prev: &Self::Params) -> Result<Self::Params> {
        let v = self.counts.len();
        let mut mass = vec![0.0; self.classes];
        let mut emission = DMatrix::zeros(self.classes, v);
        for s in 0..v {
            for k in 0..self.classes {
                let r = self.counts[s] * post[(s, k)];
                mass[k] += r;
                emission[(k, s)] = r;
            }
        }
        for (k, m) in mass.iter().enumerate() {
            if *m < 1e-12 {
                return Err(Error::EmptyComponent(k));
            }
            let row = emission.row(k) / *m;
            emission.set_row(k, &row);
        }
        let source: Vec<f64> = mass.iter().map(|m| m / self.n).collect();
        DiscreteLatentModel::new(DiscreteDistribution::from_weights(&source)?, emission)
    }

    fn free_energy(&self, params: &Self::Params, post: &Self::Posterior) -> Result<f64> {
        free_energy(params, post, &self.empirical())
    }

    fn log_likelihood(&self, params: &Self::Params) -> Result<f64> {
        Ok(-marginal_cross_entropy(params, &self.empirical())?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn dd(v: &[f64]) -> DiscreteDistribution {
        DiscreteDistribution::new(v.to_vec()).unwrap()
    }

    fn random_dist<R: Rng>(rng: &mut R, n: usize) -> DiscreteDistribution {
        let w: Vec<f64> = (0..n).map(|_| rng.random::<f64>() + 1e-3).collect();
        DiscreteDistribution::from_weights(&w).unwrap()
    }

    fn random_model<R: Rng>(rng: &mut R, k: usize, v: usize) -> DiscreteLatentModel {
        let mut e = DMatrix::zeros(k, v);
        for r in 0..k {
            let row = random_dist(rng, v);
            for c in 0..v {
                e[(r, c)] = row[c];
            }
        }
        DiscreteLatentModel::new(random_dist(rng, k), e).unwrap()
    }

    #[test]
    fn guessing_game_values() {
        let p = dd(&[0.5, 0.25, 0.125, 0.125]);
        let u = DiscreteDistribution::uniform(4);
        assert!((entropy(&p, Base::Two) - 1.75).abs() < 1e-15);
        assert!((entropy(&u, Base::Two) - 2.0).abs() < 1e-15);
        assert_eq!(entropy(&dd(&[1.0, 0.0, 0.0]), Base::E), 0.0);
        assert!((cross_entropy(&p, &u, Base::Two).unwrap() - 2.0).abs() < 1e-15);
        assert!((cross_entropy(&u, &p, Base::Two).unwrap() - 2.25).abs() < 1e-15);
        assert!((kl(&u, &p, Base::Two).unwrap() - 0.25).abs() < 1e-15);
        assert_eq!(kl(&p, &p, Base::E).unwrap(), 0.0);
        assert!((cross_entropy(&p, &p, Base::E).unwrap() - entropy(&p, Base::E)).abs() < 1e-15);
    }

    #[test]
    fn cross_entropy_outside_support_is_infinite() {
        let p = dd(&[0.5, 0.5]);
        let q = dd(&[1.0, 0.0]);
        assert_eq!(cross_entropy(&p, &q, Base::E).unwrap(), f64::INFINITY);
        assert!(cross_entropy(&q, &p, Base::E).unwrap().is_finite());
    }

    #[test]
    fn kl_is_cross_entropy_minus_entropy() {
        let mut rng = seeded(11);
        for _ in 0..50 {
            let p = random_dist(&mut rng, 6);
            let q = random_dist(&mut rng, 6);
            let d = kl(&p, &q, Base::E).unwrap();
            assert!(d >= 0.0);
            assert!((d - (cross_entropy(&p, &q, Base::E).unwrap() - entropy(&p, Base::E))).abs() < 1e-12);
        }
    }

    #[test]
    fn free_energy_decomposes() {
        let mut rng = seeded(12);
        let model = random_model(&mut rng, 3, 5);
        let data = random_dist(&mut rng, 5);
        let exact = model.exact_recognition();
        let mce = marginal_cross_entropy(&model, &data).unwrap();
        assert!((free_energy(&model, &exact, &data).unwrap() - mce).abs() < 1e-10);
        let mut proxy = DMatrix::zeros(5, 3);
        for v in 0..5 {
            let row = random_dist(&mut rng, 3);
            for k in 0..3 {
                proxy[(v, k)] = row[k];
            }
        }
        let f = free_energy(&model, &proxy, &data).unwrap();
        let rkl = recognition_kl(&model, &proxy, &data).unwrap();
        assert!((f - mce - rkl).abs() < 1e-10);
    }

    #[test]
    fn single_class_free_energy_is_emission_cross_entropy() {
        let mut rng = seeded(13);
        let model = random_model(&mut rng, 1, 4);
        let data = random_dist(&mut rng, 4);
        let row = dd(&model.emission().row(0).iter().copied().collect::<Vec<_>>());
        let ce = cross_entropy(&data, &row, Base::E).unwrap();
        let proxy = DMatrix::from_element(4, 1, 1.0);
        assert!((free_energy(&model, &proxy, &data).unwrap() - ce).abs() < 1e-12);
        let r = bits_back_costs(&model, &data, &Proxy::Exact).unwrap();
        for c in [
            r.marginal_cross_entropy,
            r.hard_assignment_cost,
            r.stochastic_cost_before_refund,
        ] {
            assert!((c - ce).abs() < 1e-12);
        }
        assert_eq!(r.refund, 0.0);
    }

    #[test]
    fn bits_back_identities() {
        let mut rng = seeded(14);
        let model = random_model(&mut rng, 3, 6);
        let data = random_dist(&mut rng, 6);
        let r = bits_back_costs(&model, &data, &Proxy::Exact).unwrap();
        assert!(r.proxy_kl.abs() < 1e-12);
        assert!((r.net_stochastic_cost() - r.marginal_cross_entropy).abs() < 1e-10);
        let h = bits_back_costs(&model, &data, &Proxy::Hard).unwrap();
        assert_eq!(h.refund, 0.0);
        assert!((h.hard_assignment_cost - h.stochastic_cost_before_refund).abs() < 1e-12);
        assert!((h.hard_assignment_cost - h.marginal_cross_entropy - h.proxy_kl).abs() < 1e-10);
    }

    #[test]
    fn disjoint_emissions_need_no_refund() {
        let e = DMatrix::from_row_slice(2, 4, &[0.5, 0.5, 0.0, 0.0, 0.0, 0.0, 0.3, 0.7]);
        let model = DiscreteLatentModel::new(dd(&[0.4, 0.6]), e).unwrap();
        let data = dd(&[0.1, 0.2, 0.3, 0.4]);
        let r = bits_back_costs(&model, &data, &Proxy::Exact).unwrap();
        assert!((r.hard_assignment_cost - r.marginal_cross_entropy).abs() < 1e-12);
        assert_eq!(r.refund, 0.0);
    }
}
