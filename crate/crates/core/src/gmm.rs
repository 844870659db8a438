//! Gaussian mixture model.

use crate::data::Dataset;
use crate::dist::DiscreteDistribution;
use crate::em::EmModel;
use crate::linalg::{self, MvnFactor, LN_2PI};
use crate::prelude::*;
use rand::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct GmmParams {
    pub weights: DiscreteDistribution,
    pub means: Vec<DVector<f64>>,
    pub covs: Vec<DMatrix<f64>>,
}

impl GmmParams {
    pub fn new(weights: DiscreteDistribution, means: Vec<DVector<f64>>, covs: Vec<DMatrix<f64>>) -> Result<Self> {
        let k = weights.len();
        if means.len() != k || covs.len() != k {
            return Err(dim_err!(
                "{k} weights, {} means, {} covariances",
                means.len(),
                covs.len()
            ));
        }
        let d = means[0].len();
        for (i, (m, c)) in means.iter().zip(&covs).enumerate() {
            if m.len() != d || c.nrows() != d || c.ncols() != d {
                return Err(dim_err!("component {i} does not have dimension {d}"));
            }
        }
        let covs = covs.iter().map(linalg::symmetrize).collect();
        Ok(Self { weights, means, covs })
    }

    pub fn components(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (usize, DVector<f64>) {
        let k = crate::info::sample_index(self.weights.probs(), rng);
        let x = crate::gaussian::GaussianBelief::from_parts(self.means[k].clone(), self.covs[k].clone()).sample(rng);
        (k, x)
    }
}

/// Per-component factorizations, built once per parameter set.
#[derive(Debug, Clone)]
pub struct GmmScorer {
    log_weights: Vec<f64>,
    factors: Vec<MvnFactor>,
}

impl GmmScorer {
    pub fn new(params: &GmmParams) -> Result<Self> {
        let mut factors = Vec::with_capacity(params.components());
        for (k, (m, c)) in params.means.iter().zip(&params.covs).enumerate() {
            let f = MvnFactor::new(m, c, "component covariance").map_err(|e| match e {
                Error::Singularity(_) => {
                    singular!("covariance of component {k} is not positive definite")
                }
                other => other,
            })?;
            factors.push(f);
        }
        Ok(Self {
            log_weights: params.weights.probs().iter().map(|w| w.ln()).collect(),
            factors,
        })
    }

    /// `a_k = -1/2 log|S_k| - 1/2 (x - m_k)' S_k^-1 (x - m_k) + log pi_k`.
    pub fn scores(&self, x: &DVector<f64>) -> Vec<f64> {
        self.factors
            .iter()
            .zip(&self.log_weights)
            .map(|(f, lw)| -0.5 * (f.log_det() + f.mahalanobis(x)) + lw)
            .collect()
    }

    pub fn recognize(&self, x: &DVector<f64>) -> DiscreteDistribution {
        DiscreteDistribution::from_log_weights(&self.scores(x)).expect("some component has positive weight")
    }

    pub fn log_marginal(&self, x: &DVector<f64>) -> f64 {
        linalg::log_sum_exp(&self.scores(x)) - 0.5 * x.len() as f64 * LN_2PI
    }

    fn check(&self, x: &DVector<f64>) -> Result<()> {
        let d = self.factors[0].dim();
        if x.len() != d {
            return Err(dim_err!("point has dimension {}, mixture has {d}", x.len()));
        }
        Ok(())
    }
}

pub fn gmm_recognize(params: &GmmParams, x: &DVector<f64>) -> Result<DiscreteDistribution> {
    let s = GmmScorer::new(params)?;
    s.check(x)?;
    Ok(s.recognize(x))
}

pub fn gmm_log_marginal(params: &GmmParams, x: &DVector<f64>) -> Result<f64> {
    let s = GmmScorer::new(params)?;
    s.check(x)?;
    Ok(s.log_marginal(x))
}

/// Recognition rows, one per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Responsibilities {
    pub table: DMatrix<f64>,
}

impl Responsibilities {
    pub fn column_sums(&self) -> DVector<f64> {
        self.table.row_sum().transpose()
    }
}

pub fn gmm_e_step(params: &GmmParams, data: &Dataset) -> Result<Responsibilities> {
    data.check_dim(params.dim())?;
    let s = GmmScorer::new(params)?;
    let mut table = DMatrix::zeros(data.n(), params.components());
    for (n, x) in data.rows().enumerate() {
        let r = s.recognize(&x);
        for k in 0..params.components() {
            table[(n, k)] = r[k];
        }
    }
    Ok(Responsibilities { table })
}

/// Column sums below this count as an empty component.
pub const EMPTY_MASS: f64 = 1e-12;

/// Eigenvalue floor `1e-6 * trace(S) / D` with `S` the covariance of all the data.
pub fn covariance_floor(data: &Dataset) -> f64 {
    let s = data.covariance();
    let f = 1e-6 * s.trace() / data.dim() as f64;
    if f > 0.0 {
        f
    } else {
        1e-12
    }
}

fn weighted_stats(data: &Dataset, resp: &Responsibilities, k: usize) -> Result<(f64, DVector<f64>, DMatrix<f64>)> {
    let mass: f64 = resp.table.column(k).sum();
    if mass < EMPTY_MASS {
        return Err(Error::EmptyComponent(k));
    }
    let x = data.matrix();
    let r = resp.table.column(k);
    let mean = x.transpose() * r / mass;
    let centered = linalg::center_rows(x, &mean);
    let mut weighted = centered.clone();
    for (n, mut row) in weighted.row_iter_mut().enumerate() {
        row *= r[n];
    }
    let cov = linalg::symmetrize(&(centered.transpose() * weighted / mass));
    Ok((mass, mean, cov))
}

/// Closed-form M-step with full covariances floored at [`covariance_floor`].
pub fn gmm_m_step(data: &Dataset, resp: &Responsibilities) -> Result<GmmParams> {
    m_step_with(data, resp, CovarianceMode::Full, covariance_floor(data))
}

fn m_step_with(data: &Dataset, resp: &Responsibilities, mode: CovarianceMode, floor: f64) -> Result<GmmParams> {
    if resp.table.nrows() != data.n() {
        return Err(dim_err!(
            "{} responsibility rows for {} samples",
            resp.table.nrows(),
            data.n()
        ));
    }
    let k = resp.table.ncols();
    let mut weights = Vec::with_capacity(k);
    let mut means = Vec::with_capacity(k);
    let mut covs = Vec::with_capacity(k);
    let d = data.dim();
    for c in 0..k {
        let (mass, mean, cov) = weighted_stats(data, resp, c)?;
        weights.push(mass / data.n() as f64);
        means.push(mean);
        covs.push(match mode {
            CovarianceMode::Full => linalg::floor_eigenvalues(&cov, floor),
            CovarianceMode::FixedIsotropic(eps) => DMatrix::identity(d, d) * eps,
        });
    }
    GmmParams::new(DiscreteDistribution::from_weights(&weights)?, means, covs)
}

/// `(x - (m_i + m_j)/2)' S^-1 (m_i - m_j) - log(pi_j / pi_i)`: zero on the
/// boundary where classes `i` and `j` are equally probable, positive on the
/// side of `i`.
pub fn gmm_equiprob_score(params: &GmmParams, x: &DVector<f64>, i: usize, j: usize) -> Result<f64> {
    let k = params.components();
    if i >= k || j >= k {
        return Err(dim_err!("class index out of range for {k} components"));
    }
    let shared = &params.covs[0];
    let scale = shared.amax().max(f64::MIN_POSITIVE);
    if params.covs.iter().any(|c| (c - shared).amax() > 1e-12 * scale) {
        return Err(Error::Precondition(
            "equiprobability score needs a shared covariance".into(),
        ));
    }
    let diff = &params.means[i] - &params.means[j];
    let mid = (&params.means[i] + &params.means[j]) * 0.5;
    let dir = linalg::spd_solve(
        shared,
        &DMatrix::from_column_slice(diff.len(), 1, diff.as_slice()),
        "shared covariance",
    )?;
    let lin = ((x - mid).transpose() * dir)[(0, 0)];
    Ok(lin - (params.weights[j] / params.weights[i]).ln())
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum CovarianceMode {
    #[default]
    Full,
    /// Every covariance held at `eps * I`; only weights and means are learned.
    FixedIsotropic(f64),
}

/// EM handle for a mixture of `k` Gaussians.
#[derive(Debug, Clone)]
pub struct GmmModel<'a> {
    data: &'a Dataset,
    k: usize,
    mode: CovarianceMode,
    floor: f64,
}

impl<'a> GmmModel<'a> {
    pub fn new(data: &'a Dataset, k: usize, mode: CovarianceMode) -> Result<Self> {
        if k == 0 || k > data.n() {
            return Err(Error::Precondition(alloc::format!(
                "cannot fit {k} components to {} samples",
                data.n()
            )));
        }
        if let CovarianceMode::FixedIsotropic(eps) = mode {
            if !(eps > 0.0) {
                return Err(Error::Precondition("isotropic variance must be positive".into()));
            }
        }
        Ok(Self {
            data,
            k,
            mode,
            floor: covariance_floor(data),
        })
    }

    /// Uniform weights, given means, and the covariance the mode prescribes.
    pub fn params_from_means(&self, means: Vec<DVector<f64>>) -> Result<GmmParams> {
        let d = self.data.dim();
        let cov = match self.mode {
            CovarianceMode::Full => linalg::floor_eigenvalues(&self.data.covariance(), self.floor),
            CovarianceMode::FixedIsotropic(eps) => DMatrix::identity(d, d) * eps,
        };
        GmmParams::new(DiscreteDistribution::uniform(means.len()), means, vec![cov; self.k])
    }

    /// Sample with the lowest marginal likelihood under `params`.
    fn worst_explained(&self, params: &GmmParams) -> Result<usize> {
        let s = GmmScorer::new(params)?;
        let mut worst = (0, f64::INFINITY);
        for (n, x) in self.data.rows().enumerate() {
            let l = s.log_marginal(&x);
            if l < worst.1 {
                worst = (n, l);
            }
        }
        Ok(worst.0)
    }
}

impl EmModel for GmmModel<'_> {
    type Params = GmmParams;
    type Posterior = Responsibilities;

    fn init_params<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<GmmParams> {
        let picks = rand::seq::index::sample(rng, self.data.n(), self.k);
        self.params_from_means(picks.iter().map(|i| self.data.row(i)).collect())
    }

    fn e_step(&self, params: &GmmParams) -> Result<Responsibilities> {
        gmm_e_step(params, self.data)
    }

    fn m_step(&self, post: &Responsibilities, prev: &GmmParams) -> Result<GmmParams> {
        let mut resp = post.clone();
        let mut reseeded = Vec::new();
        loop {
            match m_step_with(self.data, &resp, self.mode, self.floor) {
                Err(Error::EmptyComponent(k)) if !reseeded.contains(&k) => {
                    // move the empty component onto the worst-explained sample
                    let n = self.worst_explained(prev)?;
                    log::warn!("gmm: component {k} is empty, reseeding at sample {n}");
                    for c in 0..self.k {
                        resp.table[(n, c)] = if c == k { 1.0 } else { 0.0 };
                    }
                    reseeded.push(k);
                }
                other => return other,
            }
        }
    }

    fn free_energy(&self, params: &GmmParams, post: &Responsibilities) -> Result<f64> {
        let s = GmmScorer::new(params)?;
        let d = self.data.dim() as f64;
        let mut total = 0.0;
        for (n, x) in self.data.rows().enumerate() {
            let scores = s.scores(&x);
            for (k, a) in scores.iter().enumerate() {
                let r = post.table[(n, k)];
                if r > 0.0 {
                    total += r * (r.ln() - a + 0.5 * d * LN_2PI);
                }
            }
        }
        Ok(total / self.data.n() as f64)
    }

    fn log_likelihood(&self, params: &GmmParams) -> Result<f64> {
        let s = GmmScorer::new(params)?;
        Ok(self.data.rows().map(|x| s.log_marginal(&x)).sum::<f64>() / self.data.n() as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::em::{run_em, EmConfig};
    use crate::oracle;
    use crate::rng::seeded;

    fn random_params<R: Rng>(rng: &mut R, k: usize, d: usize) -> GmmParams {
        let w: Vec<f64> = (0..k).map(|_| rng.random::<f64>() + 0.1).collect();
        let means = (0..k)
            .map(|_| DVector::from_fn(d, |_, _| rng.random_range(-3.0..3.0)))
            .collect();
        let covs = (0..k)
            .map(|_| {
                let a = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
                &a * a.transpose() + DMatrix::identity(d, d) * 0.3
            })
            .collect();
        GmmParams::new(DiscreteDistribution::from_weights(&w).unwrap(), means, covs).unwrap()
    }

    fn direct_bayes(params: &GmmParams, x: &DVector<f64>) -> std::vec::Vec<f64> {
        let joint: std::vec::Vec<f64> = (0..params.components())
            .map(|k| params.weights[k] * oracle::gauss_logpdf(x, &params.means[k], &params.covs[k]).exp())
            .collect();
        let z: f64 = joint.iter().sum();
        joint.iter().map(|j| j / z).collect()
    }

    #[test]
    fn single_component_is_certain() {
        let mut rng = seeded(20);
        let p = random_params(&mut rng, 1, 2);
        let x = DVector::from_vec(vec![10.0, -3.0]);
        assert_eq!(gmm_recognize(&p, &x).unwrap().probs(), &[1.0]);
        let exact = oracle::gauss_logpdf(&x, &p.means[0], &p.covs[0]);
        assert!((gmm_log_marginal(&p, &x).unwrap() - exact).abs() < 1e-10);
    }

    #[test]
    fn identical_components_split_evenly() {
        let mut rng = seeded(21);
        let mut p = random_params(&mut rng, 2, 2);
        p.means[1] = p.means[0].clone();
        p.covs[1] = p.covs[0].clone();
        p.weights = DiscreteDistribution::uniform(2);
        let r = gmm_recognize(&p, &DVector::from_vec(vec![0.3, 7.0])).unwrap();
        assert!((r[0] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn recognition_and_marginal_match_direct_bayes() {
        let mut rng = seeded(22);
        for _ in 0..20 {
            let p = random_params(&mut rng, 3, 2);
            let x = DVector::from_fn(2, |_, _| rng.random_range(-3.0..3.0));
            let r = gmm_recognize(&p, &x).unwrap();
            for (a, b) in r.probs().iter().zip(direct_bayes(&p, &x)) {
                assert!((a - b).abs() < 1e-12);
            }
            let naive: f64 = (0..3)
                .map(|k| p.weights[k] * oracle::gauss_logpdf(&x, &p.means[k], &p.covs[k]).exp())
                .sum();
            assert!((gmm_log_marginal(&p, &x).unwrap() - naive.ln()).abs() < 1e-10);
        }
    }

    #[test]
    fn far_points_stay_finite() {
        let mut rng = seeded(23);
        let p = random_params(&mut rng, 3, 2);
        let x = DVector::from_vec(vec![1e3, -1e3]);
        let l = gmm_log_marginal(&p, &x).unwrap();
        assert!(l.is_finite() && l < -1e3);
        let r = gmm_recognize(&p, &x).unwrap();
        assert!((r.probs().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn one_hot_m_step_is_supervised_estimate() {
        let mut rng = seeded(24);
        let data = Dataset::new(DMatrix::from_fn(40, 2, |_, _| rng.random_range(-1.0..1.0))).unwrap();
        let labels: std::vec::Vec<usize> = (0..40).map(|n| n % 3 % 2).collect();
        let table = DMatrix::from_fn(40, 2, |n, k| if labels[n] == k { 1.0 } else { 0.0 });
        let p = gmm_m_step(&data, &Responsibilities { table }).unwrap();
        for k in 0..2 {
            let rows: std::vec::Vec<DVector<f64>> = (0..40).filter(|n| labels[*n] == k).map(|n| data.row(n)).collect();
            let cnt = rows.len() as f64;
            let mean = rows.iter().fold(DVector::zeros(2), |a, r| a + r) / cnt;
            let cov = rows
                .iter()
                .fold(DMatrix::zeros(2, 2), |a, r| a + (r - &mean) * (r - &mean).transpose())
                / cnt;
            assert!((p.weights[k] - cnt / 40.0).abs() < 1e-14);
            assert!((&p.means[k] - mean).amax() < 1e-12);
            assert!((&p.covs[k] - cov).amax() < 1e-12);
        }
    }

    #[test]
    fn uniform_responsibilities_give_global_moments() {
        let mut rng = seeded(25);
        let data = Dataset::new(DMatrix::from_fn(30, 3, |_, _| rng.random_range(-1.0..1.0))).unwrap();
        let p = gmm_m_step(
            &data,
            &Responsibilities {
                table: DMatrix::from_element(30, 3, 1.0 / 3.0),
            },
        )
        .unwrap();
        for k in 0..3 {
            assert!((&p.means[k] - data.mean()).amax() < 1e-12);
            assert!((&p.covs[k] - data.covariance()).amax() < 1e-12);
        }
    }

    #[test]
    fn empty_component_is_reported() {
        let data = Dataset::new(DMatrix::from_row_slice(3, 1, &[0.0, 1.0, 2.0])).unwrap();
        let table = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 1.0, 0.0, 1.0, 0.0]);
        assert_eq!(
            gmm_m_step(&data, &Responsibilities { table }),
            Err(Error::EmptyComponent(1))
        );
    }

    #[test]
    fn equiprobability_score() {
        let p = GmmParams::new(
            DiscreteDistribution::uniform(2),
            vec![DVector::from_vec(vec![1.0, 2.0]), DVector::from_vec(vec![-1.0, 0.0])],
            vec![DMatrix::identity(2, 2); 2],
        )
        .unwrap();
        let mid = DVector::from_vec(vec![0.0, 1.0]);
        assert!(gmm_equiprob_score(&p, &mid, 0, 1).unwrap().abs() < 1e-15);
        let s = gmm_equiprob_score(&p, &p.means[0], 0, 1).unwrap();
        assert!((s - 0.5 * (&p.means[0] - &p.means[1]).norm_squared()).abs() < 1e-14);
        let mut rng = seeded(26);
        let mut shared = random_params(&mut rng, 3, 2);
        let c = shared.covs[0].clone();
        shared.covs = vec![c; 3];
        for _ in 0..200 {
            let x = DVector::from_fn(2, |_, _| rng.random_range(-4.0..4.0));
            let r = gmm_recognize(&shared, &x).unwrap();
            let s = gmm_equiprob_score(&shared, &x, 0, 2).unwrap();
            if s.abs() > 1e-12 {
                assert_eq!(s > 0.0, r[0] > r[2]);
            }
        }
        let unequal = random_params(&mut rng, 2, 2);
        assert!(matches!(
            gmm_equiprob_score(&unequal, &mid, 0, 1),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn em_recovers_separated_clusters() {
        let mut rng = seeded(27);
        let n = 400;
        let labels: std::vec::Vec<usize> = (0..n).map(|i| i % 2).collect();
        let x = DMatrix::from_fn(n, 1, |i, _| {
            let c = if labels[i] == 0 { -5.0 } else { 5.0 };
            c + crate::rng::standard_normal_vector(&mut rng, 1)[0]
        });
        let data = Dataset::new(x).unwrap();
        let model = GmmModel::new(&data, 2, CovarianceMode::Full).unwrap();
        let fit = run_em(
            &model,
            &EmConfig {
                seed: 3,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(fit.max_increase() <= 1e-9);
        for c in 0..2 {
            let idx: std::vec::Vec<usize> = (0..n).filter(|i| labels[*i] == c).collect();
            let sample_mean = idx.iter().map(|i| data.matrix()[(*i, 0)]).sum::<f64>() / idx.len() as f64;
            let nearest = fit
                .params
                .means
                .iter()
                .map(|m| (m[0] - sample_mean).abs())
                .fold(f64::INFINITY, f64::min);
            assert!(nearest < 0.2);
        }
    }
}
