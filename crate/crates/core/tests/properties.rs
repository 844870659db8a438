//! Randomized invariants. Each property draws a seed and small shapes, builds
//! an instance from the seed and checks an identity that must hold exactly
//! (up to rounding) for every instance.

mod common;

use common::oracle;
use lvm_core::data::{Dataset, SequenceDataset};
use lvm_core::em::{run_em, EmConfig, EmModel};
use lvm_core::fa::{fa_log_marginal, fa_recognize, FaParams};
use lvm_core::gaussian::{bayes_invert, cross_covariance, marginal_cumulants, woodbury_inverse, InversionForm};
use lvm_core::glm::{irls_fit, ols_fit, ridge_fit, GlimFamily, IrlsConfig, Regularizer};
use lvm_core::gmm::{CovarianceMode, GmmModel};
use lvm_core::hmm::{hmm_smoother, HmmModel, HmmParams};
use lvm_core::ica::{ica_loss, IcaModel, Nonlinearity};
use lvm_core::info::{
    bits_back_costs, cross_entropy, entropy, free_energy, marginal_cross_entropy, recognition_kl, Base,
    DiscreteLatentModel, Proxy,
};
use lvm_core::linalg::softmax;
use lvm_core::particle::{particle_filter, DiscreteChain, ParticleConfig, Resampling};
use lvm_core::rbm::{contrastive_divergence, visible_gibbs_kernel, visible_log_marginals, RbmParams};
use lvm_core::rng::{seeded, standard_normal_vector};
use lvm_core::sparse::{bpdn_solve, BpdnConfig};
use lvm_core::ssm::{ssm_smoother, SsmParams};
use lvm_core::{AffineGaussianChannel, DiscreteDistribution, GaussianBelief};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use proptest::prelude::*;
use rand::Rng;
use rand_distr::{Exp1, StandardNormal};

fn normal<R: Rng>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

fn gaussian_matrix<R: Rng>(r: usize, c: usize, rng: &mut R) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| normal(rng))
}

fn spd<R: Rng>(n: usize, ridge: f64, rng: &mut R) -> DMatrix<f64> {
    let a = DMatrix::from_fn(n, n, |_, _| rng.random::<f64>() - 0.5);
    &a * a.transpose() + DMatrix::identity(n, n) * ridge
}

fn simplex<R: Rng>(n: usize, rng: &mut R) -> Vec<f64> {
    let w: Vec<f64> = (0..n).map(|_| rng.random::<f64>() + 0.02).collect();
    let s: f64 = w.iter().sum();
    w.iter().map(|v| v / s).collect()
}

fn random_hmm<R: Rng>(k: usize, d: usize, rng: &mut R) -> HmmParams {
    let mut trans = DMatrix::from_fn(k, k, |_, _| rng.random::<f64>() + 0.05);
    for mut c in trans.column_iter_mut() {
        let s = c.sum();
        c /= s;
    }
    HmmParams::new(
        DiscreteDistribution::new(simplex(k, rng)).unwrap(),
        trans,
        (0..k).map(|_| standard_normal_vector(rng, d) * 1.5).collect(),
        (0..k).map(|_| spd(d, 0.5, rng)).collect(),
    )
    .unwrap()
}

fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new((m + m.transpose()) * 0.5).eigenvalues.min()
}

fn config(cases: u32) -> ProptestConfig {
    ProptestConfig {
        cases,
        ..ProptestConfig::default()
    }
}

proptest! {
    #![proptest_config(config(64))]

    #[test]
    fn gibbs_inequality(p in prop::collection::vec(0.0f64..1.0, 2..8), seed in any::<u64>()) {
        prop_assume!(p.iter().sum::<f64>() > 1e-3);
        let mut rng = seeded(seed);
        let p = DiscreteDistribution::from_weights(&p).unwrap();
        let q = DiscreteDistribution::new(simplex(p.len(), &mut rng)).unwrap();
        let h = entropy(&p, Base::E);
        prop_assert!(cross_entropy(&p, &q, Base::E).unwrap() >= h - 1e-12);
        prop_assert!((cross_entropy(&p, &p, Base::E).unwrap() - h).abs() <= 1e-12);
    }

    #[test]
    fn free_energy_is_cross_entropy_plus_recognition_kl(seed in any::<u64>(), k in 1usize..6, v in 2usize..9) {
        let mut rng = seeded(seed);
        let emission = {
            let mut e = DMatrix::from_fn(k, v, |_, _| rng.random::<f64>() + 0.01);
            for mut r in e.row_iter_mut() {
                let s = r.sum();
                r /= s;
            }
            e
        };
        let model = DiscreteLatentModel::new(DiscreteDistribution::new(simplex(k, &mut rng)).unwrap(), emission).unwrap();
        let data = DiscreteDistribution::new(simplex(v, &mut rng)).unwrap();
        let mut proxy = DMatrix::from_fn(v, k, |_, _| rng.random::<f64>() + 0.01);
        for mut r in proxy.row_iter_mut() {
            let s = r.sum();
            r /= s;
        }
        let f = free_energy(&model, &proxy, &data).unwrap();
        let h = marginal_cross_entropy(&model, &data).unwrap();
        let gap = recognition_kl(&model, &proxy, &data).unwrap();
        prop_assert!((f - h - gap).abs() <= 1e-10);
        prop_assert!(gap >= 0.0);
        let report = bits_back_costs(&model, &data, &Proxy::Custom(proxy)).unwrap();
        prop_assert!(
            (report.stochastic_cost_before_refund - report.refund - report.proxy_kl - report.marginal_cross_entropy).abs()
                <= 1e-10
        );
    }

    #[test]
    fn woodbury_inverts_the_update(seed in any::<u64>(), n in 1usize..7, k in 1usize..4) {
        let mut rng = seeded(seed);
        let a = spd(n, 1.0, &mut rng);
        let u = gaussian_matrix(n, k, &mut rng) * 0.5;
        let c = spd(k, 0.5, &mut rng);
        let v = gaussian_matrix(k, n, &mut rng) * 0.3;
        let inv = woodbury_inverse(&a, &u, &c, &v).unwrap();
        let prod = inv * (&a + &u * &c * &v);
        prop_assert!((prod - DMatrix::identity(n, n)).amax() <= 1e-9);
    }

    #[test]
    fn conditioning_forms_agree_with_the_joint(seed in any::<u64>(), k in 1usize..4, m in 1usize..4) {
        let mut rng = seeded(seed);
        let source = GaussianBelief::new(standard_normal_vector(&mut rng, k), spd(k, 0.3, &mut rng)).unwrap();
        let channel = AffineGaussianChannel::new(
            gaussian_matrix(m, k, &mut rng),
            standard_normal_vector(&mut rng, m),
            spd(m, 0.3, &mut rng),
        )
        .unwrap();
        let obs = standard_normal_vector(&mut rng, m);
        let direct = bayes_invert(&source, &channel, &obs, InversionForm::Direct).unwrap();
        let wood = bayes_invert(&source, &channel, &obs, InversionForm::Woodbury).unwrap();
        prop_assert!((direct.mean() - wood.mean()).amax() <= 1e-10);
        prop_assert!((direct.cov() - wood.cov()).amax() <= 1e-10);
        prop_assert!(min_eigenvalue(direct.cov()) > 0.0);

        let marg = marginal_cumulants(&source, &channel).unwrap();
        let cross = cross_covariance(&source, &channel).unwrap();
        let mut mean = DVector::zeros(k + m);
        mean.rows_mut(0, k).copy_from(source.mean());
        mean.rows_mut(k, m).copy_from(marg.mean());
        let mut cov = DMatrix::zeros(k + m, k + m);
        cov.view_mut((0, 0), (k, k)).copy_from(source.cov());
        cov.view_mut((0, k), (k, m)).copy_from(&cross);
        cov.view_mut((k, 0), (m, k)).copy_from(&cross.transpose());
        cov.view_mut((k, k), (m, m)).copy_from(marg.cov());
        let (cm, cc) = oracle::condition_joint(&mean, &cov, k, &obs);
        prop_assert!((direct.mean() - cm).amax() <= 1e-9);
        prop_assert!((direct.cov() - cc).amax() <= 1e-9);
    }

    #[test]
    fn softmax_ignores_a_common_shift(scores in prop::collection::vec(-30.0f64..30.0, 1..8), shift in -1e3f64..1e3) {
        let a = softmax(&scores);
        let shifted: Vec<f64> = scores.iter().map(|s| s + shift).collect();
        let b = softmax(&shifted);
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn factor_rotations_leave_the_marginal_alone(seed in any::<u64>(), k in 1usize..4, extra in 0usize..4) {
        let mut rng = seeded(seed);
        let d = k + extra;
        let c = gaussian_matrix(d, k, &mut rng);
        let offset = standard_normal_vector(&mut rng, d);
        let noise = DVector::from_fn(d, |_, _| rng.random_range(0.2..1.5));
        let q = gaussian_matrix(k, k, &mut rng).qr().q();
        let p = FaParams::new(c.clone(), offset.clone(), noise.clone()).unwrap();
        let rotated = FaParams::new(&c * q, offset, noise.clone()).unwrap();
        let x = standard_normal_vector(&mut rng, d) * 2.0;
        prop_assert!((fa_log_marginal(&p, &x).unwrap() - fa_log_marginal(&rotated, &x).unwrap()).abs() <= 1e-10);

        let rec = fa_recognize(&p, &x).unwrap();
        let channel = AffineGaussianChannel::new(c, p.offset.clone(), DMatrix::from_diagonal(&noise)).unwrap();
        let want = bayes_invert(&GaussianBelief::standard(k), &channel, &x, InversionForm::Direct).unwrap();
        prop_assert!((rec.mean() - want.mean()).amax() <= 1e-10);
        prop_assert!((rec.cov() - want.cov()).amax() <= 1e-10);
    }

    #[test]
    fn ols_residuals_are_orthogonal_and_ridge_shrinks(seed in any::<u64>(), d in 1usize..4, k in 1usize..3) {
        let mut rng = seeded(seed);
        let n = 40;
        let x = gaussian_matrix(n, d, &mut rng).add_scalar(0.5);
        let z = &x * gaussian_matrix(d, k, &mut rng) + gaussian_matrix(n, k, &mut rng) * 0.3;
        let (xs, zs) = (Dataset::new(x.clone()).unwrap(), Dataset::new(z.clone()).unwrap());
        let fit = ols_fit(&xs, &zs).unwrap();
        let pred = fit.predict(&x).unwrap();
        let resid = &z - pred;
        let xc = DMatrix::from_fn(n, d, |i, j| x[(i, j)] - xs.mean()[j]);
        prop_assert!((resid.transpose() * xc / n as f64).amax() <= 1e-9);
        let mut last = f64::INFINITY;
        for lambda in [0.0, 0.1, 1.0, 10.0, 100.0] {
            let norm = ridge_fit(&xs, &zs, &Regularizer::Scalar(lambda)).unwrap().weights.norm();
            prop_assert!(norm <= last + 1e-12);
            last = norm;
        }
    }

    #[test]
    fn ica_loss_is_the_change_of_variables_density(seed in any::<u64>(), k in 1usize..4) {
        let mut rng = seeded(seed);
        let w = DMatrix::identity(k, k) + gaussian_matrix(k, k, &mut rng) * 0.3;
        prop_assume!(w.determinant().abs() > 1e-3);
        let batch = Dataset::new(DMatrix::from_fn(30, k, |_, _| rng.sample::<f64, _>(Exp1) - 1.0)).unwrap();
        let loss = ica_loss(&IcaModel::new(w.clone(), Nonlinearity::Logistic).unwrap(), &batch).unwrap();
        let log_det = w.determinant().abs().ln();
        let mut total = 0.0;
        for x in batch.rows() {
            let s = &w * x;
            // logistic density sigma(s) (1 - sigma(s))
            let log_dens: f64 = s.iter().map(|v| -v.abs() - 2.0 * (-v.abs()).exp().ln_1p()).sum();
            total += log_dens + log_det;
        }
        prop_assert!((loss + total / 30.0).abs() <= 1e-10);
    }
}

proptest! {
    #![proptest_config(config(24))]

    #[test]
    fn irls_never_raises_the_objective(seed in any::<u64>()) {
        let mut rng = seeded(seed);
        let w = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), 0.3];
        let x = DMatrix::from_fn(60, 3, |_, j| if j == 2 { 1.0 } else { normal(&mut rng) });
        let y = DMatrix::from_fn(60, 1, |i, _| {
            let rate = (0..3).map(|j| x[(i, j)] * w[j]).sum::<f64>().exp();
            rng.sample(rand_distr::Poisson::new(rate).unwrap())
        });
        let (_, traces) = irls_fit(
            &Dataset::new(x).unwrap(),
            &Dataset::new(y).unwrap(),
            &GlimFamily::PoissonLog,
            &IrlsConfig::default(),
        )
        .unwrap();
        for pair in traces[0].objective.windows(2) {
            prop_assert!(pair[1] <= pair[0] + 1e-10);
        }
    }

    #[test]
    fn glim_variance_is_the_mean_derivative(eta in -0.9f64..2.0) {
        for f in [
            GlimFamily::Gaussian,
            GlimFamily::BernoulliLogit,
            GlimFamily::PoissonLog,
            GlimFamily::GammaShapeLog { scale: 1.3 },
        ] {
            let h = 1e-5;
            let fd = (f.mean_fn(eta + h) - f.mean_fn(eta - h)) / (2.0 * h);
            prop_assert!((fd - f.variance_fn(eta)).abs() <= 1e-6, "{}", f.name());
        }
    }

    #[test]
    fn hmm_posteriors_are_normalized_and_consistent(seed in any::<u64>(), k in 1usize..5, t_len in 1usize..12) {
        let mut rng = seeded(seed);
        let p = random_hmm(k, 2, &mut rng);
        let (_, seq) = p.sample(t_len, &mut rng);
        let post = hmm_smoother(&p, &seq).unwrap();
        for t in 0..t_len {
            prop_assert!((post.filter.row(t).sum() - 1.0).abs() <= 1e-10);
            prop_assert!((post.smoother.row(t).sum() - 1.0).abs() <= 1e-10);
        }
        for (t, pw) in post.pairwise.iter().enumerate() {
            prop_assert!((pw.sum() - 1.0).abs() <= 1e-10);
            for j in 0..k {
                prop_assert!((pw.column(j).sum() - post.smoother[(t, j)]).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn em_steps_keep_transitions_stochastic_and_never_raise_free_energy(seed in any::<u64>(), k in 2usize..4) {
        let mut rng = seeded(seed);
        let truth = random_hmm(k, 1, &mut rng);
        let seqs = (0..2).map(|_| truth.sample(15, &mut rng).1).collect();
        let data = SequenceDataset::new(seqs).unwrap();
        let model = HmmModel::new(&data, k).unwrap();
        let fit = run_em(&model, &EmConfig { max_iter: 15, seed, ..EmConfig::default() }).unwrap();
        prop_assert!(fit.max_increase() <= 1e-9);
        for c in fit.params.trans.column_iter() {
            prop_assert!((c.sum() - 1.0).abs() <= 1e-12);
        }

        let rows: Vec<DVector<f64>> = (0..80).map(|_| standard_normal_vector(&mut rng, 2) * 2.0).collect();
        let flat = Dataset::from_rows(&rows).unwrap();
        let gmm = GmmModel::new(&flat, k, CovarianceMode::Full).unwrap();
        let params = gmm.init_params(&mut rng).unwrap();
        let post = gmm.e_step(&params).unwrap();
        let before = gmm.free_energy(&params, &post).unwrap();
        let next = gmm.m_step(&post, &params).unwrap();
        prop_assert!(gmm.free_energy(&next, &post).unwrap() <= before + 1e-9);
    }

    #[test]
    fn smoothing_never_widens_the_filter(seed in any::<u64>(), k in 1usize..4, d in 1usize..4, t_len in 1usize..8) {
        let mut rng = seeded(seed);
        let trans = AffineGaussianChannel::new(
            gaussian_matrix(k, k, &mut rng) * (0.5 / k as f64),
            standard_normal_vector(&mut rng, k) * 0.3,
            spd(k, 0.2, &mut rng),
        )
        .unwrap();
        let emission = AffineGaussianChannel::new(
            gaussian_matrix(d, k, &mut rng),
            standard_normal_vector(&mut rng, d),
            spd(d, 0.3, &mut rng),
        )
        .unwrap();
        let init = GaussianBelief::new(standard_normal_vector(&mut rng, k), spd(k, 0.5, &mut rng)).unwrap();
        let p = SsmParams::new(trans, DMatrix::zeros(k, 0), emission, init).unwrap();
        let (_, obs) = p.sample(t_len, None, &mut rng).unwrap();
        let post = ssm_smoother(&p, &obs, None).unwrap();
        for (f, s) in post.filtered.iter().zip(&post.smoothed) {
            prop_assert!(min_eigenvalue(&(f.cov() - s.cov())) >= -1e-10);
        }
        prop_assert_eq!(&post.smoothed[t_len - 1], &post.filtered[t_len - 1]);
    }

    #[test]
    fn particle_weights_stay_on_the_simplex(seed in any::<u64>(), n in 1usize..200) {
        let mut rng = seeded(seed);
        let p = random_hmm(3, 1, &mut rng);
        let (_, seq) = p.sample(6, &mut rng);
        let obs: Vec<DVector<f64>> = (0..6).map(|t| seq.row(t).transpose()).collect();
        let refs: Vec<&DVector<f64>> = obs.iter().collect();
        let chain = DiscreteChain::new(&p).unwrap();
        let cfg = ParticleConfig { particles: n, resampling: Resampling::Multinomial };
        for c in particle_filter(&chain, &refs, &cfg, &mut rng).unwrap() {
            let w = c.filter_weights.probs();
            prop_assert!(w.iter().all(|v| *v >= 0.0 && v.is_finite()));
            prop_assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn contrastive_divergence_is_nonnegative(seed in any::<u64>(), nv in 1usize..5, nh in 1usize..4) {
        let mut rng = seeded(seed);
        let p = RbmParams::random(nv, nh, 1.0, &mut rng);
        let data = simplex(1 << nv, &mut rng);
        let kernel = visible_gibbs_kernel(&p).unwrap();
        let p0 = &kernel * DVector::from_row_slice(&data);
        for n in [1, 2, 5] {
            prop_assert!(contrastive_divergence(&p, &data, n).unwrap() >= -1e-12);
            prop_assert!(contrastive_divergence(&p, p0.as_slice(), n).unwrap() >= -1e-12);
        }
        let model: Vec<f64> = visible_log_marginals(&p).unwrap().iter().map(|l| l.exp()).collect();
        prop_assert!(contrastive_divergence(&p, &model, 1).unwrap().abs() <= 1e-12);
        let moved = &kernel * DVector::from_row_slice(&model);
        prop_assert!((moved - DVector::from_row_slice(&model)).amax() <= 1e-10);
    }

    #[test]
    fn larger_penalties_shrink_the_code(seed in any::<u64>()) {
        let mut rng = seeded(seed);
        let dict = gaussian_matrix(4, 6, &mut rng);
        let x = standard_normal_vector(&mut rng, 4) * 2.0;
        let base = DVector::from_fn(6, |_, _| rng.random_range(0.2..1.0));
        let ortho = gaussian_matrix(4, 4, &mut rng).qr().q();
        let (mut last_l1, mut last_nnz) = (f64::INFINITY, usize::MAX);
        for scale in [0.25, 0.5, 1.0, 2.0, 4.0] {
            let z = bpdn_solve(&dict, &x, 2.0, &(&base * scale), &BpdnConfig::default()).unwrap();
            let l1: f64 = z.iter().zip(base.iter()).map(|(z, b)| b * z.abs()).sum();
            prop_assert!(l1 <= last_l1 + 1e-9, "{l1} after {last_l1}");
            last_l1 = l1;
            let alpha = base.rows(0, 4) * scale;
            let z = bpdn_solve(&ortho, &x, 2.0, &alpha, &BpdnConfig::default()).unwrap();
            let nnz = z.iter().filter(|v| **v != 0.0).count();
            prop_assert!(nnz <= last_nnz, "{nnz} nonzeros after {last_nnz}");
            last_nnz = nnz;
        }
    }
}
