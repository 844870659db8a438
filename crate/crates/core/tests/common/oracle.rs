//! Brute-force reference computations used by the test suites.
//!
//! Nothing in here touches the library: every routine works on plain
//! `nalgebra` matrices and slices so it can serve as an independent check.

#![allow(dead_code)]

extern crate std;

use nalgebra::{DMatrix, DVector};
use std::vec;
use std::vec::Vec;

pub fn dense_inverse(m: &DMatrix<f64>) -> DMatrix<f64> {
    m.clone().try_inverse().expect("oracle: singular matrix")
}

/// Conditions a joint Gaussian over `[latent; observed]` on the observed block.
pub fn condition_joint(
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    n_latent: usize,
    obs: &DVector<f64>,
) -> (DVector<f64>, DMatrix<f64>) {
    let n = mean.len();
    let m = n - n_latent;
    let mu_z = mean.rows(0, n_latent).into_owned();
    let mu_x = mean.rows(n_latent, m).into_owned();
    let szz = cov.view((0, 0), (n_latent, n_latent)).into_owned();
    let szx = cov.view((0, n_latent), (n_latent, m)).into_owned();
    let sxx = cov.view((n_latent, n_latent), (m, m)).into_owned();
    let sxx_inv = dense_inverse(&sxx);
    let post_mean = &mu_z + &szx * &sxx_inv * (obs - &mu_x);
    let post_cov = &szz - &szx * &sxx_inv * szx.transpose();
    (post_mean, post_cov)
}

/// Log density of a multivariate normal via LU determinant and dense inverse.
pub fn gauss_logpdf(x: &DVector<f64>, mean: &DVector<f64>, cov: &DMatrix<f64>) -> f64 {
    let d = x.len() as f64;
    let diff = x - mean;
    let quad = (diff.transpose() * dense_inverse(cov) * &diff)[(0, 0)];
    let det = cov.clone().lu().determinant();
    -0.5 * (d * (2.0 * std::f64::consts::PI).ln() + det.ln() + quad)
}

/// Sample mean and standard error of the mean.
pub fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Central finite-difference gradient.
pub fn fd_gradient(f: &dyn Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut g = Vec::with_capacity(x.len());
    let mut xp = x.to_vec();
    for i in 0..x.len() {
        let orig = xp[i];
        xp[i] = orig + h;
        let fp = f(&xp);
        xp[i] = orig - h;
        let fm = f(&xp);
        xp[i] = orig;
        g.push((fp - fm) / (2.0 * h));
    }
    g
}

/// Composite Simpson rule on `[a, b]` with `n` (even) panels.
pub fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let n = n + n % 2;
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(a + i as f64 * h);
    }
    s * h / 3.0
}

fn lse(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Exact HMM posterior by enumerating every state path.
///
/// `trans[i][j] = P(next = i | prev = j)`; `lik[t][k] = p(x_t | z_t = k)`.
/// Returns (log marginal, smoothed marginals, pairwise with
/// `pair[t][i][j] = P(z_{t+1} = i, z_t = j | x)`).
pub fn hmm_enumerate(init: &[f64], trans: &[Vec<f64>], lik: &[Vec<f64>]) -> (f64, Vec<Vec<f64>>, Vec<Vec<Vec<f64>>>) {
    let k = init.len();
    let t_len = lik.len();
    let total = k.pow(t_len as u32);
    let mut log_w = Vec::with_capacity(total);
    let mut paths = Vec::with_capacity(total);
    for code in 0..total {
        let mut path = Vec::with_capacity(t_len);
        let mut c = code;
        for _ in 0..t_len {
            path.push(c % k);
            c /= k;
        }
        let mut lw = init[path[0]].ln() + lik[0][path[0]].ln();
        for t in 1..t_len {
            lw += trans[path[t]][path[t - 1]].ln() + lik[t][path[t]].ln();
        }
        log_w.push(lw);
        paths.push(path);
    }
    let log_z = lse(&log_w);
    let mut gamma = vec![vec![0.0; k]; t_len];
    let mut pair = vec![vec![vec![0.0; k]; k]; t_len.saturating_sub(1)];
    for (path, lw) in paths.iter().zip(&log_w) {
        let w = (lw - log_z).exp();
        for t in 0..t_len {
            gamma[t][path[t]] += w;
            if t + 1 < t_len {
                pair[t][path[t + 1]][path[t]] += w;
            }
        }
    }
    (log_z, gamma, pair)
}

/// Basis-pursuit denoising `min_z lambda/2 |x - C z|^2 + sum_k alpha_k |z_k|`
/// solved by trying every sign pattern in {-1, 0, +1}^K and keeping the
/// best sign-consistent stationary point.
pub fn bpdn_enumerate(c: &DMatrix<f64>, x: &DVector<f64>, lambda: f64, alpha: &[f64]) -> DVector<f64> {
    let k = c.ncols();
    let objective = |z: &DVector<f64>| {
        let r = x - c * z;
        0.5 * lambda * r.norm_squared() + z.iter().zip(alpha).map(|(zi, a)| a * zi.abs()).sum::<f64>()
    };
    let mut best = DVector::zeros(k);
    let mut best_obj = objective(&best);
    for code in 0..3usize.pow(k as u32) {
        let mut signs = vec![0i32; k];
        let mut cc = code;
        for s in signs.iter_mut() {
            *s = (cc % 3) as i32 - 1;
            cc /= 3;
        }
        let active: Vec<usize> = (0..k).filter(|i| signs[*i] != 0).collect();
        if active.is_empty() {
            continue;
        }
        let ca = DMatrix::from_fn(c.nrows(), active.len(), |r, j| c[(r, active[j])]);
        let gram = ca.transpose() * &ca * lambda;
        let rhs = ca.transpose() * x * lambda
            - DVector::from_iterator(active.len(), active.iter().map(|i| alpha[*i] * signs[*i] as f64));
        let Some(inv) = gram.try_inverse() else {
            continue;
        };
        let za = inv * rhs;
        if active.iter().zip(za.iter()).any(|(i, v)| (signs[*i] as f64) * v <= 0.0) {
            continue;
        }
        let mut z = DVector::zeros(k);
        for (j, i) in active.iter().enumerate() {
            z[*i] = za[j];
        }
        let obj = objective(&z);
        if obj < best_obj {
            best_obj = obj;
            best = z;
        }
    }
    best
}

/// Joint Gaussian over `[z_1; ...; z_T; x_1; ...; x_T]` for a linear-Gaussian
/// chain `z_1 ~ N(mu1, v1)`, `z_t = A z_{t-1} + drive[t] + w`, `x_t = C z_t + c + v`,
/// built by stacking the independent noises and pushing them through the
/// linear map. `drive[t]` for `t >= 1` is the deterministic input to step `t`.
#[allow(clippy::too_many_arguments)]
pub fn lds_joint(
    a: &DMatrix<f64>,
    q: &DMatrix<f64>,
    c: &DMatrix<f64>,
    c_off: &DVector<f64>,
    r: &DMatrix<f64>,
    mu1: &DVector<f64>,
    v1: &DMatrix<f64>,
    drive: &[DVector<f64>],
) -> (DVector<f64>, DMatrix<f64>) {
    let t_len = drive.len();
    let k = a.nrows();
    let d = c.nrows();
    let n_noise = t_len * k + t_len * d;
    let n_out = t_len * (k + d);
    let mut map = DMatrix::zeros(n_out, n_noise);
    let mut mean = DVector::zeros(n_out);
    let mut noise_cov = DMatrix::zeros(n_noise, n_noise);
    let mut prev_map = DMatrix::zeros(k, n_noise);
    let mut prev_mean = DVector::zeros(k);
    for t in 0..t_len {
        let mut m = if t == 0 {
            DMatrix::zeros(k, n_noise)
        } else {
            a * &prev_map
        };
        let mu = if t == 0 {
            mu1.clone()
        } else {
            a * &prev_mean + &drive[t]
        };
        for i in 0..k {
            m[(i, t * k + i)] += 1.0;
        }
        let block = if t == 0 { v1 } else { q };
        noise_cov.view_mut((t * k, t * k), (k, k)).copy_from(block);
        map.view_mut((t * k, 0), (k, n_noise)).copy_from(&m);
        mean.rows_mut(t * k, k).copy_from(&mu);
        let row = t_len * k + t * d;
        let mut mx = c * &m;
        for i in 0..d {
            mx[(i, t_len * k + t * d + i)] += 1.0;
        }
        noise_cov
            .view_mut((t_len * k + t * d, t_len * k + t * d), (d, d))
            .copy_from(r);
        map.view_mut((row, 0), (d, n_noise)).copy_from(&mx);
        mean.rows_mut(row, d).copy_from(&(c * &mu + c_off));
        prev_map = m;
        prev_mean = mu;
    }
    let cov = &map * noise_cov * map.transpose();
    (mean, cov)
}
