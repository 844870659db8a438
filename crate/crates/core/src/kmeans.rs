//! K-means: the hard-assignment, vanishing-variance limit of GMM EM.

use crate::data::Dataset;
use crate::prelude::*;
use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KmeansConfig {
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for KmeansConfig {
    fn default() -> Self {
        Self { max_iter: 300, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KmeansResult {
    pub means: Vec<DVector<f64>>,
    pub assignments: Vec<usize>,
    /// Within-cluster sum of squared distances after each assignment step.
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Index of the nearest mean; ties go to the lowest index.
pub fn nearest_mean(means: &[DVector<f64>], x: &DVector<f64>) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (k, m) in means.iter().enumerate() {
        let d = (x - m).norm_squared();
        if d < best.1 {
            best = (k, d);
        }
    }
    best
}

pub fn kmeans(data: &Dataset, k: usize, config: &KmeansConfig) -> Result<KmeansResult> {
    if k == 0 || data.n() < k {
        return Err(Error::Precondition(alloc::format!(
            "need at least {k} samples, have {}",
            data.n()
        )));
    }
    let mut rng = crate::rng::substream(config.seed, "kmeans-init", 0);
    let means = initial_means(data, k, &mut rng);
    kmeans_from(data, means, config.max_iter)
}

/// `k` distinct samples drawn without replacement.
pub fn initial_means<R: Rng + ?Sized>(data: &Dataset, k: usize, rng: &mut R) -> Vec<DVector<f64>> {
    rand::seq::index::sample(rng, data.n(), k)
        .iter()
        .map(|i| data.row(i))
        .collect()
}

/// Lloyd iterations from given means. An empty cluster is re-seeded at the
/// sample farthest from its nearest mean.
pub fn kmeans_from(data: &Dataset, mut means: Vec<DVector<f64>>, max_iter: usize) -> Result<KmeansResult> {
    let k = means.len();
    if k == 0 {
        return Err(Error::Precondition("no means".into()));
    }
    data.check_dim(means[0].len())?;
    let rows: Vec<DVector<f64>> = data.rows().collect();
    let assign =
        |means: &[DVector<f64>]| -> (Vec<usize>, Vec<f64>) { rows.iter().map(|x| nearest_mean(means, x)).unzip() };
    let (mut assignments, mut dists) = assign(&means);
    let mut trace = vec![dists.iter().sum::<f64>()];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < max_iter {
        iterations += 1;
        let mut sums = vec![DVector::zeros(data.dim()); k];
        let mut counts = vec![0usize; k];
        for (x, a) in rows.iter().zip(&assignments) {
            sums[*a] += x;
            counts[*a] += 1;
        }
        for c in 0..k {
            if counts[c] > 0 {
                means[c] = &sums[c] / counts[c] as f64;
            } else {
                let far = (0..rows.len()).fold(0, |best, n| if dists[n] > dists[best] { n } else { best });
                log::warn!("kmeans: cluster {c} is empty, reseeding at sample {far}");
                means[c] = rows[far].clone();
                dists[far] = 0.0;
            }
        }
        let (next, next_dists) = assign(&means);
        trace.push(next_dists.iter().sum());
        dists = next_dists;
        if next == assignments {
            converged = true;
            break;
        }
        assignments = next;
    }
    Ok(KmeansResult {
        means,
        assignments,
        objective_trace: trace,
        iterations,
        converged,
    })
}
