//! Latent-variable inference and learning on a shared Gaussian /
//! exponential-family core.
//!
//! The crate is `no_std` (it needs `alloc`). Everything here is a pure
//! function of its arguments plus, where sampling is involved, an explicit
//! RNG handle. File formats, the command-line front end and threading live
//! in the companion `lvm` crate.
//!
//! Layout:
//! - [`gaussian`]: cumulant algebra for jointly Gaussian source/emission pairs.
//! - [`info`]: entropies, free energy, bits-back accounting on discrete models.
//! - [`em`]: the generic EM driver and [`em::FitReport`].
//! - [`gmm`], [`kmeans`], [`fa`], [`sparse`], [`hmm`], [`ssm`]: generative models.
//! - [`recursion`]: the filter/smoother driver shared by [`hmm`] and [`ssm`].
//! - [`particle`]: sequential Monte Carlo filter and smoother.
//! - [`rbm`]: binary harmonium, exact gradients and contrastive divergence.
//! - [`glm`], [`ica`]: discriminative estimators.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

#[cfg(test)]
#[path = "../tests/common/oracle.rs"]
pub(crate) mod oracle;

mod prelude;

pub mod data;
pub mod dist;
pub mod em;
pub mod error;
pub mod fa;
pub mod gaussian;
pub mod glm;
pub mod gmm;
pub mod hmm;
pub mod ica;
pub mod info;
pub mod kmeans;
pub mod linalg;
pub mod particle;
pub mod rbm;
pub mod recursion;
pub mod rng;
pub mod sparse;
pub mod special;
pub mod ssm;

pub use dist::DiscreteDistribution;
pub use error::{Error, Result};
pub use gaussian::{AffineGaussianChannel, GaussianBelief};
