//! Seeded, counter-based random streams.
//!
//! Every stochastic routine takes an explicit `&mut impl Rng`. Independent
//! parts of a run derive their own stream from the global seed and a stable
//! label, so adding parallelism never changes results.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

pub type StreamRng = ChaCha20Rng;

pub fn seeded(seed: u64) -> StreamRng {
    ChaCha20Rng::seed_from_u64(seed)
}

/// A stream keyed by `(seed, label, index)`.
pub fn substream(seed: u64, label: &str, index: u64) -> StreamRng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(fnv1a(label.as_bytes()) ^ index.rotate_left(32));
    rng
}

/// A vector of `n` independent standard normal draws.
pub fn standard_normal_vector<R: rand::Rng + ?Sized>(rng: &mut R, n: usize) -> nalgebra::DVector<f64> {
    nalgebra::DVector::from_fn(n, |_, _| rng.sample(rand_distr::StandardNormal))
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ u64::from(*b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}
