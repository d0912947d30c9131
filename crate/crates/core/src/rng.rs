//! Counter-based random substreams.
//!
//! Every Monte-Carlo trial owns a ChaCha stream keyed by `(seed, sweep_index,
//! trial_index)`, so results do not depend on how trials are scheduled across
//! workers.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::linalg::C64;

pub type SimRng = ChaCha8Rng;

const TRIAL_BITS: u32 = 32;
const ESTIMATOR_FLAG: u64 = 1 << 63;
const NOISE_FLAG: u64 = 1 << 62;

fn stream_id(sweep_index: u64, trial_index: u64) -> u64 {
    assert!(trial_index < (1 << TRIAL_BITS), "trial index exceeds 2^32");
    assert!(sweep_index < (1 << (62 - TRIAL_BITS)), "sweep index exceeds 2^30");
    (sweep_index << TRIAL_BITS) | trial_index
}

/// Substream used to draw the channel realization and observation of a trial.
pub fn trial_rng(seed: u64, sweep_index: u64, trial_index: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_id(sweep_index, trial_index));
    rng
}

/// Substream for the receiver noise of a trial, kept apart from the channel
/// draw so the noise does not shift when the number of paths or snapshots changes.
pub fn noise_rng(seed: u64, sweep_index: u64, trial_index: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_id(sweep_index, trial_index) | NOISE_FLAG);
    rng
}

/// Disjoint substream for randomized estimators, so that the draw seen by the
/// estimators never depends on which estimators were requested.
pub fn estimator_rng(seed: u64, sweep_index: u64, trial_index: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_id(sweep_index, trial_index) | ESTIMATOR_FLAG);
    rng
}

/// One draw of `CN(0, variance)`.
pub fn complex_normal<R: Rng + ?Sized>(rng: &mut R, variance: f64) -> C64 {
    let s = (0.5 * variance).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(s * re, s * im)
}
