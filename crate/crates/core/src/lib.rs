//! Desk-scale lab for chunked, bidirectional, few-step diffusion streaming.
//!
//! * [`world`]: synthetic driving-signal → frame dynamics and the orthogonal codec.
//! * [`diffusion`]: noise schedule, composite chunk input, few-step sampler.
//! * [`net`]: the miniature bidirectional denoiser with exact gradients.
//! * [`distill`]: teacher pretraining, bucketed adaptation, DMD with
//!   retrospective rollouts and stochastic truncation.
//! * [`stream`]: the three-stage real-time chunk streaming engine.
//! * [`latency`]: calibrated multi-GPU latency model and event simulator.
//! * [`eval`]: toy sync / drift metrics and the ablation harnesses.

pub mod checkpoint;
pub mod config;
pub mod diffusion;
pub mod distill;
pub mod error;
pub mod eval;
pub mod latency;
pub mod net;
pub mod stream;
pub mod world;

pub use error::{Error, Result};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Deterministic generator for a named stream under a seed.
pub fn seeded_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Mixes a seed with an index into a new seed (splitmix64 finalizer).
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0x632B_E59B_D9B4_E019);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
