//! Seeded random streams.
//!
//! Every random draw in the pipeline comes from a ChaCha stream derived from
//! the run seed, a per-purpose domain tag and an index (problem, prompt,
//! iteration). Work split across threads stays bit-identical to a serial run.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type PipelineRng = ChaCha8Rng;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

pub fn stream_rng(seed: u64, domain: u64, index: u64) -> PipelineRng {
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed ^ splitmix64(domain)));
    rng.set_stream(index);
    rng
}
