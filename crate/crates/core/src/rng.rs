//! Counter-based random streams.
//!
//! A stream is identified by `(master seed, client id, round)`. The ChaCha
//! key is derived from the seed, the client selects the ChaCha stream and the
//! round selects a disjoint window of the block counter, so any stream can be
//! reconstructed without replaying the others.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Client id reserved for draws made on behalf of the server (coins, cohorts).
pub const SERVER: u64 = u64::MAX;

/// Words reserved per round inside one client stream.
const ROUND_WINDOW: u128 = 1 << 40;

pub type StreamRng = ChaCha8Rng;

pub fn stream(seed: u64, client: u64, round: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(client);
    rng.set_word_pos(u128::from(round) * ROUND_WINDOW);
    rng
}

pub fn server_stream(seed: u64, round: u64) -> StreamRng {
    stream(seed, SERVER, round)
}
