//! Deterministic random streams keyed by a seed path.
//!
//! Every random draw in a simulation is taken from a ChaCha8 stream whose
//! seed is a hash of `(global seed, device, round, local step, purpose)`.
//! A device's draws therefore never depend on which thread runs it or on
//! what other devices did in the same round.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type RngStream = ChaCha8Rng;

const UNSET: u64 = u64::MAX;

/// What a stream is used for. Distinct purposes never share draws.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Purpose {
    Instance,
    Partition,
    DeviceSampling,
    Channel,
    ChannelNoise,
    DataSample,
    Direction,
    Init,
    Custom(u32),
}

impl Purpose {
    fn tag(self) -> u64 {
        match self {
            Purpose::Instance => 1,
            Purpose::Partition => 2,
            Purpose::DeviceSampling => 3,
            Purpose::Channel => 4,
            Purpose::ChannelNoise => 5,
            Purpose::DataSample => 6,
            Purpose::Direction => 7,
            Purpose::Init => 8,
            Purpose::Custom(c) => 0x1_0000_0000 | u64::from(c),
        }
    }
}

/// A fully qualified seed path. Unset components hash as a sentinel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SeedPath {
    seed: u64,
    device: u64,
    round: u64,
    step: u64,
    purpose: Purpose,
}

impl SeedPath {
    pub fn new(seed: u64, purpose: Purpose) -> Self {
        Self {
            seed,
            device: UNSET,
            round: UNSET,
            step: UNSET,
            purpose,
        }
    }

    pub fn device(mut self, device: usize) -> Self {
        self.device = device as u64;
        self
    }

    pub fn round(mut self, round: usize) -> Self {
        self.round = round as u64;
        self
    }

    pub fn step(mut self, step: usize) -> Self {
        self.step = step as u64;
        self
    }

    pub fn purpose(mut self, purpose: Purpose) -> Self {
        self.purpose = purpose;
        self
    }

    pub fn stream(&self) -> RngStream {
        let mut state = splitmix64(self.seed ^ 0x5EED_5EED_5EED_5EED);
        for part in [self.device, self.round, self.step, self.purpose.tag()] {
            state = splitmix64(state ^ splitmix64(part.wrapping_add(0x9E37_79B9_7F4A_7C15)));
        }
        let mut key = [0u8; 32];
        for chunk in key.chunks_exact_mut(8) {
            state = splitmix64(state);
            chunk.copy_from_slice(&state.to_le_bytes());
        }
        ChaCha8Rng::from_seed(key)
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
