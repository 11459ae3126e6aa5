//! Derivation of independent sub-seeds from one master seed.

/// Named randomness sources within one active-learning run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Pool = 1,
    ModelInit = 2,
    Shuffle = 3,
    Acquisition = 4,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for `stream` at `round` of the run started with `master`.
pub fn derive(master: u64, stream: Stream, round: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(master) ^ stream as u64) ^ round)
}
