//! Counter-based space-time randomness.
//!
//! Every random quantity is a pure function of a [`SeedKey`] and an index, so
//! the uniform field `U_n^x` over the unbounded lattice can be queried in any
//! order and replayed bit-exactly. Generation hashes
//! `(master_seed, stream, replica, lane, x, n)` through a chain of SplitMix64
//! finalizers.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A lattice point `(x, n)`: site `x`, time step `n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SpaceTimePoint {
    pub x: i64,
    pub n: u64,
}

impl SpaceTimePoint {
    pub const ORIGIN: SpaceTimePoint = SpaceTimePoint { x: 0, n: 0 };

    pub fn new(x: i64, n: u64) -> Self {
        SpaceTimePoint { x, n }
    }
}

/// Independent randomness streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Stream {
    /// Environment noise.
    EnvField,
    /// The jump uniforms `U_n^x`.
    JumpField,
    /// Auxiliary uniforms used to randomize barrier start points.
    AuxUniform,
    /// Inter-arrival gaps of the rate-1 Poisson clock.
    PoissonClock,
}

impl Stream {
    fn tag(self) -> u64 {
        match self {
            Stream::EnvField => 0x454e_5646,
            Stream::JumpField => 0x4a4d_5046,
            Stream::AuxUniform => 0x4155_5855,
            Stream::PoissonClock => 0x504f_4953,
        }
    }
}

/// Identifies one output stream.
///
/// `reflected` re-indexes site lookups through `x -> -x`; it is set only by
/// the mirror transform of the walker module.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SeedKey {
    pub master_seed: u64,
    pub stream: Stream,
    pub replica: u64,
    #[serde(default)]
    pub reflected: bool,
}

impl SeedKey {
    pub fn new(master_seed: u64, stream: Stream) -> Self {
        SeedKey { master_seed, stream, replica: 0, reflected: false }
    }

    pub fn with_stream(self, stream: Stream) -> Self {
        SeedKey { stream, ..self }
    }

    pub fn with_replica(self, replica: u64) -> Self {
        SeedKey { replica, ..self }
    }

    pub fn reflected(self) -> Self {
        SeedKey { reflected: !self.reflected, ..self }
    }

    /// Hash prefix shared by every draw of this key on the given lane.
    #[inline]
    pub(crate) fn hasher(&self, lane: u64) -> FieldHasher {
        let mut h = mix(self.master_seed ^ 0x6a09_e667_f3bc_c909);
        h = mix(h ^ self.stream.tag().wrapping_mul(GOLDEN));
        h = mix(h ^ self.replica.wrapping_add(0x3c6e_f372_fe94_f82b));
        h = mix(h ^ lane.wrapping_mul(0xbb67_ae85_84ca_a73b));
        FieldHasher { base: h }
    }
}

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

#[inline]
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[inline]
pub(crate) fn zigzag(x: i64) -> u64 {
    ((x << 1) ^ (x >> 63)) as u64
}

/// Precomputed key prefix; cheap to copy into hot loops.
#[derive(Debug, Clone, Copy)]
pub(crate) struct FieldHasher {
    base: u64,
}

impl FieldHasher {
    #[inline]
    pub(crate) fn bits(&self, x: i64, n: u64) -> u64 {
        let h = mix(self.base ^ zigzag(x));
        mix(h ^ n.wrapping_mul(0xa54f_f53a_5f1d_36f1))
    }

    /// Uniform in `[0, 1)` with 53 bits of precision.
    #[inline]
    pub(crate) fn uniform(&self, x: i64, n: u64) -> f64 {
        (self.bits(x, n) >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in the open interval `(0, 1)`.
    #[inline]
    pub(crate) fn open_uniform(&self, x: i64, n: u64) -> f64 {
        ((self.bits(x, n) >> 12) as f64 + 0.5) * (1.0 / (1u64 << 52) as f64)
    }
}

/// The jump uniform `U_n^x` (or raw environment noise for an `EnvField` key).
pub fn uniform_at(key: &SeedKey, p: SpaceTimePoint) -> f64 {
    let x = if key.reflected { -p.x } else { p.x };
    key.hasher(0).uniform(x, p.n)
}

/// The `j`-th auxiliary uniform of the key's stream.
pub fn aux_uniform(key: &SeedKey, j: u64) -> f64 {
    key.hasher(0).uniform(0, j)
}

/// Exponential(1) gap preceding the `(i+1)`-th Poisson arrival.
#[inline]
fn exp_gap(h: &FieldHasher, i: u64) -> f64 {
    -h.open_uniform(0, i).ln()
}

/// Arrival times of a rate-1 Poisson process on `(0, horizon]`.
pub fn poisson_times(key: &SeedKey, horizon: f64) -> Result<Vec<f64>> {
    if !(horizon > 0.0) || !horizon.is_finite() {
        return Err(Error::NonPositiveHorizon(horizon));
    }
    let h = key.hasher(0);
    let mut out = Vec::with_capacity(horizon as usize + 8);
    let mut t = 0.0;
    for i in 0.. {
        t += exp_gap(&h, i);
        if t > horizon {
            break;
        }
        out.push(t);
    }
    Ok(out)
}

/// The `n`-th arrival `T_n` (`n >= 1`) of the Poisson clock.
pub fn nth_arrival(key: &SeedKey, n: u64) -> f64 {
    let h = key.hasher(0);
    (0..n).map(|i| exp_gap(&h, i)).sum()
}
