use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Per-subject generator parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectProfile {
    pub subject_id: u32,
    /// Body mass in kg, within [45, 95].
    pub body_weight: f64,
    /// Steps per second at 1 m/s.
    pub cadence_base: f64,
    /// Left/right loading imbalance in [-0.2, 0.2].
    pub asymmetry: f64,
    /// Pressure noise standard deviation as a fraction of sensor full scale.
    pub noise_level: f64,
    /// Multiplicative pressure drift per minute.
    pub drift_rate: f64,
    /// Pixel-sum gain: insole psi summed over the grid per body weight of load.
    pub pressure_gain: f64,
    pub rng_seed: u64,
}

/// SplitMix64 finalizer, used to derive independent streams from (seed, id).
pub(crate) fn mix_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed
        .wrapping_add(salt.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn make_profile(seed: u64, subject_id: u32) -> SubjectProfile {
    let rng_seed = mix_seed(seed, u64::from(subject_id) + 1);
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    SubjectProfile {
        subject_id,
        body_weight: rng.gen_range(50.0..90.0),
        cadence_base: rng.gen_range(1.6..2.0),
        asymmetry: rng.gen_range(-0.1..0.1),
        noise_level: rng.gen_range(0.004..0.012),
        drift_rate: rng.gen_range(0.0..0.02),
        pressure_gain: rng.gen_range(160.0..200.0),
        rng_seed,
    }
}
