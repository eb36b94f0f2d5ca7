//! Named seed derivation.
//!
//! Every random stream in an experiment hangs off one master seed through a
//! labelled path, so any single stage can be replayed in isolation:
//!
//! | label          | consumer                                 |
//! |----------------|------------------------------------------|
//! | `fabrication`  | device deviation sampling                |
//! | `challenge`    | challenge seeds                          |
//! | `noise`        | photodetector noise per evaluation       |
//! | `calibration`  | calibration challenge and noise seeds    |
//! | `adc`          | the ADC full-scale calibration pass      |
//! | `intra`        | the repeated challenge and its noise     |
//! | `sweep`        | per-cell trial schedules                 |
//! | `permutation`  | dataset extension for randomness tests   |

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub const FABRICATION: &str = "fabrication";
pub const CHALLENGE: &str = "challenge";
pub const NOISE: &str = "noise";
pub const CALIBRATION: &str = "calibration";
pub const ADC: &str = "adc";
pub const INTRA: &str = "intra";
pub const SWEEP: &str = "sweep";
pub const PERMUTATION: &str = "permutation";

/// Derives a child seed as the first eight bytes (little endian) of
/// `SHA-256(label || 0x00 || parent_le || index_le)`.
pub fn derive(parent: u64, label: &str, index: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(label.as_bytes());
    h.update([0u8]);
    h.update(parent.to_le_bytes());
    h.update(index.to_le_bytes());
    let digest = h.finalize();
    let mut b = [0u8; 8];
    b.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(b)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
