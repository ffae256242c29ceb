//! Seed derivation. Every random draw in a dataset is a pure function of the
//! master seed and the record coordinates:
//!
//! ```text
//! behavior_seed = splitmix64(master ^ splitmix64(behavior_id ^ BEHAVIOR_TAG))
//! record_seed   = splitmix64(behavior_seed ^ splitmix64(repeat_idx ^ REPEAT_TAG))
//! ```

const BEHAVIOR_TAG: u64 = 0xB0B0_5EED_0000_0001;
const REPEAT_TAG: u64 = 0x005E_ED0F_2E9E_A700;

/// SplitMix64 finalizer (Steele, Lea and Flood).
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of the action vector shared by all repeats of a behavior.
pub fn behavior_seed(master: u64, behavior_id: u64) -> u64 {
    splitmix64(master ^ splitmix64(behavior_id ^ BEHAVIOR_TAG))
}

/// Seed of one recording (repeat) of a behavior.
pub fn record_seed(master: u64, behavior_id: u64, repeat_idx: u64) -> u64 {
    splitmix64(behavior_seed(master, behavior_id) ^ splitmix64(repeat_idx ^ REPEAT_TAG))
}
