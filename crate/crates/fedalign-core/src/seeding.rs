//! Deterministic seed derivation.
//!
//! Every source of randomness in a run is keyed off a single `master_seed`
//! through the splitting function below, so that two runs with the same
//! master seed are bit-identical, and two algorithms sharing a master seed
//! consume identical data partitions and minibatch streams.
//!
//! The derivation is `splitmix64` applied to the master seed xored with a
//! domain tag and then folded with each index. SplitMix64 is a fixed,
//! platform-independent bijection, so derived seeds never change across
//! builds.

/// Domain tags for derived seed streams. Values are arbitrary but frozen.
pub mod domain {
    /// Dataset generation (shared by every algorithm under one master seed).
    pub const DATA: u64 = 0x01;
    /// Global model initialization.
    pub const INIT: u64 = 0x02;
    /// Per-round client sampling.
    pub const ROUND_SAMPLING: u64 = 0x03;
    /// Per-(client, round) minibatch stream.
    pub const BATCH: u64 = 0x04;
}

/// SplitMix64 output function (Steele, Lea & Flood 2014).
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a subseed from `master` for the given domain tag and indices.
///
/// The same `(master, tag, indices)` always yields the same seed; distinct
/// tags or indices yield independent-looking streams.
pub fn derive_seed(master: u64, tag: u64, indices: &[u64]) -> u64 {
    let mut s = splitmix64(master ^ splitmix64(tag));
    for &ix in indices {
        s = splitmix64(s ^ splitmix64(ix));
    }
    s
}

/// Minibatch stream seed for one `(client, round)` pair.
///
/// Deliberately independent of the algorithm so that every algorithm under a
/// shared master seed sees the same batch schedule.
pub fn batch_seed(master: u64, client_id: u64, round: u64) -> u64 {
    derive_seed(master, domain::BATCH, &[client_id, round])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derivation_is_stable() {
        // Frozen values: any change here breaks run reproducibility.
        assert_eq!(splitmix64(0), 0xE220A8397B1DCDAF);
        assert_eq!(
            derive_seed(42, domain::DATA, &[]),
            derive_seed(42, domain::DATA, &[])
        );
    }

    #[test]
    fn domains_do_not_collide() {
        let master = 7;
        let a = derive_seed(master, domain::DATA, &[]);
        let b = derive_seed(master, domain::INIT, &[]);
        let c = derive_seed(master, domain::ROUND_SAMPLING, &[0]);
        let d = batch_seed(master, 0, 0);
        let all = [a, b, c, d];
        for i in 0..all.len() {
            for j in (i + 1)..all.len() {
                assert_ne!(all[i], all[j]);
            }
        }
    }

    #[test]
    fn indices_matter() {
        assert_ne!(batch_seed(1, 0, 1), batch_seed(1, 1, 0));
        assert_ne!(batch_seed(1, 2, 3), batch_seed(1, 3, 2));
    }
}
