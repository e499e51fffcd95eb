//! Small deterministic hashes used for namespace sharding and round-robin
//! seeds. Not cryptographic.

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    fnv1a_seeded(FNV_OFFSET, bytes)
}

pub(crate) fn fnv1a_seeded(seed: u64, bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(seed, |h, &b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

/// Hash of `bytes` salted by `salt`, finished with a splitmix64 round so
/// that low bits are well mixed.
pub(crate) fn salted(salt: u64, bytes: &[u8]) -> u64 {
    let h = fnv1a_seeded(FNV_OFFSET ^ salt.wrapping_mul(0x9e37_79b9_7f4a_7c15), bytes);
    mix(h ^ salt)
}

pub(crate) fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
