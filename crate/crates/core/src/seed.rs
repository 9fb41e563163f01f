/// Derives an independent 64-bit seed from a base seed and a job key
/// (splitmix64 finalizer over each part).
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    let mut x = base ^ 0x9E37_79B9_7F4A_7C15;
    for p in parts {
        x = mix(x ^ mix(p.wrapping_add(0x9E37_79B9_7F4A_7C15)));
    }
    mix(x)
}

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
