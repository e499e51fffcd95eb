//! Synthetic event data for stream files.
//!
//! Each event is a fixed header (id, run, track count) followed by tracks
//! of quantized momenta, a detector id, charge and a quality byte. `noise`
//! in [0, 1] sets how many low mantissa bits of each momentum survive,
//! which is what dominates the entropy of real reconstructed data.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

/// Noise at which the corpus has an order-0 entropy of 4 bits per byte,
/// i.e. an entropy-coding bound of 2:1. See [`calibrate`].
pub const DEFAULT_NOISE: f64 = 0.2206;

/// Order-0 byte entropy that corresponds to a 2:1 bound.
pub const TARGET_BITS_PER_BYTE: f64 = 4.0;

const DETECTORS: [u16; 6] = [0x0101, 0x0102, 0x0201, 0x0301, 0x0302, 0x0401];

pub fn generate(seed: u64, len: usize, noise: f64) -> Vec<u8> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let momentum = Normal::new(0.0f32, 1.5).expect("valid sigma");
    // Low mantissa bits cleared per momentum.
    let bits = (1.0 - noise.clamp(0.0, 1.0)) * 23.0;
    let mut out = Vec::with_capacity(len + 256);
    let run = rng.gen_range(10_000u32..20_000);
    let mut event = rng.gen_range(0u64..1 << 20);
    while out.len() < len {
        let tracks = rng.gen_range(2u8..12);
        out.extend_from_slice(&event.to_be_bytes());
        out.extend_from_slice(&run.to_be_bytes());
        out.push(tracks);
        for _ in 0..tracks {
            for _ in 0..3 {
                // Either floor or ceil of the fractional bit count, so the
                // entropy moves smoothly with `noise`.
                let b = bits.floor() as u32 + u32::from(rng.gen_bool(bits.fract()));
                let keep = !((1u32 << b) - 1);
                let v = momentum.sample(&mut rng).to_bits() & keep;
                out.extend_from_slice(&v.to_be_bytes());
            }
            out.extend_from_slice(&DETECTORS[rng.gen_range(0..DETECTORS.len())].to_be_bytes());
            out.push(if rng.gen_bool(0.5) { 1 } else { 0xFF });
            out.push(if rng.gen_bool(0.9) {
                0
            } else {
                gen_quality(&mut rng)
            });
        }
        event += 1;
    }
    out.truncate(len);
    out
}

fn gen_quality(rng: &mut ChaCha8Rng) -> u8 {
    rng.gen_range(1..8)
}

/// Order-0 entropy in bits per byte.
pub fn entropy_bits(data: &[u8]) -> f64 {
    let mut counts = [0u64; 256];
    for &b in data {
        counts[b as usize] += 1;
    }
    let n = data.len() as f64;
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.log2()
        })
        .sum()
}

/// Smallest noise level whose corpus reaches `target` bits per byte.
pub fn calibrate(seed: u64, len: usize, target: f64) -> f64 {
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..30 {
        let mid = (lo + hi) / 2.0;
        if entropy_bits(&generate(seed, len, mid)) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi
}
