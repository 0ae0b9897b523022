//! Shared-randomness sampler: a counter-based keyed generator with random
//! access by index, so the decoder can regenerate exactly the candidate the
//! encoder selected without replaying the stream.
//!
//! Uniform words come from ChaCha12 keyed by a 256-bit key, with the 64-bit
//! stream id selecting an independent stream and the word position acting as
//! the counter. Identical (key, stream_id, counter) yields bit-identical
//! output. Gaussian variates use a fixed rational-polynomial inverse normal
//! CDF (Acklam's approximation, |relative error| < 1.15e-9) evaluated in
//! 64-bit IEEE-754; Box-Muller is unusable here because it consumes a
//! data-dependent number of uniforms and would break counter indexing.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};
use crate::gaussian::DiagonalGaussian;

/// 256-bit sampler key shared by encoder and decoder.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SamplerKey([u8; 32]);

impl SamplerKey {
    /// Expand a 64-bit header seed into the full key via splitmix64.
    pub fn from_seed(seed: u64) -> Self {
        let mut bytes = [0u8; 32];
        let mut state = seed;
        for chunk in bytes.chunks_exact_mut(8) {
            state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
            chunk.copy_from_slice(&splitmix64(state).to_le_bytes());
        }
        Self(bytes)
    }

    pub fn from_bytes(bytes: [u8; 32]) -> Self {
        Self(bytes)
    }
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Role of a derived stream. Packed into the top bits of the stream id so
/// that every (kind, tile, step, chunk) tuple maps to a distinct stream
/// without hashing collisions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamKind {
    /// PFR candidate draws.
    Candidate = 0,
    /// Poisson arrival gaps for the same chunk.
    Arrival = 1,
    /// Substitute draw for a skipped step.
    Skip = 2,
    /// Free denoising noise at the decoder.
    Denoise = 3,
}

/// Pack (kind, tile, step, chunk) into a collision-free 64-bit stream id:
/// 4 bits kind | 16 bits tile | 16 bits step | 28 bits chunk ordinal.
pub fn derive_stream_id(kind: StreamKind, tile: u16, step: u16, chunk: u32) -> u64 {
    debug_assert!(chunk < (1 << 28));
    ((kind as u64) << 60) | ((tile as u64) << 44) | ((step as u64) << 28) | (chunk as u64 & 0x0FFF_FFFF)
}

/// Replace the kind bits of an existing stream id.
pub fn with_kind(stream_id: u64, kind: StreamKind) -> u64 {
    (stream_id & 0x0FFF_FFFF_FFFF_FFFF) | ((kind as u64) << 60)
}

/// A positioned view of one pseudorandom stream. Value-like: cloning or
/// re-creating at the same counter reproduces the same outputs.
#[derive(Clone)]
pub struct DeterministicSampler {
    rng: ChaCha12Rng,
    counter: u64,
}

impl DeterministicSampler {
    pub fn new(key: &SamplerKey, stream_id: u64) -> Self {
        let mut rng = ChaCha12Rng::from_seed(key.0);
        rng.set_stream(stream_id);
        Self { rng, counter: 0 }
    }

    /// Jump to an absolute counter. Each counter step is one uniform draw.
    pub fn seek(&mut self, counter: u64) {
        // ChaCha positions are in 32-bit words; one u64 draw consumes two.
        self.rng.set_word_pos(counter as u128 * 2);
        self.counter = counter;
    }

    pub fn counter(&self) -> u64 {
        self.counter
    }

    /// Next uniform in the open interval (0, 1).
    #[inline]
    pub fn next_uniform(&mut self) -> f64 {
        self.counter += 1;
        ((self.rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / 9007199254740992.0)
    }

    /// Standard normal via the fixed inverse-CDF path.
    #[inline]
    pub fn next_standard_normal(&mut self) -> f64 {
        inverse_normal_cdf(self.next_uniform())
    }

    /// Exp(1) variate.
    #[inline]
    pub fn next_exponential(&mut self) -> f64 {
        -self.next_uniform().ln()
    }
}

/// The n-th pseudorandom sample from `p` on stream `stream_id` (n >= 1).
/// Pure in (key, stream_id, n): candidate n occupies uniform counters
/// [(n-1)*dim, n*dim).
pub fn simulate(n: u64, p: &DiagonalGaussian, key: &SamplerKey, stream_id: u64) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::InvalidParameter { name: "n", reason: "candidate index is 1-based".into() });
    }
    let dim = p.dim() as u64;
    let mut s = DeterministicSampler::new(key, stream_id);
    s.seek((n - 1) * dim);
    Ok((0..p.dim())
        .map(|i| p.mean()[i] + p.variance()[i].sqrt() * s.next_standard_normal())
        .collect())
}

/// Acklam's rational approximation to the inverse standard normal CDF.
/// Fixed coefficients, pure f64 arithmetic plus ln/sqrt in the tails.
pub fn inverse_normal_cdf(u: f64) -> f64 {
    debug_assert!(u > 0.0 && u < 1.0);
    const A: [f64; 6] = [
        -3.969683028665376e+01,
        2.209460984245205e+02,
        -2.759285104469687e+02,
        1.383577518672690e+02,
        -3.066479806614716e+01,
        2.506628277459239e+00,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e+01,
        1.615858368580409e+02,
        -1.556989798598866e+02,
        6.680131188771972e+01,
        -1.328068155288572e+01,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-03,
        -3.223964580411365e-01,
        -2.400758277161838e+00,
        -2.549732539343734e+00,
        4.374664141464968e+00,
        2.938163982698783e+00,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-03,
        3.224671290700398e-01,
        2.445134137142996e+00,
        3.754408661907416e+00,
    ];
    const P_LOW: f64 = 0.02425;

    if u < P_LOW {
        let q = (-2.0 * u.ln()).sqrt();
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if u <= 1.0 - P_LOW {
        let q = u - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = (-2.0 * (1.0 - u).ln()).sqrt();
        -((((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0))
    }
}

/// FNV-1a over bytes; used for vocabulary ids and the chain-state trailer.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h = 0xCBF2_9CE4_8422_2325u64;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    h
}

/// FNV-1a over the little-endian bytes of an f64 slice.
pub fn hash_f64_slice(values: &[f64]) -> u64 {
    let mut h = 0xCBF2_9CE4_8422_2325u64;
    for v in values {
        for b in v.to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01B3);
        }
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simulate_is_deterministic() {
        let key = SamplerKey::from_seed(7);
        let p = DiagonalGaussian::new(vec![1.0, -0.5, 2.0], vec![0.5, 1.0, 2.0]).unwrap();
        let a = simulate(123, &p, &key, 99).unwrap();
        let b = simulate(123, &p, &key, 99).unwrap();
        assert_eq!(a, b);
        let c = simulate(124, &p, &key, 99).unwrap();
        assert_ne!(a, c);
        let d = simulate(123, &p, &key, 100).unwrap();
        assert_ne!(a, d);
    }

    #[test]
    fn random_access_matches_sequential() {
        let key = SamplerKey::from_seed(42);
        let mut s = DeterministicSampler::new(&key, 5);
        let seq: Vec<f64> = (0..32).map(|_| s.next_uniform()).collect();
        for (i, &expect) in seq.iter().enumerate() {
            let mut t = DeterministicSampler::new(&key, 5);
            t.seek(i as u64);
            assert_eq!(t.next_uniform(), expect);
        }
    }

    #[test]
    fn simulate_rejects_index_zero() {
        let key = SamplerKey::from_seed(0);
        let p = DiagonalGaussian::standard(1);
        assert!(simulate(0, &p, &key, 0).is_err());
    }

    #[test]
    fn empirical_mean_matches_target() {
        // Mean of simulate(1..=1e5, N(3,1)) within 5 CLT standard errors.
        let key = SamplerKey::from_seed(11);
        let p = DiagonalGaussian::new(vec![3.0], vec![1.0]).unwrap();
        let n = 100_000u64;
        let mut sum = 0.0;
        for i in 1..=n {
            sum += simulate(i, &p, &key, 1).unwrap()[0];
        }
        let mean = sum / n as f64;
        assert!((mean - 3.0).abs() < 0.02, "mean {mean}");
    }

    #[test]
    fn empirical_variance_matches_target() {
        let key = SamplerKey::from_seed(12);
        let p = DiagonalGaussian::new(vec![0.0], vec![4.0]).unwrap();
        let n = 100_000u64;
        let mut sum = 0.0;
        let mut sum2 = 0.0;
        for i in 1..=n {
            let z = simulate(i, &p, &key, 1).unwrap()[0];
            sum += z;
            sum2 += z * z;
        }
        let var = sum2 / n as f64 - (sum / n as f64).powi(2);
        // Var of the sample variance of a Gaussian is ~2 sigma^4 / n.
        let tol = 5.0 * (2.0 * 16.0f64 / n as f64).sqrt();
        assert!((var - 4.0).abs() < tol, "var {var}");
    }

    #[test]
    fn inverse_cdf_fixed_points() {
        assert!(inverse_normal_cdf(0.5).abs() < 1e-12);
        // Phi(1.959964) = 0.975.
        assert!((inverse_normal_cdf(0.975) - 1.959964).abs() < 1e-5);
        assert!((inverse_normal_cdf(0.025) + 1.959964).abs() < 1e-5);
        // Deep tails stay finite and monotone.
        let lo = inverse_normal_cdf(1e-15);
        let hi = inverse_normal_cdf(1.0 - 1e-15);
        assert!(lo < -7.0 && lo.is_finite());
        assert!(hi > 7.0 && hi.is_finite());
    }

    #[test]
    fn stream_id_packing_is_injective() {
        let a = derive_stream_id(StreamKind::Candidate, 1, 2, 3);
        let b = derive_stream_id(StreamKind::Candidate, 1, 3, 2);
        let c = derive_stream_id(StreamKind::Arrival, 1, 2, 3);
        assert_ne!(a, b);
        assert_ne!(a, c);
        assert_eq!(with_kind(a, StreamKind::Arrival), c);
    }
}
