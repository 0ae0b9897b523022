//! Reverse-channel coding via the Poisson functional representation.
//!
//! The encoder walks a unit-rate Poisson process of candidates z_n ~ p,
//! scoring each by s = t * p(z)/q(z), and returns the index of the minimum
//! score once the running time bound guarantees (to the configured slack)
//! that no later arrival can win. The decoder regenerates the selected
//! candidate from the shared sampler: `simulate(n*, p)`.
//!
//! Scores are tracked in log space; the linear ratio p(z)/q(z) underflows
//! past a few dozen dimensions.

use std::ops::Range;

use crate::bitstream::{BitReader, BitWriter};
use crate::error::{Error, Result};
use crate::gaussian::{kl_bits, DiagonalGaussian};
use crate::sampler::{derive_stream_id, simulate, with_kind, DeterministicSampler, SamplerKey, StreamKind};

/// Documented default slack for the stop rule: premature termination odds
/// around 2^-16 at small chunk KLs. Expected candidates scale as
/// 2^(kl_bits + slack), so hot paths pass a smaller slack.
pub const DEFAULT_PFR_SLACK_BITS: f64 = 16.0;

/// Extra headroom of the candidate cap over the expected stopping time.
/// The stop time is ~Exp(1) * 2^(kl+slack); 6 more bits make a cap hit a
/// genuine anomaly rather than a coin flip.
pub const CAP_HEADROOM_BITS: u32 = 6;

/// Hard ceiling on any single chunk's candidate budget.
pub const MAX_CANDIDATE_CAP: u64 = 1 << 34;

/// w_min for the stop rule `s* <= t * w_min`: a lower-bound proxy for the
/// density ratio p(z)/q(z), set a fixed number of bits below the typical
/// ratio exp(-KL) of a q-distributed sample.
pub fn w_min_with_slack(kl_nats: f64, slack_bits: f64) -> f64 {
    (-(kl_nats.max(0.0) + slack_bits * std::f64::consts::LN_2)).exp()
}

/// The stream-version default: 16 bits of slack below exp(-KL).
pub fn default_w_min(kl_nats: f64) -> f64 {
    w_min_with_slack(kl_nats, DEFAULT_PFR_SLACK_BITS)
}

/// Candidate cap matched to a stop rule with the given slack.
pub fn candidate_cap(kl_bits: f64, slack_bits: f64) -> u64 {
    let exponent = (kl_bits.max(0.0) + slack_bits).ceil() as u32 + CAP_HEADROOM_BITS;
    1u64 << exponent.min(34)
}

/// Outcome of one PFR encode.
#[derive(Debug, Clone, PartialEq)]
pub struct PfrResult {
    /// Index of the selected candidate (1-based); this is the message.
    pub index: u64,
    /// Candidates examined before the stop rule fired.
    pub candidates_examined: u64,
    /// Final winning score s*.
    pub score: f64,
}

/// Encode a sample of `q` against the shared reference `p`.
///
/// Candidates stream from `stream_id`; arrival gaps from the same id with
/// the kind bits set to `Arrival` so the decoder (which needs neither) never
/// touches them. Returns an error when `cap` candidates pass without the
/// stop rule firing; callers re-chunk at a smaller KL target.
pub fn pfr_encode(
    q: &DiagonalGaussian,
    p: &DiagonalGaussian,
    w_min: f64,
    key: &SamplerKey,
    stream_id: u64,
    cap: u64,
) -> Result<PfrResult> {
    if q.dim() != p.dim() {
        return Err(Error::DimensionMismatch { expected: q.dim(), got: p.dim() });
    }
    if !(w_min > 0.0) || !w_min.is_finite() {
        return Err(Error::InvalidParameter {
            name: "w_min",
            reason: format!("must be positive and finite, got {w_min}"),
        });
    }
    let dim = q.dim();
    let ln_w_min = w_min.ln();

    // Per-dimension constants: with z = mu_p + sigma_p * xi,
    // ln p(z) - ln q(z) = c0 + sum_i [ (b_i + s_i xi_i)^2 - xi_i^2 ] / 2
    // where b_i = (mu_p - mu_q)/sigma_q and s_i = sigma_p/sigma_q.
    let mut c0 = 0.0;
    let mut b = Vec::with_capacity(dim);
    let mut s = Vec::with_capacity(dim);
    for i in 0..dim {
        let sq = q.variance()[i].sqrt();
        let sp = p.variance()[i].sqrt();
        c0 += (sq / sp).ln();
        b.push((p.mean()[i] - q.mean()[i]) / sq);
        s.push(sp / sq);
    }

    let mut candidates = DeterministicSampler::new(key, stream_id);
    let mut arrivals = DeterministicSampler::new(key, with_kind(stream_id, StreamKind::Arrival));

    let mut t = 0.0f64;
    let mut best_ln_score = f64::INFINITY;
    let mut best_index = 0u64;
    let mut n = 1u64;
    loop {
        let mut ratio = c0;
        for i in 0..dim {
            let xi = candidates.next_standard_normal();
            let shifted = b[i] + s[i] * xi;
            ratio += 0.5 * (shifted * shifted - xi * xi);
        }
        t += arrivals.next_exponential();
        let ln_score = t.ln() + ratio;
        if ln_score <= best_ln_score {
            best_ln_score = ln_score;
            best_index = n;
        }
        if best_ln_score <= t.ln() + ln_w_min {
            return Ok(PfrResult { index: best_index, candidates_examined: n, score: best_ln_score.exp() });
        }
        if n >= cap {
            return Err(Error::CandidateCapExceeded {
                cap,
                kl_bits: kl_bits(q, p).unwrap_or(f64::NAN),
            });
        }
        n += 1;
    }
}

/// As [`pfr_encode`], but a cap hit returns the best candidate so far
/// instead of erroring. The index stays decodable either way; only the
/// sample's distributional quality degrades, by at most the truncated tail
/// mass. Used by the pipeline for rare chunks whose KL exceeds any
/// reasonable search budget.
pub fn pfr_encode_truncated(
    q: &DiagonalGaussian,
    p: &DiagonalGaussian,
    w_min: f64,
    key: &SamplerKey,
    stream_id: u64,
    cap: u64,
) -> Result<PfrResult> {
    match pfr_encode(q, p, w_min, key, stream_id, cap) {
        Err(Error::CandidateCapExceeded { .. }) => rerun_best(q, p, key, stream_id, cap),
        other => other,
    }
}

fn rerun_best(
    q: &DiagonalGaussian,
    p: &DiagonalGaussian,
    key: &SamplerKey,
    stream_id: u64,
    cap: u64,
) -> Result<PfrResult> {
    if q.dim() != p.dim() {
        return Err(Error::DimensionMismatch { expected: q.dim(), got: p.dim() });
    }
    let dim = q.dim();
    let mut c0 = 0.0;
    let mut b = Vec::with_capacity(dim);
    let mut s = Vec::with_capacity(dim);
    for i in 0..dim {
        let sq = q.variance()[i].sqrt();
        let sp = p.variance()[i].sqrt();
        c0 += (sq / sp).ln();
        b.push((p.mean()[i] - q.mean()[i]) / sq);
        s.push(sp / sq);
    }
    let mut candidates = DeterministicSampler::new(key, stream_id);
    let mut arrivals = DeterministicSampler::new(key, with_kind(stream_id, StreamKind::Arrival));
    let mut t = 0.0f64;
    let mut best_ln_score = f64::INFINITY;
    let mut best_index = 1u64;
    for n in 1..=cap.max(1) {
        let mut ratio = c0;
        for i in 0..dim {
            let xi = candidates.next_standard_normal();
            let shifted = b[i] + s[i] * xi;
            ratio += 0.5 * (shifted * shifted - xi * xi);
        }
        t += arrivals.next_exponential();
        let ln_score = t.ln() + ratio;
        if ln_score <= best_ln_score {
            best_ln_score = ln_score;
            best_index = n;
        }
    }
    Ok(PfrResult { index: best_index, candidates_examined: cap.max(1), score: best_ln_score.exp() })
}

/// Regenerate the encoder's selected candidate: `simulate(index, p)`.
pub fn pfr_decode(index: u64, p: &DiagonalGaussian, key: &SamplerKey, stream_id: u64) -> Result<Vec<f64>> {
    simulate(index, p, key, stream_id)
}

/// A contiguous dimension group with its (q, p) restriction and rate
/// bookkeeping.
#[derive(Debug, Clone)]
pub struct RccChunk {
    pub dim_range: Range<usize>,
    pub q: DiagonalGaussian,
    pub p: DiagonalGaussian,
    pub kl_bits: f64,
    pub stream_id: u64,
    /// A single dimension whose KL alone exceeds the target.
    pub over_budget: bool,
}

/// Greedy left-to-right grouping of dimensions so that each chunk's KL stays
/// at or under `kl_target_bits`. A lone dimension over the target becomes its
/// own flagged chunk. Chunks partition [0, dim) exactly.
pub fn chunk(q: &DiagonalGaussian, p: &DiagonalGaussian, kl_target_bits: f64) -> Result<Vec<RccChunk>> {
    chunk_with_streams(q, p, kl_target_bits, 0, 0, 0.0)
}

/// As [`chunk`], with stream ids derived from (tile, step, chunk ordinal)
/// and an optional per-dimension pad (bits) added to each KL estimate before
/// grouping, for callers whose q is a stand-in for a hotter target.
pub fn chunk_with_streams(
    q: &DiagonalGaussian,
    p: &DiagonalGaussian,
    kl_target_bits: f64,
    tile: u16,
    step: u16,
    pad_per_dim_bits: f64,
) -> Result<Vec<RccChunk>> {
    if !(kl_target_bits > 0.0) {
        return Err(Error::InvalidParameter {
            name: "kl_target_bits",
            reason: format!("must be positive, got {kl_target_bits}"),
        });
    }
    let per_dim: Vec<f64> =
        q.kl_bits_per_dim(p)?.into_iter().map(|k| k + pad_per_dim_bits).collect();
    let mut chunks: Vec<RccChunk> = Vec::new();
    let mut start = 0usize;
    let mut acc = 0.0f64;
    let close = |chunks: &mut Vec<RccChunk>, range: Range<usize>, kl: f64, over: bool| -> Result<()> {
        let ordinal = chunks.len() as u32;
        chunks.push(RccChunk {
            dim_range: range.clone(),
            q: q.restrict(range.clone())?,
            p: p.restrict(range)?,
            kl_bits: kl,
            stream_id: derive_stream_id(StreamKind::Candidate, tile, step, ordinal),
            over_budget: over,
        });
        Ok(())
    };
    for (i, &kl) in per_dim.iter().enumerate() {
        if kl > kl_target_bits {
            // Flush the open chunk, then isolate the oversized dimension.
            if i > start {
                close(&mut chunks, start..i, acc, false)?;
            }
            close(&mut chunks, i..i + 1, kl, true)?;
            start = i + 1;
            acc = 0.0;
        } else if i > start && acc + kl > kl_target_bits {
            close(&mut chunks, start..i, acc, false)?;
            start = i;
            acc = kl;
        } else {
            acc += kl;
        }
    }
    if start < per_dim.len() {
        close(&mut chunks, start..per_dim.len(), acc, false)?;
    }
    Ok(chunks)
}

/// Rice parameter for the index code, derived from the KL hint. Both sides
/// recompute the hint, so it is never transmitted.
fn rice_param(kl_bits_hint: f64) -> u32 {
    let h = kl_bits_hint.max(0.0);
    ((h + 1.0).log2().floor() as i64).clamp(0, 6) as u32
}

/// Self-delimiting code for a PFR index, tuned by a KL hint shared with the
/// decoder. Layout: unary quotient of e = floor(log2 n) under a Rice
/// parameter k(hint), then k remainder bits of e, then the e mantissa bits
/// of n. Expected length tracks log2(n) + log2(log2 n + 1) + O(1), matching
/// the index's Zipf-like law. Returns bits written.
pub fn encode_index(n: u64, kl_bits_hint: f64, w: &mut BitWriter) -> Result<u64> {
    if n == 0 {
        return Err(Error::InvalidParameter { name: "n", reason: "index is 1-based".into() });
    }
    let k = rice_param(kl_bits_hint);
    let e = 63 - n.leading_zeros();
    let quotient = e >> k;
    let remainder = e & ((1 << k) - 1);
    for _ in 0..quotient {
        w.write_bit(true);
    }
    w.write_bit(false);
    if k > 0 {
        w.write_bits(remainder as u64, k);
    }
    if e > 0 {
        w.write_bits(n & ((1u64 << e) - 1), e);
    }
    Ok(quotient as u64 + 1 + k as u64 + e as u64)
}

/// Exact inverse of [`encode_index`] under the same hint.
pub fn decode_index(r: &mut BitReader<'_>, kl_bits_hint: f64) -> Result<u64> {
    let k = rice_param(kl_bits_hint);
    let mut quotient = 0u32;
    while r.read_bit()? {
        quotient += 1;
        if quotient > 63 {
            return Err(Error::Malformed {
                offset: r.position(),
                reason: "index exponent out of range".into(),
            });
        }
    }
    let remainder = if k > 0 { r.read_bits(k)? as u32 } else { 0 };
    let e = (quotient << k) + remainder;
    if e > 63 {
        return Err(Error::Malformed { offset: r.position(), reason: "index exponent out of range".into() });
    }
    let mantissa = if e > 0 { r.read_bits(e)? } else { 0 };
    Ok((1u64 << e) | mantissa)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bitstream::BitWriter;

    fn g1(mean: f64, var: f64) -> DiagonalGaussian {
        DiagonalGaussian::new(vec![mean], vec![var]).unwrap()
    }

    #[test]
    fn identical_distributions_select_first_candidate() {
        // With q = p every score is t itself, so the first arrival wins.
        let p = g1(0.0, 1.0);
        let mut first = 0u32;
        for seed in 0..2000u64 {
            let key = SamplerKey::from_seed(seed);
            let r = pfr_encode(&p, &p, default_w_min(0.0), &key, 0, 1 << 22).unwrap();
            if r.index == 1 {
                first += 1;
            }
        }
        assert_eq!(first, 2000);
    }

    #[test]
    fn decode_reproduces_selected_candidate() {
        let q = g1(1.2, 0.8);
        let p = g1(0.0, 1.0);
        for seed in 0..50u64 {
            let key = SamplerKey::from_seed(seed);
            let kl = kl_bits(&q, &p).unwrap();
            let res =
                pfr_encode(&q, &p, w_min_with_slack(kl * std::f64::consts::LN_2, 10.0), &key, 7, 1 << 22)
                    .unwrap();
            assert!(res.index <= res.candidates_examined);
            let z = pfr_decode(res.index, &p, &key, 7).unwrap();
            let again = pfr_decode(res.index, &p, &key, 7).unwrap();
            assert_eq!(z, again);
            assert_eq!(z, simulate(res.index, &p, &key, 7).unwrap());
        }
    }

    #[test]
    fn zero_w_min_rejected() {
        let p = g1(0.0, 1.0);
        let key = SamplerKey::from_seed(0);
        assert!(pfr_encode(&p, &p, 0.0, &key, 0, 1024).is_err());
    }

    #[test]
    fn cap_exceeded_surfaces_error() {
        // KL ~ 12.5 bits with a 4-candidate cap cannot terminate.
        let q = g1(4.2, 1.0);
        let p = g1(0.0, 1.0);
        let key = SamplerKey::from_seed(1);
        let err = pfr_encode(&q, &p, 1e-30, &key, 0, 4).unwrap_err();
        assert!(matches!(err, Error::CandidateCapExceeded { cap: 4, .. }));
    }

    #[test]
    fn mean_index_tracks_codelength_bound() {
        // KL(N(2,1) || N(0,1)) = 2 nats = 2.885 bits; the PFR bound allows
        // mean log2(n*) up to KL + log2(KL+1) + 5.
        let q = g1(2.0, 1.0);
        let p = g1(0.0, 1.0);
        let kl_bits_v = kl_bits(&q, &p).unwrap();
        let w = w_min_with_slack(2.0, 8.0);
        let trials = 10_000u64;
        let mut sum_log2 = 0.0;
        for seed in 0..trials {
            let key = SamplerKey::from_seed(seed ^ 0xABCD);
            let r = pfr_encode(&q, &p, w, &key, 3, 1 << 20).unwrap();
            sum_log2 += (r.index as f64).log2();
        }
        let mean = sum_log2 / trials as f64;
        let bound = kl_bits_v + (kl_bits_v + 1.0).log2() + 5.0;
        assert!(mean <= bound, "mean log2 index {mean} > bound {bound}");
    }

    #[test]
    fn chunk_single_when_under_budget() {
        let q = DiagonalGaussian::new(vec![0.5; 8], vec![1.0; 8]).unwrap();
        let p = DiagonalGaussian::standard(8);
        // Total KL = 8 * 0.125 nats = 1.44 bits < 12.
        let chunks = chunk(&q, &p, 12.0).unwrap();
        assert_eq!(chunks.len(), 1);
        assert_eq!(chunks[0].dim_range, 0..8);
        assert!(!chunks[0].over_budget);
    }

    #[test]
    fn chunk_greedy_accumulation() {
        // 30 dimensions of 1.0 bit each, target 12 -> 12, 12, 6. The target
        // picks up an epsilon so one-ulp drift in the per-dimension KL does
        // not flip the boundary comparison.
        let shift = (2.0 * std::f64::consts::LN_2).sqrt();
        let q = DiagonalGaussian::new(vec![shift; 30], vec![1.0; 30]).unwrap();
        let p = DiagonalGaussian::standard(30);
        let per_dim = q.kl_bits_per_dim(&p).unwrap()[0];
        assert!((per_dim - 1.0).abs() < 1e-12);
        let chunks = chunk(&q, &p, 12.0 * per_dim * (1.0 + 1e-12)).unwrap();
        let sizes: Vec<usize> = chunks.iter().map(|c| c.dim_range.len()).collect();
        assert_eq!(sizes, vec![12, 12, 6]);
    }

    #[test]
    fn chunk_isolates_oversized_dimension() {
        let shift = (2.0f64 * 20.0 * std::f64::consts::LN_2).sqrt();
        let q = DiagonalGaussian::new(vec![0.1, shift, 0.1], vec![1.0; 3]).unwrap();
        let p = DiagonalGaussian::standard(3);
        let chunks = chunk(&q, &p, 12.0).unwrap();
        assert_eq!(chunks.len(), 3);
        assert!(chunks[1].over_budget);
        assert_eq!(chunks[1].dim_range, 1..2);
        assert!((chunks[1].kl_bits - 20.0).abs() < 1e-9);
    }

    #[test]
    fn chunks_partition_all_dimensions() {
        for dims in [1usize, 3, 17, 64] {
            let mean: Vec<f64> = (0..dims).map(|i| ((i * 37) % 11) as f64 * 0.4).collect();
            let q = DiagonalGaussian::new(mean, vec![1.0; dims]).unwrap();
            let p = DiagonalGaussian::standard(dims);
            let chunks = chunk(&q, &p, 3.0).unwrap();
            let mut next = 0usize;
            for c in &chunks {
                assert_eq!(c.dim_range.start, next);
                let recomputed = kl_bits(&c.q, &c.p).unwrap();
                assert!((recomputed - c.kl_bits).abs() < 1e-9);
                next = c.dim_range.end;
            }
            assert_eq!(next, dims);
        }
    }

    #[test]
    fn chunk_stream_ids_distinct() {
        let q = DiagonalGaussian::new(vec![1.0; 16], vec![1.0; 16]).unwrap();
        let p = DiagonalGaussian::standard(16);
        let chunks = chunk_with_streams(&q, &p, 2.0, 3, 9, 0.0).unwrap();
        let mut ids: Vec<u64> = chunks.iter().map(|c| c.stream_id).collect();
        ids.sort_unstable();
        ids.dedup();
        assert_eq!(ids.len(), chunks.len());
    }

    #[test]
    fn index_code_round_trip() {
        for hint in [0.0, 1.0, 4.0, 8.0, 16.0, 33.0] {
            let mut w = BitWriter::new();
            let ns: Vec<u64> =
                (0..2000u64).map(|i| 1 + (i * i * 2654435761) % 1_000_000).chain([1, 2, 3, u64::MAX >> 1]).collect();
            let mut lens = Vec::new();
            for &n in &ns {
                lens.push(encode_index(n, hint, &mut w).unwrap());
            }
            assert_eq!(w.len_bits(), lens.iter().sum::<u64>());
            let bytes = w.into_bytes();
            let mut r = BitReader::new(&bytes);
            for &n in &ns {
                assert_eq!(decode_index(&mut r, hint).unwrap(), n);
            }
        }
    }

    #[test]
    fn index_one_is_shortest_codeword() {
        // At small hints the code spends 1 + k bits on n = 1.
        for hint in [0.0, 0.5, 1.0] {
            let mut w = BitWriter::new();
            let bits = encode_index(1, hint, &mut w).unwrap();
            assert!(bits <= 2, "n=1 took {bits} bits at hint {hint}");
        }
    }
}
