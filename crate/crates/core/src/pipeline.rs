//! End-to-end dual-branch codec: explicit sections (tags, quantized latent)
//! plus reverse-channel-coded noisy diffusion states, with per-step rate
//! accounting.
//!
//! The decoder re-derives every chunk layout and index-code hint from
//! information it shares with the encoder: the reverse kernel p, and a proxy
//! posterior built from the transmitted latent hint in place of the true
//! coding target. Skip decisions use true KLs on the encoder and travel in
//! the header bitmap. Chain states advance on the *sampled* values on both
//! sides, so encoder and decoder stay bit-identical through the coded prefix.

use rayon::prelude::*;

use crate::bitstream::{
    q88_decode, q88_encode, q8_encode, read_stream, write_stream, BitReader, BitWriter, Section,
    SectionTag, StreamHeader, FLAG_HINT_CONDITIONING,
};
use crate::diffusion::{
    forward_marginal, posterior, reverse_kernel, Condition, Denoiser, HintField, NoiseSchedule,
};
use crate::error::{Error, Result};
use crate::explicit::{latent_decode, latent_encode, tag_decode, tag_encode, TagPrompt};
use crate::gaussian::{kl_bits, DiagonalGaussian};
use crate::grid::Grid;
use crate::rcc::{
    candidate_cap, chunk_with_streams, decode_index, encode_index, pfr_decode,
    pfr_encode_truncated, w_min_with_slack, RccChunk,
};
use crate::sampler::{derive_stream_id, fnv1a64, simulate, SamplerKey, StreamKind};
use crate::tiling::{gaussian_mask, make_grid, merge, partition_condition, TileGrid, WeightMask};
use crate::tradeoff::blend;

/// Block edge (cells) of the latent-hint downsample.
pub const HINT_BLOCK: usize = 4;

/// Variance the conditional prior assumes for the dequantized hint, on top
/// of the quantization noise delta^2/12: a fixed allowance for within-block
/// spread.
pub const HINT_SPREAD_VARIANCE: f64 = 1.0;

/// Log2 of the expected-candidate budget per chunk; the effective stop-rule
/// slack per chunk is trimmed so kl + slack never exceeds this.
pub const WORK_BUDGET_LOG2: f64 = 21.0;

/// A chunk hotter than this (in bits of true KL) forces a finer layout
/// level; a single dimension hotter than this is unencodable. At this
/// ceiling the trimmed slack keeps expected work near 2^26 candidates.
pub const MAX_CHUNK_KL_BITS: f64 = 24.0;

/// Variance shrink factor per refinement rung of the final handoff.
pub const LADDER_RATIO: f64 = 64.0;

/// Reference-variance inflation at each rung, absorbing sampling spread of
/// the previous rung.
pub const LADDER_INFLATE: f64 = 2.0;

/// The handoff ladder stops once the target variance reaches 2^-80, which
/// pins the reconstruction to the coding target far below test tolerances.
pub const LADDER_FLOOR_LOG2: i32 = -80;

/// Hard ceiling on PFR candidates per chunk regardless of KL.
pub const HARD_CANDIDATE_CAP: u64 = 1 << 28;

/// Search budget for chunks past MAX_CHUNK_KL_BITS: the encoder keeps the
/// best candidate found within it (a truncated search), trading a little
/// sample fidelity for bounded work; the chain heals the gap next step.
pub const TRUNCATED_SEARCH_CAP: u64 = 1 << 24;

/// Everything the decoder must know that is not in the stream itself.
pub struct PipelineContext<D: Denoiser> {
    pub schedule: NoiseSchedule,
    pub denoiser: D,
    pub autoencoder: crate::tradeoff::LinearAutoencoder,
    pub vocab: crate::explicit::TagVocabulary,
}

/// Encoder-side configuration; the decode-relevant subset rides in the
/// header. Fractional fields are quantized to their header precision before
/// use so both sides compute identical layouts.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub t_e: u16,
    pub tau: f64,
    pub seed: u64,
    pub tile: u16,
    pub overlap: u16,
    pub sigma_fraction: f64,
    pub tag_cap: u16,
    pub kl_target_bits: f64,
    pub skip_threshold_bits: f64,
    /// Encoder-only: stop-rule slack in bits; expected PFR work per chunk is
    /// ~2^(kl + slack) candidates.
    pub pfr_slack_bits: f64,
    pub latent_step: f64,
    pub hint_conditioning: bool,
    pub emit_trailer: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            t_e: 16,
            tau: 1.0,
            seed: 0,
            tile: 16,
            overlap: 8,
            sigma_fraction: 0.3,
            tag_cap: 8,
            kl_target_bits: 12.0,
            skip_threshold_bits: 0.05,
            pfr_slack_bits: 8.0,
            latent_step: 0.5,
            hint_conditioning: true,
            emit_trailer: true,
        }
    }
}

/// Per-coded-state rate record.
#[derive(Debug, Clone, PartialEq)]
pub struct StepReport {
    /// Chain index of the state this record produced (T down to T - T_E).
    pub state: u16,
    pub kl_bits: f64,
    pub payload_bits: u64,
    /// RCC chunks coded for this state, summed over tiles (0 when skipped).
    pub chunks: u32,
    pub skipped: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncodeReport {
    pub total_bits: u64,
    pub header_bits: u64,
    pub tag_bits: u64,
    pub latent_bits: u64,
    pub rcc_overhead_bits: u64,
    pub trailer_bits: u64,
    pub steps: Vec<StepReport>,
    pub bpp: f64,
    pub chain_hash: u64,
}

impl EncodeReport {
    pub fn explicit_bits(&self) -> u64 {
        self.tag_bits + self.latent_bits
    }

    pub fn implicit_bits(&self) -> u64 {
        self.steps.iter().map(|s| s.payload_bits).sum()
    }

    pub fn kl_per_step(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.kl_bits).collect()
    }

    pub fn steps_skipped(&self) -> Vec<u16> {
        self.steps.iter().filter(|s| s.skipped).map(|s| s.state).collect()
    }

    /// Line-oriented key=value serialization for bench tooling.
    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("total_bits={}\n", self.total_bits));
        out.push_str(&format!("header_bits={}\n", self.header_bits));
        out.push_str(&format!("tag_bits={}\n", self.tag_bits));
        out.push_str(&format!("latent_bits={}\n", self.latent_bits));
        out.push_str(&format!("explicit_bits={}\n", self.explicit_bits()));
        out.push_str(&format!("implicit_bits={}\n", self.implicit_bits()));
        out.push_str(&format!("rcc_overhead_bits={}\n", self.rcc_overhead_bits));
        out.push_str(&format!("trailer_bits={}\n", self.trailer_bits));
        out.push_str(&format!("bpp={:.6}\n", self.bpp));
        out.push_str(&format!("chain_hash={:#018x}\n", self.chain_hash));
        let skipped: Vec<String> = self.steps_skipped().iter().map(u16::to_string).collect();
        out.push_str(&format!("steps_skipped={}\n", skipped.join(",")));
        for s in &self.steps {
            out.push_str(&format!(
                "step.{}.kl_bits={:.9}\nstep.{}.bits={}\nstep.{}.skipped={}\n",
                s.state, s.kl_bits, s.state, s.payload_bits, s.state, s.skipped
            ));
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct DecodeReport {
    pub header: StreamHeader,
    pub chain_hash: u64,
    pub trailer_hash: Option<u64>,
    pub prompts: Vec<TagPrompt>,
}

/// One transmitted (or skipped) record in the chain walk, captured for
/// offline verification.
#[derive(Debug, Clone)]
pub struct TraceRecord {
    pub state: u16,
    /// Set on handoff-ladder rungs (state 0 refinements).
    pub rung: Option<u16>,
    pub skipped: bool,
    pub kl_bits: f64,
    pub payload_bits: u64,
    /// Chain state of every tile after this record.
    pub tile_states: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct ChainTrace {
    pub zbar_tiles: Vec<Vec<f64>>,
    pub hint_tiles: Vec<Vec<f64>>,
    pub tile_conds: Vec<Condition>,
    pub records: Vec<TraceRecord>,
    /// Last coded state per tile (z_{T-T_E}).
    pub boundary: Vec<Vec<f64>>,
    /// Final per-tile latents after free denoising (decode side only).
    pub final_tiles: Option<Vec<Vec<f64>>>,
}

/// Parameters after header-precision quantization, shared by both sides.
#[derive(Debug, Clone, Copy)]
struct Effective {
    t: usize,
    t_e: usize,
    kl_target_bits: f64,
    skip_threshold_bits: f64,
    sigma_fraction: f64,
    tag_cap: usize,
    hint_conditioning: bool,
    slack_bits: f64,
}

fn tile_setup(
    shape: (usize, usize),
    tile: usize,
    overlap: usize,
    sigma: f64,
) -> Result<(TileGrid, Vec<WeightMask>)> {
    let grid = make_grid(shape, tile, overlap)?;
    let masks = grid
        .tiles
        .iter()
        .map(|r| gaussian_mask((r.rows, r.cols), sigma))
        .collect::<Result<Vec<_>>>()?;
    Ok((grid, masks))
}

/// Block-average downsample by HINT_BLOCK along both axes (partial edge
/// blocks average over their actual cells).
pub fn block_average(z: &Grid) -> Grid {
    let rows = z.rows().div_ceil(HINT_BLOCK);
    let cols = z.cols().div_ceil(HINT_BLOCK);
    let mut out = Grid::zeros(rows, cols);
    for br in 0..rows {
        for bc in 0..cols {
            let r1 = ((br + 1) * HINT_BLOCK).min(z.rows());
            let c1 = ((bc + 1) * HINT_BLOCK).min(z.cols());
            let mut sum = 0.0;
            let mut n = 0usize;
            for r in br * HINT_BLOCK..r1 {
                for c in bc * HINT_BLOCK..c1 {
                    sum += z.get(r, c);
                    n += 1;
                }
            }
            out.set(br, bc, sum / n as f64);
        }
    }
    out
}

/// Nearest (block-replicate) upsample back to the latent shape.
pub fn upsample_hint(y: &Grid, shape: (usize, usize)) -> Grid {
    let mut out = Grid::zeros(shape.0, shape.1);
    for r in 0..shape.0 {
        for c in 0..shape.1 {
            out.set(r, c, y.get(r / HINT_BLOCK, c / HINT_BLOCK));
        }
    }
    out
}

fn ladder_rungs(beta1: f64) -> usize {
    let floor = 2.0f64.powi(LADDER_FLOOR_LOG2);
    let mut w = beta1;
    let mut r = 0usize;
    while w > floor {
        w /= LADDER_RATIO;
        r += 1;
    }
    r
}

/// Design KL per dimension of one ladder rung, in bits. Both sides use this
/// constant for rung chunk layout and index-code hints.
fn ladder_hint_bits_per_dim() -> f64 {
    let c = LADDER_INFLATE;
    let k = LADDER_RATIO;
    (0.5 * (c * k).ln() + 0.5 * (1.0 / k + 1.0) / c - 0.5) / std::f64::consts::LN_2
}

/// Uniform chunk layout for ladder rungs: ranges plus their hint bits.
fn uniform_layout(dim: usize, per_dim_bits: f64, target_bits: f64) -> Vec<(std::ops::Range<usize>, f64)> {
    let size = ((target_bits / per_dim_bits).floor() as usize).clamp(1, dim.max(1));
    let mut out = Vec::with_capacity(dim.div_ceil(size.max(1)));
    let mut start = 0usize;
    while start < dim {
        let end = (start + size).min(dim);
        out.push((start..end, (end - start) as f64 * per_dim_bits));
        start = end;
    }
    out
}

enum StepIo<'a, 'b> {
    Encode { q_true: Vec<DiagonalGaussian>, writer: &'a mut BitWriter },
    Decode { reader: &'a mut BitReader<'b> },
}

enum Layout<'p> {
    /// Decoder-replicable stand-in for q, with a per-dimension pad (bits)
    /// covering the expected gap between the stand-in and the true target.
    Proxy(&'p [DiagonalGaussian], f64),
    /// Fixed per-dimension design KL (handoff-ladder rungs).
    Uniform(f64),
}

/// Effective stop-rule slack for one chunk: the configured slack trimmed so
/// expected work stays within the per-chunk budget.
fn effective_slack(true_kl_bits: f64, cfg_slack: f64) -> f64 {
    cfg_slack.min(WORK_BUDGET_LOG2 - true_kl_bits).max(2.0)
}

/// Transmit (encode) or receive (decode) one chain record across all tiles.
/// Returns the sampled per-tile values and the payload bits consumed.
///
/// The record starts with a 2-bit layout level: 0 codes chunks at the KL
/// target, 1 at a quarter of it, 2 one dimension per chunk. The encoder
/// probes levels in order and takes the first whose chunks are all within
/// the candidate budget, judged on true KLs it alone can see; the level
/// bits keep the decoder's layout in lockstep.
fn transmit_record(
    io: &mut StepIo<'_, '_>,
    p_tiles: &[DiagonalGaussian],
    proxy: &Layout<'_>,
    params: &Effective,
    key: &SamplerKey,
    slot: u16,
) -> Result<(Vec<Vec<f64>>, u64, u32)> {
    let layouts = |level: u8| -> Result<Vec<Vec<RccChunk>>> {
        let target = match level {
            0 => params.kl_target_bits,
            1 => (params.kl_target_bits / 4.0).max(q88_decode(1)),
            _ => 0.0, // one dimension per chunk
        };
        p_tiles
            .iter()
            .enumerate()
            .map(|(tile, p)| match proxy {
                Layout::Proxy(qs, pad) => {
                    if level == 2 {
                        let per_dim = qs[tile].kl_bits_per_dim(p)?;
                        per_dim
                            .iter()
                            .enumerate()
                            .map(|(d, &kl)| {
                                Ok(RccChunk {
                                    q: qs[tile].restrict(d..d + 1)?,
                                    p: p.restrict(d..d + 1)?,
                                    dim_range: d..d + 1,
                                    kl_bits: kl + pad,
                                    stream_id: derive_stream_id(
                                        StreamKind::Candidate,
                                        tile as u16,
                                        slot,
                                        d as u32,
                                    ),
                                    over_budget: false,
                                })
                            })
                            .collect()
                    } else {
                        chunk_with_streams(&qs[tile], p, target, tile as u16, slot, *pad)
                    }
                }
                Layout::Uniform(per_dim) => {
                    let t = if level == 2 { 0.0 } else { target };
                    uniform_layout(p.dim(), *per_dim, t)
                        .into_iter()
                        .enumerate()
                        .map(|(ordinal, (range, hint))| {
                            Ok(RccChunk {
                                q: p.restrict(range.clone())?,
                                p: p.restrict(range.clone())?,
                                dim_range: range,
                                kl_bits: hint,
                                stream_id: derive_stream_id(
                                    StreamKind::Candidate,
                                    tile as u16,
                                    slot,
                                    ordinal as u32,
                                ),
                                over_budget: false,
                            })
                        })
                        .collect()
                }
            })
            .collect()
    };

    match io {
        StepIo::Encode { q_true, writer } => {
            let start_bits = writer.len_bits();
            // Pick the first layout level whose chunks all fit the candidate
            // budget (true KLs are encoder-side knowledge). Level 2 always
            // proceeds: dimensions beyond the budget run truncated searches.
            let mut chosen: Option<(u8, Vec<Vec<RccChunk>>, Vec<Vec<f64>>)> = None;
            for level in 0u8..=2 {
                let per_tile_chunks = layouts(level)?;
                let mut kls: Vec<Vec<f64>> = Vec::with_capacity(per_tile_chunks.len());
                let mut feasible = true;
                for (tile, chunks) in per_tile_chunks.iter().enumerate() {
                    let mut tile_kls = Vec::with_capacity(chunks.len());
                    for c in chunks {
                        let qt = q_true[tile].restrict(c.dim_range.clone())?;
                        let kl = kl_bits(&qt, &c.p)?;
                        if !kl.is_finite() || kl > MAX_CHUNK_KL_BITS {
                            feasible = false;
                        }
                        tile_kls.push(kl);
                    }
                    kls.push(tile_kls);
                }
                if feasible || level == 2 {
                    chosen = Some((level, per_tile_chunks, kls));
                    break;
                }
            }
            let (level, per_tile_chunks, true_kls) = chosen.expect("loop always resolves");

            let mut jobs: Vec<(usize, &RccChunk, f64)> = Vec::new();
            for (tile, chunks) in per_tile_chunks.iter().enumerate() {
                for (ci, c) in chunks.iter().enumerate() {
                    jobs.push((tile, c, true_kls[tile][ci]));
                }
            }
            let results: Vec<Result<u64>> = jobs
                .par_iter()
                .map(|(tile, c, true_kl)| {
                    let qt = q_true[*tile].restrict(c.dim_range.clone())?;
                    let slack = effective_slack(*true_kl, params.slack_bits);
                    let w_min = w_min_with_slack(true_kl * std::f64::consts::LN_2, slack);
                    let cap = candidate_cap(*true_kl, slack).min(if *true_kl > MAX_CHUNK_KL_BITS {
                        TRUNCATED_SEARCH_CAP
                    } else {
                        HARD_CANDIDATE_CAP
                    });
                    Ok(pfr_encode_truncated(&qt, &c.p, w_min, key, c.stream_id, cap)?.index)
                })
                .collect();
            let mut by_tile: Vec<Vec<u64>> = vec![Vec::new(); p_tiles.len()];
            for ((tile, _, _), r) in jobs.iter().zip(results) {
                by_tile[*tile].push(r?);
            }

            writer.write_bits(level as u64, 2);
            let n_chunks: u32 = per_tile_chunks.iter().map(|c| c.len() as u32).sum();
            let mut states = Vec::with_capacity(p_tiles.len());
            for (tile, tile_chunks) in per_tile_chunks.iter().enumerate() {
                let mut v = vec![0.0; p_tiles[tile].dim()];
                for (c, &index) in tile_chunks.iter().zip(&by_tile[tile]) {
                    encode_index(index, c.kl_bits, writer)?;
                    // Advance the chain on the decoder's exact sample.
                    let z = pfr_decode(index, &c.p, key, c.stream_id)?;
                    v[c.dim_range.clone()].copy_from_slice(&z);
                }
                states.push(v);
            }
            Ok((states, writer.len_bits() - start_bits, n_chunks))
        }
        StepIo::Decode { reader } => {
            let start = reader.position();
            let level = reader.read_bits(2)? as u8;
            if level > 2 {
                return Err(Error::Malformed {
                    offset: reader.position(),
                    reason: "reserved layout level".into(),
                });
            }
            let per_tile_chunks = layouts(level)?;
            let n_chunks: u32 = per_tile_chunks.iter().map(|c| c.len() as u32).sum();
            let mut states = Vec::with_capacity(p_tiles.len());
            for (tile, chunks) in per_tile_chunks.iter().enumerate() {
                let mut v = vec![0.0; p_tiles[tile].dim()];
                for c in chunks {
                    let index = decode_index(reader, c.kl_bits)?;
                    let z = pfr_decode(index, &c.p, key, c.stream_id)?;
                    v[c.dim_range.clone()].copy_from_slice(&z);
                }
                states.push(v);
            }
            Ok((states, reader.position() - start, n_chunks))
        }
    }
}

/// Crop per-tile vectors out of a full grid.
fn crop_tiles(z: &Grid, grid: &TileGrid) -> Result<Vec<Vec<f64>>> {
    grid.tiles
        .iter()
        .map(|r| Ok(z.crop(r.row, r.col, r.rows, r.cols)?.into_data()))
        .collect()
}

enum WalkIo<'a, 'b> {
    Encode { zbar_tiles: &'a [Vec<f64>], writer: &'a mut BitWriter },
    Decode { reader: &'a mut BitReader<'b> },
}

/// Layout pad (bits per dimension) for a proxy posterior: the expected KL
/// shortfall of standing in the hint for the true target, with hint error
/// variance v_h scaled by the squared x0 coefficient of the mean against the
/// reference variance.
fn proxy_pad_bits(ctx_sched: &NoiseSchedule, state: usize, t: usize, hint_variance: f64) -> f64 {
    if state == t {
        // Forward marginal: mean coefficient sqrt(abar_T) against unit prior.
        ctx_sched.alpha_bar(t) * hint_variance / 2.0 / std::f64::consts::LN_2
    } else {
        let abar_t = ctx_sched.alpha_bar(state);
        let abar_next = ctx_sched.alpha_bar(state + 1);
        let c0 = abar_t.sqrt() * ctx_sched.beta(state + 1) / (1.0 - abar_next);
        c0 * c0 * hint_variance / (2.0 * ctx_sched.posterior_variance(state + 1))
            / std::f64::consts::LN_2
    }
}

/// The shared chain walk over coded states z_T .. z_{T-T_E}. In encode mode
/// it fills the skip bitmap from true per-step KLs; in decode mode it
/// replays the bitmap. Returns the boundary state per tile.
#[allow(clippy::too_many_arguments)]
fn walk_chain<D: Denoiser>(
    ctx: &PipelineContext<D>,
    params: &Effective,
    grid: &TileGrid,
    conds: &[Condition],
    hint_tiles: &[Vec<f64>],
    hint_variance: f64,
    key: &SamplerKey,
    mut io: WalkIo<'_, '_>,
    skipped: &mut [bool],
    steps: &mut Vec<StepReport>,
    mut trace: Option<&mut Vec<TraceRecord>>,
) -> Result<Vec<Vec<f64>>> {
    let sched = &ctx.schedule;
    let t = params.t;
    let t_e = params.t_e;
    let mut states: Vec<Vec<f64>> = Vec::new();

    if t_e == 0 {
        // Nothing coded: the chain starts from a prior draw on the shared
        // denoise stream.
        for (tile, rect) in grid.tiles.iter().enumerate() {
            let p = DiagonalGaussian::standard(rect.rows * rect.cols);
            let sid = derive_stream_id(StreamKind::Denoise, tile as u16, t as u16, 0);
            states.push(simulate(1, &p, key, sid)?);
        }
        return Ok(states);
    }

    for state in (t - t_e..=t).rev() {
        let is_zt = state == t;
        let p_tiles: Vec<DiagonalGaussian> = if is_zt {
            grid.tiles.iter().map(|r| DiagonalGaussian::standard(r.rows * r.cols)).collect()
        } else {
            grid.tiles
                .iter()
                .enumerate()
                .map(|(i, _)| reverse_kernel(&ctx.denoiser, &states[i], state, &conds[i], sched))
                .collect::<Result<Vec<_>>>()?
        };

        if state == 0 {
            // Final handoff (T_E = T only): a ladder of shrinking-variance
            // refinements pins z_0 to the coding target. Never skipped.
            let rungs = ladder_rungs(sched.beta(1));
            let per_dim = ladder_hint_bits_per_dim();
            let mut current_p = p_tiles;
            let mut total_kl = 0.0;
            let mut total_bits = 0u64;
            let mut total_chunks = 0u32;
            for rung in 0..rungs {
                let q_var = sched.beta(1) / LADDER_RATIO.powi(rung as i32 + 1);
                let slot = (t + 1 + rung) as u16;
                let (new_states, bits_here, chunks_here, kl_here) = match &mut io {
                    WalkIo::Encode { zbar_tiles, writer } => {
                        let q_true: Vec<DiagonalGaussian> = zbar_tiles
                            .iter()
                            .map(|z| DiagonalGaussian::isotropic(z.clone(), q_var))
                            .collect::<Result<Vec<_>>>()?;
                        let mut kl = 0.0;
                        for (qt, p) in q_true.iter().zip(&current_p) {
                            kl += kl_bits(qt, p)?;
                        }
                        let mut sio = StepIo::Encode { q_true, writer };
                        let (s, b, c) =
                            transmit_record(&mut sio, &current_p, &Layout::Uniform(per_dim), params, key, slot)?;
                        (s, b, c, kl)
                    }
                    WalkIo::Decode { reader } => {
                        let mut sio = StepIo::Decode { reader };
                        let (s, b, c) =
                            transmit_record(&mut sio, &current_p, &Layout::Uniform(per_dim), params, key, slot)?;
                        (s, b, c, f64::NAN)
                    }
                };
                total_kl += kl_here;
                total_bits += bits_here;
                total_chunks += chunks_here;
                if let Some(tr) = trace.as_deref_mut() {
                    tr.push(TraceRecord {
                        state: 0,
                        rung: Some(rung as u16),
                        skipped: false,
                        kl_bits: kl_here,
                        payload_bits: bits_here,
                        tile_states: new_states.clone(),
                    });
                }
                current_p = new_states
                    .iter()
                    .map(|z| DiagonalGaussian::isotropic(z.clone(), LADDER_INFLATE * q_var))
                    .collect::<Result<Vec<_>>>()?;
                states = new_states;
            }
            steps.push(StepReport {
                state: 0,
                kl_bits: total_kl,
                payload_bits: total_bits,
                chunks: total_chunks,
                skipped: false,
            });
            continue;
        }

        let slot = t - state;
        // True posteriors and the skip decision (encode); bitmap (decode).
        let q_true_and_kl = match &io {
            WalkIo::Encode { zbar_tiles, .. } => {
                let q_true: Vec<DiagonalGaussian> = if is_zt {
                    zbar_tiles.iter().map(|z| forward_marginal(z, t, sched)).collect::<Result<Vec<_>>>()?
                } else {
                    zbar_tiles
                        .iter()
                        .enumerate()
                        .map(|(i, z)| posterior(z, &states[i], state, sched))
                        .collect::<Result<Vec<_>>>()?
                };
                let mut step_kl = 0.0;
                for (qt, p) in q_true.iter().zip(&p_tiles) {
                    step_kl += kl_bits(qt, p)?;
                }
                skipped[slot] = step_kl < params.skip_threshold_bits;
                Some((q_true, step_kl))
            }
            WalkIo::Decode { .. } => None,
        };

        if skipped[slot] {
            // Both sides substitute a draw from the shared reference kernel.
            let mut new_states = Vec::with_capacity(grid.len());
            for (tile, p) in p_tiles.iter().enumerate() {
                let sid = derive_stream_id(StreamKind::Skip, tile as u16, state as u16, 0);
                new_states.push(simulate(1, p, key, sid)?);
            }
            let kl = q_true_and_kl.as_ref().map(|(_, k)| *k).unwrap_or(f64::NAN);
            steps.push(StepReport {
                state: state as u16,
                kl_bits: kl,
                payload_bits: 0,
                chunks: 0,
                skipped: true,
            });
            if let Some(tr) = trace.as_deref_mut() {
                tr.push(TraceRecord {
                    state: state as u16,
                    rung: None,
                    skipped: true,
                    kl_bits: kl,
                    payload_bits: 0,
                    tile_states: new_states.clone(),
                });
            }
            states = new_states;
            continue;
        }

        // Proxy posterior for layout and hints, built from the transmitted
        // hint in place of the true target; identical on both sides.
        let proxy: Vec<DiagonalGaussian> = grid
            .tiles
            .iter()
            .enumerate()
            .map(|(i, _)| {
                if is_zt {
                    forward_marginal(&hint_tiles[i], t, sched)
                } else {
                    posterior(&hint_tiles[i], &states[i], state, sched)
                }
            })
            .collect::<Result<Vec<_>>>()?;

        let pad = proxy_pad_bits(sched, state, t, hint_variance);
        let layout = Layout::Proxy(&proxy, pad);
        let (new_states, bits, chunks, kl) = match &mut io {
            WalkIo::Encode { writer, .. } => {
                let (q_true, step_kl) = q_true_and_kl.unwrap();
                let mut sio = StepIo::Encode { q_true, writer };
                let (s, b, c) = transmit_record(&mut sio, &p_tiles, &layout, params, key, state as u16)?;
                (s, b, c, step_kl)
            }
            WalkIo::Decode { reader } => {
                let mut sio = StepIo::Decode { reader };
                let (s, b, c) = transmit_record(&mut sio, &p_tiles, &layout, params, key, state as u16)?;
                (s, b, c, f64::NAN)
            }
        };
        steps.push(StepReport {
            state: state as u16,
            kl_bits: kl,
            payload_bits: bits,
            chunks,
            skipped: false,
        });
        if let Some(tr) = trace.as_deref_mut() {
            tr.push(TraceRecord {
                state: state as u16,
                rung: None,
                skipped: false,
                kl_bits: kl,
                payload_bits: bits,
                tile_states: new_states.clone(),
            });
        }
        states = new_states;
    }
    Ok(states)
}

/// Free conditional denoising from the boundary state down to z_0, on the
/// shared per-(tile, step) noise streams.
fn denoise_tail<D: Denoiser>(
    ctx: &PipelineContext<D>,
    params: &Effective,
    conds: &[Condition],
    key: &SamplerKey,
    mut states: Vec<Vec<f64>>,
) -> Result<Vec<Vec<f64>>> {
    for state in (0..params.t - params.t_e).rev() {
        for (tile, s) in states.iter_mut().enumerate() {
            let p = reverse_kernel(&ctx.denoiser, s, state, &conds[tile], &ctx.schedule)?;
            let sid = derive_stream_id(StreamKind::Denoise, tile as u16, state as u16, 0);
            *s = simulate(1, &p, key, sid)?;
        }
    }
    Ok(states)
}

/// Integrity hash over every normative section payload plus the boundary
/// chain state. Hashing the payloads directly means any corruption that
/// parses at all still perturbs the hash, even when its numeric effect
/// rounds away downstream.
fn chain_hash(sections: &[Section], boundary: &[Vec<f64>]) -> u64 {
    let mut bytes = Vec::new();
    for s in sections {
        bytes.extend_from_slice(&(s.tag as u8).to_le_bytes());
        bytes.extend_from_slice(&(s.bit_len as u32).to_le_bytes());
        bytes.extend_from_slice(&s.payload);
    }
    for tile in boundary {
        for v in tile {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    fnv1a64(&bytes)
}

fn build_tile_conds(
    prompts: &[TagPrompt],
    hint_full: Option<&Grid>,
    grid: &TileGrid,
    hint_variance: f64,
) -> Vec<Condition> {
    grid.tiles
        .iter()
        .zip(prompts)
        .map(|(rect, prompt)| {
            let latent_hint = hint_full.map(|h| HintField {
                values: h.crop(rect.row, rect.col, rect.rows, rect.cols).expect("tile within grid"),
                variance: hint_variance,
            });
            Condition {
                tags: prompt.indices.clone(),
                regions: Vec::new(),
                latent_hint,
                cells: Some(crate::tiling::tile_cells(rect, grid.full)),
            }
        })
        .collect()
}

fn validate_config<D: Denoiser>(cfg: &PipelineConfig, ctx: &PipelineContext<D>) -> Result<()> {
    let t = ctx.schedule.len();
    if cfg.t_e as usize > t {
        return Err(Error::Config(format!("t_e {} exceeds schedule length {t}", cfg.t_e)));
    }
    if !(0.0..=1.0).contains(&cfg.tau) {
        return Err(Error::Config(format!("tau {} outside [0, 1]", cfg.tau)));
    }
    if cfg.tile == 0 || cfg.overlap >= cfg.tile {
        return Err(Error::Config(format!("bad tile geometry {}/{}", cfg.tile, cfg.overlap)));
    }
    if q88_encode(cfg.kl_target_bits) == 0 {
        return Err(Error::Config(format!("kl_target_bits {} quantizes to zero", cfg.kl_target_bits)));
    }
    if !(cfg.latent_step > 0.0) {
        return Err(Error::Config(format!("latent_step {} must be positive", cfg.latent_step)));
    }
    if !(cfg.sigma_fraction > 0.0) {
        return Err(Error::Config(format!("sigma_fraction {} must be positive", cfg.sigma_fraction)));
    }
    let shape = ctx.autoencoder.latent_shape();
    if shape.0 > u16::MAX as usize || shape.1 > u16::MAX as usize {
        return Err(Error::Config("latent shape exceeds header width".into()));
    }
    Ok(())
}

pub fn encode<D: Denoiser>(
    x: &Grid,
    cond: &Condition,
    cfg: &PipelineConfig,
    ctx: &PipelineContext<D>,
) -> Result<(Vec<u8>, EncodeReport)> {
    let (bytes, report, _) = encode_traced(x, cond, cfg, ctx, false)?;
    Ok((bytes, report))
}

pub fn encode_traced<D: Denoiser>(
    x: &Grid,
    cond: &Condition,
    cfg: &PipelineConfig,
    ctx: &PipelineContext<D>,
    want_trace: bool,
) -> Result<(Vec<u8>, EncodeReport, Option<ChainTrace>)> {
    validate_config(cfg, ctx)?;
    if x.shape() != ctx.autoencoder.pixel_shape() {
        return Err(Error::ShapeMismatch {
            context: format!("input {:?} vs pixel shape {:?}", x.shape(), ctx.autoencoder.pixel_shape()),
        });
    }
    for &tag in &cond.tags {
        if tag >= ctx.vocab.len() {
            return Err(Error::TagOutOfRange { index: tag, vocab: ctx.vocab.len() });
        }
    }
    let t = ctx.schedule.len();
    let shape = ctx.autoencoder.latent_shape();

    // Explicit branch: blend the two latents, downsample to the hint.
    let z = ctx.autoencoder.encode_perceptual(x)?;
    let z_tilde = ctx.autoencoder.encode_mse(x)?;
    let zbar = Grid::new(shape.0, shape.1, blend(z.data(), z_tilde.data(), cfg.tau)?)?;
    let y = block_average(&zbar);

    let mut latent_w = BitWriter::new();
    let (quantized, _) = latent_encode(&y, cfg.latent_step, &mut latent_w)?;
    let y_deq = quantized.dequantize();
    let hint_full = upsample_hint(&y_deq, shape);
    let hint_variance = cfg.latent_step * cfg.latent_step / 12.0 + HINT_SPREAD_VARIANCE;

    let params = Effective {
        t,
        t_e: cfg.t_e as usize,
        kl_target_bits: q88_decode(q88_encode(cfg.kl_target_bits)),
        skip_threshold_bits: q88_decode(q88_encode(cfg.skip_threshold_bits)),
        sigma_fraction: q88_decode(q88_encode(cfg.sigma_fraction)),
        tag_cap: cfg.tag_cap as usize,
        hint_conditioning: cfg.hint_conditioning,
        slack_bits: cfg.pfr_slack_bits,
    };
    let (grid, _masks) = tile_setup(shape, cfg.tile as usize, cfg.overlap as usize, params.sigma_fraction)?;
    let full_cond = Condition {
        tags: cond.tags.clone(),
        regions: cond.regions.clone(),
        latent_hint: if params.hint_conditioning {
            Some(HintField { values: hint_full.clone(), variance: hint_variance })
        } else {
            None
        },
        cells: None,
    };
    let tile_conds = partition_condition(&full_cond, &grid, params.tag_cap)?;

    // Tag sections: one prompt per tile, row-major.
    let mut tags_w = BitWriter::new();
    for c in &tile_conds {
        tag_encode(&TagPrompt::new(c.tags.clone()), &ctx.vocab, &mut tags_w)?;
    }

    // Chain walk.
    let zbar_tiles = crop_tiles(&zbar, &grid)?;
    let hint_tiles = crop_tiles(&hint_full, &grid)?;
    let key = SamplerKey::from_seed(cfg.seed);
    let mut rcc_w = BitWriter::new();
    let mut skipped = vec![false; t];
    let mut steps = Vec::new();
    let mut trace_records = want_trace.then(Vec::new);
    let boundary = walk_chain(
        ctx,
        &params,
        &grid,
        &tile_conds,
        &hint_tiles,
        hint_variance,
        &key,
        WalkIo::Encode { zbar_tiles: &zbar_tiles, writer: &mut rcc_w },
        &mut skipped,
        &mut steps,
        trace_records.as_mut(),
    )?;

    let header = StreamHeader {
        schedule_index: ctx.schedule.registry_index(),
        t: t as u16,
        t_e: cfg.t_e,
        tau_q: q8_encode(cfg.tau),
        flags: if params.hint_conditioning { FLAG_HINT_CONDITIONING } else { 0 },
        seed: cfg.seed,
        tile: cfg.tile,
        overlap: cfg.overlap,
        tag_cap: cfg.tag_cap,
        sigma_q: q88_encode(cfg.sigma_fraction),
        kl_target_q: q88_encode(cfg.kl_target_bits),
        skip_threshold_q: q88_encode(cfg.skip_threshold_bits),
        vocab_hash: ctx.vocab.hash(),
        shape: (shape.0 as u16, shape.1 as u16),
        skipped,
    };
    let header_section = header.write()?;
    let mut sections = vec![
        header_section,
        Section::from_writer(SectionTag::Tags, tags_w)?,
        Section::from_writer(SectionTag::Latent, latent_w)?,
        Section::from_writer(SectionTag::Rcc, rcc_w)?,
    ];
    let hash = chain_hash(&sections, &boundary);
    if cfg.emit_trailer {
        let mut tw = BitWriter::new();
        tw.write_bits(hash, 64);
        sections.push(Section::from_writer(SectionTag::Trailer, tw)?);
    }
    let bytes = write_stream(&sections);

    // Exact accounting: stream preamble plus per-section frame, payload and
    // padding; the rcc section splits into per-step payload and overhead.
    let framed = |s: &Section| 40 + s.payload.len() as u64 * 8;
    let header_bits = 40 + framed(&sections[0]);
    let tag_bits = framed(&sections[1]);
    let latent_bits = framed(&sections[2]);
    let implicit: u64 = steps.iter().map(|s| s.payload_bits).sum();
    let rcc_overhead_bits = framed(&sections[3]) - implicit;
    let trailer_bits = if cfg.emit_trailer { framed(&sections[4]) } else { 0 };
    let total_bits = bytes.len() as u64 * 8;
    debug_assert_eq!(
        total_bits,
        header_bits + tag_bits + latent_bits + implicit + rcc_overhead_bits + trailer_bits
    );
    let cells = (shape.0 * shape.1) as f64;
    let report = EncodeReport {
        total_bits,
        header_bits,
        tag_bits,
        latent_bits,
        rcc_overhead_bits,
        trailer_bits,
        steps,
        bpp: (total_bits - trailer_bits) as f64 / cells,
        chain_hash: hash,
    };
    let trace = trace_records.map(|records| ChainTrace {
        zbar_tiles,
        hint_tiles,
        tile_conds,
        records,
        boundary,
        final_tiles: None,
    });
    Ok((bytes, report, trace))
}

pub fn decode<D: Denoiser>(bytes: &[u8], ctx: &PipelineContext<D>) -> Result<(Grid, DecodeReport)> {
    let (grid, report, _) = decode_traced(bytes, ctx, false)?;
    Ok((grid, report))
}

pub fn decode_traced<D: Denoiser>(
    bytes: &[u8],
    ctx: &PipelineContext<D>,
    want_trace: bool,
) -> Result<(Grid, DecodeReport, Option<ChainTrace>)> {
    let sections = read_stream(bytes)?;
    if sections.len() < 4 || sections.len() > 5 {
        return Err(Error::Malformed {
            offset: 0,
            reason: format!("expected 4 or 5 sections, found {}", sections.len()),
        });
    }
    let expected =
        [SectionTag::Header, SectionTag::Tags, SectionTag::Latent, SectionTag::Rcc, SectionTag::Trailer];
    for (s, &tag) in sections.iter().zip(&expected) {
        if s.tag != tag {
            return Err(Error::Malformed {
                offset: 0,
                reason: format!("section order violation: found {:?}, expected {:?}", s.tag, tag),
            });
        }
    }
    let header = StreamHeader::read(&sections[0])?;
    if header.schedule_index != ctx.schedule.registry_index() {
        return Err(Error::UnknownSchedule(header.schedule_index));
    }
    if header.t as usize != ctx.schedule.len() {
        return Err(Error::Malformed {
            offset: 0,
            reason: format!("header T {} vs schedule length {}", header.t, ctx.schedule.len()),
        });
    }
    if header.t_e > header.t {
        return Err(Error::Malformed {
            offset: 0,
            reason: format!("T_E {} exceeds T {}", header.t_e, header.t),
        });
    }
    if header.vocab_hash != ctx.vocab.hash() {
        return Err(Error::VocabHashMismatch { stream: header.vocab_hash, local: ctx.vocab.hash() });
    }
    let shape = ctx.autoencoder.latent_shape();
    if header.shape != (shape.0 as u16, shape.1 as u16) {
        return Err(Error::ShapeMismatch {
            context: format!("stream shape {:?} vs context latent {:?}", header.shape, shape),
        });
    }
    if header.tile == 0 || header.overlap >= header.tile {
        return Err(Error::Malformed {
            offset: 0,
            reason: format!("bad tile geometry {}/{}", header.tile, header.overlap),
        });
    }
    if header.kl_target_q == 0 {
        return Err(Error::Malformed { offset: 0, reason: "zero kl target".into() });
    }
    let max_slot = (header.t_e as usize).min(header.t as usize - 1);
    for (i, &s) in header.skipped.iter().enumerate() {
        if s && (header.t_e == 0 || i > max_slot) {
            return Err(Error::Malformed {
                offset: 0,
                reason: format!("skip bit {i} set outside the coded range"),
            });
        }
    }

    let params = Effective {
        t: header.t as usize,
        t_e: header.t_e as usize,
        kl_target_bits: header.kl_target_bits(),
        skip_threshold_bits: header.skip_threshold_bits(),
        sigma_fraction: header.sigma_fraction(),
        tag_cap: header.tag_cap as usize,
        hint_conditioning: header.flags & FLAG_HINT_CONDITIONING != 0,
        slack_bits: 0.0,
    };
    let (grid, masks) =
        tile_setup(shape, header.tile as usize, header.overlap as usize, params.sigma_fraction)?;

    // Tags: one prompt per tile; the section must hold exactly those.
    let mut tag_reader = sections[1].reader()?;
    let mut prompts = Vec::with_capacity(grid.len());
    for _ in 0..grid.len() {
        let p = tag_decode(&mut tag_reader, &ctx.vocab)?;
        if p.indices.len() > params.tag_cap {
            return Err(Error::Malformed {
                offset: tag_reader.position(),
                reason: format!("prompt of {} tags exceeds cap {}", p.indices.len(), params.tag_cap),
            });
        }
        prompts.push(p);
    }
    if tag_reader.remaining() != 0 {
        return Err(Error::Malformed {
            offset: tag_reader.position(),
            reason: "trailing bits in tag section".into(),
        });
    }

    // Latent hint.
    let mut latent_reader = sections[2].reader()?;
    let quantized = latent_decode(&mut latent_reader)?;
    if latent_reader.remaining() != 0 {
        return Err(Error::Malformed {
            offset: latent_reader.position(),
            reason: "trailing bits in latent section".into(),
        });
    }
    let expect_hint = (shape.0.div_ceil(HINT_BLOCK), shape.1.div_ceil(HINT_BLOCK));
    if quantized.shape != expect_hint {
        return Err(Error::Malformed {
            offset: 0,
            reason: format!("hint shape {:?} vs expected {:?}", quantized.shape, expect_hint),
        });
    }
    let y_deq = quantized.dequantize();
    let hint_full = upsample_hint(&y_deq, shape);
    let hint_tiles = crop_tiles(&hint_full, &grid)?;
    let hint_variance = quantized.step * quantized.step / 12.0 + HINT_SPREAD_VARIANCE;
    let tile_conds = build_tile_conds(
        &prompts,
        params.hint_conditioning.then_some(&hint_full),
        &grid,
        hint_variance,
    );

    // Chain replay.
    let key = SamplerKey::from_seed(header.seed);
    let mut rcc_reader = sections[3].reader()?;
    let mut skipped = header.skipped.clone();
    let mut steps = Vec::new();
    let mut trace_records = want_trace.then(Vec::new);
    let boundary = walk_chain(
        ctx,
        &params,
        &grid,
        &tile_conds,
        &hint_tiles,
        hint_variance,
        &key,
        WalkIo::Decode { reader: &mut rcc_reader },
        &mut skipped,
        &mut steps,
        trace_records.as_mut(),
    )?;
    if rcc_reader.remaining() != 0 {
        return Err(Error::Malformed {
            offset: rcc_reader.position(),
            reason: "trailing bits in rcc section".into(),
        });
    }

    let hash = chain_hash(&sections[0..4], &boundary);
    let trailer_hash = if sections.len() == 5 {
        if sections[4].bit_len != 64 {
            return Err(Error::Malformed { offset: 0, reason: "trailer must be 64 bits".into() });
        }
        let mut tr = sections[4].reader()?;
        let stored = tr.read_bits(64)?;
        if stored != hash {
            return Err(Error::ChainHashMismatch { expected: stored, actual: hash });
        }
        Some(stored)
    } else {
        None
    };

    // Free denoising and reconstruction.
    let final_tiles = denoise_tail(ctx, &params, &tile_conds, &key, boundary.clone())?;
    let outputs: Vec<Grid> = grid
        .tiles
        .iter()
        .zip(&final_tiles)
        .map(|(r, v)| Grid::new(r.rows, r.cols, v.clone()))
        .collect::<Result<Vec<_>>>()?;
    let z_hat = merge(&outputs, &grid, &masks)?;
    let x_hat = ctx.autoencoder.decode(&z_hat)?;

    let report = DecodeReport { header, chain_hash: hash, trailer_hash, prompts };
    let trace = trace_records.map(|records| ChainTrace {
        zbar_tiles: Vec::new(),
        hint_tiles,
        tile_conds,
        records,
        boundary,
        final_tiles: Some(final_tiles),
    });
    Ok((x_hat, report, trace))
}

/// One row of a rate sweep.
#[derive(Debug, Clone)]
pub struct SweepRow {
    pub t_e: u16,
    pub mean_bits: f64,
    pub mean_mse: f64,
    pub se_mse: f64,
    pub mean_implicit_bits: f64,
}

/// Encode/decode a batch at each T_E and report averaged rate/distortion.
pub fn rate_sweep<D: Denoiser>(
    batch: &[(Grid, Condition)],
    te_values: &[u16],
    cfg: &PipelineConfig,
    ctx: &PipelineContext<D>,
) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::with_capacity(te_values.len());
    for &te in te_values {
        if te as usize > ctx.schedule.len() {
            return Err(Error::Config(format!("t_e {te} exceeds schedule length")));
        }
        let results: Vec<Result<(f64, f64, f64)>> = batch
            .par_iter()
            .enumerate()
            .map(|(i, (x, cond))| {
                let mut ci = cfg.clone();
                ci.t_e = te;
                ci.seed = per_item_seed(cfg.seed, te as u64, i as u64);
                let (bytes, report) = encode(x, cond, &ci, ctx)?;
                let (x_hat, _) = decode(&bytes, ctx)?;
                Ok((report.total_bits as f64, x.mse(&x_hat)?, report.implicit_bits() as f64))
            })
            .collect();
        let mut bits = Vec::new();
        let mut mses = Vec::new();
        let mut implicit = Vec::new();
        for r in results {
            let (b, m, im) = r?;
            bits.push(b);
            mses.push(m);
            implicit.push(im);
        }
        let n = bits.len() as f64;
        let mean_mse = mses.iter().sum::<f64>() / n;
        let var =
            mses.iter().map(|m| (m - mean_mse) * (m - mean_mse)).sum::<f64>() / (n - 1.0).max(1.0);
        rows.push(SweepRow {
            t_e: te,
            mean_bits: bits.iter().sum::<f64>() / n,
            mean_mse,
            se_mse: (var / n).sqrt(),
            mean_implicit_bits: implicit.iter().sum::<f64>() / n,
        });
    }
    Ok(rows)
}

/// One row of a distortion-perception tradeoff curve.
#[derive(Debug, Clone)]
pub struct TradeoffRow {
    pub tau: f64,
    pub mean_bits: f64,
    pub mean_mse: f64,
    pub se_mse: f64,
}

/// Run the full codec at each tau over a batch with a fixed seed schedule.
pub fn distortion_curve<D: Denoiser>(
    batch: &[(Grid, Condition)],
    taus: &[f64],
    cfg: &PipelineConfig,
    ctx: &PipelineContext<D>,
) -> Result<Vec<TradeoffRow>> {
    let mut rows = Vec::with_capacity(taus.len());
    for &tau in taus {
        if !(0.0..=1.0).contains(&tau) {
            return Err(Error::Config(format!("tau {tau} outside [0, 1]")));
        }
        let results: Vec<Result<(f64, f64)>> = batch
            .par_iter()
            .enumerate()
            .map(|(i, (x, cond))| {
                let mut ci = cfg.clone();
                ci.tau = tau;
                ci.seed = per_item_seed(cfg.seed, cfg.t_e as u64, i as u64);
                let (bytes, report) = encode(x, cond, &ci, ctx)?;
                let (x_hat, _) = decode(&bytes, ctx)?;
                Ok((report.total_bits as f64, x.mse(&x_hat)?))
            })
            .collect();
        let mut bits = Vec::new();
        let mut mses = Vec::new();
        for r in results {
            let (b, m) = r?;
            bits.push(b);
            mses.push(m);
        }
        let n = bits.len() as f64;
        let mean_mse = mses.iter().sum::<f64>() / n;
        let var =
            mses.iter().map(|m| (m - mean_mse) * (m - mean_mse)).sum::<f64>() / (n - 1.0).max(1.0);
        rows.push(TradeoffRow {
            tau,
            mean_bits: bits.iter().sum::<f64>() / n,
            mean_mse,
            se_mse: (var / n).sqrt(),
        });
    }
    Ok(rows)
}

/// Deterministic per-item seed derivation for batch runs.
pub fn per_item_seed(base: u64, stratum: u64, item: u64) -> u64 {
    let mut z =
        base ^ stratum.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ item.wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
