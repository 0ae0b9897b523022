//! Deterministic desk-scale models and the bench suites behind the CLI's
//! `bench` subcommand: PFR codelength grids, tradeoff curves, and
//! explicit/implicit rate-allocation sweeps.

use rayon::prelude::*;

use crate::bitstream::BitWriter;
use crate::diffusion::{Condition, MixtureModel, NoiseSchedule};
use crate::error::Result;
use crate::explicit::TagVocabulary;
use crate::gaussian::{kl_bits, DiagonalGaussian};
use crate::grid::Grid;
use crate::pipeline::{
    distortion_curve, encode, per_item_seed, rate_sweep, PipelineConfig, PipelineContext, SweepRow,
    TradeoffRow,
};
use crate::rcc::{encode_index, pfr_encode, w_min_with_slack};
use crate::sampler::{DeterministicSampler, SamplerKey};
use crate::tradeoff::LinearAutoencoder;
use nalgebra::DMatrix;

/// A complete desk-scale model: schedule, mixture denoiser, autoencoder and
/// vocabulary, plus the generator parameters needed to draw matched inputs.
pub struct ToyModel {
    pub ctx: PipelineContext<MixtureModel>,
    pub components: usize,
    pub seed: u64,
}

/// Smooth deterministic decoder matrix: each latent cell paints a soft 2x2
/// pixel footprint with a small seeded perturbation, giving a well-
/// conditioned, mildly non-orthogonal D. The footprint decays fast enough
/// that neighbor cross-talk stays small and the diagonally-whitened
/// transpose is a usable (but strictly worse) encoder.
fn synth_decoder(latent: (usize, usize), seed: u64) -> DMatrix<f64> {
    let (lh, lw) = latent;
    let (ph, pw) = (lh * 2, lw * 2);
    let key = SamplerKey::from_seed(seed);
    let mut s = DeterministicSampler::new(&key, 0xD0);
    let mut d = DMatrix::zeros(ph * pw, lh * lw);
    for lr in 0..lh {
        for lc in 0..lw {
            let col = lr * lw + lc;
            for pr in 0..ph {
                for pc in 0..pw {
                    // Distance of the pixel to the latent cell center in
                    // latent units.
                    let dr = (pr as f64 + 0.5) / 2.0 - (lr as f64 + 0.5);
                    let dc = (pc as f64 + 0.5) / 2.0 - (lc as f64 + 0.5);
                    let dist2 = dr * dr + dc * dc;
                    if dist2 <= 2.25 {
                        let w = (-2.5 * dist2).exp();
                        let jitter = 1.0 + 0.10 * s.next_standard_normal();
                        d[(pr * pw + pc, col)] = w * jitter;
                    }
                }
            }
        }
    }
    d
}

/// Smooth component means: low-frequency seeded fields of unit-ish scale.
fn synth_component_means(latent: (usize, usize), components: usize, seed: u64) -> Vec<Vec<f64>> {
    let (lh, lw) = latent;
    let key = SamplerKey::from_seed(seed);
    (0..components)
        .map(|k| {
            let mut s = DeterministicSampler::new(&key, 0xC0 + k as u64);
            let fr = 0.4 + s.next_uniform() * 1.2;
            let fc = 0.4 + s.next_uniform() * 1.2;
            let pr = s.next_uniform() * std::f64::consts::TAU;
            let pc = s.next_uniform() * std::f64::consts::TAU;
            let amp = 1.2 + 0.6 * s.next_uniform();
            let mut m = Vec::with_capacity(lh * lw);
            for r in 0..lh {
                for c in 0..lw {
                    m.push(amp * ((fr * r as f64 + pr).sin() * (fc * c as f64 + pc).cos()));
                }
            }
            m
        })
        .collect()
}

/// Built-in bench vocabulary: one tag per mixture component plus filler
/// concepts so the code width is nontrivial.
pub fn synth_vocab(components: usize) -> TagVocabulary {
    let mut entries: Vec<String> = (0..components).map(|k| format!("component-{k}")).collect();
    for i in 0..(16usize.saturating_sub(components)) {
        entries.push(format!("filler-{i}"));
    }
    TagVocabulary::new(entries).expect("static vocabulary is valid")
}

/// Observation variance of the toy mixture.
pub const TOY_OBSERVATION_VARIANCE: f64 = 0.04;

pub fn build_toy(latent: (usize, usize), components: usize, seed: u64) -> Result<ToyModel> {
    let schedule = NoiseSchedule::builtin(0)?;
    let means = synth_component_means(latent, components, seed);
    let weights = vec![1.0 / components as f64; components];
    let denoiser = MixtureModel::new(means, weights, TOY_OBSERVATION_VARIANCE)?;
    let decoder = synth_decoder(latent, seed);
    let autoencoder = LinearAutoencoder::new(decoder, latent, (latent.0 * 2, latent.1 * 2))?;
    let vocab = synth_vocab(components);
    Ok(ToyModel {
        ctx: PipelineContext { schedule, denoiser, autoencoder, vocab },
        components,
        seed,
    })
}

impl ToyModel {
    /// Draw one pixel-space input from the mixture generator; returns the
    /// grid and the component that produced it.
    pub fn sample_input(&self, item: u64) -> Result<(Grid, usize)> {
        let key = SamplerKey::from_seed(self.seed ^ 0x5EED_0000);
        let mut s = DeterministicSampler::new(&key, item);
        let k = (s.next_uniform() * self.components as f64) as usize % self.components;
        let mean = self.ctx.denoiser.component_mean(k);
        let z_true: Vec<f64> = mean
            .iter()
            .map(|&m| m + TOY_OBSERVATION_VARIANCE.sqrt() * s.next_standard_normal())
            .collect();
        let latent = self.ctx.autoencoder.latent_shape();
        let z_grid = Grid::new(latent.0, latent.1, z_true)?;
        let mut x = self.ctx.autoencoder.decode(&z_grid)?;
        for v in x.data_mut() {
            *v += 0.01 * s.next_standard_normal();
        }
        Ok((x, k))
    }

    /// A batch of inputs with their true-component tag conditions.
    pub fn sample_batch(&self, n: usize) -> Result<Vec<(Grid, Condition)>> {
        (0..n)
            .map(|i| {
                let (x, k) = self.sample_input(i as u64)?;
                Ok((x, Condition::from_tags(vec![k])))
            })
            .collect()
    }
}

/// One row of the PFR codelength-bound grid.
#[derive(Debug, Clone)]
pub struct PfrBoundRow {
    pub kl_bits: f64,
    pub trials: u64,
    pub mean_bits: f64,
    pub ci95_bits: f64,
    pub bound_bits: f64,
    pub mean_candidates: f64,
}

/// Mean coded bits for mean-shifted unit Gaussians at each KL, against the
/// bound KL + log2(KL+1) + 5. The stop-rule slack shrinks with KL to keep
/// runtime bounded; truncation only ever shortens indices.
pub fn pfr_bound_suite(kls_bits: &[f64], trials: u64, seed: u64) -> Result<Vec<PfrBoundRow>> {
    let mut rows = Vec::with_capacity(kls_bits.len());
    for &kl in kls_bits {
        let shift = (2.0 * kl * std::f64::consts::LN_2).sqrt();
        let q = DiagonalGaussian::new(vec![shift], vec![1.0])?;
        let p = DiagonalGaussian::standard(1);
        let exact = kl_bits(&q, &p)?;
        let slack = (18.0 - kl).clamp(2.0, 12.0);
        let w_min = w_min_with_slack(exact * std::f64::consts::LN_2, slack);
        let results: Vec<Result<(u64, u64)>> = (0..trials)
            .into_par_iter()
            .map(|i| {
                let key = SamplerKey::from_seed(per_item_seed(seed, kl.to_bits(), i));
                let r = pfr_encode(&q, &p, w_min, &key, 1, 1 << 30)?;
                let mut w = BitWriter::new();
                let bits = encode_index(r.index, exact, &mut w)?;
                Ok((bits, r.candidates_examined))
            })
            .collect();
        let mut bits = Vec::with_capacity(trials as usize);
        let mut cands = 0u128;
        for r in results {
            let (b, c) = r?;
            bits.push(b as f64);
            cands += c as u128;
        }
        let n = bits.len() as f64;
        let mean = bits.iter().sum::<f64>() / n;
        let var = bits.iter().map(|b| (b - mean) * (b - mean)).sum::<f64>() / (n - 1.0);
        rows.push(PfrBoundRow {
            kl_bits: exact,
            trials,
            mean_bits: mean,
            ci95_bits: 1.96 * (var / n).sqrt(),
            bound_bits: exact + (exact + 1.0).log2() + 5.0,
            mean_candidates: cands as f64 / n,
        });
    }
    Ok(rows)
}

/// Tradeoff suite: (tau, bits, mse) rows on the toy model.
pub fn tradeoff_suite(
    toy: &ToyModel,
    taus: &[f64],
    samples: usize,
    cfg: &PipelineConfig,
) -> Result<Vec<TradeoffRow>> {
    let batch = toy.sample_batch(samples)?;
    distortion_curve(&batch, taus, cfg, &toy.ctx)
}

/// Rate sweep suite over T_E values.
pub fn rate_sweep_suite(
    toy: &ToyModel,
    te_values: &[u16],
    samples: usize,
    cfg: &PipelineConfig,
) -> Result<Vec<SweepRow>> {
    let batch = toy.sample_batch(samples)?;
    rate_sweep(&batch, te_values, cfg, &toy.ctx)
}

/// One row of the rate-allocation table: explicit/implicit split at roughly
/// fixed total rate, with the resulting distortion.
#[derive(Debug, Clone)]
pub struct AllocationRow {
    pub latent_step: f64,
    pub t_e: u16,
    pub mean_explicit_bits: f64,
    pub mean_implicit_bits: f64,
    pub mean_total_bits: f64,
    pub mean_mse: f64,
}

/// Sweep the explicit budget (via the hint quantization step) against the
/// implicit budget (via T_E): coarser hints push bits into the implicit
/// branch and vice versa.
pub fn rate_allocation_suite(
    toy: &ToyModel,
    points: &[(f64, u16)],
    samples: usize,
    cfg: &PipelineConfig,
) -> Result<Vec<AllocationRow>> {
    let batch = toy.sample_batch(samples)?;
    let mut rows = Vec::with_capacity(points.len());
    for &(step, te) in points {
        let results: Vec<Result<(f64, f64, f64, f64)>> = batch
            .par_iter()
            .enumerate()
            .map(|(i, (x, cond))| {
                let mut ci = cfg.clone();
                ci.latent_step = step;
                ci.t_e = te;
                ci.seed = per_item_seed(cfg.seed, te as u64 ^ step.to_bits(), i as u64);
                let (bytes, report) = encode(x, cond, &ci, &toy.ctx)?;
                let (x_hat, _) = crate::pipeline::decode(&bytes, &toy.ctx)?;
                Ok((
                    report.explicit_bits() as f64,
                    report.implicit_bits() as f64,
                    report.total_bits as f64,
                    x.mse(&x_hat)?,
                ))
            })
            .collect();
        let mut acc = [0.0f64; 4];
        let mut n = 0.0;
        for r in results {
            let (e, i, t, m) = r?;
            acc[0] += e;
            acc[1] += i;
            acc[2] += t;
            acc[3] += m;
            n += 1.0;
        }
        rows.push(AllocationRow {
            latent_step: step,
            t_e: te,
            mean_explicit_bits: acc[0] / n,
            mean_implicit_bits: acc[1] / n,
            mean_total_bits: acc[2] / n,
            mean_mse: acc[3] / n,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toy_model_builds_and_samples_deterministically() {
        let toy = build_toy((4, 4), 4, 7).unwrap();
        let (a, ka) = toy.sample_input(3).unwrap();
        let (b, kb) = toy.sample_input(3).unwrap();
        assert_eq!(a, b);
        assert_eq!(ka, kb);
        let (c, _) = toy.sample_input(4).unwrap();
        assert_ne!(a, c);
        assert_eq!(a.shape(), (8, 8));
    }

    #[test]
    fn toy_decoder_is_well_conditioned() {
        let toy = build_toy((4, 4), 4, 7).unwrap();
        assert!(toy.ctx.autoencoder.pseudo_inverse_residual() <= 1e-8);
    }
}
