//! Context construction from the key=value config grammar: schedule,
//! denoiser, autoencoder, and vocabulary. The same config file must be
//! supplied to encode and decode.

use drc_core::config::KeyValues;
use drc_core::diffusion::{MixtureModel, NoiseSchedule};
use drc_core::error::{Error, Result};
use drc_core::explicit::TagVocabulary;
use drc_core::pipeline::PipelineContext;
use drc_core::tradeoff::{matrix_from_bytes, LinearAutoencoder};

fn config_err(msg: String) -> Error {
    Error::Config(msg)
}

/// Schedule from config: `schedule=linear64|linear256` picks a built-in;
/// `schedule.index`, `schedule.t`, `schedule.beta_start`, `schedule.beta_end`
/// define an external linear schedule registered at index >= 16.
pub fn build_schedule(kv: &KeyValues) -> Result<NoiseSchedule> {
    if let Some(index) = kv.get("schedule.index") {
        let index: u16 = index.parse().map_err(|_| config_err("schedule.index must be a u16".into()))?;
        if index < drc_core::diffusion::FIRST_EXTERNAL_SCHEDULE {
            return Err(config_err(format!("schedule.index {index} collides with built-ins (< 16)")));
        }
        let t: usize = kv
            .get("schedule.t")
            .ok_or_else(|| config_err("schedule.t required with schedule.index".into()))?
            .parse()
            .map_err(|_| config_err("schedule.t must be an integer".into()))?;
        let b0: f64 = kv
            .get("schedule.beta_start")
            .ok_or_else(|| config_err("schedule.beta_start required".into()))?
            .parse()
            .map_err(|_| config_err("schedule.beta_start must be a real".into()))?;
        let b1: f64 = kv
            .get("schedule.beta_end")
            .ok_or_else(|| config_err("schedule.beta_end required".into()))?
            .parse()
            .map_err(|_| config_err("schedule.beta_end must be a real".into()))?;
        let id = kv.get("schedule.id").unwrap_or("external").to_string();
        return NoiseSchedule::linear(&id, index, t, b0, b1);
    }
    match kv.get("schedule").unwrap_or("linear64") {
        "linear64" => NoiseSchedule::builtin(drc_core::diffusion::SCHEDULE_LINEAR_64),
        "linear256" => NoiseSchedule::builtin(drc_core::diffusion::SCHEDULE_LINEAR_256),
        other => Err(config_err(format!("unknown schedule {other:?}"))),
    }
}

fn parse_reals(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|_| config_err(format!("bad real {v:?}"))))
        .collect()
}

/// Mixture from config: `mixture.weights=w0,w1,...` plus one
/// `mixture.mean.K=v0,v1,...` per component, and `mixture.obs_variance`.
/// Absent keys fall back to the deterministic synthetic mixture.
pub fn build_mixture(kv: &KeyValues, latent: (usize, usize), model_seed: u64, components: usize) -> Result<MixtureModel> {
    if let Some(weights) = kv.get("mixture.weights") {
        let weights = parse_reals(weights)?;
        let mut means = Vec::new();
        for k in 0..weights.len() {
            let key = format!("mixture.mean.{k}");
            let line = kv
                .get(&key)
                .ok_or_else(|| config_err(format!("{key} required with mixture.weights")))?;
            means.push(parse_reals(line)?);
        }
        let obs: f64 = kv
            .get("mixture.obs_variance")
            .unwrap_or("0.04")
            .parse()
            .map_err(|_| config_err("mixture.obs_variance must be a real".into()))?;
        return MixtureModel::new(means, weights, obs);
    }
    let toy = drc_core::bench::build_toy(latent, components, model_seed)?;
    Ok(toy.ctx.denoiser)
}

pub struct BuiltContext {
    pub ctx: PipelineContext<MixtureModel>,
}

/// Build the full pipeline context. The latent geometry comes from
/// `model.latent_rows/cols` or, when absent, from halving the input pixel
/// shape; the decoder matrix from `decoder_matrix=PATH` or the deterministic
/// synthetic construction under `model.seed`.
pub fn build_context(
    kv: &KeyValues,
    vocab_path: &std::path::Path,
    pixel_shape_hint: Option<(usize, usize)>,
) -> Result<BuiltContext> {
    let vocab_text = std::fs::read_to_string(vocab_path).map_err(|e| {
        config_err(format!("cannot read vocabulary file {}: {e}", vocab_path.display()))
    })?;
    let vocab = TagVocabulary::from_text(&vocab_text)?;

    let schedule = build_schedule(kv)?;
    let model_seed: u64 = kv
        .get("model.seed")
        .unwrap_or("17")
        .parse()
        .map_err(|_| config_err("model.seed must be a u64".into()))?;
    let components: usize = kv
        .get("model.components")
        .unwrap_or("4")
        .parse()
        .map_err(|_| config_err("model.components must be an integer".into()))?;

    let autoencoder = if let Some(path) = kv.get("decoder_matrix") {
        let bytes = std::fs::read(path)
            .map_err(|e| config_err(format!("cannot read decoder matrix {path}: {e}")))?;
        let d = matrix_from_bytes(&bytes)?;
        let latent = latent_shape(kv, None)?;
        let cells = latent.0 * latent.1;
        if d.ncols() != cells {
            return Err(config_err(format!(
                "decoder matrix has {} columns but latent shape {:?} needs {cells}",
                d.ncols(),
                latent
            )));
        }
        let pixels = pixel_shape(kv, d.nrows())?;
        LinearAutoencoder::new(d, latent, pixels)?
    } else {
        let latent = latent_shape(kv, pixel_shape_hint)?;
        let toy = drc_core::bench::build_toy(latent, components, model_seed)?;
        toy.ctx.autoencoder
    };

    let mixture = build_mixture(kv, autoencoder.latent_shape(), model_seed, components)?;
    if mixture.dim() != autoencoder.latent_shape().0 * autoencoder.latent_shape().1 {
        return Err(config_err(format!(
            "mixture dimension {} does not match latent shape {:?}",
            mixture.dim(),
            autoencoder.latent_shape()
        )));
    }
    Ok(BuiltContext { ctx: PipelineContext { schedule, denoiser: mixture, autoencoder, vocab } })
}

fn latent_shape(kv: &KeyValues, pixel_hint: Option<(usize, usize)>) -> Result<(usize, usize)> {
    match (kv.get("model.latent_rows"), kv.get("model.latent_cols")) {
        (Some(r), Some(c)) => {
            let r = r.parse().map_err(|_| config_err("model.latent_rows must be an integer".into()))?;
            let c = c.parse().map_err(|_| config_err("model.latent_cols must be an integer".into()))?;
            Ok((r, c))
        }
        (None, None) => match pixel_hint {
            Some((pr, pc)) => Ok((pr.div_ceil(2).max(1), pc.div_ceil(2).max(1))),
            None => Err(config_err(
                "model.latent_rows/model.latent_cols required (no input to infer from)".into(),
            )),
        },
        _ => Err(config_err("set both model.latent_rows and model.latent_cols".into())),
    }
}

fn pixel_shape(kv: &KeyValues, total: usize) -> Result<(usize, usize)> {
    match (kv.get("model.pixel_rows"), kv.get("model.pixel_cols")) {
        (Some(r), Some(c)) => {
            let r: usize = r.parse().map_err(|_| config_err("model.pixel_rows must be an integer".into()))?;
            let c: usize = c.parse().map_err(|_| config_err("model.pixel_cols must be an integer".into()))?;
            if r * c != total {
                return Err(config_err(format!("pixel shape {r}x{c} != matrix rows {total}")));
            }
            Ok((r, c))
        }
        _ => Err(config_err(
            "model.pixel_rows/model.pixel_cols required with decoder_matrix".into(),
        )),
    }
}

/// Parse a tags file: one tag per line, optionally followed by a region
/// `row col rows cols` in latent cells. Unknown tags are a config error.
pub fn parse_tags(
    text: &str,
    vocab: &TagVocabulary,
) -> Result<(Vec<usize>, Vec<Option<drc_core::diffusion::Rect>>)> {
    let mut tags = Vec::new();
    let mut regions = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let name = parts.next().unwrap();
        let index = vocab
            .index_of(name)
            .ok_or_else(|| config_err(format!("line {}: tag {name:?} not in vocabulary", lineno + 1)))?;
        let rest: Vec<&str> = parts.collect();
        let region = match rest.len() {
            0 => None,
            4 => {
                let nums: Result<Vec<usize>> = rest
                    .iter()
                    .map(|v| v.parse().map_err(|_| config_err(format!("bad region number {v:?}"))))
                    .collect();
                let n = nums?;
                Some(drc_core::diffusion::Rect { row: n[0], col: n[1], rows: n[2], cols: n[3] })
            }
            _ => {
                return Err(config_err(format!(
                    "line {}: expected 'tag' or 'tag row col rows cols'",
                    lineno + 1
                )))
            }
        };
        tags.push(index);
        regions.push(region);
    }
    Ok((tags, regions))
}
