//! Line-oriented key=value configuration grammar shared by the CLI and the
//! bench tooling. `#` starts a comment; blank lines are ignored; later keys
//! override earlier ones.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::pipeline::PipelineConfig;

#[derive(Debug, Clone, Default)]
pub struct KeyValues {
    map: BTreeMap<String, String>,
}

impl KeyValues {
    pub fn parse(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::Config(format!("line {}: expected key=value, got {raw:?}", lineno + 1)));
            };
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
        Ok(Self { map })
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.map.get(key).map(String::as_str)
    }

    pub fn set(&mut self, key: &str, value: String) {
        self.map.insert(key.to_string(), value);
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.map.keys().map(String::as_str)
    }

    fn parse_as<T: std::str::FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.map.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse::<T>()
                .map(Some)
                .map_err(|_| Error::Config(format!("key {key}: cannot parse {v:?}"))),
        }
    }

    /// Overlay the pipeline keys onto a base configuration.
    pub fn apply_pipeline(&self, base: &PipelineConfig) -> Result<PipelineConfig> {
        let mut cfg = base.clone();
        if let Some(v) = self.parse_as::<u16>("te")? {
            cfg.t_e = v;
        }
        if let Some(v) = self.parse_as::<f64>("tau")? {
            cfg.tau = v;
        }
        if let Some(v) = self.parse_as::<u64>("seed")? {
            cfg.seed = v;
        }
        if let Some(v) = self.parse_as::<u16>("tile")? {
            cfg.tile = v;
        }
        if let Some(v) = self.parse_as::<u16>("overlap")? {
            cfg.overlap = v;
        }
        if let Some(v) = self.parse_as::<f64>("sigma_fraction")? {
            cfg.sigma_fraction = v;
        }
        if let Some(v) = self.parse_as::<u16>("tag_cap")? {
            cfg.tag_cap = v;
        }
        if let Some(v) = self.parse_as::<f64>("kl_target_bits")? {
            cfg.kl_target_bits = v;
        }
        if let Some(v) = self.parse_as::<f64>("skip_threshold_bits")? {
            cfg.skip_threshold_bits = v;
        }
        if let Some(v) = self.parse_as::<f64>("pfr_slack_bits")? {
            cfg.pfr_slack_bits = v;
        }
        if let Some(v) = self.parse_as::<f64>("latent_step")? {
            cfg.latent_step = v;
        }
        if let Some(v) = self.parse_as::<bool>("hint_conditioning")? {
            cfg.hint_conditioning = v;
        }
        if let Some(v) = self.parse_as::<bool>("emit_trailer")? {
            cfg.emit_trailer = v;
        }
        Ok(cfg)
    }

    /// Echo a fully resolved pipeline configuration in the same grammar.
    pub fn echo_pipeline(cfg: &PipelineConfig) -> String {
        format!(
            "te={}\ntau={}\nseed={}\ntile={}\noverlap={}\nsigma_fraction={}\ntag_cap={}\n\
             kl_target_bits={}\nskip_threshold_bits={}\npfr_slack_bits={}\nlatent_step={}\n\
             hint_conditioning={}\nemit_trailer={}\n",
            cfg.t_e,
            cfg.tau,
            cfg.seed,
            cfg.tile,
            cfg.overlap,
            cfg.sigma_fraction,
            cfg.tag_cap,
            cfg.kl_target_bits,
            cfg.skip_threshold_bits,
            cfg.pfr_slack_bits,
            cfg.latent_step,
            cfg.hint_conditioning,
            cfg.emit_trailer,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_overrides() {
        let kv = KeyValues::parse("te=8\n# comment\ntau = 0.5\n\nte=12\n").unwrap();
        let cfg = kv.apply_pipeline(&PipelineConfig::default()).unwrap();
        assert_eq!(cfg.t_e, 12);
        assert_eq!(cfg.tau, 0.5);
    }

    #[test]
    fn echo_round_trips() {
        let mut cfg = PipelineConfig::default();
        cfg.t_e = 33;
        cfg.tau = 0.25;
        cfg.hint_conditioning = false;
        let echoed = KeyValues::echo_pipeline(&cfg);
        let back = KeyValues::parse(&echoed).unwrap().apply_pipeline(&PipelineConfig::default()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn rejects_malformed_lines() {
        assert!(KeyValues::parse("not a kv line").is_err());
        let kv = KeyValues::parse("te=notanumber").unwrap();
        assert!(kv.apply_pipeline(&PipelineConfig::default()).is_err());
    }
}
