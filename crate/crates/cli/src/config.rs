use std::path::Path;

use coeffcrypt::sim::SimConfig;
use coeffcrypt::{Error, Result, Weights};
use serde::Deserialize;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct WeightsFile {
    dc: Option<f64>,
    y: Option<f64>,
    u: Option<f64>,
    v: Option<f64>,
}

/// `--config` file. Everything but `version` is optional.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    version: u32,
    seed: Option<u64>,
    n_pmt1: Option<usize>,
    n_pmt2: Option<usize>,
    k_owner: Option<usize>,
    k_group: Option<usize>,
    k_g: Option<usize>,
    #[serde(default)]
    weights: WeightsFile,
}

fn bad(msg: String) -> Error {
    Error::Format { offset: 0, msg }
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<ConfigFile> {
        let cfg: ConfigFile = toml::from_str(text).map_err(|e| bad(format!("config: {}", e.message())))?;
        if cfg.version != CONFIG_VERSION {
            return Err(bad(format!("config version {} is not supported (expected {CONFIG_VERSION})", cfg.version)));
        }
        Ok(cfg)
    }

    pub fn read(path: &Path) -> Result<ConfigFile> {
        ConfigFile::parse(&std::fs::read_to_string(path)?)
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn apply(&self, base: SimConfig) -> Result<SimConfig> {
        let d = base.weights;
        let w = &self.weights;
        let out = SimConfig {
            n_pmt1: self.n_pmt1.unwrap_or(base.n_pmt1),
            n_pmt2: self.n_pmt2.unwrap_or(base.n_pmt2),
            k_owner: self.k_owner.unwrap_or(base.k_owner),
            k_group: self.k_group.unwrap_or(base.k_group),
            k_g: self.k_g.unwrap_or(base.k_g),
            weights: Weights { dc: w.dc.unwrap_or(d.dc), y: w.y.unwrap_or(d.y), u: w.u.unwrap_or(d.u), v: w.v.unwrap_or(d.v) },
        };
        check(&out)?;
        Ok(out)
    }
}

pub fn check(c: &SimConfig) -> Result<()> {
    if c.n_pmt1 == 0 || c.n_pmt2 == 0 {
        return Err(Error::Range("n_pmt1 and n_pmt2 must be at least 1".into()));
    }
    if c.k_owner == 0 || c.k_group == 0 || c.k_g == 0 {
        return Err(Error::Range("vocabulary sizes must be at least 1".into()));
    }
    let w = c.weights;
    if [w.dc, w.y, w.u, w.v].iter().any(|x| !x.is_finite() || *x < 0.0) {
        return Err(Error::Range("weights must be finite and non-negative".into()));
    }
    Ok(())
}
