//! Plain `key=value` study configuration.
//!
//! ```text
//! # curve/TUTE scenario
//! scenario=2
//! n=200
//! reps=500
//! seed=7
//! ```
//!
//! A Weibull bias cell uses `cell=weibull delta=1 beta=0 p=0.75 n=250`.
//! Pairs may be separated by newlines or whitespace; `#` starts a comment.

use super::study::{StudyConfig, StudyTarget};
use crate::error::{Error, Result};
use std::collections::BTreeMap;

/// Parses `key=value` pairs. Later keys override earlier ones.
pub fn parse_pairs(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("");
        for token in line.split_whitespace() {
            let (k, v) = token.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key=value, got '{token}'", lineno + 1))
            })?;
            if k.is_empty() {
                return Err(Error::Config(format!("line {}: empty key", lineno + 1)));
            }
            out.insert(k.trim().to_ascii_lowercase(), v.trim().to_string());
        }
    }
    Ok(out)
}

fn get<T: std::str::FromStr>(map: &BTreeMap<String, String>, key: &str) -> Result<Option<T>> {
    map.get(key)
        .map(|v| {
            v.parse::<T>()
                .map_err(|_| Error::Config(format!("invalid value '{v}' for key '{key}'")))
        })
        .transpose()
}

fn require<T: std::str::FromStr>(map: &BTreeMap<String, String>, key: &str) -> Result<T> {
    get(map, key)?.ok_or_else(|| Error::Config(format!("missing required key '{key}'")))
}

const KNOWN: &[&str] = &[
    "scenario",
    "cell",
    "delta",
    "beta",
    "p",
    "n",
    "reps",
    "seed",
    "estimators",
    "grid",
    "df_min",
    "df_max",
    "eval_points",
    "band_draws",
    "alpha",
];

/// Builds a study configuration from parsed pairs.
pub fn study_config_from_pairs(map: &BTreeMap<String, String>) -> Result<StudyConfig> {
    if let Some(k) = map.keys().find(|k| !KNOWN.contains(&k.as_str())) {
        return Err(Error::Config(format!("unknown key '{k}'")));
    }
    let n: usize = require(map, "n")?;
    let reps: usize = require(map, "reps")?;
    let seed: u64 = require(map, "seed")?;
    let mut cfg = match (map.get("scenario"), map.get("cell")) {
        (Some(_), Some(_)) => return Err(Error::Config("give either 'scenario' or 'cell', not both".into())),
        (Some(_), None) => {
            let id: u8 = require(map, "scenario")?;
            if !(1..=5).contains(&id) {
                return Err(Error::Config(format!("unknown scenario id {id} (expected 1-5)")));
            }
            StudyConfig::scenario(id, n, reps, seed)
        }
        (None, Some(cell)) => {
            if cell != "weibull" {
                return Err(Error::Config(format!("unknown cell '{cell}' (expected 'weibull')")));
            }
            StudyConfig::weibull_bias(require(map, "delta")?, require(map, "beta")?, require(map, "p")?, n, reps, seed)
        }
        (None, None) => return Err(Error::Config("missing 'scenario' or 'cell'".into())),
    };
    if let Some(list) = map.get("estimators") {
        cfg.scalar_pv = false;
        cfg.vector_pv = false;
        cfg.plugin = false;
        cfg.tute = false;
        for e in list.split(',').map(str::trim).filter(|e| !e.is_empty()) {
            match e {
                "scalar" => cfg.scalar_pv = true,
                "vector" => cfg.vector_pv = true,
                "plugin" => cfg.plugin = true,
                "tute" => cfg.tute = true,
                other => return Err(Error::Config(format!("unknown estimator '{other}'"))),
            }
        }
    }
    if let Some(v) = get(map, "grid")? {
        cfg.grid_size = v;
    }
    if let Some(v) = get(map, "df_min")? {
        cfg.df_min = v;
    }
    if let Some(v) = get(map, "df_max")? {
        cfg.df_max = v;
    }
    if let Some(v) = get(map, "eval_points")? {
        cfg.eval_points = v;
    }
    if let Some(v) = get(map, "band_draws")? {
        cfg.band_draws = v;
    }
    if let Some(v) = get(map, "alpha")? {
        cfg.alpha = v;
    }
    if let StudyTarget::WeibullBias { p, .. } = cfg.target {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::Config(format!("p must be in (0,1), got {p}")));
        }
    }
    Ok(cfg)
}

pub fn parse_study_config(text: &str) -> Result<StudyConfig> {
    study_config_from_pairs(&parse_pairs(text)?)
}
