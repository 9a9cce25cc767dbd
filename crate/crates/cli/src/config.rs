//! Analysis settings shared by `fit`, `band`, `tute` and `pseudo`.
//!
//! Values come from command-line flags first; a `--config` file of
//! `key=value` pairs is applied afterwards and wins.

use crate::failure::Failure;
use rmstcurve::inference::DEFAULT_DRAWS;
use rmstcurve::pseudo::DEFAULT_GRID_SIZE;
use rmstcurve::simlab::parse_pairs;
use rmstcurve::tute::DEFAULT_SURVIVAL_FLOOR;
use rmstcurve::{LinkFunction, PvConfig, TimeModel};
use serde::Serialize;
use std::collections::BTreeMap;
use std::path::PathBuf;

pub const DEFAULT_EVAL_POINTS: usize = 30;
pub const DEFAULT_BOOTSTRAP: usize = 1000;

/// TUTE estimator refitted on each bootstrap resample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum BootstrapEstimator {
    /// Kaplan-Meier plug-in difference.
    Plugin,
    /// Full pseudo-value model.
    Model,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct AnalysisConfig {
    pub input: PathBuf,
    pub grid: usize,
    pub link: LinkFunction,
    /// Fixed spline df; `None` selects df by QIC over `df_min..=df_max`.
    pub df: Option<usize>,
    pub df_min: usize,
    pub df_max: usize,
    /// Saturated step model instead of a spline.
    pub indicator: bool,
    pub eval_points: usize,
    /// Right end of the band grid; defaults to the last restriction time or
    /// the end of the shorter arm's follow-up, whichever comes first.
    pub eval_end: Option<f64>,
    pub alpha: f64,
    pub draws: usize,
    pub bootstrap: usize,
    pub bootstrap_estimator: BootstrapEstimator,
    pub floor: f64,
    pub seed: Option<u64>,
    pub covariates: bool,
    pub within_arm: bool,
    pub out: Option<PathBuf>,
}

impl AnalysisConfig {
    pub fn new(input: PathBuf) -> Self {
        AnalysisConfig {
            input,
            grid: DEFAULT_GRID_SIZE,
            link: LinkFunction::Identity,
            df: None,
            df_min: 4,
            df_max: 12,
            indicator: false,
            eval_points: DEFAULT_EVAL_POINTS,
            eval_end: None,
            alpha: 0.05,
            draws: DEFAULT_DRAWS,
            bootstrap: DEFAULT_BOOTSTRAP,
            bootstrap_estimator: BootstrapEstimator::Plugin,
            floor: DEFAULT_SURVIVAL_FLOOR,
            seed: None,
            covariates: false,
            within_arm: false,
            out: None,
        }
    }

    /// Applies `key=value` overrides from a config file.
    pub fn apply_file_text(&mut self, text: &str) -> Result<(), Failure> {
        let pairs = parse_pairs(text).map_err(|e| Failure::Input(e.to_string()))?;
        self.apply_pairs(&pairs)
    }

    pub fn apply_pairs(&mut self, pairs: &BTreeMap<String, String>) -> Result<(), Failure> {
        for (k, v) in pairs {
            let bad = || Failure::Input(format!("config: invalid value '{v}' for key '{k}'"));
            macro_rules! num {
                () => {
                    v.parse().map_err(|_| bad())?
                };
            }
            match k.as_str() {
                "input" => self.input = PathBuf::from(v),
                "grid" => self.grid = num!(),
                "link" => self.link = parse_link(v).ok_or_else(bad)?,
                "df" => self.df = Some(num!()),
                "df_min" => self.df_min = num!(),
                "df_max" => self.df_max = num!(),
                "indicator" => self.indicator = parse_bool(v).ok_or_else(bad)?,
                "eval_points" => self.eval_points = num!(),
                "eval_end" => self.eval_end = Some(num!()),
                "alpha" => self.alpha = num!(),
                "draws" => self.draws = num!(),
                "bootstrap" => self.bootstrap = num!(),
                "bootstrap_estimator" => self.bootstrap_estimator = parse_estimator(v).ok_or_else(bad)?,
                "floor" => self.floor = num!(),
                "seed" => self.seed = Some(num!()),
                "covariates" => self.covariates = parse_bool(v).ok_or_else(bad)?,
                "within_arm" => self.within_arm = parse_bool(v).ok_or_else(bad)?,
                "out" => self.out = Some(PathBuf::from(v)),
                other => return Err(Failure::Input(format!("config: unknown key '{other}'"))),
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), Failure> {
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Failure::Input(format!("alpha must be in (0,1), got {}", self.alpha)));
        }
        if self.df_min > self.df_max {
            return Err(Failure::Input(format!("df_min {} exceeds df_max {}", self.df_min, self.df_max)));
        }
        if self.eval_points == 0 {
            return Err(Failure::Input("eval_points must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.floor) {
            return Err(Failure::Input(format!("floor must be in [0,1], got {}", self.floor)));
        }
        Ok(())
    }

    pub fn require_seed(&self, command: &str) -> Result<u64, Failure> {
        self.seed
            .ok_or_else(|| Failure::Input(format!("`{command}` is stochastic and needs an explicit --seed")))
    }

    pub fn pv_config(&self) -> PvConfig {
        let time_model = if self.indicator {
            TimeModel::Indicator
        } else if let Some(df) = self.df {
            TimeModel::NaturalFixed(df)
        } else {
            TimeModel::NaturalQic(self.df_min..=self.df_max)
        };
        PvConfig {
            grid_size: self.grid,
            time_model,
            link: self.link,
            with_covariates: self.covariates,
            within_arm_pseudo: self.within_arm,
            ..Default::default()
        }
    }
}

pub fn parse_link(s: &str) -> Option<LinkFunction> {
    match s.to_ascii_lowercase().as_str() {
        "identity" => Some(LinkFunction::Identity),
        "log" => Some(LinkFunction::Log),
        _ => None,
    }
}

pub fn parse_estimator(s: &str) -> Option<BootstrapEstimator> {
    match s.to_ascii_lowercase().as_str() {
        "plugin" => Some(BootstrapEstimator::Plugin),
        "model" => Some(BootstrapEstimator::Model),
        _ => None,
    }
}

fn parse_bool(s: &str) -> Option<bool> {
    match s.to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" | "on" => Some(true),
        "false" | "0" | "no" | "off" => Some(false),
        _ => None,
    }
}
