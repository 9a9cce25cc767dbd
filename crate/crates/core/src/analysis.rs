//! End-to-end pseudo-value regression: grid selection, pseudo-values,
//! time-basis choice (fixed df or QIC-selected), GEE fit and the RMST
//! difference curve.

use crate::basis::{build_design, DesignLayout, SplineBasis};
use crate::error::{Error, Result};
use crate::gee::{df_bounds, gee_fit, select_df, DfCandidate, GeeFit, GeeOptions, LinkFunction, QicPenalty};
use crate::inference::{diff_curve, follow_up_grid, simultaneous_band, RmstDiffCurve, RmstDiffModel};
use crate::pseudo::{pseudo_values, pseudo_values_within_arms, select_grid_with, GridSpacing, PseudoValueMatrix, RestrictionGrid};
use crate::survival::SurvivalSample;
use log::warn;
use std::ops::RangeInclusive;

#[derive(Debug, Clone, PartialEq)]
pub enum TimeModel {
    /// Natural cubic spline with a fixed number of columns.
    NaturalFixed(usize),
    /// Natural cubic spline with df chosen by QIC over a range.
    NaturalQic(RangeInclusive<usize>),
    /// Saturated step model, one level per restriction time.
    Indicator,
}

#[derive(Debug, Clone)]
pub struct PvConfig {
    pub grid_size: usize,
    pub spacing: GridSpacing,
    pub time_model: TimeModel,
    pub link: LinkFunction,
    pub with_covariates: bool,
    pub qic_penalty: QicPenalty,
    /// Jackknife within each arm instead of over the pooled sample.
    pub within_arm_pseudo: bool,
}

impl Default for PvConfig {
    fn default() -> Self {
        PvConfig {
            grid_size: crate::pseudo::DEFAULT_GRID_SIZE,
            spacing: GridSpacing::EventQuantiles,
            time_model: TimeModel::NaturalQic(4..=12),
            link: LinkFunction::Identity,
            with_covariates: false,
            qic_penalty: QicPenalty::Trace,
            within_arm_pseudo: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PvAnalysis {
    pub pseudo: PseudoValueMatrix<f64>,
    pub basis: SplineBasis<f64>,
    pub layout: DesignLayout,
    pub fit: GeeFit,
    pub selected_df: Option<usize>,
    pub qic_trace: Vec<DfCandidate>,
    pub warnings: Vec<String>,
}

impl PvAnalysis {
    pub fn grid(&self) -> &RestrictionGrid<f64> {
        self.pseudo.grid()
    }

    pub fn model(&self) -> RmstDiffModel {
        RmstDiffModel::new(&self.fit, &self.basis, &self.layout)
    }

    /// Curve on `k` equally spaced points up to the last restriction time
    /// (see [`follow_up_grid`]).
    pub fn curve(&self, k: usize) -> Result<RmstDiffCurve> {
        let grid = follow_up_grid(self.grid().first(), self.grid().last(), k);
        diff_curve(&self.fit, &self.basis, &self.layout, &grid, false)
    }

    pub fn curve_with_band(&self, k: usize, alpha: f64, n_draws: usize, seed: u64) -> Result<(RmstDiffCurve, Vec<String>)> {
        let curve = self.curve(k)?;
        simultaneous_band(&curve, &self.fit, alpha, n_draws, seed)
    }

    /// Curve on caller-supplied points inside the grid range.
    pub fn curve_on(&self, eval_grid: &[f64]) -> Result<RmstDiffCurve> {
        diff_curve(&self.fit, &self.basis, &self.layout, eval_grid, false)
    }

    /// Curve and band on caller-supplied points inside the grid range.
    pub fn band_on(&self, eval_grid: &[f64], alpha: f64, n_draws: usize, seed: u64) -> Result<(RmstDiffCurve, Vec<String>)> {
        let curve = diff_curve(&self.fit, &self.basis, &self.layout, eval_grid, false)?;
        simultaneous_band(&curve, &self.fit, alpha, n_draws, seed)
    }
}

/// Runs the pipeline on a sample with a data-driven restriction grid.
pub fn fit_pv_model(sample: &SurvivalSample<f64>, config: &PvConfig) -> Result<PvAnalysis> {
    sample.require_events_per_arm()?;
    let selection = select_grid_with(sample, config.grid_size, config.spacing)?;
    let mut out = fit_pv_model_on_grid(sample, &selection.grid, config)?;
    out.warnings.splice(0..0, selection.warnings);
    Ok(out)
}

/// Runs the pipeline on a given restriction grid.
pub fn fit_pv_model_on_grid(
    sample: &SurvivalSample<f64>,
    grid: &RestrictionGrid<f64>,
    config: &PvConfig,
) -> Result<PvAnalysis> {
    let pseudo = if config.within_arm_pseudo {
        pseudo_values_within_arms(sample, grid)?
    } else {
        pseudo_values(sample, grid)?
    };
    fit_pv_model_on_pseudo(sample, pseudo, config)
}

pub fn fit_pv_model_on_pseudo(
    sample: &SurvivalSample<f64>,
    pseudo: PseudoValueMatrix<f64>,
    config: &PvConfig,
) -> Result<PvAnalysis> {
    let grid = pseudo.grid().clone();
    let m = grid.len();
    let mut warnings = Vec::new();
    let options = GeeOptions {
        link: config.link,
        ..Default::default()
    };
    let fixed = |basis: SplineBasis<f64>, warnings: Vec<String>| -> Result<PvAnalysis> {
        let design = build_design(&grid, &basis, sample, config.with_covariates)?;
        let fit = gee_fit(&design, pseudo.flattened(), options)?;
        Ok(PvAnalysis {
            layout: design.layout.clone(),
            pseudo: pseudo.clone(),
            basis,
            fit,
            selected_df: None,
            qic_trace: Vec::new(),
            warnings,
        })
    };

    if m == 1 {
        return fixed(SplineBasis::indicator(&grid), warnings);
    }
    match &config.time_model {
        TimeModel::Indicator => fixed(SplineBasis::indicator(&grid), warnings),
        TimeModel::NaturalFixed(df) => {
            let mut a = fixed(SplineBasis::natural(*df, grid.taus())?, warnings)?;
            a.selected_df = Some(*df);
            Ok(a)
        }
        TimeModel::NaturalQic(range) => {
            let (lo, hi) = df_bounds(m);
            let start = (*range.start()).max(lo);
            let end = (*range.end()).min(hi);
            if start > end {
                let df = (*range.start()).min(m - 1).max(1);
                let w = format!(
                    "df range {}..={} not admissible for {m} restriction times; using df={df}",
                    range.start(),
                    range.end()
                );
                warn!("{w}");
                warnings.push(w);
                let mut a = fixed(SplineBasis::natural(df, grid.taus())?, warnings)?;
                a.selected_df = Some(df);
                return Ok(a);
            }
            if start != *range.start() || end != *range.end() {
                let w = format!("df range clamped to {start}..={end} for {m} restriction times");
                warn!("{w}");
                warnings.push(w);
            }
            let sel = select_df(sample, &pseudo, config.link, start..=end, config.with_covariates, config.qic_penalty)?;
            warnings.extend(sel.warnings);
            Ok(PvAnalysis {
                layout: sel.design.layout.clone(),
                pseudo,
                basis: sel.basis,
                fit: sel.fit,
                selected_df: Some(sel.best_df),
                qic_trace: sel.trace,
                warnings,
            })
        }
    }
}

/// Scalar pseudo-value model at a single restriction time: returns
/// `(intercept, treatment effect)`.
pub fn scalar_pv_effects(sample: &SurvivalSample<f64>, tau: f64) -> Result<(f64, f64)> {
    let grid = RestrictionGrid::new(vec![tau])?;
    let a = fit_pv_model_on_grid(sample, &grid, &PvConfig::default())?;
    if a.fit.coefficients.len() < 2 {
        return Err(Error::InvalidInput("scalar model lost its treatment column".into()));
    }
    Ok((a.fit.coefficients[0], a.fit.coefficients[a.layout.treatment()]))
}
