//! Time until treatment equipoise (TUTE): the first strictly positive time
//! at which the RMST difference returns to zero.
//!
//! Interval conventions: if the inner confidence limit never leaves zero the
//! lower limit is 0; if the outer limit never returns to zero the interval is
//! open to the right (`ci_hi = +∞`).

use crate::analysis::{fit_pv_model, PvConfig};
use crate::error::{Error, Result};
use crate::inference::{RmstDiffCurve, Z_95};
use crate::numerics::{bisect, first_crossing_after_departure, Crossing};
use crate::rng::{keyed_rng, tag};
use crate::survival::{km_fit, rmst, SurvivalSample};
use log::warn;
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

/// Departure tolerance relative to `max |R|`.
pub const DEPARTURE_FRACTION: f64 = 1e-3;
/// Bisection tolerance relative to the end of the search interval.
pub const ROOT_REL_TOL: f64 = 1e-6;
/// Bootstrap infinite-replicate share above which a finite TUTE is not
/// supported by the data.
pub const INFINITE_SHARE_LIMIT: f64 = 0.05;
pub const MAX_FAILURE_SHARE: f64 = 0.10;
pub const MIN_BOOTSTRAP: usize = 200;
pub const DEFAULT_SURVIVAL_FLOOR: f64 = 0.30;
const DEFAULT_SCAN_POINTS: usize = 2000;

pub const WARN_INDISTINGUISHABLE: &str = "curves indistinguishable: R(t) never departs from zero";
pub const WARN_NO_FINITE: &str = "no evidence for finite TUTE";
pub const WARN_NO_CROSSING: &str = "no finite TUTE";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TuteMethod {
    PluginBootstrap,
    ModelBootstrap,
    ModelBandInversion,
}

#[derive(Debug, Clone, Serialize)]
pub struct TuteEstimate {
    /// `+∞` when `R` never returns to zero.
    pub point: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub method: TuteMethod,
    /// Bootstrap only.
    pub frac_infinite: Option<f64>,
    pub n_failures: usize,
    pub warnings: Vec<String>,
}

impl TuteEstimate {
    pub fn is_finite(&self) -> bool {
        self.point.is_finite()
    }

    pub fn covers(&self, truth: f64) -> bool {
        self.ci_lo <= truth && truth <= self.ci_hi
    }

    pub fn right_open(&self) -> bool {
        self.ci_hi.is_infinite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TutePoint {
    pub value: f64,
    pub indistinguishable: bool,
}

/// Equally spaced scan of `(t_lo, t_hi]` followed by bisection.
///
/// `departure_tol = None` uses [`DEPARTURE_FRACTION`] × max |R| over the scan.
pub fn tute_point<F: Fn(f64) -> f64>(r: F, t_lo: f64, t_hi: f64, departure_tol: Option<f64>) -> TutePoint {
    let nodes: Vec<f64> = (1..=DEFAULT_SCAN_POINTS)
        .map(|k| t_lo + (t_hi - t_lo) * k as f64 / DEFAULT_SCAN_POINTS as f64)
        .collect();
    tute_point_on_nodes(r, &nodes, departure_tol)
}

/// Root search on caller-supplied scan nodes (increasing).
pub fn tute_point_on_nodes<F: Fn(f64) -> f64>(r: F, nodes: &[f64], departure_tol: Option<f64>) -> TutePoint {
    let values: Vec<f64> = nodes.iter().map(|&t| r(t)).collect();
    let max_abs = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let tol = departure_tol.unwrap_or(DEPARTURE_FRACTION * max_abs);
    let t_hi = nodes.last().copied().unwrap_or(0.0);
    match first_crossing_after_departure(nodes, &values, tol, None) {
        Crossing::NeverDeparts => TutePoint {
            value: f64::INFINITY,
            indistinguishable: true,
        },
        Crossing::NoReturn { .. } => TutePoint {
            value: f64::INFINITY,
            indistinguishable: false,
        },
        Crossing::Bracket { lo, hi, .. } => TutePoint {
            value: bisect(&r, lo, hi, ROOT_REL_TOL * t_hi.abs()).unwrap_or(hi),
            indistinguishable: false,
        },
    }
}

/// Return-to-zero of a limit curve after it has departed in direction
/// `sign`.
fn limit_crossing<F: Fn(f64) -> f64>(f: F, nodes: &[f64], tol: f64, sign: f64) -> Crossing<f64> {
    let values: Vec<f64> = nodes.iter().map(|&t| f(t)).collect();
    match first_crossing_after_departure(nodes, &values, tol, Some(sign)) {
        Crossing::Bracket { lo, hi, index, departure_sign } => {
            let root = bisect(&f, lo, hi, ROOT_REL_TOL * nodes[nodes.len() - 1].abs()).unwrap_or(hi);
            Crossing::Bracket {
                lo: root,
                hi: root,
                index,
                departure_sign,
            }
        }
        other => other,
    }
}

/// Point estimate and interval from the zeros of the pointwise 95% limits.
pub fn tute_ci_band(curve: &RmstDiffCurve) -> TuteEstimate {
    let model = &curve.model;
    let grid = &curve.eval_grid;
    let (a, b) = (grid[0], grid[grid.len() - 1]);
    // scan ten times finer than the evaluation grid, then bisect on the model
    let k = (grid.len() * 10).max(100);
    let nodes: Vec<f64> = (0..=k).map(|i| a + (b - a) * i as f64 / k as f64).collect();
    let max_abs = curve.estimate.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let tol = DEPARTURE_FRACTION * max_abs;
    let mut warnings = Vec::new();

    let est = |t: f64| model.estimate(t);
    let point = tute_point_on_nodes(est, &nodes, Some(tol));
    let est_values: Vec<f64> = nodes.iter().map(|&t| model.estimate(t)).collect();
    let sign = match first_crossing_after_departure(&nodes, &est_values, tol, None) {
        Crossing::NeverDeparts => {
            warnings.push(WARN_INDISTINGUISHABLE.to_string());
            warnings.push(WARN_NO_CROSSING.to_string());
            return TuteEstimate {
                point: f64::INFINITY,
                ci_lo: 0.0,
                ci_hi: f64::INFINITY,
                method: TuteMethod::ModelBandInversion,
                frac_infinite: None,
                n_failures: 0,
                warnings,
            };
        }
        Crossing::NoReturn { departure_sign } | Crossing::Bracket { departure_sign, .. } => departure_sign,
    };

    // the limit nearer to zero on the departure side returns first
    let inner = |t: f64| model.estimate(t) - sign * Z_95 * model.se(t);
    let outer = |t: f64| model.estimate(t) + sign * Z_95 * model.se(t);
    let mut ci_lo = match limit_crossing(inner, &nodes, tol, sign) {
        Crossing::NeverDeparts => 0.0,
        Crossing::Bracket { lo, .. } => lo,
        // significant separation through the whole window
        Crossing::NoReturn { .. } => b,
    };
    let mut ci_hi = match limit_crossing(outer, &nodes, tol, sign) {
        Crossing::Bracket { lo, .. } => lo,
        _ => f64::INFINITY,
    };
    if point.value.is_finite() {
        ci_lo = ci_lo.min(point.value);
        ci_hi = ci_hi.max(point.value);
    } else {
        warnings.push(WARN_NO_CROSSING.to_string());
    }
    TuteEstimate {
        point: point.value,
        ci_lo,
        ci_hi,
        method: TuteMethod::ModelBandInversion,
        frac_infinite: None,
        n_failures: 0,
        warnings,
    }
}

/// TUTE of the plug-in Kaplan-Meier RMST difference. The difference is
/// piecewise linear between jump times, so those are the scan nodes.
pub fn plugin_tute(sample: &SurvivalSample<f64>) -> Result<f64> {
    let km0 = km_fit(sample, Some(0))?;
    let km1 = km_fit(sample, Some(1))?;
    let t_hi = km0.last_time.min(km1.last_time);
    if !(t_hi > 0.0) {
        return Err(Error::InvalidInput("no follow-up in one arm".into()));
    }
    let mut nodes: Vec<f64> = km0
        .jump_times
        .iter()
        .chain(&km1.jump_times)
        .copied()
        .filter(|&t| t > 0.0 && t <= t_hi)
        .collect();
    nodes.push(t_hi);
    nodes.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    nodes.dedup();
    let r = |t: f64| {
        let r1 = rmst(&km1, t).map(|r| r.value).unwrap_or(f64::NAN);
        let r0 = rmst(&km0, t).map(|r| r.value).unwrap_or(f64::NAN);
        r1 - r0
    };
    Ok(tute_point_on_nodes(r, &nodes, None).value)
}

/// TUTE of the pseudo-value model curve over its restriction-grid range.
pub fn model_tute(sample: &SurvivalSample<f64>, config: &PvConfig) -> Result<f64> {
    let analysis = fit_pv_model(sample, config)?;
    let model = analysis.model();
    let (a, b) = (analysis.grid().first(), analysis.grid().last());
    Ok(tute_point(|t| model.estimate(t), a, b, None).value)
}

#[derive(Debug, Clone)]
pub enum TuteEstimator {
    Plugin,
    Model(PvConfig),
}

impl TuteEstimator {
    pub fn estimate(&self, sample: &SurvivalSample<f64>) -> Result<f64> {
        match self {
            TuteEstimator::Plugin => plugin_tute(sample),
            TuteEstimator::Model(cfg) => model_tute(sample, cfg),
        }
    }

    fn method(&self) -> TuteMethod {
        match self {
            TuteEstimator::Plugin => TuteMethod::PluginBootstrap,
            TuteEstimator::Model(_) => TuteMethod::ModelBootstrap,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Resampling {
    /// Resample subjects with replacement within each arm.
    #[default]
    StratifiedByArm,
    /// Every replicate is the original sample.
    Disabled,
}

/// Stratified bootstrap resample indices for replicate `b`.
pub fn stratified_indices(sample: &SurvivalSample<f64>, seed: u64, b: usize) -> Vec<usize> {
    let mut rng = keyed_rng(seed, tag::BOOTSTRAP, b as u64, 0);
    let mut out = Vec::with_capacity(sample.len());
    for arm in 0..=1u8 {
        let members: Vec<usize> = sample
            .subjects()
            .iter()
            .enumerate()
            .filter(|(_, s)| s.arm == arm)
            .map(|(i, _)| i)
            .collect();
        for _ in 0..members.len() {
            out.push(members[rng.random_range(0..members.len())]);
        }
    }
    out
}

/// Percentile of bootstrap values where `+∞` occupies the upper tail.
fn percentile_with_inf(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = h - lo as f64;
    if frac == 0.0 || sorted[hi] == sorted[lo] {
        sorted[lo]
    } else if sorted[hi].is_infinite() {
        f64::INFINITY
    } else {
        sorted[lo] + frac * (sorted[hi] - sorted[lo])
    }
}

/// Percentile bootstrap interval for the TUTE.
pub fn tute_ci_bootstrap(
    sample: &SurvivalSample<f64>,
    n_boot: usize,
    seed: u64,
    estimator: &TuteEstimator,
    resampling: Resampling,
) -> Result<TuteEstimate> {
    if n_boot < MIN_BOOTSTRAP {
        return Err(Error::InvalidInput(format!(
            "need at least {MIN_BOOTSTRAP} bootstrap replicates, got {n_boot}"
        )));
    }
    let point = estimator.estimate(sample)?;
    let results: Vec<Result<f64>> = (0..n_boot)
        .into_par_iter()
        .map(|b| match resampling {
            Resampling::Disabled => estimator.estimate(sample),
            Resampling::StratifiedByArm => {
                let resampled = sample.select(&stratified_indices(sample, seed, b))?;
                estimator.estimate(&resampled)
            }
        })
        .collect();
    let mut values: Vec<f64> = results.iter().filter_map(|r| r.as_ref().ok().copied()).collect();
    let n_failures = n_boot - values.len();
    let mut warnings = Vec::new();
    if n_failures as f64 > MAX_FAILURE_SHARE * n_boot as f64 {
        return Err(Error::TooManyFailures {
            failed: n_failures,
            total: n_boot,
        });
    }
    if n_failures > 0 {
        let w = format!("{n_failures} of {n_boot} bootstrap replicates failed and were dropped");
        warn!("{w}");
        warnings.push(w);
    }
    values.sort_by(|a, b| a.partial_cmp(b).expect("no NaN TUTE"));
    let n_inf = values.iter().filter(|v| v.is_infinite()).count();
    let frac_infinite = n_inf as f64 / values.len() as f64;
    let ci_lo = percentile_with_inf(&values, 0.025);
    let mut ci_hi = percentile_with_inf(&values, 0.975);
    if frac_infinite > INFINITE_SHARE_LIMIT {
        warnings.push(WARN_NO_FINITE.to_string());
        ci_hi = f64::INFINITY;
    }
    if point.is_infinite() {
        warnings.push(WARN_NO_CROSSING.to_string());
    }
    Ok(TuteEstimate {
        point,
        ci_lo,
        ci_hi,
        method: estimator.method(),
        frac_infinite: Some(frac_infinite),
        n_failures,
        warnings,
    })
}

/// Warning when both Kaplan-Meier curves are below `floor` at the TUTE.
pub fn clinical_relevance_warning(sample: &SurvivalSample<f64>, tute: f64, floor: f64) -> Result<Option<String>> {
    if !tute.is_finite() {
        return Ok(None);
    }
    let s0 = km_fit(sample, Some(0))?.survival_at(tute);
    let s1 = km_fit(sample, Some(1))?.survival_at(tute);
    if s0 < floor && s1 < floor {
        Ok(Some(format!(
            "TUTE at {tute:.3} where both survival curves are below {floor} ({s0:.3}, {s1:.3}): not interesting from a clinical viewpoint"
        )))
    } else {
        Ok(None)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn analytic_root() {
        let p = tute_point(|t| t * (t - 5.0), 1e-9, 10.0, None);
        assert!((p.value - 5.0).abs() < 1e-5);
    }

    #[test]
    fn no_crossing_is_infinite() {
        let p = tute_point(|t| -t, 1e-9, 10.0, None);
        assert!(p.value.is_infinite());
        assert!(!p.indistinguishable);
        let p = tute_point(|_| 0.0, 1e-9, 10.0, None);
        assert!(p.value.is_infinite() && p.indistinguishable);
    }

    #[test]
    fn sign_symmetry() {
        let f = |t: f64| (t - 3.0) * t.sqrt();
        let a = tute_point(f, 1e-9, 8.0, None).value;
        let b = tute_point(|t| -f(t), 1e-9, 8.0, None).value;
        assert_eq!(a, b);
    }

    #[test]
    fn percentile_inf_tail() {
        let v = [1.0, 2.0, 3.0, f64::INFINITY];
        assert_eq!(percentile_with_inf(&v, 0.0), 1.0);
        assert!(percentile_with_inf(&v, 0.9).is_infinite());
        assert_eq!(percentile_with_inf(&v, 1.0 / 3.0), 2.0);
    }
}
