//! Replicate harness for the curve/TUTE scenarios and the Weibull bias
//! cells.

use super::scenario::{CalibratedScenario, ScenarioSpec};
use crate::analysis::{fit_pv_model, scalar_pv_effects, PvConfig, TimeModel};
use crate::error::{Error, Result};
use crate::inference::{band_coverage_check, follow_up_grid, MIN_DRAWS};
use crate::rng::{derive_seed, tag};
use crate::survival::{km_fit, rmst, SurvivalSample};
use crate::tute::{plugin_tute, tute_ci_band};
use log::{debug, info};
use rayon::prelude::*;
use serde::Serialize;
use std::fmt::Write as _;

pub const MIN_REPS: usize = 100;
/// Band evaluation points per replicate.
pub const STUDY_EVAL_POINTS: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StudyTarget {
    /// Numbered curve/TUTE scenario; `n` is per arm.
    Scenario { id: u8 },
    /// Weibull bias cell; `n` is the total sample size.
    WeibullBias { delta: f64, beta_b: f64, p: f64 },
}

#[derive(Debug, Clone, Serialize)]
pub struct StudyConfig {
    pub target: StudyTarget,
    pub n: usize,
    pub reps: usize,
    pub seed: u64,
    /// Fit the single-restriction-time model (bias cells only).
    pub scalar_pv: bool,
    pub vector_pv: bool,
    /// Kaplan-Meier plug-in comparator.
    pub plugin: bool,
    /// Estimate the TUTE when the true TUTE is finite.
    pub tute: bool,
    pub grid_size: usize,
    pub df_min: usize,
    pub df_max: usize,
    pub eval_points: usize,
    pub band_draws: usize,
    pub alpha: f64,
}

impl StudyConfig {
    pub fn scenario(id: u8, n_per_arm: usize, reps: usize, seed: u64) -> Self {
        StudyConfig {
            target: StudyTarget::Scenario { id },
            n: n_per_arm,
            reps,
            seed,
            scalar_pv: false,
            vector_pv: true,
            plugin: true,
            tute: true,
            grid_size: 16,
            df_min: 4,
            df_max: 12,
            eval_points: STUDY_EVAL_POINTS,
            band_draws: MIN_DRAWS,
            alpha: 0.05,
        }
    }

    pub fn weibull_bias(delta: f64, beta_b: f64, p: f64, n: usize, reps: usize, seed: u64) -> Self {
        StudyConfig {
            target: StudyTarget::WeibullBias { delta, beta_b, p },
            n,
            reps,
            seed,
            scalar_pv: true,
            vector_pv: true,
            plugin: false,
            tute: false,
            grid_size: 16,
            df_min: 3,
            df_max: 12,
            eval_points: STUDY_EVAL_POINTS,
            band_draws: MIN_DRAWS,
            alpha: 0.05,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.reps < MIN_REPS {
            return Err(Error::InvalidInput(format!(
                "need at least {MIN_REPS} replicates, got {}",
                self.reps
            )));
        }
        if self.df_min > self.df_max || self.df_min == 0 {
            return Err(Error::InvalidInput(format!(
                "invalid df range {}..={}",
                self.df_min, self.df_max
            )));
        }
        if self.eval_points < 2 {
            return Err(Error::InvalidInput("need at least 2 evaluation points".into()));
        }
        Ok(())
    }

    fn spec(&self) -> Result<ScenarioSpec> {
        match self.target {
            StudyTarget::Scenario { id } => ScenarioSpec::numbered(id),
            StudyTarget::WeibullBias { delta, beta_b, p } => ScenarioSpec::weibull_bias(delta, beta_b, p),
        }
    }

    fn pv_config(&self) -> PvConfig {
        PvConfig {
            grid_size: self.grid_size,
            time_model: TimeModel::NaturalQic(self.df_min..=self.df_max),
            ..Default::default()
        }
    }
}

/// One row in the curve/TUTE table layout.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct CurveStudyRow {
    pub scenario: u8,
    pub n_per_arm: usize,
    pub reps: usize,
    pub failures: usize,
    /// Mean over replicates and evaluation points of `|R̂(t) − R(t)|`.
    pub pv_curve_bias: Option<f64>,
    /// Share of replicates whose band contains the true curve at every
    /// evaluation point.
    pub pv_coverage: Option<f64>,
    pub pv_length: Option<f64>,
    pub np_curve_bias: Option<f64>,
    pub true_tute: f64,
    /// Mean signed error over replicates with a finite estimate.
    pub pv_tute_bias: Option<f64>,
    pub pv_tute_coverage: Option<f64>,
    pub pv_tute_rmse: Option<f64>,
    /// Mean squared error of the finite estimates.
    pub pv_tute_mse: Option<f64>,
    pub pv_tute_infinite: usize,
    pub pv_right_open: Option<f64>,
    pub np_tute_bias: Option<f64>,
    pub np_tute_rmse: Option<f64>,
    pub np_tute_infinite: usize,
}

/// One row in the Weibull bias table layout.
#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct BiasStudyRow {
    pub delta: f64,
    pub beta_b: f64,
    pub p: f64,
    pub n: usize,
    pub reps: usize,
    pub tau: f64,
    pub true_baseline: f64,
    pub true_z_effect: f64,
    /// Replicates dropped because the last event time was below `τ`.
    pub excluded_short_follow_up: usize,
    /// Retained replicates where the vector model's last restriction time
    /// was below `τ`.
    pub vector_extrapolated: usize,
    pub failures: usize,
    pub scalar_baseline_bias: Option<f64>,
    pub scalar_z_bias: Option<f64>,
    pub vector_baseline_bias: Option<f64>,
    pub vector_z_bias: Option<f64>,
}

#[derive(Debug, Clone, Serialize, PartialEq)]
#[serde(tag = "layout", rename_all = "snake_case")]
pub enum StudyReport {
    Curve(CurveStudyRow),
    Bias(BiasStudyRow),
}

impl StudyReport {
    pub fn to_csv(&self) -> String {
        fn opt(v: Option<f64>) -> String {
            v.map(|x| format!("{x:.6}")).unwrap_or_default()
        }
        let mut s = String::new();
        match self {
            StudyReport::Curve(r) => {
                s.push_str(
                    "scenario,n_per_arm,reps,failures,np_curve_bias,pv_curve_bias,pv_coverage,pv_length,\
                     true_tute,np_tute_bias,np_tute_rmse,np_tute_infinite,pv_tute_bias,pv_tute_coverage,\
                     pv_tute_rmse,pv_tute_mse,pv_tute_infinite,pv_right_open\n",
                );
                let _ = writeln!(
                    s,
                    "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                    r.scenario,
                    r.n_per_arm,
                    r.reps,
                    r.failures,
                    opt(r.np_curve_bias),
                    opt(r.pv_curve_bias),
                    opt(r.pv_coverage),
                    opt(r.pv_length),
                    if r.true_tute.is_finite() { format!("{:.6}", r.true_tute) } else { "inf".into() },
                    opt(r.np_tute_bias),
                    opt(r.np_tute_rmse),
                    r.np_tute_infinite,
                    opt(r.pv_tute_bias),
                    opt(r.pv_tute_coverage),
                    opt(r.pv_tute_rmse),
                    opt(r.pv_tute_mse),
                    r.pv_tute_infinite,
                    opt(r.pv_right_open),
                );
            }
            StudyReport::Bias(r) => {
                s.push_str(
                    "n,effect,delta,beta_b,p,tau,truth,pv_scalar_bias,pv_vector_bias,\
                     excluded_short_follow_up,vector_extrapolated,failures\n",
                );
                for (effect, truth, sc, ve) in [
                    ("baseline", r.true_baseline, r.scalar_baseline_bias, r.vector_baseline_bias),
                    ("z_effect", r.true_z_effect, r.scalar_z_bias, r.vector_z_bias),
                ] {
                    let _ = writeln!(
                        s,
                        "{},{},{},{},{},{:.6},{:.6},{},{},{},{},{}",
                        r.n,
                        effect,
                        r.delta,
                        r.beta_b,
                        r.p,
                        r.tau,
                        truth,
                        opt(sc),
                        opt(ve),
                        r.excluded_short_follow_up,
                        r.vector_extrapolated,
                        r.failures
                    );
                }
            }
        }
        s
    }
}

#[derive(Debug, Clone, Default)]
struct CurveRep {
    pv_abs_err: Option<f64>,
    pv_covered: Option<bool>,
    pv_length: Option<f64>,
    np_abs_err: Option<f64>,
    pv_tute: Option<(f64, bool, bool)>,
    np_tute: Option<f64>,
    failed: bool,
}

#[derive(Debug, Clone, Default)]
struct BiasRep {
    excluded: bool,
    extrapolated: bool,
    scalar: Option<(f64, f64)>,
    vector: Option<(f64, f64)>,
    failed: bool,
}

fn mean(v: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (s, n) = v.into_iter().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

/// Runs the study. Replicates are independent and run in parallel; the
/// report is identical for a fixed seed regardless of thread count.
pub fn replicate_study(config: &StudyConfig) -> Result<StudyReport> {
    config.validate()?;
    let spec = config.spec()?;
    let calibrated = spec.calibrate()?;
    info!(
        "study {:?}: n={} reps={} censoring={:?}",
        config.target, config.n, config.reps, calibrated.censor
    );
    match config.target {
        StudyTarget::Scenario { id } => curve_study(config, id, &calibrated).map(StudyReport::Curve),
        StudyTarget::WeibullBias { delta, beta_b, p } => {
            bias_study(config, delta, beta_b, p, &calibrated).map(StudyReport::Bias)
        }
    }
}

/// Curve/TUTE study on a caller-defined scenario; `config.target` only
/// supplies the reported id.
pub fn replicate_curve_study(config: &StudyConfig, spec: &ScenarioSpec) -> Result<CurveStudyRow> {
    config.validate()?;
    let id = match config.target {
        StudyTarget::Scenario { id } => id,
        StudyTarget::WeibullBias { .. } => 0,
    };
    curve_study(config, id, &spec.calibrate()?)
}

fn curve_study(config: &StudyConfig, id: u8, sc: &CalibratedScenario) -> Result<CurveStudyRow> {
    let spec = &sc.spec;
    let true_tute = spec.true_tute();
    let do_tute = config.tute && true_tute.is_finite();
    let pv_cfg = config.pv_config();
    let reps: Vec<CurveRep> = (0..config.reps)
        .into_par_iter()
        .map(|r| {
            let sample = match sc.simulate(config.n, config.seed, r as u64) {
                Ok(s) => s,
                Err(e) => {
                    debug!("replicate {r}: simulation failed: {e}");
                    return CurveRep { failed: true, ..Default::default() };
                }
            };
            match curve_replicate(config, spec, &sample, &pv_cfg, r, do_tute, true_tute) {
                Ok(rep) => rep,
                Err(e) => {
                    debug!("replicate {r} failed: {e}");
                    CurveRep { failed: true, ..Default::default() }
                }
            }
        })
        .collect();

    let ok: Vec<&CurveRep> = reps.iter().filter(|r| !r.failed).collect();
    let failures = reps.len() - ok.len();
    let pv_t: Vec<(f64, bool, bool)> = ok.iter().filter_map(|r| r.pv_tute).collect();
    let pv_finite: Vec<f64> = pv_t.iter().map(|t| t.0).filter(|t| t.is_finite()).collect();
    let np_t: Vec<f64> = ok.iter().filter_map(|r| r.np_tute).collect();
    let np_finite: Vec<f64> = np_t.iter().copied().filter(|t| t.is_finite()).collect();
    let rmse = |v: &[f64]| mean(v.iter().map(|t| (t - true_tute).powi(2))).map(f64::sqrt);
    Ok(CurveStudyRow {
        scenario: id,
        n_per_arm: config.n,
        reps: config.reps,
        failures,
        pv_curve_bias: mean(ok.iter().filter_map(|r| r.pv_abs_err)),
        pv_coverage: mean(ok.iter().filter_map(|r| r.pv_covered.map(|c| f64::from(u8::from(c))))),
        pv_length: mean(ok.iter().filter_map(|r| r.pv_length)),
        np_curve_bias: mean(ok.iter().filter_map(|r| r.np_abs_err)),
        true_tute,
        pv_tute_bias: mean(pv_finite.iter().map(|t| t - true_tute)),
        pv_tute_coverage: mean(pv_t.iter().map(|t| f64::from(u8::from(t.1)))),
        pv_tute_rmse: rmse(&pv_finite),
        pv_tute_mse: rmse(&pv_finite).map(|r| r * r),
        pv_tute_infinite: pv_t.len() - pv_finite.len(),
        pv_right_open: mean(pv_t.iter().map(|t| f64::from(u8::from(t.2)))),
        np_tute_bias: mean(np_finite.iter().map(|t| t - true_tute)),
        np_tute_rmse: rmse(&np_finite),
        np_tute_infinite: np_t.len() - np_finite.len(),
    })
}

fn curve_replicate(
    config: &StudyConfig,
    spec: &ScenarioSpec,
    sample: &SurvivalSample<f64>,
    pv_cfg: &PvConfig,
    r: usize,
    do_tute: bool,
    true_tute: f64,
) -> Result<CurveRep> {
    let mut rep = CurveRep::default();
    let km0 = km_fit(sample, Some(0))?;
    let km1 = km_fit(sample, Some(1))?;
    // both curves are scored where both arms are still under follow-up
    let horizon = km0.last_time.min(km1.last_time);
    let mut range = (0.0, horizon);
    if config.vector_pv {
        let a = fit_pv_model(sample, pv_cfg)?;
        range = (a.grid().first(), a.grid().last().min(horizon));
        let eval = follow_up_grid(range.0, range.1, config.eval_points);
        let seed = derive_seed(config.seed, tag::STUDY, r as u64);
        let (curve, _) = a.band_on(&eval, config.alpha, config.band_draws, seed)?;
        let truth: Vec<f64> = curve.eval_grid.iter().map(|&t| spec.true_rmst_diff(t)).collect();
        rep.pv_abs_err = mean(curve.estimate.iter().zip(&truth).map(|(e, t)| (e - t).abs()));
        rep.pv_covered = Some(band_coverage_check(&curve, &truth)?);
        rep.pv_length = curve.mean_band_width();
        if do_tute {
            let est = tute_ci_band(&curve);
            rep.pv_tute = Some((est.point, est.covers(true_tute), est.right_open()));
        }
    }
    if config.plugin {
        let grid = follow_up_grid(range.0, range.1, config.eval_points);
        let mut errs = Vec::with_capacity(grid.len());
        for &t in &grid {
            let d = rmst(&km1, t)?.value - rmst(&km0, t)?.value;
            errs.push((d - spec.true_rmst_diff(t)).abs());
        }
        rep.np_abs_err = mean(errs);
        if do_tute {
            rep.np_tute = Some(plugin_tute(sample)?);
        }
    }
    Ok(rep)
}

fn bias_study(config: &StudyConfig, delta: f64, beta_b: f64, p: f64, sc: &CalibratedScenario) -> Result<BiasStudyRow> {
    let spec = &sc.spec;
    let tau = spec.bias_tau().expect("bias cell has a restriction time");
    let true_baseline = spec.arm0.true_rmst(tau);
    let true_z = spec.true_rmst_diff(tau);
    let pv_cfg = config.pv_config();
    // the bias design draws n subjects in total
    let n_half = config.n / 2;
    let reps: Vec<BiasRep> = (0..config.reps)
        .into_par_iter()
        .map(|r| {
            let sample = match sc.simulate(n_half, config.seed, r as u64) {
                Ok(s) => s,
                Err(e) => {
                    debug!("replicate {r}: simulation failed: {e}");
                    return BiasRep { failed: true, ..Default::default() };
                }
            };
            match bias_replicate(config, &sample, &pv_cfg, tau) {
                Ok(rep) => rep,
                Err(e) => {
                    debug!("replicate {r} failed: {e}");
                    BiasRep { failed: true, ..Default::default() }
                }
            }
        })
        .collect();
    let kept: Vec<&BiasRep> = reps.iter().filter(|r| !r.excluded && !r.failed).collect();
    Ok(BiasStudyRow {
        delta,
        beta_b,
        p,
        n: 2 * n_half,
        reps: config.reps,
        tau,
        true_baseline,
        true_z_effect: true_z,
        excluded_short_follow_up: reps.iter().filter(|r| r.excluded).count(),
        vector_extrapolated: kept.iter().filter(|r| r.extrapolated).count(),
        failures: reps.iter().filter(|r| r.failed).count(),
        scalar_baseline_bias: mean(kept.iter().filter_map(|r| r.scalar.map(|s| s.0 - true_baseline))),
        scalar_z_bias: mean(kept.iter().filter_map(|r| r.scalar.map(|s| s.1 - true_z))),
        vector_baseline_bias: mean(kept.iter().filter_map(|r| r.vector.map(|s| s.0 - true_baseline))),
        vector_z_bias: mean(kept.iter().filter_map(|r| r.vector.map(|s| s.1 - true_z))),
    })
}

fn bias_replicate(config: &StudyConfig, sample: &SurvivalSample<f64>, pv_cfg: &PvConfig, tau: f64) -> Result<BiasRep> {
    let mut rep = BiasRep::default();
    match sample.last_event_time() {
        Some(t) if t >= tau => {}
        _ => {
            rep.excluded = true;
            return Ok(rep);
        }
    }
    if config.scalar_pv {
        rep.scalar = Some(scalar_pv_effects(sample, tau)?);
    }
    if config.vector_pv {
        let a = fit_pv_model(sample, pv_cfg)?;
        rep.extrapolated = a.grid().last() < tau;
        let model = a.model();
        rep.vector = Some((model.baseline(tau), model.estimate(tau)));
    }
    Ok(rep)
}
