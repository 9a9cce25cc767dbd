//! Restricted mean survival time (RMST) difference curves from jackknife
//! pseudo-values and GEE regression, with pointwise and simultaneous
//! confidence bands and time-until-treatment-equipoise (TUTE) estimation.
//!
//! The nonparametric layer (`survival`, `pseudo`, `basis`) is generic over
//! [`Scalar`]; the regression layer works in `f64`. The aliases below name
//! the `f64` instantiations.

pub mod analysis;
pub mod basis;
pub mod error;
pub mod gee;
pub mod inference;
pub mod numerics;
pub mod pseudo;
pub mod rng;
pub mod scalar;
pub mod simlab;
pub mod survival;
pub mod tute;

pub use analysis::{fit_pv_model, fit_pv_model_on_grid, scalar_pv_effects, PvAnalysis, PvConfig, TimeModel};
pub use basis::{build_design, BasisKind, DesignLayout, DesignMatrix};
pub use error::{Error, Result};
pub use gee::{gee_fit, select_df, GeeFit, GeeOptions, LinkFunction, QicPenalty};
pub use inference::{diff_curve, simultaneous_band, RmstDiffCurve, RmstDiffModel};
pub use pseudo::{pseudo_values, pseudo_values_naive, pseudo_values_within_arms, select_grid, GridSpacing};
pub use scalar::Scalar;
pub use survival::{km_fit, rmst, rmst_diff_plugin, Subject};
pub use tute::{tute_ci_band, tute_ci_bootstrap, tute_point, TuteEstimate, TuteMethod};

pub type Sample = survival::SurvivalSample<f64>;
pub type KmCurve = survival::StepSurvivalCurve<f64>;
pub type Grid = pseudo::RestrictionGrid<f64>;
pub type PseudoValues = pseudo::PseudoValueMatrix<f64>;
pub type Spline = basis::SplineBasis<f64>;
