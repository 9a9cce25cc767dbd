//! Simulation laboratory: scenario generators, analytic truths, censoring
//! calibration and the replicate harness.

pub mod config;
pub mod distribution;
pub mod scenario;
pub mod study;

pub use config::{parse_pairs, parse_study_config, study_config_from_pairs};
pub use distribution::DistributionSpec;
pub use scenario::{simulate, Allocation, CalibratedScenario, CensorDraw, Censoring, ScenarioName, ScenarioSpec};
pub use study::{replicate_curve_study, replicate_study, BiasStudyRow, CurveStudyRow, StudyConfig, StudyReport, StudyTarget};
