//! Two-arm simulation scenarios, analytic ground truth and censoring
//! calibration.

use super::distribution::DistributionSpec;
use crate::error::{Error, Result};
use crate::numerics::{bisect, brent, first_crossing_after_departure, integrate_to_inf, Crossing};
use crate::rng::{keyed_rng, tag};
use crate::survival::{Subject, SurvivalSample};
use crate::tute::tute_point;
use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Censoring {
    None,
    /// `C ~ Uniform(0, c)` with `c` calibrated to the pooled target fraction.
    Uniform { pct: f64 },
    /// `C ~ Exponential(μ)` with `μ` calibrated to the pooled target fraction.
    Exponential { pct: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Allocation {
    /// `n_per_arm` subjects in each arm, arm 0 first.
    Fixed,
    /// `2·n_per_arm` subjects with `P(arm = 1) = p1`.
    Bernoulli { p1: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScenarioName {
    Numbered { id: u8 },
    WeibullBias { delta: f64, beta_b: f64, p: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub name: ScenarioName,
    pub arm0: DistributionSpec,
    pub arm1: DistributionSpec,
    pub censoring: Censoring,
    pub allocation: Allocation,
    /// Administrative end of follow-up; `None` means unlimited.
    pub follow_up: Option<f64>,
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<()> {
        self.arm0.validate()?;
        self.arm1.validate()?;
        match self.censoring {
            Censoring::Uniform { pct } | Censoring::Exponential { pct } if !(pct > 0.0 && pct < 1.0) => {
                return Err(Error::InvalidInput(format!(
                    "censoring fraction must be in (0,1), got {pct}"
                )));
            }
            _ => {}
        }
        if let Allocation::Bernoulli { p1 } = self.allocation {
            if !(p1 > 0.0 && p1 < 1.0) {
                return Err(Error::InvalidInput(format!("allocation probability {p1} not in (0,1)")));
            }
        }
        Ok(())
    }

    fn arm_weights(&self) -> (f64, f64) {
        match self.allocation {
            Allocation::Fixed => (0.5, 0.5),
            Allocation::Bernoulli { p1 } => (1.0 - p1, p1),
        }
    }

    pub fn arm(&self, arm: u8) -> &DistributionSpec {
        if arm == 0 {
            &self.arm0
        } else {
            &self.arm1
        }
    }

    /// Numbered two-arm scenario 1–5. Arm 0 is the first listed
    /// distribution, arm 1 the second; 20% pooled uniform censoring.
    pub fn numbered(id: u8) -> Result<Self> {
        use DistributionSpec::*;
        let (arm0, arm1) = match id {
            1 => (
                WeibullRateShape { rate: 0.18, shape: 1.5 },
                WeibullRateShape { rate: 0.20, shape: 0.75 },
            ),
            2 => (
                WeibullShapeScale { shape: 2.5, scale: 30.0 },
                PiecewiseExponential { breakpoints: vec![1.0], rates: vec![0.125, 0.01] },
            ),
            3 => (
                Exponential { rate: 1.0 / 12.0 },
                PiecewiseExponential { breakpoints: vec![2.0], rates: vec![0.25, 1.0 / 35.0] },
            ),
            4 => (
                WeibullShapeScale { shape: 1.5, scale: 5.0 },
                PiecewiseExponential { breakpoints: vec![1.5], rates: vec![0.5, 0.1] },
            ),
            5 => (
                WeibullShapeScale { shape: 1.6, scale: 110.0 },
                PiecewiseExponential {
                    breakpoints: vec![12.0, 30.0],
                    rates: vec![0.0025, 0.01, 0.003],
                },
            ),
            other => {
                return Err(Error::InvalidInput(format!(
                    "unknown scenario id {other} (expected 1-5)"
                )))
            }
        };
        Ok(ScenarioSpec {
            name: ScenarioName::Numbered { id },
            arm0,
            arm1,
            censoring: Censoring::Uniform { pct: 0.20 },
            allocation: Allocation::Fixed,
            follow_up: None,
        })
    }

    /// Weibull bias cell: `S(t | Z) = exp(−e^{β_b Z} t^δ)`, `Z ~ Bernoulli(½)`,
    /// 25% pooled exponential censoring.
    pub fn weibull_bias(delta: f64, beta_b: f64, p: f64) -> Result<Self> {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::InvalidInput(format!("percentile p must be in (0,1), got {p}")));
        }
        let spec = ScenarioSpec {
            name: ScenarioName::WeibullBias { delta, beta_b, p },
            arm0: DistributionSpec::WeibullRateShape { rate: 1.0, shape: delta },
            arm1: DistributionSpec::WeibullRateShape { rate: beta_b.exp(), shape: delta },
            censoring: Censoring::Exponential { pct: 0.25 },
            allocation: Allocation::Bernoulli { p1: 0.5 },
            follow_up: None,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Restriction time of a Weibull bias cell: the `p`-th percentile of the
    /// baseline arm.
    pub fn bias_tau(&self) -> Option<f64> {
        match self.name {
            ScenarioName::WeibullBias { delta, p, .. } => Some((-(1.0 - p).ln()).powf(1.0 / delta)),
            _ => None,
        }
    }

    pub fn true_rmst_diff(&self, t: f64) -> f64 {
        self.arm1.true_rmst(t) - self.arm0.true_rmst(t)
    }

    /// Upper end of the truth search window.
    fn horizon(&self) -> f64 {
        self.arm0.quantile(0.9999).max(self.arm1.quantile(0.9999))
    }

    /// First crossing of the two survival curves (`+∞` if none).
    pub fn true_crossing(&self) -> f64 {
        let hi = self.horizon();
        let k = 20_000;
        let ts: Vec<f64> = (1..=k).map(|i| hi * i as f64 / k as f64).collect();
        let f = |t: f64| self.arm1.survival(t) - self.arm0.survival(t);
        let vals: Vec<f64> = ts.iter().map(|&t| f(t)).collect();
        match first_crossing_after_departure(&ts, &vals, 1e-9, None) {
            Crossing::Bracket { lo, hi, .. } => bisect(f, lo, hi, 1e-12).unwrap_or(hi),
            _ => f64::INFINITY,
        }
    }

    /// Root of the true RMST difference (`+∞` if none).
    pub fn true_tute(&self) -> f64 {
        let hi = self.horizon();
        tute_point(|t| self.true_rmst_diff(t), hi * 1e-6, hi, None).value
    }

    /// Calibrates the censoring distribution.
    pub fn calibrate(&self) -> Result<CalibratedScenario> {
        self.validate()?;
        let (w0, w1) = self.arm_weights();
        let censor = match self.censoring {
            Censoring::None => CensorDraw::None,
            Censoring::Uniform { pct } => {
                // P(C < T) = RMST(c) / c for C ~ U(0, c)
                let frac = |c: f64| (w0 * self.arm0.true_rmst(c) + w1 * self.arm1.true_rmst(c)) / c;
                let mut hi = self.arm0.quantile(0.5).max(self.arm1.quantile(0.5));
                let mut tries = 0;
                while frac(hi) > pct {
                    hi *= 2.0;
                    tries += 1;
                    if tries > 200 {
                        return Err(Error::Calibration(format!(
                            "cannot reach {pct} uniform censoring: fraction {} at c={hi}",
                            frac(hi)
                        )));
                    }
                }
                let c = brent(|c| frac(c) - pct, hi * 1e-9, hi, 1e-12 * hi, 500)?;
                CensorDraw::Uniform { upper: c }
            }
            Censoring::Exponential { pct } => {
                // P(C < T) = ∫ μe^{−μt} S(t) dt = ∫ e^{−u} S(u/μ) du
                let frac = |mu: f64| {
                    let f = |u: f64| (-u).exp() * (w0 * self.arm0.survival(u / mu) + w1 * self.arm1.survival(u / mu));
                    integrate_to_inf(f, 0.0, 1e-13)
                };
                let scale = 1.0 / self.arm0.quantile(0.5).max(self.arm1.quantile(0.5));
                let (mut lo, mut hi) = (scale, scale);
                let mut tries = 0;
                while frac(lo) > pct && tries < 200 {
                    lo *= 0.5;
                    tries += 1;
                }
                while frac(hi) < pct && tries < 400 {
                    hi *= 2.0;
                    tries += 1;
                }
                let mu = brent(|m| frac(m) - pct, lo, hi, 1e-14 * hi, 500)?;
                CensorDraw::Exponential { rate: mu }
            }
        };
        Ok(CalibratedScenario {
            spec: self.clone(),
            censor,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CensorDraw {
    None,
    Uniform { upper: f64 },
    Exponential { rate: f64 },
}

#[derive(Debug, Clone, Serialize)]
pub struct CalibratedScenario {
    pub spec: ScenarioSpec,
    pub censor: CensorDraw,
}

impl CalibratedScenario {
    /// Expected pooled censored fraction under the calibrated censoring.
    pub fn expected_censored_fraction(&self) -> f64 {
        let (w0, w1) = self.spec.arm_weights();
        let spec = &self.spec;
        match self.censor {
            CensorDraw::None => 0.0,
            CensorDraw::Uniform { upper } => {
                (w0 * spec.arm0.true_rmst(upper) + w1 * spec.arm1.true_rmst(upper)) / upper
            }
            CensorDraw::Exponential { rate } => {
                let f = |u: f64| (-u).exp() * (w0 * spec.arm0.survival(u / rate) + w1 * spec.arm1.survival(u / rate));
                integrate_to_inf(f, 0.0, 1e-13)
            }
        }
    }

    /// Draws replicate `replicate` of a sample. Each subject has its own
    /// keyed stream, so the result is independent of evaluation order.
    pub fn simulate(&self, n_per_arm: usize, seed: u64, replicate: u64) -> Result<SurvivalSample<f64>> {
        if n_per_arm < 10 {
            return Err(Error::InvalidInput(format!(
                "need at least 10 subjects per arm, got {n_per_arm}"
            )));
        }
        let total = 2 * n_per_arm;
        let subjects = (0..total)
            .map(|i| {
                let mut rng = keyed_rng(seed, tag::SIMULATE, replicate, i as u64);
                let arm = match self.spec.allocation {
                    Allocation::Fixed => u8::from(i >= n_per_arm),
                    Allocation::Bernoulli { p1 } => u8::from(rng.random::<f64>() < p1),
                };
                let e: f64 = Exp1.sample(&mut rng);
                let t = self.spec.arm(arm).sample_from_exp1(e);
                let c = match self.censor {
                    CensorDraw::None => f64::INFINITY,
                    CensorDraw::Uniform { upper } => upper * rng.random::<f64>(),
                    CensorDraw::Exponential { rate } => {
                        let e: f64 = Exp1.sample(&mut rng);
                        e / rate
                    }
                };
                let c = self.spec.follow_up.map_or(c, |f| c.min(f));
                Subject::new(t.min(c), t <= c, arm)
            })
            .collect();
        SurvivalSample::new(subjects)
    }
}

/// Calibrates and draws one sample.
pub fn simulate(scenario: &ScenarioSpec, n_per_arm: usize, seed: u64) -> Result<SurvivalSample<f64>> {
    scenario.calibrate()?.simulate(n_per_arm, seed, 0)
}
