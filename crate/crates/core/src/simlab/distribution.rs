//! Event-time distributions with closed-form survival, restricted means and
//! inverse-transform sampling.

use crate::error::{Error, Result};
use crate::numerics::{gamma, upper_incomplete_gamma};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DistributionSpec {
    /// `S(t) = exp(−(t/scale)^shape)`.
    WeibullShapeScale { shape: f64, scale: f64 },
    /// `S(t) = exp(−rate · t^shape)`.
    WeibullRateShape { rate: f64, shape: f64 },
    /// `S(t) = exp(−rate · t)`.
    Exponential { rate: f64 },
    /// Hazard `rates[k]` on `[breakpoints[k−1], breakpoints[k])`, with
    /// `breakpoints[−1] = 0` and the last rate extending to infinity.
    PiecewiseExponential { breakpoints: Vec<f64>, rates: Vec<f64> },
}

impl DistributionSpec {
    pub fn validate(&self) -> Result<()> {
        let pos = |x: f64, what: &str| {
            if x > 0.0 && x.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidInput(format!("{what} must be positive, got {x}")))
            }
        };
        match self {
            DistributionSpec::WeibullShapeScale { shape, scale } => {
                pos(*shape, "shape")?;
                pos(*scale, "scale")
            }
            DistributionSpec::WeibullRateShape { rate, shape } => {
                pos(*rate, "rate")?;
                pos(*shape, "shape")
            }
            DistributionSpec::Exponential { rate } => pos(*rate, "rate"),
            DistributionSpec::PiecewiseExponential { breakpoints, rates } => {
                if rates.len() != breakpoints.len() + 1 {
                    return Err(Error::InvalidInput(
                        "piecewise exponential needs one more rate than breakpoints".into(),
                    ));
                }
                for &r in rates {
                    pos(r, "hazard rate")?;
                }
                let mut prev = 0.0;
                for &b in breakpoints {
                    if !(b > prev) {
                        return Err(Error::InvalidInput(
                            "breakpoints must be positive and increasing".into(),
                        ));
                    }
                    prev = b;
                }
                Ok(())
            }
        }
    }

    pub fn cumulative_hazard(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        match self {
            DistributionSpec::WeibullShapeScale { shape, scale } => (t / scale).powf(*shape),
            DistributionSpec::WeibullRateShape { rate, shape } => rate * t.powf(*shape),
            DistributionSpec::Exponential { rate } => rate * t,
            DistributionSpec::PiecewiseExponential { breakpoints, rates } => {
                let mut h = 0.0;
                let mut start = 0.0;
                for (k, &rate) in rates.iter().enumerate() {
                    let end = breakpoints.get(k).copied().unwrap_or(f64::INFINITY);
                    h += rate * (t.min(end) - start);
                    if t <= end {
                        break;
                    }
                    start = end;
                }
                h
            }
        }
    }

    pub fn survival(&self, t: f64) -> f64 {
        (-self.cumulative_hazard(t)).exp()
    }

    /// `H⁻¹(h)`: the time at which the cumulative hazard reaches `h`.
    pub fn inverse_cumulative_hazard(&self, h: f64) -> f64 {
        if h <= 0.0 {
            return 0.0;
        }
        match self {
            DistributionSpec::WeibullShapeScale { shape, scale } => scale * h.powf(1.0 / shape),
            DistributionSpec::WeibullRateShape { rate, shape } => (h / rate).powf(1.0 / shape),
            DistributionSpec::Exponential { rate } => h / rate,
            DistributionSpec::PiecewiseExponential { breakpoints, rates } => {
                let mut start = 0.0;
                let mut remaining = h;
                for (k, &rate) in rates.iter().enumerate() {
                    let end = breakpoints.get(k).copied().unwrap_or(f64::INFINITY);
                    let seg = rate * (end - start);
                    if remaining <= seg {
                        return start + remaining / rate;
                    }
                    remaining -= seg;
                    start = end;
                }
                unreachable!("last piece extends to infinity")
            }
        }
    }

    /// Inverse transform of a unit exponential draw.
    pub fn sample_from_exp1(&self, e: f64) -> f64 {
        self.inverse_cumulative_hazard(e)
    }

    pub fn quantile(&self, p: f64) -> f64 {
        self.inverse_cumulative_hazard(-(1.0 - p).ln())
    }

    /// Exact restricted mean `∫_0^τ S(t) dt`.
    pub fn true_rmst(&self, tau: f64) -> f64 {
        if tau <= 0.0 {
            return 0.0;
        }
        match self {
            DistributionSpec::WeibullShapeScale { shape, scale } => {
                let a = 1.0 / shape;
                scale / shape * (gamma(a) - upper_incomplete_gamma(a, (tau / scale).powf(*shape)))
            }
            DistributionSpec::WeibullRateShape { rate, shape } => {
                let a = 1.0 / shape;
                a * rate.powf(-a) * (upper_incomplete_gamma(a, 0.0) - upper_incomplete_gamma(a, rate * tau.powf(*shape)))
            }
            DistributionSpec::Exponential { rate } => -(-rate * tau).exp_m1() / rate,
            DistributionSpec::PiecewiseExponential { breakpoints, rates } => {
                let mut area = 0.0;
                let mut h: f64 = 0.0;
                let mut start = 0.0;
                for (k, &rate) in rates.iter().enumerate() {
                    let end = breakpoints.get(k).copied().unwrap_or(f64::INFINITY).min(tau);
                    let len = end - start;
                    area += (-h).exp() * -(-rate * len).exp_m1() / rate;
                    h += rate * len;
                    if end >= tau {
                        break;
                    }
                    start = end;
                }
                area
            }
        }
    }
}
