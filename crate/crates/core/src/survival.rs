//! Right-censored two-arm survival data, Kaplan-Meier estimation and exact
//! restricted-mean integration of step survival curves.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use serde::{Deserialize, Serialize};

/// One subject: follow-up time, event indicator (`true` = event observed),
/// treatment arm (0 or 1) and optional covariates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "T: Deserialize<'de>"))]
pub struct Subject<T> {
    pub time: T,
    pub event: bool,
    pub arm: u8,
    #[serde(default)]
    pub covariates: Vec<T>,
}

impl<T: Scalar> Subject<T> {
    pub fn new(time: T, event: bool, arm: u8) -> Self {
        Subject {
            time,
            event,
            arm,
            covariates: Vec::new(),
        }
    }

    pub fn with_covariates(mut self, covariates: Vec<T>) -> Self {
        self.covariates = covariates;
        self
    }
}

/// Validated collection of subjects.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SurvivalSample<T> {
    subjects: Vec<Subject<T>>,
}

impl<T: Scalar> SurvivalSample<T> {
    /// Checks times are finite and nonnegative, arms are binary, every
    /// subject carries the same number of covariates, and `n >= 2`.
    pub fn new(subjects: Vec<Subject<T>>) -> Result<Self> {
        if subjects.len() < 2 {
            return Err(Error::InvalidInput(format!(
                "need at least 2 subjects, got {}",
                subjects.len()
            )));
        }
        let p = subjects[0].covariates.len();
        for (i, s) in subjects.iter().enumerate() {
            if !s.time.is_finite() || s.time < T::zero() {
                return Err(Error::InvalidInput(format!(
                    "subject {i}: time must be finite and >= 0, got {}",
                    s.time
                )));
            }
            if s.arm > 1 {
                return Err(Error::InvalidInput(format!(
                    "subject {i}: arm must be 0 or 1, got {}",
                    s.arm
                )));
            }
            if s.covariates.len() != p {
                return Err(Error::InvalidInput(format!(
                    "subject {i}: expected {p} covariates, got {}",
                    s.covariates.len()
                )));
            }
            if s.covariates.iter().any(|c| !c.is_finite()) {
                return Err(Error::InvalidInput(format!(
                    "subject {i}: non-finite covariate"
                )));
            }
        }
        Ok(SurvivalSample { subjects })
    }

    pub fn from_columns(times: &[T], events: &[bool], arms: &[u8]) -> Result<Self> {
        if times.len() != events.len() || times.len() != arms.len() {
            return Err(Error::InvalidInput(
                "times, events and arms must have equal length".into(),
            ));
        }
        let subjects = times
            .iter()
            .zip(events)
            .zip(arms)
            .map(|((&t, &e), &a)| Subject::new(t, e, a))
            .collect();
        Self::new(subjects)
    }

    pub fn subjects(&self) -> &[Subject<T>] {
        &self.subjects
    }

    pub fn len(&self) -> usize {
        self.subjects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subjects.is_empty()
    }

    pub fn n_covariates(&self) -> usize {
        self.subjects[0].covariates.len()
    }

    pub fn arm_size(&self, arm: u8) -> usize {
        self.subjects.iter().filter(|s| s.arm == arm).count()
    }

    pub fn arm_events(&self, arm: u8) -> usize {
        self.subjects
            .iter()
            .filter(|s| s.arm == arm && s.event)
            .count()
    }

    /// Error unless both arms have at least one observed event.
    pub fn require_events_per_arm(&self) -> Result<()> {
        for arm in 0..=1 {
            if self.arm_size(arm) == 0 {
                return Err(Error::EmptyArm(arm));
            }
            if self.arm_events(arm) == 0 {
                return Err(Error::InvalidInput(format!("no events in arm {arm}")));
            }
        }
        Ok(())
    }

    /// Largest observed event time, if any.
    pub fn last_event_time(&self) -> Option<T> {
        self.subjects
            .iter()
            .filter(|s| s.event)
            .map(|s| s.time)
            .fold(None, |acc, t| Some(acc.map_or(t, |a: T| a.max(t))))
    }

    pub fn censored_fraction(&self) -> f64 {
        let c = self.subjects.iter().filter(|s| !s.event).count();
        c as f64 / self.len() as f64
    }

    /// Scales every time by `c > 0`.
    pub fn rescale_time(&self, c: T) -> Self {
        let subjects = self
            .subjects
            .iter()
            .map(|s| Subject {
                time: s.time * c,
                ..s.clone()
            })
            .collect();
        SurvivalSample { subjects }
    }

    /// Resampled copy with the given subject indices (duplicates allowed).
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        Self::new(indices.iter().map(|&i| self.subjects[i].clone()).collect())
    }
}

/// Distinct observed times with risk-set sizes and event counts, in
/// increasing time order. Shared by the Kaplan-Meier fit and the
/// leave-one-out pseudo-value recursion.
#[derive(Debug, Clone)]
pub struct RiskTable<T> {
    pub times: Vec<T>,
    pub at_risk: Vec<usize>,
    pub events: Vec<usize>,
    /// Index into `times` of each input subject, in input order.
    pub subject_slot: Vec<usize>,
}

impl<T: Scalar> RiskTable<T> {
    pub fn build<'a, I>(obs: I) -> Self
    where
        I: IntoIterator<Item = (T, bool)>,
    {
        let obs: Vec<(T, bool)> = obs.into_iter().collect();
        let mut order: Vec<usize> = (0..obs.len()).collect();
        order.sort_by(|&a, &b| obs[a].0.partial_cmp(&obs[b].0).expect("finite times"));
        let mut times = Vec::new();
        let mut events = Vec::new();
        let mut counts = Vec::new();
        let mut subject_slot = vec![0usize; obs.len()];
        for &i in &order {
            let (t, e) = obs[i];
            if times.last() != Some(&t) {
                times.push(t);
                events.push(0);
                counts.push(0);
            }
            let k = times.len() - 1;
            counts[k] += 1;
            if e {
                events[k] += 1;
            }
            subject_slot[i] = k;
        }
        let mut at_risk = vec![0usize; times.len()];
        let mut remaining = obs.len();
        for k in 0..times.len() {
            at_risk[k] = remaining;
            remaining -= counts[k];
        }
        RiskTable {
            times,
            at_risk,
            events,
            subject_slot,
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// Kaplan-Meier product-limit estimate as a right-continuous step function.
///
/// `survival[k]` is the value on `[jump_times[k], jump_times[k + 1])`; the
/// curve equals 1 before the first jump and stays at the last value beyond
/// the final jump.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepSurvivalCurve<T> {
    pub jump_times: Vec<T>,
    pub survival: Vec<T>,
    pub at_risk: Vec<usize>,
    pub events: Vec<usize>,
    /// Largest observed time (event or censoring).
    pub last_time: T,
}

impl<T: Scalar> StepSurvivalCurve<T> {
    pub fn survival_at(&self, t: T) -> T {
        match self.jump_times.iter().rposition(|&x| x <= t) {
            Some(k) => self.survival[k],
            None => T::one(),
        }
    }

    pub fn last_survival(&self) -> T {
        self.survival.last().copied().unwrap_or_else(T::one)
    }

    pub fn last_event_time(&self) -> Option<T> {
        self.jump_times.last().copied()
    }
}

/// Product-limit estimate from `(time, event)` pairs. Events precede
/// censorings at tied times.
pub fn km_from_observations<T: Scalar>(obs: impl IntoIterator<Item = (T, bool)>) -> Option<StepSurvivalCurve<T>> {
    let table = RiskTable::build(obs);
    let last_time = *table.times.last()?;
    let mut s = T::one();
    let mut curve = StepSurvivalCurve {
        jump_times: Vec::new(),
        survival: Vec::new(),
        at_risk: Vec::new(),
        events: Vec::new(),
        last_time,
    };
    for k in 0..table.len() {
        let d = table.events[k];
        if d == 0 {
            continue;
        }
        let n = table.at_risk[k];
        s = s * (T::one() - T::from_count(d) / T::from_count(n));
        curve.jump_times.push(table.times[k]);
        curve.survival.push(s);
        curve.at_risk.push(n);
        curve.events.push(d);
    }
    Some(curve)
}

/// Kaplan-Meier fit on the whole sample or one arm.
pub fn km_fit<T: Scalar>(sample: &SurvivalSample<T>, arm: Option<u8>) -> Result<StepSurvivalCurve<T>> {
    let obs = sample
        .subjects()
        .iter()
        .filter(|s| arm.is_none_or(|a| s.arm == a))
        .map(|s| (s.time, s.event));
    km_from_observations(obs).ok_or(Error::EmptyArm(arm.unwrap_or(0)))
}

/// Restricted mean with an extrapolation flag.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rmst<T> {
    pub value: T,
    /// `tau` lies beyond the last observed time while the curve is still
    /// positive, so the value relies on constant extension.
    pub extrapolated: bool,
}

/// Exact `∫_0^τ S(t) dt` of a step survival curve.
pub fn rmst<T: Scalar>(curve: &StepSurvivalCurve<T>, tau: T) -> Result<Rmst<T>> {
    if !(tau > T::zero()) || !tau.is_finite() {
        return Err(Error::InvalidInput(format!(
            "restriction time must be positive, got {tau}"
        )));
    }
    Ok(Rmst {
        value: integrate_step(&curve.jump_times, &curve.survival, tau),
        extrapolated: tau > curve.last_time && curve.last_survival() > T::zero(),
    })
}

/// Integral on `[0, tau]` of a step function that is 1 before `times[0]`
/// and `values[k]` on `[times[k], times[k+1])`.
pub(crate) fn integrate_step<T: Scalar>(times: &[T], values: &[T], tau: T) -> T {
    let mut area = T::zero();
    let mut prev_t = T::zero();
    let mut level = T::one();
    for (&t, &v) in times.iter().zip(values) {
        if t >= tau {
            break;
        }
        area = area + level * (t - prev_t);
        prev_t = t;
        level = v;
    }
    area + level * (tau - prev_t)
}

/// Plug-in Kaplan-Meier RMST difference (arm 1 minus arm 0) on a grid.
///
/// Refuses restriction times at which either arm's curve would be
/// extrapolated.
pub fn rmst_diff_plugin<T: Scalar>(sample: &SurvivalSample<T>, grid: &[T]) -> Result<Vec<T>> {
    let km0 = km_fit(sample, Some(0))?;
    let km1 = km_fit(sample, Some(1))?;
    grid.iter()
        .map(|&tau| {
            let r1 = rmst(&km1, tau)?;
            let r0 = rmst(&km0, tau)?;
            for (r, km) in [(r1, &km1), (r0, &km0)] {
                if r.extrapolated {
                    return Err(Error::Extrapolation {
                        tau: tau.to_f64_lossy(),
                        last_event: km.last_time.to_f64_lossy(),
                    });
                }
            }
            Ok(r1.value - r0.value)
        })
        .collect()
}
