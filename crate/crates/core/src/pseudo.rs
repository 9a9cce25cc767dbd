//! Jackknife pseudo-observations of the restricted mean at a grid of
//! restriction times.
//!
//! For subject `i` and restriction time `τ` the pseudo-value is
//! `n·θ̂(τ) − (n−1)·θ̂₋ᵢ(τ)` where `θ̂` is the Kaplan-Meier restricted mean and
//! `θ̂₋ᵢ` the same estimate with subject `i` removed.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::survival::{integrate_step, km_from_observations, RiskTable, SurvivalSample};
use log::warn;
use rayon::prelude::*;
use serde::Serialize;

/// Largest number of restriction times `select_grid` will produce.
pub const MAX_SELECTED_GRID: usize = 20;
/// Hard upper bound on any restriction grid.
pub const MAX_GRID: usize = 30;
/// Default number of restriction times.
pub const DEFAULT_GRID_SIZE: usize = 16;
/// Upper quantile of the event-time distribution used for the last
/// restriction time.
pub const UPPER_EVENT_QUANTILE: f64 = 0.99;

/// Strictly increasing positive restriction times `τ_1 < … < τ_M`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RestrictionGrid<T> {
    taus: Vec<T>,
}

impl<T: Scalar> RestrictionGrid<T> {
    pub fn new(taus: Vec<T>) -> Result<Self> {
        if taus.is_empty() || taus.len() > MAX_GRID {
            return Err(Error::InvalidInput(format!(
                "restriction grid needs 1..={MAX_GRID} points, got {}",
                taus.len()
            )));
        }
        if taus.iter().any(|&t| !(t > T::zero()) || !t.is_finite()) {
            return Err(Error::InvalidInput(
                "restriction times must be positive and finite".into(),
            ));
        }
        if taus.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidInput(
                "restriction times must be strictly increasing".into(),
            ));
        }
        Ok(RestrictionGrid { taus })
    }

    pub fn taus(&self) -> &[T] {
        &self.taus
    }

    pub fn len(&self) -> usize {
        self.taus.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taus.is_empty()
    }

    pub fn first(&self) -> T {
        self.taus[0]
    }

    pub fn last(&self) -> T {
        self.taus[self.taus.len() - 1]
    }
}

/// How grid points are placed between the first event time and the upper
/// event quantile.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GridSpacing {
    #[default]
    EventQuantiles,
    Equal,
}

#[derive(Debug, Clone)]
pub struct GridSelection<T> {
    pub grid: RestrictionGrid<T>,
    pub warnings: Vec<String>,
}

/// Type-7 sample quantile of sorted data.
pub fn quantile_sorted<T: Scalar>(sorted: &[T], p: f64) -> T {
    assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    let frac = T::lit(h - lo as f64);
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Chooses `m` restriction times at event-time quantiles from the smallest
/// event time to the 99th percentile, pooled over arms.
pub fn select_grid<T: Scalar>(sample: &SurvivalSample<T>, m: usize) -> Result<GridSelection<T>> {
    select_grid_with(sample, m, GridSpacing::EventQuantiles)
}

pub fn select_grid_with<T: Scalar>(
    sample: &SurvivalSample<T>,
    m: usize,
    spacing: GridSpacing,
) -> Result<GridSelection<T>> {
    if m == 0 {
        return Err(Error::InvalidInput("grid size must be positive".into()));
    }
    let mut warnings = Vec::new();
    let mut event_times: Vec<T> = sample
        .subjects()
        .iter()
        .filter(|s| s.event && s.time > T::zero())
        .map(|s| s.time)
        .collect();
    if event_times.is_empty() {
        return Err(Error::InvalidInput("sample has no positive event times".into()));
    }
    event_times.sort_by(|a, b| a.partial_cmp(b).expect("finite times"));
    let mut distinct = event_times.clone();
    distinct.dedup();

    let mut m = m;
    if m > MAX_SELECTED_GRID {
        warnings.push(format!(
            "grid size {m} capped at {MAX_SELECTED_GRID} restriction times"
        ));
        m = MAX_SELECTED_GRID;
    }
    if distinct.len() < m {
        warnings.push(format!(
            "only {} distinct event times for {m} requested restriction times; using all of them",
            distinct.len()
        ));
        for w in &warnings {
            warn!("{w}");
        }
        return Ok(GridSelection {
            grid: RestrictionGrid::new(distinct)?,
            warnings,
        });
    }

    let upper = quantile_sorted(&event_times, UPPER_EVENT_QUANTILE);
    let mut taus: Vec<T> = if m == 1 {
        vec![upper]
    } else {
        (0..m)
            .map(|k| {
                let frac = k as f64 / (m - 1) as f64;
                match spacing {
                    GridSpacing::EventQuantiles => {
                        quantile_sorted(&event_times, frac * UPPER_EVENT_QUANTILE)
                    }
                    GridSpacing::Equal => event_times[0] + T::lit(frac) * (upper - event_times[0]),
                }
            })
            .collect()
    };
    taus.dedup();
    if taus.len() < m {
        warnings.push(format!(
            "tied event-time quantiles reduced the grid from {m} to {} points",
            taus.len()
        ));
    }
    for w in &warnings {
        warn!("{w}");
    }
    Ok(GridSelection {
        grid: RestrictionGrid::new(taus)?,
        warnings,
    })
}

/// `n × M` jackknife pseudo-values, subject-major, aligned with the input
/// sample order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PseudoValueMatrix<T> {
    values: Vec<T>,
    n: usize,
    grid: RestrictionGrid<T>,
}

impl<T: Scalar> PseudoValueMatrix<T> {
    pub fn from_parts(values: Vec<T>, n: usize, grid: RestrictionGrid<T>) -> Result<Self> {
        if values.len() != n * grid.len() {
            return Err(Error::InvalidInput(format!(
                "pseudo-value buffer has {} entries, expected {}",
                values.len(),
                n * grid.len()
            )));
        }
        Ok(PseudoValueMatrix { values, n, grid })
    }

    pub fn n_subjects(&self) -> usize {
        self.n
    }

    pub fn n_taus(&self) -> usize {
        self.grid.len()
    }

    pub fn grid(&self) -> &RestrictionGrid<T> {
        &self.grid
    }

    pub fn get(&self, subject: usize, tau_index: usize) -> T {
        self.values[subject * self.grid.len() + tau_index]
    }

    pub fn row(&self, subject: usize) -> &[T] {
        let m = self.grid.len();
        &self.values[subject * m..(subject + 1) * m]
    }

    /// Row-major buffer: subject 0 at every τ, then subject 1, …
    pub fn flattened(&self) -> &[T] {
        &self.values
    }

    pub fn column_mean(&self, tau_index: usize) -> T {
        let sum = (0..self.n).fold(T::zero(), |acc, i| acc + self.get(i, tau_index));
        sum / T::from_count(self.n)
    }

    pub fn scaled(&self, c: T) -> Self {
        PseudoValueMatrix {
            values: self.values.iter().map(|&v| v * c).collect(),
            n: self.n,
            grid: self.grid.clone(),
        }
    }
}

fn check_grid<T: Scalar>(sample: &SurvivalSample<T>, grid: &RestrictionGrid<T>) -> Result<()> {
    let last_event = sample
        .last_event_time()
        .ok_or_else(|| Error::InvalidInput("sample has no events".into()))?;
    if grid.last() > last_event {
        return Err(Error::Extrapolation {
            tau: grid.last().to_f64_lossy(),
            last_event: last_event.to_f64_lossy(),
        });
    }
    Ok(())
}

/// Pseudo-values via a single pass over the sorted risk table.
///
/// Removing subject `i` (at distinct time `u_k`) lowers every risk set up to
/// and including `u_k` by one and, if `i` had an event, the event count at
/// `u_k`. The leave-one-out curve is therefore a prefix built from the
/// "one fewer at risk" factors, one modified factor at `u_k`, and the
/// unchanged full-sample factors afterwards. Prefix integrals of the first
/// part and suffix integrals of the last part are computed once per `τ`, so
/// each subject costs O(1).
pub fn pseudo_values<T: Scalar>(
    sample: &SurvivalSample<T>,
    grid: &RestrictionGrid<T>,
) -> Result<PseudoValueMatrix<T>> {
    check_grid(sample, grid)?;
    let n = sample.len();
    let table = RiskTable::build(sample.subjects().iter().map(|s| (s.time, s.event)));
    let k_len = table.len();
    let n_t = T::from_count(n);
    let n1_t = T::from_count(n - 1);

    let full_factor: Vec<T> = (0..k_len)
        .map(|k| T::one() - T::from_count(table.events[k]) / T::from_count(table.at_risk[k]))
        .collect();
    let reduced_factor: Vec<T> = (0..k_len)
        .map(|k| {
            let r = table.at_risk[k];
            if r > 1 {
                T::one() - T::from_count(table.events[k]) / T::from_count(r - 1)
            } else {
                T::one()
            }
        })
        .collect();
    // reduced_prefix[k] = Π_{j<k} reduced_factor[j]
    let mut reduced_prefix = vec![T::one(); k_len + 1];
    for k in 0..k_len {
        reduced_prefix[k + 1] = reduced_prefix[k] * reduced_factor[k];
    }

    let columns: Vec<Vec<T>> = grid
        .taus()
        .par_iter()
        .map(|&tau| {
            let clip = |x: T| x.min(tau);
            let u = &table.times;

            // full-sample restricted mean
            let mut theta = T::zero();
            let mut prev = T::zero();
            let mut level = T::one();
            for k in 0..k_len {
                if u[k] >= tau {
                    break;
                }
                theta = theta + level * (u[k] - prev);
                prev = u[k];
                level = level * full_factor[k];
            }
            theta = theta + level * (tau - prev);

            // prefix_area[k] = ∫_0^{min(u_k, τ)} of the reduced-factor curve
            let mut prefix_area = vec![T::zero(); k_len];
            prefix_area[0] = clip(u[0]);
            for k in 1..k_len {
                prefix_area[k] = prefix_area[k - 1] + reduced_prefix[k] * (clip(u[k]) - clip(u[k - 1]));
            }

            // suffix_area[k] = ∫_{u_k}^{τ} Π_{k<j, u_j<=t} full_factor[j] dt
            let mut suffix_area = vec![T::zero(); k_len];
            if tau > u[k_len - 1] {
                suffix_area[k_len - 1] = tau - u[k_len - 1];
            }
            for k in (0..k_len.saturating_sub(1)).rev() {
                if tau > u[k] {
                    suffix_area[k] = (clip(u[k + 1]) - u[k]) + full_factor[k + 1] * suffix_area[k + 1];
                }
            }

            sample
                .subjects()
                .iter()
                .enumerate()
                .map(|(i, s)| {
                    let k = table.subject_slot[i];
                    let r = table.at_risk[k];
                    let own = if r > 1 {
                        let d = table.events[k] - usize::from(s.event);
                        T::one() - T::from_count(d) / T::from_count(r - 1)
                    } else {
                        T::one()
                    };
                    let loo = prefix_area[k] + reduced_prefix[k] * own * suffix_area[k];
                    n_t * theta - n1_t * loo
                })
                .collect()
        })
        .collect();

    let m = grid.len();
    let mut values = vec![T::zero(); n * m];
    for (j, col) in columns.iter().enumerate() {
        for (i, &v) in col.iter().enumerate() {
            values[i * m + j] = v;
        }
    }
    PseudoValueMatrix::from_parts(values, n, grid.clone())
}

/// Pseudo-values computed separately within each arm, returned in sample
/// order. Arm-wise column means equal the arm-wise Kaplan-Meier RMST.
pub fn pseudo_values_within_arms<T: Scalar>(
    sample: &SurvivalSample<T>,
    grid: &RestrictionGrid<T>,
) -> Result<PseudoValueMatrix<T>> {
    let m = grid.len();
    let mut values = vec![T::zero(); sample.len() * m];
    for arm in [0u8, 1] {
        let idx: Vec<usize> = (0..sample.len()).filter(|&i| sample.subjects()[i].arm == arm).collect();
        if idx.is_empty() {
            return Err(Error::EmptyArm(arm));
        }
        let pv = pseudo_values(&sample.select(&idx)?, grid)?;
        for (r, &i) in idx.iter().enumerate() {
            values[i * m..(i + 1) * m].copy_from_slice(pv.row(r));
        }
    }
    PseudoValueMatrix::from_parts(values, sample.len(), grid.clone())
}

/// Reference path: refits Kaplan-Meier `n` times. O(n² log n); kept as the
/// oracle for [`pseudo_values`].
pub fn pseudo_values_naive<T: Scalar>(
    sample: &SurvivalSample<T>,
    grid: &RestrictionGrid<T>,
) -> Result<PseudoValueMatrix<T>> {
    check_grid(sample, grid)?;
    let n = sample.len();
    let subjects = sample.subjects();
    let full = km_from_observations(subjects.iter().map(|s| (s.time, s.event)))
        .ok_or_else(|| Error::InvalidInput("empty sample".into()))?;
    let thetas: Vec<T> = grid
        .taus()
        .iter()
        .map(|&tau| integrate_step(&full.jump_times, &full.survival, tau))
        .collect();
    let n_t = T::from_count(n);
    let n1_t = T::from_count(n - 1);
    let rows: Vec<Vec<T>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let loo = km_from_observations(
                subjects
                    .iter()
                    .enumerate()
                    .filter(|&(j, _)| j != i)
                    .map(|(_, s)| (s.time, s.event)),
            )
            .expect("n >= 2 leaves at least one subject");
            grid.taus()
                .iter()
                .zip(&thetas)
                .map(|(&tau, &theta)| {
                    n_t * theta - n1_t * integrate_step(&loo.jump_times, &loo.survival, tau)
                })
                .collect()
        })
        .collect();
    PseudoValueMatrix::from_parts(rows.concat(), n, grid.clone())
}
