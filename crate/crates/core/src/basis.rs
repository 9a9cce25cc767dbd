//! Time bases over restriction time and the long-format design matrix of
//! the pseudo-value regression.
//!
//! The natural cubic spline basis follows the usual B-spline construction:
//! cubic B-splines on the knots `(a,a,a,a, ξ…, b,b,b,b)`, first column
//! dropped, projected onto the null space of the second-derivative
//! constraints at `a` and `b`. Columns vanish at `a` and continue linearly
//! outside `[a, b]`. Local support keeps the design well conditioned when
//! knots cluster.

use crate::error::{Error, Result};
use crate::pseudo::{quantile_sorted, RestrictionGrid};
use crate::scalar::Scalar;
use crate::survival::SurvivalSample;
use nalgebra::DMatrix;
use serde::Serialize;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisKind {
    NaturalCubic,
    Indicator,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SplineBasis<T> {
    kind: BasisKind,
    interior_knots: Vec<T>,
    boundary: (T, T),
    /// Indicator basis only: the restriction times.
    steps: Vec<T>,
    /// Natural basis only: row-major `(n_bspline − 1) × df` projection of
    /// the B-splines onto the natural subspace.
    projection: Vec<T>,
}

impl<T: Scalar> SplineBasis<T> {
    /// Natural cubic spline with `df` columns, boundary knots at the
    /// extremes of `taus` and `df − 1` interior knots at equally spaced
    /// quantiles of `taus`.
    pub fn natural(df: usize, taus: &[T]) -> Result<Self> {
        if df == 0 {
            return Err(Error::InvalidInput("spline df must be positive".into()));
        }
        if taus.len() < 2 {
            return Err(Error::InvalidInput(
                "natural spline needs at least two restriction times".into(),
            ));
        }
        let mut sorted = taus.to_vec();
        sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
        let interior = (1..df)
            .map(|k| quantile_sorted(&sorted, k as f64 / df as f64))
            .collect();
        Self::natural_with_knots(interior, sorted[0], sorted[sorted.len() - 1])
    }

    pub fn natural_with_knots(interior_knots: Vec<T>, a: T, b: T) -> Result<Self> {
        if !(a < b) {
            return Err(Error::InvalidInput(format!(
                "boundary knots must satisfy a < b, got ({a}, {b})"
            )));
        }
        let mut prev = a;
        for &k in &interior_knots {
            if !(k > prev) || !(k < b) {
                return Err(Error::InvalidInput(
                    "interior knots must be strictly increasing inside (a, b)".into(),
                ));
            }
            prev = k;
        }
        let projection = natural_projection(&interior_knots, a, b);
        Ok(SplineBasis {
            kind: BasisKind::NaturalCubic,
            interior_knots,
            boundary: (a, b),
            steps: Vec::new(),
            projection,
        })
    }

    /// Step basis `I_j`, `j = 2..M`, switching on at each restriction time.
    pub fn indicator(grid: &RestrictionGrid<T>) -> Self {
        let taus = grid.taus().to_vec();
        SplineBasis {
            kind: BasisKind::Indicator,
            interior_knots: taus.get(1..taus.len().saturating_sub(1)).unwrap_or(&[]).to_vec(),
            boundary: (taus[0], taus[taus.len() - 1]),
            steps: taus,
            projection: Vec::new(),
        }
    }

    pub fn kind(&self) -> BasisKind {
        self.kind
    }

    pub fn boundary(&self) -> (T, T) {
        self.boundary
    }

    pub fn interior_knots(&self) -> &[T] {
        &self.interior_knots
    }

    /// Number of columns, excluding the intercept.
    pub fn df(&self) -> usize {
        match self.kind {
            BasisKind::NaturalCubic => self.interior_knots.len() + 1,
            BasisKind::Indicator => self.steps.len() - 1,
        }
    }

    pub fn eval(&self, t: T) -> Vec<T> {
        let mut out = vec![T::zero(); self.df()];
        self.eval_into(t, &mut out);
        out
    }

    pub fn eval_into(&self, t: T, out: &mut [T]) {
        match self.kind {
            BasisKind::NaturalCubic => natural_eval(self, t, out),
            BasisKind::Indicator => {
                // right-continuous step: active column is the last τ_j <= t
                out.iter_mut().for_each(|v| *v = T::zero());
                if let Some(j) = self.steps.iter().rposition(|&s| s <= t) {
                    if j >= 1 {
                        out[j - 1] = T::one();
                    }
                }
            }
        }
    }

    /// Same basis with every knot multiplied by `c > 0`.
    pub fn rescaled(&self, c: T) -> Self {
        SplineBasis {
            kind: self.kind,
            interior_knots: self.interior_knots.iter().map(|&k| k * c).collect(),
            boundary: (self.boundary.0 * c, self.boundary.1 * c),
            steps: self.steps.iter().map(|&k| k * c).collect(),
            projection: self.projection.clone(),
        }
    }
}

fn augmented_knots<T: Scalar>(interior: &[T], a: T, b: T) -> Vec<T> {
    let mut k = vec![a; 4];
    k.extend_from_slice(interior);
    k.extend([b; 4]);
    k
}

/// Derivative `deriv` of all cubic B-splines on `knots` at `x`, for `x` in
/// `[knots[0], knots[last]]`; the right end belongs to the last interval.
fn bspline_cubic<T: Scalar>(knots: &[T], x: T, deriv: usize) -> Vec<T> {
    let n = knots.len();
    let last = knots[n - 1];
    // order-1 indicators
    let mut table: Vec<Vec<T>> = Vec::with_capacity(4);
    let mut b1 = vec![T::zero(); n - 1];
    let span = if x >= last {
        (0..n - 1).rev().find(|&i| knots[i] < knots[i + 1])
    } else {
        (0..n - 1).find(|&i| knots[i] <= x && x < knots[i + 1])
    };
    if let Some(i) = span {
        b1[i] = T::one();
    }
    table.push(b1);
    let ratio = |num: T, den: T| if den > T::zero() { num / den } else { T::zero() };
    for k in 2..=4 {
        let prev = &table[k - 2];
        let next: Vec<T> = (0..n - k)
            .map(|i| {
                ratio(x - knots[i], knots[i + k - 1] - knots[i]) * prev[i]
                    + ratio(knots[i + k] - x, knots[i + k] - knots[i + 1]) * prev[i + 1]
            })
            .collect();
        table.push(next);
    }
    // differentiate from order 4 - deriv upwards
    let mut vals = table[3 - deriv].clone();
    for k in (5 - deriv)..=4 {
        let km1 = T::from_count(k - 1);
        vals = (0..n - k)
            .map(|i| {
                km1 * (ratio(vals[i], knots[i + k - 1] - knots[i]) - ratio(vals[i + 1], knots[i + k] - knots[i + 1]))
            })
            .collect();
    }
    vals
}

/// Null-space basis of the boundary second-derivative constraints, via
/// Householder reflections of the `m × 2` constraint matrix.
fn natural_projection<T: Scalar>(interior: &[T], a: T, b: T) -> Vec<T> {
    let knots = augmented_knots(interior, a, b);
    let ca = bspline_cubic(&knots, a, 2);
    let cb = bspline_cubic(&knots, b, 2);
    let m = ca.len() - 1;
    let mut cols = [ca[1..].to_vec(), cb[1..].to_vec()];
    let mut reflectors: Vec<Vec<T>> = Vec::with_capacity(2);
    for j in 0..2 {
        let norm = cols[j][j..].iter().fold(T::zero(), |acc, &v| acc + v * v).sqrt();
        let mut v = vec![T::zero(); m];
        v[j..].copy_from_slice(&cols[j][j..]);
        let alpha = if v[j] > T::zero() { -norm } else { norm };
        v[j] = v[j] - alpha;
        let vnorm2 = v.iter().fold(T::zero(), |acc, &x| acc + x * x);
        if vnorm2 > T::zero() {
            for col in cols.iter_mut().skip(j) {
                let dot = v.iter().zip(col.iter()).fold(T::zero(), |acc, (&p, &q)| acc + p * q);
                let f = (dot + dot) / vnorm2;
                for (c, &vi) in col.iter_mut().zip(&v) {
                    *c = *c - f * vi;
                }
            }
        }
        reflectors.push(v);
    }
    // columns 2..m of Q = H1 H2
    let df = m - 2;
    let mut out = vec![T::zero(); m * df];
    for c in 0..df {
        let mut e = vec![T::zero(); m];
        e[c + 2] = T::one();
        for v in reflectors.iter().rev() {
            let vnorm2 = v.iter().fold(T::zero(), |acc, &x| acc + x * x);
            if vnorm2 > T::zero() {
                let dot = v.iter().zip(&e).fold(T::zero(), |acc, (&p, &q)| acc + p * q);
                let f = (dot + dot) / vnorm2;
                for (ei, &vi) in e.iter_mut().zip(v) {
                    *ei = *ei - f * vi;
                }
            }
        }
        for r in 0..m {
            out[r * df + c] = e[r];
        }
    }
    out
}

fn project<T: Scalar>(basis: &SplineBasis<T>, raw: &[T], out: &mut [T]) {
    let df = out.len();
    out.iter_mut().for_each(|v| *v = T::zero());
    for (r, &x) in raw[1..].iter().enumerate() {
        if x != T::zero() {
            for (c, o) in out.iter_mut().enumerate() {
                *o = *o + x * basis.projection[r * df + c];
            }
        }
    }
}

fn natural_eval<T: Scalar>(basis: &SplineBasis<T>, t: T, out: &mut [T]) {
    let (a, b) = basis.boundary;
    let knots = augmented_knots(&basis.interior_knots, a, b);
    if t < a || t > b {
        let edge = if t < a { a } else { b };
        project(basis, &bspline_cubic(&knots, edge, 0), out);
        let mut slope = vec![T::zero(); out.len()];
        project(basis, &bspline_cubic(&knots, edge, 1), &mut slope);
        for (o, s) in out.iter_mut().zip(slope) {
            *o = *o + (t - edge) * s;
        }
    } else {
        project(basis, &bspline_cubic(&knots, t, 0), out);
    }
}

/// `natural_spline_eval` as a free function.
pub fn natural_spline_eval<T: Scalar>(basis: &SplineBasis<T>, t: T) -> Result<Vec<T>> {
    if basis.kind != BasisKind::NaturalCubic {
        return Err(Error::InvalidInput("basis is not a natural cubic spline".into()));
    }
    Ok(basis.eval(t))
}

/// Column positions of the long-format design.
///
/// Order: intercept, time basis, treatment `Z`, `Z × time`, then for each
/// covariate its main effect followed by its time interactions.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DesignLayout {
    /// Number of time-basis columns (0 when the grid has a single point).
    pub time_df: usize,
    pub n_covariates: usize,
}

impl DesignLayout {
    pub fn n_cols(&self) -> usize {
        (2 + self.n_covariates) * (1 + self.time_df)
    }

    pub fn intercept(&self) -> usize {
        0
    }

    pub fn treatment(&self) -> usize {
        1 + self.time_df
    }

    pub fn treatment_time(&self) -> std::ops::Range<usize> {
        let s = self.treatment() + 1;
        s..s + self.time_df
    }

    pub fn covariate(&self, c: usize) -> usize {
        (2 + c) * (1 + self.time_df)
    }

    pub fn labels(&self) -> Vec<String> {
        let mut out = Vec::with_capacity(self.n_cols());
        let block = |name: &str, out: &mut Vec<String>| {
            out.push(name.to_string());
            for k in 1..=self.time_df {
                if name == "intercept" {
                    out.push(format!("time{k}"));
                } else {
                    out.push(format!("{name}:time{k}"));
                }
            }
        };
        block("intercept", &mut out);
        block("Z", &mut out);
        for c in 0..self.n_covariates {
            block(&format!("x{}", c + 1), &mut out);
        }
        out
    }

    /// Fills one design row given the time-basis values at `t`.
    pub fn fill_row(&self, time_basis: &[f64], z: f64, covariates: &[f64], row: &mut [f64]) {
        debug_assert_eq!(time_basis.len(), self.time_df);
        let block = |lead: f64, row: &mut [f64], start: usize| {
            row[start] = lead;
            for (k, &b) in time_basis.iter().enumerate() {
                row[start + 1 + k] = lead * b;
            }
        };
        block(1.0, row, 0);
        block(z, row, self.treatment());
        for (c, &x) in covariates.iter().enumerate() {
            block(x, row, self.covariate(c));
        }
    }
}

/// Stacked `(n·M) × p` design, subject-major rows, one cluster per subject.
#[derive(Debug, Clone)]
pub struct DesignMatrix {
    pub x: DMatrix<f64>,
    pub cluster_ids: Vec<usize>,
    pub labels: Vec<String>,
    pub layout: DesignLayout,
    pub n_subjects: usize,
    pub n_taus: usize,
}

impl DesignMatrix {
    pub fn n_rows(&self) -> usize {
        self.x.nrows()
    }

    pub fn n_cols(&self) -> usize {
        self.x.ncols()
    }
}

/// Builds the long-format design for the pseudo-value regression.
///
/// With a single restriction time the time terms vanish and the design is
/// `{intercept, Z}` (plus covariate main effects).
pub fn build_design(
    grid: &RestrictionGrid<f64>,
    basis: &SplineBasis<f64>,
    sample: &SurvivalSample<f64>,
    with_covariates: bool,
) -> Result<DesignMatrix> {
    let m = grid.len();
    if basis.kind() == BasisKind::Indicator && basis.steps != grid.taus() {
        return Err(Error::InvalidInput(
            "indicator basis must be built on the restriction grid".into(),
        ));
    }
    let time_df = if m == 1 { 0 } else { basis.df() };
    let layout = DesignLayout {
        time_df,
        n_covariates: if with_covariates { sample.n_covariates() } else { 0 },
    };
    let p = layout.n_cols();
    let n = sample.len();
    let rows = n * m;
    if rows < p {
        return Err(Error::InvalidInput(format!(
            "design has {rows} rows for {p} columns"
        )));
    }
    let time_rows: Vec<Vec<f64>> = grid
        .taus()
        .iter()
        .map(|&t| if time_df == 0 { Vec::new() } else { basis.eval(t) })
        .collect();

    let mut x = DMatrix::<f64>::zeros(rows, p);
    let mut cluster_ids = Vec::with_capacity(rows);
    let mut buf = vec![0.0; p];
    let empty: [f64; 0] = [];
    for (i, s) in sample.subjects().iter().enumerate() {
        let covs: &[f64] = if with_covariates { &s.covariates } else { &empty };
        for (j, tb) in time_rows.iter().enumerate() {
            layout.fill_row(tb, f64::from(s.arm), covs, &mut buf);
            let r = i * m + j;
            for (c, &v) in buf.iter().enumerate() {
                x[(r, c)] = v;
            }
            cluster_ids.push(i);
        }
    }
    let labels = layout.labels();
    check_full_rank(&x, &labels)?;
    Ok(DesignMatrix {
        x,
        cluster_ids,
        labels,
        layout,
        n_subjects: n,
        n_taus: m,
    })
}

/// Sequential modified Gram-Schmidt (two passes) over the columns; the first
/// column whose residual is negligible relative to its norm is reported.
fn check_full_rank(x: &DMatrix<f64>, labels: &[String]) -> Result<()> {
    const REL_TOL: f64 = 1e-10;
    let mut basis: Vec<nalgebra::DVector<f64>> = Vec::with_capacity(x.ncols());
    for c in 0..x.ncols() {
        let col = x.column(c).clone_owned();
        let norm0 = col.norm();
        let mut v = col;
        for _ in 0..2 {
            for q in &basis {
                let proj = q.dot(&v);
                v.axpy(-proj, q, 1.0);
            }
        }
        let norm = v.norm();
        if norm0 == 0.0 || norm <= REL_TOL * norm0 {
            return Err(Error::RankDeficient {
                column: labels[c].clone(),
            });
        }
        basis.push(v / norm);
    }
    Ok(())
}
