//! RMST difference curve `R(t)` from a pseudo-value GEE fit, with pointwise
//! confidence intervals and a simultaneous band from the max-|Z| critical
//! value.

use crate::basis::{DesignLayout, SplineBasis};
use crate::error::{Error, Result};
use crate::gee::{GeeFit, LinkFunction};
use crate::rng::{keyed_rng, tag};
use log::warn;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

/// Pointwise normal quantile for 95% intervals.
pub const Z_95: f64 = 1.96;
pub const DEFAULT_EVAL_POINTS: usize = 30;
pub const DEFAULT_DRAWS: usize = 100_000;
pub const MIN_DRAWS: usize = 10_000;
const DRAWS_PER_CHUNK: usize = 2048;
const EIGEN_FLOOR: f64 = 1e-12;

/// Treatment-contrast view of a fitted model: evaluates `R(t)` and its
/// robust variance at any `t`.
#[derive(Debug, Clone, Serialize)]
pub struct RmstDiffModel {
    pub basis: SplineBasis<f64>,
    pub layout: DesignLayout,
    pub link: LinkFunction,
    pub coefficients: Vec<f64>,
    #[serde(skip)]
    pub robust_cov: DMatrix<f64>,
    /// Covariate pattern at which the contrast is taken (log link only;
    /// under the identity link the contrast does not involve covariates).
    pub reference_covariates: Vec<f64>,
}

impl RmstDiffModel {
    pub fn new(fit: &GeeFit, basis: &SplineBasis<f64>, layout: &DesignLayout) -> Self {
        RmstDiffModel {
            basis: basis.clone(),
            layout: layout.clone(),
            link: fit.link,
            coefficients: fit.coefficients.iter().copied().collect(),
            robust_cov: fit.robust_cov.clone(),
            reference_covariates: vec![0.0; layout.n_covariates],
        }
    }

    fn rows(&self, t: f64) -> (Vec<f64>, Vec<f64>) {
        let p = self.layout.n_cols();
        let tb = if self.layout.time_df == 0 {
            Vec::new()
        } else {
            self.basis.eval(t)
        };
        let mut x1 = vec![0.0; p];
        let mut x0 = vec![0.0; p];
        self.layout.fill_row(&tb, 1.0, &self.reference_covariates, &mut x1);
        self.layout.fill_row(&tb, 0.0, &self.reference_covariates, &mut x0);
        (x1, x0)
    }

    fn dot(&self, x: &[f64]) -> f64 {
        x.iter().zip(&self.coefficients).map(|(a, b)| a * b).sum()
    }

    /// Gradient of `R(t)` with respect to the coefficients. Under the
    /// identity link this is the contrast vector `(…, 1, B_1(t), …, B_k(t), …)`.
    pub fn contrast(&self, t: f64) -> Vec<f64> {
        let (x1, x0) = self.rows(t);
        match self.link {
            LinkFunction::Identity => x1.iter().zip(&x0).map(|(a, b)| a - b).collect(),
            LinkFunction::Log => {
                let m1 = self.dot(&x1).exp();
                let m0 = self.dot(&x0).exp();
                x1.iter().zip(&x0).map(|(a, b)| m1 * a - m0 * b).collect()
            }
        }
    }

    pub fn estimate(&self, t: f64) -> f64 {
        let (x1, x0) = self.rows(t);
        self.link.inverse(self.dot(&x1)) - self.link.inverse(self.dot(&x0))
    }

    pub fn variance(&self, t: f64) -> f64 {
        let c = DVector::from_vec(self.contrast(t));
        (c.transpose() * &self.robust_cov * &c)[(0, 0)]
    }

    pub fn se(&self, t: f64) -> f64 {
        self.variance(t).max(0.0).sqrt()
    }

    /// Fitted arm-0 (baseline) mean at `t`.
    pub fn baseline(&self, t: f64) -> f64 {
        let (_, x0) = self.rows(t);
        self.link.inverse(self.dot(&x0))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RmstDiffCurve {
    pub eval_grid: Vec<f64>,
    pub estimate: Vec<f64>,
    pub se: Vec<f64>,
    pub ci_lo: Vec<f64>,
    pub ci_hi: Vec<f64>,
    pub band_lo: Option<Vec<f64>>,
    pub band_hi: Option<Vec<f64>>,
    pub critical_value: Option<f64>,
    pub contrast_matrix: Vec<Vec<f64>>,
    pub seed: Option<u64>,
    pub model: RmstDiffModel,
}

impl RmstDiffCurve {
    pub fn len(&self) -> usize {
        self.eval_grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eval_grid.is_empty()
    }

    pub fn mean_band_width(&self) -> Option<f64> {
        let (lo, hi) = (self.band_lo.as_ref()?, self.band_hi.as_ref()?);
        let total: f64 = lo.iter().zip(hi).map(|(l, h)| h - l).sum();
        Some(total / lo.len() as f64)
    }
}

/// Evaluation grid for a curve over follow-up `(0, end]`: `k` points with
/// spacing `end / k`, the first moved up to `first` if it falls earlier.
pub fn follow_up_grid(first: f64, end: f64, k: usize) -> Vec<f64> {
    let start = (end / k.max(1) as f64).max(first);
    equally_spaced(start, end, k)
}

/// `k` equally spaced points on `[a, b]`.
pub fn equally_spaced(a: f64, b: f64, k: usize) -> Vec<f64> {
    match k {
        0 => Vec::new(),
        1 => vec![a],
        _ => (0..k)
            .map(|i| {
                if i == k - 1 {
                    b
                } else {
                    a + (b - a) * i as f64 / (k - 1) as f64
                }
            })
            .collect(),
    }
}

/// Evaluates `R̂(t)`, its robust standard error and the pointwise 95%
/// interval on `eval_grid`.
pub fn diff_curve(
    fit: &GeeFit,
    basis: &SplineBasis<f64>,
    layout: &DesignLayout,
    eval_grid: &[f64],
    allow_extrapolation: bool,
) -> Result<RmstDiffCurve> {
    if eval_grid.is_empty() {
        return Err(Error::InvalidInput("empty evaluation grid".into()));
    }
    let (a, b) = basis.boundary();
    if !allow_extrapolation {
        // tolerate rounding at the ends of an equally spaced grid
        let slack = 1e-12 * (b - a).abs().max(1.0);
        if let Some(&t) = eval_grid.iter().find(|&&t| t < a - slack || t > b + slack) {
            return Err(Error::OutsideSupport { t, lo: a, hi: b });
        }
    }
    let model = RmstDiffModel::new(fit, basis, layout);
    let contrast_matrix: Vec<Vec<f64>> = eval_grid.iter().map(|&t| model.contrast(t)).collect();
    let estimate: Vec<f64> = eval_grid.iter().map(|&t| model.estimate(t)).collect();
    let se: Vec<f64> = eval_grid.iter().map(|&t| model.se(t)).collect();
    let ci_lo = estimate.iter().zip(&se).map(|(e, s)| e - Z_95 * s).collect();
    let ci_hi = estimate.iter().zip(&se).map(|(e, s)| e + Z_95 * s).collect();
    Ok(RmstDiffCurve {
        eval_grid: eval_grid.to_vec(),
        estimate,
        se,
        ci_lo,
        ci_hi,
        band_lo: None,
        band_hi: None,
        critical_value: None,
        contrast_matrix,
        seed: None,
        model,
    })
}

/// Type-7 quantile of unsorted data.
pub fn quantile_type7(values: &mut [f64], p: f64) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    crate::pseudo::quantile_sorted(values, p)
}

/// Correlation matrix of the curve estimates, projected onto the PSD cone
/// with an eigenvalue floor. Returns the factor `L` with `L Lᵀ ≈ corr` and
/// whether a projection was needed.
fn correlation_factor(curve: &RmstDiffCurve, cov: &DMatrix<f64>) -> (DMatrix<f64>, bool) {
    let k = curve.len();
    let p = cov.nrows();
    let c = DMatrix::from_fn(k, p, |r, col| curve.contrast_matrix[r][col]);
    let s = &c * cov * c.transpose();
    let sd: Vec<f64> = (0..k).map(|i| s[(i, i)].max(0.0).sqrt()).collect();
    let corr = DMatrix::from_fn(k, k, |i, j| {
        if sd[i] > 0.0 && sd[j] > 0.0 {
            s[(i, j)] / (sd[i] * sd[j])
        } else if i == j {
            1.0
        } else {
            0.0
        }
    });
    let corr = (&corr + corr.transpose()) * 0.5;
    let eig = SymmetricEigen::new(corr);
    let projected = eig.eigenvalues.iter().any(|&l| l < -1e-10);
    let roots = eig.eigenvalues.map(|l| l.max(EIGEN_FLOOR).sqrt());
    let mut factor = eig.eigenvectors;
    for (j, r) in roots.iter().enumerate() {
        factor.column_mut(j).scale_mut(*r);
    }
    (factor, projected)
}

/// Monte Carlo `(1 − α)` quantile of `max_t |Z_t|` for a zero-mean normal
/// vector with the correlation of the curve estimates.
pub fn max_abs_critical_value(
    curve: &RmstDiffCurve,
    cov: &DMatrix<f64>,
    alpha: f64,
    n_draws: usize,
    seed: u64,
) -> (f64, Vec<String>) {
    let mut warnings = Vec::new();
    let (factor, projected) = correlation_factor(curve, cov);
    if projected {
        let w = "correlation matrix not PSD; projected with eigenvalue floor 1e-12".to_string();
        warn!("{w}");
        warnings.push(w);
    }
    let k = factor.nrows();
    let n_chunks = n_draws.div_ceil(DRAWS_PER_CHUNK);
    let mut maxima: Vec<f64> = (0..n_chunks)
        .into_par_iter()
        .flat_map_iter(|chunk| {
            let mut rng = keyed_rng(seed, tag::BAND, chunk as u64, 0);
            let len = DRAWS_PER_CHUNK.min(n_draws - chunk * DRAWS_PER_CHUNK);
            let mut eps = vec![0.0; k];
            let factor = &factor;
            (0..len)
                .map(|_| {
                    for e in eps.iter_mut() {
                        *e = StandardNormal.sample(&mut rng);
                    }
                    let mut best = 0.0f64;
                    for i in 0..k {
                        let mut z = 0.0;
                        for (j, e) in eps.iter().enumerate() {
                            z += factor[(i, j)] * e;
                        }
                        best = best.max(z.abs());
                    }
                    best
                })
                .collect::<Vec<_>>()
        })
        .collect();
    (quantile_type7(&mut maxima, 1.0 - alpha), warnings)
}

/// Adds the simultaneous `(1 − α)` band `R̂ ± u·se` to a curve.
pub fn simultaneous_band(
    curve: &RmstDiffCurve,
    fit: &GeeFit,
    alpha: f64,
    n_draws: usize,
    seed: u64,
) -> Result<(RmstDiffCurve, Vec<String>)> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidInput(format!("alpha must be in (0,1), got {alpha}")));
    }
    if n_draws < MIN_DRAWS {
        return Err(Error::InvalidInput(format!(
            "need at least {MIN_DRAWS} Monte Carlo draws, got {n_draws}"
        )));
    }
    let (u, warnings) = max_abs_critical_value(curve, &fit.robust_cov, alpha, n_draws, seed);
    let mut out = curve.clone();
    out.band_lo = Some(curve.estimate.iter().zip(&curve.se).map(|(e, s)| e - u * s).collect());
    out.band_hi = Some(curve.estimate.iter().zip(&curve.se).map(|(e, s)| e + u * s).collect());
    out.critical_value = Some(u);
    out.seed = Some(seed);
    Ok((out, warnings))
}

/// True iff `band_lo ≤ truth ≤ band_hi` at every grid point.
pub fn band_coverage_check(curve: &RmstDiffCurve, truth: &[f64]) -> Result<bool> {
    if truth.len() != curve.len() {
        return Err(Error::InvalidInput(format!(
            "truth has {} points, curve has {}",
            truth.len(),
            curve.len()
        )));
    }
    let (lo, hi) = match (&curve.band_lo, &curve.band_hi) {
        (Some(l), Some(h)) => (l, h),
        _ => return Err(Error::InvalidInput("curve has no simultaneous band".into())),
    };
    Ok(truth
        .iter()
        .zip(lo.iter().zip(hi))
        .all(|(t, (l, h))| l <= t && t <= h))
}
