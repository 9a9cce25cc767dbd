//! GEE fitting of pseudo-value regressions with an independence working
//! covariance, cluster-robust sandwich variance and QIC.

use crate::basis::{build_design, DesignMatrix, SplineBasis};
use crate::error::{Error, Result};
use crate::pseudo::PseudoValueMatrix;
use crate::survival::SurvivalSample;
use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LinkFunction {
    #[default]
    Identity,
    Log,
}

impl LinkFunction {
    pub fn link(self, mu: f64) -> f64 {
        match self {
            LinkFunction::Identity => mu,
            LinkFunction::Log => mu.ln(),
        }
    }

    pub fn inverse(self, eta: f64) -> f64 {
        match self {
            LinkFunction::Identity => eta,
            LinkFunction::Log => eta.exp(),
        }
    }

    /// `d g⁻¹(η) / dη`.
    pub fn inverse_deriv(self, eta: f64) -> f64 {
        match self {
            LinkFunction::Identity => 1.0,
            LinkFunction::Log => eta.exp(),
        }
    }
}

impl std::str::FromStr for LinkFunction {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(LinkFunction::Identity),
            "log" => Ok(LinkFunction::Log),
            other => Err(Error::InvalidInput(format!("unknown link `{other}`"))),
        }
    }
}

/// QIC penalty term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum QicPenalty {
    /// `2·tr(N⁻¹ V)` with `N` the naive and `V` the robust covariance.
    #[default]
    Trace,
    /// `2p`.
    ParameterCount,
}

#[derive(Debug, Clone, Copy)]
pub struct GeeOptions {
    pub link: LinkFunction,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for GeeOptions {
    fn default() -> Self {
        GeeOptions {
            link: LinkFunction::Identity,
            max_iter: 100,
            tol: 1e-10,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GeeFit {
    pub coefficients: DVector<f64>,
    pub labels: Vec<String>,
    /// Sandwich `I⁻¹ (Σ_clusters U_i U_iᵀ) I⁻¹`.
    pub robust_cov: DMatrix<f64>,
    /// `φ · I⁻¹` with `φ = SSR / (n_rows − p)`.
    pub naive_cov: DMatrix<f64>,
    /// `I(β̂)` with identity working covariance.
    pub information: DMatrix<f64>,
    /// `tr(I(β̂) · robust_cov)`.
    pub penalty_trace: f64,
    pub ssr: f64,
    pub dispersion: f64,
    pub qic: f64,
    pub converged: bool,
    pub iterations: usize,
    pub n_clusters: usize,
    pub n_rows: usize,
    pub link: LinkFunction,
    pub warnings: Vec<String>,
}

impl GeeFit {
    pub fn n_params(&self) -> usize {
        self.coefficients.len()
    }

    pub fn robust_se(&self) -> Vec<f64> {
        (0..self.n_params())
            .map(|k| self.robust_cov[(k, k)].max(0.0).sqrt())
            .collect()
    }

    pub fn fitted(&self, design: &DesignMatrix) -> DVector<f64> {
        let eta = &design.x * &self.coefficients;
        eta.map(|e| self.link.inverse(e))
    }
}

/// Inverse of an upper-triangular `R` with nonzero diagonal.
fn upper_inverse(r: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let p = r.nrows();
    let scale = r.diagonal().amax();
    if r.diagonal().iter().any(|d| d.abs() <= 1e-13 * scale) {
        return Err(Error::Singular("information matrix I(β̂)".into()));
    }
    r.solve_upper_triangular(&DMatrix::identity(p, p))
        .ok_or_else(|| Error::Singular("information matrix I(β̂)".into()))
}

/// Householder QR of `a`: returns the thin `Q`, `R⁻¹` and the
/// least-squares solution of `a x ≈ b`.
fn qr_solve(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>, DVector<f64>)> {
    let qr = a.clone().qr();
    let q = qr.q();
    let r_inv = upper_inverse(&qr.r())?;
    let x = &r_inv * (q.transpose() * b);
    Ok((q, r_inv, x))
}

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Fits `g(E[θ̂]) = Xβ` by GEE with identity working covariance.
///
/// Identity link is solved in closed form by QR; the log link by Fisher
/// scoring with step halving until `‖Δβ‖∞ < tol`.
pub fn gee_fit(design: &DesignMatrix, responses: &[f64], options: GeeOptions) -> Result<GeeFit> {
    let x = &design.x;
    let (n_rows, p) = x.shape();
    if responses.len() != n_rows {
        return Err(Error::InvalidInput(format!(
            "{} responses for {n_rows} design rows",
            responses.len()
        )));
    }
    let y = DVector::from_column_slice(responses);
    let link = options.link;

    let (beta, iterations, converged) = match link {
        LinkFunction::Identity => (qr_solve(x, &y)?.2, 1, true),
        LinkFunction::Log => fisher_scoring(x, &y, options)?,
    };

    let eta = x * &beta;
    let mu = eta.map(|e| link.inverse(e));
    let resid = &y - &mu;
    let ssr = resid.norm_squared();
    // D = diag(dμ/dη) X
    let mut d = x.clone();
    for (r, e) in eta.iter().enumerate() {
        let w = link.inverse_deriv(*e);
        if w != 1.0 {
            d.row_mut(r).scale_mut(w);
        }
    }
    let information = d.transpose() * &d;
    // With D = QR the sandwich is R⁻¹ M R⁻ᵀ, M the meat in Q coordinates;
    // this avoids forming (DᵀD)⁻¹.
    let (q, r_inv, _) = qr_solve(&d, &resid)?;
    let info_inv = &r_inv * r_inv.transpose();

    let n_clusters = design.cluster_ids.iter().copied().max().map_or(0, |m| m + 1);
    let mut scores = DMatrix::<f64>::zeros(n_clusters, p);
    for (r, &c) in design.cluster_ids.iter().enumerate() {
        let e = resid[r];
        for k in 0..p {
            scores[(c, k)] += q[(r, k)] * e;
        }
    }
    let meat = scores.transpose() * &scores;
    let robust_cov = symmetrize(&(&r_inv * &meat * r_inv.transpose()));
    let penalty_trace = meat.trace();

    let dof = n_rows as f64 - p as f64;
    let dispersion = if dof > 0.0 { ssr / dof } else { f64::NAN };
    let naive_cov = &info_inv * dispersion;

    let mut fit = GeeFit {
        coefficients: beta,
        labels: design.labels.clone(),
        robust_cov,
        naive_cov,
        information,
        penalty_trace,
        ssr,
        dispersion,
        qic: f64::NAN,
        converged,
        iterations,
        n_clusters,
        n_rows,
        link,
        warnings: Vec::new(),
    };
    let (q, warning) = qic_value(&fit, ssr, QicPenalty::Trace);
    fit.qic = q;
    fit.warnings.extend(warning);
    Ok(fit)
}

fn fisher_scoring(x: &DMatrix<f64>, y: &DVector<f64>, options: GeeOptions) -> Result<(DVector<f64>, usize, bool)> {
    let (n_rows, p) = x.shape();
    let mean_y = y.mean();
    if !(mean_y > 0.0) {
        return Err(Error::InvalidInput(
            "log link requires a positive mean response".into(),
        ));
    }
    let mut beta = DVector::<f64>::zeros(p);
    beta[0] = mean_y.ln();
    let ssr_of = |b: &DVector<f64>| -> f64 {
        let mu = (x * b).map(f64::exp);
        (y - mu).norm_squared()
    };
    let mut current = ssr_of(&beta);
    let mut last_step = f64::INFINITY;
    for iter in 1..=options.max_iter {
        let mu = (x * &beta).map(f64::exp);
        let mut d = x.clone();
        for r in 0..n_rows {
            d.row_mut(r).scale_mut(mu[r]);
        }
        let resid = y - &mu;
        // Gauss-Newton step: least-squares solve of D Δ ≈ (y − μ)
        let (_, _, step) = qr_solve(&d, &resid)?;
        let mut scale = 1.0;
        let mut candidate = &beta + &step;
        let mut cand_ssr = ssr_of(&candidate);
        let mut halvings = 0;
        while !(cand_ssr <= current) && halvings < 30 {
            scale *= 0.5;
            candidate = &beta + &step * scale;
            cand_ssr = ssr_of(&candidate);
            halvings += 1;
        }
        last_step = (&step * scale).amax();
        beta = candidate;
        current = cand_ssr;
        if last_step < options.tol {
            return Ok((beta, iter, true));
        }
    }
    Err(Error::NonConvergence {
        iterations: options.max_iter,
        last_step,
        last_iterate: beta.iter().copied().collect(),
    })
}

fn qic_value(fit: &GeeFit, ssr: f64, penalty: QicPenalty) -> (f64, Option<String>) {
    let p = fit.n_params() as f64;
    let fallback = ssr + 2.0 * p;
    match penalty {
        QicPenalty::ParameterCount => (fallback, None),
        QicPenalty::Trace => {
            // N⁻¹ = I / φ
            if !(fit.dispersion > 0.0) || !fit.dispersion.is_finite() {
                let w = "naive covariance singular; QIC penalty falls back to 2p".to_string();
                warn!("{w}");
                return (fallback, Some(w));
            }
            let tr = fit.penalty_trace / fit.dispersion;
            (ssr + 2.0 * tr, None)
        }
    }
}

/// `QIC = SSR + penalty` (smaller is better).
pub fn qic(fit: &GeeFit, design: &DesignMatrix, responses: &[f64], penalty: QicPenalty) -> Result<f64> {
    if !fit.converged {
        return Err(Error::InvalidInput("QIC requires a converged fit".into()));
    }
    let mu = fit.fitted(design);
    let ssr: f64 = responses.iter().zip(mu.iter()).map(|(y, m)| (y - m).powi(2)).sum();
    Ok(qic_value(fit, ssr, penalty).0)
}

#[derive(Debug, Clone)]
pub struct DfCandidate {
    pub df: usize,
    pub qic: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct DfSelection {
    pub best_df: usize,
    pub trace: Vec<DfCandidate>,
    pub fit: GeeFit,
    pub design: DesignMatrix,
    pub basis: SplineBasis<f64>,
    pub warnings: Vec<String>,
}

/// Smallest and largest admissible spline df for a grid of `m` points.
pub fn df_bounds(m: usize) -> (usize, usize) {
    (3, 12.min(m.saturating_sub(2)))
}

/// Fits a natural-spline model for each df in `df_range` and keeps the QIC
/// minimizer (ties go to the smaller df).
pub fn select_df(
    sample: &SurvivalSample<f64>,
    pseudo: &PseudoValueMatrix<f64>,
    link: LinkFunction,
    df_range: std::ops::RangeInclusive<usize>,
    with_covariates: bool,
    penalty: QicPenalty,
) -> Result<DfSelection> {
    let (lo, hi) = df_bounds(pseudo.n_taus());
    if df_range.is_empty() || *df_range.start() < lo || *df_range.end() > hi {
        return Err(Error::InvalidInput(format!(
            "df range {}..={} outside admissible [{lo}, {hi}] for {} restriction times",
            df_range.start(),
            df_range.end(),
            pseudo.n_taus()
        )));
    }
    let options = GeeOptions {
        link,
        ..Default::default()
    };
    let mut trace = Vec::new();
    let mut warnings = Vec::new();
    let mut best: Option<(f64, usize, GeeFit, DesignMatrix, SplineBasis<f64>)> = None;
    for df in df_range {
        let attempt = SplineBasis::natural(df, pseudo.grid().taus()).and_then(|basis| {
            let design = build_design(pseudo.grid(), &basis, sample, with_covariates)?;
            let fit = gee_fit(&design, pseudo.flattened(), options)?;
            let q = qic(&fit, &design, pseudo.flattened(), penalty)?;
            Ok((q, fit, design, basis))
        });
        match attempt {
            Ok((q, fit, design, basis)) => {
                trace.push(DfCandidate { df, qic: Some(q) });
                if best.as_ref().is_none_or(|b| q < b.0) {
                    best = Some((q, df, fit, design, basis));
                }
            }
            Err(e) => {
                let w = format!("df={df} skipped: {e}");
                warn!("{w}");
                warnings.push(w);
                trace.push(DfCandidate { df, qic: None });
            }
        }
    }
    let (_, best_df, fit, design, basis) = best.ok_or_else(|| {
        Error::Singular("every candidate spline df failed to fit".into())
    })?;
    Ok(DfSelection {
        best_df,
        trace,
        fit,
        design,
        basis,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basis::DesignLayout;

    fn toy_design(x_rows: &[[f64; 2]], clusters: Vec<usize>) -> DesignMatrix {
        let n = x_rows.len();
        let x = DMatrix::from_fn(n, 2, |r, c| x_rows[r][c]);
        DesignMatrix {
            x,
            cluster_ids: clusters,
            labels: vec!["intercept".into(), "Z".into()],
            layout: DesignLayout {
                time_df: 0,
                n_covariates: 0,
            },
            n_subjects: n,
            n_taus: 1,
        }
    }

    #[test]
    fn binary_regressor_recovers_group_means() {
        let rows = [[1.0, 0.0], [1.0, 0.0], [1.0, 0.0], [1.0, 1.0], [1.0, 1.0]];
        let y = [1.0, 2.0, 6.0, 4.0, 8.0];
        let fit = gee_fit(&toy_design(&rows, (0..5).collect()), &y, GeeOptions::default()).unwrap();
        assert!((fit.coefficients[0] - 3.0).abs() < 1e-12);
        assert!((fit.coefficients[1] - 3.0).abs() < 1e-12);
        assert!(fit.converged);
    }

    #[test]
    fn log_link_matches_group_means() {
        let rows = [[1.0, 0.0], [1.0, 0.0], [1.0, 1.0], [1.0, 1.0]];
        let y = [1.0, 3.0, 5.0, 7.0];
        let opts = GeeOptions {
            link: LinkFunction::Log,
            ..Default::default()
        };
        let fit = gee_fit(&toy_design(&rows, (0..4).collect()), &y, opts).unwrap();
        assert!((fit.coefficients[0] - 2f64.ln()).abs() < 1e-9);
        assert!((fit.coefficients[1] - 3f64.ln()).abs() < 1e-9);
    }

    #[test]
    fn link_round_trip() {
        for link in [LinkFunction::Identity, LinkFunction::Log] {
            for &x in &[0.1, 1.0, 7.5] {
                assert!((link.link(link.inverse(x)) - x).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn mismatched_responses_rejected() {
        let rows = [[1.0, 0.0], [1.0, 1.0], [1.0, 1.0]];
        assert!(gee_fit(&toy_design(&rows, vec![0, 1, 2]), &[1.0], GeeOptions::default()).is_err());
    }

    #[test]
    fn singular_design_rejected() {
        let rows = [[1.0, 0.0], [1.0, 0.0], [1.0, 0.0]];
        let err = gee_fit(&toy_design(&rows, vec![0, 1, 2]), &[1.0, 2.0, 3.0], GeeOptions::default())
            .unwrap_err();
        assert!(matches!(err, Error::Singular(_)));
    }

    #[test]
    fn parameter_count_penalty() {
        let rows = [[1.0, 0.0], [1.0, 0.0], [1.0, 1.0], [1.0, 1.0]];
        let y = [1.0, 2.0, 3.0, 5.0];
        let d = toy_design(&rows, (0..4).collect());
        let fit = gee_fit(&d, &y, GeeOptions::default()).unwrap();
        let q = qic(&fit, &d, &y, QicPenalty::ParameterCount).unwrap();
        assert!((q - (fit.ssr + 4.0)).abs() < 1e-12);
    }
}
