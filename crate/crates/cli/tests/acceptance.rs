//! Acceptance harness: one PASS/FAIL line per criterion with its pinned
//! tolerance. Criteria listed in `KNOWN_GAPS` are reported but do not fail
//! the run; see README for what each gap measures.

use nalgebra::DMatrix;
use rmstcurve::basis::{DesignLayout, SplineBasis};
use rmstcurve::inference::{follow_up_grid, Z_95};
use rmstcurve::numerics::upper_incomplete_gamma;
use rmstcurve::pseudo::RestrictionGrid;
use rmstcurve::simlab::{replicate_study, simulate, DistributionSpec, ScenarioSpec, StudyConfig, StudyReport};
use rmstcurve::survival::SurvivalSample;
use rmstcurve::tute::{Resampling, TuteEstimator, WARN_NO_FINITE};
use rmstcurve::{
    build_design, fit_pv_model, fit_pv_model_on_grid, gee_fit, km_fit, pseudo_values, rmst, rmst_diff_plugin,
    select_grid, tute_ci_band, tute_ci_bootstrap, GeeOptions, LinkFunction, PvConfig, RmstDiffCurve, RmstDiffModel,
    Subject, TimeModel,
};
use std::process::{Command, ExitCode};
use std::time::Instant;

const SEED: u64 = 2024;

const KNOWN_GAPS: [&str; 3] = ["3.scalar", "4.s1.bias", "6.s5.right_open"];

struct Report {
    rows: Vec<(String, bool)>,
}

impl Report {
    fn check(&mut self, id: &str, pass: bool, detail: String) {
        let tag = if pass { "PASS" } else { "FAIL" };
        let gap = if !pass && KNOWN_GAPS.contains(&id) { "  [known gap]" } else { "" };
        println!("{tag} {id:<18} {detail}{gap}");
        self.rows.push((id.to_string(), pass));
    }

    /// `|got − want| ≤ tol`, inclusive.
    fn within(&mut self, id: &str, what: &str, got: f64, want: f64, tol: f64) {
        let pass = (got - want).abs() <= tol + 1e-12;
        self.check(id, pass, format!("{what} = {got:.4} (target {want} ± {tol})"));
    }
}

fn elapsed(t: Instant) -> String {
    format!("{:.1} s", t.elapsed().as_secs_f64())
}

fn truths(r: &mut Report) {
    let pinned: [(u8, Option<f64>, f64, f64); 4] = [
        (2, Some(18.55), 30.93, 0.05),
        (3, Some(8.09), 17.75, 0.05),
        (4, Some(5.48), 14.57, 0.05),
        (5, None, 73.0, 0.5),
    ];
    for (id, crossing, tute, tol) in pinned {
        let t = Instant::now();
        let out = Command::new(env!("CARGO_BIN_EXE_rmstcurve"))
            .args(["truth", "--scenario", &id.to_string()])
            .output()
            .expect("truth runs");
        let secs = t.elapsed().as_secs_f64();
        let v: serde_json::Value = serde_json::from_slice(&out.stdout).expect("truth emits JSON");
        let key = format!("1.s{id}");
        if let Some(c) = crossing {
            r.within(&format!("{key}.crossing"), "crossing", v["crossing"].as_f64().unwrap(), c, 0.01);
        }
        r.within(&format!("{key}.tute"), "TUTE", v["tute"].as_f64().unwrap(), tute, tol);
        r.check(&format!("{key}.runtime"), secs < 1.0, format!("{secs:.3} s (< 1 s)"));
    }
}

fn bias_cell(delta: f64, beta: f64, p: f64) -> rmstcurve::simlab::BiasStudyRow {
    match replicate_study(&StudyConfig::weibull_bias(delta, beta, p, 250, 500, SEED)).unwrap() {
        StudyReport::Bias(row) => row,
        _ => unreachable!(),
    }
}

fn table1(r: &mut Report) {
    for (delta, beta) in [(1.0, 0.0), (2.0, 0.0), (2.0, 1.0)] {
        let t = Instant::now();
        let row = bias_cell(delta, beta, 0.75);
        let biases = [
            row.scalar_baseline_bias.unwrap(),
            row.scalar_z_bias.unwrap(),
            row.vector_baseline_bias.unwrap(),
            row.vector_z_bias.unwrap(),
        ];
        let worst = biases.iter().fold(0.0f64, |m, b| m.max(b.abs()));
        r.check(
            &format!("2.d{delta}.b{beta}"),
            worst <= 0.01,
            format!(
                "max |bias| = {worst:.4} (≤ 0.01; scalar {:.4}/{:.4}, vector {:.4}/{:.4}; {})",
                biases[0],
                biases[1],
                biases[2],
                biases[3],
                elapsed(t)
            ),
        );
    }
}

fn extrapolation_cell(r: &mut Report) {
    let t = Instant::now();
    let row = bias_cell(0.5, 1.0, 0.9);
    let (vz, sz) = (row.vector_z_bias.unwrap(), row.scalar_z_bias.unwrap());
    r.check("3.vector", vz.abs() > 0.05, format!("|vector Z bias| = {:.4} (> 0.05)", vz.abs()));
    r.check("3.scalar", sz.abs() < 0.06, format!("|scalar Z bias| = {:.4} (< 0.06)", sz.abs()));
    r.check(
        "3.exclusions",
        row.vector_extrapolated > 0,
        format!(
            "vector extrapolations = {}, short follow-up exclusions = {} of {} ({})",
            row.vector_extrapolated,
            row.excluded_short_follow_up,
            row.reps,
            elapsed(t)
        ),
    );
}

fn curve_study(id: u8, n: usize) -> rmstcurve::simlab::CurveStudyRow {
    match replicate_study(&StudyConfig::scenario(id, n, 500, SEED)).unwrap() {
        StudyReport::Curve(row) => row,
        _ => unreachable!(),
    }
}

fn table2(r: &mut Report) {
    let t = Instant::now();
    let s1 = curve_study(1, 200);
    println!("     scenario 1, n=200/arm, 500 reps: {}", elapsed(t));
    r.within("4.s1.coverage", "band coverage", s1.pv_coverage.unwrap(), 0.941, 0.025);
    r.within("4.s1.bias", "curve bias", s1.pv_curve_bias.unwrap(), 0.096, 0.01);

    let t = Instant::now();
    let s2 = curve_study(2, 400);
    println!("     scenario 2, n=400/arm, 500 reps: {}", elapsed(t));
    r.within("4.s2.tute_coverage", "TUTE coverage", s2.pv_tute_coverage.unwrap(), 0.952, 0.03);
    r.within("4.s2.tute_mse", "TUTE mean squared error", s2.pv_tute_mse.unwrap(), 5.3, 1.0);
    println!("     (root mean squared error = {:.4})", s2.pv_tute_rmse.unwrap());
}

fn sim(id: u8, n: usize, seed: u64) -> SurvivalSample<f64> {
    simulate(&ScenarioSpec::numbered(id).unwrap(), n, seed).unwrap()
}

fn max_dev(a: impl IntoIterator<Item = f64>, b: impl IntoIterator<Item = f64>) -> f64 {
    a.into_iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

fn property_no_censoring(r: &mut Report) {
    let subjects = (0..80)
        .map(|i| Subject::new(0.05 * ((i * 37) % 97 + 1) as f64, true, (i % 2) as u8))
        .collect();
    let s = SurvivalSample::new(subjects).unwrap();
    let grid = select_grid(&s, 10).unwrap().grid;
    let pv = pseudo_values(&s, &grid).unwrap();
    let mut dev = 0.0f64;
    for (i, subj) in s.subjects().iter().enumerate() {
        for (j, &tau) in grid.taus().iter().enumerate() {
            dev = dev.max((pv.get(i, j) - subj.time.min(tau)).abs());
        }
    }
    r.check("5a.no_censoring", dev <= 1e-10, format!("max |PV − min(T,τ)| = {dev:.2e} (≤ 1e-10)"));
}

fn property_column_mean(r: &mut Report) {
    let cal = ScenarioSpec::weibull_bias(1.0, 0.0, 0.75).unwrap().calibrate().unwrap();
    let s = cal.simulate(125, 3, 0).unwrap();
    let grid = select_grid(&s, 16).unwrap().grid;
    let pv = pseudo_values(&s, &grid).unwrap();
    let km = km_fit(&s, None).unwrap();
    let dev = max_dev(
        (0..grid.len()).map(|j| pv.column_mean(j)),
        grid.taus().iter().map(|&tau| rmst(&km, tau).unwrap().value),
    );
    r.check("5b.column_mean", dev <= 1e-10, format!("max |mean PV − RMST| = {dev:.2e} (≤ 1e-10)"));
}

/// Gauss-Jordan inverse with partial pivoting.
fn invert(a: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let p = a.len();
    let mut m: Vec<Vec<f64>> = a
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut r = row.clone();
            r.extend((0..p).map(|j| f64::from(u8::from(i == j))));
            r
        })
        .collect();
    for c in 0..p {
        let piv = (c..p).max_by(|&x, &y| m[x][c].abs().total_cmp(&m[y][c].abs())).unwrap();
        m.swap(c, piv);
        let d = m[c][c];
        m[c].iter_mut().for_each(|v| *v /= d);
        let pivot_row = m[c].clone();
        for (ri, row) in m.iter_mut().enumerate() {
            if ri != c {
                let f = row[c];
                row.iter_mut().zip(&pivot_row).for_each(|(v, pv)| *v -= f * pv);
            }
        }
    }
    m.into_iter().map(|r| r[p..].to_vec()).collect()
}

fn matmul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    (0..a.len())
        .map(|i| (0..b[0].len()).map(|j| (0..b.len()).map(|l| a[i][l] * b[l][j]).sum()).collect())
        .collect()
}

fn property_gee(r: &mut Report) {
    let s = sim(2, 60, 4);
    let grid = select_grid(&s, 8).unwrap().grid;
    let pv = pseudo_values(&s, &grid).unwrap();
    let basis = SplineBasis::natural(3, grid.taus()).unwrap();
    let design = build_design(&grid, &basis, &s, false).unwrap();
    let fit = gee_fit(&design, pv.flattened(), GeeOptions::default()).unwrap();
    let x = &design.x;
    let (n, p) = (x.nrows(), x.ncols());
    let y = pv.flattened();

    let xtx: Vec<Vec<f64>> = (0..p).map(|a| (0..p).map(|b| (0..n).map(|i| x[(i, a)] * x[(i, b)]).sum()).collect()).collect();
    let xty: Vec<Vec<f64>> = (0..p).map(|a| vec![(0..n).map(|i| x[(i, a)] * y[i]).sum()]).collect();
    let inv = invert(&xtx);
    let beta: Vec<f64> = matmul(&inv, &xty).into_iter().map(|v| v[0]).collect();
    let scale = 1.0 + beta.iter().fold(0.0f64, |m, b| m.max(b.abs()));
    let dev = max_dev(fit.coefficients.iter().copied(), beta.iter().copied()) / scale;
    r.check("5c.gee_lstsq", dev <= 1e-8, format!("max rel |β − β_LS| = {dev:.2e} (≤ 1e-8)"));

    let resid: Vec<f64> = (0..n).map(|i| y[i] - (0..p).map(|a| x[(i, a)] * fit.coefficients[a]).sum::<f64>()).collect();
    let n_clusters = design.cluster_ids.iter().max().unwrap() + 1;
    let mut scores = vec![vec![0.0; p]; n_clusters];
    for (i, &c) in design.cluster_ids.iter().enumerate() {
        for a in 0..p {
            scores[c][a] += x[(i, a)] * resid[i];
        }
    }
    let meat: Vec<Vec<f64>> =
        (0..p).map(|a| (0..p).map(|b| scores.iter().map(|u| u[a] * u[b]).sum()).collect()).collect();
    let want = matmul(&matmul(&inv, &meat), &inv);
    let scale = want.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    let dev = (0..p)
        .flat_map(|a| (0..p).map(move |b| (a, b)))
        .fold(0.0f64, |m, (a, b)| m.max((fit.robust_cov[(a, b)] - want[a][b]).abs()))
        / scale;
    r.check("5c.sandwich", dev <= 1e-10, format!("max rel |V − V_direct| = {dev:.2e} (≤ 1e-10)"));
}

fn property_band(r: &mut Report) {
    let mut worst_u = f64::INFINITY;
    let mut contained = true;
    for (id, seed) in [(1u8, 1u64), (2, 2), (3, 3), (4, 4), (5, 5)] {
        let cfg = PvConfig {
            time_model: TimeModel::NaturalFixed(3),
            ..Default::default()
        };
        let a = fit_pv_model(&sim(id, 100, seed), &cfg).unwrap();
        let g = follow_up_grid(a.grid().first(), a.grid().last(), 12);
        let (c, _) = a.band_on(&g, 0.05, 100_000, seed).unwrap();
        worst_u = worst_u.min(c.critical_value.unwrap());
        let (lo, hi) = (c.band_lo.as_ref().unwrap(), c.band_hi.as_ref().unwrap());
        contained &= (0..c.len()).all(|i| lo[i] <= c.ci_lo[i] && c.ci_hi[i] <= hi[i]);
    }
    // Monte Carlo error of a 95% quantile at 1e5 draws is below 0.01
    r.check("5d.u95", worst_u >= Z_95 - 0.02, format!("min u95 = {worst_u:.4} (≥ 1.96 − 0.02)"));
    r.check("5d.band_contains_ci", contained, "band ⊇ pointwise CI on every grid point".into());
}

fn property_saturated(r: &mut Report) {
    let s = sim(2, 90, 6);
    let horizon = [0u8, 1]
        .iter()
        .map(|&arm| km_fit(&s, Some(arm)).unwrap().last_event_time().unwrap())
        .fold(f64::INFINITY, f64::min);
    let grid = RestrictionGrid::new((1..=9).map(|k| horizon * k as f64 / 9.0).collect()).unwrap();
    let cfg = PvConfig {
        time_model: TimeModel::Indicator,
        within_arm_pseudo: true,
        ..Default::default()
    };
    let curve = fit_pv_model_on_grid(&s, &grid, &cfg).unwrap().curve_on(grid.taus()).unwrap();
    let plug = rmst_diff_plugin(&s, grid.taus()).unwrap();
    let dev = max_dev(curve.estimate.iter().copied(), plug);
    r.check("5e.saturated", dev <= 1e-10, format!("max |R̂ − plug-in| = {dev:.2e} (≤ 1e-10, within-arm jackknife)"));
}

fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    (1..=n)
        .map(|i| {
            let mut x = (std::f64::consts::PI * (i as f64 - 0.25) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (mut p0, mut p1) = (1.0, x);
                for k in 2..=n {
                    let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                    p0 = p1;
                    p1 = p2;
                }
                dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
                let dx = p1 / dp;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            (x, 2.0 / ((1.0 - x * x) * dp * dp))
        })
        .collect()
}

/// Composite 20-point Gauss-Legendre; panels widen geometrically away from `a`.
fn quadrature(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    let rule = gauss_legendre(20);
    let mut total = 0.0;
    let mut lo = a;
    while lo < b {
        let hi = (lo + (0.25 * lo).clamp(1e-3, 0.5)).min(b);
        let (c, h) = (0.5 * (lo + hi), 0.5 * (hi - lo));
        total += h * rule.iter().map(|&(x, w)| w * f(c + h * x)).sum::<f64>();
        lo = hi;
    }
    total
}

fn property_special(r: &mut Report) {
    let mut worst = 0.0f64;
    for a in [0.3, 0.5, 1.0, 4.0 / 3.0, 2.0, 2.7, 5.0, 10.0] {
        for x in [0.1, 0.5, 1.0, 2.0, 5.0, 10.0, 20.0] {
            let f = |t: f64| t.powf(a - 1.0) * (-t).exp();
            let want = quadrature(&f, x, x.max(a) + 80.0);
            worst = worst.max((upper_incomplete_gamma(a, x) - want).abs() / want);
        }
    }
    r.check("5f.incomplete_gamma", worst <= 1e-10, format!("max rel error = {worst:.2e} (≤ 1e-10)"));

    let mut worst = 0.0f64;
    for shape in [0.5, 0.75, 1.0, 1.5, 2.0] {
        for rate in [0.18, 1.0, std::f64::consts::E] {
            let d = DistributionSpec::WeibullRateShape { rate, shape };
            for tau in [0.1, 0.7, 1.386294, 3.0, 8.0] {
                let q = quadrature(&|t| (-rate * t.powf(shape)).exp(), 0.0, tau);
                worst = worst.max((d.true_rmst(tau) - q).abs());
            }
        }
    }
    r.check("5g.weibull_rmst", worst <= 1e-8, format!("max |closed form − quadrature| = {worst:.2e} (≤ 1e-8)"));
}

/// `R(t) = β + γ·B(t)` on `[0, 10]` with a one-column natural basis.
fn linear_curve(beta: f64, gamma: f64, cov: [[f64; 2]; 2]) -> RmstDiffCurve {
    let basis = SplineBasis::natural(1, &[0.0, 10.0]).unwrap();
    let mut robust_cov = DMatrix::zeros(4, 4);
    for i in 0..2 {
        for j in 0..2 {
            robust_cov[(2 + i, 2 + j)] = cov[i][j];
        }
    }
    let model = RmstDiffModel {
        basis,
        layout: DesignLayout { time_df: 1, n_covariates: 0 },
        link: LinkFunction::Identity,
        coefficients: vec![0.0, 0.0, beta, gamma],
        robust_cov,
        reference_covariates: Vec::new(),
    };
    let grid: Vec<f64> = (1..=20).map(|k| k as f64 * 0.5).collect();
    let estimate: Vec<f64> = grid.iter().map(|&t| model.estimate(t)).collect();
    let se: Vec<f64> = grid.iter().map(|&t| model.se(t)).collect();
    RmstDiffCurve {
        ci_lo: estimate.iter().zip(&se).map(|(e, s)| e - Z_95 * s).collect(),
        ci_hi: estimate.iter().zip(&se).map(|(e, s)| e + Z_95 * s).collect(),
        contrast_matrix: grid.iter().map(|&t| model.contrast(t)).collect(),
        eval_grid: grid,
        estimate,
        se,
        band_lo: None,
        band_hi: None,
        critical_value: None,
        seed: None,
        model,
    }
}

fn conventions(r: &mut Report) {
    let gamma = -1.0 / SplineBasis::natural(1, &[0.0, 10.0]).unwrap().eval(5.0)[0];
    let right = tute_ci_band(&linear_curve(1.0, gamma, [[1e-4, 0.0], [0.0, 4.0]]));
    r.check(
        "6.right_open",
        (right.point - 5.0).abs() < 1e-5 && right.ci_lo > 0.0 && right.ci_lo < 5.0 && right.ci_hi == f64::INFINITY,
        format!("TUTE {:.4}, interval ({:.4}, {})", right.point, right.ci_lo, right.ci_hi),
    );
    let left = tute_ci_band(&linear_curve(1.0, gamma, [[4.0, -3.99], [-3.99, 4.0]]));
    r.check(
        "6.zero_lower",
        (left.point - 5.0).abs() < 1e-5 && left.ci_lo == 0.0 && left.ci_hi.is_finite() && left.ci_hi > 5.0,
        format!("TUTE {:.4}, interval ({}, {:.4})", left.point, left.ci_lo, left.ci_hi),
    );

    let dominated = (1..=60)
        .flat_map(|k| [Subject::new(k as f64 * 0.1, true, 0), Subject::new(k as f64 * 0.2, true, 1)])
        .collect();
    let s = SurvivalSample::new(dominated).unwrap();
    let est = tute_ci_bootstrap(&s, 200, SEED, &TuteEstimator::Plugin, Resampling::StratifiedByArm).unwrap();
    let frac = est.frac_infinite.unwrap();
    let warned = est.warnings.iter().any(|w| w == WARN_NO_FINITE);
    r.check(
        "6.bootstrap_warning",
        frac > 0.05 && warned,
        format!("frac_infinite = {frac:.3}, \"{WARN_NO_FINITE}\" reported = {warned}"),
    );

    let t = Instant::now();
    let s5 = curve_study(5, 200);
    println!("     scenario 5, n=200/arm, 500 reps: {}", elapsed(t));
    r.within("6.s5.right_open", "right-open TUTE interval share", s5.pv_right_open.unwrap(), 0.28, 0.07);
}

fn main() -> ExitCode {
    let mut r = Report { rows: Vec::new() };
    let start = Instant::now();
    println!("criterion 1: analytic ground truths");
    truths(&mut r);
    println!("criterion 5: property suite");
    property_no_censoring(&mut r);
    property_column_mean(&mut r);
    property_gee(&mut r);
    property_band(&mut r);
    property_saturated(&mut r);
    property_special(&mut r);
    println!("criterion 2: Table 1 cells, n=250, 500 reps");
    table1(&mut r);
    println!("criterion 3: extrapolation cell δ=0.5, β_b=1, P=0.90");
    extrapolation_cell(&mut r);
    println!("criterion 4: Table 2 coverage");
    table2(&mut r);
    println!("criterion 6: open-interval conventions");
    conventions(&mut r);

    let failed: Vec<&str> = r.rows.iter().filter(|(_, p)| !p).map(|(id, _)| id.as_str()).collect();
    let unexpected: Vec<&str> = failed.iter().copied().filter(|id| !KNOWN_GAPS.contains(id)).collect();
    println!(
        "acceptance: {} checks, {} passed, {} failed ({} known gaps) in {}",
        r.rows.len(),
        r.rows.len() - failed.len(),
        failed.len(),
        failed.len() - unexpected.len(),
        elapsed(start)
    );
    if unexpected.is_empty() {
        ExitCode::SUCCESS
    } else {
        println!("unexpected failures: {}", unexpected.join(", "));
        ExitCode::FAILURE
    }
}
