use proptest::prelude::*;
use rmstcurve::analysis::fit_pv_model_on_pseudo;
use rmstcurve::inference::{band_coverage_check, follow_up_grid, Z_95};
use rmstcurve::pseudo::RestrictionGrid;
use rmstcurve::simlab::{simulate, ScenarioSpec};
use rmstcurve::survival::SurvivalSample;
use rmstcurve::{
    fit_pv_model, fit_pv_model_on_grid, km_fit, pseudo_values, rmst_diff_plugin, PvAnalysis, PvConfig, TimeModel,
};

fn sample(id: u8, n: usize, seed: u64) -> SurvivalSample<f64> {
    simulate(&ScenarioSpec::numbered(id).unwrap(), n, seed).unwrap()
}

fn fixed(df: usize) -> PvConfig {
    PvConfig {
        time_model: TimeModel::NaturalFixed(df),
        ..Default::default()
    }
}

fn eval_grid(a: &PvAnalysis, k: usize) -> Vec<f64> {
    follow_up_grid(a.grid().first(), a.grid().last(), k)
}

#[test]
fn variance_is_the_displayed_quadratic_form() {
    let a = fit_pv_model(&sample(2, 100, 1), &fixed(2)).unwrap();
    let model = a.model();
    let z = a.layout.treatment();
    let cov = &a.fit.robust_cov;
    for t in eval_grid(&a, 7) {
        let b = a.basis.eval(t);
        let c = [1.0, b[0], b[1]];
        let idx = [z, z + 1, z + 2];
        let mut v = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                v += c[i] * cov[(idx[i], idx[j])] * c[j];
            }
        }
        assert!((model.variance(t) - v).abs() <= 1e-12 * v.abs().max(1.0), "t={t}");
    }
}

#[test]
fn one_point_band_is_normal_quantile() {
    let a = fit_pv_model(&sample(2, 100, 2), &fixed(3)).unwrap();
    let t = 0.5 * (a.grid().first() + a.grid().last());
    let (curve, _) = a.band_on(&[t], 0.05, 100_000, 99).unwrap();
    let u = curve.critical_value.unwrap();
    assert!((u - 1.96).abs() < 0.02, "u = {u}");
}

#[test]
fn duplicated_points_leave_critical_value_unchanged() {
    let a = fit_pv_model(&sample(3, 100, 3), &fixed(3)).unwrap();
    let g = eval_grid(&a, 6);
    let mut dup = g.clone();
    dup.extend_from_slice(&g[2..4]);
    dup.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let (c1, _) = a.band_on(&g, 0.05, 100_000, 5).unwrap();
    let (c2, _) = a.band_on(&dup, 0.05, 100_000, 5).unwrap();
    let (u1, u2) = (c1.critical_value.unwrap(), c2.critical_value.unwrap());
    assert!((u1 - u2).abs() < 0.02, "{u1} vs {u2}");
}

#[test]
fn band_is_reproducible_across_thread_counts() {
    let a = fit_pv_model(&sample(2, 100, 4), &fixed(4)).unwrap();
    let g = eval_grid(&a, 10);
    let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let u1 = single.install(|| a.band_on(&g, 0.05, 20_000, 17).unwrap().0.critical_value.unwrap());
    let u2 = a.band_on(&g, 0.05, 20_000, 17).unwrap().0.critical_value.unwrap();
    assert_eq!(u1.to_bits(), u2.to_bits());
}

#[test]
fn rescaled_pseudo_values_rescale_the_curve() {
    let s = sample(2, 120, 5);
    let cfg = fixed(4);
    let base = fit_pv_model(&s, &cfg).unwrap();
    let c = 3.5;
    let scaled = fit_pv_model_on_pseudo(&s, base.pseudo.scaled(c), &cfg).unwrap();
    let g = eval_grid(&base, 10);
    let (x, _) = base.band_on(&g, 0.05, 10_000, 8).unwrap();
    let (y, _) = scaled.band_on(&g, 0.05, 10_000, 8).unwrap();
    let close = |p: &[f64], q: &[f64]| p.iter().zip(q).all(|(a, b)| (a * c - b).abs() <= 1e-9 * (1.0 + b.abs()));
    assert!(close(&x.estimate, &y.estimate));
    assert!(close(&x.se, &y.se));
    assert!(close(&x.ci_lo, &y.ci_lo) && close(&x.ci_hi, &y.ci_hi));
    assert!(close(x.band_lo.as_ref().unwrap(), y.band_lo.as_ref().unwrap()));
    assert!(close(x.band_hi.as_ref().unwrap(), y.band_hi.as_ref().unwrap()));
}

fn common_grid(s: &SurvivalSample<f64>, m: usize) -> RestrictionGrid<f64> {
    let horizon = [0u8, 1]
        .iter()
        .map(|&arm| km_fit(s, Some(arm)).unwrap().last_event_time().unwrap())
        .fold(f64::INFINITY, f64::min);
    RestrictionGrid::new((1..=m).map(|k| horizon * k as f64 / m as f64).collect()).unwrap()
}

#[test]
fn saturated_within_arm_model_reproduces_plugin() {
    let s = sample(2, 90, 6);
    let grid = common_grid(&s, 9);
    let cfg = PvConfig {
        time_model: TimeModel::Indicator,
        within_arm_pseudo: true,
        ..Default::default()
    };
    let a = fit_pv_model_on_grid(&s, &grid, &cfg).unwrap();
    let plug = rmst_diff_plugin(&s, grid.taus()).unwrap();
    let curve = a.curve_on(grid.taus()).unwrap();
    for (r, p) in curve.estimate.iter().zip(&plug) {
        assert!((r - p).abs() < 1e-10, "{r} vs {p}");
    }
}

#[test]
fn saturated_pooled_model_is_arm_mean_difference() {
    let s = sample(3, 90, 7);
    let grid = common_grid(&s, 6);
    let cfg = PvConfig {
        time_model: TimeModel::Indicator,
        ..Default::default()
    };
    let a = fit_pv_model_on_grid(&s, &grid, &cfg).unwrap();
    let pv = pseudo_values(&s, &grid).unwrap();
    let curve = a.curve_on(grid.taus()).unwrap();
    for (j, r) in curve.estimate.iter().enumerate() {
        let mean = |arm: u8| {
            let v: Vec<f64> = (0..s.len()).filter(|&i| s.subjects()[i].arm == arm).map(|i| pv.get(i, j)).collect();
            v.iter().sum::<f64>() / v.len() as f64
        };
        assert!((r - (mean(1) - mean(0))).abs() < 1e-10);
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 12, ..ProptestConfig::default() })]

    #[test]
    fn band_contains_pointwise_ci(seed in 0u64..10_000, id in 1u8..=5, k in 1usize..20) {
        let a = fit_pv_model(&sample(id, 80, seed), &fixed(3)).unwrap();
        let (curve, _) = a.band_on(&eval_grid(&a, k), 0.05, 10_000, seed).unwrap();
        let u = curve.critical_value.unwrap();
        prop_assert!(u >= Z_95 - 0.03, "u = {}", u);
        let (lo, hi) = (curve.band_lo.as_ref().unwrap(), curve.band_hi.as_ref().unwrap());
        for i in 0..curve.len() {
            prop_assert!(lo[i] <= curve.ci_lo[i] + 1e-12 && curve.ci_hi[i] <= hi[i] + 1e-12);
            prop_assert!(curve.ci_lo[i] <= curve.estimate[i] && curve.estimate[i] <= curve.ci_hi[i]);
        }
        prop_assert!(band_coverage_check(&curve, &curve.estimate).unwrap());
    }
}
