use crate::config::{AnalysisConfig, BootstrapEstimator};
use crate::failure::Failure;
use crate::input::{read_csv, sample_to_csv, Dataset};
use crate::output::{curve_json, num, plot_csv, provenance, tute_json, write_json, write_text};
use log::info;
use rmstcurve::inference::follow_up_grid;
use rmstcurve::simlab::{parse_pairs, replicate_study, study_config_from_pairs, ScenarioSpec};
use rmstcurve::tute::{clinical_relevance_warning, Resampling, TuteEstimator};
use rmstcurve::{fit_pv_model, km_fit, pseudo_values, pseudo_values_within_arms, select_grid, tute_ci_band, tute_ci_bootstrap};
use rmstcurve::{PvAnalysis, RmstDiffCurve, TuteEstimate};
use serde_json::{json, Value};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

struct Banded {
    data: Dataset,
    analysis: PvAnalysis,
    curve: RmstDiffCurve,
    warnings: Vec<String>,
}

fn out_dir(cfg: &AnalysisConfig, command: &str) -> Result<PathBuf, Failure> {
    let dir = cfg
        .out
        .clone()
        .ok_or_else(|| Failure::Input(format!("`{command}` needs an output directory (--out)")))?;
    std::fs::create_dir_all(&dir).map_err(|e| Failure::Input(format!("{}: {e}", dir.display())))?;
    Ok(dir)
}

/// Equally spaced band grid ending at the earlier of the last restriction
/// time and the shorter arm's follow-up, unless `eval_end` is given.
fn band_grid(cfg: &AnalysisConfig, data: &Dataset, analysis: &PvAnalysis) -> Result<Vec<f64>, Failure> {
    let (a, b) = (analysis.grid().first(), analysis.grid().last());
    let end = match cfg.eval_end {
        Some(e) => e,
        None => {
            let horizon = km_fit(&data.sample, Some(0))?.last_time.min(km_fit(&data.sample, Some(1))?.last_time);
            b.min(horizon)
        }
    };
    if !(end > a) {
        return Err(Failure::Input(format!(
            "band grid end {end} must exceed the first restriction time {a}"
        )));
    }
    Ok(follow_up_grid(a, end, cfg.eval_points))
}

fn fit_and_band(cfg: &AnalysisConfig, seed: u64) -> Result<Banded, Failure> {
    cfg.validate()?;
    let data = read_csv(&cfg.input)?;
    if cfg.covariates && data.covariate_names.is_empty() {
        return Err(Failure::Input("covariate adjustment requested but the input has no covariate columns".into()));
    }
    let analysis = fit_pv_model(&data.sample, &cfg.pv_config())?;
    let eval = band_grid(cfg, &data, &analysis)?;
    let (curve, band_warnings) = analysis.band_on(&eval, cfg.alpha, cfg.draws, seed)?;
    let mut warnings = analysis.warnings.clone();
    warnings.extend(analysis.fit.warnings.iter().cloned());
    warnings.extend(band_warnings);
    info!("fit: {} subjects, {} restriction times", data.sample.len(), analysis.grid().len());
    Ok(Banded {
        data,
        analysis,
        curve,
        warnings,
    })
}

fn manifest(cfg: &AnalysisConfig, command: &str, seed: u64, outputs: &[&str]) -> Result<Value, Failure> {
    let mut m = provenance(command, Some(seed), cfg)?;
    m.insert("input".into(), json!(cfg.input.display().to_string()));
    m.insert("outputs".into(), json!(outputs));
    Ok(Value::Object(m))
}

fn summary_json(cfg: &AnalysisConfig, seed: u64, b: &Banded) -> Result<Value, Failure> {
    let fit = &b.analysis.fit;
    let se = fit.robust_se();
    let coefficients: Vec<Value> = fit
        .labels
        .iter()
        .zip(fit.coefficients.iter())
        .zip(&se)
        .map(|((l, c), s)| json!({ "term": l, "estimate": num(*c), "robust_se": num(*s) }))
        .collect();
    let qic_trace: Vec<Value> = b
        .analysis
        .qic_trace
        .iter()
        .map(|c| json!({ "df": c.df, "qic": c.qic.map(num) }))
        .collect();
    let s = &b.data.sample;
    let mut m = provenance("fit", Some(seed), cfg)?;
    m.insert("n_subjects".into(), json!(s.len()));
    m.insert("n_per_arm".into(), json!([s.arm_size(0), s.arm_size(1)]));
    m.insert("events_per_arm".into(), json!([s.arm_events(0), s.arm_events(1)]));
    m.insert("covariates".into(), json!(b.data.covariate_names));
    m.insert("restriction_grid".into(), json!(b.analysis.grid().taus()));
    m.insert("basis".into(), json!(b.analysis.basis.kind()));
    m.insert("selected_df".into(), json!(b.analysis.selected_df));
    m.insert("qic_trace".into(), json!(qic_trace));
    m.insert("coefficients".into(), json!(coefficients));
    m.insert("qic".into(), num(fit.qic));
    m.insert("dispersion".into(), num(fit.dispersion));
    m.insert("converged".into(), json!(fit.converged));
    m.insert("iterations".into(), json!(fit.iterations));
    m.insert("u95".into(), b.curve.critical_value.map(num).unwrap_or(Value::Null));
    m.insert("warnings".into(), json!(b.warnings));
    Ok(Value::Object(m))
}

pub fn fit(cfg: &AnalysisConfig) -> Result<(), Failure> {
    let seed = cfg.require_seed("fit")?;
    let dir = out_dir(cfg, "fit")?;
    let b = fit_and_band(cfg, seed)?;
    write_json(&dir.join("summary.json"), &summary_json(cfg, seed, &b)?)?;
    write_json(&dir.join("curve.json"), &curve_json(provenance("fit", Some(seed), cfg)?, &b.curve))?;
    write_text(&dir.join("plot.csv"), &plot_csv(&b.curve))?;
    let files = ["summary.json", "curve.json", "plot.csv", "manifest.json"];
    write_json(&dir.join("manifest.json"), &manifest(cfg, "fit", seed, &files)?)?;
    for w in &b.warnings {
        eprintln!("warning: {w}");
    }
    Ok(())
}

pub fn band(cfg: &AnalysisConfig) -> Result<(), Failure> {
    let seed = cfg.require_seed("band")?;
    let dir = out_dir(cfg, "band")?;
    let b = fit_and_band(cfg, seed)?;
    write_json(&dir.join("curve.json"), &curve_json(provenance("band", Some(seed), cfg)?, &b.curve))?;
    write_text(&dir.join("plot.csv"), &plot_csv(&b.curve))?;
    write_json(&dir.join("manifest.json"), &manifest(cfg, "band", seed, &["curve.json", "plot.csv", "manifest.json"])?)?;
    Ok(())
}

fn with_clinical_warning(mut est: TuteEstimate, data: &Dataset, floor: f64) -> Result<TuteEstimate, Failure> {
    if let Some(w) = clinical_relevance_warning(&data.sample, est.point, floor)? {
        est.warnings.push(w);
    }
    Ok(est)
}

pub fn tute(cfg: &AnalysisConfig) -> Result<(), Failure> {
    let seed = cfg.require_seed("tute")?;
    let dir = out_dir(cfg, "tute")?;
    let b = fit_and_band(cfg, seed)?;
    let inverted = with_clinical_warning(tute_ci_band(&b.curve), &b.data, cfg.floor)?;
    let estimator = match cfg.bootstrap_estimator {
        BootstrapEstimator::Plugin => TuteEstimator::Plugin,
        BootstrapEstimator::Model => TuteEstimator::Model(cfg.pv_config()),
    };
    let boot = tute_ci_bootstrap(&b.data.sample, cfg.bootstrap, seed, &estimator, Resampling::StratifiedByArm)?;
    let boot = with_clinical_warning(boot, &b.data, cfg.floor)?;
    let mut m = provenance("tute", Some(seed), cfg)?;
    m.insert("band_inversion".into(), tute_json(&inverted));
    m.insert("bootstrap".into(), tute_json(&boot));
    write_json(&dir.join("tute.json"), &Value::Object(m))?;
    write_json(&dir.join("manifest.json"), &manifest(cfg, "tute", seed, &["tute.json", "manifest.json"])?)?;
    for w in inverted.warnings.iter().chain(&boot.warnings) {
        eprintln!("warning: {w}");
    }
    Ok(())
}

/// Long-format pseudo-values; deterministic, so no seed is needed.
pub fn pseudo(cfg: &AnalysisConfig) -> Result<(), Failure> {
    cfg.validate()?;
    let data = read_csv(&cfg.input)?;
    let selection = select_grid(&data.sample, cfg.grid)?;
    for w in &selection.warnings {
        eprintln!("warning: {w}");
    }
    let grid = selection.grid;
    let pv = if cfg.within_arm {
        pseudo_values_within_arms(&data.sample, &grid)?
    } else {
        pseudo_values(&data.sample, &grid)?
    };
    let mut s = String::from("subject,tau,pseudo_value\n");
    for i in 0..pv.n_subjects() {
        for (j, tau) in grid.taus().iter().enumerate() {
            let _ = writeln!(s, "{},{},{}", i + 1, tau, pv.get(i, j));
        }
    }
    emit(cfg.out.as_deref(), &s)
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), Failure> {
    match out {
        Some(p) => write_text(p, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

/// True curve, crossing and TUTE of a numbered scenario.
pub fn truth(id: u8, points: usize, end: Option<f64>, out: Option<&Path>) -> Result<(), Failure> {
    let spec = ScenarioSpec::numbered(id).map_err(|e| Failure::Input(e.to_string()))?;
    if points < 2 {
        return Err(Failure::Input("--points must be at least 2".into()));
    }
    let crossing = spec.true_crossing();
    let tute = spec.true_tute();
    let end = end.unwrap_or_else(|| {
        if tute.is_finite() {
            1.5 * tute
        } else {
            spec.arm0.quantile(0.99).max(spec.arm1.quantile(0.99))
        }
    });
    if !(end > 0.0) {
        return Err(Failure::Input(format!("--end must be positive, got {end}")));
    }
    let t: Vec<f64> = (1..=points).map(|k| end * k as f64 / points as f64).collect();
    let r: Vec<Value> = t.iter().map(|&x| num(spec.true_rmst_diff(x))).collect();
    let s0: Vec<Value> = t.iter().map(|&x| num(spec.arm0.survival(x))).collect();
    let s1: Vec<Value> = t.iter().map(|&x| num(spec.arm1.survival(x))).collect();
    let config = json!({ "scenario": id, "points": points, "end": end });
    let mut m = provenance("truth", None, &config)?;
    m.insert("scenario".into(), json!(id));
    m.insert("arms".into(), json!([spec.arm0, spec.arm1]));
    m.insert("crossing".into(), num(crossing));
    m.insert("tute".into(), num(tute));
    m.insert("curve".into(), json!({ "t": t, "rmst_diff": r, "survival_arm0": s0, "survival_arm1": s1 }));
    let mut text = serde_json::to_string_pretty(&Value::Object(m))?;
    text.push('\n');
    emit(out, &text)
}

fn study_pairs(pairs: &[String], config: Option<&Path>) -> Result<BTreeMap<String, String>, Failure> {
    let mut map = parse_pairs(&pairs.join(" ")).map_err(|e| Failure::Input(e.to_string()))?;
    if let Some(p) = config {
        let text = std::fs::read_to_string(p).map_err(|e| Failure::Input(format!("{}: {e}", p.display())))?;
        map.extend(parse_pairs(&text).map_err(|e| Failure::Input(e.to_string()))?);
    }
    Ok(map)
}

/// One simulated dataset in the input CSV layout.
fn emit_sample(map: &BTreeMap<String, String>, out: Option<&Path>) -> Result<(), Failure> {
    let get = |k: &str| -> Result<f64, Failure> {
        map.get(k)
            .ok_or_else(|| Failure::Input(format!("missing required key '{k}'")))?
            .parse()
            .map_err(|_| Failure::Input(format!("invalid value for key '{k}'")))
    };
    if let Some(k) = map.keys().find(|k| !["scenario", "cell", "delta", "beta", "p", "n", "seed"].contains(&k.as_str())) {
        return Err(Failure::Input(format!("unknown key '{k}' for a single sample")));
    }
    let n = get("n")? as usize;
    let seed = map
        .get("seed")
        .ok_or_else(|| Failure::Input("missing required key 'seed'".into()))?
        .parse::<u64>()
        .map_err(|_| Failure::Input("invalid value for key 'seed'".into()))?;
    let (spec, n_per_arm) = match (map.get("scenario"), map.get("cell").map(String::as_str)) {
        (Some(id), None) => {
            let id: u8 = id.parse().map_err(|_| Failure::Input(format!("unknown scenario id '{id}'")))?;
            (ScenarioSpec::numbered(id).map_err(|e| Failure::Input(e.to_string()))?, n)
        }
        (None, Some("weibull")) => (ScenarioSpec::weibull_bias(get("delta")?, get("beta")?, get("p")?)?, n.div_ceil(2)),
        _ => return Err(Failure::Input("give 'scenario=<1-5>' or 'cell=weibull'".into())),
    };
    let sample = spec.calibrate()?.simulate(n_per_arm, seed, 0)?;
    emit(out, &sample_to_csv(&sample))
}

pub fn simulate(pairs: &[String], config: Option<&Path>, out: Option<&Path>, sample_only: bool) -> Result<(), Failure> {
    let map = study_pairs(pairs, config)?;
    if sample_only {
        return emit_sample(&map, out);
    }
    let study = study_config_from_pairs(&map).map_err(|e| Failure::Input(e.to_string()))?;
    let report = replicate_study(&study)?;
    let csv = report.to_csv();
    match out {
        None => {
            print!("{csv}");
            Ok(())
        }
        Some(dir) => {
            std::fs::create_dir_all(dir).map_err(|e| Failure::Input(format!("{}: {e}", dir.display())))?;
            write_text(&dir.join("study.csv"), &csv)?;
            let mut m = provenance("simulate", Some(study.seed), &map)?;
            m.insert("study".into(), serde_json::to_value(&study)?);
            m.insert("report".into(), serde_json::to_value(&report)?);
            write_json(&dir.join("study.json"), &Value::Object(m))
        }
    }
}
