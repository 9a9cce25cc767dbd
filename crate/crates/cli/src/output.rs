//! JSON and CSV writers. Every JSON document carries the software version,
//! the command, the seed and the resolved configuration.

use crate::failure::Failure;
use rmstcurve::{RmstDiffCurve, TuteEstimate};
use serde::Serialize;
use serde_json::{json, Map, Value};
use std::fmt::Write as _;
use std::path::Path;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// JSON number, or the strings `"inf"` / `"-inf"`; NaN becomes `null`.
pub fn num(x: f64) -> Value {
    if x.is_finite() {
        json!(x)
    } else if x.is_nan() {
        Value::Null
    } else if x > 0.0 {
        json!("inf")
    } else {
        json!("-inf")
    }
}

pub fn provenance<C: Serialize>(command: &str, seed: Option<u64>, config: &C) -> Result<Map<String, Value>, Failure> {
    let mut m = Map::new();
    m.insert("software".into(), json!({ "rmstcurve": VERSION }));
    m.insert("command".into(), json!(command));
    m.insert("seed".into(), json!(seed));
    m.insert("config".into(), serde_json::to_value(config)?);
    Ok(m)
}

pub fn write_json(path: &Path, value: &Value) -> Result<(), Failure> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))
}

pub fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    std::fs::write(path, text).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))
}

fn pairs(lo: &[f64], hi: &[f64]) -> Value {
    Value::Array(lo.iter().zip(hi).map(|(a, b)| json!([num(*a), num(*b)])).collect())
}

/// `{grid, estimate, se, ci, band, u95, seed}` merged into `base`.
pub fn curve_json(mut base: Map<String, Value>, curve: &RmstDiffCurve) -> Value {
    let arr = |v: &[f64]| Value::Array(v.iter().map(|x| num(*x)).collect());
    base.insert("grid".into(), arr(&curve.eval_grid));
    base.insert("estimate".into(), arr(&curve.estimate));
    base.insert("se".into(), arr(&curve.se));
    base.insert("ci".into(), pairs(&curve.ci_lo, &curve.ci_hi));
    let band = match (&curve.band_lo, &curve.band_hi) {
        (Some(lo), Some(hi)) => pairs(lo, hi),
        _ => Value::Null,
    };
    base.insert("band".into(), band);
    base.insert("u95".into(), curve.critical_value.map(num).unwrap_or(Value::Null));
    base.insert("seed".into(), json!(curve.seed));
    Value::Object(base)
}

pub fn plot_csv(curve: &RmstDiffCurve) -> String {
    let mut s = String::from("t,estimate,se,ci_lo,ci_hi,band_lo,band_hi\n");
    for i in 0..curve.len() {
        let band = |b: &Option<Vec<f64>>| b.as_ref().map(|v| v[i].to_string()).unwrap_or_default();
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            curve.eval_grid[i],
            curve.estimate[i],
            curve.se[i],
            curve.ci_lo[i],
            curve.ci_hi[i],
            band(&curve.band_lo),
            band(&curve.band_hi)
        );
    }
    s
}

/// `{point, ci: [lo, hi], method, frac_infinite, warnings}`.
pub fn tute_json(est: &TuteEstimate) -> Value {
    json!({
        "point": num(est.point),
        "ci": [num(est.ci_lo), num(est.ci_hi)],
        "method": est.method,
        "frac_infinite": est.frac_infinite.map(num),
        "n_failures": est.n_failures,
        "warnings": est.warnings,
    })
}
