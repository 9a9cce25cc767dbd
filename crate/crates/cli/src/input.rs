//! Survival CSV ingestion: `time,status,arm` plus optional covariate
//! columns, one subject per row.

use crate::failure::Failure;
use rmstcurve::survival::SurvivalSample;
use rmstcurve::Subject;
use std::io::Read;
use std::path::Path;

pub const REQUIRED: [&str; 3] = ["time", "status", "arm"];

#[derive(Debug, Clone)]
pub struct Dataset {
    pub sample: SurvivalSample<f64>,
    pub covariate_names: Vec<String>,
}

pub fn read_csv(path: &Path) -> Result<Dataset, Failure> {
    let file = std::fs::File::open(path).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
    parse_csv(file, &path.display().to_string())
}

pub fn parse_csv<R: Read>(reader: R, source: &str) -> Result<Dataset, Failure> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(reader);
    let headers: Vec<String> = rdr
        .headers()
        .map_err(|e| Failure::Input(format!("{source}: line 1: {e}")))?
        .iter()
        .map(|h| h.to_ascii_lowercase())
        .collect();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Failure::Input(format!("{source}: missing required column '{name}'")))
    };
    let idx = REQUIRED.iter().map(|c| column(c)).collect::<Result<Vec<usize>, Failure>>()?;
    let (i_time, i_status, i_arm) = (idx[0], idx[1], idx[2]);
    let cov_idx: Vec<usize> = (0..headers.len()).filter(|i| ![i_time, i_status, i_arm].contains(i)).collect();
    let covariate_names = cov_idx.iter().map(|&i| headers[i].clone()).collect();

    let mut subjects = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            Failure::Input(format!("{source}: line {line}: {e}"))
        })?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let err = |what: &str, v: &str| Failure::Input(format!("{source}: line {line}: invalid {what} '{v}'"));
        let field = |i: usize| rec.get(i).unwrap_or("");

        let time: f64 = field(i_time).parse().map_err(|_| err("time", field(i_time)))?;
        if !(time.is_finite() && time >= 0.0) {
            return Err(err("time", field(i_time)));
        }
        let event = match field(i_status) {
            "1" | "true" | "TRUE" => true,
            "0" | "false" | "FALSE" => false,
            v => return Err(err("status (expected 0 or 1)", v)),
        };
        let arm = match field(i_arm) {
            "0" => 0,
            "1" => 1,
            v => return Err(err("arm (expected 0 or 1)", v)),
        };
        let covariates = cov_idx
            .iter()
            .map(|&i| {
                let v = field(i);
                v.parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| err(&format!("covariate '{}'", headers[i]), v))
            })
            .collect::<Result<Vec<f64>, Failure>>()?;
        subjects.push(Subject::new(time, event, arm).with_covariates(covariates));
    }
    if subjects.is_empty() {
        return Err(Failure::Input(format!("{source}: no data rows")));
    }
    let sample = SurvivalSample::new(subjects).map_err(|e| Failure::Input(format!("{source}: {e}")))?;
    Ok(Dataset { sample, covariate_names })
}

/// Writes a sample in the input layout.
pub fn sample_to_csv(sample: &SurvivalSample<f64>) -> String {
    let mut s = String::from("time,status,arm\n");
    for subj in sample.subjects() {
        s.push_str(&format!("{},{},{}\n", subj.time, u8::from(subj.event), subj.arm));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reads_columns_in_any_order_with_covariates() {
        let text = "arm,age,time,status\n0,50,1.5,1\n1,61,2.0,0\n";
        let d = parse_csv(text.as_bytes(), "t.csv").unwrap();
        assert_eq!(d.covariate_names, vec!["age"]);
        let s = d.sample.subjects();
        assert_eq!((s[0].time, s[0].event, s[0].arm), (1.5, true, 0));
        assert_eq!(s[1].covariates, vec![61.0]);
    }

    #[test]
    fn missing_column_is_named() {
        let err = parse_csv("time,arm\n1,0\n".as_bytes(), "t.csv").unwrap_err();
        assert!(err.to_string().contains("'status'"), "{err}");
    }

    #[test]
    fn bad_value_reports_line() {
        let err = parse_csv("time,status,arm\n1,1,0\n2,x,1\n".as_bytes(), "t.csv").unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");
        let err = parse_csv("time,status,arm\n-1,1,0\n".as_bytes(), "t.csv").unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }

    #[test]
    fn round_trip() {
        let d = parse_csv("time,status,arm\n1.25,1,0\n3,0,1\n".as_bytes(), "t.csv").unwrap();
        let again = parse_csv(sample_to_csv(&d.sample).as_bytes(), "t.csv").unwrap();
        assert_eq!(d.sample, again.sample);
    }
}
