use std::io::Write;
use std::path::Path;
use std::time::Instant;

use affine_spectra::{Rational, VERSION as CORE_VERSION};
use num_bigint::BigInt;
use num_integer::Integer;
use num_traits::{Signed, Zero};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Deterministic,
    Seeded,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Status {
    Pass,
    Fail,
    Info,
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage {
    pub name: String,
    pub mode: Mode,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub status: Status,
    pub results: Value,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub total_ms: f64,
    pub stages_ms: Vec<(String, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub subcommand: String,
    pub versions: Value,
    pub inputs: Value,
    pub stages: Vec<Stage>,
    pub verdict: String,
    pub timing: Timing,
}

impl RunReport {
    pub fn new(subcommand: &str, inputs: Value) -> Self {
        RunReport {
            subcommand: subcommand.into(),
            versions: json!({
                "affine-spectra": CORE_VERSION,
                "affine-spectra-cli": env!("CARGO_PKG_VERSION"),
            }),
            inputs,
            stages: Vec::new(),
            verdict: String::new(),
            timing: Timing::default(),
        }
    }

    pub fn stage(&self, name: &str) -> Option<&Stage> {
        self.stages.iter().find(|s| s.name == name)
    }

    pub fn passed(&self) -> bool {
        self.verdict != "FAIL"
    }

    pub fn any_failed(&self) -> bool {
        self.stages.iter().any(|s| s.status == Status::Fail)
    }

    /// Pretty JSON with the timing block removed.
    pub fn to_json_without_timing(&self) -> String {
        let mut v = serde_json::to_value(self).expect("report serializes");
        v.as_object_mut()
            .expect("report is an object")
            .remove("timing");
        serde_json::to_string_pretty(&v).expect("value serializes")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Runs stages in order and records their wall-clock time.
pub struct Recorder {
    pub report: RunReport,
    start: Instant,
}

impl Recorder {
    pub fn new(subcommand: &str, inputs: Value) -> Self {
        Recorder {
            report: RunReport::new(subcommand, inputs),
            start: Instant::now(),
        }
    }

    pub fn run<F>(
        &mut self,
        name: &str,
        mode: Mode,
        seed: Option<u64>,
        f: F,
    ) -> anyhow::Result<Status>
    where
        F: FnOnce() -> anyhow::Result<(Status, Value)>,
    {
        let t = Instant::now();
        let (status, results) = f()?;
        self.report
            .timing
            .stages_ms
            .push((name.to_string(), t.elapsed().as_secs_f64() * 1e3));
        self.report.stages.push(Stage {
            name: name.into(),
            mode,
            seed,
            status,
            results,
        });
        Ok(status)
    }

    pub fn skip(&mut self, name: &str, mode: Mode, reason: &str) {
        self.report.stages.push(Stage {
            name: name.into(),
            mode,
            seed: None,
            status: Status::Skipped,
            results: json!({ "reason": reason }),
        });
    }

    /// Fixes the verdict: `pass_label` when no stage failed, otherwise "FAIL".
    pub fn finish(mut self, pass_label: &str) -> RunReport {
        self.report.verdict = if self.report.any_failed() {
            "FAIL".into()
        } else {
            pass_label.into()
        };
        self.report.timing.total_ms = self.start.elapsed().as_secs_f64() * 1e3;
        self.report
    }
}

pub fn status(ok: bool) -> Status {
    if ok {
        Status::Pass
    } else {
        Status::Fail
    }
}

pub fn rat(q: &Rational) -> Value {
    Value::String(q.to_string())
}

pub fn rat_vec(v: &[Rational]) -> Value {
    Value::Array(v.iter().map(rat).collect())
}

pub fn rat_vecs(v: &[Vec<Rational>]) -> Value {
    Value::Array(v.iter().map(|p| rat_vec(p)).collect())
}

/// `q` rounded half away from zero to `precision` decimal places.
pub fn decimal(q: &Rational, precision: usize) -> String {
    let scale = BigInt::from(10u32).pow(precision as u32);
    let num: BigInt = q.numer().abs() * &scale * 2 + q.denom();
    let (rounded, _) = num.div_rem(&(q.denom() * 2));
    let digits = rounded.to_string();
    let neg = q.is_negative() && !rounded.is_zero();
    let body = if precision == 0 {
        digits
    } else {
        let padded = format!("{digits:0>width$}", width = precision + 1);
        let (int, frac) = padded.split_at(padded.len() - precision);
        format!("{int}.{frac}")
    };
    if neg {
        format!("-{body}")
    } else {
        body
    }
}

pub fn float(x: f64, precision: usize) -> String {
    let s = format!("{x:.precision$}");
    match s.strip_prefix('-') {
        Some(rest) if rest.chars().all(|c| c == '0' || c == '.') => rest.to_string(),
        _ => s,
    }
}

/// Writes a CSV with the given header; creates parent directories.
pub fn write_csv(path: &Path, header: &[String], rows: &[Vec<String>]) -> anyhow::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for row in rows {
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn emit(report: &RunReport, out: Option<&Path>) -> anyhow::Result<()> {
    let text = report.to_json();
    match out {
        Some(path) => std::fs::write(path, text + "\n")?,
        None => {
            let mut stdout = std::io::stdout().lock();
            writeln!(stdout, "{text}")?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use affine_spectra::scalar::ratio;

    #[test]
    fn decimals() {
        assert_eq!(decimal(&ratio(1, 3), 4), "0.3333");
        assert_eq!(decimal(&ratio(2, 3), 4), "0.6667");
        assert_eq!(decimal(&ratio(-5, 4), 1), "-1.3");
        assert_eq!(decimal(&ratio(-1, 3000), 2), "0.00");
        assert_eq!(decimal(&ratio(7, 1), 0), "7");
        assert_eq!(decimal(&ratio(1, 2), 12), "0.500000000000");
        assert_eq!(float(-1e-20, 3), "0.000");
        assert_eq!(float(-0.25, 2), "-0.25");
    }

    #[test]
    fn verdict_and_timing() {
        let mut rec = Recorder::new("test", json!({}));
        rec.run("a", Mode::Deterministic, None, || {
            Ok((Status::Pass, json!(1)))
        })
        .unwrap();
        rec.skip("b", Mode::Seeded, "flag");
        let rep = rec.finish("PASS");
        assert_eq!(rep.verdict, "PASS");
        assert!(!rep.to_json_without_timing().contains("timing"));
        assert!(rep.to_json().contains("total_ms"));
        let mut rec = Recorder::new("test", json!({}));
        rec.run("a", Mode::Deterministic, None, || {
            Ok((Status::Fail, json!(1)))
        })
        .unwrap();
        assert_eq!(rec.finish("PASS").verdict, "FAIL");
    }
}
