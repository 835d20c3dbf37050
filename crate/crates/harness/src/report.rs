//! Report files.
//!
//! An experiment writes into its output directory:
//!
//! | file           | content                                            |
//! |----------------|----------------------------------------------------|
//! | `curves.csv`   | `method,sample_size,rate,stderr`, one row per point |
//! | `runs.jsonl`   | one JSON object per run                            |
//! | `config.json`  | the effective configuration                        |
//! | `summary.json` | experiment-specific scalar summaries               |
//! | `curves.svg`   | line plot of all curves                            |
//!
//! All files are UTF-8 with LF line endings. Floats are written in
//! scientific notation with 17 significant digits (`1.0000000000000000e-1`),
//! which round-trips every `f64`; non-finite floats become `null` in JSON.
//! JSON object keys are sorted.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::Serialize;
use serde_json::Value;

use crate::{svg, ExperimentConfig, ExperimentOutput, HarnessError, RejectionCurve, Result};

pub const CSV_HEADER: &str = "method,sample_size,rate,stderr";

pub fn format_float(v: f64) -> String {
    format!("{v:.16e}")
}

/// Serializes `value` as compact JSON with 17-digit floats.
pub fn to_json_line<T: Serialize>(value: &T) -> Result<String> {
    let mut out = String::new();
    render(&serde_json::to_value(value)?, &mut out);
    Ok(out)
}

fn render(value: &Value, out: &mut String) {
    match value {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => {
            if n.is_f64() {
                match n.as_f64() {
                    Some(f) if f.is_finite() => out.push_str(&format_float(f)),
                    _ => out.push_str("null"),
                }
            } else {
                out.push_str(&n.to_string());
            }
        }
        Value::String(s) => out.push_str(&Value::String(s.clone()).to_string()),
        Value::Array(items) => {
            out.push('[');
            for (i, v) in items.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                render(v, out);
            }
            out.push(']');
        }
        Value::Object(map) => {
            out.push('{');
            for (i, (k, v)) in map.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push_str(&Value::String(k.clone()).to_string());
                out.push(':');
                render(v, out);
            }
            out.push('}');
        }
    }
}

/// CSV text for `curves`; the header alone when there are none.
pub fn curves_csv(curves: &[RejectionCurve]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for c in curves {
        for ((n, r), s) in c.sample_sizes.iter().zip(&c.rates).zip(&c.stderr) {
            out.push_str(&format!("{},{n},{},{}\n", csv_field(&c.method), format_float(*r), format_float(*s)));
        }
    }
    out
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Parses [`curves_csv`] output back into curves, in order of first
/// appearance.
pub fn parse_curves_csv(text: &str) -> Result<Vec<RejectionCurve>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let header = reader.headers().map_err(|e| HarnessError::Report(e.to_string()))?;
    if header.iter().collect::<Vec<_>>().join(",") != CSV_HEADER {
        return Err(HarnessError::Report(format!("unexpected header `{}`", header.iter().collect::<Vec<_>>().join(","))));
    }
    let mut curves: Vec<RejectionCurve> = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| HarnessError::Report(e.to_string()))?;
        let bad = |what: &str| HarnessError::Report(format!("row {}: bad {what}", line + 1));
        let method = record.get(0).ok_or_else(|| bad("method"))?;
        let n: usize = record.get(1).and_then(|v| v.parse().ok()).ok_or_else(|| bad("sample_size"))?;
        let rate: f64 = record.get(2).and_then(|v| v.parse().ok()).ok_or_else(|| bad("rate"))?;
        let se: f64 = record.get(3).and_then(|v| v.parse().ok()).ok_or_else(|| bad("stderr"))?;
        let idx = match curves.iter().position(|c| c.method == method) {
            Some(i) => i,
            None => {
                curves.push(RejectionCurve {
                    method: method.to_string(),
                    sample_sizes: Vec::new(),
                    rates: Vec::new(),
                    stderr: Vec::new(),
                });
                curves.len() - 1
            }
        };
        let c = &mut curves[idx];
        c.sample_sizes.push(n);
        c.rates.push(rate);
        c.stderr.push(se);
    }
    Ok(curves)
}

pub fn read_curves_csv(path: &Path) -> Result<Vec<RejectionCurve>> {
    parse_curves_csv(&fs::read_to_string(path)?)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(text.as_bytes())?;
    Ok(())
}

/// Writes every report file for `output` into `dir`, creating it if needed.
pub fn write_reports(output: &ExperimentOutput, config: &ExperimentConfig, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_text(&dir.join("curves.csv"), &curves_csv(&output.curves))?;
    let mut runs = String::new();
    for r in &output.runs {
        runs.push_str(&to_json_line(r)?);
        runs.push('\n');
    }
    write_text(&dir.join("runs.jsonl"), &runs)?;
    let mut echo = config.clone();
    echo.kind = Some(output.kind);
    write_text(&dir.join("config.json"), &(to_json_line(&echo)? + "\n"))?;
    write_text(&dir.join("summary.json"), &(to_json_line(&output.summary)? + "\n"))?;
    let level = matches!(output.kind, crate::ExperimentKind::Type1 | crate::ExperimentKind::InflationDemo).then_some(config.alpha);
    write_text(&dir.join("curves.svg"), &svg::render(output.kind.name(), &output.curves, level))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_have_seventeen_digits() {
        assert_eq!(format_float(0.1), "1.0000000000000001e-1");
        assert_eq!(format_float(0.0), "0.0000000000000000e0");
        assert_eq!(format_float(0.1).parse::<f64>().unwrap(), 0.1);
    }

    #[test]
    fn json_rendering() {
        #[derive(Serialize)]
        struct S {
            b: u32,
            a: f64,
            c: Option<f64>,
            d: &'static str,
        }
        let line = to_json_line(&S {
            b: 3,
            a: 0.5,
            c: Some(f64::NAN),
            d: "x\"y",
        })
        .unwrap();
        assert_eq!(line, r#"{"a":5.0000000000000000e-1,"b":3,"c":null,"d":"x\"y"}"#);
        let v: Value = serde_json::from_str(&line).unwrap();
        assert_eq!(v["a"], 0.5);
    }

    #[test]
    fn empty_curves_give_header_only() {
        assert_eq!(curves_csv(&[]), "method,sample_size,rate,stderr\n");
        assert!(parse_curves_csv(&curves_csv(&[])).unwrap().is_empty());
    }

    #[test]
    fn csv_round_trip() {
        let curves = vec![
            RejectionCurve::from_counts("ec2st", vec![90, 180], &[1, 7], 9),
            RejectionCurve::from_counts("a,b", vec![5], &[2], 3),
        ];
        assert_eq!(parse_curves_csv(&curves_csv(&curves)).unwrap(), curves);
    }

    #[test]
    fn bad_header_is_rejected() {
        assert!(parse_curves_csv("a,b\n").is_err());
    }
}
