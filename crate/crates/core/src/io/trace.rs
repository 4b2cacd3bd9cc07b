//! CSV trace files, one row per step.
//!
//! Floats are written with 17 significant digits so they re-parse to the
//! same bits. Skipped values are `nan`, singular condition numbers `inf`.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::telemetry::{MatrixMetrics, MetricsRecord};

const MATRIX_PREFIXES: [&str; 3] = ["wq", "wk", "wv"];
const MATRIX_FIELDS: [&str; 5] = ["fro_norm", "nuc_norm", "cond", "grad_norm", "sd_var"];
pub const COLUMNS: usize = 3 + 3 * MATRIX_FIELDS.len() + 3;

pub fn header() -> String {
    let mut cols = vec!["step".to_string(), "loss".into(), "lr".into()];
    for p in MATRIX_PREFIXES {
        for f in MATRIX_FIELDS {
            cols.push(format!("{p}_{f}"));
        }
    }
    cols.extend(["gamma_min".into(), "omega_min".into(), "beta_est".into()]);
    cols.join(",")
}

pub fn format_float(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.into()
    } else {
        format!("{v:.16e}")
    }
}

pub fn parse_float(s: &str) -> Option<f64> {
    match s {
        "nan" => Some(f64::NAN),
        "inf" => Some(f64::INFINITY),
        "-inf" => Some(f64::NEG_INFINITY),
        _ if s.bytes().all(|b| b.is_ascii_digit() || b"+-.eE".contains(&b)) && !s.is_empty() => {
            s.parse().ok()
        }
        _ => None,
    }
}

pub fn format_row(r: &MetricsRecord) -> String {
    let mut cells = vec![r.step.to_string(), format_float(r.loss), format_float(r.lr)];
    for m in &r.matrices {
        for v in [m.fro_norm, m.nuc_norm, m.cond, m.grad_norm, m.sd_var] {
            cells.push(format_float(v));
        }
    }
    for v in [r.gamma_min, r.omega_min, r.beta_est] {
        cells.push(format_float(v));
    }
    cells.join(",")
}

fn parse_row(line: &str, lineno: usize) -> Result<MetricsRecord> {
    let err = |reason: String| Error::Trace { line: lineno, reason };
    let cells: Vec<&str> = line.split(',').collect();
    if cells.len() != COLUMNS {
        return Err(err(format!("{} columns, expected {COLUMNS}", cells.len())));
    }
    let step: u64 = cells[0]
        .parse()
        .map_err(|_| err(format!("bad step {:?}", cells[0])))?;
    let mut vals = Vec::with_capacity(COLUMNS - 1);
    for (k, c) in cells[1..].iter().enumerate() {
        vals.push(parse_float(c).ok_or_else(|| err(format!("column {}: bad number {c:?}", k + 2)))?);
    }
    let matrix = |i: usize| {
        let b = 2 + 5 * i;
        MatrixMetrics {
            fro_norm: vals[b],
            nuc_norm: vals[b + 1],
            cond: vals[b + 2],
            grad_norm: vals[b + 3],
            sd_var: vals[b + 4],
            cos_to_final: f64::NAN,
        }
    };
    Ok(MetricsRecord {
        step,
        loss: vals[0],
        lr: vals[1],
        matrices: [matrix(0), matrix(1), matrix(2)],
        gamma_min: vals[17],
        omega_min: vals[18],
        beta_est: vals[19],
        gh_norm: f64::NAN,
    })
}

/// Parses a whole trace, checking the header and strictly increasing steps.
pub fn parse_trace(text: &str) -> Result<Vec<MetricsRecord>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == header() => {}
        Some(_) => {
            return Err(Error::Trace {
                line: 1,
                reason: "unexpected header".into(),
            })
        }
        None => {
            return Err(Error::Trace {
                line: 1,
                reason: "empty trace".into(),
            })
        }
    }
    let mut out: Vec<MetricsRecord> = Vec::new();
    for (i, line) in lines.enumerate() {
        let lineno = i + 2;
        if line.is_empty() {
            continue;
        }
        let r = parse_row(line, lineno)?;
        if let Some(prev) = out.last() {
            if r.step <= prev.step {
                return Err(Error::Trace {
                    line: lineno,
                    reason: format!("step {} does not follow {}", r.step, prev.step),
                });
            }
        }
        out.push(r);
    }
    Ok(out)
}

pub fn read_trace(path: &Path) -> Result<Vec<MetricsRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_trace(&text)
}

/// Appends rows to a trace file, flushing after each.
pub struct TraceWriter {
    path: PathBuf,
    file: File,
    last_step: Option<u64>,
}

impl TraceWriter {
    /// Creates or truncates `path` and writes the header.
    pub fn create(path: &Path) -> Result<Self> {
        let io = |e| Error::io(path, e);
        let mut file = File::create(path).map_err(io)?;
        writeln!(file, "{}", header()).map_err(io)?;
        file.flush().map_err(io)?;
        Ok(Self {
            path: path.to_owned(),
            file,
            last_step: None,
        })
    }

    /// Opens an existing trace for appending, or creates it.
    pub fn open(path: &Path) -> Result<Self> {
        if !path.exists() || std::fs::metadata(path).map_err(|e| Error::io(path, e))?.len() == 0 {
            return Self::create(path);
        }
        let reader = BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?);
        let mut text = String::new();
        for line in reader.lines() {
            text.push_str(&line.map_err(|e| Error::io(path, e))?);
            text.push('\n');
        }
        let last_step = parse_trace(&text)?.last().map(|r| r.step);
        let file = OpenOptions::new()
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        Ok(Self {
            path: path.to_owned(),
            file,
            last_step,
        })
    }

    /// Appends one row. A step not greater than the last one is rejected
    /// and nothing is written.
    pub fn append(&mut self, record: &MetricsRecord) -> Result<()> {
        if let Some(last) = self.last_step {
            if record.step <= last {
                return Err(Error::invalid(format!(
                    "step {} is not after last written step {last}",
                    record.step
                )));
            }
        }
        let io = |e| Error::io(&self.path, e);
        writeln!(self.file, "{}", format_row(record)).map_err(io)?;
        self.file.flush().map_err(io)?;
        self.last_step = Some(record.step);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(step: u64, loss: f64) -> MetricsRecord {
        let mut m = MatrixMetrics::skipped();
        m.fro_norm = 0.05;
        m.cond = f64::INFINITY;
        MetricsRecord {
            step,
            loss,
            lr: 0.1,
            matrices: [m; 3],
            gamma_min: -0.25,
            omega_min: 1.0 / 3.0,
            beta_est: f64::NAN,
            gh_norm: 1.0,
        }
    }

    #[test]
    fn header_has_fixed_layout() {
        let h = header();
        assert!(h.starts_with("step,loss,lr,wq_fro_norm,wq_nuc_norm,wq_cond,wq_grad_norm,wq_sd_var,wk_"));
        assert!(h.ends_with("wv_sd_var,gamma_min,omega_min,beta_est"));
        assert_eq!(h.split(',').count(), COLUMNS);
    }

    #[test]
    fn floats_round_trip() {
        for v in [0.05, 1.0 / 3.0, -0.0, 5e-324, f64::MAX, 1e-300, f64::MIN_POSITIVE] {
            let back = parse_float(&format_float(v)).unwrap();
            assert_eq!(back.to_bits(), v.to_bits(), "{v}");
        }
        assert!(parse_float(&format_float(f64::NAN)).unwrap().is_nan());
        assert_eq!(parse_float("inf"), Some(f64::INFINITY));
        assert_eq!(parse_float("infinity"), None);
        assert_eq!(parse_float(""), None);
    }

    #[test]
    fn writer_appends_and_rejects_out_of_order() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trace.csv");
        let mut w = TraceWriter::create(&path).unwrap();
        w.append(&record(0, 2.0)).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert!(w.append(&record(0, 1.0)).is_err());
        assert_eq!(std::fs::read_to_string(&path).unwrap(), text);
        w.append(&record(1, 1.5)).unwrap();
        drop(w);

        let mut again = TraceWriter::open(&path).unwrap();
        assert!(again.append(&record(1, 1.0)).is_err());
        again.append(&record(2, 1.0)).unwrap();
        let parsed = read_trace(&path).unwrap();
        assert_eq!(parsed.len(), 3);
        assert_eq!(parsed[0].matrices[0].fro_norm, 0.05);
        assert_eq!(parsed[1].omega_min, 1.0 / 3.0);
        assert!(parsed[2].matrices[2].cond.is_infinite());
    }

    #[test]
    fn malformed_traces_are_rejected() {
        assert!(parse_trace("").is_err());
        assert!(parse_trace("a,b\n").is_err());
        let h = header();
        let row = format_row(&record(3, 1.0));
        assert!(parse_trace(&format!("{h}\n{row}\n{row}\n")).is_err());
        assert!(parse_trace(&format!("{h}\n1,2,3\n")).is_err());
        let bad = row.replacen("1.0000000000000000e0", "one", 1);
        assert!(matches!(parse_trace(&format!("{h}\n{bad}\n")), Err(Error::Trace { line: 2, .. })));
    }
}
