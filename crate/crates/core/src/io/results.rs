//! Fixed-schema results CSV.
//!
//! Floats are written with 9 significant digits, plain decimal where the
//! magnitude allows and exponent form otherwise. Missing values are empty.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::FormatError;
use crate::experiments::{LatencyReport, SweepResult};

pub const CSV_COLUMNS: [&str; 17] = [
    "experiment",
    "backend",
    "nt",
    "nr",
    "m",
    "c",
    "l",
    "l_nz",
    "n_batch",
    "snr_db",
    "iterations",
    "seed",
    "mae",
    "latency_s",
    "samples_moved",
    "macs",
    "saturations",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub experiment: String,
    pub backend: String,
    pub nt: usize,
    pub nr: usize,
    pub m: usize,
    pub c: usize,
    pub l: usize,
    pub l_nz: usize,
    pub n_batch: usize,
    pub snr_db: Option<f64>,
    pub iterations: usize,
    pub seed: u64,
    pub mae: Option<f64>,
    pub latency_s: Option<f64>,
    pub samples_moved: Option<u64>,
    pub macs: Option<u64>,
    pub saturations: Option<usize>,
}

impl From<&SweepResult> for CsvRow {
    fn from(r: &SweepResult) -> Self {
        CsvRow {
            experiment: r.experiment.clone(),
            backend: r.backend.name().to_string(),
            nt: r.nt,
            nr: r.nr,
            m: r.m,
            c: r.c,
            l: r.l,
            l_nz: r.l_nz,
            n_batch: r.n_batch,
            snr_db: Some(r.snr_db),
            iterations: r.iterations,
            seed: r.seed,
            mae: Some(r.mae),
            // wall-clock stays out of sweep CSVs so they are reproducible
            latency_s: None,
            samples_moved: Some(r.samples_moved),
            macs: Some(r.macs),
            saturations: Some(r.saturations),
        }
    }
}

/// One row per bench point; `latency_s` is the median and `iterations` the
/// number of timed repetitions.
pub fn latency_rows(report: &LatencyReport) -> Vec<CsvRow> {
    report
        .points
        .iter()
        .map(|p| CsvRow {
            experiment: "latency".into(),
            backend: p.backend.name().to_string(),
            nt: p.nt,
            nr: p.nr,
            m: p.m,
            c: p.c,
            l: p.l,
            l_nz: p.l_nz,
            n_batch: p.n_batch,
            snr_db: None,
            iterations: p.reps,
            seed: p.seed,
            mae: None,
            latency_s: Some(p.median_s),
            samples_moved: Some(p.samples_moved),
            macs: Some(p.macs),
            saturations: Some(p.saturations),
        })
        .collect()
}

/// Render with 9 significant digits.
pub fn format_sig9(x: f64) -> String {
    if x == 0.0 {
        return if x.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    if x.is_nan() {
        return "NaN".into();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let exp = x.abs().log10().floor() as i32;
    if !(-4..9).contains(&exp) {
        let s = format!("{x:.8e}");
        let (mant, e) = s.split_once('e').unwrap();
        return format!("{}e{e}", trim_zeros(mant));
    }
    trim_zeros(&format!("{x:.*}", (8 - exp) as usize)).to_string()
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

fn opt<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map(T::to_string).unwrap_or_default()
}

fn opt_f(v: Option<f64>) -> String {
    v.map(format_sig9).unwrap_or_default()
}

impl CsvRow {
    fn fields(&self) -> [String; 17] {
        [
            self.experiment.clone(),
            self.backend.clone(),
            self.nt.to_string(),
            self.nr.to_string(),
            self.m.to_string(),
            self.c.to_string(),
            self.l.to_string(),
            self.l_nz.to_string(),
            self.n_batch.to_string(),
            opt_f(self.snr_db),
            self.iterations.to_string(),
            self.seed.to_string(),
            opt_f(self.mae),
            opt_f(self.latency_s),
            opt(&self.samples_moved),
            opt(&self.macs),
            opt(&self.saturations),
        ]
    }

    /// Round every float to its rendered precision.
    pub fn canonical(&self) -> Self {
        let r = |v: Option<f64>| v.map(|x| format_sig9(x).parse().unwrap());
        CsvRow {
            snr_db: r(self.snr_db),
            mae: r(self.mae),
            latency_s: r(self.latency_s),
            ..self.clone()
        }
    }
}

pub fn render_rows(rows: &[CsvRow]) -> String {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    w.write_record(CSV_COLUMNS).expect("in-memory write");
    for row in rows {
        w.write_record(row.fields()).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("ascii output")
}

fn schema(line: u64, message: impl Into<String>) -> FormatError {
    FormatError::SchemaMismatch {
        line,
        message: message.into(),
    }
}

pub fn parse_rows(text: &str) -> Result<Vec<CsvRow>, FormatError> {
    let mut rd = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(text.as_bytes());
    let header = rd.headers().map_err(|e| schema(1, e.to_string()))?;
    if header.iter().ne(CSV_COLUMNS) {
        let mut got = String::new();
        for (i, h) in header.iter().enumerate() {
            let _ = write!(got, "{}{h}", if i > 0 { "," } else { "" });
        }
        return Err(schema(1, format!("header {got:?} does not match {}", CSV_COLUMNS.join(","))));
    }
    let mut rows = Vec::new();
    for rec in rd.records() {
        let rec = rec.map_err(|e| schema(e.position().map_or(0, |p| p.line()), e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        let req = |i: usize| -> Result<&str, FormatError> {
            let v = &rec[i];
            if v.is_empty() {
                Err(schema(line, format!("column {} is empty", CSV_COLUMNS[i])))
            } else {
                Ok(v)
            }
        };
        let num = |i: usize| -> Result<u64, FormatError> {
            req(i)?
                .parse()
                .map_err(|_| schema(line, format!("column {}: {:?} is not an integer", CSV_COLUMNS[i], &rec[i])))
        };
        let onum = |i: usize| -> Result<Option<u64>, FormatError> {
            if rec[i].is_empty() {
                Ok(None)
            } else {
                num(i).map(Some)
            }
        };
        let of = |i: usize| -> Result<Option<f64>, FormatError> {
            if rec[i].is_empty() {
                return Ok(None);
            }
            rec[i]
                .parse()
                .map(Some)
                .map_err(|_| schema(line, format!("column {}: {:?} is not a number", CSV_COLUMNS[i], &rec[i])))
        };
        let us = |i: usize| num(i).map(|v| v as usize);
        rows.push(CsvRow {
            experiment: req(0)?.to_string(),
            backend: req(1)?.to_string(),
            nt: us(2)?,
            nr: us(3)?,
            m: us(4)?,
            c: us(5)?,
            l: us(6)?,
            l_nz: us(7)?,
            n_batch: us(8)?,
            snr_db: of(9)?,
            iterations: us(10)?,
            seed: num(11)?,
            mae: of(12)?,
            latency_s: of(13)?,
            samples_moved: onum(14)?,
            macs: onum(15)?,
            saturations: onum(16)?.map(|v| v as usize),
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn row() -> CsvRow {
        CsvRow {
            experiment: "snr_sweep".into(),
            backend: "reference64".into(),
            nt: 16,
            nr: 16,
            m: 2047,
            c: 64,
            l: 64,
            l_nz: 64,
            n_batch: 4,
            snr_db: Some(-10.0),
            iterations: 50,
            seed: 42,
            mae: Some(0.0123456789123),
            latency_s: Some(1.5e-5),
            samples_moved: Some(8444),
            macs: None,
            saturations: Some(0),
        }
    }

    #[test]
    fn sig9_rendering() {
        assert_eq!(format_sig9(30.0), "30");
        assert_eq!(format_sig9(-10.0), "-10");
        assert_eq!(format_sig9(0.0123456789123), "0.0123456789");
        assert_eq!(format_sig9(1.5e-5), "1.5e-5");
        assert_eq!(format_sig9(123456789.4), "123456789");
        assert_eq!(format_sig9(2.0e12), "2e12");
        assert_eq!(format_sig9(f64::INFINITY), "inf");
    }

    #[test]
    fn render_and_parse() {
        let text = render_rows(&[row()]);
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), CSV_COLUMNS.join(","));
        assert_eq!(
            lines.next().unwrap(),
            "snr_sweep,reference64,16,16,2047,64,64,64,4,-10,50,42,0.0123456789,1.5e-5,8444,,0"
        );
        assert_eq!(parse_rows(&text).unwrap(), vec![row().canonical()]);
        assert_eq!(parse_rows(&render_rows(&[])).unwrap(), vec![]);
    }

    #[test]
    fn schema_errors() {
        assert!(matches!(parse_rows("a,b\n1,2\n"), Err(FormatError::SchemaMismatch { line: 1, .. })));
        let text = render_rows(&[row()]).replace(",50,", ",fifty,");
        assert!(matches!(parse_rows(&text), Err(FormatError::SchemaMismatch { line: 2, .. })));
        let short = format!("{}\nx,y,1\n", CSV_COLUMNS.join(","));
        assert!(matches!(parse_rows(&short), Err(FormatError::SchemaMismatch { .. })));
    }

    proptest! {
        #[test]
        fn parse_inverts_render(
            mae in proptest::option::of(any::<f64>().prop_filter("finite", |x| x.is_finite())),
            snr in proptest::option::of(-40.0f64..60.0),
            lat in proptest::option::of(1e-9f64..10.0),
            seed in any::<u64>(),
            macs in proptest::option::of(any::<u64>()),
        ) {
            let r = CsvRow { mae, snr_db: snr, latency_s: lat, seed, macs, ..row() }.canonical();
            let text = render_rows(std::slice::from_ref(&r));
            prop_assert_eq!(parse_rows(&text).unwrap(), vec![r.clone()]);
            prop_assert_eq!(render_rows(&parse_rows(&text).unwrap()), text);
        }
    }
}
