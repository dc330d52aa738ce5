//! Numeric CSV tables with `#`-prefixed metadata lines.
//!
//! Layout:
//!
//! ```text
//! # key: value
//! # key: value
//! col_a,col_b,...
//! 1.0000000000000000e0,2.5000000000000000e-1,...
//! ```
//!
//! Floats are written with 17 significant digits, which round-trips every
//! `f64` exactly. Integer-valued columns such as `step` are written as
//! integers when the column is declared integral.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Formats a float with 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        "NaN".to_string()
    } else if x.is_infinite() {
        if x > 0.0 { "inf" } else { "-inf" }.to_string()
    } else {
        format!("{x:.16e}")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    /// Ordered `(key, value)` metadata pairs.
    pub meta: Vec<(String, String)>,
    pub columns: Vec<String>,
    /// Columns printed as integers.
    pub integer_columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl Table {
    pub fn new<S: AsRef<str>>(columns: &[S]) -> Self {
        Self {
            meta: Vec::new(),
            columns: columns.iter().map(|c| c.as_ref().to_string()).collect(),
            integer_columns: Vec::new(),
            rows: Vec::new(),
        }
    }

    pub fn with_integer_columns<S: AsRef<str>>(mut self, cols: &[S]) -> Self {
        self.integer_columns = cols.iter().map(|c| c.as_ref().to_string()).collect();
        self
    }

    pub fn meta(&mut self, key: impl Into<String>, value: impl ToString) -> &mut Self {
        let key = key.into();
        assert!(
            !key.contains(':') && !key.contains('\n'),
            "bad metadata key {key:?}"
        );
        let value = value.to_string();
        assert!(!value.contains('\n'), "metadata values are single-line");
        self.meta.push((key, value));
        self
    }

    pub fn meta_value(&self, key: &str) -> Option<&str> {
        self.meta
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn push(&mut self, row: Vec<f64>) {
        assert_eq!(
            row.len(),
            self.columns.len(),
            "row width does not match the header"
        );
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let idx = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[idx]).collect())
    }

    pub fn write_to(&self, out: &mut impl Write) -> Result<()> {
        for (k, v) in &self.meta {
            writeln!(out, "# {k}: {v}")?;
        }
        let int_mask: Vec<bool> = self
            .columns
            .iter()
            .map(|c| self.integer_columns.contains(c))
            .collect();
        let mut w = csv::Writer::from_writer(out);
        w.write_record(&self.columns).map_err(csv_err)?;
        for row in &self.rows {
            let fields = row.iter().zip(&int_mask).map(|(&x, &is_int)| {
                if is_int && x.fract() == 0.0 && x.abs() < 9.0e15 {
                    format!("{}", x as i64)
                } else {
                    fmt_f64(x)
                }
            });
            w.write_record(fields).map_err(csv_err)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        self.write_to(&mut out)?;
        out.flush()?;
        Ok(())
    }

    pub fn read_from(input: impl BufRead) -> Result<Self> {
        let mut meta = Vec::new();
        let mut body = String::new();
        for line in input.lines() {
            let line = line?;
            if let Some(rest) = line.strip_prefix('#') {
                let rest = rest.trim_start();
                let (k, v) = rest
                    .split_once(": ")
                    .or_else(|| rest.split_once(':'))
                    .ok_or_else(|| Error::Csv(format!("metadata line without ':' -> {line:?}")))?;
                meta.push((k.trim().to_string(), v.to_string()));
            } else {
                body.push_str(&line);
                body.push('\n');
            }
        }
        let mut r = csv::ReaderBuilder::new()
            .has_headers(true)
            .from_reader(body.as_bytes());
        let columns: Vec<String> = r
            .headers()
            .map_err(csv_err)?
            .iter()
            .map(String::from)
            .collect();
        if columns.is_empty() || columns.iter().all(|c| c.is_empty()) {
            return Err(Error::Csv("missing column header".into()));
        }
        let mut rows = Vec::new();
        for (n, rec) in r.records().enumerate() {
            let rec = rec.map_err(csv_err)?;
            let row = rec
                .iter()
                .map(|f| {
                    parse_f64(f)
                        .ok_or_else(|| Error::Csv(format!("row {}: cannot parse {f:?}", n + 1)))
                })
                .collect::<Result<Vec<f64>>>()?;
            if row.len() != columns.len() {
                return Err(Error::Csv(format!(
                    "row {} has {} fields, expected {}",
                    n + 1,
                    row.len(),
                    columns.len()
                )));
            }
            rows.push(row);
        }
        Ok(Self {
            meta,
            columns,
            integer_columns: Vec::new(),
            rows,
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}

fn parse_f64(s: &str) -> Option<f64> {
    match s.trim() {
        "inf" => Some(f64::INFINITY),
        "-inf" => Some(f64::NEG_INFINITY),
        t => t.parse().ok(),
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Csv(e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn seventeen_digits() {
        assert_eq!(fmt_f64(0.1), "1.0000000000000001e-1");
        assert_eq!(fmt_f64(-2.0), "-2.0000000000000000e0");
    }

    #[test]
    fn writes_integer_columns_and_metadata() {
        let mut t = Table::new(&["step", "t"]).with_integer_columns(&["step"]);
        t.meta("s", 0.5).meta("note", "a: b");
        t.push(vec![3.0, 0.25]);
        let mut buf = Vec::new();
        t.write_to(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "# s: 0.5\n# note: a: b\nstep,t\n3,2.5000000000000000e-1\n"
        );
        let back = Table::read_from(text.as_bytes()).unwrap();
        assert_eq!(back.meta_value("note"), Some("a: b"));
        assert_eq!(back.column("step").unwrap(), vec![3.0]);
    }

    #[test]
    fn rejects_ragged_rows() {
        let text = "a,b\n1,2\n3\n";
        assert!(Table::read_from(text.as_bytes()).is_err());
    }

    proptest! {
        #[test]
        fn round_trips_bit_exactly(vals in proptest::collection::vec(any::<f64>(), 1..40)) {
            let mut t = Table::new(&["x"]);
            for &v in &vals {
                t.push(vec![v]);
            }
            let mut buf = Vec::new();
            t.write_to(&mut buf).unwrap();
            let back = Table::read_from(buf.as_slice()).unwrap();
            let got = back.column("x").unwrap();
            for (a, b) in vals.iter().zip(&got) {
                prop_assert!(a.to_bits() == b.to_bits() || (a.is_nan() && b.is_nan()));
            }
        }
    }
}
