//! CSV tables with a leading `#` comment line that documents the columns.
//!
//! Numbers are written with 9 significant digits and a `.` separator,
//! independent of locale. Reading a table back and writing it again yields
//! identical bytes.

use std::io::{Read, Write};

use crate::error::Result;

/// Formats `x` with 9 significant digits, switching to scientific notation
/// outside `1e-4 <= |x| < 1e9`.
pub fn fmt_num(x: f64) -> String {
    if x.is_nan() {
        return "NaN".to_string();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".to_string() } else { "-inf".to_string() };
    }
    if x == 0.0 {
        return "0".to_string();
    }
    let sci = format!("{x:.8e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent in {:e} output");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-4..9).contains(&exp) {
        let decimals = (8 - exp).max(0) as usize;
        trim_zeros(format!("{x:.decimals$}"))
    } else {
        format!("{}e{exp}", trim_zeros(mantissa.to_string()))
    }
}

fn trim_zeros(s: String) -> String {
    if !s.contains('.') {
        return s;
    }
    let t = s.trim_end_matches('0').trim_end_matches('.');
    t.to_string()
}

pub fn parse_num(s: &str) -> Option<f64> {
    match s {
        "NaN" => Some(f64::NAN),
        "inf" => Some(f64::INFINITY),
        "-inf" => Some(f64::NEG_INFINITY),
        _ => s.parse().ok(),
    }
}

/// A CSV table: optional comment, header row and string cells.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    pub comment: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: Into<String>>(comment: impl Into<String>, header: impl IntoIterator<Item = S>) -> Self {
        Self {
            comment: comment.into(),
            header: header.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    /// Numeric cells of a column; non-numeric cells map to `None`.
    pub fn numbers(&self, name: &str) -> Option<Vec<Option<f64>>> {
        let c = self.column(name)?;
        Some(self.rows.iter().map(|r| parse_num(&r[c])).collect())
    }

    pub fn write<W: Write>(&self, mut out: W) -> Result<()> {
        if !self.comment.is_empty() {
            for line in self.comment.lines() {
                writeln!(out, "# {line}")?;
            }
        }
        let mut w = csv::WriterBuilder::new().from_writer(out);
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv output is utf-8")
    }

    pub fn read<R: Read>(mut input: R) -> Result<Self> {
        let mut text = String::new();
        input.read_to_string(&mut text)?;
        let mut comment = Vec::new();
        let mut body_start = 0;
        for line in text.split_inclusive('\n') {
            match line.strip_prefix('#') {
                Some(rest) => {
                    let rest = rest.trim_end_matches(['\n', '\r']);
                    comment.push(rest.strip_prefix(' ').unwrap_or(rest).to_string());
                    body_start += line.len();
                }
                None => break,
            }
        }
        let mut r = csv::ReaderBuilder::new().from_reader(&text.as_bytes()[body_start..]);
        let header = r.headers()?.iter().map(str::to_string).collect();
        let rows = r
            .records()
            .map(|rec| rec.map(|rec| rec.iter().map(str::to_string).collect()))
            .collect::<std::result::Result<Vec<Vec<String>>, _>>()?;
        Ok(Self { comment: comment.join("\n"), header, rows })
    }
}
