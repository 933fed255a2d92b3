//! CSV and JSON reports with fixed float formatting and sorted keys.
//!
//! JSON layout: `{"columns": [...], "config": {...}, "records": [{...}], "version": "..."}`.
//! CSV files start with `#` lines carrying the version and the config as JSON,
//! followed by the header and one row per record.

use std::collections::BTreeMap;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::ser::Formatter;

use crate::config::RunConfig;
use crate::CliError;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Field {
    Bool(bool),
    Int(i64),
    Num(f64),
    Text(String),
    Null,
}

impl From<f64> for Field {
    fn from(v: f64) -> Self {
        Field::Num(v)
    }
}
impl From<usize> for Field {
    fn from(v: usize) -> Self {
        Field::Int(v as i64)
    }
}
impl From<bool> for Field {
    fn from(v: bool) -> Self {
        Field::Bool(v)
    }
}
impl From<&str> for Field {
    fn from(v: &str) -> Self {
        Field::Text(v.to_string())
    }
}
impl From<String> for Field {
    fn from(v: String) -> Self {
        Field::Text(v)
    }
}
impl<T: Into<Field>> From<Option<T>> for Field {
    fn from(v: Option<T>) -> Self {
        v.map(Into::into).unwrap_or(Field::Null)
    }
}

pub type Record = BTreeMap<String, Field>;

/// Builds a record from `(key, value)` pairs.
#[macro_export]
macro_rules! record {
    ($($k:expr => $v:expr),* $(,)?) => {{
        let mut r = $crate::report::Record::new();
        $( r.insert($k.to_string(), $crate::report::Field::from($v)); )*
        r
    }};
}

fn fmt_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        v.to_string()
    }
}

impl Field {
    fn csv(&self) -> String {
        match self {
            Field::Bool(b) => b.to_string(),
            Field::Int(i) => i.to_string(),
            Field::Num(v) => fmt_f64(*v),
            Field::Text(s) => s.clone(),
            Field::Null => String::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub columns: Vec<String>,
    pub config: RunConfig,
    pub records: Vec<Record>,
    pub version: String,
}

impl Report {
    pub fn new(config: RunConfig, columns: &[&str], records: Vec<Record>) -> Self {
        Report {
            columns: columns.iter().map(|c| c.to_string()).collect(),
            config,
            records,
            version: VERSION.to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }
}

impl std::str::FromStr for Format {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            _ => Err(format!("unknown format '{s}'")),
        }
    }
}

impl std::fmt::Display for Format {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.extension())
    }
}

struct FixedFloat;

impl Formatter for FixedFloat {
    fn write_f64<W: ?Sized + io::Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        writer.write_all(fmt_f64(value).as_bytes())
    }
}

/// JSON with sorted keys and every float printed with 17 significant digits.
pub fn to_json_string<T: Serialize>(value: &T) -> Result<String, CliError> {
    let v = serde_json::to_value(value).map_err(|e| CliError::Numeric(format!("serialization: {e}")))?;
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, FixedFloat);
    v.serialize(&mut ser).map_err(|e| CliError::Numeric(format!("serialization: {e}")))?;
    out.push(b'\n');
    Ok(String::from_utf8(out).expect("serde_json writes UTF-8"))
}

pub fn render(report: &Report, format: Format) -> Result<String, CliError> {
    match format {
        Format::Json => to_json_string(report),
        Format::Csv => {
            let mut buf = Vec::new();
            buf.extend_from_slice(format!("# version={}\n", report.version).as_bytes());
            buf.extend_from_slice(format!("# config={}", to_json_string(&report.config)?).as_bytes());
            {
                let mut w = csv::Writer::from_writer(&mut buf);
                let io_err = |e: csv::Error| CliError::Numeric(format!("csv: {e}"));
                w.write_record(&report.columns).map_err(io_err)?;
                for r in &report.records {
                    let row: Vec<String> = report
                        .columns
                        .iter()
                        .map(|c| r.get(c).map(Field::csv).unwrap_or_default())
                        .collect();
                    w.write_record(&row).map_err(io_err)?;
                }
                w.flush().map_err(|e| CliError::Io(format!("csv: {e}")))?;
            }
            Ok(String::from_utf8(buf).expect("csv writes UTF-8"))
        }
    }
}

pub fn emit_report(report: &Report, format: Format, path: &Path) -> Result<(), CliError> {
    let text = render(report, format)?;
    std::fs::write(path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use choquard_core::quadrature::QuadratureSpec;

    fn config() -> RunConfig {
        RunConfig {
            command: "constants".into(),
            domain: "ball:1".into(),
            h: 0.05,
            mu: 1.0,
            n: 3,
            output_dir: "out".into(),
            params: Default::default(),
            quadrature: QuadratureSpec::default(),
            seed: 0,
            workers: 1,
        }
    }

    #[test]
    fn floats_carry_seventeen_digits() {
        assert_eq!(fmt_f64(0.1), "1.0000000000000001e-1");
        assert_eq!(fmt_f64(1.0 / 3.0).parse::<f64>().unwrap(), 1.0 / 3.0);
    }

    #[test]
    fn empty_csv_is_header_only() {
        let r = Report::new(config(), &["a", "b"], vec![]);
        let text = render(&r, Format::Csv).unwrap();
        let body: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
        assert_eq!(body, vec!["a,b"]);
    }

    #[test]
    fn json_keys_sorted_and_round_trip() {
        let recs = vec![record! {"zeta" => 1.5, "alpha" => 2usize, "name" => "x,y", "ok" => true}];
        let r = Report::new(config(), &["zeta", "alpha", "name", "ok"], recs);
        let text = render(&r, Format::Json).unwrap();
        let recs = &text[text.find("\"records\"").unwrap()..];
        assert!(recs.find("\"alpha\"").unwrap() < recs.find("\"zeta\"").unwrap());
        assert!(text.find("\"columns\"").unwrap() < text.find("\"version\"").unwrap());
        let back: Report = serde_json::from_str(&text).unwrap();
        assert_eq!(back, r);
        assert_eq!(text, render(&back, Format::Json).unwrap());
    }

    #[test]
    fn csv_quotes_text() {
        let r = Report::new(config(), &["name"], vec![record! {"name" => "a,b"}]);
        assert!(render(&r, Format::Csv).unwrap().ends_with("name\n\"a,b\"\n"));
    }
}
