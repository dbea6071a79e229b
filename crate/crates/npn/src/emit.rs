//! Tabular output shared by every CLI subcommand: CSV with RFC-4180
//! quoting or JSONL, floats rendered to 9 significant digits.

use crate::error::{NpnError, Result};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

/// One table cell.
#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Int(i64),
    Float(f64),
    Str(String),
}

impl From<i64> for Cell {
    fn from(v: i64) -> Self {
        Cell::Int(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Float(v)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Str(v.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableFormat {
    Csv,
    Jsonl,
}

/// Renders with 9 significant digits, plain decimal notation inside
/// [1e-4, 1e9) and scientific outside it. Non-finite values pass through
/// as Rust's default rendering.
pub fn format_sig9(v: f64) -> String {
    if !v.is_finite() {
        return format!("{v}");
    }
    let a = v.abs();
    if a == 0.0 {
        return "0.00000000".to_string();
    }
    if !(1e-4..1e9).contains(&a) {
        return format!("{v:.8e}");
    }
    let exp = a.log10().floor() as i32;
    let decimals = (8 - exp).max(0) as usize;
    format!("{v:.decimals$}")
}

fn float_to_json(v: f64) -> serde_json::Value {
    format_sig9(v)
        .parse::<f64>()
        .ok()
        .and_then(serde_json::Number::from_f64)
        .map_or(serde_json::Value::Null, serde_json::Value::Number)
}

pub fn emit_table_to(
    w: impl Write,
    columns: &[&str],
    rows: &[Vec<Cell>],
    format: TableFormat,
) -> Result<()> {
    if let Some(bad) = rows.iter().position(|r| r.len() != columns.len()) {
        return Err(NpnError::shape(
            "emit_table",
            format!(
                "row {bad} has {} cells for {} columns",
                rows[bad].len(),
                columns.len()
            ),
        ));
    }
    match format {
        TableFormat::Csv => {
            let mut wtr = csv::Writer::from_writer(w);
            wtr.write_record(columns)?;
            for row in rows {
                wtr.write_record(row.iter().map(|c| match c {
                    Cell::Int(v) => v.to_string(),
                    Cell::Float(v) => format_sig9(*v),
                    Cell::Str(s) => s.clone(),
                }))?;
            }
            wtr.flush()?;
        }
        TableFormat::Jsonl => {
            let mut w = w;
            for row in rows {
                let obj: serde_json::Map<String, serde_json::Value> = columns
                    .iter()
                    .zip(row)
                    .map(|(k, c)| {
                        let v = match c {
                            Cell::Int(v) => serde_json::Value::from(*v),
                            Cell::Float(v) => float_to_json(*v),
                            Cell::Str(s) => serde_json::Value::from(s.as_str()),
                        };
                        (k.to_string(), v)
                    })
                    .collect();
                serde_json::to_writer(&mut w, &obj)?;
                writeln!(w)?;
            }
            w.flush()?;
        }
    }
    Ok(())
}

pub fn emit_table(
    path: &Path,
    columns: &[&str],
    rows: &[Vec<Cell>],
    format: TableFormat,
) -> Result<()> {
    emit_table_to(BufWriter::new(File::create(path)?), columns, rows, format)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sig9_examples() {
        assert_eq!(format_sig9(1.0 / 3.0), "0.333333333");
        assert_eq!(format_sig9(0.0), "0.00000000");
        assert_eq!(format_sig9(-2.5), "-2.50000000");
        assert_eq!(format_sig9(12345.6789), "12345.6789");
        assert_eq!(format_sig9(123456789.0), "123456789");
        assert_eq!(format_sig9(1.23e12), "1.23000000e12");
        assert_eq!(format_sig9(-4.5e-7), "-4.50000000e-7");
        assert_eq!(format_sig9(f64::NAN), "NaN");
    }

    #[test]
    fn sig9_round_trips_within_tolerance() {
        let mut v = 1.733e-8;
        for _ in 0..2000 {
            for s in [v, -v] {
                let back: f64 = format_sig9(s).parse().unwrap();
                let rel = (back - s).abs() / s.abs().max(1e-300);
                assert!(rel < 1e-8, "{s} -> {} -> {back}", format_sig9(s));
            }
            v *= 1.0173;
        }
    }

    #[test]
    fn csv_has_header_and_quotes() {
        let mut buf = Vec::new();
        let rows = vec![
            vec![Cell::Int(1), Cell::Float(1.0 / 3.0), Cell::from("plain")],
            vec![Cell::Int(-2), Cell::Float(0.5), Cell::from("a,\"b\"")],
        ];
        emit_table_to(&mut buf, &["n", "v", "tag"], &rows, TableFormat::Csv).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "n,v,tag\n1,0.333333333,plain\n-2,0.500000000,\"a,\"\"b\"\"\"\n"
        );
    }

    #[test]
    fn empty_table_is_header_only() {
        let mut buf = Vec::new();
        emit_table_to(&mut buf, &["a", "b"], &[], TableFormat::Csv).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "a,b\n");
    }

    #[test]
    fn jsonl_rows_are_objects_with_rounded_numbers() {
        let mut buf = Vec::new();
        let rows = vec![
            vec![Cell::Int(7), Cell::Float(1.0 / 3.0)],
            vec![Cell::Int(8), Cell::Float(f64::INFINITY)],
        ];
        emit_table_to(&mut buf, &["i", "v"], &rows, TableFormat::Jsonl).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        let first: serde_json::Value = serde_json::from_str(lines[0]).unwrap();
        assert_eq!(first["i"], 7);
        assert!((first["v"].as_f64().unwrap() - 1.0 / 3.0).abs() < 1e-9);
        let second: serde_json::Value = serde_json::from_str(lines[1]).unwrap();
        assert!(second["v"].is_null());
    }

    #[test]
    fn mismatched_row_width_is_an_error() {
        let rows = vec![vec![Cell::Int(1)]];
        let err = emit_table_to(Vec::new(), &["a", "b"], &rows, TableFormat::Csv)
            .unwrap_err()
            .to_string();
        assert!(err.contains("1 cells for 2 columns"), "{err}");
    }

    #[test]
    fn csv_written_values_parse_back_within_tolerance() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let vals = [3.14159265358979, -0.000271828182, 6.02214076e23];
        let rows = vec![vals.iter().map(|&v| Cell::Float(v)).collect()];
        emit_table(&path, &["a", "b", "c"], &rows, TableFormat::Csv).unwrap();
        let mut rdr = csv::Reader::from_path(&path).unwrap();
        let rec = rdr.records().next().unwrap().unwrap();
        for (field, &want) in rec.iter().zip(&vals) {
            let got: f64 = field.parse().unwrap();
            assert!((got - want).abs() / want.abs() < 1e-8, "{field} vs {want}");
        }
    }
}
