use std::path::Path;

use hope_core::format::write_atomic;
use serde_json::Value;

use crate::commands::CliError;

fn parse_numbers(text: &str) -> Option<Vec<f64>> {
    let values: Option<Vec<f64>> = text
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<f64>().ok())
        .collect();
    values.filter(|v| !v.is_empty())
}

fn flatten_json(v: &Value, out: &mut Vec<f64>) -> Result<(), CliError> {
    match v {
        Value::Number(n) => out.push(n.as_f64().expect("json numbers are f64")),
        Value::Array(items) => {
            for item in items {
                flatten_json(item, out)?;
            }
        }
        other => return Err(CliError::Input(format!("expected numbers, found {other}"))),
    }
    Ok(())
}

/// A point given inline (`"0.1,0.2"`) or as a path to a JSON array (nested
/// arrays are flattened row-major) or a CSV / whitespace-separated file.
pub fn parse_point(spec: &str) -> Result<Vec<f64>, CliError> {
    if let Some(v) = parse_numbers(spec) {
        return Ok(v);
    }
    let text = std::fs::read_to_string(spec)
        .map_err(|e| CliError::Input(format!("cannot read point `{spec}`: {e}")))?;
    let trimmed = text.trim_start();
    if trimmed.starts_with('[') {
        let value: Value =
            serde_json::from_str(trimmed).map_err(|e| CliError::Input(format!("{spec}: {e}")))?;
        let mut out = Vec::new();
        flatten_json(&value, &mut out)?;
        return Ok(out);
    }
    parse_numbers(&text).ok_or_else(|| CliError::Input(format!("{spec}: no numbers found")))
}

/// Rows of a CSV file; a first row that is not numeric is taken as a header.
pub fn read_batch(path: &str) -> Result<Vec<Vec<f64>>, CliError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CliError::Input(format!("{path}: {e}")))?;
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| CliError::Input(format!("{path}: {e}")))?;
        let parsed: Result<Vec<f64>, _> = record.iter().map(str::parse::<f64>).collect();
        match parsed {
            Ok(row) => rows.push(row),
            Err(_) if i == 0 => continue,
            Err(e) => return Err(CliError::Input(format!("{path} row {}: {e}", i + 1))),
        }
    }
    Ok(rows)
}

/// Builds a CSV in memory and writes it atomically.
pub fn write_csv<S: AsRef<str>>(
    path: &str,
    header: &[S],
    rows: impl IntoIterator<Item = Vec<String>>,
) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header.iter().map(|h| h.as_ref()))?;
    for row in rows {
        w.write_record(&row)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Input(e.to_string()))?;
    write_atomic(Path::new(path), &bytes)?;
    Ok(())
}

pub fn fmt(v: f64) -> String {
    format!("{v:?}")
}
