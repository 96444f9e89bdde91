use std::io::{self, Write};

use clap::ValueEnum;
use serde_json::{Map, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

/// Shortest round-trip representation; scientific notation outside `[1e-5, 1e16)`.
pub fn fmt_num(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.into()
    } else if v == 0.0 || (1e-5..1e16).contains(&v.abs()) {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

/// JSON number, or the string `"inf"`/`"-inf"`/`"nan"` when not finite.
pub fn json_num(v: f64) -> Value {
    serde_json::Number::from_f64(v).map_or_else(|| Value::String(fmt_num(v)), Value::Number)
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Num(f64),
    Int(i64),
    Text(String),
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::Num(v) => fmt_num(*v),
            Cell::Int(v) => v.to_string(),
            Cell::Text(s) => s.clone(),
        }
    }

    fn json(&self) -> Value {
        match self {
            Cell::Num(v) => json_num(*v),
            Cell::Int(v) => Value::from(*v),
            Cell::Text(s) => Value::String(s.clone()),
        }
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Num(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

impl From<String> for Cell {
    fn from(v: String) -> Self {
        Cell::Text(v)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    columns: Vec<String>,
    rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(columns: &[&str]) -> Self {
        Self {
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn write(&self, out: &mut impl Write, format: Format, pretty: bool) -> io::Result<()> {
        match format {
            Format::Csv if pretty => self.write_aligned(out),
            Format::Csv => {
                writeln!(out, "{}", self.columns.join(","))?;
                for row in &self.rows {
                    let cells: Vec<String> = row.iter().map(Cell::render).collect();
                    writeln!(out, "{}", cells.join(","))?;
                }
                Ok(())
            }
            Format::Json => {
                let rows: Vec<Value> = self
                    .rows
                    .iter()
                    .map(|row| {
                        let obj: Map<String, Value> =
                            self.columns.iter().cloned().zip(row.iter().map(Cell::json)).collect();
                        Value::Object(obj)
                    })
                    .collect();
                write_json(out, &Value::Array(rows), pretty)
            }
        }
    }

    fn write_aligned(&self, out: &mut impl Write) -> io::Result<()> {
        let rendered: Vec<Vec<String>> = self.rows.iter().map(|r| r.iter().map(Cell::render).collect()).collect();
        let widths: Vec<usize> = (0..self.columns.len())
            .map(|i| rendered.iter().map(|r| r[i].len()).chain([self.columns[i].len()]).max().unwrap_or(0))
            .collect();
        let line = |cells: &[String]| {
            cells
                .iter()
                .zip(&widths)
                .map(|(c, w)| format!("{c:>w$}"))
                .collect::<Vec<_>>()
                .join("  ")
        };
        writeln!(out, "{}", line(&self.columns))?;
        for r in &rendered {
            writeln!(out, "{}", line(r))?;
        }
        Ok(())
    }
}

/// Writes a record as JSON, or as `field,value` rows for CSV.
pub fn write_record(out: &mut impl Write, record: &Value, format: Format, pretty: bool) -> io::Result<()> {
    match format {
        Format::Json => write_json(out, record, pretty),
        Format::Csv => {
            let mut table = Table::new(&["field", "value"]);
            if let Value::Object(map) = record {
                flatten("", map, &mut table);
            }
            table.write(out, Format::Csv, pretty)
        }
    }
}

fn flatten(prefix: &str, map: &Map<String, Value>, table: &mut Table) {
    for (k, v) in map {
        let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
        match v {
            Value::Object(inner) => flatten(&key, inner, table),
            Value::Array(items) => {
                for (i, item) in items.iter().enumerate() {
                    let key = format!("{key}.{i}");
                    match item {
                        Value::Object(inner) => flatten(&key, inner, table),
                        other => table.push(vec![key.into(), scalar(other)]),
                    }
                }
            }
            other => table.push(vec![key.into(), scalar(other)]),
        }
    }
}

fn scalar(v: &Value) -> Cell {
    match v {
        Value::Number(n) => match n.as_i64() {
            Some(i) => Cell::Int(i),
            None => Cell::Num(n.as_f64().unwrap_or(f64::NAN)),
        },
        Value::String(s) => Cell::Text(s.clone()),
        Value::Null => Cell::Text(String::new()),
        other => Cell::Text(other.to_string()),
    }
}

fn write_json(out: &mut impl Write, v: &Value, pretty: bool) -> io::Result<()> {
    if pretty {
        serde_json::to_writer_pretty(&mut *out, v)?;
    } else {
        serde_json::to_writer(&mut *out, v)?;
    }
    writeln!(out)
}
