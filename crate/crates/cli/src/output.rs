//! Table rendering: every subcommand produces one rectangular table that
//! can be emitted as CSV or as JSON (`{"rows": [...]}` with one object
//! per row, same column names). The two encodings are value-identical:
//! floats are formatted to 12 significant digits and the JSON numbers are
//! the parse-back of exactly that text.

use std::io::Write;
use std::path::Path;

use serde_json::{json, Map, Value};

use cloakq_core::desim::SamplePath;

use crate::config::Format;
use crate::error::CliError;

/// One table entry. Counters stay integers; floats go through the
/// 12-significant-digit formatter; `Empty` renders as an empty CSV field
/// and a JSON null.
#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Num(f64),
    Int(u64),
    Text(String),
    Empty,
}

impl From<f64> for Cell {
    fn from(x: f64) -> Self {
        Cell::Num(x)
    }
}

impl From<u64> for Cell {
    fn from(x: u64) -> Self {
        Cell::Int(x)
    }
}

impl From<&str> for Cell {
    fn from(s: &str) -> Self {
        Cell::Text(s.to_string())
    }
}

impl From<String> for Cell {
    fn from(s: String) -> Self {
        Cell::Text(s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(columns: Vec<&'static str>) -> Self {
        Self {
            columns,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn render(&self, format: Format) -> String {
        match format {
            Format::Csv => self.render_csv(),
            Format::Json => self.render_json(),
        }
    }

    fn render_csv(&self) -> String {
        let mut out = String::new();
        out.push_str(&self.columns.join(","));
        out.push('\n');
        for row in &self.rows {
            let fields: Vec<String> = row.iter().map(cell_csv).collect();
            out.push_str(&fields.join(","));
            out.push('\n');
        }
        out
    }

    fn render_json(&self) -> String {
        let rows: Vec<Value> = self
            .rows
            .iter()
            .map(|row| {
                let mut object = Map::new();
                for (name, cell) in self.columns.iter().zip(row) {
                    object.insert(name.to_string(), cell_json(cell));
                }
                Value::Object(object)
            })
            .collect();
        let mut text =
            serde_json::to_string_pretty(&json!({ "rows": rows })).expect("tables serialize");
        text.push('\n');
        text
    }
}

/// 12 significant digits in scientific notation. This is the single
/// formatting path for every float the tool emits, so equal values always
/// produce equal bytes.
pub fn sig12(x: f64) -> String {
    format!("{x:.11e}")
}

fn cell_csv(cell: &Cell) -> String {
    match cell {
        Cell::Num(x) => sig12(*x),
        Cell::Int(i) => i.to_string(),
        Cell::Text(s) => {
            debug_assert!(
                !s.contains([',', '"', '\n']),
                "table text needs no CSV escaping"
            );
            s.clone()
        }
        Cell::Empty => String::new(),
    }
}

fn cell_json(cell: &Cell) -> Value {
    match cell {
        Cell::Num(x) => {
            let rounded: f64 = sig12(*x).parse().expect("sig12 output parses");
            json!(rounded)
        }
        Cell::Int(i) => json!(i),
        Cell::Text(s) => json!(s),
        Cell::Empty => Value::Null,
    }
}

/// Writes the rendered table to `out`, or stdout when no path is given.
pub fn emit(table: &Table, format: Format, out: Option<&Path>) -> Result<(), CliError> {
    let text = table.render(format);
    match out {
        Some(path) => std::fs::write(path, text)
            .map_err(|e| CliError::io(&format!("writing {}", path.display()), e)),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(text.as_bytes())
                .map_err(|e| CliError::io("writing to stdout", e))
        }
    }
}

/// The event-trace schema: `time,event_kind,queue_len_after,query_id`,
/// one line per event, departures expanded to one line per query.
pub fn render_trace(path: &SamplePath<f64>) -> String {
    let mut out = String::from("time,event_kind,queue_len_after,query_id\n");
    for event in &path.events {
        let id = event
            .query
            .map(|q| q.to_string())
            .unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{id}\n",
            sig12(event.t),
            event.kind.label(),
            event.len_after
        ));
    }
    out
}

/// Where the trace goes: next to the report as `<stem>.trace.csv`, or
/// `trace.csv` in the working directory when the report prints to stdout.
pub fn trace_path(out: Option<&Path>) -> std::path::PathBuf {
    match out {
        Some(report) => {
            let stem = report
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "report".to_string());
            report.with_file_name(format!("{stem}.trace.csv"))
        }
        None => std::path::PathBuf::from("trace.csv"),
    }
}
