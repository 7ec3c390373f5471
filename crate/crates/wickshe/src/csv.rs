//! Minimal CSV writer: UTF-8, LF, header row, floats at 17 significant digits.

use std::fmt::Write as _;

pub fn float(v: f64) -> String {
    if v == 0.0 {
        // Normalize -0 so that sign-of-zero noise cannot leak into diffs.
        return "0.0000000000000000e0".to_string();
    }
    format!("{v:.16e}")
}

fn field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Table {
    header: Vec<String>,
    body: String,
    rows: usize,
}

pub enum Cell {
    Text(String),
    Float(f64),
    Int(i64),
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Float(v)
    }
}
impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}
impl From<i64> for Cell {
    fn from(v: i64) -> Self {
        Cell::Int(v)
    }
}
impl From<bool> for Cell {
    fn from(v: bool) -> Self {
        Cell::Text(if v { "true".into() } else { "false".into() })
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

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Self { header: header.iter().map(|s| s.to_string()).collect(), body: String::new(), rows: 0 }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        assert_eq!(row.len(), self.header.len(), "row width must match the header");
        let cells: Vec<String> = row
            .into_iter()
            .map(|c| match c {
                Cell::Text(s) => field(&s),
                Cell::Float(v) => float(v),
                Cell::Int(i) => i.to_string(),
            })
            .collect();
        let _ = writeln!(self.body, "{}", cells.join(","));
        self.rows += 1;
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn render(&self) -> String {
        let head: Vec<String> = self.header.iter().map(|h| field(h)).collect();
        format!("{}\n{}", head.join(","), self.body)
    }
}
