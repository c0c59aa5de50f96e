//! Plain-text result formats. Numbers are written with 17 significant digits
//! in C-locale scientific notation so that files round-trip bit-exactly.

use std::fmt::Write as _;
use std::io::{self, Write};
use std::path::Path;

/// Formats a float with 17 significant digits.
pub fn fmt_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        format!("{v}")
    }
}

/// Accumulates CSV text row by row.
#[derive(Debug, Clone)]
pub struct CsvTable {
    text: String,
    columns: usize,
}

/// One CSV cell.
pub enum Cell<'a> {
    Num(f64),
    Int(u64),
    Text(&'a str),
}

impl From<f64> for Cell<'_> {
    fn from(v: f64) -> Self {
        Cell::Num(v)
    }
}

impl From<usize> for Cell<'_> {
    fn from(v: usize) -> Self {
        Cell::Int(v as u64)
    }
}

impl From<u64> for Cell<'_> {
    fn from(v: u64) -> Self {
        Cell::Int(v)
    }
}

impl<'a> From<&'a str> for Cell<'a> {
    fn from(v: &'a str) -> Self {
        Cell::Text(v)
    }
}

impl CsvTable {
    pub fn new(header: &[&str]) -> Self {
        let mut text = header.join(",");
        text.push('\n');
        Self {
            text,
            columns: header.len(),
        }
    }

    pub fn row(&mut self, cells: &[Cell<'_>]) {
        debug_assert_eq!(cells.len(), self.columns);
        for (i, cell) in cells.iter().enumerate() {
            if i > 0 {
                self.text.push(',');
            }
            match cell {
                Cell::Num(v) => self.text.push_str(&fmt_f64(*v)),
                Cell::Int(v) => {
                    let _ = write!(self.text, "{v}");
                }
                Cell::Text(s) => self.text.push_str(s),
            }
        }
        self.text.push('\n');
    }

    pub fn as_str(&self) -> &str {
        &self.text
    }

    pub fn write_to(&self, path: &Path) -> io::Result<()> {
        let mut f = io::BufWriter::new(std::fs::File::create(path)?);
        f.write_all(self.text.as_bytes())?;
        f.flush()
    }
}
