//! CSV tables with `#` metadata comments, written atomically.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::Result;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Default)]
pub struct CsvTable {
    meta: Vec<String>,
    columns: Vec<String>,
    rows: Vec<String>,
}

impl CsvTable {
    pub fn new(columns: &[&str]) -> Self {
        Self { meta: Vec::new(), columns: columns.iter().map(|c| c.to_string()).collect(), rows: Vec::new() }
    }

    /// Adds `# key: value`. Multi-line values get one comment line each.
    pub fn meta(&mut self, key: &str, value: impl std::fmt::Display) -> &mut Self {
        let text = value.to_string();
        let mut lines = text.lines();
        match lines.next() {
            Some(first) => self.meta.push(format!("{key}: {first}")),
            None => self.meta.push(format!("{key}:")),
        }
        for line in lines {
            self.meta.push(format!("  {line}"));
        }
        self
    }

    /// Panics if the arity differs from the header.
    pub fn push_row(&mut self, fields: &[Field]) {
        assert_eq!(fields.len(), self.columns.len(), "row arity");
        let cells: Vec<String> = fields.iter().map(Field::render).collect();
        self.rows.push(cells.join(","));
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for m in &self.meta {
            let _ = writeln!(out, "# {m}");
        }
        let _ = writeln!(out, "{}", self.columns.join(","));
        for r in &self.rows {
            let _ = writeln!(out, "{r}");
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_atomic(path, self.render().as_bytes())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Field {
    Float(f64),
    Int(u64),
    Bool(bool),
}

impl Field {
    fn render(&self) -> String {
        match self {
            Field::Float(x) => format!("{x:e}"),
            Field::Int(n) => n.to_string(),
            Field::Bool(b) => b.to_string(),
        }
    }
}

impl From<f64> for Field {
    fn from(x: f64) -> Self {
        Field::Float(x)
    }
}

impl From<usize> for Field {
    fn from(n: usize) -> Self {
        Field::Int(n as u64)
    }
}

impl From<bool> for Field {
    fn from(b: bool) -> Self {
        Field::Bool(b)
    }
}

/// Write to a sibling temporary file, then rename over the target.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = path.with_file_name(format!(".{name}.{}.tmp", std::process::id()));
    fs::write(&tmp, bytes)?;
    if let Err(e) = fs::rename(&tmp, path) {
        let _ = fs::remove_file(&tmp);
        return Err(e.into());
    }
    Ok(())
}
