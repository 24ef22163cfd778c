//! Numeric CSV tables with a header row and `#` comments.

use std::fs;
use std::path::Path;

use super::DataError;

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    /// Source line of every row, for diagnostics.
    pub lines: Vec<usize>,
}

pub(crate) fn read_table(path: &Path) -> Result<Table, DataError> {
    let text = fs::read_to_string(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_table(&text, &path.display().to_string())
}

pub(crate) fn parse_table(text: &str, origin: &str) -> Result<Table, DataError> {
    let fmt = |line: usize, msg: String| DataError::Format {
        path: origin.to_string(),
        line,
        msg,
    };
    let mut header: Option<Vec<String>> = None;
    let mut rows = Vec::new();
    let mut lines = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let lineno = i + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        match &header {
            None => {
                if cells[0] != "t" {
                    return Err(fmt(lineno, format!("header must start with `t`, found `{}`", cells[0])));
                }
                if cells.len() < 2 {
                    return Err(fmt(lineno, "need at least two columns".into()));
                }
                header = Some(cells.iter().map(|c| c.to_string()).collect());
            }
            Some(h) => {
                if cells.len() != h.len() {
                    return Err(fmt(lineno, format!("expected {} columns, found {}", h.len(), cells.len())));
                }
                let values = cells
                    .iter()
                    .map(|c| c.parse::<f64>())
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(|e| fmt(lineno, format!("bad number: {e}")))?;
                if let Some(prev) = rows.last().map(|r: &Vec<f64>| r[0]) {
                    if values[0] < prev {
                        return Err(fmt(lineno, format!("time decreases from {prev} to {}", values[0])));
                    }
                }
                rows.push(values);
                lines.push(lineno);
            }
        }
    }
    let header = header.ok_or_else(|| fmt(0, "missing header row".into()))?;
    Ok(Table { header, rows, lines })
}
