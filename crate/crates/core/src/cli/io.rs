use std::fs;
use std::path::Path;

use crate::error::{LpathError, Result};

fn csv_err(path: &Path, e: csv::Error) -> LpathError {
    let offset = e.position().map_or(0, |p| p.byte() as usize);
    LpathError::Format {
        offset,
        message: format!("{}: {e}", path.display()),
    }
}

/// Reads one numeric column from a CSV or plain list. A non-numeric first
/// line is a header; the column named `score` (or `column`, if given) is
/// used, otherwise the last one.
pub fn read_values(path: &Path, column: Option<&str>) -> Result<Vec<f64>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(io) => LpathError::Io(io),
            other => LpathError::InvalidInput(format!("{}: {other:?}", path.display())),
        })?;
    let mut col: Option<usize> = None;
    let mut out = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        if rec.iter().all(str::is_empty) {
            continue;
        }
        let numeric = rec.iter().all(|f| f.parse::<f64>().is_ok());
        if out.is_empty() && col.is_none() && !numeric {
            let want = column.unwrap_or("score");
            col = rec.iter().position(|f| f == want);
            if col.is_none() && column.is_some() {
                return Err(LpathError::InvalidInput(format!("{}: no column {want:?}", path.display())));
            }
            col = col.or(Some(rec.len() - 1));
            continue;
        }
        let j = col.unwrap_or(rec.len() - 1);
        let field = rec.get(j).ok_or_else(|| {
            LpathError::InvalidInput(format!("{}: line {} has no column {j}", path.display(), line + 1))
        })?;
        let v: f64 = field.parse().map_err(|_| {
            LpathError::InvalidInput(format!("{}: line {}: {field:?} is not a number", path.display(), line + 1))
        })?;
        if v.is_nan() {
            return Err(LpathError::InvalidInput(format!("{}: line {} is NaN", path.display(), line + 1)));
        }
        out.push(v);
    }
    if out.is_empty() {
        return Err(LpathError::InsufficientData(format!("{}: no values", path.display())));
    }
    Ok(out)
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, text)?;
    Ok(())
}
