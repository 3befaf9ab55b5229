//! Grid files.
//!
//! Text: a header line `W2GRID <rows> <cols>` followed by `rows * cols`
//! whitespace-separated decimals in row-major order.
//!
//! Binary: raw little-endian `f64` values in row-major order, with a JSON
//! sidecar `{"rows": n, "cols": n}` at `<path>.meta.json`. The sidecar may
//! carry extra keys; readers ignore them.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{check_size, normalize_density, DensityGrid, WorkField};

const TEXT_MAGIC: &str = "W2GRID";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GridFormat {
    Text,
    Binary,
}

impl GridFormat {
    /// `.bin` and `.f64` select the binary layout; anything else is text.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("bin") | Some("f64") => GridFormat::Binary,
            _ => GridFormat::Text,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Shape {
    rows: usize,
    cols: usize,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

fn validate_shape(rows: usize, cols: usize) -> Result<usize> {
    if rows != cols {
        return Err(Error::invalid(format!(
            "grid must be square, got {rows}x{cols}"
        )));
    }
    check_size(rows)?;
    Ok(rows)
}

/// Parses the text layout.
pub fn parse_text_grid(text: &str) -> Result<WorkField> {
    let mut tokens = text.split_whitespace();
    if tokens.next() != Some(TEXT_MAGIC) {
        return Err(Error::invalid("missing W2GRID header"));
    }
    let mut dim = || -> Result<usize> {
        tokens
            .next()
            .ok_or_else(|| Error::invalid("truncated W2GRID header"))?
            .parse::<usize>()
            .map_err(|e| Error::invalid(format!("bad grid dimension: {e}")))
    };
    let rows = dim()?;
    let cols = dim()?;
    let n = validate_shape(rows, cols)?;
    let values = tokens
        .map(|t| {
            t.parse::<f64>()
                .map_err(|e| Error::invalid(format!("bad value {t:?}: {e}")))
        })
        .collect::<Result<Vec<_>>>()?;
    WorkField::new(n, values)
}

pub fn format_text_grid(field: &WorkField) -> String {
    let n = field.n();
    let mut out = String::with_capacity(n * n * 24 + 32);
    out.push_str(&format!("{TEXT_MAGIC} {n} {n}\n"));
    for row in field.values().chunks_exact(n) {
        let line: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}

/// Reads a grid, detecting the layout from the leading bytes.
pub fn read_grid(path: &Path) -> Result<WorkField> {
    let bytes = fs::read(path)?;
    if bytes.starts_with(TEXT_MAGIC.as_bytes()) {
        let text = std::str::from_utf8(&bytes)
            .map_err(|e| Error::invalid(format!("grid file is not utf-8: {e}")))?;
        return parse_text_grid(text);
    }
    let meta = fs::read(sidecar_path(path)).map_err(|e| {
        Error::invalid(format!(
            "{} is not a text grid and has no readable sidecar: {e}",
            path.display()
        ))
    })?;
    let shape: Shape = serde_json::from_slice(&meta)?;
    let n = validate_shape(shape.rows, shape.cols)?;
    if bytes.len() != n * n * 8 {
        return Err(Error::invalid(format!(
            "binary grid has {} bytes, expected {}",
            bytes.len(),
            n * n * 8
        )));
    }
    let values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    WorkField::new(n, values)
}

/// Reads a density and normalizes it to unit mass.
pub fn read_density(path: &Path) -> Result<DensityGrid> {
    normalize_density(&DensityGrid::from_field(read_grid(path)?)?)
}

/// Writes a grid; binary output also writes the shape sidecar, merged with `extra_meta` keys.
pub fn write_grid(
    path: &Path,
    field: &WorkField,
    format: GridFormat,
    extra_meta: Option<&serde_json::Value>,
) -> Result<()> {
    let n = field.n();
    match format {
        GridFormat::Text => fs::write(path, format_text_grid(field))?,
        GridFormat::Binary => {
            let mut file = std::io::BufWriter::new(fs::File::create(path)?);
            for v in field.values() {
                file.write_all(&v.to_le_bytes())?;
            }
            file.flush()?;
        }
    }
    if format == GridFormat::Binary || extra_meta.is_some() {
        let mut meta = serde_json::json!({ "rows": n, "cols": n });
        if let (Some(serde_json::Value::Object(extra)), serde_json::Value::Object(m)) =
            (extra_meta, &mut meta)
        {
            for (k, v) in extra {
                m.insert(k.clone(), v.clone());
            }
        }
        fs::write(sidecar_path(path), serde_json::to_string_pretty(&meta)?)?;
    }
    Ok(())
}
