use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bin {
    pub left: f64,
    pub right: f64,
    pub frequency: usize,
}

/// Equal-width bins over `[min, max]`; every bin is half-open except the last.
/// When all values coincide they land in the first bin.
pub fn histogram(values: &[f64], bins: usize) -> Result<Vec<Bin>> {
    if bins == 0 {
        return Err(Error::Config("histogram needs at least one bin".into()));
    }
    if values.is_empty() {
        return Err(Error::EmptyData("no values to bin".into()));
    }
    if let Some(v) = values.iter().find(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("histogram input contains {v}")));
    }
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = (max - min) / bins as f64;
    let mut out: Vec<Bin> = (0..bins)
        .map(|i| Bin {
            left: min + width * i as f64,
            right: if i + 1 == bins {
                max
            } else {
                min + width * (i + 1) as f64
            },
            frequency: 0,
        })
        .collect();
    for &v in values {
        let idx = if width > 0.0 {
            (((v - min) / width) as usize).min(bins - 1)
        } else {
            0
        };
        out[idx].frequency += 1;
    }
    Ok(out)
}

fn create(path: &Path) -> Result<fs::File> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::File::create(path).map_err(|e| Error::io(path, e))
}

pub fn write_histogram(bins: &[Bin], path: &Path) -> Result<()> {
    let mut body = String::from("bin_left,bin_right,frequency\n");
    for b in bins {
        body.push_str(&format!("{},{},{}\n", b.left, b.right, b.frequency));
    }
    create(path)?
        .write_all(body.as_bytes())
        .map_err(|e| Error::io(path, e))
}

pub fn export_histogram(values: &[f64], bins: usize, path: &Path) -> Result<Vec<Bin>> {
    let h = histogram(values, bins)?;
    write_histogram(&h, path)?;
    Ok(h)
}

/// Writes equally long columns as CSV; `None` cells are left empty.
pub fn write_columns(path: &Path, headers: &[&str], columns: &[Vec<Option<f64>>]) -> Result<()> {
    if headers.len() != columns.len() {
        return Err(Error::Shape(format!(
            "{} headers for {} columns",
            headers.len(),
            columns.len()
        )));
    }
    let rows = columns.first().map_or(0, Vec::len);
    if columns.iter().any(|c| c.len() != rows) {
        return Err(Error::Shape("columns differ in length".into()));
    }
    let mut body = headers.join(",");
    body.push('\n');
    for r in 0..rows {
        let cells: Vec<String> = columns
            .iter()
            .map(|c| c[r].map(|v| v.to_string()).unwrap_or_default())
            .collect();
        body.push_str(&cells.join(","));
        body.push('\n');
    }
    create(path)?
        .write_all(body.as_bytes())
        .map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub kind: String,
    pub relations: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub variant: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub bins: Option<usize>,
    pub values: usize,
    pub excluded: usize,
}

/// Index of the files emitted by one analysis run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub checkpoint: String,
    pub files: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn write(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self).expect("manifest serializes");
        create(path)?
            .write_all(json.as_bytes())
            .map_err(|e| Error::io(path, e))
    }
}
