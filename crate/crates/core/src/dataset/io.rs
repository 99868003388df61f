//! Dataset file formats.
//!
//! * CSV directory: one `*.csv` file per series, rows are time steps and
//!   columns are components. An empty cell or `NaN` marks a missing value.
//!   Series are ordered by file name.
//! * Packed: magic `MTS1`, then `N`, `T`, `P` as little-endian `u64`, then
//!   `N*T*P` little-endian `f64` values series by series, row-major. NaN marks
//!   a missing value.

use super::Dataset;
use crate::error::{Error, Result};
use crate::scalar::Real;
use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

pub const PACKED_MAGIC: &[u8; 4] = b"MTS1";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataFormat {
    Csv { has_header: bool },
    Packed,
}

pub fn load_dataset<T: Real>(path: &Path, format: DataFormat) -> Result<Dataset<T>> {
    match format {
        DataFormat::Csv { has_header } => load_csv_dir(path, has_header),
        DataFormat::Packed => {
            let file = if path.is_dir() { find_packed(path)? } else { path.to_path_buf() };
            read_packed(&file)
        }
    }
}

fn find_packed(dir: &Path) -> Result<PathBuf> {
    let mut found: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "mts"))
        .collect();
    found.sort();
    match found.len() {
        1 => Ok(found.remove(0)),
        0 => Err(Error::InvalidData(format!("no .mts file in {}", dir.display()))),
        _ => Err(Error::InvalidData(format!("several .mts files in {}", dir.display()))),
    }
}

fn parse_cell<T: Real>(cell: &str) -> Option<Option<T>> {
    let c = cell.trim();
    if c.is_empty() || c.eq_ignore_ascii_case("nan") {
        return Some(None);
    }
    c.parse::<f64>().ok().map(|v| Some(T::lit(v)))
}

/// Reads one series file into row-major values; returns `(values, T, P)`.
pub fn read_csv_series<T: Real>(path: &Path, has_header: bool) -> Result<(Vec<T>, usize, usize)> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(has_header).flexible(true).from_path(path)?;
    let mut values = Vec::new();
    let mut width = None;
    let mut rows = 0;
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        match width {
            None => width = Some(rec.len()),
            Some(w) if w != rec.len() => {
                return Err(Error::DimensionMismatch(format!(
                    "{}: row {} has {} columns, expected {w}",
                    path.display(),
                    r + 1,
                    rec.len()
                )))
            }
            _ => {}
        }
        for (c, cell) in rec.iter().enumerate() {
            let v = parse_cell::<T>(cell).ok_or_else(|| {
                Error::InvalidData(format!(
                    "{}: unreadable cell `{cell}` at row {}, column {}",
                    path.display(),
                    r + 1,
                    c + 1
                ))
            })?;
            values.push(v.unwrap_or_else(T::nan));
        }
        rows += 1;
    }
    let p = width.unwrap_or(0);
    if rows == 0 || p == 0 {
        return Err(Error::InvalidData(format!("{}: empty series file", path.display())));
    }
    Ok((values, rows, p))
}

fn load_csv_dir<T: Real>(dir: &Path, has_header: bool) -> Result<Dataset<T>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")))
        .collect();
    files.sort_by(|a, b| a.file_name().cmp(&b.file_name()));
    if files.is_empty() {
        return Err(Error::InvalidData(format!("no CSV files in {}", dir.display())));
    }
    let mut names = Vec::with_capacity(files.len());
    let mut all = Vec::new();
    let mut shape = None;
    for f in &files {
        let (vals, t, p) = read_csv_series::<T>(f, has_header)?;
        match shape {
            None => shape = Some((t, p)),
            Some(s) if s != (t, p) => {
                return Err(Error::DimensionMismatch(format!(
                    "{} is {t}x{p}, earlier files are {}x{}",
                    f.display(),
                    s.0,
                    s.1
                )))
            }
            _ => {}
        }
        names.push(f.file_stem().unwrap_or_default().to_string_lossy().into_owned());
        all.extend(vals);
    }
    let (t, p) = shape.expect("at least one file");
    Dataset::from_flat(names, t, p, all)
}

fn read_u64(buf: &[u8], at: usize) -> u64 {
    u64::from_le_bytes(buf[at..at + 8].try_into().unwrap())
}

fn read_packed<T: Real>(path: &Path) -> Result<Dataset<T>> {
    let mut buf = Vec::new();
    fs::File::open(path)?.read_to_end(&mut buf)?;
    let bad = |reason: &str| Error::Format { path: path.to_path_buf(), reason: reason.into() };
    if buf.len() < 28 || &buf[..4] != PACKED_MAGIC {
        return Err(bad("missing MTS1 header"));
    }
    let (n, t, p) = (read_u64(&buf, 4) as usize, read_u64(&buf, 12) as usize, read_u64(&buf, 20) as usize);
    let count = n.checked_mul(t).and_then(|x| x.checked_mul(p)).ok_or_else(|| bad("header dimensions overflow"))?;
    if buf.len() != 28 + 8 * count {
        return Err(bad(&format!("expected {} payload bytes, found {}", 8 * count, buf.len() - 28)));
    }
    let values = buf[28..].chunks_exact(8).map(|c| T::lit(f64::from_le_bytes(c.try_into().unwrap()))).collect();
    let names = (0..n).map(|i| format!("series_{i:05}")).collect();
    Dataset::from_flat(names, t, p, values)
}

pub fn write_packed<T: Real>(ds: &Dataset<T>, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    w.write_all(PACKED_MAGIC)?;
    for d in [ds.n_series(), ds.len_time(), ds.dim()] {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    for v in ds.values() {
        w.write_all(&v.as_f64().to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// Writes one CSV per series (`<name>.csv`, header `x0,x1,...`); NaN cells are left empty.
pub fn write_csv_dir<T: Real>(ds: &Dataset<T>, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let header: Vec<String> = (0..ds.dim()).map(|p| format!("x{p}")).collect();
    for (i, name) in ds.names().iter().enumerate() {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_path(dir.join(format!("{name}.csv")))?;
        w.write_record(&header)?;
        for t in 0..ds.len_time() {
            let row: Vec<String> = ds
                .row(i, t)
                .iter()
                .map(|v| if v.is_nan() { String::new() } else { format!("{}", v.as_f64()) })
                .collect();
            w.write_record(&row)?;
        }
        w.flush()?;
    }
    Ok(())
}
