//! File formats shared by every module.
//!
//! # Binary matrix format (`.fsm`)
//!
//! Little-endian, row-major float64:
//!
//! ```text
//! offset  size          field
//! 0       8             magic  b"FSMATRIX"
//! 8       8             rows   (u64 LE)
//! 16      8             cols   (u64 LE)
//! 24      rows*cols*8   payload (f64 LE, row-major)
//! ```
//!
//! # CSV fallback
//!
//! One row per line, comma-separated decimal floats. Floats are written
//! with Rust's shortest-round-trip formatting, so a write/read cycle is
//! lossless.
//!
//! Image dumps use ASCII portable graymap (P2) / pixmap (P3) files.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

pub const MATRIX_MAGIC: &[u8; 8] = b"FSMATRIX";

/// Row-major float64 matrix as read from / written to disk.
#[derive(Debug, Clone, PartialEq)]
pub struct MatrixFile {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl MatrixFile {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::dimension(format!(
                "matrix payload holds {} values, expected {}x{}",
                data.len(),
                rows,
                cols
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|r| self.row(r).to_vec()).collect()
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        if rows.is_empty() {
            return Ok(Self {
                rows: 0,
                cols: 0,
                data: Vec::new(),
            });
        }
        let cols = rows[0].len();
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != cols {
                return Err(Error::dimension(format!(
                    "row {} has {} entries, expected {}",
                    i,
                    row.len(),
                    cols
                )));
            }
            data.extend_from_slice(row);
        }
        Self::new(rows.len(), cols, data)
    }
}

pub fn write_matrix(path: &Path, m: &MatrixFile) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MATRIX_MAGIC)?;
    w.write_all(&(m.rows as u64).to_le_bytes())?;
    w.write_all(&(m.cols as u64).to_le_bytes())?;
    for v in &m.data {
        w.write_all(&v.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_matrix(path: &Path) -> Result<MatrixFile> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MATRIX_MAGIC {
        return Err(Error::parse(format!(
            "{}: bad magic, not a binary matrix file",
            path.display()
        )));
    }
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    let rows = u64::from_le_bytes(buf) as usize;
    r.read_exact(&mut buf)?;
    let cols = u64::from_le_bytes(buf) as usize;
    let mut data = Vec::with_capacity(rows * cols);
    for _ in 0..rows * cols {
        r.read_exact(&mut buf)?;
        data.push(f64::from_le_bytes(buf));
    }
    MatrixFile::new(rows, cols, data)
}

pub fn write_matrix_csv(path: &Path, m: &MatrixFile) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in 0..m.rows {
        let line: Vec<String> = m.row(r).iter().map(|v| format!("{v}")).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_matrix_csv(path: &Path) -> Result<MatrixFile> {
    let r = BufReader::new(File::open(path)?);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let row: std::result::Result<Vec<f64>, _> =
            line.split(',').map(|s| s.trim().parse::<f64>()).collect();
        rows.push(row.map_err(|e| {
            Error::parse(format!("{}:{}: {}", path.display(), lineno + 1, e))
        })?);
    }
    MatrixFile::from_rows(&rows)
}

/// Reads a matrix, dispatching on the `.csv` extension.
pub fn read_matrix_auto(path: &Path) -> Result<MatrixFile> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("csv") => read_matrix_csv(path),
        _ => read_matrix(path),
    }
}

/// ASCII P2 graymap of values in \[0,1\] scaled to 0..255.
pub fn write_pgm(path: &Path, width: usize, height: usize, values: &[f64]) -> Result<()> {
    if values.len() != width * height {
        return Err(Error::dimension("pgm payload size"));
    }
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "P2\n{width} {height}\n255")?;
    for y in 0..height {
        let line: Vec<String> = (0..width)
            .map(|x| {
                let v = (values[y * width + x].clamp(0.0, 1.0) * 255.0).round() as u8;
                v.to_string()
            })
            .collect();
        writeln!(w, "{}", line.join(" "))?;
    }
    w.flush()?;
    Ok(())
}

/// ASCII P3 pixmap of interleaved RGB bytes.
pub fn write_ppm(path: &Path, width: usize, height: usize, rgb: &[u8]) -> Result<()> {
    if rgb.len() != width * height * 3 {
        return Err(Error::dimension("ppm payload size"));
    }
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "P3\n{width} {height}\n255")?;
    for y in 0..height {
        let mut line = String::new();
        for x in 0..width {
            let i = (y * width + x) * 3;
            line.push_str(&format!("{} {} {} ", rgb[i], rgb[i + 1], rgb[i + 2]));
        }
        writeln!(w, "{}", line.trim_end())?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binary_round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.fsm");
        let m = MatrixFile::new(2, 3, vec![1.0, -2.5, 3.25, 0.1, f64::MIN_POSITIVE, 1e300])
            .unwrap();
        write_matrix(&path, &m).unwrap();
        let back = read_matrix(&path).unwrap();
        assert_eq!(m, back);
    }

    #[test]
    fn csv_round_trip_is_lossless() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let m = MatrixFile::new(2, 2, vec![0.1, 1.0 / 3.0, -7.25e-11, 2.0_f64.sqrt()]).unwrap();
        write_matrix_csv(&path, &m).unwrap();
        let back = read_matrix_csv(&path).unwrap();
        for (a, b) in m.data.iter().zip(back.data.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn bad_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.fsm");
        std::fs::write(&path, b"NOTAMTRX________").unwrap();
        assert!(read_matrix(&path).is_err());
    }
}
