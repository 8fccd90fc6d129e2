//! Plain-text matrices and grayscale heatmaps.
//!
//! CSV rows are comma-separated; non-finite entries are written as `-inf`,
//! `inf` and `nan`. Finite values use the shortest representation that
//! parses back to the same number.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use ndarray::Array2;

use crate::error::{LabError, Result};
use crate::Scalar;

fn fmt_value<T: Scalar>(v: T) -> String {
    let x = v.as_f64();
    if x == f64::NEG_INFINITY {
        "-inf".into()
    } else if x == f64::INFINITY {
        "inf".into()
    } else if x.is_nan() {
        "nan".into()
    } else {
        format!("{x}")
    }
}

fn parse_value<T: Scalar>(tok: &str) -> Result<T> {
    let x = match tok.trim() {
        "-inf" => f64::NEG_INFINITY,
        "inf" => f64::INFINITY,
        "nan" => f64::NAN,
        t => t.parse::<f64>().map_err(|e| LabError::Format {
            what: "matrix csv".into(),
            detail: format!("{t:?}: {e}"),
        })?,
    };
    Ok(T::of(x))
}

pub fn write_csv<T: Scalar, W: Write>(m: &Array2<T>, mut out: W) -> Result<()> {
    for row in m.rows() {
        let line: Vec<String> = row.iter().map(|&v| fmt_value(v)).collect();
        writeln!(out, "{}", line.join(","))?;
    }
    Ok(())
}

pub fn read_csv<T: Scalar, R: Read>(input: R) -> Result<Array2<T>> {
    let mut rows: Vec<Vec<T>> = Vec::new();
    for line in BufReader::new(input).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        rows.push(line.split(',').map(parse_value).collect::<Result<_>>()?);
    }
    let cols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != cols) {
        return Err(LabError::Format {
            what: "matrix csv".into(),
            detail: "ragged rows".into(),
        });
    }
    let flat: Vec<T> = rows.concat();
    Array2::from_shape_vec((flat.len() / cols.max(1), cols), flat).map_err(|e| LabError::Format {
        what: "matrix csv".into(),
        detail: e.to_string(),
    })
}

pub fn save_csv<T: Scalar>(m: &Array2<T>, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_csv(m, &mut buf)?;
    fs::write(path, buf)?;
    Ok(())
}

pub fn load_csv<T: Scalar>(path: &Path) -> Result<Array2<T>> {
    read_csv(fs::File::open(path)?)
}

/// 8-bit gray levels scaled to the finite min/max of `m`. Non-finite entries
/// and matrices without spread map to black.
pub fn gray_levels<T: Scalar>(m: &Array2<T>) -> Array2<u8> {
    let finite = m.iter().map(|v| v.as_f64()).filter(|x| x.is_finite());
    let (lo, hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x), hi.max(x)));
    m.mapv(|v| {
        let x = v.as_f64();
        if !x.is_finite() || hi <= lo {
            0
        } else {
            ((x - lo) / (hi - lo) * 255.0).round() as u8
        }
    })
}

/// Binary (P5) PGM.
pub fn write_pgm<T: Scalar, W: Write>(m: &Array2<T>, mut out: W) -> Result<()> {
    let g = gray_levels(m);
    write!(out, "P5\n{} {}\n255\n", g.ncols(), g.nrows())?;
    let bytes: Vec<u8> = g.iter().copied().collect();
    out.write_all(&bytes)?;
    Ok(())
}

pub fn save_pgm<T: Scalar>(m: &Array2<T>, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_pgm(m, &mut buf)?;
    fs::write(path, buf)?;
    Ok(())
}
