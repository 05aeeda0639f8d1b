//! File formats: numeric CSV matrices (rows are observations), single-column
//! eigenvalue/spectrum files, and JSON simulation designs and reports.

use crate::error::{Error, Result};
use crate::sim::{SimulationDesign, SimulationReport};
use crate::spectral::SpectrumVector;
use nalgebra::DMatrix;
use std::io::Write;
use std::path::Path;

/// Formats with 17 significant digits, enough for an exact f64 round trip.
pub fn format_f64(x: f64) -> String {
    format!("{x:.16e}")
}

fn parse_cell(cell: &str, row: usize, col: usize) -> Result<f64> {
    cell.trim().parse::<f64>().map_err(|_| {
        Error::validation(format!(
            "row {}, column {}: '{}' is not a number",
            row + 1,
            col + 1,
            cell.trim()
        ))
    })
}

/// Parses an n-by-p matrix from CSV text: one observation per row, no header
/// unless `skip_header`. Rejects ragged rows and empty input.
pub fn parse_matrix_csv(text: &str, skip_header: bool) -> Result<DMatrix<f64>> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width: Option<usize> = None;
    for (lineno, line) in text.lines().enumerate() {
        if lineno == 0 && skip_header {
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let row: Vec<f64> = line
            .split(',')
            .enumerate()
            .map(|(col, cell)| parse_cell(cell, lineno, col))
            .collect::<Result<_>>()?;
        match width {
            Some(w) if w != row.len() => {
                return Err(Error::validation(format!(
                    "ragged row {}: {} cells, expected {w}",
                    lineno + 1,
                    row.len()
                )));
            }
            None => width = Some(row.len()),
            _ => {}
        }
        rows.push(row);
    }
    let width = width.ok_or_else(|| Error::validation("input contains no data rows"))?;
    let n = rows.len();
    Ok(DMatrix::from_fn(n, width, |i, j| rows[i][j]))
}

/// Reads an n-by-p matrix from a CSV file; see [`parse_matrix_csv`].
pub fn read_matrix_csv(path: &Path, skip_header: bool) -> Result<DMatrix<f64>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::validation(format!("{}: {e}", path.display())))?;
    parse_matrix_csv(&text, skip_header)
        .map_err(|e| Error::validation(format!("{}: {e}", path.display())))
}

pub fn write_matrix_csv(matrix: &DMatrix<f64>, path: &Path) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for i in 0..matrix.nrows() {
        let row: Vec<String> = (0..matrix.ncols())
            .map(|j| format_f64(matrix[(i, j)]))
            .collect();
        writeln!(out, "{}", row.join(","))?;
    }
    Ok(())
}

/// Parses a single-column eigenvalue/spectrum file, sorting ascending.
pub fn parse_spectrum_csv(text: &str, skip_header: bool) -> Result<SpectrumVector> {
    let m = parse_matrix_csv(text, skip_header)?;
    if m.ncols() != 1 {
        return Err(Error::validation(format!(
            "expected a single column, found {}",
            m.ncols()
        )));
    }
    SpectrumVector::from_unsorted(m.column(0).iter().copied().collect())
}

/// Reads a single-column eigenvalue/spectrum file, sorting ascending.
pub fn read_spectrum_csv(path: &Path, skip_header: bool) -> Result<SpectrumVector> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::validation(format!("{}: {e}", path.display())))?;
    parse_spectrum_csv(&text, skip_header)
        .map_err(|e| Error::validation(format!("{}: {e}", path.display())))
}

pub fn write_spectrum_csv(spectrum: &[f64], path: &Path) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for v in spectrum {
        writeln!(out, "{}", format_f64(*v))?;
    }
    Ok(())
}

/// Parses and validates a simulation design from JSON text.
pub fn parse_design_json(text: &str) -> Result<SimulationDesign> {
    let design: SimulationDesign = serde_json::from_str(text).map_err(|e| {
        Error::validation(format!("line {}, column {}: {e}", e.line(), e.column()))
    })?;
    design.validate()?;
    Ok(design)
}

pub fn read_design_json(path: &Path) -> Result<SimulationDesign> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::validation(format!("{}: {e}", path.display())))?;
    parse_design_json(&text).map_err(|e| Error::validation(format!("{}: {e}", path.display())))
}

pub fn write_report_json(report: &SimulationReport, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(report)
        .map_err(|e| Error::validation(format!("report serialization failed: {e}")))?;
    std::fs::write(path, text + "\n")?;
    Ok(())
}

/// Long-format CSV companion of the JSON report: `section,key,value`.
pub fn write_report_csv(report: &SimulationReport, path: &Path) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "section,key,value")?;
    for (k, v) in &report.per_estimator_mse {
        writeln!(out, "mse,{k},{}", format_f64(*v))?;
    }
    for (k, v) in &report.prial {
        writeln!(out, "prial,{k},{}", format_f64(*v))?;
    }
    for (k, v) in &report.pca_rmse {
        writeln!(out, "pca_rmse,{k},{}", format_f64(*v))?;
    }
    writeln!(out, "meta,replications,{}", report.replication_count)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn matrix_round_trip_bitwise() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("m.csv");
        let m = DMatrix::from_fn(5, 3, |i, j| {
            (i as f64 + 1.0) / (j as f64 + 3.0) * std::f64::consts::PI
        });
        write_matrix_csv(&m, &path).unwrap();
        let back = read_matrix_csv(&path, false).unwrap();
        assert_eq!(m, back);
    }

    #[test]
    fn ragged_row_names_line() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("ragged.csv");
        std::fs::write(&path, "1,2,3\n4,5\n").unwrap();
        let err = read_matrix_csv(&path, false).unwrap_err();
        assert!(err.to_string().contains("row 2"), "{err}");
    }

    #[test]
    fn bad_cell_names_location() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "1,2\n3,oops\n").unwrap();
        let err = read_matrix_csv(&path, false).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("row 2") && msg.contains("column 2"), "{msg}");
    }

    #[test]
    fn empty_file_is_error() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("empty.csv");
        std::fs::write(&path, "").unwrap();
        assert!(read_matrix_csv(&path, false).is_err());
    }

    #[test]
    fn header_skipping() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("h.csv");
        std::fs::write(&path, "a,b\n1,2\n").unwrap();
        let m = read_matrix_csv(&path, true).unwrap();
        assert_eq!(m.nrows(), 1);
        assert!(read_matrix_csv(&path, false).is_err());
    }

    #[test]
    fn spectrum_round_trip_and_sorting() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("s.csv");
        write_spectrum_csv(&[3.0, 1.0, 2.0], &path).unwrap();
        let s = read_spectrum_csv(&path, false).unwrap();
        assert_eq!(s.values(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn design_json_error_has_location() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("d.json");
        std::fs::write(&path, "{\n  \"n\": oops\n}").unwrap();
        let err = read_design_json(&path).unwrap_err();
        assert!(err.to_string().contains("line 2"), "{err}");
    }
}
