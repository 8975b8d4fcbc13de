//! CSV and JSON plumbing: matrix/vector files, problem ingestion with an
//! optional reference solve, trace output, and the generator sidecar.
//!
//! Matrix CSV is headerless by default: numeric cells, comma-separated, one
//! row per line. Floats are written with Rust's shortest round-trip
//! formatting, so write-then-read reproduces every value bit for bit.

use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use crate::error::Error;
use crate::experiments::{AggregateTrace, Problem};
use crate::linalg::{DenseMatrix, DenseVector};
use crate::Result;

/// Where the right-hand side comes from when loading a problem.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RhsSpec {
    /// A separate single-column CSV file.
    File(PathBuf),
    /// A 0-based column of the matrix file, split off as `b`; the remaining
    /// columns form `A`.
    Column(usize),
}

/// Reads a rectangular numeric CSV into a matrix. `header` skips line 1.
pub fn read_matrix_csv(path: &Path, header: bool) -> Result<DenseMatrix> {
    let file = fs::File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let reader = BufReader::new(file);
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width = 0usize;
    for (index, line) in reader.lines().enumerate() {
        let line_no = index + 1;
        let line = line.map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if header && index == 0 {
            continue;
        }
        if line.trim().is_empty() {
            return Err(csv_error(path, line_no, "blank line".into()));
        }
        let mut row = Vec::with_capacity(width.max(1));
        for (col, cell) in line.split(',').enumerate() {
            let cell = cell.trim();
            if cell.is_empty() {
                return Err(csv_error(path, line_no, format!("column {}: empty cell", col + 1)));
            }
            let value: f64 = cell.parse().map_err(|_| {
                csv_error(
                    path,
                    line_no,
                    format!("column {}: cannot parse {cell:?} as a number", col + 1),
                )
            })?;
            if !value.is_finite() {
                return Err(csv_error(
                    path,
                    line_no,
                    format!("column {}: non-finite value {cell:?}", col + 1),
                ));
            }
            row.push(value);
        }
        if rows.is_empty() {
            width = row.len();
        } else if row.len() != width {
            return Err(csv_error(
                path,
                line_no,
                format!("expected {} columns, got {}", width, row.len()),
            ));
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(csv_error(path, 1, "file contains no data rows".into()));
    }
    DenseMatrix::from_rows(&rows)
}

/// Reads a single-column CSV into a vector.
pub fn read_vector_csv(path: &Path, header: bool) -> Result<DenseVector> {
    let matrix = read_matrix_csv(path, header)?;
    if matrix.cols() != 1 {
        return Err(csv_error(
            path,
            if header { 2 } else { 1 },
            format!("expected a single column, got {}", matrix.cols()),
        ));
    }
    DenseVector::new(matrix.as_slice().to_vec())
}

/// Writes a matrix as headerless CSV.
pub fn write_matrix_csv(path: &Path, matrix: &DenseMatrix) -> Result<()> {
    let mut out = String::new();
    for i in 0..matrix.rows() {
        let row = matrix.row(i);
        for (j, value) in row.iter().enumerate() {
            if j > 0 {
                out.push(',');
            }
            out.push_str(&format!("{value}"));
        }
        out.push('\n');
    }
    write_file(path, &out)
}

/// Writes a vector as a single-column headerless CSV.
pub fn write_vector_csv(path: &Path, vector: &DenseVector) -> Result<()> {
    let mut out = String::new();
    for value in vector.iter() {
        out.push_str(&format!("{value}\n"));
    }
    write_file(path, &out)
}

/// Writes an aggregate trace with the `iteration,mean_sq_error,trial_count`
/// header.
pub fn write_trace_csv(path: &Path, trace: &AggregateTrace) -> Result<()> {
    let mut out = String::from("iteration,mean_sq_error,trial_count\n");
    for point in &trace.checkpoints {
        out.push_str(&format!(
            "{},{},{}\n",
            point.iteration, point.mean_sq_error, point.trial_count
        ));
    }
    write_file(path, &out)
}

/// Loads a problem from CSV. `header` applies to every file read. With
/// `solve_reference` the least-squares solution and residual are computed
/// (failing on rank deficiency); without it the problem carries no
/// reference and only supports operations that do not need one.
pub fn load_csv_problem(
    matrix_path: &Path,
    rhs: &RhsSpec,
    header: bool,
    solve_reference: bool,
) -> Result<Problem> {
    let full = read_matrix_csv(matrix_path, header)?;
    let (a, b) = match rhs {
        RhsSpec::File(rhs_path) => (full, read_vector_csv(rhs_path, header)?),
        RhsSpec::Column(index) => split_rhs_column(&full, *index)?,
    };
    if b.len() != a.rows() {
        return Err(Error::DimensionMismatch {
            context: "right-hand side",
            expected: a.rows(),
            got: b.len(),
        });
    }
    if solve_reference {
        Problem::solve_reference(a, b)
    } else {
        Problem::without_reference(a, b)
    }
}

/// Splits a 0-based column out of `full` as the right-hand side.
fn split_rhs_column(full: &DenseMatrix, index: usize) -> Result<(DenseMatrix, DenseVector)> {
    if index >= full.cols() {
        return Err(Error::Config(format!(
            "rhs column {index} out of range: the matrix has {} columns (0-based)",
            full.cols()
        )));
    }
    if full.cols() < 2 {
        return Err(Error::Config(
            "matrix must keep at least one column after splitting off the rhs".into(),
        ));
    }
    let mut rows = Vec::with_capacity(full.rows());
    let mut b = Vec::with_capacity(full.rows());
    for i in 0..full.rows() {
        let row = full.row(i);
        b.push(row[index]);
        let mut kept: Vec<f64> = Vec::with_capacity(full.cols() - 1);
        kept.extend_from_slice(&row[..index]);
        kept.extend_from_slice(&row[index + 1..]);
        rows.push(kept);
    }
    Ok((DenseMatrix::from_rows(&rows)?, DenseVector::new(b)?))
}

/// JSON sidecar written next to generated problems: provenance plus the
/// planted solution, enough to reconstruct or validate the CSV pair.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSidecar {
    pub generator: String,
    pub m: usize,
    pub n: usize,
    pub seed: u64,
    pub residual_scale: f64,
    pub consistent: bool,
    pub config_digest: String,
    pub x_star: Vec<f64>,
    pub residual: Vec<f64>,
}

impl ProblemSidecar {
    /// Captures a generated problem's reference data.
    pub fn describe(
        problem: &Problem,
        generator: &str,
        seed: u64,
        residual_scale: f64,
        config_digest: String,
    ) -> Result<Self> {
        Ok(Self {
            generator: generator.to_string(),
            m: problem.rows(),
            n: problem.cols(),
            seed,
            residual_scale,
            consistent: problem.consistent(),
            config_digest,
            x_star: problem.require_x_star()?.as_slice().to_vec(),
            residual: problem.require_residual()?.as_slice().to_vec(),
        })
    }
}

/// Metadata JSON written next to every file-producing run: which command
/// ran, the digest of its resolved configuration, and the files it wrote.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunMeta {
    pub command: String,
    pub config_digest: String,
    pub outputs: Vec<String>,
}

/// Writes run metadata as pretty JSON with a trailing newline.
pub fn write_run_meta_json(path: &Path, meta: &RunMeta) -> Result<()> {
    let mut text = serde_json::to_string_pretty(meta)
        .map_err(|e| Error::InvalidParameter(format!("meta serialization failed: {e}")))?;
    text.push('\n');
    write_file(path, &text)
}

/// Writes the sidecar as pretty JSON with a trailing newline.
pub fn write_sidecar_json(path: &Path, sidecar: &ProblemSidecar) -> Result<()> {
    let mut text = serde_json::to_string_pretty(sidecar)
        .map_err(|e| Error::InvalidParameter(format!("sidecar serialization failed: {e}")))?;
    text.push('\n');
    write_file(path, &text)
}

/// Reads a sidecar back.
pub fn read_sidecar_json(path: &Path) -> Result<ProblemSidecar> {
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn csv_error(path: &Path, line: usize, message: String) -> Error {
    Error::CsvFormat {
        path: path.to_path_buf(),
        line,
        message,
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}
