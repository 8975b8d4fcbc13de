//! Dense row-major linear algebra.
//!
//! The experiments run at desk scale (at most a few thousand rows and a few
//! hundred columns), so this module carries its own normal-equation solve and
//! Jacobi eigenvalue iteration instead of pulling in a factorization library.

use crate::error::Error;
use crate::Result;

/// Relative tolerance deciding whether a least-squares residual counts as
/// zero: a system is consistent when `||Ax - b|| <= 1e-8 * (1 + ||b||)`.
pub const CONSISTENCY_RTOL: f64 = 1e-8;

const MAX_JACOBI_SWEEPS: usize = 64;

/// Row-major dense matrix with finite entries.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    /// Builds a matrix from row-major data; every entry must be finite and
    /// `data.len()` must equal `rows * cols`.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidParameter(format!(
                "matrix dimensions must be positive, got {rows}x{cols}"
            )));
        }
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                context: "row-major matrix data",
                expected: rows * cols,
                got: data.len(),
            });
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite {
                context: "matrix entry",
            });
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from equal-length rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let m = rows.len();
        let n = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(m * n);
        for row in rows {
            if row.len() != n {
                return Err(Error::DimensionMismatch {
                    context: "matrix row",
                    expected: n,
                    got: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Self::new(m, n, data)
    }

    /// Builds a matrix entry by entry from `f(row, col)`.
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self::new(rows, cols, data)
    }

    /// The `n x n` identity.
    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.0 })
            .expect("identity dimensions are positive and entries finite")
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Row `i` as a slice. Panics if `i` is out of range; use
    /// [`DenseMatrix::row_norm_sq`] for a checked per-row query.
    pub fn row(&self, i: usize) -> &[f64] {
        assert!(i < self.rows, "row index {i} out of range ({} rows)", self.rows);
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        assert!(i < self.rows && j < self.cols);
        self.data[i * self.cols + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// Squared Euclidean norm of row `i`.
    pub fn row_norm_sq(&self, i: usize) -> Result<f64> {
        if i >= self.rows {
            return Err(Error::RowIndexOutOfRange {
                index: i,
                rows: self.rows,
            });
        }
        Ok(self.row(i).iter().map(|v| v * v).sum())
    }

    /// Largest squared row norm, `max_i ||A_i||^2`.
    pub fn max_row_norm_sq(&self) -> f64 {
        (0..self.rows)
            .map(|i| self.row(i).iter().map(|v| v * v).sum())
            .fold(0.0, f64::max)
    }

    /// `A x` for a slice of length `cols`.
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols, "matvec operand length");
        (0..self.rows).map(|i| dot(self.row(i), x)).collect()
    }

    /// `Aᵀ y` for a slice of length `rows`.
    pub fn transpose_matvec(&self, y: &[f64]) -> Vec<f64> {
        assert_eq!(y.len(), self.rows, "transpose_matvec operand length");
        let mut out = vec![0.0; self.cols];
        for (i, &yi) in y.iter().enumerate() {
            for (o, aij) in out.iter_mut().zip(self.row(i)) {
                *o += aij * yi;
            }
        }
        out
    }

    /// The symmetric `n x n` Gram matrix `AᵀA`.
    pub fn transpose_times_self(&self) -> DenseMatrix {
        let n = self.cols;
        let mut data = vec![0.0; n * n];
        for i in 0..self.rows {
            let row = self.row(i);
            for j in 0..n {
                let aij = row[j];
                if aij == 0.0 {
                    continue;
                }
                for k in j..n {
                    data[j * n + k] += aij * row[k];
                }
            }
        }
        for j in 0..n {
            for k in j + 1..n {
                data[k * n + j] = data[j * n + k];
            }
        }
        DenseMatrix {
            rows: n,
            cols: n,
            data,
        }
    }
}

/// Dense vector with finite entries.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseVector {
    data: Vec<f64>,
}

impl DenseVector {
    /// Wraps a buffer, rejecting NaN and infinities.
    pub fn new(data: Vec<f64>) -> Result<Self> {
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite {
                context: "vector entry",
            });
        }
        Ok(Self { data })
    }

    pub fn zeros(n: usize) -> Self {
        Self { data: vec![0.0; n] }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.data.iter()
    }

    pub fn norm_sq(&self) -> f64 {
        dot(&self.data, &self.data)
    }

    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }
}

impl std::ops::Index<usize> for DenseVector {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        &self.data[i]
    }
}

impl<'a> IntoIterator for &'a DenseVector {
    type Item = &'a f64;
    type IntoIter = std::slice::Iter<'a, f64>;

    fn into_iter(self) -> Self::IntoIter {
        self.data.iter()
    }
}

/// Least-squares solve result.
#[derive(Debug, Clone)]
pub struct LsqSolution {
    /// Minimizer of `||Ax - b||`.
    pub x: DenseVector,
    /// `A x - b` at the minimizer.
    pub residual: DenseVector,
    /// Whether the residual is zero up to [`CONSISTENCY_RTOL`].
    pub consistent: bool,
}

/// Dot product; the solver relies on every code path using this one routine
/// so that mathematically identical updates stay bitwise identical.
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm_sq(v: &[f64]) -> f64 {
    dot(v, v)
}

/// Squared distance `||x - y||^2`.
pub(crate) fn dist_sq(x: &[f64], y: &[f64]) -> f64 {
    debug_assert_eq!(x.len(), y.len());
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// Smallest eigenvalue of `AᵀA`: the squared smallest singular value of `A`
/// over its column space. `tol` is the relative off-diagonal mass at which
/// the cyclic Jacobi iteration stops.
pub fn sigma_min_sq(a: &DenseMatrix, tol: f64) -> Result<f64> {
    if !(tol.is_finite() && tol > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "eigenvalue tolerance must be positive and finite, got {tol}"
        )));
    }
    let gram = a.transpose_times_self();
    let eigs = symmetric_eigenvalues(gram, tol, MAX_JACOBI_SWEEPS)?;
    // Rounding can push a zero eigenvalue of the PSD Gram matrix slightly
    // negative; clamp since a squared singular value cannot be.
    Ok(eigs.into_iter().fold(f64::INFINITY, f64::min).max(0.0))
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, in
/// unspecified order. Exposed to tests so the sweep cap can be exercised.
pub(crate) fn symmetric_eigenvalues(
    mut s: DenseMatrix,
    tol: f64,
    max_sweeps: usize,
) -> Result<Vec<f64>> {
    assert_eq!(s.rows, s.cols, "eigenvalue input must be square");
    let n = s.rows;
    if n == 1 {
        return Ok(vec![s.data[0]]);
    }
    let scale = norm_sq(&s.data).sqrt().max(f64::MIN_POSITIVE);
    for _ in 0..max_sweeps {
        if off_diagonal_norm(&s) <= tol * scale {
            return Ok(diagonal(&s));
        }
        for p in 0..n - 1 {
            for q in p + 1..n {
                jacobi_rotate(&mut s, p, q);
            }
        }
    }
    let off = off_diagonal_norm(&s);
    if off <= tol * scale {
        Ok(diagonal(&s))
    } else {
        Err(Error::EigenNoConvergence {
            tolerance: tol,
            sweeps: max_sweeps,
            off_diagonal: off,
        })
    }
}

fn diagonal(s: &DenseMatrix) -> Vec<f64> {
    (0..s.rows).map(|i| s.get(i, i)).collect()
}

fn off_diagonal_norm(s: &DenseMatrix) -> f64 {
    let n = s.rows;
    let mut sum = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let v = s.get(i, j);
                sum += v * v;
            }
        }
    }
    sum.sqrt()
}

/// One symmetric Jacobi rotation zeroing `s[p][q]` (applied as `JᵀSJ`).
fn jacobi_rotate(s: &mut DenseMatrix, p: usize, q: usize) {
    let n = s.rows;
    let spq = s.data[p * n + q];
    if spq == 0.0 {
        return;
    }
    let theta = (s.data[q * n + q] - s.data[p * n + p]) / (2.0 * spq);
    // Guard theta^2 overflow: for huge |theta| the exact t collapses to 1/(2 theta).
    let t = if theta.abs() > 1e154 {
        0.5 / theta
    } else {
        theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
    };
    let c = 1.0 / (t * t + 1.0).sqrt();
    let sn = t * c;
    for k in 0..n {
        let skp = s.data[k * n + p];
        let skq = s.data[k * n + q];
        s.data[k * n + p] = c * skp - sn * skq;
        s.data[k * n + q] = sn * skp + c * skq;
    }
    for k in 0..n {
        let spk = s.data[p * n + k];
        let sqk = s.data[q * n + k];
        s.data[p * n + k] = c * spk - sn * sqk;
        s.data[q * n + k] = sn * spk + c * sqk;
    }
}

/// Cholesky factor-and-solve for a symmetric positive definite system.
/// Fails with [`Error::RankDeficient`] when a pivot falls to the noise floor.
fn cholesky_solve(s: &DenseMatrix, rhs: &[f64]) -> Result<Vec<f64>> {
    let n = s.rows;
    assert_eq!(s.cols, n);
    assert_eq!(rhs.len(), n);
    let mut l = s.data.clone();
    let max_diag = (0..n)
        .map(|i| s.get(i, i))
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE);
    let pivot_floor = max_diag * n as f64 * 1e-14;
    for j in 0..n {
        let mut d = l[j * n + j];
        for k in 0..j {
            d -= l[j * n + k] * l[j * n + k];
        }
        if d <= pivot_floor {
            return Err(Error::RankDeficient);
        }
        let dj = d.sqrt();
        l[j * n + j] = dj;
        for i in j + 1..n {
            let mut v = l[i * n + j];
            for k in 0..j {
                v -= l[i * n + k] * l[j * n + k];
            }
            l[i * n + j] = v / dj;
        }
    }
    // Forward solve L y = rhs, then back solve Lᵀ x = y.
    let mut x = rhs.to_vec();
    for i in 0..n {
        for k in 0..i {
            x[i] -= l[i * n + k] * x[k];
        }
        x[i] /= l[i * n + i];
    }
    for i in (0..n).rev() {
        for k in i + 1..n {
            x[i] -= l[k * n + i] * x[k];
        }
        x[i] /= l[i * n + i];
    }
    Ok(x)
}

/// Least squares via the normal equations: minimizes `||Ax - b||` and reports
/// the residual and a consistency flag. Fine at desk scale where `AᵀA` stays
/// well conditioned; rank deficiency is reported as an error.
pub fn least_squares(a: &DenseMatrix, b: &DenseVector) -> Result<LsqSolution> {
    if b.len() != a.rows() {
        return Err(Error::DimensionMismatch {
            context: "right-hand side",
            expected: a.rows(),
            got: b.len(),
        });
    }
    let gram = a.transpose_times_self();
    let rhs = a.transpose_matvec(b.as_slice());
    let x = cholesky_solve(&gram, &rhs)?;
    let ax = a.matvec(&x);
    let residual: Vec<f64> = ax.iter().zip(b).map(|(axi, bi)| axi - bi).collect();
    let consistent = norm_sq(&residual).sqrt() <= CONSISTENCY_RTOL * (1.0 + b.norm());
    Ok(LsqSolution {
        x: DenseVector::new(x)?,
        residual: DenseVector::new(residual)?,
        consistent,
    })
}

/// `scale` times the component of `z` orthogonal to the column space of `A`:
/// `w = scale * (z - A (AᵀA)⁻¹ Aᵀ z)`. Useful for manufacturing right-hand
/// sides with a known least-squares residual, since `Aᵀw = 0` up to rounding.
pub fn nullspace_residual(a: &DenseMatrix, z: &DenseVector, scale: f64) -> Result<DenseVector> {
    if z.len() != a.rows() {
        return Err(Error::DimensionMismatch {
            context: "nullspace seed vector",
            expected: a.rows(),
            got: z.len(),
        });
    }
    if !scale.is_finite() {
        return Err(Error::NonFinite {
            context: "nullspace residual scale",
        });
    }
    let gram = a.transpose_times_self();
    let rhs = a.transpose_matvec(z.as_slice());
    let x = cholesky_solve(&gram, &rhs)?;
    let ax = a.matvec(&x);
    let w: Vec<f64> = z.iter().zip(&ax).map(|(zi, axi)| scale * (zi - axi)).collect();
    DenseVector::new(w)
}
