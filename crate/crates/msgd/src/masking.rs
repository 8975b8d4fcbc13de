//! Entrywise Bernoulli masking of matrix rows.
//!
//! Each matrix entry is kept independently with probability `p` and missing
//! otherwise; missing entries are represented as exact `0.0` so masked rows
//! drop into the same dot-product kernels as dense ones. Masks are either
//! redrawn on every row visit or frozen once per matrix entry up front.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::Error;
use crate::linalg::DenseMatrix;
use crate::Result;

/// Exhaustive mask enumeration is capped at `2^20` patterns.
pub const MAX_ENUMERATION_COLS: usize = 20;

/// How masks evolve across row visits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskMode {
    /// A fresh mask is drawn every time a row is visited.
    ResampleEachIteration,
    /// One mask per matrix entry is drawn up front and reused on every visit.
    FrozenMatrixMask,
}

/// Validated keep probability plus mask mode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaskModel {
    p: f64,
    mode: MaskMode,
}

impl MaskModel {
    /// Requires `0 < p <= 1`; `p = 0` would make every update vanish and the
    /// `1/p` reweighting undefined in the limit.
    pub fn new(p: f64, mode: MaskMode) -> Result<Self> {
        if !(p.is_finite() && p > 0.0 && p <= 1.0) {
            return Err(Error::InvalidProbability(p));
        }
        Ok(Self { p, mode })
    }

    pub fn keep_probability(&self) -> f64 {
        self.p
    }

    pub fn mode(&self) -> MaskMode {
        self.mode
    }
}

/// One masked row: `values()[j]` equals the original entry where `kept()[j]`
/// and is exactly `0.0` otherwise.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedRow {
    kept: Vec<bool>,
    values: Vec<f64>,
}

impl MaskedRow {
    /// Applies an explicit keep pattern to a row.
    pub fn from_kept(row: &[f64], kept: Vec<bool>) -> Result<Self> {
        if kept.len() != row.len() {
            return Err(Error::DimensionMismatch {
                context: "mask pattern",
                expected: row.len(),
                got: kept.len(),
            });
        }
        let values = row
            .iter()
            .zip(&kept)
            .map(|(v, k)| if *k { *v } else { 0.0 })
            .collect();
        Ok(Self { kept, values })
    }

    pub fn kept(&self) -> &[bool] {
        &self.kept
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Squared norm of the masked row.
    pub fn norm_sq(&self) -> f64 {
        crate::linalg::norm_sq(&self.values)
    }
}

/// Draws a fresh Bernoulli mask for row `i` of `a` and applies it.
///
/// This is the resample-mode primitive; frozen mode pre-draws a
/// [`MaskMatrix`] and reuses [`MaskMatrix::masked_row`] instead.
pub fn sample_masked_row(
    a: &DenseMatrix,
    i: usize,
    model: &MaskModel,
    rng: &mut ChaCha8Rng,
) -> Result<MaskedRow> {
    if i >= a.rows() {
        return Err(Error::RowIndexOutOfRange {
            index: i,
            rows: a.rows(),
        });
    }
    let p = model.keep_probability();
    let kept: Vec<bool> = (0..a.cols()).map(|_| rng.random::<f64>() < p).collect();
    MaskedRow::from_kept(a.row(i), kept)
}

/// A frozen keep pattern for every entry of an `rows x cols` matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskMatrix {
    rows: usize,
    cols: usize,
    kept: Vec<bool>,
}

impl MaskMatrix {
    /// Wraps explicit row-major keep bits.
    pub fn from_bits(rows: usize, cols: usize, kept: Vec<bool>) -> Result<Self> {
        if kept.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                context: "row-major mask bits",
                expected: rows * cols,
                got: kept.len(),
            });
        }
        Ok(Self { rows, cols, kept })
    }

    /// Draws one Bernoulli(`p`) keep decision per entry.
    pub fn sample(rows: usize, cols: usize, p: f64, rng: &mut ChaCha8Rng) -> Result<Self> {
        if !(p.is_finite() && p > 0.0 && p <= 1.0) {
            return Err(Error::InvalidProbability(p));
        }
        let kept = (0..rows * cols).map(|_| rng.random::<f64>() < p).collect();
        Ok(Self { rows, cols, kept })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[bool] {
        assert!(i < self.rows);
        &self.kept[i * self.cols..(i + 1) * self.cols]
    }

    /// Fraction of kept entries over the whole matrix.
    pub fn keep_fraction(&self) -> f64 {
        if self.kept.is_empty() {
            return 0.0;
        }
        self.kept.iter().filter(|k| **k).count() as f64 / self.kept.len() as f64
    }

    /// Applies the frozen row-`i` pattern to row `i` of `a`.
    pub fn masked_row(&self, a: &DenseMatrix, i: usize) -> Result<MaskedRow> {
        if a.rows() != self.rows || a.cols() != self.cols {
            return Err(Error::DimensionMismatch {
                context: "frozen mask matrix shape",
                expected: self.rows * self.cols,
                got: a.rows() * a.cols(),
            });
        }
        if i >= a.rows() {
            return Err(Error::RowIndexOutOfRange {
                index: i,
                rows: a.rows(),
            });
        }
        MaskedRow::from_kept(a.row(i), self.row(i).to_vec())
    }
}

/// Unified per-iteration mask source for the solver: owns the mask RNG and,
/// in frozen mode, the pre-drawn mask matrix.
#[derive(Debug)]
pub struct RowMasker {
    model: MaskModel,
    frozen: Option<MaskMatrix>,
    rng: ChaCha8Rng,
}

impl RowMasker {
    /// In frozen mode the whole mask matrix is drawn here, once, from `rng`;
    /// resample mode keeps `rng` for per-visit draws.
    pub fn new(model: MaskModel, rows: usize, cols: usize, mut rng: ChaCha8Rng) -> Result<Self> {
        let frozen = match model.mode() {
            MaskMode::FrozenMatrixMask => Some(MaskMatrix::sample(
                rows,
                cols,
                model.keep_probability(),
                &mut rng,
            )?),
            MaskMode::ResampleEachIteration => None,
        };
        Ok(Self { model, frozen, rng })
    }

    pub fn model(&self) -> &MaskModel {
        &self.model
    }

    /// Writes the mask for this visit of row `i` into `kept`, reusing the
    /// buffer. Missing-entry semantics match [`MaskedRow::from_kept`].
    pub fn fill_kept(&mut self, i: usize, cols: usize, kept: &mut Vec<bool>) {
        kept.clear();
        match &self.frozen {
            Some(mask) => kept.extend_from_slice(mask.row(i)),
            None => {
                let p = self.model.keep_probability();
                kept.extend((0..cols).map(|_| self.rng.random::<f64>() < p));
            }
        }
    }

    /// Masked copy of row `i` of `a` for this visit.
    pub fn masked_row(&mut self, a: &DenseMatrix, i: usize) -> Result<MaskedRow> {
        if i >= a.rows() {
            return Err(Error::RowIndexOutOfRange {
                index: i,
                rows: a.rows(),
            });
        }
        let mut kept = Vec::with_capacity(a.cols());
        self.fill_kept(i, a.cols(), &mut kept);
        MaskedRow::from_kept(a.row(i), kept)
    }
}

/// One keep pattern in an exhaustive enumeration.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskPattern {
    kept: Vec<bool>,
}

impl MaskPattern {
    pub fn kept(&self) -> &[bool] {
        &self.kept
    }

    /// Probability of this exact pattern under independent Bernoulli(`p`)
    /// keeps: `p^#kept * (1-p)^#missing`.
    pub fn weight(&self, p: f64) -> f64 {
        self.kept
            .iter()
            .map(|k| if *k { p } else { 1.0 - p })
            .product()
    }

    /// Applies the pattern to a row.
    pub fn apply(&self, row: &[f64]) -> Result<MaskedRow> {
        MaskedRow::from_kept(row, self.kept.clone())
    }
}

/// All `2^n` keep patterns over `n` columns, ordered by the integer whose
/// bit `j` is pattern entry `j` (so the all-missing pattern comes first and
/// the all-kept pattern last). Errors beyond [`MAX_ENUMERATION_COLS`].
pub fn enumerate_masks(n: usize) -> Result<Vec<MaskPattern>> {
    if n > MAX_ENUMERATION_COLS {
        return Err(Error::EnumerationTooLarge {
            n,
            max: MAX_ENUMERATION_COLS,
        });
    }
    let count = 1usize << n;
    let mut patterns = Vec::with_capacity(count);
    for bits in 0..count {
        let kept = (0..n).map(|j| bits >> j & 1 == 1).collect();
        patterns.push(MaskPattern { kept });
    }
    Ok(patterns)
}
