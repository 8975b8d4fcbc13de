//! Problem generators, imputation baselines, and the multi-trial runner.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::Error;
use crate::linalg::{
    least_squares, nullspace_residual, DenseMatrix, DenseVector, CONSISTENCY_RTOL,
};
use crate::masking::{MaskMatrix, MaskMode, MaskModel};
use crate::solver::{run, run_classical_sgd, ProjectionDomain, Schedule};
use crate::Result;

/// A linear system `Ax = b` plus (optionally) its least-squares reference
/// solution and residual.
#[derive(Debug, Clone)]
pub struct Problem {
    a: DenseMatrix,
    b: DenseVector,
    x_star: Option<DenseVector>,
    residual: Option<DenseVector>,
    consistent: bool,
}

impl Problem {
    /// Assembles a problem from parts, checking dimensions and (when a
    /// reference is supplied) that `A·x_star - b = residual` to 1e-8.
    /// The reference solution and residual come together or not at all.
    pub fn from_parts(
        a: DenseMatrix,
        b: DenseVector,
        x_star: Option<DenseVector>,
        residual: Option<DenseVector>,
    ) -> Result<Self> {
        if b.len() != a.rows() {
            return Err(Error::DimensionMismatch {
                context: "right-hand side",
                expected: a.rows(),
                got: b.len(),
            });
        }
        let consistent = match (&x_star, &residual) {
            (None, None) => false,
            (Some(x), Some(r)) => {
                if x.len() != a.cols() {
                    return Err(Error::DimensionMismatch {
                        context: "reference solution",
                        expected: a.cols(),
                        got: x.len(),
                    });
                }
                if r.len() != a.rows() {
                    return Err(Error::DimensionMismatch {
                        context: "reference residual",
                        expected: a.rows(),
                        got: r.len(),
                    });
                }
                let ax = a.matvec(x.as_slice());
                let drift: f64 = ax
                    .iter()
                    .zip(b.iter())
                    .zip(r.iter())
                    .map(|((axi, bi), ri)| (axi - bi - ri).powi(2))
                    .sum::<f64>()
                    .sqrt();
                if drift > 1e-8 * (1.0 + b.norm()) {
                    return Err(Error::InvalidParameter(format!(
                        "reference solution does not match: ||A x* - b - residual|| = {drift:e}"
                    )));
                }
                r.norm() <= CONSISTENCY_RTOL * (1.0 + b.norm())
            }
            _ => {
                return Err(Error::InvalidParameter(
                    "reference solution and residual must be supplied together".into(),
                ))
            }
        };
        Ok(Self {
            a,
            b,
            x_star,
            residual,
            consistent,
        })
    }

    /// Problem with the reference obtained by a least-squares solve.
    pub fn solve_reference(a: DenseMatrix, b: DenseVector) -> Result<Self> {
        let sol = least_squares(&a, &b)?;
        Self::from_parts(a, b, Some(sol.x), Some(sol.residual))
    }

    /// Problem carrying no reference solution; [`crate::solver::run`] on it
    /// fails until one is attached.
    pub fn without_reference(a: DenseMatrix, b: DenseVector) -> Result<Self> {
        Self::from_parts(a, b, None, None)
    }

    pub fn a(&self) -> &DenseMatrix {
        &self.a
    }

    pub fn b(&self) -> &DenseVector {
        &self.b
    }

    pub fn x_star(&self) -> Option<&DenseVector> {
        self.x_star.as_ref()
    }

    pub fn residual(&self) -> Option<&DenseVector> {
        self.residual.as_ref()
    }

    /// Whether the reference residual is zero up to tolerance. Meaningful
    /// only when a reference is present; `false` otherwise.
    pub fn consistent(&self) -> bool {
        self.consistent
    }

    pub fn rows(&self) -> usize {
        self.a.rows()
    }

    pub fn cols(&self) -> usize {
        self.a.cols()
    }

    /// The reference solution, or [`Error::MissingSolution`].
    pub fn require_x_star(&self) -> Result<&DenseVector> {
        self.x_star.as_ref().ok_or(Error::MissingSolution)
    }

    /// The reference residual, or [`Error::MissingSolution`].
    pub fn require_residual(&self) -> Result<&DenseVector> {
        self.residual.as_ref().ok_or(Error::MissingSolution)
    }
}

/// One recorded point of a single trial.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TracePoint {
    pub iteration: u64,
    pub sq_error: f64,
}

/// Squared-error trace of one solver run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialTrace {
    /// Seed the run was executed with.
    pub seed: u64,
    /// `(iteration, ||x_k - x*||^2)` at iteration 0, every `record_every`
    /// steps, and the final step; iterations strictly increasing.
    pub checkpoints: Vec<TracePoint>,
    /// Digest of everything that determines the run (data, settings, seed).
    pub config_digest: String,
}

/// One aggregated point across trials.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AggregatePoint {
    pub iteration: u64,
    pub mean_sq_error: f64,
    pub trial_count: u64,
}

/// Mean squared error across aligned trials.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateTrace {
    pub checkpoints: Vec<AggregatePoint>,
}

impl AggregateTrace {
    /// Averages traces with identical checkpoint grids.
    pub fn from_trials(traces: &[TrialTrace]) -> Result<Self> {
        let first = traces.first().ok_or_else(|| {
            Error::InvalidParameter("cannot aggregate zero trial traces".into())
        })?;
        let trial_count = traces.len() as u64;
        let mut checkpoints = Vec::with_capacity(first.checkpoints.len());
        for (idx, point) in first.checkpoints.iter().enumerate() {
            let mut sum = 0.0;
            for trace in traces {
                let other = trace.checkpoints.get(idx).ok_or_else(|| {
                    Error::InvalidParameter("trial traces have mismatched lengths".into())
                })?;
                if other.iteration != point.iteration {
                    return Err(Error::InvalidParameter(
                        "trial traces have misaligned checkpoint iterations".into(),
                    ));
                }
                sum += other.sq_error;
            }
            checkpoints.push(AggregatePoint {
                iteration: point.iteration,
                mean_sq_error: sum / trial_count as f64,
                trial_count,
            });
        }
        Ok(Self { checkpoints })
    }

    /// Mean of `mean_sq_error` over the last 10% of checkpoints (at least
    /// one), the plateau estimate used by the horizon checks.
    pub fn tail_mean(&self) -> f64 {
        let len = self.checkpoints.len();
        let take = (len / 10).max(1);
        let tail = &self.checkpoints[len - take..];
        tail.iter().map(|c| c.mean_sq_error).sum::<f64>() / take as f64
    }

    /// Iteration at which the tail window of [`AggregateTrace::tail_mean`]
    /// begins.
    pub fn tail_start_iteration(&self) -> u64 {
        let len = self.checkpoints.len();
        let take = (len / 10).max(1);
        self.checkpoints[len - take].iteration
    }

    pub fn final_mean_sq_error(&self) -> f64 {
        self.checkpoints
            .last()
            .map(|c| c.mean_sq_error)
            .unwrap_or(f64::NAN)
    }
}

/// Derives the seed for trial `t` from the experiment root seed. XOR keeps
/// earlier trials stable when the trial count grows.
pub fn trial_seed(root_seed: u64, trial_index: u64) -> u64 {
    root_seed ^ trial_index
}

/// Standard-Gaussian `A` (m x n) and planted standard-Gaussian solution:
/// `b = A x*`, so the system is consistent by construction.
pub fn gen_gaussian_consistent(m: usize, n: usize, seed: u64) -> Result<Problem> {
    if m < n {
        return Err(Error::InvalidParameter(format!(
            "generator requires m >= n for a full-rank system, got m={m}, n={n}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = StandardNormal;
    let a = DenseMatrix::from_fn(m, n, |_, _| normal.sample(&mut rng))?;
    let x_star = DenseVector::new((0..n).map(|_| normal.sample(&mut rng)).collect())?;
    let b = DenseVector::new(a.matvec(x_star.as_slice()))?;
    let residual = DenseVector::zeros(m);
    Problem::from_parts(a, b, Some(x_star), Some(residual))
}

/// Consistent Gaussian problem with a controlled least-squares residual:
/// `b = A x* - w` where `w` lies in the nullspace of `Aᵀ` and
/// `||w|| = residual_scale * ||A x*||`. Because `Aᵀw = 0`, the planted `x*`
/// stays the least-squares minimizer and the residual is exactly `w`.
pub fn gen_gaussian_inconsistent(
    m: usize,
    n: usize,
    residual_scale: f64,
    seed: u64,
) -> Result<Problem> {
    if !(residual_scale.is_finite() && residual_scale >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "residual scale must be finite and nonnegative, got {residual_scale}"
        )));
    }
    let base = gen_gaussian_consistent(m, n, seed)?;
    if residual_scale == 0.0 {
        return Ok(base);
    }
    if m == n {
        return Err(Error::InvalidParameter(
            "a square full-rank system has no nonzero nullspace residual; use m > n".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Advance past the generator draws so the seed vector is fresh but the
    // problem stays a pure function of (m, n, seed).
    rng.set_stream(1);
    let normal = StandardNormal;
    let z = DenseVector::new((0..m).map(|_| normal.sample(&mut rng)).collect())?;
    let direction = nullspace_residual(&base.a, &z, 1.0)?;
    let dir_norm = direction.norm();
    if dir_norm <= 1e-12 * (1.0 + z.norm()) {
        return Err(Error::InvalidParameter(
            "nullspace seed vector collapsed; try another seed".into(),
        ));
    }
    let target = residual_scale * base.b.norm();
    let w = DenseVector::new(
        direction
            .iter()
            .map(|d| d * target / dir_norm)
            .collect(),
    )?;
    // b = A x* - w, so residual = A x* - b = w.
    let b = DenseVector::new(base.b.iter().zip(&w).map(|(bi, wi)| bi - wi).collect())?;
    let x_star = base.x_star.expect("consistent generator always plants x*");
    Problem::from_parts(base.a, b, Some(x_star), Some(w))
}

/// Imputation baseline strategies for filling missing entries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImputeStrategy {
    /// Missing entries become 0.
    Zero,
    /// Missing entries become the mean of the observed entries in their row.
    RowMean,
    /// Missing entries become the mean of the observed entries in their column.
    ColMean,
}

impl ImputeStrategy {
    pub const ALL: [ImputeStrategy; 3] = [
        ImputeStrategy::Zero,
        ImputeStrategy::RowMean,
        ImputeStrategy::ColMean,
    ];

    /// Stable lowercase name used in filenames and reports.
    pub fn name(&self) -> &'static str {
        match self {
            ImputeStrategy::Zero => "zero",
            ImputeStrategy::RowMean => "rowmean",
            ImputeStrategy::ColMean => "colmean",
        }
    }
}

/// Result of imputing a masked matrix: the filled matrix plus the number of
/// rows/columns that had no observed entry and fell back to 0.
#[derive(Debug, Clone)]
pub struct ImputedMatrix {
    pub matrix: DenseMatrix,
    pub fallback_count: usize,
}

/// Fills the missing entries of `a` (per `mask`) according to `strategy`.
/// Means are taken over observed entries only; a fully missing row (RowMean)
/// or column (ColMean) imputes 0 and bumps `fallback_count`.
pub fn impute(a: &DenseMatrix, mask: &MaskMatrix, strategy: ImputeStrategy) -> Result<ImputedMatrix> {
    if mask.rows() != a.rows() || mask.cols() != a.cols() {
        return Err(Error::DimensionMismatch {
            context: "imputation mask shape",
            expected: a.rows() * a.cols(),
            got: mask.rows() * mask.cols(),
        });
    }
    let (m, n) = (a.rows(), a.cols());
    let mut fallback_count = 0usize;
    let fill: Vec<f64> = match strategy {
        ImputeStrategy::Zero => vec![0.0; m.max(n)],
        ImputeStrategy::RowMean => (0..m)
            .map(|i| {
                let kept = mask.row(i);
                let count = kept.iter().filter(|k| **k).count();
                if count == 0 {
                    fallback_count += 1;
                    return 0.0;
                }
                let sum: f64 = a
                    .row(i)
                    .iter()
                    .zip(kept)
                    .filter(|(_, k)| **k)
                    .map(|(v, _)| v)
                    .sum();
                sum / count as f64
            })
            .collect(),
        ImputeStrategy::ColMean => (0..n)
            .map(|j| {
                let mut sum = 0.0;
                let mut count = 0usize;
                for i in 0..m {
                    if mask.row(i)[j] {
                        sum += a.get(i, j);
                        count += 1;
                    }
                }
                if count == 0 {
                    fallback_count += 1;
                    0.0
                } else {
                    sum / count as f64
                }
            })
            .collect(),
    };
    let matrix = DenseMatrix::from_fn(m, n, |i, j| {
        if mask.row(i)[j] {
            a.get(i, j)
        } else {
            match strategy {
                ImputeStrategy::Zero => 0.0,
                ImputeStrategy::RowMean => fill[i],
                ImputeStrategy::ColMean => fill[j],
            }
        }
    })?;
    Ok(ImputedMatrix {
        matrix,
        fallback_count,
    })
}

/// Runs `trial_count` independent solver trials (seeds derived via
/// [`trial_seed`]) in parallel and averages their traces.
#[allow(clippy::too_many_arguments)]
pub fn run_trials(
    problem: &Problem,
    model: &MaskModel,
    schedule: &Schedule,
    domain: &ProjectionDomain,
    iterations: u64,
    trial_count: u64,
    root_seed: u64,
    record_every: u64,
) -> Result<AggregateTrace> {
    if trial_count < 1 {
        return Err(Error::InvalidParameter(
            "trial_count must be at least 1".into(),
        ));
    }
    let x0 = DenseVector::zeros(problem.cols());
    let traces: Result<Vec<TrialTrace>> = (0..trial_count)
        .into_par_iter()
        .map(|t| {
            run(
                problem,
                model,
                schedule,
                domain,
                &x0,
                iterations,
                trial_seed(root_seed, t),
                record_every,
            )
        })
        .collect();
    AggregateTrace::from_trials(&traces?)
}

/// Output of [`compare_imputation`]: the masked-gradient trace plus one
/// classical-SGD trace per imputation strategy, all against the true
/// reference solution.
#[derive(Debug, Clone)]
pub struct ImputationComparison {
    pub msgd: AggregateTrace,
    pub zero: AggregateTrace,
    pub row_mean: AggregateTrace,
    pub col_mean: AggregateTrace,
    /// Total empty-row/column fallbacks across trials and strategies.
    pub fallback_count: usize,
}

impl ImputationComparison {
    pub fn strategy(&self, strategy: ImputeStrategy) -> &AggregateTrace {
        match strategy {
            ImputeStrategy::Zero => &self.zero,
            ImputeStrategy::RowMean => &self.row_mean,
            ImputeStrategy::ColMean => &self.col_mean,
        }
    }
}

/// Head-to-head protocol: per trial, freeze one entry mask, impute the masked
/// matrix three ways, then run classical SGD on each imputed matrix and the
/// masked-gradient method on the frozen masked stream, all sharing one row
/// sequence. Errors are measured against the true problem's reference.
#[allow(clippy::too_many_arguments)]
pub fn compare_imputation(
    problem: &Problem,
    p: f64,
    schedule: &Schedule,
    domain: &ProjectionDomain,
    iterations: u64,
    trial_count: u64,
    root_seed: u64,
    record_every: u64,
) -> Result<ImputationComparison> {
    if trial_count < 1 {
        return Err(Error::InvalidParameter(
            "trial_count must be at least 1".into(),
        ));
    }
    let model = MaskModel::new(p, MaskMode::FrozenMatrixMask)?;
    let reference = problem.require_x_star()?.clone();
    let x0 = DenseVector::zeros(problem.cols());

    struct TrialOutput {
        msgd: TrialTrace,
        imputed: [TrialTrace; 3],
        fallbacks: usize,
    }

    let outputs: Result<Vec<TrialOutput>> = (0..trial_count)
        .into_par_iter()
        .map(|t| {
            let seed = trial_seed(root_seed, t);
            // Reconstruct the exact frozen mask run() will draw for this seed
            // so the imputation baselines see the same missing entries.
            let mut mask_rng = ChaCha8Rng::seed_from_u64(seed);
            mask_rng.set_stream(crate::solver::MASK_STREAM);
            let mask = MaskMatrix::sample(problem.rows(), problem.cols(), p, &mut mask_rng)?;
            let msgd_trace = run(
                problem,
                &model,
                schedule,
                domain,
                &x0,
                iterations,
                seed,
                record_every,
            )?;
            let mut fallbacks = 0usize;
            let mut imputed_traces = Vec::with_capacity(3);
            for strategy in ImputeStrategy::ALL {
                let imputed = impute(problem.a(), &mask, strategy)?;
                fallbacks += imputed.fallback_count;
                imputed_traces.push(run_classical_sgd(
                    &imputed.matrix,
                    problem.b(),
                    &reference,
                    schedule,
                    domain,
                    &x0,
                    iterations,
                    seed,
                    record_every,
                )?);
            }
            let [zero, row_mean, col_mean]: [TrialTrace; 3] =
                imputed_traces.try_into().expect("exactly three strategies");
            Ok(TrialOutput {
                msgd: msgd_trace,
                imputed: [zero, row_mean, col_mean],
                fallbacks,
            })
        })
        .collect();
    let outputs = outputs?;

    let collect = |pick: &dyn Fn(&TrialOutput) -> &TrialTrace| -> Result<AggregateTrace> {
        let traces: Vec<TrialTrace> = outputs.iter().map(|o| pick(o).clone()).collect();
        AggregateTrace::from_trials(&traces)
    };
    Ok(ImputationComparison {
        msgd: collect(&|o| &o.msgd)?,
        zero: collect(&|o| &o.imputed[0])?,
        row_mean: collect(&|o| &o.imputed[1])?,
        col_mean: collect(&|o| &o.imputed[2])?,
        fallback_count: outputs.iter().map(|o| o.fallbacks).sum(),
    })
}
