//! Iterative engines: the masked-gradient method, classical SGD, step-size
//! schedules, and norm-ball projection.
//!
//! The masked update is built so that at `p = 1` it evaluates the exact same
//! floating-point expressions as classical SGD, making the reduction testable
//! to machine precision rather than to a loose tolerance.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::error::Error;
use crate::experiments::{Problem, TracePoint, TrialTrace};
use crate::linalg::{dist_sq, dot, DenseMatrix, DenseVector};
use crate::masking::{MaskModel, MaskedRow, RowMasker};
use crate::Result;

/// RNG stream carrying row-index draws.
pub(crate) const ROW_STREAM: u64 = 1;
/// RNG stream carrying mask draws. Kept separate from [`ROW_STREAM`] so that
/// masking never perturbs the row sequence shared with baselines.
pub(crate) const MASK_STREAM: u64 = 2;

/// Step-size schedule, indexed from iteration `k = 1`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Schedule {
    /// Constant step `alpha`.
    Fixed { alpha: f64 },
    /// `c / (mu_hat * k)`; `c = 1` gives the canonical decaying step for a
    /// strong-convexity estimate `mu_hat`.
    InverseDecay { c: f64, mu_hat: f64 },
    /// `(c / mu_hat) * ratio^floor(k / period)`: a staircase that multiplies
    /// the step by `ratio` every `period` iterations.
    GeometricStaged {
        c: f64,
        mu_hat: f64,
        ratio: f64,
        period: u64,
    },
}

impl Schedule {
    /// Checks the variant's parameter ranges; every step it can ever emit is
    /// strictly positive once this passes.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        match *self {
            Schedule::Fixed { alpha } => {
                if !(alpha.is_finite() && alpha > 0.0) {
                    return bad(format!("fixed step size must be positive, got {alpha}"));
                }
            }
            Schedule::InverseDecay { c, mu_hat } => {
                if !(c.is_finite() && c > 0.0) {
                    return bad(format!("inverse-decay c must be positive, got {c}"));
                }
                if !(mu_hat.is_finite() && mu_hat > 0.0) {
                    return bad(format!("inverse-decay mu_hat must be positive, got {mu_hat}"));
                }
            }
            Schedule::GeometricStaged {
                c,
                mu_hat,
                ratio,
                period,
            } => {
                if !(c.is_finite() && c > 0.0) {
                    return bad(format!("staged c must be positive, got {c}"));
                }
                if !(mu_hat.is_finite() && mu_hat > 0.0) {
                    return bad(format!("staged mu_hat must be positive, got {mu_hat}"));
                }
                if !(ratio.is_finite() && ratio > 0.0 && ratio < 1.0) {
                    return bad(format!("staged ratio must lie in (0, 1), got {ratio}"));
                }
                if period < 1 {
                    return bad("staged period must be at least 1".into());
                }
            }
        }
        Ok(())
    }
}

/// Step size at iteration `k >= 1` (first update is `k = 1`).
pub fn step_size(schedule: &Schedule, k: u64) -> f64 {
    assert!(k >= 1, "iterations are indexed from 1");
    match *schedule {
        Schedule::Fixed { alpha } => alpha,
        Schedule::InverseDecay { c, mu_hat } => c / (mu_hat * k as f64),
        Schedule::GeometricStaged {
            c,
            mu_hat,
            ratio,
            period,
        } => {
            let stage = (k / period).min(i32::MAX as u64) as i32;
            (c / mu_hat) * ratio.powi(stage)
        }
    }
}

/// Origin-centered Euclidean ball `{x : ||x|| <= radius}` that iterates are
/// projected back into.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectionDomain {
    radius: f64,
}

impl ProjectionDomain {
    pub fn new(radius: f64) -> Result<Self> {
        if !(radius.is_finite() && radius > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "projection radius must be positive and finite, got {radius}"
            )));
        }
        Ok(Self { radius })
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    /// Largest squared norm inside the ball (the `B` fed to the bounds).
    pub fn b_domain(&self) -> f64 {
        self.radius * self.radius
    }

    /// Membership with one part in 1e12 slack for projection rounding.
    pub fn contains(&self, x: &[f64]) -> bool {
        crate::linalg::norm_sq(x).sqrt() <= self.radius * (1.0 + 1e-12)
    }
}

/// Euclidean projection onto the ball: `x` unchanged inside, radially
/// rescaled to the boundary outside.
pub fn project(x: &DenseVector, domain: &ProjectionDomain) -> DenseVector {
    let mut out = x.as_slice().to_vec();
    project_in_place(&mut out, domain);
    DenseVector::new(out).expect("scaling a finite vector by a factor in [0,1] stays finite")
}

pub(crate) fn project_in_place(x: &mut [f64], domain: &ProjectionDomain) {
    let norm_sq = crate::linalg::norm_sq(x);
    let radius = domain.radius;
    // A few ulps of slack make the projection exactly idempotent: a freshly
    // projected boundary point recomputes its norm within rounding of the
    // radius and must not be rescaled again.
    if norm_sq <= radius * radius * (1.0 + 4.0 * f64::EPSILON) {
        return;
    }
    let norm = norm_sq.sqrt();
    for xi in x {
        // Multiply before dividing: keeps e.g. [3,4] with radius 1 landing
        // exactly on [0.6, 0.8].
        *xi = *xi * radius / norm;
    }
}

/// The masked-row stochastic gradient
/// `(1/p²)·ãᵀ(ã·x − p·b_i) − ((1−p)/p²)·d` with `d_j = ã_j²·x_j`,
/// an unbiased estimate of the full least-squares gradient when masks are
/// Bernoulli(`p`) and rows are drawn uniformly.
pub fn msgd_gradient(masked: &MaskedRow, b_i: f64, x: &DenseVector, p: f64) -> DenseVector {
    assert_eq!(masked.len(), x.len(), "masked row and iterate disagree");
    assert!(p > 0.0 && p <= 1.0, "keep probability must lie in (0, 1]");
    let mut out = vec![0.0; x.len()];
    msgd_gradient_into(masked.values(), b_i, x.as_slice(), p, &mut out);
    DenseVector::new(out).expect("finite inputs produce finite masked gradients")
}

/// Hot-path variant writing into a scratch buffer.
fn msgd_gradient_into(values: &[f64], b_i: f64, x: &[f64], p: f64, out: &mut [f64]) {
    let inv_p2 = 1.0 / (p * p);
    let missing_weight = (1.0 - p) * inv_p2;
    let inner = dot(values, x) - p * b_i;
    for j in 0..out.len() {
        let aj = values[j];
        out[j] = inv_p2 * aj * inner - missing_weight * (aj * aj) * x[j];
    }
}

/// Classical per-row SGD direction `A_iᵀ(A_i·x − b_i)`.
pub fn sgd_gradient(row: &[f64], b_i: f64, x: &DenseVector) -> DenseVector {
    assert_eq!(row.len(), x.len(), "row and iterate disagree");
    let mut out = vec![0.0; x.len()];
    sgd_gradient_into(row, b_i, x.as_slice(), &mut out);
    DenseVector::new(out).expect("finite inputs produce finite gradients")
}

fn sgd_gradient_into(row: &[f64], b_i: f64, x: &[f64], out: &mut [f64]) {
    let inner = dot(row, x) - b_i;
    for j in 0..out.len() {
        out[j] = row[j] * inner;
    }
}

/// Runs the masked-gradient method: uniform row choice, mask draw per the
/// model's mode, gradient step, projection. Records `||x_k - x*||^2` at
/// iteration 0, every `record_every` steps, and at the final step. Fully
/// deterministic in `seed`.
#[allow(clippy::too_many_arguments)]
pub fn run(
    problem: &Problem,
    model: &MaskModel,
    schedule: &Schedule,
    domain: &ProjectionDomain,
    x0: &DenseVector,
    iterations: u64,
    seed: u64,
    record_every: u64,
) -> Result<TrialTrace> {
    let x_star = problem.require_x_star()?;
    validate_run_inputs(problem.cols(), x0, iterations, record_every, schedule, domain)?;
    let a = problem.a();
    let (m, n) = (a.rows(), a.cols());
    let p = model.keep_probability();

    let mut row_rng = ChaCha8Rng::seed_from_u64(seed);
    row_rng.set_stream(ROW_STREAM);
    let mut mask_rng = ChaCha8Rng::seed_from_u64(seed);
    mask_rng.set_stream(MASK_STREAM);
    let mut masker = RowMasker::new(*model, m, n, mask_rng)?;

    let digest = run_digest(RunKind::Masked { model }, a, problem.b(), x_star, schedule, domain, x0, iterations, seed, record_every);

    let mut x = x0.as_slice().to_vec();
    let mut kept: Vec<bool> = Vec::with_capacity(n);
    let mut values = vec![0.0; n];
    let mut g = vec![0.0; n];
    let mut recorder = Recorder::new(x_star.as_slice(), iterations, record_every);
    recorder.record(0, &x)?;
    for k in 1..=iterations {
        let i = row_rng.random_range(0..m);
        masker.fill_kept(i, n, &mut kept);
        let row = a.row(i);
        for j in 0..n {
            values[j] = if kept[j] { row[j] } else { 0.0 };
        }
        msgd_gradient_into(&values, problem.b()[i], &x, p, &mut g);
        let alpha = step_size(schedule, k);
        for j in 0..n {
            x[j] -= alpha * g[j];
        }
        project_in_place(&mut x, domain);
        recorder.record(k, &x)?;
    }
    Ok(TrialTrace {
        seed,
        checkpoints: recorder.finish(),
        config_digest: digest,
    })
}

/// Classical SGD on a fully observed matrix, with squared errors measured
/// against an external `reference` (useful when `matrix` is an imputed stand-
/// in for data whose true solution is known). Draws the identical row
/// sequence as [`run`] under the same seed.
#[allow(clippy::too_many_arguments)]
pub fn run_classical_sgd(
    matrix: &DenseMatrix,
    b: &DenseVector,
    reference: &DenseVector,
    schedule: &Schedule,
    domain: &ProjectionDomain,
    x0: &DenseVector,
    iterations: u64,
    seed: u64,
    record_every: u64,
) -> Result<TrialTrace> {
    if b.len() != matrix.rows() {
        return Err(Error::DimensionMismatch {
            context: "right-hand side",
            expected: matrix.rows(),
            got: b.len(),
        });
    }
    if reference.len() != matrix.cols() {
        return Err(Error::DimensionMismatch {
            context: "reference solution",
            expected: matrix.cols(),
            got: reference.len(),
        });
    }
    validate_run_inputs(matrix.cols(), x0, iterations, record_every, schedule, domain)?;
    let (m, n) = (matrix.rows(), matrix.cols());

    let mut row_rng = ChaCha8Rng::seed_from_u64(seed);
    row_rng.set_stream(ROW_STREAM);

    let digest = run_digest(RunKind::Classical, matrix, b, reference, schedule, domain, x0, iterations, seed, record_every);

    let mut x = x0.as_slice().to_vec();
    let mut g = vec![0.0; n];
    let mut recorder = Recorder::new(reference.as_slice(), iterations, record_every);
    recorder.record(0, &x)?;
    for k in 1..=iterations {
        let i = row_rng.random_range(0..m);
        sgd_gradient_into(matrix.row(i), b[i], &x, &mut g);
        let alpha = step_size(schedule, k);
        for j in 0..n {
            x[j] -= alpha * g[j];
        }
        project_in_place(&mut x, domain);
        recorder.record(k, &x)?;
    }
    Ok(TrialTrace {
        seed,
        checkpoints: recorder.finish(),
        config_digest: digest,
    })
}

fn validate_run_inputs(
    n: usize,
    x0: &DenseVector,
    iterations: u64,
    record_every: u64,
    schedule: &Schedule,
    domain: &ProjectionDomain,
) -> Result<()> {
    if x0.len() != n {
        return Err(Error::DimensionMismatch {
            context: "initial iterate",
            expected: n,
            got: x0.len(),
        });
    }
    if iterations < 1 {
        return Err(Error::InvalidParameter(
            "iterations must be at least 1".into(),
        ));
    }
    if record_every < 1 {
        return Err(Error::InvalidParameter(
            "record_every must be at least 1".into(),
        ));
    }
    if !domain.contains(x0.as_slice()) {
        return Err(Error::InvalidParameter(format!(
            "initial iterate has norm {} outside the projection radius {}",
            x0.norm(),
            domain.radius()
        )));
    }
    schedule.validate()
}

/// Checkpoint collector shared by both engines.
struct Recorder<'a> {
    reference: &'a [f64],
    iterations: u64,
    record_every: u64,
    checkpoints: Vec<TracePoint>,
}

impl<'a> Recorder<'a> {
    fn new(reference: &'a [f64], iterations: u64, record_every: u64) -> Self {
        let expected = (iterations / record_every) as usize + 2;
        Self {
            reference,
            iterations,
            record_every,
            checkpoints: Vec::with_capacity(expected),
        }
    }

    fn record(&mut self, k: u64, x: &[f64]) -> Result<()> {
        if k != 0 && !k.is_multiple_of(self.record_every) && k != self.iterations {
            return Ok(());
        }
        let sq_error = dist_sq(x, self.reference);
        if !sq_error.is_finite() {
            return Err(Error::NonFinite {
                context: "recorded squared error",
            });
        }
        self.checkpoints.push(TracePoint {
            iteration: k,
            sq_error,
        });
        Ok(())
    }

    fn finish(self) -> Vec<TracePoint> {
        self.checkpoints
    }
}

enum RunKind<'a> {
    Masked { model: &'a MaskModel },
    Classical,
}

/// Digest over everything that determines a run: engine kind, data bits,
/// masking model, schedule, domain, start point, and iteration plan. Ties a
/// trace to its provenance without keeping the inputs around.
#[allow(clippy::too_many_arguments)]
fn run_digest(
    kind: RunKind<'_>,
    a: &DenseMatrix,
    b: &DenseVector,
    reference: &DenseVector,
    schedule: &Schedule,
    domain: &ProjectionDomain,
    x0: &DenseVector,
    iterations: u64,
    seed: u64,
    record_every: u64,
) -> String {
    let mut h = Sha256::new();
    match kind {
        RunKind::Masked { model } => {
            h.update(b"msgd");
            h.update(model.keep_probability().to_bits().to_le_bytes());
            h.update([match model.mode() {
                crate::masking::MaskMode::ResampleEachIteration => 0u8,
                crate::masking::MaskMode::FrozenMatrixMask => 1u8,
            }]);
        }
        RunKind::Classical => h.update(b"sgd"),
    }
    for dim in [a.rows() as u64, a.cols() as u64, iterations, seed, record_every] {
        h.update(dim.to_le_bytes());
    }
    for value in a.as_slice() {
        h.update(value.to_bits().to_le_bytes());
    }
    for vector in [b, reference, x0] {
        for value in vector.as_slice() {
            h.update(value.to_bits().to_le_bytes());
        }
    }
    h.update(serde_json::to_vec(schedule).expect("schedule serializes"));
    h.update(domain.radius().to_bits().to_le_bytes());
    let bytes = h.finalize();
    let mut hex = String::with_capacity(bytes.len() * 2);
    for byte in bytes {
        hex.push_str(&format!("{byte:02x}"));
    }
    hex
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiments::gen_gaussian_consistent;
    use crate::masking::{enumerate_masks, MaskMode, MaskedRow};
    use proptest::prelude::*;

    fn vec_of(data: &[f64]) -> DenseVector {
        DenseVector::new(data.to_vec()).unwrap()
    }

    #[test]
    fn step_size_fixed_ignores_iteration() {
        let s = Schedule::Fixed { alpha: 1e-4 };
        assert_eq!(step_size(&s, 1), 1e-4);
        assert_eq!(step_size(&s, 1_000_000), 1e-4);
    }

    #[test]
    fn step_size_inverse_decay_example() {
        let s = Schedule::InverseDecay { c: 1.0, mu_hat: 0.5 };
        assert_eq!(step_size(&s, 4), 0.5);
        assert_eq!(step_size(&s, 1), 2.0);
    }

    #[test]
    fn step_size_geometric_staged_example() {
        let s = Schedule::GeometricStaged {
            c: 1.0,
            mu_hat: 1.0,
            ratio: 0.8,
            period: 10,
        };
        assert_eq!(step_size(&s, 25), 0.8 * 0.8);
        assert_eq!(step_size(&s, 9), 1.0);
        assert_eq!(step_size(&s, 10), 0.8);
    }

    #[test]
    #[should_panic(expected = "indexed from 1")]
    fn step_size_rejects_iteration_zero() {
        step_size(&Schedule::Fixed { alpha: 0.1 }, 0);
    }

    #[test]
    fn schedule_validation_catches_bad_parameters() {
        assert!(Schedule::Fixed { alpha: 0.0 }.validate().is_err());
        assert!(Schedule::Fixed { alpha: f64::NAN }.validate().is_err());
        assert!(Schedule::InverseDecay { c: -1.0, mu_hat: 1.0 }.validate().is_err());
        assert!(Schedule::InverseDecay { c: 1.0, mu_hat: 0.0 }.validate().is_err());
        assert!(Schedule::GeometricStaged { c: 1.0, mu_hat: 1.0, ratio: 1.0, period: 5 }
            .validate()
            .is_err());
        assert!(Schedule::GeometricStaged { c: 1.0, mu_hat: 1.0, ratio: 0.5, period: 0 }
            .validate()
            .is_err());
        assert!(Schedule::GeometricStaged { c: 1.0, mu_hat: 1.0, ratio: 0.5, period: 1 }
            .validate()
            .is_ok());
    }

    #[test]
    fn projection_leaves_interior_points_unchanged() {
        let domain = ProjectionDomain::new(2.0).unwrap();
        let x = vec_of(&[0.5, -0.5]);
        assert_eq!(project(&x, &domain), x);
    }

    #[test]
    fn projection_scales_to_the_boundary_exactly() {
        let domain = ProjectionDomain::new(1.0).unwrap();
        let projected = project(&vec_of(&[3.0, 4.0]), &domain);
        assert_eq!(projected.as_slice(), &[0.6, 0.8]);
    }

    #[test]
    fn projection_domain_rejects_bad_radii() {
        assert!(ProjectionDomain::new(0.0).is_err());
        assert!(ProjectionDomain::new(-1.0).is_err());
        assert!(ProjectionDomain::new(f64::INFINITY).is_err());
    }

    #[test]
    fn msgd_gradient_hand_example() {
        let masked = MaskedRow::from_kept(&[1.0, 2.0], vec![true, false]).unwrap();
        let g = msgd_gradient(&masked, 3.0, &vec_of(&[1.0, 1.0]), 0.5);
        assert_eq!(g.as_slice(), &[-4.0, 0.0]);
    }

    #[test]
    fn msgd_gradient_at_zero_iterate_drops_diagonal_term() {
        let masked = MaskedRow::from_kept(&[2.0, -1.0, 3.0], vec![true, true, false]).unwrap();
        let p = 0.25;
        let b_i = 1.5;
        let g = msgd_gradient(&masked, b_i, &DenseVector::zeros(3), p);
        for (gj, aj) in g.iter().zip(masked.values()) {
            assert!((gj - (-(1.0 / p) * b_i * aj)).abs() <= 1e-15);
        }
    }

    #[test]
    fn sgd_gradient_hand_examples() {
        assert_eq!(
            sgd_gradient(&[1.0, 0.0], 1.0, &vec_of(&[1.0, 5.0])).as_slice(),
            &[0.0, 0.0]
        );
        assert_eq!(sgd_gradient(&[2.0], 0.0, &vec_of(&[1.0])).as_slice(), &[4.0]);
    }

    #[test]
    fn msgd_gradient_with_p_one_matches_sgd_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..100 {
            let n = rng.random_range(1..=6usize);
            let row: Vec<f64> = (0..n).map(|_| rng.random_range(-4.0..4.0)).collect();
            let x = vec_of(
                &(0..n)
                    .map(|_| rng.random_range(-4.0..4.0))
                    .collect::<Vec<_>>(),
            );
            let b_i = rng.random_range(-4.0..4.0);
            let masked = MaskedRow::from_kept(&row, vec![true; n]).unwrap();
            let masked_g = msgd_gradient(&masked, b_i, &x, 1.0);
            let plain_g = sgd_gradient(&row, b_i, &x);
            for (a, b) in masked_g.iter().zip(&plain_g) {
                assert!((a - b).abs() <= 1e-14);
            }
        }
    }

    /// Enumerated expectation over rows and masks equals the full gradient
    /// (the unbiasedness identity), checked on tiny random instances.
    #[test]
    fn masked_gradient_is_unbiased_under_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for &p in &[0.25, 0.5, 0.9, 1.0] {
            for _ in 0..5 {
                let m = rng.random_range(1..=4usize);
                let n = rng.random_range(1..=4usize);
                let a = DenseMatrix::from_fn(m, n, |_, _| rng.random_range(-2.0..2.0)).unwrap();
                let b = vec_of(
                    &(0..m)
                        .map(|_| rng.random_range(-2.0..2.0))
                        .collect::<Vec<_>>(),
                );
                let x = vec_of(
                    &(0..n)
                        .map(|_| rng.random_range(-2.0..2.0))
                        .collect::<Vec<_>>(),
                );
                let masks = enumerate_masks(n).unwrap();
                let mut expectation = vec![0.0; n];
                for i in 0..m {
                    for mask in &masks {
                        let weight = mask.weight(p) / m as f64;
                        let masked = mask.apply(a.row(i)).unwrap();
                        let g = msgd_gradient(&masked, b[i], &x, p);
                        for (e, gj) in expectation.iter_mut().zip(&g) {
                            *e += weight * gj;
                        }
                    }
                }
                // Full gradient of (1/2m)||Ax-b||^2 is (1/m)Aᵀ(Ax-b).
                let ax = a.matvec(x.as_slice());
                let r: Vec<f64> = ax.iter().zip(&b).map(|(axi, bi)| axi - bi).collect();
                let full: Vec<f64> = a
                    .transpose_matvec(&r)
                    .into_iter()
                    .map(|v| v / m as f64)
                    .collect();
                for (e, f) in expectation.iter().zip(&full) {
                    assert!(
                        (e - f).abs() <= 1e-10,
                        "bias at p={p}: expectation {e} vs gradient {f}"
                    );
                }
            }
        }
    }

    #[test]
    fn per_sample_lipschitz_bound_holds() {
        let mut rng = ChaCha8Rng::seed_from_u64(1234);
        for _ in 0..1000 {
            let n = rng.random_range(1..=5usize);
            let p = rng.random_range(0.05..=1.0f64);
            let row: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
            let kept: Vec<bool> = (0..n).map(|_| rng.random::<f64>() < 0.6).collect();
            let masked = MaskedRow::from_kept(&row, kept).unwrap();
            let x = vec_of(&(0..n).map(|_| rng.random_range(-3.0..3.0)).collect::<Vec<_>>());
            let y = vec_of(&(0..n).map(|_| rng.random_range(-3.0..3.0)).collect::<Vec<_>>());
            let b_i = rng.random_range(-3.0..3.0);
            let gx = msgd_gradient(&masked, b_i, &x, p);
            let gy = msgd_gradient(&masked, b_i, &y, p);
            let diff = dist_sq(gx.as_slice(), gy.as_slice()).sqrt();
            let lipschitz = masked.norm_sq() / (p * p);
            let dxy = dist_sq(x.as_slice(), y.as_slice()).sqrt();
            assert!(
                diff <= lipschitz * dxy * (1.0 + 1e-12) + 1e-12,
                "||g(x)-g(y)|| = {diff} exceeds L*||x-y|| = {}",
                lipschitz * dxy
            );
        }
    }

    #[test]
    fn msgd_gradient_is_linear_in_x_for_zero_rhs() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..200 {
            let n = rng.random_range(1..=5usize);
            let p = rng.random_range(0.1..=1.0f64);
            let row: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
            let kept: Vec<bool> = (0..n).map(|_| rng.random::<f64>() < 0.5).collect();
            let masked = MaskedRow::from_kept(&row, kept).unwrap();
            let xv: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
            let yv: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
            let scale = rng.random_range(-2.0..2.0);
            let sum =
                vec_of(&xv.iter().zip(&yv).map(|(a, b)| a + b).collect::<Vec<_>>());
            let scaled = vec_of(&xv.iter().map(|a| a * scale).collect::<Vec<_>>());
            let gx = msgd_gradient(&masked, 0.0, &vec_of(&xv), p);
            let gy = msgd_gradient(&masked, 0.0, &vec_of(&yv), p);
            let g_sum = msgd_gradient(&masked, 0.0, &sum, p);
            let g_scaled = msgd_gradient(&masked, 0.0, &scaled, p);
            let magnitude = 1.0 + gx.norm() + gy.norm();
            for j in 0..n {
                assert!((g_sum[j] - (gx[j] + gy[j])).abs() <= 1e-11 * magnitude);
                assert!((g_scaled[j] - scale * gx[j]).abs() <= 1e-11 * magnitude);
            }
        }
    }

    fn smoke_domain() -> ProjectionDomain {
        ProjectionDomain::new(1e3).unwrap()
    }

    #[test]
    fn run_converges_on_a_consistent_system_with_full_observation() {
        let problem = gen_gaussian_consistent(30, 4, 8).unwrap();
        let model = MaskModel::new(1.0, MaskMode::ResampleEachIteration).unwrap();
        let schedule = Schedule::Fixed { alpha: 1e-2 };
        let trace = run(
            &problem,
            &model,
            &schedule,
            &smoke_domain(),
            &DenseVector::zeros(4),
            10_000,
            4,
            1000,
        )
        .unwrap();
        let initial = trace.checkpoints.first().unwrap().sq_error;
        let last = trace.checkpoints.last().unwrap().sq_error;
        assert!(last < initial, "no progress: {initial} -> {last}");
        assert!(last < 1e-6 * initial, "weak convergence: {initial} -> {last}");
    }

    #[test]
    fn run_is_bitwise_deterministic_in_the_seed() {
        let problem = gen_gaussian_consistent(20, 3, 2).unwrap();
        let model = MaskModel::new(0.6, MaskMode::ResampleEachIteration).unwrap();
        let schedule = Schedule::InverseDecay { c: 0.01, mu_hat: 0.1 };
        let args = (
            &problem,
            &model,
            &schedule,
            smoke_domain(),
            DenseVector::zeros(3),
        );
        let t1 = run(args.0, args.1, args.2, &args.3, &args.4, 2000, 31, 100).unwrap();
        let t2 = run(args.0, args.1, args.2, &args.3, &args.4, 2000, 31, 100).unwrap();
        assert_eq!(t1, t2);
        let t3 = run(args.0, args.1, args.2, &args.3, &args.4, 2000, 32, 100).unwrap();
        assert_ne!(t1.checkpoints, t3.checkpoints, "different seeds should differ");
    }

    #[test]
    fn run_with_p_one_reproduces_classical_sgd_exactly() {
        let problem = gen_gaussian_consistent(25, 4, 6).unwrap();
        let model = MaskModel::new(1.0, MaskMode::ResampleEachIteration).unwrap();
        let schedule = Schedule::Fixed { alpha: 5e-3 };
        let domain = smoke_domain();
        let x0 = DenseVector::zeros(4);
        let masked = run(&problem, &model, &schedule, &domain, &x0, 1500, 12, 1).unwrap();
        let classical = run_classical_sgd(
            problem.a(),
            problem.b(),
            problem.x_star().unwrap(),
            &schedule,
            &domain,
            &x0,
            1500,
            12,
            1,
        )
        .unwrap();
        assert_eq!(masked.checkpoints.len(), classical.checkpoints.len());
        for (mp, cp) in masked.checkpoints.iter().zip(&classical.checkpoints) {
            assert_eq!(mp.iteration, cp.iteration);
            assert_eq!(mp.sq_error, cp.sq_error, "divergence at k={}", mp.iteration);
        }
    }

    #[test]
    fn frozen_mode_is_deterministic_and_differs_from_resampling() {
        let problem = gen_gaussian_consistent(20, 3, 5).unwrap();
        let schedule = Schedule::Fixed { alpha: 1e-3 };
        let domain = smoke_domain();
        let x0 = DenseVector::zeros(3);
        let frozen_model = MaskModel::new(0.5, MaskMode::FrozenMatrixMask).unwrap();
        let resample_model = MaskModel::new(0.5, MaskMode::ResampleEachIteration).unwrap();
        let f1 = run(&problem, &frozen_model, &schedule, &domain, &x0, 1000, 3, 100).unwrap();
        let f2 = run(&problem, &frozen_model, &schedule, &domain, &x0, 1000, 3, 100).unwrap();
        let r1 = run(&problem, &resample_model, &schedule, &domain, &x0, 1000, 3, 100).unwrap();
        assert_eq!(f1, f2);
        assert_ne!(f1.checkpoints, r1.checkpoints);
        assert_ne!(f1.config_digest, r1.config_digest);
    }

    #[test]
    fn projection_keeps_every_recorded_iterate_inside_the_ball() {
        let problem = gen_gaussian_consistent(20, 3, 9).unwrap();
        let model = MaskModel::new(0.3, MaskMode::ResampleEachIteration).unwrap();
        // Deliberately unstable step: projection must still bound iterates.
        let schedule = Schedule::Fixed { alpha: 0.5 };
        let domain = ProjectionDomain::new(2.0).unwrap();
        let trace = run(
            &problem,
            &model,
            &schedule,
            &domain,
            &DenseVector::zeros(3),
            5000,
            1,
            1,
        )
        .unwrap();
        let x_star_norm = problem.x_star().unwrap().norm();
        let worst = (domain.radius() + x_star_norm).powi(2);
        for point in &trace.checkpoints {
            assert!(point.sq_error.is_finite());
            assert!(
                point.sq_error <= worst * (1.0 + 1e-9),
                "error {} exceeds the ball-diameter cap {worst}",
                point.sq_error
            );
        }
    }

    #[test]
    fn run_checkpoint_grid_is_strictly_increasing_and_covers_endpoints() {
        let problem = gen_gaussian_consistent(10, 2, 4).unwrap();
        let model = MaskModel::new(0.8, MaskMode::ResampleEachIteration).unwrap();
        let schedule = Schedule::Fixed { alpha: 1e-3 };
        let trace = run(
            &problem,
            &model,
            &schedule,
            &smoke_domain(),
            &DenseVector::zeros(2),
            103,
            0,
            25,
        )
        .unwrap();
        let iterations: Vec<u64> = trace.checkpoints.iter().map(|c| c.iteration).collect();
        assert_eq!(iterations, vec![0, 25, 50, 75, 100, 103]);
        assert!(iterations.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn run_rejects_missing_reference_and_bad_inputs() {
        let a = DenseMatrix::identity(2);
        let b = DenseVector::new(vec![1.0, 1.0]).unwrap();
        let no_ref = Problem::without_reference(a, b).unwrap();
        let model = MaskModel::new(0.5, MaskMode::ResampleEachIteration).unwrap();
        let schedule = Schedule::Fixed { alpha: 1e-3 };
        let domain = smoke_domain();
        let x0 = DenseVector::zeros(2);
        match run(&no_ref, &model, &schedule, &domain, &x0, 10, 0, 1) {
            Err(Error::MissingSolution) => {}
            other => panic!("expected MissingSolution, got {other:?}"),
        }

        let problem = gen_gaussian_consistent(10, 2, 4).unwrap();
        // Wrong x0 length.
        assert!(run(&problem, &model, &schedule, &domain, &DenseVector::zeros(3), 10, 0, 1).is_err());
        // Zero iterations / zero record_every.
        assert!(run(&problem, &model, &schedule, &domain, &x0, 0, 0, 1).is_err());
        assert!(run(&problem, &model, &schedule, &domain, &x0, 10, 0, 0).is_err());
        // x0 outside the ball.
        let tiny = ProjectionDomain::new(0.5).unwrap();
        let far = DenseVector::new(vec![1.0, 1.0]).unwrap();
        assert!(run(&problem, &model, &schedule, &tiny, &far, 10, 0, 1).is_err());
    }

    proptest! {
        #[test]
        fn prop_projection_is_idempotent_and_contained(
            data in proptest::collection::vec(-100.0f64..100.0, 1..6),
            radius in 0.5f64..10.0,
        ) {
            let domain = ProjectionDomain::new(radius).unwrap();
            let x = DenseVector::new(data).unwrap();
            let once = project(&x, &domain);
            let twice = project(&once, &domain);
            prop_assert_eq!(&once, &twice);
            prop_assert!(domain.contains(once.as_slice()));
        }
    }
}
