//! Slow, exact reference computations that validate the fast paths.
//!
//! Everything here trades speed for transparency: expectations are taken by
//! exhaustively enumerating all `2^n` masks (tiny systems only) or by plain
//! Monte Carlo with a reported standard error. These are the oracles the
//! tests and the `verify` command compare the closed forms against.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Error;
use crate::linalg::{dist_sq, dot, norm_sq, DenseMatrix, DenseVector};
use crate::masking::{enumerate_masks, MaskModel, MaskMode, MaskedRow, sample_masked_row};
use crate::solver::msgd_gradient;
use crate::Result;

/// Gradient of `F(x) = (1/2m)||Ax - b||^2`, namely `(1/m)Aᵀ(Ax - b)`.
pub fn full_gradient(a: &DenseMatrix, b: &DenseVector, x: &DenseVector) -> Result<DenseVector> {
    check_dims(a, b, x)?;
    let m = a.rows() as f64;
    let ax = a.matvec(x.as_slice());
    let r: Vec<f64> = ax.iter().zip(b).map(|(axi, bi)| axi - bi).collect();
    DenseVector::new(
        a.transpose_matvec(&r)
            .into_iter()
            .map(|v| v / m)
            .collect(),
    )
}

/// Exact `E[g(x)]` over uniform rows and exhaustively enumerated masks.
/// If the update is unbiased this equals [`full_gradient`].
pub fn enumerated_msgd_expectation(
    a: &DenseMatrix,
    b: &DenseVector,
    x: &DenseVector,
    p: f64,
) -> Result<DenseVector> {
    check_probability(p)?;
    check_dims(a, b, x)?;
    let (m, n) = (a.rows(), a.cols());
    let masks = enumerate_masks(n)?;
    let mut expectation = vec![0.0; n];
    for i in 0..m {
        for mask in &masks {
            let weight = mask.weight(p) / m as f64;
            if weight == 0.0 {
                continue;
            }
            let masked = mask.apply(a.row(i))?;
            let g = msgd_gradient(&masked, b[i], x, p);
            for (e, gj) in expectation.iter_mut().zip(&g) {
                *e += weight * gj;
            }
        }
    }
    DenseVector::new(expectation)
}

/// The uncorrected masked directions one might try before reweighting.
/// Both are biased for `p < 1`; the enumeration makes that checkable.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NaiveVariant {
    /// `Ãᵀ(Ã x - b_i)`: masked row against the raw right-hand side.
    PlainRhs,
    /// `Ãᵀ(Ã x - p b_i)`: masked row against a `p`-scaled right-hand side.
    ScaledRhs,
}

/// Exact expectation of a naive masked direction over rows and masks.
pub fn enumerated_naive_expectation(
    a: &DenseMatrix,
    b: &DenseVector,
    x: &DenseVector,
    p: f64,
    variant: NaiveVariant,
) -> Result<DenseVector> {
    check_probability(p)?;
    check_dims(a, b, x)?;
    let (m, n) = (a.rows(), a.cols());
    let masks = enumerate_masks(n)?;
    let mut expectation = vec![0.0; n];
    for i in 0..m {
        for mask in &masks {
            let weight = mask.weight(p) / m as f64;
            if weight == 0.0 {
                continue;
            }
            let masked = mask.apply(a.row(i))?;
            let rhs = match variant {
                NaiveVariant::PlainRhs => b[i],
                NaiveVariant::ScaledRhs => p * b[i],
            };
            let inner = dot(masked.values(), x.as_slice()) - rhs;
            for (e, aj) in expectation.iter_mut().zip(masked.values()) {
                *e += weight * aj * inner;
            }
        }
    }
    DenseVector::new(expectation)
}

/// Exact `E||g(x)||^2` over uniform rows and enumerated masks.
pub fn enumerated_update_norm_sq(
    a: &DenseMatrix,
    b: &DenseVector,
    x: &DenseVector,
    p: f64,
) -> Result<f64> {
    check_probability(p)?;
    check_dims(a, b, x)?;
    let (m, n) = (a.rows(), a.cols());
    let masks = enumerate_masks(n)?;
    let mut total = 0.0;
    for i in 0..m {
        for mask in &masks {
            let weight = mask.weight(p) / m as f64;
            if weight == 0.0 {
                continue;
            }
            let masked = mask.apply(a.row(i))?;
            let g = msgd_gradient(&masked, b[i], x, p);
            total += weight * g.norm_sq();
        }
    }
    Ok(total)
}

/// Monte Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub samples: u64,
}

impl McEstimate {
    /// `value` exceeds the estimated mean by more than `sigmas` standard
    /// errors; used for "bound dominates estimate" assertions.
    pub fn dominated_by(&self, value: f64, sigmas: f64) -> bool {
        self.mean <= value + sigmas * self.std_error
    }
}

/// Monte Carlo `E||g(x)||^2` over fresh uniform rows and Bernoulli masks.
pub fn mc_update_norm_sq(
    a: &DenseMatrix,
    b: &DenseVector,
    x: &DenseVector,
    p: f64,
    samples: u64,
    seed: u64,
) -> Result<McEstimate> {
    check_probability(p)?;
    check_dims(a, b, x)?;
    if samples < 2 {
        return Err(Error::InvalidParameter(
            "a Monte Carlo estimate needs at least 2 samples".into(),
        ));
    }
    let model = MaskModel::new(p, MaskMode::ResampleEachIteration)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = a.rows();
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..samples {
        let i = rng.random_range(0..m);
        let masked = sample_masked_row(a, i, &model, &mut rng)?;
        let value = msgd_gradient(&masked, b[i], x, p).norm_sq();
        sum += value;
        sum_sq += value * value;
    }
    let count = samples as f64;
    let mean = sum / count;
    let variance = ((sum_sq / count) - mean * mean).max(0.0) * count / (count - 1.0);
    Ok(McEstimate {
        mean,
        std_error: (variance / count).sqrt(),
        samples,
    })
}

/// Largest sampled ratio `||g(x) - g(y)|| / ||x - y||` over random rows,
/// masks, and pairs drawn from the ball of the given radius. Always at most
/// the supremum Lipschitz constant `max_i ||A_i||^2 / p^2`.
pub fn mc_max_lipschitz_ratio(
    a: &DenseMatrix,
    p: f64,
    radius: f64,
    samples: u64,
    seed: u64,
) -> Result<f64> {
    check_probability(p)?;
    if !(radius.is_finite() && radius > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "sampling radius must be positive, got {radius}"
        )));
    }
    let model = MaskModel::new(p, MaskMode::ResampleEachIteration)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (m, n) = (a.rows(), a.cols());
    let mut max_ratio: f64 = 0.0;
    let mut drawn = 0u64;
    while drawn < samples {
        let i = rng.random_range(0..m);
        let masked = sample_masked_row(a, i, &model, &mut rng)?;
        let x = random_ball_point(n, radius, &mut rng);
        let y = random_ball_point(n, radius, &mut rng);
        let dxy = dist_sq(x.as_slice(), y.as_slice()).sqrt();
        if dxy <= 1e-12 {
            continue;
        }
        drawn += 1;
        let ratio = gradient_gap(&masked, &x, &y, p) / dxy;
        max_ratio = max_ratio.max(ratio);
    }
    Ok(max_ratio)
}

/// `||g(x) - g(y)||` for a fixed masked row; `b_i` cancels in the difference
/// so it is not needed.
fn gradient_gap(masked: &MaskedRow, x: &DenseVector, y: &DenseVector, p: f64) -> f64 {
    let gx = msgd_gradient(masked, 0.0, x, p);
    let gy = msgd_gradient(masked, 0.0, y, p);
    dist_sq(gx.as_slice(), gy.as_slice()).sqrt()
}

/// Uniform-direction point with norm uniform in `[0, radius]`; cheap cover
/// of the ball for worst-case searches.
fn random_ball_point(n: usize, radius: f64, rng: &mut ChaCha8Rng) -> DenseVector {
    use rand_distr::{Distribution, StandardNormal};
    let normal = StandardNormal;
    let raw: Vec<f64> = (0..n).map(|_| normal.sample(rng)).collect();
    let norm = norm_sq(&raw).sqrt();
    if norm == 0.0 {
        return DenseVector::zeros(n);
    }
    let target = radius * rng.random::<f64>();
    DenseVector::new(raw.into_iter().map(|v| v * target / norm).collect())
        .expect("finite scaling of finite draws")
}

/// Self-check battery behind the `verify` command: unbiasedness by
/// enumeration, bias of the naive directions, exact reduction to classical
/// SGD at full observation, and Monte Carlo domination of the closed-form
/// bounds. Returns one summary line per passed check; the first violated
/// check aborts with a [`Error::Verification`] describing it.
pub fn run_verification(seed: u64) -> Result<Vec<String>> {
    let mut passed = Vec::new();
    verify_unbiasedness(seed, &mut passed)?;
    verify_naive_bias(&mut passed)?;
    verify_full_observation_reduction(seed, &mut passed)?;
    verify_bound_domination(seed, &mut passed)?;
    Ok(passed)
}

fn verify_unbiasedness(seed: u64, passed: &mut Vec<String>) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tolerance = 1e-10;
    let mut max_gap: f64 = 0.0;
    let mut pairs = 0;
    for _ in 0..5 {
        let m = rng.random_range(2..=4);
        let n = rng.random_range(2..=4);
        let a = DenseMatrix::from_fn(m, n, |_, _| rng.random_range(-2.0..2.0))?;
        let b = DenseVector::new((0..m).map(|_| rng.random_range(-2.0..2.0)).collect())?;
        let x = DenseVector::new((0..n).map(|_| rng.random_range(-2.0..2.0)).collect())?;
        for &p in &[0.25, 0.5, 0.9, 1.0] {
            let expectation = enumerated_msgd_expectation(&a, &b, &x, p)?;
            let full = full_gradient(&a, &b, &x)?;
            let gap = dist_sq(expectation.as_slice(), full.as_slice()).sqrt();
            if gap > tolerance {
                return Err(Error::Verification(format!(
                    "enumerated E[g(x)] deviates from the full gradient by {gap:.3e} \
                     (tolerance {tolerance:.0e}) on a {m}x{n} instance at p={p}"
                )));
            }
            max_gap = max_gap.max(gap);
            pairs += 1;
        }
    }
    passed.push(format!(
        "unbiasedness: enumerated E[g(x)] matches the full gradient on {pairs} \
         instance/probability pairs (max gap {max_gap:.2e})"
    ));
    Ok(())
}

fn verify_naive_bias(passed: &mut Vec<String>) -> Result<()> {
    let a = DenseMatrix::from_rows(&[vec![1.0, 2.0], vec![-1.0, 1.5], vec![0.5, -2.5]])?;
    let b = DenseVector::new(vec![1.0, -2.0, 0.5])?;
    let x = DenseVector::new(vec![0.7, -1.1])?;
    let p = 0.5;
    let full = full_gradient(&a, &b, &x)?;
    let mut gaps = Vec::new();
    for variant in [NaiveVariant::PlainRhs, NaiveVariant::ScaledRhs] {
        let naive = enumerated_naive_expectation(&a, &b, &x, p, variant)?;
        let gap = dist_sq(naive.as_slice(), full.as_slice()).sqrt();
        if gap <= 1e-3 {
            return Err(Error::Verification(format!(
                "naive direction {variant:?} looks unbiased (gap {gap:.3e}); \
                 the correction term should be load-bearing at p={p}"
            )));
        }
        gaps.push(gap);
    }
    passed.push(format!(
        "naive-direction bias: both uncorrected updates deviate from the true \
         gradient at p=0.5 (gaps {:.2e}, {:.2e})",
        gaps[0], gaps[1]
    ));
    Ok(())
}

fn verify_full_observation_reduction(seed: u64, passed: &mut Vec<String>) -> Result<()> {
    use crate::masking::MaskMode;
    use crate::solver::{run, run_classical_sgd, ProjectionDomain, Schedule};

    let problem = crate::experiments::gen_gaussian_consistent(12, 3, seed)?;
    let x_star = problem.require_x_star()?;
    let domain = ProjectionDomain::new(10.0 * x_star.norm())?;
    let alpha = 0.5 / crate::bounds::compute_lg(problem.a(), 1.0);
    let schedule = Schedule::Fixed { alpha };
    let x0 = DenseVector::zeros(problem.cols());
    let iterations = 1000;

    let masked = run(
        &problem,
        &MaskModel::new(1.0, MaskMode::ResampleEachIteration)?,
        &schedule,
        &domain,
        &x0,
        iterations,
        seed,
        1,
    )?;
    let classical = run_classical_sgd(
        problem.a(),
        problem.b(),
        x_star,
        &schedule,
        &domain,
        &x0,
        iterations,
        seed,
        1,
    )?;
    for (a, b) in masked.checkpoints.iter().zip(&classical.checkpoints) {
        let gap = (a.sq_error - b.sq_error).abs();
        if gap > 1e-12 * (1.0 + a.sq_error) {
            return Err(Error::Verification(format!(
                "p=1 run deviates from classical SGD at iteration {} by {gap:.3e}",
                a.iteration
            )));
        }
    }
    passed.push(format!(
        "full-observation reduction: p=1 run matches classical SGD at every \
         recorded step over {iterations} iterations"
    ));
    Ok(())
}

fn verify_bound_domination(seed: u64, passed: &mut Vec<String>) -> Result<()> {
    use crate::bounds::{compute_g, compute_g_star, compute_lg};

    let consistent = crate::experiments::gen_gaussian_consistent(12, 3, seed)?;
    let inconsistent = crate::experiments::gen_gaussian_inconsistent(12, 3, 0.4, seed)?;
    let sigmas = 3.0;
    let samples = 20_000;
    let mut points_checked = 0;
    for problem in [&consistent, &inconsistent] {
        let x_star = problem.require_x_star()?;
        let radius = 2.0 * x_star.norm().max(1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x51ab);
        for &p in &[0.3, 0.7, 1.0] {
            let g = compute_g(problem.a(), problem.b(), p, radius * radius);
            let points = [
                DenseVector::zeros(problem.cols()),
                x_star.clone(),
                random_ball_point(problem.cols(), radius, &mut rng),
            ];
            for x in &points {
                let estimate =
                    mc_update_norm_sq(problem.a(), problem.b(), x, p, samples, seed ^ 0x7e57)?;
                if !estimate.dominated_by(g, sigmas) {
                    return Err(Error::Verification(format!(
                        "Monte Carlo E||g(x)||^2 = {:.6e} (std err {:.2e}) exceeds \
                         G = {g:.6e} at p={p}",
                        estimate.mean, estimate.std_error
                    )));
                }
                points_checked += 1;
            }
            let g_star = compute_g_star(problem.a(), x_star, problem.require_residual()?, p);
            let at_star =
                mc_update_norm_sq(problem.a(), problem.b(), x_star, p, samples, seed ^ 0xdead)?;
            if !at_star.dominated_by(g_star, sigmas) {
                return Err(Error::Verification(format!(
                    "Monte Carlo E||g(x*)||^2 = {:.6e} (std err {:.2e}) exceeds \
                     G* = {g_star:.6e} at p={p}",
                    at_star.mean, at_star.std_error
                )));
            }
            let l_g = compute_lg(problem.a(), p);
            let ratio = mc_max_lipschitz_ratio(problem.a(), p, radius, 1000, seed ^ 0xbee)?;
            if ratio > l_g * (1.0 + 1e-12) {
                return Err(Error::Verification(format!(
                    "sampled Lipschitz ratio {ratio:.6e} exceeds L_g = {l_g:.6e} at p={p}"
                )));
            }
        }
    }
    passed.push(format!(
        "bound domination: G and G* dominate {samples}-sample Monte Carlo \
         estimates ({sigmas} sigma) at {points_checked} points on consistent \
         and inconsistent systems; sampled Lipschitz ratios stay below L_g"
    ));
    Ok(())
}

fn check_probability(p: f64) -> Result<()> {
    if !(p.is_finite() && p > 0.0 && p <= 1.0) {
        return Err(Error::InvalidProbability(p));
    }
    Ok(())
}

fn check_dims(a: &DenseMatrix, b: &DenseVector, x: &DenseVector) -> Result<()> {
    if b.len() != a.rows() {
        return Err(Error::DimensionMismatch {
            context: "right-hand side",
            expected: a.rows(),
            got: b.len(),
        });
    }
    if x.len() != a.cols() {
        return Err(Error::DimensionMismatch {
            context: "evaluation point",
            expected: a.cols(),
            got: x.len(),
        });
    }
    Ok(())
}
