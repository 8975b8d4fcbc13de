//! Closed-form constants and convergence bounds for the masked-gradient
//! method: strong convexity, Lipschitz and variance constants, the
//! decaying-step error bound, the fixed-step rate/horizon split, and the
//! tolerance-driven step/budget plan.

use crate::error::Error;
use crate::linalg::{sigma_min_sq, DenseMatrix, DenseVector};
use crate::Result;

const EIG_TOL: f64 = 1e-12;
/// Relative floor under which the smallest Gram eigenvalue counts as zero.
const RANK_RTOL: f64 = 1e-10;

/// Every theoretical quantity attached to one `(problem, p, alpha, radius)`
/// choice. Serializes to JSON with exactly these field names, in this order.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BoundsReport {
    /// Strong convexity constant `sigma_min^2(A)/m`.
    pub mu: f64,
    /// Supremum Lipschitz constant `max_i ||A_i||^2 / p^2`.
    pub l_g: f64,
    /// Uniform second-moment bound `G` on `E||g(x)||^2` over the domain.
    pub g_bound: f64,
    /// Second-moment bound `G*` at the reference solution.
    pub g_star: f64,
    /// Fixed-step contraction factor `1 - 2*alpha*mu*(1 - alpha*l_g)`.
    pub rate: f64,
    /// Fixed-step error plateau `alpha*g_star / (mu*(1 - alpha*l_g))`.
    pub horizon: f64,
    /// Largest squared norm over the projection domain (`radius^2`).
    pub b_domain: f64,
    /// Step size the report was evaluated at.
    pub alpha: f64,
    /// Keep probability the report was evaluated at.
    pub p: f64,
}

/// Strong convexity constant of `F(x) = (1/2m)||Ax-b||^2`, namely
/// `sigma_min^2(A)/m`. Rank-deficient matrices are rejected: the constant
/// would be zero and every bound built on it vacuous.
pub fn compute_mu(a: &DenseMatrix) -> Result<f64> {
    let smallest = sigma_min_sq(a, EIG_TOL)?;
    let mass: f64 = (0..a.rows())
        .map(|i| a.row_norm_sq(i).expect("index in range"))
        .sum();
    if smallest <= RANK_RTOL * mass.max(f64::MIN_POSITIVE) {
        return Err(Error::RankDeficient);
    }
    Ok(smallest / a.rows() as f64)
}

/// Supremum Lipschitz constant of the masked gradient: `max_i ||A_i||^2/p^2`.
/// Every realizable per-instance constant `||masked row||^2/p^2` is below it
/// because masking can only shrink a row norm.
pub fn compute_lg(a: &DenseMatrix, p: f64) -> f64 {
    assert!(p > 0.0 && p <= 1.0, "keep probability must lie in (0, 1]");
    a.max_row_norm_sq() / (p * p)
}

/// Uniform bound `G` on `E||g(x)||^2` over any `x` with `||x||^2 <= b_domain`:
/// `(2B/(mp^2))(1 + (1-p)(2-p)/p)·Σ||A_i||^4 + (2/(mp^2))·Σ||A_i||^2 b_i^2`.
pub fn compute_g(a: &DenseMatrix, b: &DenseVector, p: f64, b_domain: f64) -> f64 {
    assert!(p > 0.0 && p <= 1.0, "keep probability must lie in (0, 1]");
    assert!(
        b_domain.is_finite() && b_domain > 0.0,
        "domain bound B must be positive"
    );
    assert_eq!(b.len(), a.rows(), "right-hand side length");
    let m = a.rows() as f64;
    let (s4, sb) = row_moment_sums(a, b);
    let missing_factor = 1.0 + (1.0 - p) * (2.0 - p) / p;
    (2.0 * b_domain / (m * p * p)) * missing_factor * s4 + (2.0 / (m * p * p)) * sb
}

/// Second-moment bound `G*` at the reference solution:
/// `(2/(mp^2))·Σ||A_i||^2 r_i^2 + (2(1-p)(2-p)/(mp^3))·||x*||^2·Σ||A_i||^4`.
/// A consistent system is the `residual = 0` specialization.
pub fn compute_g_star(
    a: &DenseMatrix,
    x_star: &DenseVector,
    residual: &DenseVector,
    p: f64,
) -> f64 {
    assert!(p > 0.0 && p <= 1.0, "keep probability must lie in (0, 1]");
    assert_eq!(x_star.len(), a.cols(), "reference solution length");
    assert_eq!(residual.len(), a.rows(), "residual length");
    let m = a.rows() as f64;
    let mut s4 = 0.0;
    let mut sr = 0.0;
    for i in 0..a.rows() {
        let norm_sq = a.row_norm_sq(i).expect("index in range");
        s4 += norm_sq * norm_sq;
        sr += norm_sq * residual[i] * residual[i];
    }
    (2.0 / (m * p * p)) * sr
        + (2.0 * (1.0 - p) * (2.0 - p) / (m * p * p * p)) * x_star.norm_sq() * s4
}

/// `Σ||A_i||^4` and `Σ||A_i||^2 b_i^2`.
fn row_moment_sums(a: &DenseMatrix, b: &DenseVector) -> (f64, f64) {
    let mut s4 = 0.0;
    let mut sb = 0.0;
    for i in 0..a.rows() {
        let norm_sq = a.row_norm_sq(i).expect("index in range");
        s4 += norm_sq * norm_sq;
        sb += norm_sq * b[i] * b[i];
    }
    (s4, sb)
}

/// Full fixed-step report: constants plus the contraction rate and error
/// horizon for running at constant step `alpha` inside a ball with
/// `max ||x||^2 = b_domain`.
#[allow(clippy::too_many_arguments)]
pub fn fixed_step_report(
    a: &DenseMatrix,
    b: &DenseVector,
    x_star: &DenseVector,
    residual: &DenseVector,
    p: f64,
    alpha: f64,
    b_domain: f64,
) -> Result<BoundsReport> {
    if !(p.is_finite() && p > 0.0 && p <= 1.0) {
        return Err(Error::InvalidProbability(p));
    }
    if b.len() != a.rows() {
        return Err(Error::DimensionMismatch {
            context: "right-hand side",
            expected: a.rows(),
            got: b.len(),
        });
    }
    if x_star.len() != a.cols() {
        return Err(Error::DimensionMismatch {
            context: "reference solution",
            expected: a.cols(),
            got: x_star.len(),
        });
    }
    if residual.len() != a.rows() {
        return Err(Error::DimensionMismatch {
            context: "reference residual",
            expected: a.rows(),
            got: residual.len(),
        });
    }
    if !(b_domain.is_finite() && b_domain > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "domain bound B must be positive and finite, got {b_domain}"
        )));
    }
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "step size must be positive and finite, got {alpha}"
        )));
    }
    let mu = compute_mu(a)?;
    let l_g = compute_lg(a, p);
    let limit = 1.0 / l_g;
    if alpha >= limit {
        return Err(Error::StepTooLarge { alpha, limit });
    }
    let g_bound = compute_g(a, b, p, b_domain);
    let g_star = compute_g_star(a, x_star, residual, p);
    let damping = 1.0 - alpha * l_g;
    let rate = 1.0 - 2.0 * alpha * mu * damping;
    let horizon = alpha * g_star / (mu * damping);
    Ok(BoundsReport {
        mu,
        l_g,
        g_bound,
        g_star,
        rate,
        horizon,
        b_domain,
        alpha,
        p,
    })
}

/// Error bound for the decaying step `alpha_k = 1/(mu k)`:
/// `17 G (1 + ln k) / (mu^2 k)`. `k` is real-valued so the bound's shape can
/// be probed off the integer grid; callers pass iteration counts as floats.
pub fn theorem1_bound(g: f64, mu: f64, k: f64) -> Result<f64> {
    if !(g.is_finite() && g >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "second-moment bound G must be nonnegative, got {g}"
        )));
    }
    if !(mu.is_finite() && mu > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "strong convexity constant must be positive, got {mu}"
        )));
    }
    if !(k.is_finite() && k >= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "the bound is defined for k >= 1, got {k}"
        )));
    }
    Ok(17.0 * g * (1.0 + k.ln()) / (mu * mu * k))
}

/// Output of [`corollary_plan`]: the tolerance-optimal fixed step and the
/// iteration budget guaranteeing expected squared error `epsilon`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorollaryPlan {
    /// `alpha* = eps*mu / (2 G* + 2 mu eps L_g)`.
    pub alpha_star: f64,
    /// Real-valued budget `2 ln(2 eps0/eps) (L_g/mu + G*/(mu^2 eps))`.
    pub k_bound: f64,
    /// `k_bound` rounded up; rounding up preserves the guarantee.
    pub k_budget: u64,
    /// True when `eps >= 2*eps0`: the bound certifies the target already at
    /// iteration zero, so the budget is zero.
    pub already_met: bool,
}

/// Step size and iteration budget to reach expected squared error `epsilon`
/// from initial squared error `epsilon0` at fixed step.
pub fn corollary_plan(
    epsilon: f64,
    epsilon0: f64,
    l_g: f64,
    g_star: f64,
    mu: f64,
) -> Result<CorollaryPlan> {
    for (name, value) in [("epsilon", epsilon), ("epsilon0", epsilon0), ("l_g", l_g), ("mu", mu)] {
        if !(value.is_finite() && value > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "{name} must be positive and finite, got {value}"
            )));
        }
    }
    if !(g_star.is_finite() && g_star >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "g_star must be nonnegative and finite, got {g_star}"
        )));
    }
    let alpha_star = epsilon * mu / (2.0 * g_star + 2.0 * mu * epsilon * l_g);
    if epsilon >= 2.0 * epsilon0 {
        return Ok(CorollaryPlan {
            alpha_star,
            k_bound: 0.0,
            k_budget: 0,
            already_met: true,
        });
    }
    let k_bound = 2.0 * (2.0 * epsilon0 / epsilon).ln() * (l_g / mu + g_star / (mu * mu * epsilon));
    Ok(CorollaryPlan {
        alpha_star,
        k_bound,
        k_budget: k_bound.ceil() as u64,
        already_met: false,
    })
}
