//! Statistical behavior of full solver runs against the closed-form bounds:
//! fixed-step plateaus sit inside the predicted horizon and order by keep
//! probability, the decaying-step error stays under its bound at every
//! checkpoint, and inconsistent systems plateau above consistent ones.

use msgd::bounds::{compute_g, compute_mu, fixed_step_report, theorem1_bound};
use msgd::experiments::{
    gen_gaussian_consistent, gen_gaussian_inconsistent, run_trials, trial_seed, Problem,
    TrialTrace,
};
use msgd::linalg::DenseVector;
use msgd::masking::{MaskMode, MaskModel};
use msgd::solver::{run, ProjectionDomain, Schedule};

struct TailStats {
    mean: f64,
    sem: f64,
}

/// Mean of a trace's last-10%-of-checkpoints window, the same rule
/// `AggregateTrace::tail_mean` uses.
fn trial_tail_mean(trace: &TrialTrace) -> f64 {
    let len = trace.checkpoints.len();
    let take = (len / 10).max(1);
    trace.checkpoints[len - take..]
        .iter()
        .map(|c| c.sq_error)
        .sum::<f64>()
        / take as f64
}

fn tail_start_iteration(trace: &TrialTrace) -> u64 {
    let len = trace.checkpoints.len();
    let take = (len / 10).max(1);
    trace.checkpoints[len - take].iteration
}

#[allow(clippy::too_many_arguments)]
fn tail_stats(
    problem: &Problem,
    p: f64,
    schedule: &Schedule,
    domain: &ProjectionDomain,
    iterations: u64,
    trials: u64,
    root_seed: u64,
    record_every: u64,
) -> (TailStats, u64) {
    let model = MaskModel::new(p, MaskMode::ResampleEachIteration).unwrap();
    let x0 = DenseVector::zeros(problem.cols());
    let mut tails = Vec::with_capacity(trials as usize);
    let mut tail_start = 0;
    for t in 0..trials {
        let trace = run(
            problem,
            &model,
            schedule,
            domain,
            &x0,
            iterations,
            trial_seed(root_seed, t),
            record_every,
        )
        .unwrap();
        tail_start = tail_start_iteration(&trace);
        tails.push(trial_tail_mean(&trace));
    }
    let n = tails.len() as f64;
    let mean = tails.iter().sum::<f64>() / n;
    let var = tails.iter().map(|t| (t - mean) * (t - mean)).sum::<f64>() / (n - 1.0);
    (
        TailStats {
            mean,
            sem: (var / n).sqrt(),
        },
        tail_start,
    )
}

/// Fixed step, three keep probabilities: every plateau sits below the
/// predicted `transient + horizon` (3 sigma trial allowance) and the
/// plateaus strictly decrease as p rises.
#[test]
fn fixed_step_plateaus_are_contained_and_ordered_by_p() {
    let problem = gen_gaussian_consistent(60, 8, 3).unwrap();
    let x_star = problem.x_star().unwrap();
    let radius = 10.0 * x_star.norm();
    let domain = ProjectionDomain::new(radius).unwrap();
    let alpha = 1e-3;
    let schedule = Schedule::Fixed { alpha };
    let e0 = x_star.norm_sq();

    let mut tail_means = Vec::new();
    for &p in &[0.3, 0.7, 1.0] {
        let report = fixed_step_report(
            problem.a(),
            problem.b(),
            x_star,
            problem.residual().unwrap(),
            p,
            alpha,
            radius * radius,
        )
        .unwrap();
        let (tail, tail_start) = tail_stats(
            &problem, p, &schedule, &domain, 30_000, 10, 42, 250,
        );
        let transient = report.rate.powf(tail_start as f64) * e0;
        let bound = transient + report.horizon + 3.0 * tail.sem;
        assert!(
            tail.mean <= bound,
            "p={p}: plateau {} above bound {bound} (horizon {})",
            tail.mean,
            report.horizon
        );
        tail_means.push(tail.mean);
    }
    assert!(
        tail_means[0] > tail_means[1] && tail_means[1] > tail_means[2],
        "plateaus not decreasing in p: {tail_means:?}"
    );
}

/// Decaying step `alpha_k = 1/(mu k)`: the mean squared error stays under
/// `17 G (1 + ln k)/(mu^2 k)` at every recorded k >= 10.
#[test]
fn decaying_step_error_stays_under_its_bound_at_every_checkpoint() {
    let problem = gen_gaussian_consistent(60, 8, 11).unwrap();
    let x_star = problem.x_star().unwrap();
    let radius = 10.0 * x_star.norm();
    let domain = ProjectionDomain::new(radius).unwrap();
    let p = 0.5;
    let mu = compute_mu(problem.a()).unwrap();
    let g = compute_g(problem.a(), problem.b(), p, radius * radius);
    let schedule = Schedule::InverseDecay { c: 1.0, mu_hat: mu };
    let model = MaskModel::new(p, MaskMode::ResampleEachIteration).unwrap();

    let aggregate = run_trials(&problem, &model, &schedule, &domain, 20_000, 10, 5, 100).unwrap();
    for point in &aggregate.checkpoints {
        if point.iteration < 10 {
            continue;
        }
        let bound = theorem1_bound(g, mu, point.iteration as f64).unwrap();
        assert!(
            point.mean_sq_error <= bound,
            "k={}: mean error {} above bound {bound}",
            point.iteration,
            point.mean_sq_error
        );
    }
}

/// Matched (A, p, alpha): folding a least-squares-null residual into b
/// lifts the fixed-step plateau, and both plateaus stay inside their own
/// horizons.
#[test]
fn inconsistent_systems_plateau_above_consistent_ones() {
    let seed = 5;
    let consistent = gen_gaussian_consistent(60, 8, seed).unwrap();
    let inconsistent = gen_gaussian_inconsistent(60, 8, 2.0, seed).unwrap();
    // Same generator seed, so the two problems share A and x*.
    assert_eq!(consistent.a().as_slice(), inconsistent.a().as_slice());
    assert_eq!(
        consistent.x_star().unwrap().as_slice(),
        inconsistent.x_star().unwrap().as_slice()
    );

    let x_star = consistent.x_star().unwrap();
    let radius = 10.0 * x_star.norm();
    let domain = ProjectionDomain::new(radius).unwrap();
    let p = 0.7;
    let alpha = 1e-3;
    let schedule = Schedule::Fixed { alpha };
    let e0 = x_star.norm_sq();

    let mut results = Vec::new();
    for problem in [&consistent, &inconsistent] {
        let report = fixed_step_report(
            problem.a(),
            problem.b(),
            x_star,
            problem.residual().unwrap(),
            p,
            alpha,
            radius * radius,
        )
        .unwrap();
        let (tail, tail_start) = tail_stats(
            problem, p, &schedule, &domain, 25_000, 12, 77, 250,
        );
        let transient = report.rate.powf(tail_start as f64) * e0;
        assert!(
            tail.mean <= transient + report.horizon + 3.0 * tail.sem,
            "plateau {} above horizon {}",
            tail.mean,
            report.horizon
        );
        results.push(tail);
    }
    let (cons, incon) = (&results[0], &results[1]);
    let noise = 3.0 * (cons.sem * cons.sem + incon.sem * incon.sem).sqrt();
    assert!(
        incon.mean > cons.mean + noise,
        "inconsistent plateau {} not above consistent {} (+noise {noise})",
        incon.mean,
        cons.mean
    );
}

/// The aggregate trace's tail mean is the mean of the per-trial tails, so
/// the statistical tests above measure the same quantity `run_trials`
/// reports.
#[test]
fn aggregate_tail_mean_matches_per_trial_tail_average() {
    let problem = gen_gaussian_consistent(30, 4, 2).unwrap();
    let domain = ProjectionDomain::new(50.0).unwrap();
    let schedule = Schedule::Fixed { alpha: 1e-3 };
    let model = MaskModel::new(0.6, MaskMode::ResampleEachIteration).unwrap();
    let (iterations, trials, root_seed, record_every) = (2_000, 5, 9, 50);

    let aggregate = run_trials(
        &problem,
        &model,
        &schedule,
        &domain,
        iterations,
        trials,
        root_seed,
        record_every,
    )
    .unwrap();
    let x0 = DenseVector::zeros(problem.cols());
    let mut per_trial = Vec::new();
    for t in 0..trials {
        let trace = run(
            &problem,
            &model,
            &schedule,
            &domain,
            &x0,
            iterations,
            trial_seed(root_seed, t),
            record_every,
        )
        .unwrap();
        per_trial.push(trial_tail_mean(&trace));
    }
    let mean = per_trial.iter().sum::<f64>() / trials as f64;
    assert!((aggregate.tail_mean() - mean).abs() <= 1e-12 * (1.0 + mean));
}
