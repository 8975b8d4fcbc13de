//! `msgd`: experiments with SGD on linear systems that have missing data.
//!
//! Subcommands generate synthetic problems, run multi-trial experiments from
//! JSON configs, print theoretical bounds reports, compare against
//! imputation baselines, and run the built-in oracle self-checks. Every
//! command is deterministic in its inputs: reruns produce byte-identical
//! outputs.
//!
//! Exit codes: 0 success, 2 configuration or input error, 3 numerical
//! failure, 4 verification failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use msgd::bounds::fixed_step_report;
use msgd::config::{sha256_hex, ExperimentConfig};
use msgd::experiments::{
    compare_imputation, gen_gaussian_consistent, gen_gaussian_inconsistent, run_trials,
    ImputeStrategy,
};
use msgd::io::{
    load_csv_problem, write_matrix_csv, write_run_meta_json, write_sidecar_json, write_trace_csv,
    write_vector_csv, ProblemSidecar, RhsSpec, RunMeta,
};
use msgd::oracle::run_verification;
use msgd::Error;

#[derive(Parser)]
#[command(
    name = "msgd",
    version,
    about = "SGD for linear systems with missing data: solver, bounds, and baselines"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic problem as a.csv + b.csv + meta.json.
    Generate {
        /// Problem family.
        #[arg(long, value_enum)]
        generator: GeneratorKind,
        /// Number of rows.
        #[arg(long)]
        m: usize,
        /// Number of columns.
        #[arg(long)]
        n: usize,
        /// Generator seed.
        #[arg(long)]
        seed: u64,
        /// Residual norm relative to ||b||; used by gaussian-inconsistent.
        #[arg(long, default_value_t = 0.1)]
        residual_scale: f64,
        /// Directory receiving the three files.
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Run a multi-trial experiment from a config file; write the trace CSV.
    Solve {
        /// Experiment config JSON; paths inside resolve relative to it.
        #[arg(long)]
        config: PathBuf,
    },
    /// Print the bounds report (JSON) for a CSV problem at (p, alpha, radius).
    Bounds {
        /// Matrix CSV.
        #[arg(long)]
        matrix: PathBuf,
        /// Right-hand side as a separate single-column CSV.
        #[arg(long, conflicts_with = "rhs_column")]
        rhs_file: Option<PathBuf>,
        /// 0-based column of the matrix file to split off as b.
        #[arg(long)]
        rhs_column: Option<usize>,
        /// Treat the first line of each CSV as a header.
        #[arg(long)]
        header: bool,
        /// Keep probability.
        #[arg(long)]
        p: f64,
        /// Fixed step size.
        #[arg(long)]
        alpha: f64,
        /// Projection ball radius (the domain bound is radius^2).
        #[arg(long)]
        radius: f64,
    },
    /// Run the masked-gradient method and three imputation baselines from a
    /// config file; write one trace CSV per method.
    CompareImputation {
        /// Experiment config JSON. The mask is frozen per trial by protocol,
        /// so the config's mask_mode is not consulted.
        #[arg(long)]
        config: PathBuf,
    },
    /// Run the built-in oracle and bound self-checks.
    Verify {
        /// Seed for the randomized checks.
        #[arg(long, default_value_t = 6)]
        seed: u64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum GeneratorKind {
    GaussianConsistent,
    GaussianInconsistent,
}

impl GeneratorKind {
    fn name(self) -> &'static str {
        match self {
            GeneratorKind::GaussianConsistent => "gaussian_consistent",
            GeneratorKind::GaussianInconsistent => "gaussian_inconsistent",
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}

/// 2 for anything the user can fix in config or inputs, 3 for numerical
/// failures, 4 for a failed self-check.
fn exit_code(err: &Error) -> u8 {
    match err {
        Error::RankDeficient | Error::EigenNoConvergence { .. } | Error::NonFinite { .. } => 3,
        Error::Verification(_) => 4,
        _ => 2,
    }
}

fn dispatch(command: Command) -> msgd::Result<()> {
    match command {
        Command::Generate {
            generator,
            m,
            n,
            seed,
            residual_scale,
            out_dir,
        } => generate(generator, m, n, seed, residual_scale, &out_dir),
        Command::Solve { config } => solve(&config),
        Command::Bounds {
            matrix,
            rhs_file,
            rhs_column,
            header,
            p,
            alpha,
            radius,
        } => bounds(&matrix, rhs_file, rhs_column, header, p, alpha, radius),
        Command::CompareImputation { config } => compare(&config),
        Command::Verify { seed } => verify(seed),
    }
}

fn generate(
    generator: GeneratorKind,
    m: usize,
    n: usize,
    seed: u64,
    residual_scale: f64,
    out_dir: &Path,
) -> msgd::Result<()> {
    let (problem, scale_used) = match generator {
        GeneratorKind::GaussianConsistent => (gen_gaussian_consistent(m, n, seed)?, 0.0),
        GeneratorKind::GaussianInconsistent => (
            gen_gaussian_inconsistent(m, n, residual_scale, seed)?,
            residual_scale,
        ),
    };
    let digest = args_digest(&serde_json::json!({
        "command": "generate",
        "generator": generator.name(),
        "m": m,
        "n": n,
        "seed": seed,
        "residual_scale": scale_used,
    }));
    std::fs::create_dir_all(out_dir).map_err(|source| Error::Io {
        path: out_dir.to_path_buf(),
        source,
    })?;
    write_matrix_csv(&out_dir.join("a.csv"), problem.a())?;
    write_vector_csv(&out_dir.join("b.csv"), problem.b())?;
    let sidecar =
        ProblemSidecar::describe(&problem, generator.name(), seed, scale_used, digest.clone())?;
    write_sidecar_json(&out_dir.join("meta.json"), &sidecar)?;
    eprintln!(
        "wrote a.csv, b.csv, meta.json to {} (config digest {digest})",
        out_dir.display()
    );
    Ok(())
}

fn solve(config_path: &Path) -> msgd::Result<()> {
    let config = ExperimentConfig::load(config_path)?;
    let base = config_path.parent().unwrap_or(Path::new("."));
    let resolved = config.resolve(base)?;
    let trace = run_trials(
        &resolved.problem,
        &resolved.model,
        &resolved.schedule,
        &resolved.domain,
        resolved.iterations,
        resolved.trial_count,
        resolved.root_seed,
        resolved.record_every,
    )?;
    write_trace_csv(&resolved.output, &trace)?;
    let meta_path = resolved.output.with_extension("meta.json");
    write_run_meta_json(
        &meta_path,
        &RunMeta {
            command: "solve".into(),
            config_digest: resolved.config_digest.clone(),
            outputs: vec![file_name(&resolved.output)],
        },
    )?;
    eprintln!(
        "wrote {} and {} (config digest {})",
        resolved.output.display(),
        meta_path.display(),
        resolved.config_digest
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn bounds(
    matrix: &Path,
    rhs_file: Option<PathBuf>,
    rhs_column: Option<usize>,
    header: bool,
    p: f64,
    alpha: f64,
    radius: f64,
) -> msgd::Result<()> {
    let rhs = match (rhs_file, rhs_column) {
        (Some(path), None) => RhsSpec::File(path),
        (None, Some(column)) => RhsSpec::Column(column),
        _ => {
            return Err(Error::Config(
                "exactly one of --rhs-file or --rhs-column is required".into(),
            ))
        }
    };
    if !(radius.is_finite() && radius > 0.0) {
        return Err(Error::Config(format!(
            "radius must be positive and finite, got {radius}"
        )));
    }
    let problem = load_csv_problem(matrix, &rhs, header, true)?;
    let report = fixed_step_report(
        problem.a(),
        problem.b(),
        problem.require_x_star()?,
        problem.require_residual()?,
        p,
        alpha,
        radius * radius,
    )?;
    let digest = args_digest(&serde_json::json!({
        "command": "bounds",
        "matrix": matrix.display().to_string(),
        "rhs": rhs,
        "header": header,
        "p": p,
        "alpha": alpha,
        "radius": radius,
    }));
    println!(
        "{}",
        serde_json::to_string_pretty(&report)
            .map_err(|e| Error::InvalidParameter(format!("report serialization failed: {e}")))?
    );
    eprintln!("config digest {digest}");
    Ok(())
}

fn compare(config_path: &Path) -> msgd::Result<()> {
    let config = ExperimentConfig::load(config_path)?;
    let base = config_path.parent().unwrap_or(Path::new("."));
    let resolved = config.resolve(base)?;
    let comparison = compare_imputation(
        &resolved.problem,
        resolved.model.keep_probability(),
        &resolved.schedule,
        &resolved.domain,
        resolved.iterations,
        resolved.trial_count,
        resolved.root_seed,
        resolved.record_every,
    )?;
    let mut outputs = Vec::new();
    let msgd_path = suffixed(&resolved.output, "msgd");
    write_trace_csv(&msgd_path, &comparison.msgd)?;
    outputs.push(file_name(&msgd_path));
    for strategy in ImputeStrategy::ALL {
        let path = suffixed(&resolved.output, strategy.name());
        write_trace_csv(&path, comparison.strategy(strategy))?;
        outputs.push(file_name(&path));
    }
    if comparison.fallback_count > 0 {
        eprintln!(
            "note: {} empty row/column imputation fallbacks",
            comparison.fallback_count
        );
    }
    // Distinct meta name so a `solve` run on the same config is not clobbered.
    let meta_path = suffixed(&resolved.output, "compare").with_extension("meta.json");
    write_run_meta_json(
        &meta_path,
        &RunMeta {
            command: "compare-imputation".into(),
            config_digest: resolved.config_digest.clone(),
            outputs,
        },
    )?;
    eprintln!(
        "wrote 4 trace files and {} (config digest {})",
        meta_path.display(),
        resolved.config_digest
    );
    Ok(())
}

fn verify(seed: u64) -> msgd::Result<()> {
    let digest = args_digest(&serde_json::json!({
        "command": "verify",
        "seed": seed,
    }));
    let lines = run_verification(seed)?;
    for line in &lines {
        println!("ok: {line}");
    }
    println!("verification passed ({} checks)", lines.len());
    eprintln!("config digest {digest}");
    Ok(())
}

/// `trace.csv` + `zero` -> `trace_zero.csv`, keeping the directory.
fn suffixed(path: &Path, suffix: &str) -> PathBuf {
    let stem = path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("trace");
    let extension = path.extension().and_then(|s| s.to_str()).unwrap_or("csv");
    path.with_file_name(format!("{stem}_{suffix}.{extension}"))
}

fn file_name(path: &Path) -> String {
    path.file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Digest over a canonical JSON rendering of the resolved arguments;
/// key order is canonical (sorted) in serde_json's default map.
fn args_digest(args: &serde_json::Value) -> String {
    sha256_hex(args.to_string().as_bytes())
}
