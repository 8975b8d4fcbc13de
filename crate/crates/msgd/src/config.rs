//! Experiment configuration: the JSON schema, named presets, validation,
//! and resolution into ready-to-run pieces.

use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::Error;
use crate::experiments::{gen_gaussian_consistent, gen_gaussian_inconsistent, Problem};
use crate::io::{load_csv_problem, RhsSpec};
use crate::masking::{MaskMode, MaskModel};
use crate::solver::{ProjectionDomain, Schedule};
use crate::Result;

/// Multiplier for the `"auto"` projection radius: comfortably contains the
/// reference solution without user tuning.
const AUTO_RADIUS_FACTOR: f64 = 10.0;

/// One experiment, as written in a config JSON file. Unknown fields are
/// rejected so typos fail loudly instead of silently using defaults.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: ProblemSpec,
    /// Keep probability for each matrix entry.
    pub p: f64,
    pub mask_mode: MaskMode,
    pub schedule: Schedule,
    /// Projection ball radius, or `"auto"` for 10x the reference norm.
    pub radius: RadiusSpec,
    pub iterations: u64,
    pub trial_count: u64,
    pub record_every: u64,
    pub root_seed: u64,
    /// Trace CSV destination, relative to the config file unless absolute.
    pub output: PathBuf,
}

/// Where the linear system comes from.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProblemSpec {
    /// Standard-Gaussian matrix with a planted solution, `b = A x*`.
    GaussianConsistent { m: usize, n: usize, seed: u64 },
    /// Same, then a least-squares-null residual of relative size
    /// `residual_scale` is folded into `b`.
    GaussianInconsistent {
        m: usize,
        n: usize,
        residual_scale: f64,
        seed: u64,
    },
    /// User-supplied CSV matrix plus right-hand side.
    Csv {
        matrix: PathBuf,
        rhs: RhsSpec,
        #[serde(default)]
        header: bool,
    },
}

/// Either a literal radius or the string `"auto"`.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(untagged)]
pub enum RadiusSpec {
    Fixed(f64),
    Named(String),
}

impl RadiusSpec {
    pub fn auto() -> Self {
        RadiusSpec::Named("auto".into())
    }

    fn validate(&self) -> Result<()> {
        match self {
            RadiusSpec::Fixed(r) if r.is_finite() && *r > 0.0 => Ok(()),
            RadiusSpec::Fixed(r) => Err(Error::Config(format!(
                "radius must be positive and finite, got {r}"
            ))),
            RadiusSpec::Named(s) if s == "auto" => Ok(()),
            RadiusSpec::Named(s) => Err(Error::Config(format!(
                "radius must be a positive number or \"auto\", got {s:?}"
            ))),
        }
    }
}

/// A validated configuration with data loaded and every knob concrete.
#[derive(Debug, Clone)]
pub struct ResolvedExperiment {
    pub problem: Problem,
    pub model: MaskModel,
    pub schedule: Schedule,
    pub domain: ProjectionDomain,
    pub iterations: u64,
    pub trial_count: u64,
    pub record_every: u64,
    pub root_seed: u64,
    /// Output path, made relative to the config file's directory.
    pub output: PathBuf,
    /// SHA-256 of the canonical config JSON; stamped into run metadata.
    pub config_digest: String,
}

impl ExperimentConfig {
    /// Parses a config from JSON text, rejecting unknown fields.
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads and parses a config file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Seconds-fast default: 200x20 Gaussian consistent system, 20 trials.
    pub fn desk_preset() -> Self {
        Self {
            problem: ProblemSpec::GaussianConsistent {
                m: 200,
                n: 20,
                seed: 1,
            },
            p: 0.7,
            mask_mode: MaskMode::ResampleEachIteration,
            schedule: Schedule::Fixed { alpha: 1e-4 },
            radius: RadiusSpec::auto(),
            iterations: 200_000,
            trial_count: 20,
            record_every: 1_000,
            root_seed: 7,
            output: PathBuf::from("trace.csv"),
        }
    }

    /// Headline-scale preset: 1000x200, same protocol, minutes not seconds.
    pub fn large_preset() -> Self {
        Self {
            problem: ProblemSpec::GaussianConsistent {
                m: 1_000,
                n: 200,
                seed: 1,
            },
            iterations: 500_000,
            ..Self::desk_preset()
        }
    }

    /// Named preset lookup for the CLI.
    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "desk" => Ok(Self::desk_preset()),
            "large" => Ok(Self::large_preset()),
            other => Err(Error::Config(format!(
                "unknown preset {other:?}; available: desk, large"
            ))),
        }
    }

    /// Field-level validation that needs no file access.
    pub fn validate(&self) -> Result<()> {
        if !(self.p.is_finite() && self.p > 0.0 && self.p <= 1.0) {
            return Err(Error::Config(format!(
                "p must satisfy 0 < p <= 1, got {}",
                self.p
            )));
        }
        self.schedule
            .validate()
            .map_err(|e| Error::Config(e.to_string()))?;
        self.radius.validate()?;
        if self.iterations < 1 {
            return Err(Error::Config("iterations must be at least 1".into()));
        }
        if self.trial_count < 1 {
            return Err(Error::Config("trial_count must be at least 1".into()));
        }
        if self.record_every < 1 {
            return Err(Error::Config("record_every must be at least 1".into()));
        }
        if let ProblemSpec::GaussianConsistent { m, n, .. }
        | ProblemSpec::GaussianInconsistent { m, n, .. } = &self.problem
        {
            if *m == 0 || *n == 0 {
                return Err(Error::Config("m and n must be positive".into()));
            }
        }
        Ok(())
    }

    /// Canonical digest: SHA-256 over the re-serialized config, so
    /// formatting and key-ordering quirks of the source file do not matter.
    pub fn digest(&self) -> String {
        let canonical =
            serde_json::to_string(self).expect("config serialization is infallible");
        sha256_hex(canonical.as_bytes())
    }

    /// Validates, loads data (paths relative to `base_dir`), solves for the
    /// reference, and resolves `"auto"` knobs.
    pub fn resolve(&self, base_dir: &Path) -> Result<ResolvedExperiment> {
        self.validate()?;
        let problem = self.problem.build(base_dir)?;
        let radius = match &self.radius {
            RadiusSpec::Fixed(r) => *r,
            RadiusSpec::Named(_) => {
                let norm = problem.require_x_star()?.norm();
                if norm == 0.0 {
                    return Err(Error::Config(
                        "auto radius is undefined for a zero reference solution; \
                         set a numeric radius"
                            .into(),
                    ));
                }
                AUTO_RADIUS_FACTOR * norm
            }
        };
        Ok(ResolvedExperiment {
            problem,
            model: MaskModel::new(self.p, self.mask_mode)?,
            schedule: self.schedule,
            domain: ProjectionDomain::new(radius)?,
            iterations: self.iterations,
            trial_count: self.trial_count,
            record_every: self.record_every,
            root_seed: self.root_seed,
            output: join_base(base_dir, &self.output),
            config_digest: self.digest(),
        })
    }
}

impl ProblemSpec {
    /// Builds or loads the problem; CSV paths resolve against `base_dir`.
    /// Always computes the reference solution, which every runner needs.
    pub fn build(&self, base_dir: &Path) -> Result<Problem> {
        match self {
            ProblemSpec::GaussianConsistent { m, n, seed } => {
                gen_gaussian_consistent(*m, *n, *seed)
            }
            ProblemSpec::GaussianInconsistent {
                m,
                n,
                residual_scale,
                seed,
            } => gen_gaussian_inconsistent(*m, *n, *residual_scale, *seed),
            ProblemSpec::Csv {
                matrix,
                rhs,
                header,
            } => {
                let matrix_path = join_base(base_dir, matrix);
                require_exists(&matrix_path)?;
                let rhs = match rhs {
                    RhsSpec::File(path) => {
                        let resolved = join_base(base_dir, path);
                        require_exists(&resolved)?;
                        RhsSpec::File(resolved)
                    }
                    RhsSpec::Column(c) => RhsSpec::Column(*c),
                };
                load_csv_problem(&matrix_path, &rhs, *header, true)
            }
        }
    }
}

fn join_base(base_dir: &Path, path: &Path) -> PathBuf {
    if path.is_absolute() {
        path.to_path_buf()
    } else {
        base_dir.join(path)
    }
}

fn require_exists(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "referenced file does not exist: {}",
            path.display()
        )))
    }
}

/// Lowercase-hex SHA-256.
pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    let mut out = String::with_capacity(64);
    for byte in digest {
        out.push_str(&format!("{byte:02x}"));
    }
    out
}
