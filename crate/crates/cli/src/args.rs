//! Command-line grammar and its validation.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::error::{ContextKind, ContextValue, ErrorKind};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rs_engine::harness::{ExperimentConfig, ProblemSpec};
use rs_engine::update::UpdateRule;
use rs_engine::verify::SuiteConfig;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CliError {
    #[error("unknown flag {0}")]
    UnknownFlag(String),
    #[error("missing required flag {0}")]
    MissingRequired(String),
    #[error("invalid value for {flag}: {reason}")]
    InvalidValue { flag: String, reason: String },
    #[error("{0}")]
    Usage(String),
    /// Help or version text; not an error for the exit code.
    #[error("{0}")]
    Help(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Help(_) => 0,
            _ => 2,
        }
    }

    fn invalid(flag: &str, reason: impl Into<String>) -> Self {
        CliError::InvalidValue {
            flag: flag.to_string(),
            reason: reason.into(),
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "rs-engine", version, about = "Sequential Bayesian ranking and selection experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run replicated experiments and write the aggregate CSV plus a manifest.
    Run(RunFlags),
    /// Check the closed-form updates against Monte Carlo oracles.
    Verify(VerifyFlags),
    /// Print a problem's alternatives, true means and covariance.
    Describe(DescribeFlags),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ProblemKind {
    Mvn,
    Borehole,
    Empirical,
}

#[derive(Debug, Args)]
struct ProblemFlags {
    /// Sampling environment.
    #[arg(long, value_enum)]
    problem: Option<ProblemKind>,
    /// Number of alternatives (mvn).
    #[arg(long = "k", default_value_t = 9)]
    k: usize,
    /// Correlation parameter in [0, 1) (mvn).
    #[arg(long, default_value_t = 0.5, allow_negative_numbers = true)]
    rho: f64,
    /// Levels of x7, 10 or 17 (borehole).
    #[arg(long = "x7-levels", default_value_t = 10)]
    x7_levels: usize,
    /// Latin hypercube runs over the control inputs (borehole).
    #[arg(long = "design-runs", default_value_t = 8)]
    design_runs: usize,
    /// CSV of joint observations with a header of labels (empirical).
    #[arg(long)]
    data: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct RunFlags {
    #[command(flatten)]
    problem: ProblemFlags,
    /// Comma-separated update rules: kl, moment, moment-kl, full.
    #[arg(long, value_delimiter = ',', default_value = "kl,moment,moment-kl")]
    rules: Vec<UpdateRule>,
    #[arg(long, default_value_t = 1000)]
    steps: usize,
    #[arg(long, default_value_t = 500)]
    reps: usize,
    /// Joint pilot samples used to fit the prior.
    #[arg(long, default_value_t = 25)]
    pilot: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1.0)]
    q0: f64,
    /// Prior degrees of freedom (default K + 4).
    #[arg(long)]
    b0: Option<f64>,
    #[arg(long, default_value_t = 1e-6)]
    ridge: f64,
    /// Aggregate CSV path; the manifest is written beside it.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Optional per-replication CSV.
    #[arg(long)]
    raw: Option<PathBuf>,
    /// Worker threads (RS_ENGINE_THREADS takes precedence).
    #[arg(long)]
    threads: Option<usize>,
    /// Re-run the configuration recorded in a manifest.
    #[arg(long, conflicts_with_all = ["problem", "rules", "steps", "reps", "pilot", "seed", "q0", "b0", "ridge"])]
    manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct VerifyFlags {
    #[arg(long, default_value_t = 100_000)]
    draws: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Random states per check.
    #[arg(long, default_value_t = 4)]
    states: usize,
    /// Allowed |estimate - target| in standard errors.
    #[arg(long = "z", default_value_t = 4.0)]
    z_limit: f64,
}

#[derive(Debug, Args)]
struct DescribeFlags {
    #[command(flatten)]
    problem: ProblemFlags,
    /// Seed for the borehole design.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum RunSource {
    Config(ExperimentConfig),
    Manifest(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunPlan {
    pub source: RunSource,
    /// Required unless a manifest supplies it.
    pub out: Option<PathBuf>,
    pub raw: Option<PathBuf>,
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum CliInvocation {
    Run(RunPlan),
    Verify(SuiteConfig),
    Describe { problem: ProblemSpec, seed: u64 },
}

fn problem_spec(flags: &ProblemFlags) -> Result<ProblemSpec, CliError> {
    let kind = flags.problem.ok_or_else(|| CliError::MissingRequired("--problem".into()))?;
    Ok(match kind {
        ProblemKind::Mvn => {
            if !(0.0..1.0).contains(&flags.rho) {
                return Err(CliError::invalid("--rho", format!("{} is outside [0, 1)", flags.rho)));
            }
            if flags.k < 2 {
                return Err(CliError::invalid("--k", "need at least 2 alternatives"));
            }
            ProblemSpec::Mvn {
                k: flags.k,
                rho: flags.rho,
            }
        }
        ProblemKind::Borehole => {
            if flags.x7_levels != 10 && flags.x7_levels != 17 {
                return Err(CliError::invalid("--x7-levels", "must be 10 or 17"));
            }
            if flags.design_runs == 0 {
                return Err(CliError::invalid("--design-runs", "must be at least 1"));
            }
            ProblemSpec::Borehole {
                x7_levels: flags.x7_levels,
                design_runs: flags.design_runs,
            }
        }
        ProblemKind::Empirical => ProblemSpec::Empirical {
            data: flags.data.clone().ok_or_else(|| CliError::MissingRequired("--data".into()))?,
        },
    })
}

fn known_k(spec: &ProblemSpec) -> Option<usize> {
    match spec {
        ProblemSpec::Mvn { k, .. } => Some(*k),
        ProblemSpec::Borehole { x7_levels, .. } => Some(3 * x7_levels),
        ProblemSpec::Empirical { .. } => None,
    }
}

fn run_plan(flags: RunFlags) -> Result<RunPlan, CliError> {
    if flags.threads == Some(0) {
        return Err(CliError::invalid("--threads", "must be at least 1"));
    }
    let source = match flags.manifest {
        Some(path) => RunSource::Manifest(path),
        None => {
            let problem = problem_spec(&flags.problem)?;
            if flags.out.is_none() {
                return Err(CliError::MissingRequired("--out".into()));
            }
            if flags.steps == 0 {
                return Err(CliError::invalid("--steps", "must be at least 1"));
            }
            if flags.reps == 0 {
                return Err(CliError::invalid("--reps", "must be at least 1"));
            }
            if flags.pilot < 2 {
                return Err(CliError::invalid("--pilot", "need at least 2 pilot samples"));
            }
            if !(flags.q0.is_finite() && flags.q0 > 0.0) {
                return Err(CliError::invalid("--q0", "must be positive"));
            }
            if !(flags.ridge.is_finite() && flags.ridge >= 0.0) {
                return Err(CliError::invalid("--ridge", "must be nonnegative"));
            }
            if let (Some(b0), Some(k)) = (flags.b0, known_k(&problem)) {
                if !(b0 > k as f64 + 1.0) {
                    return Err(CliError::invalid("--b0", format!("must exceed K + 1 = {}", k + 1)));
                }
            }
            let mut rules = Vec::new();
            for r in flags.rules {
                if rules.contains(&r) {
                    return Err(CliError::invalid("--rules", format!("{r} listed twice")));
                }
                rules.push(r);
            }
            RunSource::Config(ExperimentConfig {
                problem,
                rules,
                steps: flags.steps,
                replications: flags.reps,
                pilot_count: flags.pilot,
                q0: flags.q0,
                b0: flags.b0,
                ridge: flags.ridge,
                master_seed: flags.seed,
            })
        }
    };
    Ok(RunPlan {
        source,
        out: flags.out,
        raw: flags.raw,
        threads: flags.threads,
    })
}

fn from_clap(err: clap::Error) -> CliError {
    let arg = || match err.get(ContextKind::InvalidArg) {
        Some(ContextValue::String(s)) => s.clone(),
        Some(ContextValue::Strings(v)) => v.join(", "),
        _ => String::new(),
    };
    match err.kind() {
        ErrorKind::DisplayHelp | ErrorKind::DisplayVersion | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => {
            CliError::Help(err.render().to_string())
        }
        ErrorKind::UnknownArgument => CliError::UnknownFlag(arg()),
        ErrorKind::MissingRequiredArgument | ErrorKind::MissingSubcommand => CliError::MissingRequired(arg()),
        ErrorKind::InvalidValue | ErrorKind::ValueValidation | ErrorKind::InvalidUtf8 => {
            let value = match err.get(ContextKind::InvalidValue) {
                Some(ContextValue::String(s)) => s.clone(),
                _ => String::new(),
            };
            let reason = match err.source() {
                Some(src) => format!("{value:?}: {src}"),
                None => format!("{value:?} is not accepted"),
            };
            CliError::InvalidValue { flag: arg(), reason }
        }
        _ => CliError::Usage(err.render().to_string()),
    }
}

use std::error::Error as _;

/// Parses `argv` (including the program name) into a validated invocation.
pub fn parse_args<I, T>(argv: I) -> Result<CliInvocation, CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(argv).map_err(from_clap)?;
    match cli.command {
        Command::Run(flags) => Ok(CliInvocation::Run(run_plan(flags)?)),
        Command::Verify(flags) => {
            if flags.draws < rs_engine::oracle::MIN_DRAWS {
                return Err(CliError::invalid(
                    "--draws",
                    format!("need at least {}", rs_engine::oracle::MIN_DRAWS),
                ));
            }
            if flags.states == 0 {
                return Err(CliError::invalid("--states", "must be at least 1"));
            }
            if !(flags.z_limit > 0.0) {
                return Err(CliError::invalid("--z", "must be positive"));
            }
            Ok(CliInvocation::Verify(SuiteConfig {
                draws: flags.draws,
                seed: flags.seed,
                states: flags.states,
                z_limit: flags.z_limit,
            }))
        }
        Command::Describe(flags) => Ok(CliInvocation::Describe {
            problem: problem_spec(&flags.problem)?,
            seed: flags.seed,
        }),
    }
}
