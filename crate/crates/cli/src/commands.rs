//! Execution of parsed invocations.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use rs_engine::harness::{run_experiment_threads, write_raw_rows, ExperimentConfig, ProblemSpec, RawCsvSink, RecordSink};
use rs_engine::verify::{run_suite, SuiteConfig};
use serde::{Deserialize, Serialize};

use crate::args::{CliInvocation, RunPlan, RunSource};

pub const THREADS_ENV: &str = "RS_ENGINE_THREADS";

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {reason}")]
    Manifest { path: PathBuf, reason: String },
    #[error("invalid value for {THREADS_ENV}: {0:?}")]
    ThreadsEnv(String),
    #[error(transparent)]
    Engine(#[from] rs_engine::error::Error),
    #[error("{0} verification check(s) failed")]
    VerifyFailed(usize),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> RunError + '_ {
    move |source| RunError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Everything needed to reproduce an aggregate CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub config: ExperimentConfig,
    /// How the per-replication streams are keyed.
    pub seed_derivation: String,
    pub output: PathBuf,
    pub raw: Option<PathBuf>,
    pub aborted_replications: usize,
}

/// `results.csv` becomes `results.manifest.json`.
pub fn manifest_path(out: &Path) -> PathBuf {
    out.with_extension("manifest.json")
}

pub fn read_manifest(path: &Path) -> Result<Manifest, RunError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|e| RunError::Manifest {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

fn resolve_threads(flag: Option<usize>) -> Result<Option<usize>, RunError> {
    match std::env::var(THREADS_ENV) {
        Ok(v) if !v.trim().is_empty() => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(RunError::ThreadsEnv(v)),
        },
        _ => Ok(flag),
    }
}

fn partial_path(raw: &Path) -> PathBuf {
    let mut name = raw.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".partial");
    raw.with_file_name(name)
}

pub fn run(plan: RunPlan, stdout: &mut dyn Write) -> Result<(), RunError> {
    let (config, out, raw) = match plan.source {
        RunSource::Config(cfg) => (cfg, plan.out.expect("validated by the parser"), plan.raw),
        RunSource::Manifest(path) => {
            let m = read_manifest(&path)?;
            (m.config, plan.out.unwrap_or(m.output), plan.raw.or(m.raw))
        }
    };
    let threads = resolve_threads(plan.threads)?;

    // fail on an unwritable destination before doing any work
    let out_file = File::create(&out).map_err(io_err(&out))?;
    let result = execute_run(config, &out, out_file, raw, threads, stdout);
    if result.is_err() {
        let _ = fs::remove_file(&out);
    }
    result
}

fn execute_run(
    config: ExperimentConfig,
    out: &Path,
    out_file: File,
    raw: Option<PathBuf>,
    threads: Option<usize>,
    stdout: &mut dyn Write,
) -> Result<(), RunError> {
    let output = match &raw {
        Some(raw_path) => {
            let partial = partial_path(raw_path);
            let file = File::create(&partial).map_err(io_err(&partial))?;
            let sink = RawCsvSink::new(BufWriter::new(file)).map_err(io_err(&partial))?;
            let output = run_experiment_threads(&config, threads, Some(&sink as &dyn RecordSink))?;
            drop(sink.into_inner());
            // rewrite in a deterministic order once every replication is in
            let mut w = BufWriter::new(File::create(raw_path).map_err(io_err(raw_path))?);
            writeln!(w, "rule,replication,step,cost").map_err(io_err(raw_path))?;
            for record in &output.records {
                write_raw_rows(&mut w, record).map_err(io_err(raw_path))?;
            }
            w.flush().map_err(io_err(raw_path))?;
            fs::remove_file(&partial).map_err(io_err(&partial))?;
            output
        }
        None => run_experiment_threads(&config, threads, None)?,
    };

    let mut w = BufWriter::new(out_file);
    output.table.write_csv(&mut w).map_err(io_err(out))?;
    w.flush().map_err(io_err(out))?;

    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        config,
        seed_derivation: "per replication: pilot stream from (seed, pilot tag, replication), \
            measurement stream from (seed, rule tag, replication); borehole design from (seed, design tag)"
            .into(),
        output: out.to_path_buf(),
        raw,
        aborted_replications: output.table.aborted(),
    };
    let mpath = manifest_path(out);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&mpath, text + "\n").map_err(io_err(&mpath))?;

    let _ = writeln!(stdout, "rule        final_mean_cost   stderr      completed  aborted");
    for r in &output.table.rules {
        let _ = writeln!(
            stdout,
            "{:<11} {:<17.6} {:<11.6} {:<10} {}",
            r.rule.name(),
            r.final_mean(),
            r.final_stderr(),
            r.completed,
            r.aborted
        );
    }
    let _ = writeln!(stdout, "wrote {} and {}", out.display(), mpath.display());
    Ok(())
}

pub fn verify(cfg: &SuiteConfig, stdout: &mut dyn Write) -> Result<(), RunError> {
    let outcomes = run_suite(cfg)?;
    for o in &outcomes {
        let _ = writeln!(stdout, "{o}");
    }
    let failed = outcomes.iter().filter(|o| !o.passed).count();
    if failed > 0 {
        return Err(RunError::VerifyFailed(failed));
    }
    Ok(())
}

pub fn describe(problem: &ProblemSpec, seed: u64, stdout: &mut dyn Write) -> Result<(), RunError> {
    let p = problem.build(seed)?;
    let k = p.num_alternatives();
    let mut text = String::new();
    text.push_str(&format!("problem: {}\nalternatives: {k}\n", problem.name()));
    text.push_str("true means:\n");
    for (i, m) in p.true_means().iter().enumerate() {
        text.push_str(&format!("  {:<24} {m}\n", p.label(i)));
    }
    if let Some(cov) = p.covariance() {
        text.push_str("covariance:\n");
        for row in cov.row_iter() {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:>8}")).collect();
            text.push_str(&format!("  {}\n", cells.join(" ")));
        }
    }
    let _ = stdout.write_all(text.as_bytes());
    Ok(())
}

/// Runs an invocation and returns the process exit code.
pub fn execute(invocation: CliInvocation, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32 {
    let result = match invocation {
        CliInvocation::Run(plan) => run(plan, stdout),
        CliInvocation::Verify(cfg) => verify(&cfg, stdout),
        CliInvocation::Describe { problem, seed } => describe(&problem, seed, stdout),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            1
        }
    }
}
