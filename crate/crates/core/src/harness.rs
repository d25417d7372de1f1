//! Replicated sequential experiments and their aggregation.
//!
//! Each replication draws `n0` joint pilot samples, fits the prior, then for `N` steps
//! picks an alternative by knowledge gradient, measures it, updates the belief with
//! the chosen rule, and records the opportunity cost of the current best guess.
//!
//! Random streams are keyed by `(master_seed, tag, replication)`: the pilot stream is
//! shared by every rule in a replication (common random numbers), and the sampling
//! stream is keyed by the rule, so results do not depend on rule order or threading.

use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::path::PathBuf;
use std::sync::Mutex;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::belief::{estimate_prior, BeliefState};
use crate::error::{Error, Result};
use crate::kg::select_alternative;
use crate::problems::{calibration_problem, mvn_problem, BoreholeConfig, EmpiricalProblem, Problem};
use crate::sampling::{derive_seed, stream, StreamRng};
use crate::update::{apply, Measurement, SingleObservation, UpdateRule};

const PILOT_TAG: u64 = 0x0050_494c_4f54;
const DESIGN_TAG: u64 = 0x4445_5349_474e;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ProblemSpec {
    Mvn { k: usize, rho: f64 },
    Borehole { x7_levels: usize, design_runs: usize },
    Empirical { data: PathBuf },
}

impl ProblemSpec {
    pub fn name(&self) -> &'static str {
        match self {
            ProblemSpec::Mvn { .. } => "mvn",
            ProblemSpec::Borehole { .. } => "borehole",
            ProblemSpec::Empirical { .. } => "empirical",
        }
    }

    /// Builds the problem. The borehole design is drawn once from `master_seed`.
    pub fn build(&self, master_seed: u64) -> Result<Box<dyn Problem>> {
        Ok(match self {
            ProblemSpec::Mvn { k, rho } => Box::new(mvn_problem(*k, *rho)?),
            ProblemSpec::Borehole { x7_levels, design_runs } => {
                let mut rng = stream(&[master_seed, DESIGN_TAG]);
                let cfg = BoreholeConfig::generate(*x7_levels, *design_runs, &mut rng)?;
                Box::new(calibration_problem(cfg)?)
            }
            ProblemSpec::Empirical { data } => Box::new(EmpiricalProblem::from_csv_path(data)?),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub problem: ProblemSpec,
    pub rules: Vec<UpdateRule>,
    pub steps: usize,
    pub replications: usize,
    pub pilot_count: usize,
    pub q0: f64,
    /// Prior degrees of freedom; `K + 4` when absent.
    pub b0: Option<f64>,
    pub ridge: f64,
    pub master_seed: u64,
}

impl ExperimentConfig {
    pub fn new(problem: ProblemSpec) -> Self {
        Self {
            problem,
            rules: UpdateRule::APPROXIMATE.to_vec(),
            steps: 1000,
            replications: 100,
            pilot_count: 25,
            q0: 1.0,
            b0: None,
            ridge: 1e-6,
            master_seed: 0,
        }
    }

    pub fn b0_for(&self, k: usize) -> f64 {
        self.b0.unwrap_or(k as f64 + 4.0)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidHyperparameter(msg));
        if self.rules.is_empty() {
            return bad("no update rules selected".into());
        }
        for (i, r) in self.rules.iter().enumerate() {
            if self.rules[..i].contains(r) {
                return bad(format!("rule {r} listed twice"));
            }
        }
        if self.steps == 0 {
            return bad("steps must be at least 1".into());
        }
        if self.replications == 0 {
            return bad("replications must be at least 1".into());
        }
        if self.pilot_count < 2 {
            return Err(Error::TooFewPilotSamples(self.pilot_count));
        }
        if !(self.q0.is_finite() && self.q0 > 0.0) {
            return bad(format!("q0 = {}", self.q0));
        }
        if !(self.ridge.is_finite() && self.ridge >= 0.0) {
            return bad(format!("ridge = {}", self.ridge));
        }
        Ok(())
    }

    pub fn replication_seed(&self, rule: UpdateRule, replication: usize) -> u64 {
        derive_seed(&[self.master_seed, rule.stream_tag(), replication as u64])
    }

    pub fn pilot_seed(&self, replication: usize) -> u64 {
        derive_seed(&[self.master_seed, PILOT_TAG, replication as u64])
    }
}

/// Opportunity cost of the current pick, `max_k mu_k - mu_{argmax theta}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub costs: Vec<f64>,
}

/// `max_k mu_k - mu_j` where `j` is the first index maximizing `theta`.
pub fn opportunity_cost(true_means: &DVector<f64>, theta: &DVector<f64>) -> Result<f64> {
    if true_means.len() != theta.len() || theta.is_empty() {
        return Err(Error::DimensionMismatch(format!(
            "{} true means vs {} posterior means",
            true_means.len(),
            theta.len()
        )));
    }
    let mut pick = 0;
    for (i, &v) in theta.iter().enumerate() {
        if v > theta[pick] {
            pick = i;
        }
    }
    Ok(true_means.max() - true_means[pick])
}

pub fn pilot_matrix(problem: &dyn Problem, n0: usize, rng: &mut StreamRng) -> DMatrix<f64> {
    let k = problem.num_alternatives();
    let mut pilot = DMatrix::zeros(n0, k);
    for i in 0..n0 {
        pilot.set_row(i, &problem.sample_all(rng).transpose());
    }
    pilot
}

/// Runs the sequential loop from a fitted prior.
pub fn run_from_prior(
    problem: &dyn Problem,
    rule: UpdateRule,
    mut state: BeliefState,
    steps: usize,
    rng: &mut StreamRng,
) -> Result<Trajectory> {
    let mu = problem.true_means();
    let mut costs = Vec::with_capacity(steps);
    for _ in 0..steps {
        let measurement = if rule.is_single_alternative() {
            let k = select_alternative(&state, rule)?;
            Measurement::Single(SingleObservation::new(k, problem.sample_one(k, rng)))
        } else {
            Measurement::Full(problem.sample_all(rng))
        };
        state = apply(rule, &state, &measurement)?;
        costs.push(opportunity_cost(mu, state.theta())?);
    }
    Ok(Trajectory { costs })
}

/// One replication with its streams derived from the configuration.
pub fn run_replication(problem: &dyn Problem, rule: UpdateRule, cfg: &ExperimentConfig, replication: usize) -> Result<Trajectory> {
    let mut pilot_rng = StreamRng::seed_from_u64(cfg.pilot_seed(replication));
    let pilot = pilot_matrix(problem, cfg.pilot_count, &mut pilot_rng);
    let prior = estimate_prior(&pilot, cfg.b0_for(problem.num_alternatives()), cfg.q0, cfg.ridge)?;
    let mut rng = StreamRng::seed_from_u64(cfg.replication_seed(rule, replication));
    run_from_prior(problem, rule, prior, cfg.steps, &mut rng)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationRecord {
    pub rule: UpdateRule,
    pub replication: usize,
    /// The trajectory, or the reason the replication was abandoned.
    pub outcome: std::result::Result<Trajectory, String>,
}

/// Per-rule aggregate over completed replications.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleSummary {
    pub rule: UpdateRule,
    pub mean_cost: Vec<f64>,
    /// Standard error of the mean; zero when only one replication completed.
    pub stderr: Vec<f64>,
    pub std_dev: Vec<f64>,
    pub completed: usize,
    pub aborted: usize,
}

impl RuleSummary {
    pub fn final_mean(&self) -> f64 {
        self.mean_cost.last().copied().unwrap_or(f64::NAN)
    }

    pub fn final_stderr(&self) -> f64 {
        self.stderr.last().copied().unwrap_or(f64::NAN)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultTable {
    pub steps: usize,
    pub rules: Vec<RuleSummary>,
}

impl ResultTable {
    pub fn rule(&self, rule: UpdateRule) -> Option<&RuleSummary> {
        self.rules.iter().find(|r| r.rule == rule)
    }

    pub fn aborted(&self) -> usize {
        self.rules.iter().map(|r| r.aborted).sum()
    }

    /// Header `rule,step,mean_cost,stderr,std_dev,completed,aborted`, steps from 1.
    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "rule,step,mean_cost,stderr,std_dev,completed,aborted")?;
        for r in &self.rules {
            for n in 0..self.steps {
                writeln!(
                    w,
                    "{},{},{},{},{},{},{}",
                    r.rule,
                    n + 1,
                    r.mean_cost[n],
                    r.stderr[n],
                    r.std_dev[n],
                    r.completed,
                    r.aborted
                )?;
            }
        }
        Ok(())
    }
}

/// Aggregates records rule by rule in the order given by `rules`. Within a rule,
/// replications are combined in increasing index order.
pub fn aggregate(rules: &[UpdateRule], steps: usize, records: &[ReplicationRecord]) -> ResultTable {
    let summaries = rules
        .iter()
        .map(|&rule| {
            let mut mine: Vec<&ReplicationRecord> = records.iter().filter(|r| r.rule == rule).collect();
            mine.sort_by_key(|r| r.replication);
            let done: Vec<&Trajectory> = mine.iter().filter_map(|r| r.outcome.as_ref().ok()).collect();
            let aborted = mine.len() - done.len();
            let n = done.len();
            let mut mean_cost = vec![f64::NAN; steps];
            let mut std_dev = vec![f64::NAN; steps];
            let mut stderr = vec![f64::NAN; steps];
            for s in 0..steps {
                if n == 0 {
                    continue;
                }
                let mean = done.iter().map(|t| t.costs[s]).sum::<f64>() / n as f64;
                let sd = if n > 1 {
                    (done.iter().map(|t| (t.costs[s] - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
                } else {
                    0.0
                };
                mean_cost[s] = mean;
                std_dev[s] = sd;
                stderr[s] = sd / (n as f64).sqrt();
            }
            RuleSummary {
                rule,
                mean_cost,
                stderr,
                std_dev,
                completed: n,
                aborted,
            }
        })
        .collect();
    ResultTable { steps, rules: summaries }
}

/// Receives each replication as soon as it finishes. Calls may come from several
/// threads; implementations serialize their own writes.
pub trait RecordSink: Sync {
    fn record(&self, record: &ReplicationRecord) -> std::io::Result<()>;
}

/// Streams raw rows `rule,replication,step,cost` to a writer; aborted replications
/// produce one row with an empty step and the reason in place of the cost.
pub struct RawCsvSink<W: Write + Send> {
    inner: Mutex<W>,
}

impl<W: Write + Send> RawCsvSink<W> {
    pub fn new(mut w: W) -> std::io::Result<Self> {
        writeln!(w, "rule,replication,step,cost")?;
        Ok(Self { inner: Mutex::new(w) })
    }

    pub fn into_inner(self) -> W {
        self.inner.into_inner().unwrap_or_else(|e| e.into_inner())
    }
}

pub fn write_raw_rows(w: &mut impl Write, record: &ReplicationRecord) -> std::io::Result<()> {
    match &record.outcome {
        Ok(t) => {
            for (n, c) in t.costs.iter().enumerate() {
                writeln!(w, "{},{},{},{}", record.rule, record.replication, n + 1, c)?;
            }
        }
        Err(reason) => {
            writeln!(w, "{},{},,\"aborted: {}\"", record.rule, record.replication, reason.replace('"', "'"))?;
        }
    }
    Ok(())
}

impl<W: Write + Send> RecordSink for RawCsvSink<W> {
    fn record(&self, record: &ReplicationRecord) -> std::io::Result<()> {
        let mut w = self.inner.lock().unwrap_or_else(|e| e.into_inner());
        write_raw_rows(&mut *w, record)?;
        w.flush()
    }
}

/// Reads rows written by [`RawCsvSink`] or [`write_raw_rows`] back into records.
pub fn read_raw_csv(reader: impl BufRead) -> Result<Vec<ReplicationRecord>> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut records: Vec<ReplicationRecord> = Vec::new();
    let mut index: HashMap<(UpdateRule, usize), usize> = HashMap::new();
    for row in rdr.records() {
        let row = row.map_err(|e| Error::Parse(e.to_string()))?;
        let field = |i: usize| row.get(i).unwrap_or("");
        let rule: UpdateRule = field(0).parse()?;
        let replication: usize = field(1).parse().map_err(|_| Error::Parse(format!("replication {:?}", field(1))))?;
        let pos = index.get(&(rule, replication)).copied();
        if pos.is_none() {
            index.insert((rule, replication), records.len());
        }
        if field(2).is_empty() {
            let reason = field(3).trim_start_matches("aborted: ").to_string();
            match pos {
                Some(i) => records[i].outcome = Err(reason),
                None => records.push(ReplicationRecord {
                    rule,
                    replication,
                    outcome: Err(reason),
                }),
            }
            continue;
        }
        let cost: f64 = field(3).parse().map_err(|_| Error::Parse(format!("cost {:?}", field(3))))?;
        match pos {
            Some(i) => {
                if let Ok(t) = &mut records[i].outcome {
                    t.costs.push(cost);
                }
            }
            None => records.push(ReplicationRecord {
                rule,
                replication,
                outcome: Ok(Trajectory { costs: vec![cost] }),
            }),
        }
    }
    Ok(records)
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub table: ResultTable,
    /// Sorted by rule (in configuration order), then replication.
    pub records: Vec<ReplicationRecord>,
}

/// Runs every `(rule, replication)` pair on the current rayon pool.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutput> {
    run_experiment_with_sink(cfg, None)
}

pub fn run_experiment_with_sink(cfg: &ExperimentConfig, sink: Option<&dyn RecordSink>) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let problem = cfg.problem.build(cfg.master_seed)?;
    let problem: &dyn Problem = problem.as_ref();
    let jobs: Vec<(UpdateRule, usize)> = cfg
        .rules
        .iter()
        .flat_map(|&rule| (0..cfg.replications).map(move |rep| (rule, rep)))
        .collect();
    let records = jobs
        .par_iter()
        .map(|&(rule, replication)| {
            let outcome = match run_replication(problem, rule, cfg, replication) {
                Ok(t) => Ok(t),
                Err(Error::NotPositiveDefinite(msg)) => Err(format!("not positive definite: {msg}")),
                Err(e) => return Err(e),
            };
            let record = ReplicationRecord {
                rule,
                replication,
                outcome,
            };
            if let Some(sink) = sink {
                sink.record(&record)
                    .map_err(|e| Error::Parse(format!("writing raw record: {e}")))?;
            }
            Ok(record)
        })
        .collect::<Result<Vec<_>>>()?;
    let table = aggregate(&cfg.rules, cfg.steps, &records);
    Ok(ExperimentOutput { table, records })
}

/// Runs on a dedicated pool with `threads` workers (or rayon's default when `None`).
pub fn run_experiment_threads(
    cfg: &ExperimentConfig,
    threads: Option<usize>,
    sink: Option<&dyn RecordSink>,
) -> Result<ExperimentOutput> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = threads {
        builder = builder.num_threads(t);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::InvalidHyperparameter(format!("thread pool: {e}")))?;
    pool.install(|| run_experiment_with_sink(cfg, sink))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(rules: Vec<UpdateRule>) -> ExperimentConfig {
        ExperimentConfig {
            rules,
            steps: 15,
            replications: 4,
            pilot_count: 6,
            master_seed: 11,
            ..ExperimentConfig::new(ProblemSpec::Mvn { k: 4, rho: 0.5 })
        }
    }

    #[test]
    fn cost_examples() {
        let mu = DVector::from_vec(vec![0.2, 0.9]);
        assert!((opportunity_cost(&mu, &DVector::from_vec(vec![1.0, 0.0])).unwrap() - 0.7).abs() < 1e-15);
        assert_eq!(opportunity_cost(&mu, &DVector::from_vec(vec![0.0, 1.0])).unwrap(), 0.0);
        let flat = DVector::from_element(3, 0.4);
        assert_eq!(opportunity_cost(&flat, &DVector::from_vec(vec![3.0, 1.0, 2.0])).unwrap(), 0.0);
        // ties in theta go to the first index
        assert!((opportunity_cost(&mu, &DVector::from_vec(vec![0.5, 0.5])).unwrap() - 0.7).abs() < 1e-15);
    }

    #[test]
    fn rule_order_does_not_matter() {
        let a = run_experiment(&small(vec![UpdateRule::Kl, UpdateRule::Moment])).unwrap();
        let b = run_experiment(&small(vec![UpdateRule::Moment, UpdateRule::Kl])).unwrap();
        assert_eq!(a.table.rule(UpdateRule::Kl), b.table.rule(UpdateRule::Kl));
        assert_eq!(a.table.rule(UpdateRule::Moment), b.table.rule(UpdateRule::Moment));
    }

    #[test]
    fn single_replication_has_zero_stderr() {
        let mut cfg = small(vec![UpdateRule::MomentKl]);
        cfg.replications = 1;
        let out = run_experiment(&cfg).unwrap();
        assert!(out.table.rules[0].stderr.iter().all(|&s| s == 0.0));
    }

    #[test]
    fn full_conjugate_baseline_runs() {
        let out = run_experiment(&small(vec![UpdateRule::FullConjugate])).unwrap();
        assert_eq!(out.table.rules[0].completed, 4);
    }

    #[test]
    fn rejects_bad_config() {
        let mut cfg = small(vec![UpdateRule::Kl, UpdateRule::Kl]);
        assert!(cfg.validate().is_err());
        cfg.rules = vec![UpdateRule::Kl];
        cfg.pilot_count = 1;
        assert!(matches!(cfg.validate(), Err(Error::TooFewPilotSamples(1))));
    }
}
