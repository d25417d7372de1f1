//! Numerical self-checks of the closed-form updates and the knowledge-gradient
//! evaluator against the Monte Carlo oracles.
//!
//! Every check reports each Monte Carlo comparison as a z-score
//! `(estimate - target) / se` and passes when all of them stay within `z_limit`.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore};
use rand_distr::{Distribution, StandardNormal, StudentT};

use crate::error::Result;
use crate::kg::{expected_max_affine, value_of_information};
use crate::oracle::{
    decomposition_moments, dkl_objective, estimate_decomposition_moments, oracle_posterior_mean,
    oracle_tilde_sigma_mean, random_observation, random_state,
};
use crate::sampling::stream;
use crate::update::{update_moment, update_moment_kl, UpdateRule};

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    /// Number of individual comparisons made.
    pub comparisons: usize,
    /// Number of comparisons outside tolerance.
    pub failures: usize,
    /// Largest `|z|` seen, or the largest violation for deterministic checks.
    pub worst: f64,
    pub detail: String,
}

impl fmt::Display for CheckOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} {}: {}/{} within tolerance, worst {:.3}; {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            self.comparisons - self.failures,
            self.comparisons,
            self.worst,
            self.detail
        )
    }
}

/// Accumulates z-scores.
#[derive(Debug, Clone)]
pub struct ZTally {
    limit: f64,
    count: usize,
    failures: usize,
    max_abs: f64,
}

impl ZTally {
    pub fn new(limit: f64) -> Self {
        Self {
            limit,
            count: 0,
            failures: 0,
            max_abs: 0.0,
        }
    }

    /// A standard error at rounding level marks a quantity the sampler reproduces
    /// exactly; it then has to agree to a relative `1e-9`.
    pub fn compare(&mut self, estimate: f64, target: f64, se: f64) {
        let diff = estimate - target;
        let magnitude = target.abs().max(estimate.abs());
        let z = if se > 1e-12 * magnitude {
            diff / se
        } else if diff.abs() <= 1e-9 * magnitude.max(1e-300) {
            0.0
        } else {
            f64::INFINITY
        };
        self.count += 1;
        if !(z.abs() <= self.limit) {
            self.failures += 1;
        }
        self.max_abs = self.max_abs.max(z.abs());
    }

    pub fn compare_vec(&mut self, estimate: &DVector<f64>, target: &DVector<f64>, se: &DVector<f64>) {
        for i in 0..estimate.len() {
            self.compare(estimate[i], target[i], se[i]);
        }
    }

    /// Compares the upper triangle (including the diagonal) of symmetric matrices.
    pub fn compare_sym(&mut self, estimate: &DMatrix<f64>, target: &DMatrix<f64>, se: &DMatrix<f64>) {
        for j in 0..estimate.ncols() {
            for i in 0..=j {
                self.compare(estimate[(i, j)], target[(i, j)], se[(i, j)]);
            }
        }
    }

    pub fn outcome(&self, name: &'static str, detail: String) -> CheckOutcome {
        CheckOutcome {
            name,
            passed: self.failures == 0 && self.count > 0,
            comparisons: self.count,
            failures: self.failures,
            worst: self.max_abs,
            detail,
        }
    }
}

/// Moment update against both oracles: `theta'` against the importance-sampling
/// posterior mean and `B' / (b' - K - 1)` against the decomposition sampler.
pub fn check_moment_update(states: usize, k: usize, draws: usize, bound: f64, z_limit: f64, seed: u64) -> Result<CheckOutcome> {
    let mut tally = ZTally::new(z_limit);
    let mut min_ess = f64::INFINITY;
    for i in 0..states {
        let mut rng = stream(&[seed, 1, i as u64]);
        let state = random_state(k, &mut rng)?;
        let obs = random_observation(&state, bound, &mut rng);
        let next = update_moment(&state, &obs)?;
        let is = oracle_posterior_mean(&state, &obs, draws, &mut rng)?;
        min_ess = min_ess.min(is.ess);
        tally.compare_vec(&is.mean, next.theta(), &is.se_mean);
        let decomposition = oracle_tilde_sigma_mean(&state, &obs, draws, &mut rng)?;
        tally.compare_sym(&decomposition.scale, &next.posterior_sigma_mean().matrix, &decomposition.se_scale);
    }
    Ok(tally.outcome(
        "moment-update-vs-oracles",
        format!("{states} states, K = {k}, {draws} draws, min ESS {min_ess:.0}"),
    ))
}

/// The importance sampler and the decomposition sampler estimate the same
/// `E[mu | y]` and `E[Sigma~ | y]`.
pub fn check_oracles_agree(states: usize, k: usize, draws: usize, bound: f64, z_limit: f64, seed: u64) -> Result<CheckOutcome> {
    let mut tally = ZTally::new(z_limit);
    for i in 0..states {
        let mut rng = stream(&[seed, 2, i as u64]);
        let state = random_state(k, &mut rng)?;
        let obs = random_observation(&state, bound, &mut rng);
        let is = oracle_posterior_mean(&state, &obs, draws, &mut rng)?;
        let dec = oracle_tilde_sigma_mean(&state, &obs, draws, &mut rng)?;
        let se_mean = is.se_mean.zip_map(&dec.se_mean, |a, b| a.hypot(b));
        let se_scale = is.se_scale.zip_map(&dec.se_scale, |a, b| a.hypot(b));
        tally.compare_vec(&is.mean, &dec.mean, &se_mean);
        tally.compare_sym(&is.scale, &dec.scale, &se_scale);
    }
    Ok(tally.outcome(
        "importance-vs-decomposition",
        format!("{states} states, K = {k}, {draws} draws each"),
    ))
}

/// Closed-form block moments against the decomposition sampler.
pub fn check_block_moments(states: usize, k: usize, draws: usize, bound: f64, z_limit: f64, seed: u64) -> Result<CheckOutcome> {
    let mut tally = ZTally::new(z_limit);
    for i in 0..states {
        let mut rng = stream(&[seed, 3, i as u64]);
        let state = random_state(k, &mut rng)?;
        let obs = random_observation(&state, bound, &mut rng);
        let exact = decomposition_moments(&state, &obs)?;
        let est = estimate_decomposition_moments(&state, &obs, draws, &mut rng)?;
        tally.compare_sym(&est.a_mat.0, &exact.a_mat, &est.a_mat.1);
        tally.compare(est.c.0, exact.c, est.c.1);
        tally.compare_vec(&est.a_tilde.0, &exact.a_tilde, &est.a_tilde.1);
        tally.compare_sym(&est.caa.0, &exact.caa, &est.caa.1);
    }
    Ok(tally.outcome(
        "block-moments-vs-sampler",
        format!("{states} states, K = {k}, {draws} draws each"),
    ))
}

/// `(I + eps E) B (I + eps E)^T` with `E` standard normal: a PD perturbation of `B`.
pub fn perturb(scale: &DMatrix<f64>, eps: f64, rng: &mut (impl RngCore + ?Sized)) -> DMatrix<f64> {
    let n = scale.nrows();
    let e = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
    let m = DMatrix::identity(n, n) + e * eps;
    let out = &m * scale * m.transpose();
    (&out + out.transpose()) * 0.5
}

/// The moment-KL scale is no worse than any nearby PD candidate under the
/// divergence objective. A trial passes when all its perturbations do.
pub fn check_moment_kl_minimizer(states: usize, k: usize, perturbations: usize, eps: f64, seed: u64) -> Result<CheckOutcome> {
    let mut trials = 0;
    let mut failed = 0;
    let mut worst: f64 = f64::NEG_INFINITY;
    for i in 0..states {
        let mut rng = stream(&[seed, 4, i as u64]);
        let state = random_state(k, &mut rng)?;
        let obs = random_observation(&state, 2.0, &mut rng);
        let best = update_moment_kl(&state, &obs)?;
        let at_best = dkl_objective(best.scale(), &state, &obs)?;
        for _ in 0..perturbations {
            let candidate = perturb(best.scale(), eps, &mut rng);
            let gap = at_best - dkl_objective(&candidate, &state, &obs)?;
            worst = worst.max(gap);
            trials += 1;
            if gap > 0.0 {
                failed += 1;
            }
        }
    }
    Ok(CheckOutcome {
        name: "moment-kl-minimizer",
        passed: failed == 0 && trials > 0,
        comparisons: trials,
        failures: failed,
        worst,
        detail: format!("{states} states, K = {k}, eps = {eps}; worst is max D(B*) - D(candidate)"),
    })
}

/// A random set of lines with deliberately tied and dominated members.
pub fn random_lines(rng: &mut (impl RngCore + ?Sized)) -> (Vec<f64>, Vec<f64>, f64) {
    let n = rng.random_range(2..=8);
    let mut a: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let mut s: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    // tied slope with a lower intercept: never on the envelope
    let i = rng.random_range(0..n);
    s.push(s[i]);
    a.push(a[i] - rng.random_range(0.0..1.0));
    // tied slope and tied intercept
    let j = rng.random_range(0..n);
    s.push(s[j]);
    a.push(a[j]);
    // strictly below the envelope: the average line shifted down
    let mean_a = a.iter().sum::<f64>() / a.len() as f64;
    let mean_s = s.iter().sum::<f64>() / s.len() as f64;
    a.push(mean_a - 5.0);
    s.push(mean_s);
    let nu = rng.random_range(3.0..20.0);
    (a, s, nu)
}

/// Closed-form `E[max_j (a_j + s_j T)]` against plain Monte Carlo over `T`.
pub fn check_kg_expectation(instances: usize, draws: usize, z_limit: f64, seed: u64) -> Result<CheckOutcome> {
    let mut tally = ZTally::new(z_limit);
    for i in 0..instances {
        let mut rng = stream(&[seed, 5, i as u64]);
        let (a, s, nu) = random_lines(&mut rng);
        let exact = expected_max_affine(&a, &s, nu)?;
        let t = StudentT::new(nu).expect("nu > 0");
        let (mut mean, mut m2) = (0.0, 0.0);
        for n in 1..=draws {
            let x: f64 = t.sample(&mut rng);
            let v = a.iter().zip(&s).map(|(a, s)| a + s * x).fold(f64::NEG_INFINITY, f64::max);
            let d = v - mean;
            mean += d / n as f64;
            m2 += d * (v - mean);
        }
        let se = (m2 / (draws as f64 - 1.0) / draws as f64).sqrt();
        tally.compare(mean, exact, se);
    }
    Ok(tally.outcome(
        "kg-expectation-vs-monte-carlo",
        format!("{instances} line sets, {draws} t draws each"),
    ))
}

/// Values of information are nonnegative up to rounding on random states.
pub fn check_kg_nonnegative(states: usize, seed: u64) -> Result<CheckOutcome> {
    let mut count = 0;
    let mut failures = 0;
    let mut lowest = f64::INFINITY;
    for i in 0..states {
        let mut rng = stream(&[seed, 6, i as u64]);
        let k = rng.random_range(2..=12);
        let state = random_state(k, &mut rng)?;
        for rule in UpdateRule::APPROXIMATE {
            for v in value_of_information(&state, rule)?.v {
                count += 1;
                lowest = lowest.min(v);
                if v < -1e-10 {
                    failures += 1;
                }
            }
        }
    }
    Ok(CheckOutcome {
        name: "kg-nonnegative",
        passed: failures == 0,
        comparisons: count,
        failures,
        worst: lowest,
        detail: format!("{states} states; worst is the smallest value seen"),
    })
}

/// Sizes for [`run_suite`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SuiteConfig {
    pub draws: usize,
    pub seed: u64,
    pub states: usize,
    pub z_limit: f64,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        // Around 150 comparisons at 4 SE keeps the chance of any false alarm below 1%.
        Self {
            draws: 100_000,
            seed: 1,
            states: 4,
            z_limit: 4.0,
        }
    }
}

pub fn run_suite(cfg: &SuiteConfig) -> Result<Vec<CheckOutcome>> {
    let k = 3;
    Ok(vec![
        check_moment_update(cfg.states, k, cfg.draws, 2.0, cfg.z_limit, cfg.seed)?,
        check_oracles_agree(cfg.states, k, cfg.draws, 2.0, cfg.z_limit, cfg.seed)?,
        check_block_moments(cfg.states, k, cfg.draws, 2.0, cfg.z_limit, cfg.seed)?,
        check_moment_kl_minimizer(cfg.states, k, 100, 1e-3, cfg.seed)?,
        check_kg_expectation(cfg.states * 2, cfg.draws, cfg.z_limit, cfg.seed)?,
        check_kg_nonnegative(cfg.states * 25, cfg.seed)?,
    ])
}
