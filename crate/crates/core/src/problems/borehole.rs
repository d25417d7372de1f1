//! Calibrating the two qualitative inputs of the borehole flow model.
//!
//! Inputs `x1..x5` are controls, `x6` and `x7` are calibration parameters taking a
//! finite set of levels. Each `(x6, x7)` combination is an alternative, scored by the
//! mean squared gap to a noisy physical system over a fixed design of control points.
//! Scores are negated so that larger is better.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, RngCore};
use rand_distr::StandardNormal;

use super::Problem;
use crate::error::{Error, Result};

/// Ranges of the control inputs `x1..x5`.
pub const CONTROL_RANGES: [(f64, f64); 5] = [
    (63_070.0, 115_600.0),
    (0.05, 0.15),
    (1_120.0, 1_680.0),
    (63.1, 116.0),
    (100.0, 50_000.0),
];
pub const X6_RANGE: (f64, f64) = (170.0, 410.0);
pub const X7_RANGE: (f64, f64) = (9_588.0, 12_045.0);

/// Calibration inputs of the physical system.
pub const PHYSICAL_X6: f64 = 401.0;
pub const PHYSICAL_X7: f64 = 11_000.0;

/// Log flow rate
/// `log(2 pi x1 x6 / (L (1 + 2 x3 x1 / (L x2^2 x7) + x1 / x4)))` with `L = log(x5 / x2)`.
pub fn borehole_computer(x: &[f64; 7]) -> Result<f64> {
    let [x1, x2, x3, x4, x5, x6, x7] = *x;
    if !(x2 > 0.0 && x5 > 0.0) {
        return Err(Error::DomainError(format!("log(x5/x2) needs positive x2, x5; got {x2}, {x5}")));
    }
    let l = (x5 / x2).ln();
    if l == 0.0 {
        return Err(Error::DomainError("x5 = x2 makes log(x5/x2) zero".into()));
    }
    let bracket = 1.0 + 2.0 * x3 * x1 / (l * x2 * x2 * x7) + x1 / x4;
    let ratio = 2.0 * std::f64::consts::PI * x1 * x6 / (l * bracket);
    if !(ratio > 0.0 && ratio.is_finite()) {
        return Err(Error::DomainError(format!("flow rate {ratio} has no real logarithm")));
    }
    Ok(ratio.ln())
}

/// Noise-free physical response: the computer model at `x6 = 401`, `x7 = 11000`.
pub fn borehole_physical_mean(x: &[f64; 5]) -> Result<f64> {
    let [x1, x2, x3, x4, x5] = *x;
    borehole_computer(&[x1, x2, x3, x4, x5, PHYSICAL_X6, PHYSICAL_X7])
}

/// One noisy physical measurement at control point `x`.
pub fn borehole_physical(x: &[f64; 5], rng: &mut (impl RngCore + ?Sized)) -> Result<f64> {
    let z: f64 = rng.sample(StandardNormal);
    Ok(borehole_physical_mean(x)? + z)
}

/// Latin hypercube sample of `m` points in `d` dimensions, scaled to `ranges`.
pub fn lhs_design(d: usize, m: usize, ranges: &[(f64, f64)], rng: &mut (impl RngCore + ?Sized)) -> Result<DMatrix<f64>> {
    if ranges.len() != d {
        return Err(Error::DimensionMismatch(format!("{} ranges for {d} dimensions", ranges.len())));
    }
    let mut design = DMatrix::zeros(m, d);
    let mut strata: Vec<usize> = (0..m).collect();
    for (j, &(lo, hi)) in ranges.iter().enumerate() {
        strata.shuffle(rng);
        for (i, &s) in strata.iter().enumerate() {
            let u = (s as f64 + rng.random::<f64>()) / m as f64;
            design[(i, j)] = lo + u * (hi - lo);
        }
    }
    Ok(design)
}

fn equally_spaced((lo, hi): (f64, f64), n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![0.5 * (lo + hi)];
    }
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoreholeConfig {
    pub x6_levels: Vec<f64>,
    pub x7_levels: Vec<f64>,
    /// `m x 5` control points.
    pub design: DMatrix<f64>,
    pub noise_sd: f64,
}

impl BoreholeConfig {
    /// Three `x6` levels, `x7_count` (10 or 17) `x7` levels, both equally spaced over
    /// their ranges, and a Latin hypercube design of `design_runs` control points.
    pub fn generate(x7_count: usize, design_runs: usize, rng: &mut (impl RngCore + ?Sized)) -> Result<Self> {
        if x7_count != 10 && x7_count != 17 {
            return Err(Error::InvalidHyperparameter(format!("x7 takes 10 or 17 levels, got {x7_count}")));
        }
        if design_runs == 0 {
            return Err(Error::InvalidHyperparameter("design needs at least one run".into()));
        }
        Ok(Self {
            x6_levels: equally_spaced(X6_RANGE, 3),
            x7_levels: equally_spaced(X7_RANGE, x7_count),
            design: lhs_design(5, design_runs, &CONTROL_RANGES, rng)?,
            noise_sd: 1.0,
        })
    }

    pub fn num_alternatives(&self) -> usize {
        self.x6_levels.len() * self.x7_levels.len()
    }

    /// `(x6, x7)` of alternative `k`; `x6` varies slowest.
    pub fn levels(&self, k: usize) -> (f64, f64) {
        let n7 = self.x7_levels.len();
        (self.x6_levels[k / n7], self.x7_levels[k % n7])
    }

    fn validate(&self) -> Result<()> {
        if self.x6_levels.is_empty() || self.x7_levels.is_empty() {
            return Err(Error::InvalidHyperparameter("no calibration levels".into()));
        }
        if self.design.nrows() == 0 || self.design.ncols() != 5 {
            return Err(Error::DimensionMismatch(format!(
                "design must be m x 5 with m >= 1, got {}x{}",
                self.design.nrows(),
                self.design.ncols()
            )));
        }
        if !(self.noise_sd.is_finite() && self.noise_sd >= 0.0) {
            return Err(Error::InvalidHyperparameter(format!("noise_sd = {}", self.noise_sd)));
        }
        for (j, &(lo, hi)) in CONTROL_RANGES.iter().enumerate() {
            for v in self.design.column(j).iter() {
                if !(lo..=hi).contains(v) {
                    return Err(Error::DomainError(format!("x{} = {v} outside [{lo}, {hi}]", j + 1)));
                }
            }
        }
        Ok(())
    }
}

/// Alternatives are the `(x6, x7)` level combinations. A measurement of `k` is
/// `-(1/m) sum_i (eta_hat(x_i) - f_k(x_i))^2` with fresh physical noise.
#[derive(Debug, Clone)]
pub struct CalibrationProblem {
    cfg: BoreholeConfig,
    /// `f_k(x_i)`, one row per alternative.
    model: DMatrix<f64>,
    physical: DVector<f64>,
    means: DVector<f64>,
}

pub fn calibration_problem(cfg: BoreholeConfig) -> Result<CalibrationProblem> {
    cfg.validate()?;
    let m = cfg.design.nrows();
    let point = |i: usize| -> [f64; 5] { std::array::from_fn(|j| cfg.design[(i, j)]) };
    let physical = (0..m)
        .map(|i| borehole_physical_mean(&point(i)))
        .collect::<Result<Vec<_>>>()?;
    let physical = DVector::from_vec(physical);
    let k_count = cfg.num_alternatives();
    let mut model = DMatrix::zeros(k_count, m);
    for k in 0..k_count {
        let (x6, x7) = cfg.levels(k);
        for i in 0..m {
            let [x1, x2, x3, x4, x5] = point(i);
            model[(k, i)] = borehole_computer(&[x1, x2, x3, x4, x5, x6, x7])?;
        }
    }
    let noise_var = cfg.noise_sd * cfg.noise_sd;
    let means = DVector::from_fn(k_count, |k, _| {
        let mse = (0..m).map(|i| (physical[i] - model[(k, i)]).powi(2)).sum::<f64>() / m as f64;
        -(mse + noise_var)
    });
    Ok(CalibrationProblem {
        cfg,
        model,
        physical,
        means,
    })
}

impl CalibrationProblem {
    pub fn config(&self) -> &BoreholeConfig {
        &self.cfg
    }

    fn noisy_physical(&self, rng: &mut dyn RngCore) -> DVector<f64> {
        self.physical
            .map(|v| v + self.cfg.noise_sd * rng.sample::<f64, _>(StandardNormal))
    }

    fn score(&self, k: usize, eta: &DVector<f64>) -> f64 {
        let m = eta.len();
        -(0..m).map(|i| (eta[i] - self.model[(k, i)]).powi(2)).sum::<f64>() / m as f64
    }
}

impl Problem for CalibrationProblem {
    fn num_alternatives(&self) -> usize {
        self.means.len()
    }

    fn sample_one(&self, k: usize, rng: &mut dyn RngCore) -> f64 {
        let eta = self.noisy_physical(rng);
        self.score(k, &eta)
    }

    /// All alternatives scored against one shared noisy physical run.
    fn sample_all(&self, rng: &mut dyn RngCore) -> DVector<f64> {
        let eta = self.noisy_physical(rng);
        DVector::from_fn(self.means.len(), |k, _| self.score(k, &eta))
    }

    fn true_means(&self) -> &DVector<f64> {
        &self.means
    }

    fn label(&self, k: usize) -> String {
        let (x6, x7) = self.cfg.levels(k);
        format!("x6={x6};x7={x7}")
    }
}
