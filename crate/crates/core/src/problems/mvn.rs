use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore};
use rand_distr::StandardNormal;

use super::Problem;
use crate::error::{Error, Result};
use crate::sampling::{cholesky_lower, sample_mvn};

/// Jointly normal alternatives with means `k/K` and covariance `A_ij = (-rho)^|i-j|`.
#[derive(Debug, Clone)]
pub struct MvnProblem {
    rho: f64,
    means: DVector<f64>,
    cov: DMatrix<f64>,
    chol: DMatrix<f64>,
}

impl MvnProblem {
    pub fn rho(&self) -> f64 {
        self.rho
    }
}

pub fn mvn_problem(k: usize, rho: f64) -> Result<MvnProblem> {
    if !(0.0..1.0).contains(&rho) {
        return Err(Error::InvalidRho(rho));
    }
    if k == 0 {
        return Err(Error::DimensionMismatch("need at least one alternative".into()));
    }
    let kf = k as f64;
    let means = DVector::from_fn(k, |i, _| (i + 1) as f64 / kf);
    let cov = DMatrix::from_fn(k, k, |i, j| (-rho).powi(i.abs_diff(j) as i32));
    let chol = cholesky_lower(&cov, "mvn covariance")?;
    Ok(MvnProblem { rho, means, cov, chol })
}

impl Problem for MvnProblem {
    fn num_alternatives(&self) -> usize {
        self.means.len()
    }

    fn sample_one(&self, k: usize, rng: &mut dyn RngCore) -> f64 {
        let z: f64 = rng.sample(StandardNormal);
        self.means[k] + self.cov[(k, k)].sqrt() * z
    }

    fn sample_all(&self, rng: &mut dyn RngCore) -> DVector<f64> {
        sample_mvn(&self.means, &self.chol, rng)
    }

    fn true_means(&self) -> &DVector<f64> {
        &self.means
    }

    fn covariance(&self) -> Option<&DMatrix<f64>> {
        Some(&self.cov)
    }
}
