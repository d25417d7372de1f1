//! Sampling environments the sequential procedure is run against.

mod borehole;
mod empirical;
mod mvn;

pub use borehole::{
    borehole_computer, borehole_physical, borehole_physical_mean, calibration_problem, lhs_design, BoreholeConfig,
    CalibrationProblem, CONTROL_RANGES, PHYSICAL_X6, PHYSICAL_X7, X6_RANGE, X7_RANGE,
};
pub use empirical::{empirical_problem, EmpiricalProblem};
pub use mvn::{mvn_problem, MvnProblem};

use nalgebra::{DMatrix, DVector};
use rand::RngCore;

/// A set of `K` alternatives that can be measured one at a time or jointly.
///
/// `sample_one(k, ..)` has the same law as coordinate `k` of `sample_all(..)`.
pub trait Problem: Send + Sync {
    fn num_alternatives(&self) -> usize;

    fn sample_one(&self, k: usize, rng: &mut dyn RngCore) -> f64;

    fn sample_all(&self, rng: &mut dyn RngCore) -> DVector<f64>;

    fn true_means(&self) -> &DVector<f64>;

    /// The sampling covariance, when it is known in closed form.
    fn covariance(&self) -> Option<&DMatrix<f64>> {
        None
    }

    fn label(&self, k: usize) -> String {
        (k + 1).to_string()
    }
}
