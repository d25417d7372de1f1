//! Normal-inverse-Wishart belief over the alternatives' means and covariance.
//!
//! The belief is `mu | Sigma ~ N(theta, Sigma / q)` with `Sigma ~ IW(B, b)`, using the
//! parameterisation in which `E[Sigma] = B / (b - K - 1)`. Mathematical notes index
//! alternatives from 1; storage is 0-based throughout.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative tolerance for the symmetry check on the scale matrix.
pub const SYMMETRY_TOL: f64 = 1e-10;

/// Floor applied to the average sample variance before the prior ridge is scaled.
pub const RIDGE_FLOOR: f64 = 1e-8;

/// Validated normal-inverse-Wishart hyperparameters `(q, b, theta, B)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BeliefState {
    q: f64,
    b: f64,
    theta: DVector<f64>,
    scale: DMatrix<f64>,
}

/// Posterior mean of the covariance, `B / (b - K - 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SigmaEstimate {
    pub matrix: DMatrix<f64>,
}

/// The blocks of a symmetric matrix split around one alternative.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    /// `X_kk`
    pub diag: f64,
    /// `X_{-k,k}`
    pub cross: DVector<f64>,
    /// `X_{-k|k} = X_{-k,-k} - X_{-k,k} X_{k,-k} / X_kk`
    pub schur: DMatrix<f64>,
}

impl BeliefState {
    /// Builds a belief from its hyperparameters, rejecting anything that violates the
    /// state invariants.
    pub fn new(theta: DVector<f64>, scale: DMatrix<f64>, q: f64, b: f64) -> Result<Self> {
        let k = theta.len();
        if k < 2 {
            return Err(Error::DimensionMismatch(format!(
                "need at least 2 alternatives, got {k}"
            )));
        }
        if scale.nrows() != k || scale.ncols() != k {
            return Err(Error::DimensionMismatch(format!(
                "theta has length {k} but B is {}x{}",
                scale.nrows(),
                scale.ncols()
            )));
        }
        if !(q.is_finite() && q > 0.0) {
            return Err(Error::InvalidHyperparameter(format!("q = {q} must be > 0")));
        }
        if !(b.is_finite() && b > k as f64 + 1.0) {
            return Err(Error::InvalidHyperparameter(format!(
                "b = {b} must exceed K + 1 = {}",
                k + 1
            )));
        }
        if theta.iter().any(|v| !v.is_finite()) || scale.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidHyperparameter(
                "theta and B must be finite".into(),
            ));
        }
        check_symmetric(&scale)?;
        let scale = symmetrize(scale);
        if scale.clone().cholesky().is_none() {
            return Err(Error::NotPositiveDefinite("scale matrix B".into()));
        }
        Ok(Self { q, b, theta, scale })
    }

    /// Number of alternatives `K`.
    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn theta(&self) -> &DVector<f64> {
        &self.theta
    }

    pub fn scale(&self) -> &DMatrix<f64> {
        &self.scale
    }

    pub fn check_index(&self, k: usize) -> Result<()> {
        if k < self.len() {
            Ok(())
        } else {
            Err(Error::IndexOutOfRange {
                index: k,
                len: self.len(),
            })
        }
    }

    /// Exact conjugate update after observing all `K` alternatives at once.
    pub fn update_full(&self, y: &DVector<f64>) -> Result<Self> {
        if y.len() != self.len() {
            return Err(Error::DimensionMismatch(format!(
                "observation has length {} but belief has {} alternatives",
                y.len(),
                self.len()
            )));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidObservation("non-finite entry".into()));
        }
        let q = self.q;
        let resid = &self.theta - y;
        let theta = (&self.theta * q + y) / (q + 1.0);
        let scale = &self.scale + (&resid * resid.transpose()) * (q / (q + 1.0));
        Self::new(theta, symmetrize(scale), q + 1.0, self.b + 1.0)
    }

    pub fn posterior_sigma_mean(&self) -> SigmaEstimate {
        let denom = self.b - self.len() as f64 - 1.0;
        SigmaEstimate {
            matrix: &self.scale / denom,
        }
    }
}

/// Shorthand for [`BeliefState::new`].
pub fn new_belief(theta: DVector<f64>, scale: DMatrix<f64>, q: f64, b: f64) -> Result<BeliefState> {
    BeliefState::new(theta, scale, q, b)
}

/// Fits a prior to `n0 x K` pilot observations: `theta` is the column mean and
/// `B = (b0 - K - 1) (S + lambda I)`, with `S` the unbiased sample covariance and
/// `lambda = ridge * max(tr(S) / K, RIDGE_FLOOR)`.
pub fn estimate_prior(pilot: &DMatrix<f64>, b0: f64, q0: f64, ridge: f64) -> Result<BeliefState> {
    let n0 = pilot.nrows();
    let k = pilot.ncols();
    if n0 < 2 {
        return Err(Error::TooFewPilotSamples(n0));
    }
    if !(ridge.is_finite() && ridge >= 0.0) {
        return Err(Error::InvalidHyperparameter(format!(
            "ridge = {ridge} must be >= 0"
        )));
    }
    if !(b0 > k as f64 + 1.0) {
        return Err(Error::InvalidHyperparameter(format!(
            "b0 = {b0} must exceed K + 1 = {}",
            k + 1
        )));
    }
    let mean: DVector<f64> = pilot.row_mean().transpose();
    let mut cov = DMatrix::zeros(k, k);
    for row in pilot.row_iter() {
        let d = row.transpose() - &mean;
        cov += &d * d.transpose();
    }
    cov /= (n0 - 1) as f64;
    let avg_var = (cov.trace() / k as f64).max(RIDGE_FLOOR);
    let lambda = ridge * avg_var;
    for i in 0..k {
        cov[(i, i)] += lambda;
    }
    let scale = symmetrize(cov * (b0 - k as f64 - 1.0));
    BeliefState::new(mean, scale, q0, b0)
}

/// Splits `x` around alternative `k` into `(X_kk, X_{-k,k}, X_{-k|k})`.
pub fn partition(x: &DMatrix<f64>, k: usize) -> Result<Partition> {
    let n = x.nrows();
    if k >= n {
        return Err(Error::IndexOutOfRange { index: k, len: n });
    }
    let diag = x[(k, k)];
    let cross = drop_index(&x.column(k).into_owned(), k);
    let rest = x.clone().remove_row(k).remove_column(k);
    let schur = rest - (&cross * cross.transpose()) / diag;
    Ok(Partition { diag, cross, schur })
}

/// Inverse of [`partition`]'s index split: places `diag`, `cross`, and the
/// `(K-1)x(K-1)` block `rest` back at position `k`.
pub(crate) fn assemble(k: usize, diag: f64, cross: &DVector<f64>, rest: &DMatrix<f64>) -> DMatrix<f64> {
    let n = cross.len() + 1;
    let outer = |i: usize| if i < k { i } else { i - 1 };
    DMatrix::from_fn(n, n, |i, j| match (i == k, j == k) {
        (true, true) => diag,
        (true, false) => cross[outer(j)],
        (false, true) => cross[outer(i)],
        (false, false) => rest[(outer(i), outer(j))],
    })
}

pub(crate) fn drop_index(v: &DVector<f64>, k: usize) -> DVector<f64> {
    v.clone().remove_row(k)
}

pub(crate) fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    let t = m.transpose();
    (m + t) * 0.5
}

fn check_symmetric(m: &DMatrix<f64>) -> Result<()> {
    let largest = m.amax();
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            if (m[(i, j)] - m[(j, i)]).abs() > SYMMETRY_TOL * largest {
                return Err(Error::NotPositiveDefinite(format!(
                    "B is not symmetric at ({i}, {j})"
                )));
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn identity_state(k: usize, b: f64) -> BeliefState {
        BeliefState::new(DVector::zeros(k), DMatrix::identity(k, k), 1.0, b).unwrap()
    }

    fn random_spd(entries: &[f64], k: usize) -> DMatrix<f64> {
        let g = DMatrix::from_iterator(k, k, entries.iter().copied());
        &g * g.transpose() + DMatrix::identity(k, k) * 0.5
    }

    #[test]
    fn new_belief_examples() {
        let s = identity_state(2, 5.0);
        assert_eq!(s.len(), 2);

        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(
            BeliefState::new(DVector::zeros(2), bad, 1.0, 5.0),
            Err(Error::NotPositiveDefinite(_))
        ));
        assert!(matches!(
            BeliefState::new(DVector::zeros(3), DMatrix::identity(3, 3), 1.0, 4.0),
            Err(Error::InvalidHyperparameter(_))
        ));
        assert!(matches!(
            BeliefState::new(DVector::zeros(3), DMatrix::identity(3, 3), 0.0, 9.0),
            Err(Error::InvalidHyperparameter(_))
        ));
        assert!(matches!(
            BeliefState::new(DVector::zeros(3), DMatrix::identity(2, 2), 1.0, 9.0),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn rejects_asymmetric_scale() {
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.4, 2.0]);
        assert!(BeliefState::new(DVector::zeros(2), m, 1.0, 5.0).is_err());
    }

    #[test]
    fn estimate_prior_examples() {
        let pilot = DMatrix::from_row_slice(4, 2, &[0.0, 0.0, 2.0, 0.0, 0.0, 2.0, 2.0, 2.0]);
        let s = estimate_prior(&pilot, 6.0, 1.0, 0.0).unwrap();
        assert_relative_eq!(s.theta()[0], 1.0);
        assert_relative_eq!(s.theta()[1], 1.0);
        assert_relative_eq!(*s.scale(), DMatrix::identity(2, 2) * 4.0, epsilon = 1e-12);

        let flat = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 1.0, 2.0]);
        let s = estimate_prior(&flat, 6.0, 1.0, 1e-6).unwrap();
        assert_eq!(s.theta().as_slice(), &[1.0, 2.0]);
        let expected = 3.0 * 1e-6 * RIDGE_FLOOR;
        assert_relative_eq!(s.scale()[(0, 0)], expected, max_relative = 1e-12);
        assert_eq!(s.scale()[(0, 1)], 0.0);

        let one = DMatrix::from_row_slice(1, 2, &[1.0, 2.0]);
        assert_eq!(
            estimate_prior(&one, 6.0, 1.0, 1e-6),
            Err(Error::TooFewPilotSamples(1))
        );
        // Singular covariance with no ridge fails the PD check.
        assert!(matches!(
            estimate_prior(&flat, 6.0, 1.0, 0.0),
            Err(Error::NotPositiveDefinite(_))
        ));
    }

    #[test]
    fn update_full_examples() {
        let s = identity_state(2, 5.0);
        let same = s.update_full(&DVector::zeros(2)).unwrap();
        assert_eq!(same.q(), 2.0);
        assert_eq!(same.b(), 6.0);
        assert_eq!(same.theta(), s.theta());
        assert_eq!(same.scale(), s.scale());

        let moved = s.update_full(&DVector::from_vec(vec![1.0, 1.0])).unwrap();
        assert_relative_eq!(moved.theta()[0], 0.5);
        assert_relative_eq!(moved.theta()[1], 0.5);
        let expected = DMatrix::from_row_slice(2, 2, &[1.5, 0.5, 0.5, 1.5]);
        assert_relative_eq!(*moved.scale(), expected, epsilon = 1e-14);

        assert!(matches!(
            s.update_full(&DVector::zeros(3)),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn posterior_sigma_mean_examples() {
        let s = identity_state(2, 5.0);
        assert_relative_eq!(s.posterior_sigma_mean().matrix, DMatrix::identity(2, 2) * 0.5);
        let s = BeliefState::new(DVector::zeros(2), DMatrix::identity(2, 2) * 3.0, 1.0, 6.0)
            .unwrap();
        assert_relative_eq!(s.posterior_sigma_mean().matrix, DMatrix::identity(2, 2));
    }

    #[test]
    fn partition_examples() {
        let p = partition(&DMatrix::identity(3, 3), 1).unwrap();
        assert_eq!(p.diag, 1.0);
        assert_eq!(p.cross.as_slice(), &[0.0, 0.0]);
        assert_eq!(p.schur, DMatrix::identity(2, 2));

        let m = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        let p = partition(&m, 0).unwrap();
        assert_eq!(p.diag, 2.0);
        assert_eq!(p.cross.as_slice(), &[1.0]);
        assert_relative_eq!(p.schur[(0, 0)], 1.5);

        assert!(matches!(
            partition(&m, 2),
            Err(Error::IndexOutOfRange { index: 2, len: 2 })
        ));
    }

    #[test]
    fn assemble_inverts_partition_indexing() {
        let m = DMatrix::from_fn(4, 4, |i, j| (1 + i.min(j)) as f64 + if i == j { 3.0 } else { 0.0 });
        for k in 0..4 {
            let cross = drop_index(&m.column(k).into_owned(), k);
            let rest = m.clone().remove_row(k).remove_column(k);
            assert_eq!(assemble(k, m[(k, k)], &cross, &rest), m);
        }
    }

    proptest! {
        #[test]
        fn partition_reconstructs_block(entries in prop::collection::vec(-2.0f64..2.0, 16), k in 0usize..4) {
            let m = random_spd(&entries, 4);
            let p = partition(&m, k).unwrap();
            prop_assert!(p.schur.clone().cholesky().is_some());
            let rebuilt = &p.schur + (&p.cross * p.cross.transpose()) / p.diag;
            let rest = m.clone().remove_row(k).remove_column(k);
            let tol = 1e-12 * rest.amax();
            prop_assert!((rebuilt - rest).amax() <= tol);
        }

        #[test]
        fn update_full_closure_and_det_identity(
            entries in prop::collection::vec(-2.0f64..2.0, 9),
            theta in prop::collection::vec(-3.0f64..3.0, 3),
            y in prop::collection::vec(-10.0f64..10.0, 3),
            q in 0.2f64..20.0,
        ) {
            let scale = random_spd(&entries, 3);
            let s = BeliefState::new(DVector::from_vec(theta), scale.clone(), q, 7.5).unwrap();
            let y = DVector::from_vec(y);
            let next = s.update_full(&y).unwrap();
            prop_assert_eq!(next.q(), q + 1.0);
            prop_assert_eq!(next.b(), 8.5);

            let increment = next.scale() - &scale;
            let eig = increment.clone().symmetric_eigen().eigenvalues;
            let mut sorted: Vec<f64> = eig.iter().copied().collect();
            sorted.sort_by(f64::total_cmp);
            let tol = 1e-9 * increment.amax().max(1.0);
            prop_assert!(sorted[0] >= -tol && sorted[1].abs() <= tol);

            let resid = s.theta() - &y;
            let quad = (resid.transpose() * scale.clone().try_inverse().unwrap() * &resid)[(0, 0)];
            let lhs = next.scale().determinant();
            let rhs = scale.determinant() * (1.0 + q / (q + 1.0) * quad);
            prop_assert!((lhs - rhs).abs() <= 1e-9 * rhs.abs());
        }

        #[test]
        fn ridge_prior_always_positive_definite(
            rows in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 4), 2..6),
            constant_col in 0usize..4,
        ) {
            let n = rows.len();
            let mut pilot = DMatrix::from_fn(n, 4, |i, j| rows[i][j]);
            for i in 0..n {
                pilot[(i, constant_col)] = 1.25;
            }
            prop_assert!(estimate_prior(&pilot, 8.0, 1.0, 1e-6).is_ok());
        }
    }
}
