//! Belief updates after measuring a single alternative.
//!
//! Measuring one coordinate breaks normal-inverse-Wishart conjugacy, so each rule
//! projects the exact posterior back into the family:
//!
//! * [`update_kl`]: Kullback-Leibler projection of the full posterior, with the
//!   degrees-of-freedom increment fixed at `1/K`.
//! * [`update_moment`]: matches the posterior mean of `mu` and of the conditional
//!   scale `q' Var(mu | Sigma, y)`.
//! * [`update_moment_kl`]: moment-matched mean, KL-projected scale.
//!
//! All three advance `q` and `b` by `1/K`.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::belief::{assemble, partition, symmetrize, BeliefState};
use crate::error::{Error, Result};

/// A measurement `y` of alternative `k` (0-based).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SingleObservation {
    pub k: usize,
    pub y: f64,
}

impl SingleObservation {
    pub fn new(k: usize, y: f64) -> Self {
        Self { k, y }
    }

    fn validate(&self, state: &BeliefState) -> Result<()> {
        state.check_index(self.k)?;
        if !self.y.is_finite() {
            return Err(Error::InvalidObservation(format!("y = {}", self.y)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum UpdateRule {
    /// Exact conjugate update from a full `K`-vector observation.
    #[serde(rename = "full")]
    FullConjugate,
    #[serde(rename = "kl")]
    Kl,
    #[serde(rename = "moment")]
    Moment,
    #[serde(rename = "moment-kl")]
    MomentKl,
}

impl UpdateRule {
    pub const APPROXIMATE: [UpdateRule; 3] = [UpdateRule::Kl, UpdateRule::Moment, UpdateRule::MomentKl];

    pub fn name(self) -> &'static str {
        match self {
            UpdateRule::FullConjugate => "full",
            UpdateRule::Kl => "kl",
            UpdateRule::Moment => "moment",
            UpdateRule::MomentKl => "moment-kl",
        }
    }

    /// Stable numeric tag used when deriving random streams.
    pub fn stream_tag(self) -> u64 {
        match self {
            UpdateRule::FullConjugate => 0x4655_4c4c,
            UpdateRule::Kl => 0x4b_4c,
            UpdateRule::Moment => 0x4d_4f4d,
            UpdateRule::MomentKl => 0x4d_4f4d_4b4c,
        }
    }

    pub fn is_single_alternative(self) -> bool {
        !matches!(self, UpdateRule::FullConjugate)
    }
}

impl fmt::Display for UpdateRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for UpdateRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "full" | "full-conjugate" => Ok(UpdateRule::FullConjugate),
            "kl" => Ok(UpdateRule::Kl),
            "moment" => Ok(UpdateRule::Moment),
            "moment-kl" | "momentkl" | "moment_kl" => Ok(UpdateRule::MomentKl),
            other => Err(Error::Parse(format!("unknown update rule '{other}'"))),
        }
    }
}

/// What a rule consumes: one coordinate or the whole vector.
#[derive(Debug, Clone, PartialEq)]
pub enum Measurement {
    Single(SingleObservation),
    Full(DVector<f64>),
}

/// `1 + q (y - theta_k)^2 / ((q + 1) B_kk)`.
pub fn tilde_q(state: &BeliefState, obs: &SingleObservation) -> f64 {
    let q = state.q();
    let r = obs.y - state.theta()[obs.k];
    1.0 + q * r * r / ((q + 1.0) * state.scale()[(obs.k, obs.k)])
}

/// `(q + 1/K, b + 1/K)`
fn advanced_counts(state: &BeliefState) -> (f64, f64) {
    let inc = 1.0 / state.len() as f64;
    (state.q() + inc, state.b() + inc)
}

/// Moment-matched mean shared by the moment and moment-KL rules.
fn moment_theta(state: &BeliefState, obs: &SingleObservation) -> DVector<f64> {
    let b = state.scale();
    let k = obs.k;
    let step = (obs.y - state.theta()[k]) / ((state.q() + 1.0) * b[(k, k)]);
    state.theta() + b.column(k) * step
}

pub fn update_moment(state: &BeliefState, obs: &SingleObservation) -> Result<BeliefState> {
    obs.validate(state)?;
    let kf = state.len() as f64;
    let (q, b) = (state.q(), state.b());
    let (q_next, b_next) = advanced_counts(state);
    let qt = tilde_q(state, obs);
    let part = partition(state.scale(), obs.k)?;

    let factor = q_next * (b_next - kf - 1.0) / (b - kf);
    let column_scale = factor * qt / (q + 1.0);
    let diag = column_scale * part.diag;
    let cross = &part.cross * column_scale;
    let outer = (&part.cross * part.cross.transpose()) / part.diag;
    let rest = (&part.schur / q + (&part.schur / (b - kf) + outer) * (qt / (q + 1.0))) * factor;

    let scale = symmetrize(assemble(obs.k, diag, &cross, &rest));
    BeliefState::new(moment_theta(state, obs), scale, q_next, b_next)
}

pub fn update_kl(state: &BeliefState, obs: &SingleObservation) -> Result<BeliefState> {
    obs.validate(state)?;
    let kf = state.len() as f64;
    let k = obs.k;
    let (q, b) = (state.q(), state.b());
    let (q_next, b_next) = advanced_counts(state);
    let scale = state.scale();
    let bkk = scale[(k, k)];
    let r = obs.y - state.theta()[k];

    let shrink = (b_next * (q + 1.0) - kf + 1.0) / (b_next - kf + 1.0);
    let column = scale.column(k).into_owned();
    let theta = state.theta() + &column * (r / (shrink * bkk));

    let weight = (b_next / (b + 1.0))
        * (q * (b_next - kf + 1.0) * r * r / (b_next * (q + 1.0) - kf + 1.0) - bkk / b);
    let next = scale * (b_next / b) + (&column * column.transpose()) * (weight / (bkk * bkk));

    BeliefState::new(theta, symmetrize(next), q_next, b_next)
}

pub fn update_moment_kl(state: &BeliefState, obs: &SingleObservation) -> Result<BeliefState> {
    obs.validate(state)?;
    let kf = state.len() as f64;
    let (q, b) = (state.q(), state.b());
    let (q_next, b_next) = advanced_counts(state);
    let part = partition(state.scale(), obs.k)?;
    let r = obs.y - state.theta()[obs.k];

    let diag = q_next * (b_next - kf + 1.0) * (part.diag + q * r * r / (q + 1.0))
        / ((b + 1.0) * (q + 1.0));
    let cross = &part.cross * (diag / part.diag);
    let rest: DMatrix<f64> =
        &part.schur * (b_next * q_next / (b * q)) + (&cross * cross.transpose()) / diag;

    let scale = symmetrize(assemble(obs.k, diag, &cross, &rest));
    BeliefState::new(moment_theta(state, obs), scale, q_next, b_next)
}

/// Dispatches to the update matching `rule`.
pub fn apply(rule: UpdateRule, state: &BeliefState, measurement: &Measurement) -> Result<BeliefState> {
    match (rule, measurement) {
        (UpdateRule::FullConjugate, Measurement::Full(y)) => state.update_full(y),
        (UpdateRule::Kl, Measurement::Single(obs)) => update_kl(state, obs),
        (UpdateRule::Moment, Measurement::Single(obs)) => update_moment(state, obs),
        (UpdateRule::MomentKl, Measurement::Single(obs)) => update_moment_kl(state, obs),
        (UpdateRule::FullConjugate, Measurement::Single(_)) => Err(Error::RuleInputMismatch {
            rule: rule.name(),
            given: "a single-alternative observation",
        }),
        (_, Measurement::Full(_)) => Err(Error::RuleInputMismatch {
            rule: rule.name(),
            given: "a full observation vector",
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn base() -> BeliefState {
        BeliefState::new(DVector::zeros(2), DMatrix::identity(2, 2), 1.0, 5.0).unwrap()
    }

    fn spd(entries: &[f64], k: usize) -> DMatrix<f64> {
        let g = DMatrix::from_iterator(k, k, entries.iter().copied());
        &g * g.transpose() + DMatrix::identity(k, k) * 0.3
    }

    #[test]
    fn tilde_q_examples() {
        let s = base();
        assert_eq!(tilde_q(&s, &SingleObservation::new(0, 0.0)), 1.0);
        assert_relative_eq!(tilde_q(&s, &SingleObservation::new(0, 1.0)), 1.5);
    }

    #[test]
    fn moment_worked_examples() {
        let s = base();
        let at_mean = update_moment(&s, &SingleObservation::new(0, 0.0)).unwrap();
        assert_eq!(at_mean.theta(), s.theta());
        assert_relative_eq!(at_mean.q(), 1.5);
        assert_relative_eq!(at_mean.b(), 5.5);
        assert_relative_eq!(at_mean.scale()[(0, 0)], 0.625, epsilon = 1e-14);
        assert_eq!(at_mean.scale()[(0, 1)], 0.0);
        assert_relative_eq!(at_mean.scale()[(1, 1)], 1.25 * (1.0 + 0.5 / 3.0), epsilon = 1e-14);

        let moved = update_moment(&s, &SingleObservation::new(0, 1.0)).unwrap();
        assert_relative_eq!(moved.theta()[0], 0.5, epsilon = 1e-15);
        assert_eq!(moved.theta()[1], 0.0);
        assert_relative_eq!(moved.scale()[(0, 0)], 0.9375, epsilon = 1e-14);
        assert_eq!(moved.scale()[(0, 1)], 0.0);
        assert_relative_eq!(moved.scale()[(1, 1)], 1.5625, epsilon = 1e-14);
    }

    #[test]
    fn kl_worked_examples() {
        let s = base();
        let moved = update_kl(&s, &SingleObservation::new(0, 1.0)).unwrap();
        assert_relative_eq!(moved.b(), 5.5);
        assert_relative_eq!(moved.theta()[0], 0.45, epsilon = 1e-15);
        assert_eq!(moved.theta()[1], 0.0);
        let b11 = 1.1 + (5.5 / 6.0) * (4.5 / 10.0 - 0.2);
        assert_relative_eq!(moved.scale()[(0, 0)], b11, epsilon = 1e-14);
        assert_relative_eq!(moved.scale()[(0, 0)], 1.329167, epsilon = 1e-6);
        assert_relative_eq!(moved.scale()[(1, 1)], 1.1, epsilon = 1e-14);

        let at_mean = update_kl(&s, &SingleObservation::new(1, 0.0)).unwrap();
        assert_eq!(at_mean.theta(), s.theta());
        let expected_kk = 1.1 + (5.5 / 6.0) * (-1.0 / 5.0);
        assert_relative_eq!(at_mean.scale()[(1, 1)], expected_kk, epsilon = 1e-14);
        assert_relative_eq!(at_mean.scale()[(0, 0)], 1.1, epsilon = 1e-14);
    }

    #[test]
    fn moment_kl_worked_examples() {
        let s = base();
        let moved = update_moment_kl(&s, &SingleObservation::new(0, 1.0)).unwrap();
        assert_relative_eq!(moved.theta()[0], 0.5, epsilon = 1e-15);
        assert_relative_eq!(moved.scale()[(0, 0)], 0.84375, epsilon = 1e-14);
        assert_eq!(moved.scale()[(0, 1)], 0.0);
        assert_relative_eq!(moved.scale()[(1, 1)], 1.65, epsilon = 1e-14);

        let at_mean = update_moment_kl(&s, &SingleObservation::new(0, 0.0)).unwrap();
        assert_eq!(at_mean.theta(), s.theta());
    }

    #[test]
    fn rejects_bad_index() {
        let s = base();
        for rule in UpdateRule::APPROXIMATE {
            let err = apply(rule, &s, &Measurement::Single(SingleObservation::new(2, 0.0)));
            assert!(matches!(err, Err(Error::IndexOutOfRange { index: 2, len: 2 })));
        }
    }

    #[test]
    fn dispatch() {
        let s = base();
        let obs = SingleObservation::new(1, 0.7);
        assert_eq!(
            apply(UpdateRule::Moment, &s, &Measurement::Single(obs)).unwrap(),
            update_moment(&s, &obs).unwrap()
        );
        let y = DVector::from_vec(vec![0.3, -0.2]);
        assert_eq!(
            apply(UpdateRule::FullConjugate, &s, &Measurement::Full(y.clone())).unwrap(),
            s.update_full(&y).unwrap()
        );
        assert!(matches!(
            apply(UpdateRule::Kl, &s, &Measurement::Full(y)),
            Err(Error::RuleInputMismatch { .. })
        ));
        assert!(matches!(
            apply(UpdateRule::FullConjugate, &s, &Measurement::Single(obs)),
            Err(Error::RuleInputMismatch { .. })
        ));
    }

    #[test]
    fn rule_names_round_trip() {
        for rule in [UpdateRule::FullConjugate, UpdateRule::Kl, UpdateRule::Moment, UpdateRule::MomentKl] {
            assert_eq!(rule.name().parse::<UpdateRule>().unwrap(), rule);
        }
        assert!("bogus".parse::<UpdateRule>().is_err());
    }

    #[test]
    fn block_diagonal_scale_leaves_other_block_means() {
        let mut scale = DMatrix::identity(4, 4);
        scale[(0, 1)] = 0.4;
        scale[(1, 0)] = 0.4;
        scale[(2, 3)] = -0.3;
        scale[(3, 2)] = -0.3;
        let theta = DVector::from_vec(vec![0.1, 0.2, 0.3, 0.4]);
        let s = BeliefState::new(theta.clone(), scale, 2.0, 9.0).unwrap();
        let obs = SingleObservation::new(0, 1.7);
        for rule in UpdateRule::APPROXIMATE {
            let next = apply(rule, &s, &Measurement::Single(obs)).unwrap();
            assert_eq!(next.theta()[2], theta[2], "{rule}");
            assert_eq!(next.theta()[3], theta[3], "{rule}");
            assert!(next.theta()[1] > theta[1], "{rule}");
        }
    }

    proptest! {
        #[test]
        fn counts_advance_by_inverse_k(entries in prop::collection::vec(-1.5f64..1.5, 9), y in -4.0f64..4.0, k in 0usize..3) {
            let s = BeliefState::new(DVector::from_vec(vec![0.2, -0.1, 0.4]), spd(&entries, 3), 1.3, 6.0).unwrap();
            let obs = SingleObservation::new(k, y);
            for rule in UpdateRule::APPROXIMATE {
                let next = apply(rule, &s, &Measurement::Single(obs)).unwrap();
                prop_assert!((next.q() - s.q() - 1.0 / 3.0).abs() < 1e-15);
                prop_assert!((next.b() - s.b() - 1.0 / 3.0).abs() < 1e-14);
            }
        }

        #[test]
        fn mean_shift_is_proportional_to_column(entries in prop::collection::vec(-1.5f64..1.5, 16), y in -4.0f64..4.0, k in 0usize..4) {
            let scale = spd(&entries, 4);
            let s = BeliefState::new(DVector::from_vec(vec![0.0, 0.5, -0.5, 1.0]), scale.clone(), 0.8, 8.0).unwrap();
            let obs = SingleObservation::new(k, y);
            for rule in UpdateRule::APPROXIMATE {
                let next = apply(rule, &s, &Measurement::Single(obs)).unwrap();
                let ratio = (next.theta()[k] - s.theta()[k]) / scale[(k, k)];
                for j in 0..4 {
                    let shift = next.theta()[j] - s.theta()[j];
                    prop_assert!((shift - ratio * scale[(j, k)]).abs() <= 1e-12 * (1.0 + shift.abs()));
                }
            }
        }

        #[test]
        fn moment_kl_keeps_correlation_direction(entries in prop::collection::vec(-1.5f64..1.5, 9), y in -4.0f64..4.0, k in 0usize..3) {
            let scale = spd(&entries, 3);
            let s = BeliefState::new(DVector::zeros(3), scale.clone(), 1.0, 6.0).unwrap();
            let next = update_moment_kl(&s, &SingleObservation::new(k, y)).unwrap();
            for j in (0..3).filter(|&j| j != k) {
                prop_assert_eq!(next.scale()[(j, k)].signum(), scale[(j, k)].signum());
            }
        }
    }
}
