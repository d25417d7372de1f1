//! Knowledge-gradient sampling policy.
//!
//! Under every single-alternative rule the next mean vector is affine in one
//! standardized Student-t variable, `theta' = theta + s(k) T` with
//! `T ~ t(b - K + 1)`. The value of measuring `k` is therefore
//! `E[max_j (theta_j + s_j T)] - max_j theta_j`, evaluated in closed form over the
//! upper envelope of the lines `theta_j + s_j t`.

use nalgebra::DVector;

use crate::belief::BeliefState;
use crate::error::{Error, Result};
use crate::student_t::{t_pdf, t_sf};
use crate::update::UpdateRule;

/// Relative tolerance under which two slopes are treated as equal.
pub const SLOPE_TIE_TOL: f64 = 1e-12;

/// Relative tolerance under which two values of information count as tied.
pub const VALUE_TIE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct KgCoefficients {
    /// Per-alternative change in the mean per unit of the standardized measurement.
    pub s: DVector<f64>,
    /// Degrees of freedom of the predictive t variable.
    pub nu: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValueOfInformation {
    pub v: Vec<f64>,
}

impl ValueOfInformation {
    /// Index of the largest value; near-ties go to the smallest index.
    pub fn argmax(&self) -> usize {
        argmax_with_ties(&self.v)
    }
}

fn argmax_with_ties(v: &[f64]) -> usize {
    let best = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let tol = VALUE_TIE_TOL * best.abs();
    v.iter().position(|&x| x >= best - tol).unwrap_or(0)
}

pub fn kg_coefficients(state: &BeliefState, k: usize, rule: UpdateRule) -> Result<KgCoefficients> {
    state.check_index(k)?;
    let kf = state.len() as f64;
    let q = state.q();
    let b = state.b();
    let nu = b - kf + 1.0;
    let bkk = state.scale()[(k, k)];
    let column = state.scale().column(k).into_owned();
    let factor = match rule {
        UpdateRule::Kl => {
            let b_next = b + 1.0 / kf;
            ((q + 1.0) / (q * nu)).sqrt() / ((q * b_next / (b_next - kf + 1.0) + 1.0) * bkk.sqrt())
        }
        UpdateRule::Moment | UpdateRule::MomentKl => 1.0 / (q * (q + 1.0) * nu * bkk).sqrt(),
        UpdateRule::FullConjugate => return Err(Error::UnsupportedRule(rule.name())),
    };
    Ok(KgCoefficients {
        s: column * factor,
        nu,
    })
}

/// `E[(T - c)^+]` for `T ~ t(nu)`, `nu > 1`.
pub fn expected_positive_part(c: f64, nu: f64) -> Result<f64> {
    if !(nu.is_finite() && nu > 1.0) {
        return Err(Error::InvalidDof(nu));
    }
    let density_term = (nu + c * c) / (nu - 1.0) * t_pdf(c, nu)?;
    let value = density_term - c * t_sf(c, nu)?;
    Ok(value.max(0.0).max(-c))
}

/// `E[max_j (a_j + s_j T)] - max_j a_j` for `T ~ t(nu)`.
///
/// Lines are sorted by slope, equal slopes keep the larger intercept, and lines that
/// never reach the upper envelope are pruned. Anchoring the expansion at the line
/// that is maximal at `T = 0` leaves a sum of nonnegative terms,
/// `sum_i (s_{i+1} - s_i) E[(T - |c_i|)^+]` over the envelope breakpoints `c_i`.
pub fn envelope_gain(a: &[f64], s: &[f64], nu: f64) -> Result<f64> {
    if a.len() != s.len() || a.is_empty() {
        return Err(Error::DimensionMismatch(format!(
            "intercepts ({}) and slopes ({}) must be equal-length and nonempty",
            a.len(),
            s.len()
        )));
    }
    if !(nu.is_finite() && nu > 1.0) {
        return Err(Error::InvalidDof(nu));
    }
    let mut lines: Vec<(f64, f64)> = s.iter().copied().zip(a.iter().copied()).collect();
    lines.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.total_cmp(&y.1)));

    let slope_scale = s.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let tie = SLOPE_TIE_TOL * slope_scale.max(f64::MIN_POSITIVE);
    let mut distinct: Vec<(f64, f64)> = Vec::with_capacity(lines.len());
    for line in lines {
        match distinct.last_mut() {
            Some(last) if (line.0 - last.0).abs() <= tie => {
                // sorted by intercept within equal slopes, so the later one wins
                *last = line;
            }
            _ => distinct.push(line),
        }
    }

    // (slope, intercept, left breakpoint)
    let mut hull: Vec<(f64, f64, f64)> = Vec::with_capacity(distinct.len());
    for (slope, intercept) in distinct {
        let mut left = f64::NEG_INFINITY;
        while let Some(&(ts, ta, tleft)) = hull.last() {
            let cross = (ta - intercept) / (slope - ts);
            if cross <= tleft {
                hull.pop();
            } else {
                left = cross;
                break;
            }
        }
        hull.push((slope, intercept, left));
    }

    let mut gain = 0.0;
    for pair in hull.windows(2) {
        let (s0, _, _) = pair[0];
        let (s1, _, c) = pair[1];
        gain += (s1 - s0) * expected_positive_part(c.abs(), nu)?;
    }
    Ok(gain)
}

/// `E[max_j (a_j + s_j T)]` for `T ~ t(nu)`.
pub fn expected_max_affine(a: &[f64], s: &[f64], nu: f64) -> Result<f64> {
    let gain = envelope_gain(a, s, nu)?;
    let top = a.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(top + gain)
}

/// Value of information of measuring each alternative next.
pub fn value_of_information(state: &BeliefState, rule: UpdateRule) -> Result<ValueOfInformation> {
    let theta = state.theta().as_slice();
    let v = (0..state.len())
        .map(|k| {
            let coef = kg_coefficients(state, k, rule)?;
            envelope_gain(theta, coef.s.as_slice(), coef.nu)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ValueOfInformation { v })
}

/// The alternative with the largest value of information.
pub fn select_alternative(state: &BeliefState, rule: UpdateRule) -> Result<usize> {
    Ok(value_of_information(state, rule)?.argmax())
}
