//! Monte Carlo oracles for the single-observation posterior.
//!
//! Two independent routes to the posterior moments after observing alternative `k`:
//!
//! * a direct sampler of the block decomposition `(A, a, a~, c)` of
//!   `Sigma~ = q' (q Sigma^{-1} + e_k e_k^T / Sigma_kk)^{-1}`, and
//! * importance sampling from the prior, weighted by the likelihood of `y`.
//!
//! Neither is used by the sequential loop. They exist to check the closed-form
//! updates, so they avoid sharing code paths with [`crate::update`] beyond
//! [`partition`].

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore};

use crate::belief::{assemble, partition, BeliefState};
use crate::error::{Error, Result};
use crate::sampling::{cholesky_lower, sample_inverse_chi2, sample_mvn, standard_normal_vector, InverseWishart};
use crate::update::SingleObservation;

/// Smallest draw count the moment oracles accept.
pub const MIN_DRAWS: usize = 1_000;

/// Effective sample size below which importance weights are considered degenerate.
pub const MIN_ESS: f64 = 50.0;

/// One joint draw of the blocks of `Sigma~`.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleDecomposition {
    /// `A = Sigma~_{-k|k}`
    pub a_mat: DMatrix<f64>,
    /// `a = Sigma~_{-k,k} / Sigma~_kk`
    pub a: DVector<f64>,
    /// `a~ = Sigma~_{-k,k}`
    pub a_tilde: DVector<f64>,
    /// `c = Sigma~_kk`
    pub c: f64,
}

impl OracleDecomposition {
    /// Reassembles `Sigma~` with `k` in its original position.
    pub fn tilde_sigma(&self, k: usize) -> DMatrix<f64> {
        let rest = &self.a_mat + (&self.a * self.a.transpose()) * self.c;
        assemble(k, self.c, &self.a_tilde, &rest)
    }

    /// Conditional posterior mean `theta~ = theta + (y - theta_k)/(q+1) * Sigma_{.,k}/Sigma_kk`.
    pub fn tilde_theta(&self, state: &BeliefState, obs: &SingleObservation) -> DVector<f64> {
        let k = obs.k;
        let step = (obs.y - state.theta()[k]) / (state.q() + 1.0);
        let direction = assemble_vector(k, 1.0, &self.a);
        state.theta() + direction * step
    }
}

fn assemble_vector(k: usize, at_k: f64, rest: &DVector<f64>) -> DVector<f64> {
    let n = rest.len() + 1;
    DVector::from_fn(n, |i, _| match i.cmp(&k) {
        std::cmp::Ordering::Less => rest[i],
        std::cmp::Ordering::Equal => at_k,
        std::cmp::Ordering::Greater => rest[i - 1],
    })
}

/// Sampler for the conditional laws of `(A, a, a~, c)` given `y`:
///
/// ```text
/// A       ~ IW_{K-1}(b, (q'/q) B_{-k|k})
/// c       ~ IW_1(b - K + 2, q'/(q+1) [B_kk + q (y - theta_k)^2 / (q+1)])
/// a | A   ~ N(B_{-k,k} / B_kk, q A / (q' B_kk))
/// a~      = c a
/// ```
///
/// with `q' = q + 1/K`.
#[derive(Debug, Clone)]
pub struct DecompositionSampler {
    k: usize,
    a_law: InverseWishart,
    a_center: DVector<f64>,
    a_spread: f64,
    c_scale: f64,
    c_dof: f64,
}

impl DecompositionSampler {
    pub fn new(state: &BeliefState, obs: &SingleObservation) -> Result<Self> {
        state.check_index(obs.k)?;
        let kf = state.len() as f64;
        let (q, b) = (state.q(), state.b());
        let q_next = q + 1.0 / kf;
        let part = partition(state.scale(), obs.k)?;
        let r = obs.y - state.theta()[obs.k];
        let a_law = InverseWishart::new(&(&part.schur * (q_next / q)), b)?;
        Ok(Self {
            k: obs.k,
            a_law,
            a_center: &part.cross / part.diag,
            a_spread: (q / (q_next * part.diag)).sqrt(),
            c_scale: q_next / (q + 1.0) * (part.diag + q * r * r / (q + 1.0)),
            c_dof: b - kf + 2.0,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn sample(&self, rng: &mut (impl RngCore + ?Sized)) -> Result<OracleDecomposition> {
        let a_mat = self.a_law.sample(rng);
        let chol = cholesky_lower(&a_mat, "sampled A")?;
        let a = sample_mvn(&self.a_center, &(chol * self.a_spread), rng);
        let c = sample_inverse_chi2(self.c_scale, self.c_dof, rng)?;
        Ok(OracleDecomposition {
            a_tilde: &a * c,
            a_mat,
            a,
            c,
        })
    }
}

pub fn sample_decomposition(
    state: &BeliefState,
    obs: &SingleObservation,
    rng: &mut (impl RngCore + ?Sized),
) -> Result<OracleDecomposition> {
    DecompositionSampler::new(state, obs)?.sample(rng)
}

/// Monte Carlo estimate of a posterior mean vector and scale matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentEstimate {
    pub mean: DVector<f64>,
    pub scale: DMatrix<f64>,
    pub se_mean: DVector<f64>,
    pub se_scale: DMatrix<f64>,
    /// Effective sample size; the plain draw count for unweighted estimators.
    pub ess: f64,
}

/// Running mean and variance of a fixed-length vector of statistics (Welford).
#[derive(Debug, Clone)]
pub struct RunningMoments {
    n: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl RunningMoments {
    pub fn new(dim: usize) -> Self {
        Self {
            n: 0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
        }
    }

    pub fn push(&mut self, x: &[f64]) {
        self.n += 1;
        let n = self.n as f64;
        for ((m, s), &v) in self.mean.iter_mut().zip(self.m2.iter_mut()).zip(x) {
            let d = v - *m;
            *m += d / n;
            *s += d * (v - *m);
        }
    }

    pub fn count(&self) -> usize {
        self.n
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// Standard error of each mean. For a sample mean the jackknife estimate
    /// coincides with `s / sqrt(n)`.
    pub fn std_error(&self) -> Vec<f64> {
        if self.n < 2 {
            return vec![0.0; self.mean.len()];
        }
        let n = self.n as f64;
        self.m2.iter().map(|s| (s / (n - 1.0) / n).sqrt()).collect()
    }
}

/// Self-normalized importance-weighted means with delta-method standard errors.
///
/// Weights arrive on the log scale and are rescaled against the running maximum, and
/// values are centered at the first draw to limit cancellation.
#[derive(Debug, Clone)]
struct WeightedMoments {
    log_ref: f64,
    center: Option<Vec<f64>>,
    sw: f64,
    sw2: f64,
    swd: Vec<f64>,
    sw2d: Vec<f64>,
    sw2d2: Vec<f64>,
}

impl WeightedMoments {
    fn new(dim: usize) -> Self {
        Self {
            log_ref: f64::NEG_INFINITY,
            center: None,
            sw: 0.0,
            sw2: 0.0,
            swd: vec![0.0; dim],
            sw2d: vec![0.0; dim],
            sw2d2: vec![0.0; dim],
        }
    }

    fn push(&mut self, log_w: f64, x: &[f64]) {
        if log_w > self.log_ref {
            let f = (self.log_ref - log_w).exp();
            let f2 = f * f;
            self.sw *= f;
            self.sw2 *= f2;
            self.swd.iter_mut().for_each(|v| *v *= f);
            self.sw2d.iter_mut().for_each(|v| *v *= f2);
            self.sw2d2.iter_mut().for_each(|v| *v *= f2);
            self.log_ref = log_w;
        }
        let center = self.center.get_or_insert_with(|| x.to_vec());
        let w = (log_w - self.log_ref).exp();
        let w2 = w * w;
        self.sw += w;
        self.sw2 += w2;
        for (i, (&v, &c)) in x.iter().zip(center.iter()).enumerate() {
            let d = v - c;
            self.swd[i] += w * d;
            self.sw2d[i] += w2 * d;
            self.sw2d2[i] += w2 * d * d;
        }
    }

    fn ess(&self) -> f64 {
        if self.sw2 > 0.0 {
            self.sw * self.sw / self.sw2
        } else {
            0.0
        }
    }

    fn finish(&self) -> (Vec<f64>, Vec<f64>) {
        let center = self.center.as_deref().unwrap_or(&[]);
        let mut mean = Vec::with_capacity(center.len());
        let mut se = Vec::with_capacity(center.len());
        for (i, &c) in center.iter().enumerate() {
            let m = self.swd[i] / self.sw;
            let ss = self.sw2d2[i] - 2.0 * m * self.sw2d[i] + m * m * self.sw2;
            mean.push(c + m);
            se.push(ss.max(0.0).sqrt() / self.sw);
        }
        (mean, se)
    }
}

fn check_draws(n_draws: usize) -> Result<()> {
    if n_draws < MIN_DRAWS {
        return Err(Error::InvalidHyperparameter(format!(
            "n_draws = {n_draws} is below the minimum of {MIN_DRAWS}"
        )));
    }
    Ok(())
}

fn split_estimate(k: usize, mean: &[f64], se: &[f64], ess: f64) -> MomentEstimate {
    MomentEstimate {
        mean: DVector::from_column_slice(&mean[..k]),
        scale: DMatrix::from_column_slice(k, k, &mean[k..]),
        se_mean: DVector::from_column_slice(&se[..k]),
        se_scale: DMatrix::from_column_slice(k, k, &se[k..]),
        ess,
    }
}

/// Decomposition-sampler estimate of `E[theta~ | y]` (as `mean`) and `E[Sigma~ | y]`
/// (as `scale`).
pub fn oracle_tilde_sigma_mean(
    state: &BeliefState,
    obs: &SingleObservation,
    n_draws: usize,
    rng: &mut (impl RngCore + ?Sized),
) -> Result<MomentEstimate> {
    check_draws(n_draws)?;
    let sampler = DecompositionSampler::new(state, obs)?;
    let k = state.len();
    let mut acc = RunningMoments::new(k + k * k);
    let mut buf = vec![0.0; k + k * k];
    for _ in 0..n_draws {
        let d = sampler.sample(rng)?;
        buf[..k].copy_from_slice(d.tilde_theta(state, obs).as_slice());
        buf[k..].copy_from_slice(d.tilde_sigma(obs.k).as_slice());
        acc.push(&buf);
    }
    Ok(split_estimate(k, acc.mean(), &acc.std_error(), n_draws as f64))
}

/// Importance-sampling estimate of `E[mu | y]` (as `mean`) and `E[Sigma~ | y]` (as
/// `scale`), drawing `(mu, Sigma)` from the prior and weighting by `N(y; mu_k, Sigma_kk)`.
///
/// `Sigma~` is formed here by direct inversion of `q Sigma^{-1} + e_k e_k^T / Sigma_kk`.
pub fn oracle_posterior_mean(
    state: &BeliefState,
    obs: &SingleObservation,
    n_draws: usize,
    rng: &mut (impl RngCore + ?Sized),
) -> Result<MomentEstimate> {
    check_draws(n_draws)?;
    state.check_index(obs.k)?;
    let k = state.len();
    let kk = obs.k;
    let q = state.q();
    let q_next = q + 1.0 / k as f64;
    let prior = InverseWishart::new(state.scale(), state.b())?;
    let mut acc = WeightedMoments::new(k + k * k);
    let mut buf = vec![0.0; k + k * k];
    let ln_2pi = (2.0 * std::f64::consts::PI).ln();
    for _ in 0..n_draws {
        let sigma = prior.sample(rng);
        let chol = sigma
            .clone()
            .cholesky()
            .ok_or_else(|| Error::NotPositiveDefinite("prior draw of Sigma".into()))?;
        let mu = state.theta() + (chol.l() * standard_normal_vector(k, rng)) / q.sqrt();
        let s_kk = sigma[(kk, kk)];
        let r = obs.y - mu[kk];
        let log_w = -0.5 * (ln_2pi + s_kk.ln() + r * r / s_kk);

        let mut precision = chol.inverse() * q;
        precision[(kk, kk)] += 1.0 / s_kk;
        let tilde = precision
            .cholesky()
            .ok_or_else(|| Error::NotPositiveDefinite("posterior precision".into()))?
            .inverse()
            * q_next;

        buf[..k].copy_from_slice(mu.as_slice());
        buf[k..].copy_from_slice(tilde.as_slice());
        acc.push(log_w, &buf);
    }
    let ess = acc.ess();
    if ess < MIN_ESS {
        return Err(Error::DegenerateWeights { ess, min: MIN_ESS });
    }
    let (mean, se) = acc.finish();
    Ok(split_estimate(k, &mean, &se, ess))
}

/// Closed-form posterior expectations of the decomposition blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct DecompositionMoments {
    /// `E[A | y] = q' B_{-k|k} / (q (b - K))`
    pub a_mat: DMatrix<f64>,
    /// `E[c | y] = q' / ((q+1)(b-K)) [B_kk + q (y - theta_k)^2 / (q+1)]`
    pub c: f64,
    /// `E[a~ | y] = E[c | y] B_{-k,k} / B_kk`
    pub a_tilde: DVector<f64>,
    /// `E[c a a^T | y] = q' q~ / ((q+1)(b-K)) [B_{-k|k}/(b-K) + B_{-k,k} B_{k,-k} / B_kk]`
    pub caa: DMatrix<f64>,
}

pub fn decomposition_moments(state: &BeliefState, obs: &SingleObservation) -> Result<DecompositionMoments> {
    state.check_index(obs.k)?;
    let kf = state.len() as f64;
    let (q, b) = (state.q(), state.b());
    let q_next = q + 1.0 / kf;
    let part = partition(state.scale(), obs.k)?;
    let r = obs.y - state.theta()[obs.k];
    let q_tilde = 1.0 + q * r * r / ((q + 1.0) * part.diag);
    let c = q_next / ((q + 1.0) * (b - kf)) * (part.diag + q * r * r / (q + 1.0));
    let outer = (&part.cross * part.cross.transpose()) / part.diag;
    Ok(DecompositionMoments {
        a_mat: &part.schur * (q_next / (q * (b - kf))),
        c,
        a_tilde: &part.cross * (c / part.diag),
        caa: (&part.schur / (b - kf) + outer) * (q_next * q_tilde / ((q + 1.0) * (b - kf))),
    })
}

/// Monte Carlo estimates of the same four expectations.
#[derive(Debug, Clone)]
pub struct DecompositionEstimates {
    pub draws: usize,
    pub a_mat: (DMatrix<f64>, DMatrix<f64>),
    pub c: (f64, f64),
    pub a_tilde: (DVector<f64>, DVector<f64>),
    pub caa: (DMatrix<f64>, DMatrix<f64>),
}

/// Each field holds `(estimate, standard error)`.
pub fn estimate_decomposition_moments(
    state: &BeliefState,
    obs: &SingleObservation,
    n_draws: usize,
    rng: &mut (impl RngCore + ?Sized),
) -> Result<DecompositionEstimates> {
    check_draws(n_draws)?;
    let sampler = DecompositionSampler::new(state, obs)?;
    let m = state.len() - 1;
    let sizes = [m * m, 1, m, m * m];
    let mut acc = RunningMoments::new(sizes.iter().sum());
    let mut buf = Vec::with_capacity(sizes.iter().sum());
    for _ in 0..n_draws {
        let d = sampler.sample(rng)?;
        buf.clear();
        buf.extend_from_slice(d.a_mat.as_slice());
        buf.push(d.c);
        buf.extend_from_slice(d.a_tilde.as_slice());
        buf.extend_from_slice(((&d.a * d.a.transpose()) * d.c).as_slice());
        acc.push(&buf);
    }
    let mean = acc.mean();
    let se = acc.std_error();
    let (o1, o2, o3) = (m * m, m * m + 1, m * m + 1 + m);
    Ok(DecompositionEstimates {
        draws: n_draws,
        a_mat: (
            DMatrix::from_column_slice(m, m, &mean[..o1]),
            DMatrix::from_column_slice(m, m, &se[..o1]),
        ),
        c: (mean[o1], se[o1]),
        a_tilde: (
            DVector::from_column_slice(&mean[o2..o3]),
            DVector::from_column_slice(&se[o2..o3]),
        ),
        caa: (
            DMatrix::from_column_slice(m, m, &mean[o3..]),
            DMatrix::from_column_slice(m, m, &se[o3..]),
        ),
    })
}

/// The three terms of the divergence between the single-observation law of `Sigma~`
/// and `IW(candidate, b')`, each up to an additive constant:
/// the `B_kk` term, the `B_{-k|k}` term, and the regression-direction term.
pub fn dkl_terms(candidate: &DMatrix<f64>, state: &BeliefState, obs: &SingleObservation) -> Result<[f64; 3]> {
    state.check_index(obs.k)?;
    let n = state.len();
    if candidate.nrows() != n || candidate.ncols() != n {
        return Err(Error::DimensionMismatch(format!(
            "candidate is {}x{}, state has K = {n}",
            candidate.nrows(),
            candidate.ncols()
        )));
    }
    let kf = n as f64;
    let (q, b) = (state.q(), state.b());
    let q_next = q + 1.0 / kf;
    let b_next = b + 1.0 / kf;
    let prior = partition(state.scale(), obs.k)?;
    let cand = partition(candidate, obs.k)?;
    if !(cand.diag > 0.0) {
        return Err(Error::NotPositiveDefinite("candidate B_kk".into()));
    }
    let chol = cand
        .schur
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NotPositiveDefinite("candidate B_{-k|k}".into()))?;
    let log_det = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();

    let r = obs.y - state.theta()[obs.k];
    let q_tilde = 1.0 + q * r * r / ((q + 1.0) * prior.diag);
    let term_kk = 0.5 * (b + 1.0) * cand.diag.ln()
        + q_next * (b_next - kf + 1.0) * prior.diag * q_tilde / (2.0 * (q + 1.0) * cand.diag);

    let trace = chol.solve(&prior.schur).trace();
    let term_schur = 0.5 * b * log_det + q_next * b_next * trace / (2.0 * q);

    let d = &cand.cross / cand.diag - &prior.cross / prior.diag;
    let term_dir = q_next * prior.diag / (2.0 * q) * d.dot(&chol.solve(&d));

    Ok([term_kk, term_schur, term_dir])
}

pub fn dkl_objective(candidate: &DMatrix<f64>, state: &BeliefState, obs: &SingleObservation) -> Result<f64> {
    Ok(dkl_terms(candidate, state, obs)?.iter().sum())
}

/// A random valid belief for verification: `theta_i ~ U(-1, 1)`, `q ~ U(0.5, 3)`,
/// `b ~ U(K + 8, K + 14)` and a correlated scale matrix with unit-order entries.
pub fn random_state(k: usize, rng: &mut (impl RngCore + ?Sized)) -> Result<BeliefState> {
    let kf = k as f64;
    let theta = DVector::from_fn(k, |_, _| rng.random_range(-1.0..1.0));
    let g = DMatrix::from_fn(k, k, |_, _| rng.sample::<f64, _>(rand_distr::StandardNormal));
    let mut scale = (&g * g.transpose()) / kf;
    for i in 0..k {
        scale[(i, i)] += 0.25;
    }
    let b_hat = kf + rng.random_range(8.0..14.0);
    scale *= b_hat - kf - 1.0;
    let q = rng.random_range(0.5..3.0);
    BeliefState::new(theta, crate::belief::symmetrize(scale), q, b_hat)
}

/// A random observation of a random alternative with `|y - theta_k| <= bound * sqrt(B_kk)`.
pub fn random_observation(state: &BeliefState, bound: f64, rng: &mut (impl RngCore + ?Sized)) -> SingleObservation {
    let k = rng.random_range(0..state.len());
    let spread = state.scale()[(k, k)].sqrt();
    SingleObservation::new(k, state.theta()[k] + bound * spread * rng.random_range(-1.0..=1.0))
}
