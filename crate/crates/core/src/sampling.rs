//! Random variate generation: multivariate normal and inverse-Wishart draws, and the
//! seed derivation used to give every replication its own reproducible stream.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};

use crate::error::{Error, Result};

pub type StreamRng = ChaCha8Rng;

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Hashes an ordered list of keys into a 64-bit seed.
pub fn derive_seed(keys: &[u64]) -> u64 {
    keys.iter().fold(0x5eed_u64, |acc, &k| mix64(acc ^ mix64(k)))
}

pub fn stream(keys: &[u64]) -> StreamRng {
    StreamRng::seed_from_u64(derive_seed(keys))
}

pub fn standard_normal_vector(n: usize, rng: &mut (impl RngCore + ?Sized)) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

/// `N(mean, L L^T)` given the lower Cholesky factor `L`.
pub fn sample_mvn(mean: &DVector<f64>, chol_lower: &DMatrix<f64>, rng: &mut (impl RngCore + ?Sized)) -> DVector<f64> {
    mean + chol_lower * standard_normal_vector(mean.len(), rng)
}

pub fn cholesky_lower(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    Cholesky::<f64, Dyn>::new(m.clone())
        .map(|c| c.l())
        .ok_or_else(|| Error::NotPositiveDefinite(what.to_string()))
}

/// Inverse-Wishart `IW_p(scale, dof)` with density proportional to
/// `|S|^{-(dof + p + 1)/2} exp(-tr(scale S^{-1}) / 2)`, so `E[S] = scale / (dof - p - 1)`.
///
/// Draws `W ~ Wishart(scale^{-1}, dof)` by Bartlett decomposition and returns `W^{-1}`.
#[derive(Debug, Clone)]
pub struct InverseWishart {
    dim: usize,
    dof: f64,
    /// Lower Cholesky factor of `scale^{-1}`.
    precision_chol: DMatrix<f64>,
    chi: Vec<ChiSquared<f64>>,
}

impl InverseWishart {
    pub fn new(scale: &DMatrix<f64>, dof: f64) -> Result<Self> {
        let dim = scale.nrows();
        if !(dof > dim as f64 - 1.0) {
            return Err(Error::InvalidDof(dof));
        }
        let inv = scale
            .clone()
            .cholesky()
            .ok_or_else(|| Error::NotPositiveDefinite("inverse-Wishart scale".into()))?
            .inverse();
        let precision_chol = cholesky_lower(&inv, "inverse-Wishart precision")?;
        let chi = (0..dim)
            .map(|i| ChiSquared::new(dof - i as f64).map_err(|_| Error::InvalidDof(dof - i as f64)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            dim,
            dof,
            precision_chol,
            chi,
        })
    }

    pub fn dof(&self) -> f64 {
        self.dof
    }

    pub fn sample(&self, rng: &mut (impl RngCore + ?Sized)) -> DMatrix<f64> {
        let p = self.dim;
        let mut bartlett = DMatrix::zeros(p, p);
        for i in 0..p {
            bartlett[(i, i)] = self.chi[i].sample(rng).sqrt();
            for j in 0..i {
                bartlett[(i, j)] = rng.sample(StandardNormal);
            }
        }
        let factor = &self.precision_chol * bartlett;
        let factor_inv = factor
            .solve_lower_triangular(&DMatrix::identity(p, p))
            .expect("Bartlett factor has a positive diagonal");
        let out = factor_inv.transpose() * factor_inv;
        (&out + out.transpose()) * 0.5
    }
}

/// One-dimensional inverse-Wishart, i.e. `scale / chi^2_dof`.
pub fn sample_inverse_chi2(scale: f64, dof: f64, rng: &mut (impl RngCore + ?Sized)) -> Result<f64> {
    let chi = ChiSquared::new(dof).map_err(|_| Error::InvalidDof(dof))?;
    Ok(scale / chi.sample(rng))
}
