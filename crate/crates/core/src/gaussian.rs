//! Finite-dimensional Gaussian algebra.
//!
//! Every random quantity in the crate is eventually a [`GaussianDist`]: control
//! points, curve points, and the flattened joint over a time grid. Factorizations
//! go through a jittered Cholesky so that the near-singular covariances produced by
//! curve constructions and repeated conditioning remain usable.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Diagonal jitter levels tried in order, relative to the mean diagonal magnitude.
pub const JITTER_LADDER: [f64; 4] = [0.0, 1e-12, 1e-10, 1e-8];

const SYMMETRY_TOL: f64 = 1e-10;

/// Posterior covariances below this fraction of the prior scale are rounding residue.
const COLLAPSE_TOL: f64 = 1e-10;

/// Lower Cholesky factor obtained after adding the smallest working rung of [`JITTER_LADDER`].
#[derive(Debug, Clone)]
pub struct JitteredCholesky {
    l: DMatrix<f64>,
    jitter: f64,
    degenerate: bool,
}

impl JitteredCholesky {
    /// Factorizes `a`, which must be square and symmetric.
    ///
    /// An exactly zero matrix yields a zero factor: it is valid for sampling but
    /// cannot be solved against.
    pub fn new(a: &DMatrix<f64>, context: &str) -> Result<Self> {
        let n = a.nrows();
        if n == 0 {
            return Ok(Self {
                l: DMatrix::zeros(0, 0),
                jitter: 0.0,
                degenerate: false,
            });
        }
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::non_psd(format!("{context}: non-finite entries")));
        }
        let scale = a.diagonal().iter().map(|v| v.abs()).sum::<f64>() / n as f64;
        if scale == 0.0 {
            if a.iter().all(|&v| v == 0.0) {
                return Ok(Self {
                    l: DMatrix::zeros(n, n),
                    jitter: 0.0,
                    degenerate: true,
                });
            }
            return Err(Error::non_psd(format!(
                "{context}: zero diagonal with non-zero off-diagonal entries"
            )));
        }
        for level in JITTER_LADDER {
            let jitter = level * scale;
            let mut m = a.clone();
            for i in 0..n {
                m[(i, i)] += jitter;
            }
            if let Some(chol) = m.cholesky() {
                return Ok(Self {
                    l: chol.unpack(),
                    jitter,
                    degenerate: false,
                });
            }
        }
        Err(Error::non_psd(format!(
            "{context}: Cholesky failed at jitter {:e}",
            JITTER_LADDER[JITTER_LADDER.len() - 1] * scale
        )))
    }

    pub fn l(&self) -> &DMatrix<f64> {
        &self.l
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    fn require_solvable(&self, context: &str) -> Result<()> {
        if self.degenerate {
            Err(Error::non_psd(format!("{context}: singular (zero) covariance")))
        } else {
            Ok(())
        }
    }

    /// `L⁻¹ b`.
    pub fn solve_lower(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        if self.l.nrows() == 0 {
            return DMatrix::zeros(0, b.ncols());
        }
        self.l
            .solve_lower_triangular(b)
            .expect("non-zero Cholesky pivots")
    }

    pub fn log_det(&self) -> f64 {
        2.0 * self.l.diagonal().iter().map(|v| v.ln()).sum::<f64>()
    }
}

/// A multivariate normal `N(mean, cov)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianDist {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
}

impl GaussianDist {
    /// Builds a Gaussian, symmetrizing `cov` as `(A + Aᵀ)/2`.
    ///
    /// Rejects non-square or mismatched shapes, non-finite values and asymmetry
    /// above `1e-10` relative to the largest entry. Positive semi-definiteness is
    /// checked lazily by the operations that factorize.
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        let m = mean.len();
        if cov.nrows() != m || cov.ncols() != m {
            return Err(Error::dim(m, cov.nrows(), "covariance shape"));
        }
        if mean.iter().chain(cov.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(
                "non-finite mean or covariance entry".into(),
            ));
        }
        let max_abs = cov.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
        let asym = (&cov - cov.transpose()).amax();
        if asym > SYMMETRY_TOL * max_abs.max(f64::MIN_POSITIVE) {
            return Err(Error::InvalidParameter(format!(
                "covariance asymmetric by {asym:e}"
            )));
        }
        Ok(Self {
            mean,
            cov: symmetrize(cov),
        })
    }

    pub(crate) fn from_parts(mean: DVector<f64>, cov: DMatrix<f64>) -> Self {
        debug_assert_eq!(mean.len(), cov.nrows());
        Self {
            mean,
            cov: symmetrize(cov),
        }
    }

    pub fn standard(dim: usize) -> Self {
        Self {
            mean: DVector::zeros(dim),
            cov: DMatrix::identity(dim, dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    pub fn factor(&self) -> Result<JitteredCholesky> {
        JitteredCholesky::new(&self.cov, "gaussian covariance")
    }

    pub fn log_pdf(&self, x: &DVector<f64>) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::dim(self.dim(), x.len(), "log_pdf point"));
        }
        let chol = self.factor()?;
        chol.require_solvable("log_pdf")?;
        Ok(log_pdf_with(&chol, &(x - &self.mean)))
    }

    /// `n` i.i.d. draws `mean + L z`, deterministic in `seed`.
    pub fn sample(&self, seed: u64, n: usize) -> Result<Vec<DVector<f64>>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.sample_with(&mut rng, n)
    }

    pub fn sample_with<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Result<Vec<DVector<f64>>> {
        let chol = self.factor()?;
        let m = self.dim();
        Ok((0..n)
            .map(|_| {
                let z = DVector::from_fn(m, |_, _| rng.sample::<f64, _>(StandardNormal));
                &self.mean + chol.l() * z
            })
            .collect())
    }

    /// Restricts to `keep`, in the given order.
    pub fn marginalize(&self, keep: &[usize]) -> Result<GaussianDist> {
        let m = self.dim();
        if keep.is_empty() {
            return Err(Error::InvalidCount {
                count: 0,
                reason: "marginal needs at least one index",
            });
        }
        let mut seen = vec![false; m];
        for &i in keep {
            if i >= m {
                return Err(Error::IndexOutOfRange { index: i, len: m });
            }
            if std::mem::replace(&mut seen[i], true) {
                return Err(Error::InvalidParameter(format!("duplicate index {i}")));
            }
        }
        Ok(Self {
            mean: self.mean.select_rows(keep),
            cov: self.cov.select_rows(keep).select_columns(keep),
        })
    }

    /// Distribution of the latent block given the observed block, with
    /// `obs_noise · I` added to the observed covariance.
    pub fn condition(
        &self,
        part: &IndexPartition,
        obs_values: &DVector<f64>,
        obs_noise: f64,
    ) -> Result<GaussianDist> {
        self.condition_with_evidence(part, obs_values, obs_noise)
            .map(|(g, _)| g)
    }

    /// Log density of `obs_values` under the observed-block marginal plus noise.
    pub fn observed_marginal_logpdf(
        &self,
        part: &IndexPartition,
        obs_values: &DVector<f64>,
        obs_noise: f64,
    ) -> Result<f64> {
        self.condition_with_evidence(part, obs_values, obs_noise)
            .map(|(_, lp)| lp)
    }

    /// Conditions and also returns the log evidence, sharing one factorization.
    pub fn condition_with_evidence(
        &self,
        part: &IndexPartition,
        obs_values: &DVector<f64>,
        obs_noise: f64,
    ) -> Result<(GaussianDist, f64)> {
        part.check_len(self.dim())?;
        if obs_values.len() != part.observed.len() {
            return Err(Error::dim(
                part.observed.len(),
                obs_values.len(),
                "observed values",
            ));
        }
        if !(obs_noise >= 0.0 && obs_noise.is_finite()) {
            return Err(Error::Domain {
                value: obs_noise,
                domain: "obs_noise >= 0",
            });
        }
        let o = &part.observed;
        let u = &part.latent;
        let mu_u = self.mean.select_rows(u);
        let s_uu = self.cov.select_rows(u).select_columns(u);
        if o.is_empty() {
            return Ok((Self::from_parts(mu_u, s_uu), 0.0));
        }

        let mut s_oo = self.cov.select_rows(o).select_columns(o);
        for i in 0..o.len() {
            s_oo[(i, i)] += obs_noise;
        }
        let chol = JitteredCholesky::new(&s_oo, "observed block")?;
        chol.require_solvable("observed block")?;

        let innovation = obs_values - self.mean.select_rows(o);
        let evidence = log_pdf_with(&chol, &innovation);

        let s_ou = self.cov.select_rows(o).select_columns(u);
        let w = chol.solve_lower(&s_ou);
        let alpha = chol.solve_lower(&DMatrix::from_column_slice(
            innovation.len(),
            1,
            innovation.as_slice(),
        ));
        let mean = mu_u + (w.transpose() * alpha).column(0);
        let prior_scale = s_uu.diagonal().amax();
        let mut cov = s_uu - w.transpose() * &w;
        if cov.amax() <= COLLAPSE_TOL * prior_scale {
            // observations pinned the latent block; keep an exact point mass
            cov.fill(0.0);
        }
        Ok((Self::from_parts(mean, cov), evidence))
    }
}

/// A Gaussian with its factor computed once, for repeated density evaluation.
#[derive(Debug, Clone)]
pub struct FactoredGaussian {
    mean: DVector<f64>,
    chol: JitteredCholesky,
}

impl FactoredGaussian {
    pub fn new(g: &GaussianDist) -> Result<Self> {
        let chol = g.factor()?;
        chol.require_solvable("log_pdf")?;
        Ok(Self {
            mean: g.mean.clone(),
            chol,
        })
    }

    pub fn log_pdf(&self, x: &DVector<f64>) -> Result<f64> {
        if x.len() != self.mean.len() {
            return Err(Error::dim(self.mean.len(), x.len(), "log_pdf point"));
        }
        Ok(log_pdf_with(&self.chol, &(x - &self.mean)))
    }
}

fn log_pdf_with(chol: &JitteredCholesky, centered: &DVector<f64>) -> f64 {
    let m = centered.len();
    if m == 0 {
        return 0.0;
    }
    let z = chol.solve_lower(&DMatrix::from_column_slice(m, 1, centered.as_slice()));
    -0.5 * (m as f64 * LN_2PI + chol.log_det() + z.norm_squared())
}

pub(crate) fn symmetrize(a: DMatrix<f64>) -> DMatrix<f64> {
    let t = a.transpose();
    (a + t) * 0.5
}

/// Split of flat indices `{0, …, m−1}` into an observed and a latent block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IndexPartition {
    observed: Vec<usize>,
    latent: Vec<usize>,
}

impl IndexPartition {
    /// `observed` may be given in any order; it is sorted. Duplicates are rejected.
    pub fn new(mut observed: Vec<usize>, len: usize) -> Result<Self> {
        observed.sort_unstable();
        for w in observed.windows(2) {
            if w[0] == w[1] {
                return Err(Error::InvalidParameter(format!(
                    "duplicate observed index {}",
                    w[0]
                )));
            }
        }
        if let Some(&last) = observed.last() {
            if last >= len {
                return Err(Error::IndexOutOfRange { index: last, len });
            }
        }
        let latent = (0..len)
            .filter(|i| observed.binary_search(i).is_err())
            .collect();
        Ok(Self { observed, latent })
    }

    /// Observes every coordinate of each listed time step in a time-major layout.
    pub fn from_steps(steps: &[usize], n_steps: usize, dim: usize) -> Result<Self> {
        let mut flat = Vec::with_capacity(steps.len() * dim);
        for &s in steps {
            if s >= n_steps {
                return Err(Error::IndexOutOfRange {
                    index: s,
                    len: n_steps,
                });
            }
            flat.extend(s * dim..(s + 1) * dim);
        }
        Self::new(flat, n_steps * dim)
    }

    pub fn observed(&self) -> &[usize] {
        &self.observed
    }

    pub fn latent(&self) -> &[usize] {
        &self.latent
    }

    pub fn len(&self) -> usize {
        self.observed.len() + self.latent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn check_len(&self, m: usize) -> Result<()> {
        if self.len() != m {
            return Err(Error::dim(m, self.len(), "partition size"));
        }
        Ok(())
    }
}

/// `log Σ exp(x_i)`, returning `-∞` for an empty or all `-∞` input.
pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// `−½ log(2π)`, the log density of a standard normal at its mean.
pub fn std_normal_log_peak() -> f64 {
    -0.5 * (2.0 * PI).ln()
}
