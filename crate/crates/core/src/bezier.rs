//! Bernstein basis, time grids and probabilistic Bézier curves.
//!
//! Flat vectors over a grid are time-major everywhere in this crate: step `j`
//! of a `d`-dimensional sequence occupies indices `j·d .. j·d + d`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::gaussian::GaussianDist;

pub const MAX_DEGREE: usize = 60;

fn binomial(n: usize, k: usize) -> f64 {
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

fn check_unit(t: f64) -> Result<()> {
    if (0.0..=1.0).contains(&t) {
        Ok(())
    } else {
        Err(Error::Domain {
            value: t,
            domain: "[0, 1]",
        })
    }
}

/// `b_{l,L}(t) = C(L,l) (1−t)^(L−l) t^l`.
pub fn bernstein(l: usize, degree: usize, t: f64) -> Result<f64> {
    if l > degree {
        return Err(Error::IndexOutOfRange {
            index: l,
            len: degree + 1,
        });
    }
    if degree > MAX_DEGREE {
        return Err(Error::InvalidParameter(format!(
            "degree {degree} exceeds {MAX_DEGREE}"
        )));
    }
    check_unit(t)?;
    Ok(bernstein_unchecked(l, degree, t))
}

fn bernstein_unchecked(l: usize, degree: usize, t: f64) -> f64 {
    binomial(degree, l) * (1.0 - t).powi((degree - l) as i32) * t.powi(l as i32)
}

/// All `degree + 1` basis values at `t`.
pub fn bernstein_basis(degree: usize, t: f64) -> Vec<f64> {
    (0..=degree)
        .map(|l| bernstein_unchecked(l, degree, t))
        .collect()
}

/// Sorted, strictly increasing curve parameters in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    values: Vec<f64>,
}

impl TimeGrid {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        for &t in &values {
            check_unit(t)?;
        }
        if values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidParameter(
                "time grid must be strictly increasing".into(),
            ));
        }
        Ok(Self { values })
    }

    /// `{ v / (n−1) | v = 0, …, n−1 }`.
    pub fn uniform(n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidCount {
                count: n,
                reason: "uniform grid needs at least 2 points",
            });
        }
        let last = (n - 1) as f64;
        Ok(Self {
            values: (0..n).map(|v| v as f64 / last).collect(),
        })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Sub-grid at the given (sorted) positions.
    pub fn select(&self, steps: &[usize]) -> Result<TimeGrid> {
        let values = steps
            .iter()
            .map(|&s| {
                self.values.get(s).copied().ok_or(Error::IndexOutOfRange {
                    index: s,
                    len: self.values.len(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        TimeGrid::new(values)
    }
}

/// Bézier curve with independent Gaussian control points.
#[derive(Debug, Clone, PartialEq)]
pub struct NCurve {
    control_points: Vec<GaussianDist>,
}

impl NCurve {
    pub fn new(control_points: Vec<GaussianDist>) -> Result<Self> {
        if control_points.len() < 2 {
            return Err(Error::InvalidCount {
                count: control_points.len(),
                reason: "an N-Curve needs at least 2 control points",
            });
        }
        if control_points.len() - 1 > MAX_DEGREE {
            return Err(Error::InvalidParameter(format!(
                "degree {} exceeds {MAX_DEGREE}",
                control_points.len() - 1
            )));
        }
        let d = control_points[0].dim();
        if d == 0 {
            return Err(Error::InvalidParameter("zero-dimensional control points".into()));
        }
        if let Some(p) = control_points.iter().find(|p| p.dim() != d) {
            return Err(Error::dim(d, p.dim(), "control point dimension"));
        }
        Ok(Self { control_points })
    }

    /// Curve with scalar control points `N(means[l], variances[l])`.
    pub fn univariate(means: &[f64], variances: &[f64]) -> Result<Self> {
        if means.len() != variances.len() {
            return Err(Error::dim(means.len(), variances.len(), "variances"));
        }
        let points = means
            .iter()
            .zip(variances)
            .map(|(&m, &v)| GaussianDist::new(DVector::from_element(1, m), DMatrix::from_element(1, 1, v)))
            .collect::<Result<Vec<_>>>()?;
        Self::new(points)
    }

    pub fn control_points(&self) -> &[GaussianDist] {
        &self.control_points
    }

    pub fn degree(&self) -> usize {
        self.control_points.len() - 1
    }

    pub fn dim(&self) -> usize {
        self.control_points[0].dim()
    }

    /// Mean `Σ b_l(t) μ_l` and covariance `Σ b_l(t)² Σ_l` of the curve point at `t`.
    pub fn point(&self, t: f64) -> Result<GaussianDist> {
        check_unit(t)?;
        let d = self.dim();
        let mut mean = DVector::zeros(d);
        let mut cov = DMatrix::zeros(d, d);
        for (b, p) in bernstein_basis(self.degree(), t).into_iter().zip(&self.control_points) {
            mean += p.mean() * b;
            cov += p.cov() * (b * b);
        }
        Ok(GaussianDist::from_parts(mean, cov))
    }

    /// Mean of the curve point at `t`.
    pub fn mean_at(&self, t: f64) -> Result<DVector<f64>> {
        check_unit(t)?;
        let mut mean = DVector::zeros(self.dim());
        for (b, p) in bernstein_basis(self.degree(), t).into_iter().zip(&self.control_points) {
            mean += p.mean() * b;
        }
        Ok(mean)
    }

    /// Block matrix `C` with `C[j, l] = b_{l,L}(t_j) I_d`, shape `(N·d) × ((L+1)·d)`.
    pub fn construction_matrix(&self, grid: &TimeGrid) -> DMatrix<f64> {
        let d = self.dim();
        let cols = self.control_points.len();
        let mut c = DMatrix::zeros(grid.len() * d, cols * d);
        for (j, &t) in grid.values().iter().enumerate() {
            for (l, b) in bernstein_basis(self.degree(), t).into_iter().enumerate() {
                for a in 0..d {
                    c[(j * d + a, l * d + a)] = b;
                }
            }
        }
        c
    }

    /// Joint law of the curve over `grid` as the linear image `C · P` of the stacked control points.
    pub fn joint_via_transform(&self, grid: &TimeGrid) -> GaussianDist {
        let d = self.dim();
        let k = self.control_points.len() * d;
        let mut stacked_mean = DVector::zeros(k);
        let mut block_cov = DMatrix::zeros(k, k);
        for (l, p) in self.control_points.iter().enumerate() {
            stacked_mean.rows_mut(l * d, d).copy_from(p.mean());
            block_cov.view_mut((l * d, l * d), (d, d)).copy_from(p.cov());
        }
        let c = self.construction_matrix(grid);
        let mean = &c * stacked_mean;
        let cov = &c * block_cov * c.transpose();
        GaussianDist::from_parts(mean, cov)
    }
}
