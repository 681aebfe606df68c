use std::fmt;

use nalgebra::{DMatrix, DVector};

use crate::bezier::{bernstein_basis, NCurve};
use crate::error::{Error, Result};

/// A (possibly matrix-valued) covariance function over `t ∈ [0, 1]` together with its mean function.
pub trait Kernel: Send + Sync + fmt::Debug {
    fn name(&self) -> &str;

    /// Dimension `d` of the process values.
    fn output_dim(&self) -> usize;

    fn mean(&self, t: f64) -> Result<DVector<f64>>;

    /// The `d × d` block `K(t_i, t_j)`.
    fn covariance(&self, ti: f64, tj: f64) -> Result<DMatrix<f64>>;
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

/// Matrix-valued kernel of an N-Curve in its expanded closed form:
///
/// `K(t_i, t_j) = −μ_X μ_Yᵀ + Σ_l b_l(t_i) b_l(t_j) (Σ_l + μ_l μ_lᵀ) + Σ_l Σ_{l'≠l} b_l(t_i) b_{l'}(t_j) μ_l μ_{l'}ᵀ`
pub fn kernel_matrix(curve: &NCurve, ti: f64, tj: f64) -> Result<DMatrix<f64>> {
    check_unit(ti)?;
    check_unit(tj)?;
    let pts = curve.control_points();
    let bi = bernstein_basis(curve.degree(), ti);
    let bj = bernstein_basis(curve.degree(), tj);
    let d = curve.dim();

    let mut mu_x = DVector::zeros(d);
    let mut mu_y = DVector::zeros(d);
    for (l, p) in pts.iter().enumerate() {
        mu_x += p.mean() * bi[l];
        mu_y += p.mean() * bj[l];
    }

    let mut k = -(&mu_x * mu_y.transpose());
    for (l, p) in pts.iter().enumerate() {
        let second_moment = p.cov() + p.mean() * p.mean().transpose();
        k += second_moment * (bi[l] * bj[l]);
        for (m, q) in pts.iter().enumerate() {
            if m != l {
                k += p.mean() * q.mean().transpose() * (bi[l] * bj[m]);
            }
        }
    }
    Ok(k)
}

/// Scalar kernel of a one-dimensional N-Curve.
pub fn kernel_univariate(curve: &NCurve, ti: f64, tj: f64) -> Result<f64> {
    if curve.dim() != 1 {
        return Err(Error::dim(1, curve.dim(), "univariate kernel"));
    }
    check_unit(ti)?;
    check_unit(tj)?;
    let bi = bernstein_basis(curve.degree(), ti);
    let bj = bernstein_basis(curve.degree(), tj);
    let mu: Vec<f64> = curve.control_points().iter().map(|p| p.mean()[0]).collect();
    let var: Vec<f64> = curve.control_points().iter().map(|p| p.cov()[(0, 0)]).collect();
    let mu_x: f64 = bi.iter().zip(&mu).map(|(b, m)| b * m).sum();
    let mu_y: f64 = bj.iter().zip(&mu).map(|(b, m)| b * m).sum();

    let mut k = -mu_x * mu_y;
    for l in 0..mu.len() {
        k += bi[l] * bj[l] * (var[l] + mu[l] * mu[l]);
        for m in 0..mu.len() {
            if m != l {
                k += bi[l] * bj[m] * mu[l] * mu[m];
            }
        }
    }
    Ok(k)
}

#[derive(Debug, Clone)]
pub struct NCurveKernel {
    curve: NCurve,
}

impl NCurveKernel {
    pub fn new(curve: NCurve) -> Self {
        Self { curve }
    }

    pub fn curve(&self) -> &NCurve {
        &self.curve
    }
}

impl Kernel for NCurveKernel {
    fn name(&self) -> &str {
        "ncurve"
    }

    fn output_dim(&self) -> usize {
        self.curve.dim()
    }

    fn mean(&self, t: f64) -> Result<DVector<f64>> {
        self.curve.mean_at(t)
    }

    /// Evaluated as `Σ_l b_l(t_i) b_l(t_j) Σ_l`, the form [`kernel_matrix`] reduces to once its
    /// mean products cancel. Skipping the products keeps deterministic curves at exactly zero.
    fn covariance(&self, ti: f64, tj: f64) -> Result<DMatrix<f64>> {
        check_unit(ti)?;
        check_unit(tj)?;
        let bi = bernstein_basis(self.curve.degree(), ti);
        let bj = bernstein_basis(self.curve.degree(), tj);
        let d = self.curve.dim();
        let mut k = DMatrix::zeros(d, d);
        for (l, p) in self.curve.control_points().iter().enumerate() {
            k += p.cov() * (bi[l] * bj[l]);
        }
        Ok(k)
    }
}

/// `σ² exp(−|t_i − t_j|² / (2 l²))`, zero mean.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RbfKernel {
    pub sigma: f64,
    pub length_scale: f64,
}

impl RbfKernel {
    pub fn new(sigma: f64, length_scale: f64) -> Result<Self> {
        positive("sigma", sigma)?;
        positive("length_scale", length_scale)?;
        Ok(Self {
            sigma,
            length_scale,
        })
    }
}

impl Kernel for RbfKernel {
    fn name(&self) -> &str {
        "rbf"
    }

    fn output_dim(&self) -> usize {
        1
    }

    fn mean(&self, t: f64) -> Result<DVector<f64>> {
        check_unit(t)?;
        Ok(DVector::zeros(1))
    }

    fn covariance(&self, ti: f64, tj: f64) -> Result<DMatrix<f64>> {
        check_unit(ti)?;
        check_unit(tj)?;
        let r = ti - tj;
        let v = self.sigma.powi(2) * (-(r * r) / (2.0 * self.length_scale.powi(2))).exp();
        Ok(DMatrix::from_element(1, 1, v))
    }
}

/// `σ_b² + σ² (t_i − c)(t_j − c)`, zero mean.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearKernel {
    pub sigma: f64,
    pub sigma_b: f64,
    pub c: f64,
}

impl LinearKernel {
    pub fn new(sigma: f64, sigma_b: f64, c: f64) -> Result<Self> {
        positive("sigma", sigma)?;
        if !(sigma_b >= 0.0 && sigma_b.is_finite()) {
            return Err(Error::InvalidParameter(format!("sigma_b must be >= 0, got {sigma_b}")));
        }
        if !c.is_finite() {
            return Err(Error::InvalidParameter(format!("c must be finite, got {c}")));
        }
        Ok(Self { sigma, sigma_b, c })
    }
}

impl Kernel for LinearKernel {
    fn name(&self) -> &str {
        "linear"
    }

    fn output_dim(&self) -> usize {
        1
    }

    fn mean(&self, t: f64) -> Result<DVector<f64>> {
        check_unit(t)?;
        Ok(DVector::zeros(1))
    }

    fn covariance(&self, ti: f64, tj: f64) -> Result<DMatrix<f64>> {
        check_unit(ti)?;
        check_unit(tj)?;
        let v = self.sigma_b.powi(2) + self.sigma.powi(2) * (ti - self.c) * (tj - self.c);
        Ok(DMatrix::from_element(1, 1, v))
    }
}

fn positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{name} must be > 0, got {v}")))
    }
}

/// Typed description of a kernel choice.
#[derive(Debug, Clone)]
pub enum KernelSpec {
    NCurve(NCurve),
    Rbf { sigma: f64, length_scale: f64 },
    Linear { sigma: f64, sigma_b: f64, c: f64 },
}

impl KernelSpec {
    pub fn build(&self) -> Result<Box<dyn Kernel>> {
        Ok(match self {
            KernelSpec::NCurve(c) => Box::new(NCurveKernel::new(c.clone())),
            KernelSpec::Rbf {
                sigma,
                length_scale,
            } => Box::new(RbfKernel::new(*sigma, *length_scale)?),
            KernelSpec::Linear { sigma, sigma_b, c } => {
                Box::new(LinearKernel::new(*sigma, *sigma_b, *c)?)
            }
        })
    }
}
