//! Gaussian processes induced by N-Curves.
//!
//! A kernel strategy (see [`Kernel`]) is evaluated over a [`TimeGrid`] to give the
//! joint prior of the process values as a [`JointGaussian`]. Three strategies ship
//! in [`KernelRegistry::with_builtins`]: the N-Curve kernel and the RBF and linear
//! reference kernels.

mod kernel;
mod registry;

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::bezier::{NCurve, TimeGrid};
use crate::error::{Error, Result};
use crate::gaussian::GaussianDist;

pub use kernel::{
    kernel_matrix, kernel_univariate, Kernel, KernelSpec, LinearKernel, NCurveKernel, RbfKernel,
};
pub use registry::{KernelFactory, KernelParams, KernelRegistry};

/// Joint Gaussian of a `d`-dimensional process over a time grid, time-major.
#[derive(Debug, Clone, PartialEq)]
pub struct JointGaussian {
    grid: TimeGrid,
    dist: GaussianDist,
    dim: usize,
}

impl JointGaussian {
    pub fn new(grid: TimeGrid, dist: GaussianDist, dim: usize) -> Result<Self> {
        if dim == 0 || dist.dim() != grid.len() * dim {
            return Err(Error::dim(grid.len() * dim, dist.dim(), "joint dimension"));
        }
        Ok(Self { grid, dist, dim })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn dist(&self) -> &GaussianDist {
        &self.dist
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_steps(&self) -> usize {
        self.grid.len()
    }

    /// Marginal of the point at grid position `step`.
    pub fn marginal_at(&self, step: usize) -> Result<GaussianDist> {
        if step >= self.n_steps() {
            return Err(Error::IndexOutOfRange {
                index: step,
                len: self.n_steps(),
            });
        }
        let idx: Vec<usize> = (step * self.dim..(step + 1) * self.dim).collect();
        self.dist.marginalize(&idx)
    }

    pub fn step_mean(&self, step: usize) -> DVector<f64> {
        self.dist.mean().rows(step * self.dim, self.dim).into_owned()
    }

    /// Draws `n` sequences; each is a list of `n_steps` points of dimension `d`.
    pub fn sample_prior(&self, seed: u64, n: usize) -> Result<Vec<Vec<DVector<f64>>>> {
        let d = self.dim;
        Ok(self
            .dist
            .sample(seed, n)?
            .into_iter()
            .map(|flat| {
                (0..self.n_steps())
                    .map(|j| flat.rows(j * d, d).into_owned())
                    .collect()
            })
            .collect())
    }
}

/// Stacked curve means `μ_P(t_j)` over the grid.
pub fn mean_vector(curve: &NCurve, grid: &TimeGrid) -> DVector<f64> {
    let d = curve.dim();
    let mut m = DVector::zeros(grid.len() * d);
    for (j, &t) in grid.values().iter().enumerate() {
        let mu = curve.mean_at(t).expect("grid values lie in [0, 1]");
        m.rows_mut(j * d, d).copy_from(&mu);
    }
    m
}

/// Assembles the `N·d` joint prior of `kernel` on `grid`.
///
/// Only blocks with `i ≤ j` are evaluated; the lower triangle is mirrored.
/// Positive semi-definiteness is not checked here.
pub fn gram(kernel: &dyn Kernel, grid: &TimeGrid, d: usize) -> Result<JointGaussian> {
    if kernel.output_dim() != d {
        return Err(Error::dim(kernel.output_dim(), d, "kernel output dimension"));
    }
    let n = grid.len();
    let t = grid.values();
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i..n).map(move |j| (i, j))).collect();
    let blocks = pairs
        .par_iter()
        .map(|&(i, j)| kernel.covariance(t[i], t[j]))
        .collect::<Result<Vec<_>>>()?;

    let mut cov = DMatrix::zeros(n * d, n * d);
    for (&(i, j), block) in pairs.iter().zip(&blocks) {
        cov.view_mut((i * d, j * d), (d, d)).copy_from(block);
        if i != j {
            cov.view_mut((j * d, i * d), (d, d)).copy_from(&block.transpose());
        }
    }
    let mut mean = DVector::zeros(n * d);
    for (j, &tj) in t.iter().enumerate() {
        mean.rows_mut(j * d, d).copy_from(&kernel.mean(tj)?);
    }
    JointGaussian::new(grid.clone(), GaussianDist::from_parts(mean, cov), d)
}

/// Entrywise `(G − min G) / (max G − min G)`; a constant matrix maps to zeros.
pub fn normalize_min_max(m: &DMatrix<f64>) -> DMatrix<f64> {
    let lo = m.min();
    let hi = m.max();
    let span = hi - lo;
    if span == 0.0 {
        return DMatrix::zeros(m.nrows(), m.ncols());
    }
    m.map(|v| (v - lo) / span)
}

/// Writes a Gram matrix as CSV: header `t,<column labels>`, then one row per flat index.
///
/// Column labels are the grid values; for `d > 1` they carry a `#dim` suffix.
pub fn write_gram_csv<W: Write>(
    mut out: W,
    grid: &TimeGrid,
    d: usize,
    m: &DMatrix<f64>,
) -> std::io::Result<()> {
    let labels: Vec<String> = grid
        .values()
        .iter()
        .flat_map(|t| {
            (0..d).map(move |a| {
                if d == 1 {
                    format!("{t}")
                } else {
                    format!("{t}#{a}")
                }
            })
        })
        .collect();
    writeln!(out, "t,{}", labels.join(","))?;
    for (r, label) in labels.iter().enumerate() {
        let row: Vec<String> = m.row(r).iter().map(|v| format!("{v}")).collect();
        writeln!(out, "{label},{}", row.join(","))?;
    }
    Ok(())
}

/// Writes sampled sequences as CSV with header `sample,step,t,dim0,…`.
pub fn write_samples_csv<W: Write>(
    mut out: W,
    grid: &TimeGrid,
    samples: &[Vec<DVector<f64>>],
) -> std::io::Result<()> {
    let d = samples
        .first()
        .and_then(|s| s.first())
        .map_or(1, |p| p.len());
    let dims: Vec<String> = (0..d).map(|a| format!("dim{a}")).collect();
    writeln!(out, "sample,step,t,{}", dims.join(","))?;
    for (s, seq) in samples.iter().enumerate() {
        for (j, p) in seq.iter().enumerate() {
            let vals: Vec<String> = p.iter().map(|v| format!("{v}")).collect();
            writeln!(out, "{s},{j},{},{}", grid.values()[j], vals.join(","))?;
        }
    }
    Ok(())
}

/// Fixed one-dimensional curves used for kernel comparisons.
pub mod presets {
    use crate::bezier::NCurve;

    /// Two zero-mean, unit-variance control points. Its normalized Gram equals the linear kernel's.
    pub fn unit_pair() -> NCurve {
        NCurve::univariate(&[0.0, 0.0], &[1.0, 1.0]).expect("valid preset")
    }

    /// Nine zero-mean control points with standard deviations tapering 2 → 1 toward both ends.
    pub fn tapered_nine() -> NCurve {
        let sd = [1.0, 1.25, 1.5, 1.75, 2.0, 1.75, 1.5, 1.25, 1.0];
        let var: Vec<f64> = sd.iter().map(|s: &f64| s * s).collect();
        NCurve::univariate(&[0.0; 9], &var).expect("valid preset")
    }

    pub fn by_name(name: &str) -> Option<NCurve> {
        match name {
            "unit-pair" => Some(unit_pair()),
            "tapered9" => Some(tapered_nine()),
            _ => None,
        }
    }
}
