//! Maximum-likelihood N-Curve mixtures over fixed-length trajectory sets.
//!
//! [`fit_mixture`] is the reference prior generator: it minimizes the mixture
//! negative log-likelihood of the per-step curve marginals with an EM-style
//! alternation. Control-point covariances are diagonal and floored at
//! `min_variance`. Anything able to turn an observed input into an
//! [`NCurveMixture`] can stand in for it behind [`PriorGenerator`].

mod trajectory;

use std::cmp::Ordering;

use log::{debug, info};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bezier::{bernstein_basis, NCurve, TimeGrid};
use crate::error::{Error, Result};
use crate::gaussian::{log_sum_exp, FactoredGaussian, GaussianDist};
use crate::mixture::{mixture_prior, JointMixture, NCurveMixture};

pub use trajectory::{
    dataset_shape, load_trajectories, read_trajectories_csv, save_trajectories,
    write_trajectories_csv, Trajectory,
};

const LN_2PI: f64 = 1.837_877_066_409_345_5;
const LOSS_TOL: f64 = 1e-7;
const VARIANCE_STEPS: usize = 25;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    /// Number of mixture components.
    pub k: usize,
    /// Curve degree; each curve has `degree + 1` control points.
    pub degree: usize,
    pub max_iters: usize,
    /// Initial step of the variance gradient descent (backtracked as needed).
    pub step_size: f64,
    pub seed: u64,
    pub min_variance: f64,
    pub restarts: usize,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            k: 3,
            degree: 5,
            max_iters: 500,
            step_size: 0.1,
            seed: 0,
            min_variance: 1e-6,
            restarts: 3,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k < 1 {
            return Err(Error::InvalidParameter("K must be >= 1".into()));
        }
        if self.degree < 1 || self.degree > crate::bezier::MAX_DEGREE {
            return Err(Error::InvalidParameter(format!(
                "degree must be in 1..={}",
                crate::bezier::MAX_DEGREE
            )));
        }
        if !(self.min_variance > 0.0 && self.min_variance.is_finite()) {
            return Err(Error::InvalidParameter("min_variance must be > 0".into()));
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::InvalidParameter("step_size must be > 0".into()));
        }
        if self.restarts < 1 {
            return Err(Error::InvalidParameter("restarts must be >= 1".into()));
        }
        Ok(())
    }
}

/// Fitted model plus the loss history of the winning restart.
#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub mixture: NCurveMixture,
    pub loss: f64,
    /// Loss at initialization followed by the loss after each EM iteration.
    pub loss_trace: Vec<f64>,
    pub restart: usize,
    pub converged: bool,
}

/// `(1/M) Σ_j −log Σ_k exp(log π_k + Σ_i log N(x_i^j | μ_{P_k}(t_i), Σ_{P_k}(t_i)))`.
///
/// Uses each component's per-step marginals, not the joint over the grid.
pub fn nll_loss(m: &NCurveMixture, data: &[Trajectory], grid: &TimeGrid) -> Result<f64> {
    let (n, d) = dataset_shape(data)?;
    if n != grid.len() {
        return Err(Error::dim(grid.len(), n, "trajectory length vs grid"));
    }
    if d != m.dim() {
        return Err(Error::dim(m.dim(), d, "trajectory dimension"));
    }
    let marginals = m
        .curves()
        .iter()
        .map(|c| {
            grid.values()
                .iter()
                .map(|&t| FactoredGaussian::new(&c.point(t)?))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let per_traj = data
        .par_iter()
        .map(|traj| {
            let terms = m
                .weights()
                .iter()
                .zip(&marginals)
                .map(|(w, steps)| {
                    let ll = steps
                        .iter()
                        .zip(&traj.points)
                        .map(|(g, x)| g.log_pdf(x))
                        .sum::<Result<f64>>()?;
                    Ok(w.ln() + ll)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(-log_sum_exp(&terms))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(per_traj.iter().sum::<f64>() / data.len() as f64)
}

pub fn fit_mixture(data: &[Trajectory], cfg: &FitConfig) -> Result<NCurveMixture> {
    fit_mixture_traced(data, cfg).map(|o| o.mixture)
}

/// Best of `cfg.restarts` EM runs by final loss (ties keep the earliest restart).
pub fn fit_mixture_traced(data: &[Trajectory], cfg: &FitConfig) -> Result<FitOutcome> {
    cfg.validate()?;
    let (n, d) = dataset_shape(data)?;
    if n < 2 {
        return Err(Error::InvalidCount {
            count: n,
            reason: "trajectories need at least 2 steps",
        });
    }
    if data.len() < cfg.k {
        return Err(Error::InvalidCount {
            count: data.len(),
            reason: "fewer trajectories than components",
        });
    }
    if cfg.k > 1 && data.iter().all(|t| t.points == data[0].points) {
        return Err(Error::DegenerateData(format!(
            "all {} trajectories are identical; cannot separate K={} components",
            data.len(),
            cfg.k
        )));
    }

    let problem = Problem::new(data, n, d, cfg)?;
    let mut best: Option<FitOutcome> = None;
    for r in 0..cfg.restarts {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(r as u64);
        let outcome = problem.run(&mut rng, r)?;
        info!(
            "restart {r}: loss {:.6} after {} iterations",
            outcome.loss,
            outcome.loss_trace.len() - 1
        );
        if best.as_ref().is_none_or(|b| outcome.loss < b.loss) {
            best = Some(outcome);
        }
    }
    Ok(best.expect("at least one restart"))
}

pub fn predict_prior(m: &NCurveMixture, grid: &TimeGrid) -> Result<JointMixture> {
    mixture_prior(m, grid)
}

/// Source of N-GP priors for a trajectory to be predicted.
///
/// `observed_input` holds the already observed leading points; a generator may
/// ignore it and emit an unconditional prior.
pub trait PriorGenerator: Send + Sync {
    fn name(&self) -> &str;

    fn generate(&self, observed_input: &[DVector<f64>], grid: &TimeGrid) -> Result<JointMixture>;
}

/// One mixture fitted on a training set, used for every input.
#[derive(Debug, Clone)]
pub struct FittedPrior {
    mixture: NCurveMixture,
}

impl FittedPrior {
    pub fn new(mixture: NCurveMixture) -> Self {
        Self { mixture }
    }

    pub fn fit(data: &[Trajectory], cfg: &FitConfig) -> Result<Self> {
        Ok(Self::new(fit_mixture(data, cfg)?))
    }

    pub fn mixture(&self) -> &NCurveMixture {
        &self.mixture
    }
}

impl PriorGenerator for FittedPrior {
    fn name(&self) -> &str {
        "fitted-mixture"
    }

    fn generate(&self, _observed_input: &[DVector<f64>], grid: &TimeGrid) -> Result<JointMixture> {
        predict_prior(&self.mixture, grid)
    }
}

/// Dataset in canonical order plus the Bernstein design on the uniform grid.
struct Problem<'a> {
    cfg: &'a FitConfig,
    /// `N × d` per trajectory.
    xs: Vec<DMatrix<f64>>,
    /// `N × (L+1)` basis values and their squares.
    basis: DMatrix<f64>,
    basis_sq: DMatrix<f64>,
    d: usize,
}

#[derive(Clone)]
struct Params {
    weights: Vec<f64>,
    /// `(L+1) × d` control means per component.
    means: Vec<DMatrix<f64>>,
    /// `(L+1) × d` log-variances per component.
    log_vars: Vec<DMatrix<f64>>,
}

impl<'a> Problem<'a> {
    fn new(data: &[Trajectory], n: usize, d: usize, cfg: &'a FitConfig) -> Result<Self> {
        // sorted so the result does not depend on dataset order
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.sort_by(|&a, &b| {
            let (ta, tb) = (&data[a], &data[b]);
            ta.points
                .iter()
                .flat_map(|p| p.iter())
                .zip(tb.points.iter().flat_map(|p| p.iter()))
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| *o != Ordering::Equal)
                .unwrap_or(Ordering::Equal)
                .then_with(|| ta.id.cmp(&tb.id))
        });
        let xs = order
            .iter()
            .map(|&j| DMatrix::from_fn(n, d, |i, a| data[j].points[i][a]))
            .collect();
        let grid = TimeGrid::uniform(n)?;
        let l1 = cfg.degree + 1;
        let mut basis = DMatrix::zeros(n, l1);
        for (i, &t) in grid.values().iter().enumerate() {
            for (l, b) in bernstein_basis(cfg.degree, t).into_iter().enumerate() {
                basis[(i, l)] = b;
            }
        }
        let basis_sq = basis.map(|b| b * b);
        Ok(Self {
            cfg,
            xs,
            basis,
            basis_sq,
            d,
        })
    }

    fn m(&self) -> usize {
        self.xs.len()
    }

    fn run(&self, rng: &mut ChaCha8Rng, restart: usize) -> Result<FitOutcome> {
        let mut params = self.initialize(rng)?;
        let mut trace = Vec::new();
        let mut converged = false;
        let mut prev = f64::INFINITY;
        for it in 0..=self.cfg.max_iters {
            let (loss, resp) = self.e_step(&params);
            trace.push(loss);
            debug!("restart {restart} iter {it}: loss {loss:.9}");
            if prev - loss < LOSS_TOL {
                converged = true;
                break;
            }
            prev = loss;
            if it == self.cfg.max_iters {
                break;
            }
            self.m_step(&mut params, &resp);
        }
        let loss = *trace.last().expect("trace has initial loss");
        Ok(FitOutcome {
            mixture: self.to_mixture(&params)?,
            loss,
            loss_trace: trace,
            restart,
            converged,
        })
    }

    fn step_moments(&self, params: &Params, k: usize) -> (DMatrix<f64>, DMatrix<f64>) {
        let mean = &self.basis * &params.means[k];
        let var = &self.basis_sq * params.log_vars[k].map(f64::exp);
        (mean, var)
    }

    /// Loss and `M × K` responsibilities.
    fn e_step(&self, params: &Params) -> (f64, DMatrix<f64>) {
        let k = params.weights.len();
        let moments: Vec<_> = (0..k).map(|c| self.step_moments(params, c)).collect();
        let log_norm: Vec<f64> = moments
            .iter()
            .map(|(_, v)| v.iter().map(|v| LN_2PI + v.ln()).sum::<f64>())
            .collect();
        let rows: Vec<(f64, Vec<f64>)> = self
            .xs
            .par_iter()
            .map(|x| {
                let lp: Vec<f64> = (0..k)
                    .map(|c| {
                        let (mean, var) = &moments[c];
                        let maha: f64 = x
                            .iter()
                            .zip(mean.iter())
                            .zip(var.iter())
                            .map(|((x, m), v)| (x - m) * (x - m) / v)
                            .sum();
                        params.weights[c].ln() - 0.5 * (log_norm[c] + maha)
                    })
                    .collect();
                let lse = log_sum_exp(&lp);
                (lse, lp.iter().map(|l| (l - lse).exp()).collect())
            })
            .collect();
        let loss = -rows.iter().map(|(l, _)| l).sum::<f64>() / self.m() as f64;
        let resp = DMatrix::from_fn(self.m(), k, |j, c| rows[j].1[c]);
        (loss, resp)
    }

    fn m_step(&self, params: &mut Params, resp: &DMatrix<f64>) {
        let m = self.m() as f64;
        let (n, d) = (self.basis.nrows(), self.d);
        let totals: Vec<f64> = resp.column_iter().map(|c| c.sum()).collect();
        let mass: f64 = totals.iter().sum();
        params.weights = totals.iter().map(|r| r / mass).collect();

        for (c, &rk) in totals.iter().enumerate() {
            if rk < 1e-12 * m {
                continue;
            }
            let mut xbar = DMatrix::zeros(n, d);
            for (j, x) in self.xs.iter().enumerate() {
                let r = resp[(j, c)];
                if r > 0.0 {
                    xbar += x * r;
                }
            }
            xbar /= rk;

            let var = &self.basis_sq * params.log_vars[c].map(f64::exp);
            for a in 0..d {
                let w = var.column(a).map(|v| 1.0 / v);
                if let Some(mu) = weighted_lsq(&self.basis, &w, &xbar.column(a).into_owned()) {
                    params.means[c].set_column(a, &mu);
                }
            }

            let mean = &self.basis * &params.means[c];
            let mut resid = DMatrix::zeros(n, d);
            for (j, x) in self.xs.iter().enumerate() {
                let r = resp[(j, c)];
                if r > 0.0 {
                    resid += (x - &mean).map(|e| e * e) * r;
                }
            }
            resid /= rk;
            for a in 0..d {
                let mut theta: Vec<f64> = params.log_vars[c].column(a).iter().copied().collect();
                descend_log_variances(
                    &self.basis_sq,
                    resid.column(a).as_slice(),
                    &mut theta,
                    self.cfg.min_variance.ln(),
                    self.cfg.step_size,
                );
                params.log_vars[c].set_column(a, &DVector::from_vec(theta));
            }
        }
    }

    fn initialize(&self, rng: &mut ChaCha8Rng) -> Result<Params> {
        let k = self.cfg.k;
        let (n, d) = (self.basis.nrows(), self.d);
        let flat: Vec<DVector<f64>> = self
            .xs
            .iter()
            .map(|x| DVector::from_iterator(n * d, x.iter().copied()))
            .collect();
        let assign = kmeans(&flat, k, rng);
        let floor = self.cfg.min_variance;
        let sq_mean = self.basis_sq.row_sum().sum() / n as f64;
        let unit = DVector::from_element(n, 1.0);

        let mut params = Params {
            weights: vec![0.0; k],
            means: vec![DMatrix::zeros(self.cfg.degree + 1, d); k],
            log_vars: vec![DMatrix::zeros(self.cfg.degree + 1, d); k],
        };
        for c in 0..k {
            let members: Vec<&DMatrix<f64>> = self
                .xs
                .iter()
                .zip(&assign)
                .filter(|(_, &a)| a == c)
                .map(|(x, _)| x)
                .collect();
            params.weights[c] = members.len() as f64 / self.m() as f64;
            let cnt = members.len().max(1) as f64;
            let xbar = members
                .iter()
                .fold(DMatrix::zeros(n, d), |acc, x| acc + *x)
                / cnt;
            for a in 0..d {
                let mu = weighted_lsq(&self.basis, &unit, &xbar.column(a).into_owned())
                    .ok_or_else(|| {
                        Error::DegenerateData("Bernstein design is rank deficient".into())
                    })?;
                params.means[c].set_column(a, &mu);
            }
            let mean = &self.basis * &params.means[c];
            for a in 0..d {
                let e: f64 = members
                    .iter()
                    .map(|x| {
                        (0..n)
                            .map(|i| (x[(i, a)] - mean[(i, a)]).powi(2))
                            .sum::<f64>()
                    })
                    .sum::<f64>()
                    / (cnt * n as f64);
                let s = (e / sq_mean).max(floor);
                params.log_vars[c].column_mut(a).fill(s.ln());
            }
        }
        Ok(params)
    }

    fn to_mixture(&self, params: &Params) -> Result<NCurveMixture> {
        let curves = (0..params.weights.len())
            .map(|c| {
                let pts = (0..=self.cfg.degree)
                    .map(|l| {
                        let mean = params.means[c].row(l).transpose();
                        let var = params.log_vars[c].row(l).map(f64::exp).transpose();
                        GaussianDist::new(mean, DMatrix::from_diagonal(&var))
                    })
                    .collect::<Result<Vec<_>>>()?;
                NCurve::new(pts)
            })
            .collect::<Result<Vec<_>>>()?;
        let sum: f64 = params.weights.iter().sum();
        NCurveMixture::new(params.weights.iter().map(|w| w / sum).collect(), curves)
    }
}

/// Solves `min Σ_i w_i (y_i − (B μ)_i)²`; `None` when the normal equations are singular.
fn weighted_lsq(basis: &DMatrix<f64>, w: &DVector<f64>, y: &DVector<f64>) -> Option<DVector<f64>> {
    let bw = DMatrix::from_fn(basis.nrows(), basis.ncols(), |i, l| basis[(i, l)] * w[i]);
    let a = basis.transpose() * &bw;
    let rhs = bw.transpose() * y;
    a.cholesky().map(|c| c.solve(&rhs))
}

/// `Σ_i [log v_i + e_i / v_i]` with `v = B² exp(θ)`.
fn variance_objective(basis_sq: &DMatrix<f64>, e: &[f64], theta: &[f64]) -> f64 {
    (0..basis_sq.nrows())
        .map(|i| {
            let v: f64 = (0..theta.len()).map(|l| basis_sq[(i, l)] * theta[l].exp()).sum();
            v.ln() + e[i] / v
        })
        .sum()
}

/// Projected gradient descent on log-variances with backtracking; never increases the objective.
fn descend_log_variances(basis_sq: &DMatrix<f64>, e: &[f64], theta: &mut [f64], lo: f64, step0: f64) {
    for t in theta.iter_mut() {
        *t = t.max(lo);
    }
    let mut f = variance_objective(basis_sq, e, theta);
    let mut step = step0;
    for _ in 0..VARIANCE_STEPS {
        let s: Vec<f64> = theta.iter().map(|t| t.exp()).collect();
        let v: Vec<f64> = (0..basis_sq.nrows())
            .map(|i| (0..s.len()).map(|l| basis_sq[(i, l)] * s[l]).sum())
            .collect();
        let grad: Vec<f64> = (0..s.len())
            .map(|l| {
                s[l] * (0..v.len())
                    .map(|i| basis_sq[(i, l)] * (1.0 / v[i] - e[i] / (v[i] * v[i])))
                    .sum::<f64>()
            })
            .collect();
        let mut accepted = false;
        while step > 1e-12 {
            let cand: Vec<f64> = theta
                .iter()
                .zip(&grad)
                .map(|(t, g)| (t - step * g).max(lo))
                .collect();
            let decrease: f64 = theta
                .iter()
                .zip(&cand)
                .zip(&grad)
                .map(|((t, c), g)| g * (t - c))
                .sum();
            if decrease <= 0.0 {
                return;
            }
            let fc = variance_objective(basis_sq, e, &cand);
            if fc <= f - 1e-4 * decrease {
                let gain = f - fc;
                theta.copy_from_slice(&cand);
                f = fc;
                step *= 2.0;
                accepted = true;
                if gain <= 1e-13 * f.abs().max(1.0) {
                    return;
                }
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            return;
        }
    }
}

/// Seeded k-means++ followed by Lloyd iterations; returns cluster labels.
fn kmeans(points: &[DVector<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let m = points.len();
    let dist2 = |a: &DVector<f64>, b: &DVector<f64>| (a - b).norm_squared();
    let mut centers: Vec<DVector<f64>> = vec![points[rng.random_range(0..m)].clone()];
    while centers.len() < k {
        let d2: Vec<f64> = points
            .iter()
            .map(|p| centers.iter().map(|c| dist2(p, c)).fold(f64::INFINITY, f64::min))
            .collect();
        let total: f64 = d2.iter().sum();
        let idx = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut pick = m - 1;
            for (i, w) in d2.iter().enumerate() {
                if u < *w {
                    pick = i;
                    break;
                }
                u -= w;
            }
            pick
        } else {
            rng.random_range(0..m)
        };
        centers.push(points[idx].clone());
    }

    let nearest = |p: &DVector<f64>, centers: &[DVector<f64>]| {
        let mut best = (0, f64::INFINITY);
        for (c, ctr) in centers.iter().enumerate() {
            let dd = dist2(p, ctr);
            if dd < best.1 {
                best = (c, dd);
            }
        }
        best
    };
    let mut assign = vec![usize::MAX; m];
    for _ in 0..100 {
        let mut changed = false;
        for (j, p) in points.iter().enumerate() {
            let (c, _) = nearest(p, &centers);
            if assign[j] != c {
                assign[j] = c;
                changed = true;
            }
        }
        for c in 0..k {
            if !assign.contains(&c) {
                // steal the point farthest from its own center
                let far = (0..m)
                    .max_by(|&a, &b| {
                        dist2(&points[a], &centers[assign[a]])
                            .total_cmp(&dist2(&points[b], &centers[assign[b]]))
                    })
                    .expect("non-empty");
                assign[far] = c;
                changed = true;
            }
        }
        for (c, ctr) in centers.iter_mut().enumerate() {
            let members: Vec<&DVector<f64>> = points
                .iter()
                .zip(&assign)
                .filter(|(_, &a)| a == c)
                .map(|(p, _)| p)
                .collect();
            if !members.is_empty() {
                *ctr = members
                    .iter()
                    .fold(DVector::zeros(ctr.len()), |acc, p| acc + *p)
                    / members.len() as f64;
            }
        }
        if !changed {
            break;
        }
    }
    assign
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::dvector;
    use rand_distr::{Distribution, Normal};

    fn bezier_mean(ctrl: &[DVector<f64>], t: f64) -> DVector<f64> {
        let b = bernstein_basis(ctrl.len() - 1, t);
        ctrl.iter()
            .zip(b)
            .fold(DVector::zeros(ctrl[0].len()), |acc, (p, w)| acc + p * w)
    }

    fn noisy_set(ctrl: &[DVector<f64>], n: usize, count: usize, sigma: f64, seed: u64, tag: &str) -> Vec<Trajectory> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, sigma).unwrap();
        let grid = TimeGrid::uniform(n).unwrap();
        (0..count)
            .map(|j| {
                let pts = grid
                    .values()
                    .iter()
                    .map(|&t| bezier_mean(ctrl, t).map(|v| v + noise.sample(&mut rng)))
                    .collect();
                Trajectory::new(format!("{tag}{j}"), pts).unwrap()
            })
            .collect()
    }

    #[test]
    fn nll_loss_examples() {
        let m = NCurveMixture::new(vec![1.0], vec![NCurve::univariate(&[0.0, 0.0], &[1.0, 1.0]).unwrap()]).unwrap();
        let grid = TimeGrid::new(vec![0.0]).unwrap();
        let data = vec![Trajectory::new("a", vec![dvector![0.0]]).unwrap()];
        assert!((nll_loss(&m, &data, &grid).unwrap() - 0.918_938_533_204_672_7).abs() < 1e-12);

        let grid = TimeGrid::uniform(4).unwrap();
        let c = NCurve::univariate(&[0.0, 1.0, -1.0], &[0.5, 1.0, 0.3]).unwrap();
        let one = NCurveMixture::new(vec![1.0], vec![c.clone()]).unwrap();
        let two = NCurveMixture::new(vec![0.4, 0.6], vec![c.clone(), c]).unwrap();
        let data = noisy_set(&[dvector![0.0], dvector![0.5], dvector![-0.5]], 4, 5, 0.3, 1, "t");
        let base = nll_loss(&one, &data, &grid).unwrap();
        assert!((nll_loss(&two, &data, &grid).unwrap() - base).abs() < 1e-12);
        let doubled: Vec<Trajectory> = data.iter().chain(&data).cloned().collect();
        assert!((nll_loss(&one, &doubled, &grid).unwrap() - base).abs() < 1e-12);

        let short = TimeGrid::uniform(3).unwrap();
        assert!(nll_loss(&one, &data, &short).is_err());
    }

    #[test]
    fn recovers_single_curve() {
        let ctrl = [dvector![0.0, 0.0], dvector![3.0, 5.0], dvector![6.0, -1.0], dvector![9.0, 2.0]];
        let n = 12;
        let sigma = 0.2;
        let count = 200;
        let data = noisy_set(&ctrl, n, count, sigma, 7, "a");
        let cfg = FitConfig { k: 1, degree: 3, restarts: 1, ..FitConfig::default() };
        let out = fit_mixture_traced(&data, &cfg).unwrap();
        let grid = TimeGrid::uniform(n).unwrap();
        let curve = &out.mixture.curves()[0];
        // the fitted mean at each step is close to an average of `count` noisy values
        let se = sigma / (count as f64).sqrt();
        for &t in grid.values() {
            let diff = curve.mean_at(t).unwrap() - bezier_mean(&ctrl, t);
            assert!(diff.amax() < 3.0 * se * 1.5, "t={t}: {diff}");
        }
        assert!(out.loss_trace.windows(2).all(|w| w[1] <= w[0] + 1e-9));
        let direct = nll_loss(&out.mixture, &data, &grid).unwrap();
        assert!((direct - out.loss).abs() < 1e-8 * direct.abs().max(1.0));
        assert!(out.loss <= out.loss_trace[0]);
    }

    #[test]
    fn recovers_cluster_proportions() {
        let a = [dvector![0.0, 0.0], dvector![2.0, 4.0], dvector![4.0, 4.0], dvector![6.0, 0.0]];
        let b = [dvector![0.0, 10.0], dvector![2.0, 6.0], dvector![4.0, 6.0], dvector![6.0, 10.0]];
        let mut data = noisy_set(&a, 10, 90, 0.1, 1, "a");
        data.extend(noisy_set(&b, 10, 30, 0.1, 2, "b"));
        let cfg = FitConfig { k: 2, degree: 3, restarts: 2, seed: 5, ..FitConfig::default() };
        let m = fit_mixture(&data, &cfg).unwrap();
        let mut w = m.weights().to_vec();
        w.sort_by(f64::total_cmp);
        assert!((w[0] - 0.25).abs() < 0.05 && (w[1] - 0.75).abs() < 0.05, "{w:?}");
    }

    #[test]
    fn repeated_exact_curve_hits_variance_floor() {
        let ctrl = [dvector![1.0], dvector![-2.0], dvector![0.5]];
        let grid = TimeGrid::uniform(8).unwrap();
        let pts: Vec<_> = grid.values().iter().map(|&t| bezier_mean(&ctrl, t)).collect();
        let data: Vec<_> = (0..5).map(|j| Trajectory::new(format!("r{j}"), pts.clone()).unwrap()).collect();
        let cfg = FitConfig { k: 1, degree: 2, restarts: 1, ..FitConfig::default() };
        let m = fit_mixture(&data, &cfg).unwrap();
        let c = &m.curves()[0];
        for (p, q) in c.control_points().iter().zip(&ctrl) {
            assert!((p.mean() - q).amax() < 1e-8);
            assert!((p.cov()[(0, 0)] - cfg.min_variance).abs() < 1e-12 * cfg.min_variance.max(1.0));
        }
        for (&t, x) in grid.values().iter().zip(&pts) {
            assert!((c.mean_at(t).unwrap() - x).amax() < 1e-8);
        }
    }

    #[test]
    fn degenerate_and_invalid_inputs() {
        let t = Trajectory::new("a", vec![dvector![0.0], dvector![1.0], dvector![2.0]]).unwrap();
        let same = vec![t.clone(), t.clone(), t.clone()];
        let cfg = FitConfig { k: 2, degree: 1, ..FitConfig::default() };
        assert!(matches!(fit_mixture(&same, &cfg), Err(Error::DegenerateData(_))));
        let too_few = vec![t.clone()];
        assert!(matches!(fit_mixture(&too_few, &cfg), Err(Error::InvalidCount { .. })));
        let bad = FitConfig { min_variance: 0.0, ..FitConfig::default() };
        assert!(fit_mixture(&same, &bad).is_err());
        assert!(fit_mixture(&[], &FitConfig::default()).is_err());
    }

    #[test]
    fn fit_is_deterministic_and_order_invariant() {
        let a = [dvector![0.0], dvector![4.0], dvector![1.0]];
        let b = [dvector![5.0], dvector![0.0], dvector![6.0]];
        let mut data = noisy_set(&a, 8, 20, 0.3, 3, "a");
        data.extend(noisy_set(&b, 8, 20, 0.3, 4, "b"));
        let cfg = FitConfig { k: 2, degree: 2, restarts: 2, seed: 9, ..FitConfig::default() };
        let first = fit_mixture_traced(&data, &cfg).unwrap();
        let again = fit_mixture_traced(&data, &cfg).unwrap();
        assert_eq!(first.mixture, again.mixture);
        let mut shuffled = data.clone();
        shuffled.reverse();
        shuffled.swap(3, 17);
        let other = fit_mixture_traced(&shuffled, &cfg).unwrap();
        assert!((other.loss - first.loss).abs() < 1e-9);
    }

    #[test]
    fn variance_descent_never_increases_objective() {
        let grid = TimeGrid::uniform(10).unwrap();
        let basis_sq = DMatrix::from_fn(10, 4, |i, l| bernstein_basis(3, grid.values()[i])[l].powi(2));
        let e: Vec<f64> = (0..10).map(|i| 0.01 + 0.002 * i as f64).collect();
        let mut theta = vec![0.0; 4];
        let before = variance_objective(&basis_sq, &e, &theta);
        descend_log_variances(&basis_sq, &e, &mut theta, (1e-6f64).ln(), 0.1);
        let after = variance_objective(&basis_sq, &e, &theta);
        assert!(after < before);
        assert!(theta.iter().all(|t| *t >= (1e-6f64).ln()));
    }

    #[test]
    fn fitted_prior_generator_ignores_input() {
        let c = NCurve::univariate(&[0.0, 1.0], &[1.0, 1.0]).unwrap();
        let gen = FittedPrior::new(NCurveMixture::new(vec![1.0], vec![c]).unwrap());
        let grid = TimeGrid::uniform(5).unwrap();
        let a = gen.generate(&[], &grid).unwrap();
        let b = gen.generate(&[dvector![3.0]], &grid).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, predict_prior(gen.mixture(), &grid).unwrap());
        assert_eq!(gen.name(), "fitted-mixture");
    }
}
