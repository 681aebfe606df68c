//! Trajectory prediction on top of mixture priors: refinement on observed input
//! points, mid-horizon updates, displacement and likelihood metrics, and a
//! synthetic benchmark.
//!
//! Steps are 0-based everywhere. With `n_in = 8` the two-point refinement plan
//! observes steps `{3, 7}`.

mod bench;
mod synthetic;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::Trajectory;
use crate::gaussian::IndexPartition;
use crate::mixture::{mixture_condition, mixture_marginal, ml_component, JointMixture, MixtureMarginal};

pub use bench::{
    default_plans, run_benchmark, split_indices, BenchReport, DetailRow, NamedPlan, NllFlag,
    PlanSummary,
};
pub use synthetic::{make_synthetic, make_synthetic_with, SynthSpec};

/// Split of a length-`N` trajectory into observed input and predicted horizon.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub n_in: usize,
    pub n_pred: usize,
}

impl SplitSpec {
    pub fn new(n_in: usize, n_pred: usize) -> Result<Self> {
        if n_in < 1 || n_pred < 1 {
            return Err(Error::InvalidParameter(
                "split needs n_in >= 1 and n_pred >= 1".into(),
            ));
        }
        Ok(Self { n_in, n_pred })
    }

    pub fn n_steps(&self) -> usize {
        self.n_in + self.n_pred
    }

    pub fn input_steps(&self) -> std::ops::Range<usize> {
        0..self.n_in
    }

    pub fn prediction_steps(&self) -> std::ops::Range<usize> {
        self.n_in..self.n_steps()
    }
}

/// Steps to observe and the noise variance added to the observed block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionPlan {
    steps: Vec<usize>,
    obs_noise: f64,
}

impl ConditionPlan {
    pub fn new(mut steps: Vec<usize>, obs_noise: f64) -> Result<Self> {
        if !(obs_noise >= 0.0 && obs_noise.is_finite()) {
            return Err(Error::Domain {
                value: obs_noise,
                domain: "obs_noise >= 0",
            });
        }
        steps.sort_unstable();
        if steps.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidParameter("plan steps must be distinct".into()));
        }
        Ok(Self { steps, obs_noise })
    }

    /// Unconditioned prior.
    pub fn empty() -> Self {
        Self {
            steps: Vec::new(),
            obs_noise: 0.0,
        }
    }

    /// Last input point.
    pub fn posterior_a(split: &SplitSpec, obs_noise: f64) -> Result<Self> {
        Self::new(vec![split.n_in - 1], obs_noise)
    }

    /// Fourth and last input points (just the last one when `n_in <= 4`).
    pub fn posterior_b(split: &SplitSpec, obs_noise: f64) -> Result<Self> {
        let mut steps = vec![3.min(split.n_in - 1), split.n_in - 1];
        steps.dedup();
        Self::new(steps, obs_noise)
    }

    pub fn steps(&self) -> &[usize] {
        &self.steps
    }

    pub fn obs_noise(&self) -> f64 {
        self.obs_noise
    }
}

/// A predictive mixture over the steps that are still latent, plus the observed
/// points it was conditioned on.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    mixture: JointMixture,
    latent_steps: Vec<usize>,
    observed: Vec<(usize, DVector<f64>)>,
    n_steps: usize,
}

impl Prediction {
    /// Nothing observed yet; every step is latent.
    pub fn from_prior(jm: JointMixture) -> Self {
        let n = jm.n_steps();
        Self {
            mixture: jm,
            latent_steps: (0..n).collect(),
            observed: Vec::new(),
            n_steps: n,
        }
    }

    /// Mixture over [`Self::latent_steps`] in that order.
    pub fn mixture(&self) -> &JointMixture {
        &self.mixture
    }

    pub fn latent_steps(&self) -> &[usize] {
        &self.latent_steps
    }

    /// Observed `(step, point)` pairs sorted by step.
    pub fn observed(&self) -> &[(usize, DVector<f64>)] {
        &self.observed
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn dim(&self) -> usize {
        self.mixture.dim()
    }

    pub fn weights(&self) -> &[f64] {
        self.mixture.weights()
    }

    pub fn ml_component(&self) -> usize {
        ml_component(&self.mixture)
    }

    fn position(&self, step: usize) -> Option<usize> {
        self.latent_steps.binary_search(&step).ok()
    }

    fn observed_at(&self, step: usize) -> Option<&DVector<f64>> {
        self.observed
            .binary_search_by_key(&step, |(s, _)| *s)
            .ok()
            .map(|i| &self.observed[i].1)
    }

    /// Per-step mixture marginal; `None` for observed steps.
    pub fn marginal(&self, step: usize) -> Result<Option<MixtureMarginal>> {
        self.check_step(step)?;
        self.position(step)
            .map(|p| mixture_marginal(&self.mixture, p))
            .transpose()
    }

    /// Full-length sequence of `component` means with observed points reinserted.
    pub fn component_sequence(&self, component: usize) -> Result<Vec<DVector<f64>>> {
        let c = self
            .mixture
            .components()
            .get(component)
            .ok_or(Error::IndexOutOfRange {
                index: component,
                len: self.mixture.n_components(),
            })?;
        Ok((0..self.n_steps)
            .map(|s| match self.position(s) {
                Some(p) => c.step_mean(p),
                None => self.observed_at(s).expect("step is observed").clone(),
            })
            .collect())
    }

    pub fn ml_sequence(&self) -> Vec<DVector<f64>> {
        self.component_sequence(self.ml_component())
            .expect("ml component exists")
    }

    fn check_step(&self, step: usize) -> Result<()> {
        if step >= self.n_steps {
            return Err(Error::IndexOutOfRange {
                index: step,
                len: self.n_steps,
            });
        }
        Ok(())
    }

    /// Conditions on further observations given at absolute steps.
    pub fn update(&self, observations: &[(usize, DVector<f64>)], obs_noise: f64) -> Result<Self> {
        if observations.is_empty() {
            return Ok(self.clone());
        }
        let d = self.dim();
        let mut obs = observations.to_vec();
        obs.sort_by_key(|(s, _)| *s);
        let mut positions = Vec::with_capacity(obs.len());
        for (i, (s, p)) in obs.iter().enumerate() {
            self.check_step(*s)?;
            if i > 0 && obs[i - 1].0 == *s {
                return Err(Error::InvalidParameter(format!("step {s} observed twice")));
            }
            if p.len() != d {
                return Err(Error::dim(d, p.len(), "observed point"));
            }
            positions.push(self.position(*s).ok_or_else(|| {
                Error::InvalidParameter(format!("step {s} is already observed"))
            })?);
        }
        let part = IndexPartition::from_steps(&positions, self.latent_steps.len(), d)?;
        let flat = DVector::from_iterator(obs.len() * d, obs.iter().flat_map(|(_, p)| p.iter().copied()));
        let mixture = mixture_condition(&self.mixture, &part, &flat, obs_noise)?;
        let latent_steps = self
            .latent_steps
            .iter()
            .copied()
            .filter(|s| obs.binary_search_by_key(s, |(o, _)| *o).is_err())
            .collect();
        let mut observed = self.observed.clone();
        observed.extend(obs);
        observed.sort_by_key(|(s, _)| *s);
        Ok(Self {
            mixture,
            latent_steps,
            observed,
            n_steps: self.n_steps,
        })
    }
}

/// Posterior predictive given the points of `traj` at `plan.steps`.
pub fn refine(jm: &JointMixture, traj: &Trajectory, plan: &ConditionPlan) -> Result<Prediction> {
    if traj.len() != jm.n_steps() {
        return Err(Error::dim(jm.n_steps(), traj.len(), "trajectory length"));
    }
    let obs: Vec<(usize, DVector<f64>)> = plan
        .steps
        .iter()
        .map(|&s| {
            traj.points
                .get(s)
                .map(|p| (s, p.clone()))
                .ok_or(Error::IndexOutOfRange {
                    index: s,
                    len: traj.len(),
                })
        })
        .collect::<Result<_>>()?;
    Prediction::from_prior(jm.clone()).update(&obs, plan.obs_noise)
}

/// Conditions an existing prediction on new `(step, point)` observations, anywhere
/// in the horizon and with gaps allowed.
pub fn update(
    pred: &Prediction,
    observations: &[(usize, DVector<f64>)],
    obs_noise: f64,
) -> Result<Prediction> {
    pred.update(observations, obs_noise)
}

fn check_eval(pred: &Prediction, traj: &Trajectory, eval_steps: &[usize]) -> Result<()> {
    if traj.len() != pred.n_steps() {
        return Err(Error::dim(pred.n_steps(), traj.len(), "trajectory length"));
    }
    if traj.dim() != pred.dim() {
        return Err(Error::dim(pred.dim(), traj.dim(), "trajectory dimension"));
    }
    eval_steps.iter().try_for_each(|&s| pred.check_step(s))
}

/// Mean Euclidean distance between `traj` and the ML-component means over
/// `eval_steps`. NaN for an empty step list.
pub fn ade(pred: &Prediction, traj: &Trajectory, eval_steps: &[usize]) -> Result<f64> {
    check_eval(pred, traj, eval_steps)?;
    if eval_steps.is_empty() {
        return Ok(f64::NAN);
    }
    let seq = pred.ml_sequence();
    let total: f64 = eval_steps
        .iter()
        .map(|&s| (&seq[s] - &traj.points[s]).norm())
        .sum();
    Ok(total / eval_steps.len() as f64)
}

/// Mean over `eval_steps` of `−log Σ_k π_k N(x_step | step marginal of k)`.
/// Observed steps have no density and are rejected. NaN for an empty step list.
pub fn nll_metric(pred: &Prediction, traj: &Trajectory, eval_steps: &[usize]) -> Result<f64> {
    check_eval(pred, traj, eval_steps)?;
    if eval_steps.is_empty() {
        return Ok(f64::NAN);
    }
    let mut total = 0.0;
    for &s in eval_steps {
        let m = pred.marginal(s)?.ok_or_else(|| {
            Error::InvalidParameter(format!("step {s} is observed; NLL is undefined there"))
        })?;
        total -= m.log_pdf(&traj.points[s])?;
    }
    Ok(total / eval_steps.len() as f64)
}
