//! Mixtures of N-GPs over a shared time grid.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bezier::{NCurve, TimeGrid};
use crate::error::{Error, Result};
use crate::gaussian::{log_sum_exp, GaussianDist, IndexPartition};
use crate::ngp::{gram, JointGaussian, NCurveKernel};

pub const MODEL_VERSION: &str = "ncgp-1";

/// Posterior weights below this are set to zero before renormalizing.
pub const WEIGHT_FLOOR: f64 = 1e-12;

const SIMPLEX_TOL: f64 = 1e-9;

fn check_simplex(weights: &[f64]) -> Result<()> {
    if weights.is_empty() {
        return Err(Error::InvalidCount {
            count: 0,
            reason: "mixture needs at least one component",
        });
    }
    if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(Error::InvalidParameter(format!(
            "weights must be finite and non-negative: {weights:?}"
        )));
    }
    let sum: f64 = weights.iter().sum();
    if (sum - 1.0).abs() > SIMPLEX_TOL {
        return Err(Error::InvalidParameter(format!(
            "weights sum to {sum}, expected 1"
        )));
    }
    Ok(())
}

/// Weighted mixture of N-Curves sharing degree and dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct NCurveMixture {
    weights: Vec<f64>,
    curves: Vec<NCurve>,
}

impl NCurveMixture {
    pub fn new(weights: Vec<f64>, curves: Vec<NCurve>) -> Result<Self> {
        check_simplex(&weights)?;
        if curves.len() != weights.len() {
            return Err(Error::dim(weights.len(), curves.len(), "mixture curves"));
        }
        let (d, l) = (curves[0].dim(), curves[0].degree());
        for c in &curves {
            if c.dim() != d {
                return Err(Error::dim(d, c.dim(), "mixture curve dimension"));
            }
            if c.degree() != l {
                return Err(Error::dim(l, c.degree(), "mixture curve degree"));
            }
        }
        Ok(Self { weights, curves })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn curves(&self) -> &[NCurve] {
        &self.curves
    }

    pub fn n_components(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.curves[0].dim()
    }

    pub fn degree(&self) -> usize {
        self.curves[0].degree()
    }

    pub fn to_model_file(&self) -> ModelFile {
        ModelFile {
            version: MODEL_VERSION.to_string(),
            d: self.dim(),
            degree: self.degree(),
            k: self.n_components(),
            weights: self.weights.clone(),
            curves: self
                .curves
                .iter()
                .map(|c| {
                    c.control_points()
                        .iter()
                        .map(|p| ControlPointFile {
                            mean: p.mean().iter().copied().collect(),
                            cov: p.cov().row_iter().map(|r| r.iter().copied().collect()).collect(),
                        })
                        .collect()
                })
                .collect(),
        }
    }

    pub fn from_model_file(file: &ModelFile) -> Result<Self> {
        if file.version != MODEL_VERSION {
            return Err(Error::InvalidParameter(format!(
                "unsupported model version `{}` (expected `{MODEL_VERSION}`)",
                file.version
            )));
        }
        if file.curves.len() != file.k || file.weights.len() != file.k {
            return Err(Error::dim(file.k, file.curves.len(), "model K"));
        }
        let curves = file
            .curves
            .iter()
            .map(|cps| {
                if cps.len() != file.degree + 1 {
                    return Err(Error::dim(file.degree + 1, cps.len(), "model control points"));
                }
                let pts = cps
                    .iter()
                    .map(|cp| {
                        if cp.mean.len() != file.d {
                            return Err(Error::dim(file.d, cp.mean.len(), "model mean"));
                        }
                        if cp.cov.len() != file.d || cp.cov.iter().any(|r| r.len() != file.d) {
                            return Err(Error::dim(file.d, cp.cov.len(), "model covariance"));
                        }
                        let cov = DMatrix::from_fn(file.d, file.d, |i, j| cp.cov[i][j]);
                        GaussianDist::new(DVector::from_vec(cp.mean.clone()), cov)
                    })
                    .collect::<Result<Vec<_>>>()?;
                NCurve::new(pts)
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(file.weights.clone(), curves)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_model_file()).expect("model serializes")
    }

    pub fn from_json(s: &str, path: &Path) -> Result<Self> {
        let file: ModelFile = serde_json::from_str(s).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_model_file(&file)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_json(&s, path)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json() + "\n").map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })
    }
}

/// On-disk form of an [`NCurveMixture`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub version: String,
    pub d: usize,
    #[serde(rename = "L")]
    pub degree: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub weights: Vec<f64>,
    pub curves: Vec<Vec<ControlPointFile>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlPointFile {
    pub mean: Vec<f64>,
    pub cov: Vec<Vec<f64>>,
}

/// Weighted mixture of joint Gaussians over one shared grid.
#[derive(Debug, Clone, PartialEq)]
pub struct JointMixture {
    weights: Vec<f64>,
    components: Vec<JointGaussian>,
}

impl JointMixture {
    pub fn new(weights: Vec<f64>, components: Vec<JointGaussian>) -> Result<Self> {
        check_simplex(&weights)?;
        if components.len() != weights.len() {
            return Err(Error::dim(weights.len(), components.len(), "mixture components"));
        }
        let first = &components[0];
        for c in &components[1..] {
            if c.grid() != first.grid() || c.dim() != first.dim() {
                return Err(Error::InvalidParameter(
                    "mixture components must share grid and dimension".into(),
                ));
            }
        }
        Ok(Self {
            weights,
            components,
        })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn components(&self) -> &[JointGaussian] {
        &self.components
    }

    pub fn n_components(&self) -> usize {
        self.weights.len()
    }

    pub fn grid(&self) -> &TimeGrid {
        self.components[0].grid()
    }

    pub fn dim(&self) -> usize {
        self.components[0].dim()
    }

    pub fn n_steps(&self) -> usize {
        self.grid().len()
    }

    /// Draws `n` sequences: a component by weight, then a sequence from that component.
    /// Returns `(component, points)` per draw.
    pub fn sample(&self, seed: u64, n: usize) -> Result<Vec<(usize, Vec<DVector<f64>>)>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let picks: Vec<usize> = (0..n)
            .map(|_| {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                for (k, w) in self.weights.iter().enumerate() {
                    acc += w;
                    if u < acc {
                        return k;
                    }
                }
                argmax_weight(&self.weights)
            })
            .collect();
        let factors = self
            .components
            .iter()
            .map(|c| c.dist().factor())
            .collect::<Result<Vec<_>>>()?;
        let (d, steps) = (self.dim(), self.n_steps());
        Ok(picks
            .into_iter()
            .map(|k| {
                let dist = self.components[k].dist();
                let z = DVector::from_fn(dist.dim(), |_, _| rng.sample::<f64, _>(StandardNormal));
                let flat = dist.mean() + factors[k].l() * z;
                (k, (0..steps).map(|j| flat.rows(j * d, d).into_owned()).collect())
            })
            .collect())
    }

    /// Conditions every component on `obs` at the observed block of `part` and reweights
    /// by each component's evidence. `part` must observe whole time steps.
    pub fn condition(
        &self,
        part: &IndexPartition,
        obs: &DVector<f64>,
        obs_noise: f64,
    ) -> Result<JointMixture> {
        mixture_condition(self, part, obs, obs_noise)
    }

    /// Convenience for conditioning on whole steps: `points[i]` is observed at `steps[i]`.
    pub fn condition_steps(
        &self,
        steps: &[usize],
        points: &[DVector<f64>],
        obs_noise: f64,
    ) -> Result<JointMixture> {
        if steps.len() != points.len() {
            return Err(Error::dim(steps.len(), points.len(), "observed points"));
        }
        let d = self.dim();
        let mut order: Vec<usize> = (0..steps.len()).collect();
        order.sort_by_key(|&i| steps[i]);
        let mut obs = Vec::with_capacity(steps.len() * d);
        for &i in &order {
            if points[i].len() != d {
                return Err(Error::dim(d, points[i].len(), "observed point"));
            }
            obs.extend(points[i].iter());
        }
        let part = IndexPartition::from_steps(steps, self.n_steps(), d)?;
        self.condition(&part, &DVector::from_vec(obs), obs_noise)
    }
}

/// Per-component N-GP priors over `grid`; weights carried over.
pub fn mixture_prior(m: &NCurveMixture, grid: &TimeGrid) -> Result<JointMixture> {
    let components = m
        .curves()
        .iter()
        .map(|c| gram(&NCurveKernel::new(c.clone()), grid, c.dim()))
        .collect::<Result<Vec<_>>>()?;
    JointMixture::new(m.weights().to_vec(), components)
}

/// Latent-step positions for a step-aligned partition.
fn latent_steps(part: &IndexPartition, d: usize) -> Result<Vec<usize>> {
    let aligned = |idx: &[usize]| {
        idx.chunks(d)
            .all(|c| c.len() == d && c[0] % d == 0 && c.windows(2).all(|w| w[1] == w[0] + 1))
    };
    if !aligned(part.observed()) || !aligned(part.latent()) {
        return Err(Error::InvalidParameter(
            "partition must observe whole time steps".into(),
        ));
    }
    Ok(part.latent().chunks(d).map(|c| c[0] / d).collect())
}

pub fn mixture_condition(
    jm: &JointMixture,
    part: &IndexPartition,
    obs: &DVector<f64>,
    obs_noise: f64,
) -> Result<JointMixture> {
    let d = jm.dim();
    let steps = latent_steps(part, d)?;
    if part.observed().is_empty() {
        return Ok(jm.clone());
    }
    let grid = jm.grid().select(&steps)?;

    let conditioned = jm
        .components
        .par_iter()
        .enumerate()
        .map(|(k, c)| {
            c.dist()
                .condition_with_evidence(part, obs, obs_noise)
                .map_err(|e| match e {
                    Error::NonPsdCovariance { context } => Error::NonPsdCovariance {
                        context: format!("component {k}: {context}"),
                    },
                    other => other,
                })
        })
        .collect::<Result<Vec<_>>>()?;

    let log_post: Vec<f64> = jm
        .weights
        .iter()
        .zip(&conditioned)
        .map(|(w, (_, ev))| w.ln() + ev)
        .collect();
    let weights = normalize_log_weights(&log_post)?;

    let components = conditioned
        .into_iter()
        .map(|(g, _)| JointGaussian::new(grid.clone(), g, d))
        .collect::<Result<Vec<_>>>()?;
    JointMixture::new(weights, components)
}

/// Normalizes log-weights with log-sum-exp, then applies [`WEIGHT_FLOOR`].
pub(crate) fn normalize_log_weights(log_w: &[f64]) -> Result<Vec<f64>> {
    let norm = log_sum_exp(log_w);
    if !norm.is_finite() {
        return Err(Error::DegenerateData(
            "observation has zero likelihood under every component".into(),
        ));
    }
    let mut w: Vec<f64> = log_w.iter().map(|l| (l - norm).exp()).collect();
    for v in w.iter_mut() {
        if *v < WEIGHT_FLOOR {
            *v = 0.0;
        }
    }
    let sum: f64 = w.iter().sum();
    for v in w.iter_mut() {
        *v /= sum;
    }
    Ok(w)
}

/// Mixture of per-step marginals.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureMarginal {
    pub weights: Vec<f64>,
    pub components: Vec<GaussianDist>,
}

impl MixtureMarginal {
    pub fn mean(&self) -> DVector<f64> {
        let d = self.components[0].dim();
        self.weights
            .iter()
            .zip(&self.components)
            .fold(DVector::zeros(d), |acc, (w, g)| acc + g.mean() * *w)
    }

    /// Law of total variance: `Σ π_k (Σ_k + μ_k μ_kᵀ) − μ μᵀ`.
    pub fn covariance(&self) -> DMatrix<f64> {
        let mu = self.mean();
        let d = mu.len();
        let mut cov = DMatrix::zeros(d, d);
        for (w, g) in self.weights.iter().zip(&self.components) {
            let dm = g.mean() - &mu;
            cov += (g.cov() + &dm * dm.transpose()) * *w;
        }
        cov
    }

    /// `log Σ_k π_k N(x | component k)`; zero-weight components are skipped.
    ///
    /// A component with an all-zero covariance is a point mass: it yields `+∞`
    /// when `x` equals its mean and contributes nothing otherwise.
    pub fn log_pdf(&self, x: &DVector<f64>) -> Result<f64> {
        let mut terms = Vec::with_capacity(self.weights.len());
        for (w, g) in self.weights.iter().zip(&self.components) {
            if *w <= 0.0 {
                continue;
            }
            if g.cov().iter().all(|v| *v == 0.0) {
                if x.len() != g.dim() {
                    return Err(Error::dim(g.dim(), x.len(), "log_pdf point"));
                }
                if x == g.mean() {
                    return Ok(f64::INFINITY);
                }
                continue;
            }
            terms.push(w.ln() + g.log_pdf(x)?);
        }
        Ok(log_sum_exp(&terms))
    }
}

pub fn mixture_marginal(jm: &JointMixture, step: usize) -> Result<MixtureMarginal> {
    let components = jm
        .components
        .iter()
        .map(|c| c.marginal_at(step))
        .collect::<Result<Vec<_>>>()?;
    Ok(MixtureMarginal {
        weights: jm.weights.clone(),
        components,
    })
}

/// `log Σ_k π_k N(seq | component k)` over the full flattened sequence.
pub fn mixture_log_likelihood(jm: &JointMixture, seq: &DVector<f64>) -> Result<f64> {
    let m = jm.n_steps() * jm.dim();
    if seq.len() != m {
        return Err(Error::dim(m, seq.len(), "sequence length"));
    }
    let terms = jm
        .weights
        .iter()
        .zip(&jm.components)
        .filter(|(w, _)| **w > 0.0)
        .map(|(w, c)| Ok(w.ln() + c.dist().log_pdf(seq)?))
        .collect::<Result<Vec<_>>>()?;
    Ok(log_sum_exp(&terms))
}

/// Index of the largest weight; ties go to the lowest index.
pub fn ml_component(jm: &JointMixture) -> usize {
    argmax_weight(&jm.weights)
}

pub(crate) fn argmax_weight(weights: &[f64]) -> usize {
    let mut best = 0;
    for (k, &w) in weights.iter().enumerate() {
        if w > weights[best] {
            best = k;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{dmatrix, dvector};
    use proptest::prelude::{prop_assert, proptest};

    fn curve1(means: &[f64], vars: &[f64]) -> NCurve {
        NCurve::univariate(means, vars).unwrap()
    }

    fn two_mode(sep: f64) -> JointMixture {
        let m = NCurveMixture::new(
            vec![0.5, 0.5],
            vec![
                curve1(&[-sep, -sep], &[1.0, 1.0]),
                curve1(&[sep, sep], &[1.0, 1.0]),
            ],
        )
        .unwrap();
        mixture_prior(&m, &TimeGrid::uniform(2).unwrap()).unwrap()
    }

    #[test]
    fn mixture_validation() {
        let c = curve1(&[0.0, 1.0], &[1.0, 1.0]);
        assert!(NCurveMixture::new(vec![0.5, 0.6], vec![c.clone(), c.clone()]).is_err());
        assert!(NCurveMixture::new(vec![1.0], vec![c.clone(), c.clone()]).is_err());
        assert!(NCurveMixture::new(vec![], vec![]).is_err());
        let other_degree = curve1(&[0.0, 1.0, 2.0], &[1.0, 1.0, 1.0]);
        assert!(NCurveMixture::new(vec![0.5, 0.5], vec![c, other_degree]).is_err());
    }

    #[test]
    fn single_component_prior_is_gram() {
        let c = curve1(&[0.0, 2.0, 1.0], &[1.0, 0.5, 2.0]);
        let grid = TimeGrid::uniform(5).unwrap();
        let m = NCurveMixture::new(vec![1.0], vec![c.clone()]).unwrap();
        let jm = mixture_prior(&m, &grid).unwrap();
        assert_eq!(jm.components()[0], gram(&NCurveKernel::new(c), &grid, 1).unwrap());
    }

    #[test]
    fn identical_components_match_single_density() {
        let c = curve1(&[0.0, 2.0, 1.0], &[1.0, 0.5, 2.0]);
        let grid = TimeGrid::uniform(4).unwrap();
        let single = mixture_prior(&NCurveMixture::new(vec![1.0], vec![c.clone()]).unwrap(), &grid).unwrap();
        let dup = mixture_prior(
            &NCurveMixture::new(vec![0.3, 0.7], vec![c.clone(), c]).unwrap(),
            &grid,
        )
        .unwrap();
        let x = dvector![0.1, 0.9, 1.2, 0.8];
        let a = mixture_log_likelihood(&single, &x).unwrap();
        let b = mixture_log_likelihood(&dup, &x).unwrap();
        assert!((a - b).abs() < 1e-12);
        assert!((a - single.components()[0].dist().log_pdf(&x).unwrap()).abs() < 1e-14);
    }

    #[test]
    fn separated_modes_inflate_marginal_variance() {
        let jm = two_mode(3.0);
        let mm = mixture_marginal(&jm, 0).unwrap();
        let total = mm.covariance()[(0, 0)];
        // π(σ² + μ²) summed minus overall mean² = 1 + 9
        assert!((total - 10.0).abs() < 1e-12);
        for g in &mm.components {
            assert!(total > g.cov()[(0, 0)]);
        }
        assert!(mm.mean()[0].abs() < 1e-15);
    }

    #[test]
    fn condition_single_component() {
        let c = curve1(&[0.0, 2.0], &[1.0, 0.5]);
        let grid = TimeGrid::uniform(3).unwrap();
        let jm = mixture_prior(&NCurveMixture::new(vec![1.0], vec![c]).unwrap(), &grid).unwrap();
        let part = IndexPartition::new(vec![2], 3).unwrap();
        let post = jm.condition(&part, &dvector![1.5], 0.0).unwrap();
        assert_eq!(post.weights(), &[1.0]);
        let direct = jm.components()[0].dist().condition(&part, &dvector![1.5], 0.0).unwrap();
        assert_eq!(post.components()[0].dist(), &direct);
        assert_eq!(post.grid().values(), &[0.0, 0.5]);
    }

    #[test]
    fn decisive_observation_selects_mode() {
        let jm = two_mode(5.0);
        let part = IndexPartition::new(vec![0], 2).unwrap();
        let post = jm.condition(&part, &dvector![-5.0], 0.0).unwrap();
        assert!(post.weights()[0] >= 0.99, "{:?}", post.weights());
        assert_eq!(ml_component(&post), 0);

        let sym = jm.condition(&part, &dvector![0.0], 0.0).unwrap();
        assert!((sym.weights()[0] - 0.5).abs() < 1e-15);
        assert!((sym.weights()[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn weight_floor_zeroes_negligible_components() {
        let jm = two_mode(20.0);
        let part = IndexPartition::new(vec![0], 2).unwrap();
        let post = jm.condition(&part, &dvector![-20.0], 0.0).unwrap();
        assert_eq!(post.weights(), &[1.0, 0.0]);
        // a second round must not produce NaN
        let part = IndexPartition::new(vec![0], 1).unwrap();
        let again = post.condition(&part, &dvector![-19.0], 0.0).unwrap();
        assert_eq!(again.weights(), &[1.0, 0.0]);
    }

    #[test]
    fn empty_observation_is_identity() {
        let jm = two_mode(1.0);
        let part = IndexPartition::new(vec![], 2).unwrap();
        assert_eq!(jm.condition(&part, &dvector![], 0.0).unwrap(), jm);
        assert_eq!(jm.condition_steps(&[], &[], 0.0).unwrap(), jm);
    }

    #[test]
    fn partial_step_partition_rejected() {
        let c = NCurve::new(vec![GaussianDist::standard(2); 2]).unwrap();
        let jm = mixture_prior(
            &NCurveMixture::new(vec![1.0], vec![c]).unwrap(),
            &TimeGrid::uniform(2).unwrap(),
        )
        .unwrap();
        let part = IndexPartition::new(vec![1], 4).unwrap();
        assert!(jm.condition(&part, &dvector![0.0], 0.0).is_err());
    }

    #[test]
    fn marginal_examples() {
        let jm = two_mode(2.0);
        assert!(matches!(
            mixture_marginal(&jm, 2),
            Err(Error::IndexOutOfRange { .. })
        ));
        let mm = mixture_marginal(&jm, 1).unwrap();
        let expect: f64 = jm
            .weights()
            .iter()
            .zip(jm.components())
            .map(|(w, c)| w * c.step_mean(1)[0])
            .sum();
        assert!((mm.mean()[0] - expect).abs() < 1e-15);
    }

    #[test]
    fn log_likelihood_lower_bound_and_errors() {
        let jm = two_mode(1.0);
        let x = dvector![0.3, -0.4];
        let ll = mixture_log_likelihood(&jm, &x).unwrap();
        for (w, c) in jm.weights().iter().zip(jm.components()) {
            assert!(ll >= w.ln() + c.dist().log_pdf(&x).unwrap());
        }
        assert!(mixture_log_likelihood(&jm, &dvector![0.0]).is_err());
    }

    #[test]
    fn ml_component_ties() {
        assert_eq!(argmax_weight(&[0.2, 0.5, 0.3]), 1);
        assert_eq!(argmax_weight(&[0.5, 0.5]), 0);
    }

    #[test]
    fn model_json_round_trip() {
        let m = NCurveMixture::new(
            vec![0.25, 0.75],
            vec![
                NCurve::new(vec![
                    GaussianDist::new(dvector![0.1, 1.0 / 3.0], dmatrix![1e-7, 0.0; 0.0, 2.5]).unwrap(),
                    GaussianDist::new(dvector![-4.0, 7.123456789012345], dmatrix![0.3, 0.1; 0.1, 0.2]).unwrap(),
                ])
                .unwrap(),
                NCurve::new(vec![GaussianDist::standard(2); 2]).unwrap(),
            ],
        )
        .unwrap();
        let s = m.to_json();
        assert!(s.contains("\"version\": \"ncgp-1\""));
        assert!(s.contains("\"L\": 1") && s.contains("\"K\": 2"));
        let back = NCurveMixture::from_json(&s, Path::new("mem")).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_json(), s);

        let bad = s.replace("ncgp-1", "ncgp-0");
        assert!(NCurveMixture::from_json(&bad, Path::new("mem")).is_err());
        assert!(matches!(
            NCurveMixture::from_json("{", Path::new("mem")),
            Err(Error::Json { .. })
        ));
    }

    proptest! {
        #[test]
        fn posterior_weights_are_simplex_and_order_invariant(seed in 0u64..10_000, obs in -4.0f64..4.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let k = 3;
            let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.1..1.0)).collect();
            let s: f64 = raw.iter().sum();
            let weights: Vec<f64> = raw.iter().map(|w| w / s).collect();
            let curves: Vec<NCurve> = (0..k)
                .map(|_| {
                    let means: Vec<f64> = (0..3).map(|_| rng.random_range(-3.0..3.0)).collect();
                    let vars: Vec<f64> = (0..3).map(|_| rng.random_range(0.1..2.0)).collect();
                    curve1(&means, &vars)
                })
                .collect();
            let grid = TimeGrid::uniform(4).unwrap();
            let jm = mixture_prior(&NCurveMixture::new(weights.clone(), curves.clone()).unwrap(), &grid).unwrap();
            let post = jm.condition_steps(&[1], &[dvector![obs]], 0.0).unwrap();
            let sum: f64 = post.weights().iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-12);
            prop_assert!(post.weights().iter().all(|w| *w >= 0.0));

            let perm = [2usize, 0, 1];
            let pw: Vec<f64> = perm.iter().map(|&i| weights[i]).collect();
            let pc: Vec<NCurve> = perm.iter().map(|&i| curves[i].clone()).collect();
            let pjm = mixture_prior(&NCurveMixture::new(pw, pc).unwrap(), &grid).unwrap();
            let ppost = pjm.condition_steps(&[1], &[dvector![obs]], 0.0).unwrap();
            for (j, &i) in perm.iter().enumerate() {
                prop_assert!((ppost.weights()[j] - post.weights()[i]).abs() < 1e-12);
                prop_assert!((ppost.components()[j].dist().mean() - post.components()[i].dist().mean()).amax() < 1e-12);
            }
        }
    }

    #[test]
    fn mixture_sampling_follows_weights() {
        let a = NCurve::univariate(&[0.0, 0.0], &[0.01, 0.01]).unwrap();
        let b = NCurve::univariate(&[10.0, 10.0], &[0.01, 0.01]).unwrap();
        let m = NCurveMixture::new(vec![0.25, 0.75], vec![a, b]).unwrap();
        let jm = mixture_prior(&m, &TimeGrid::uniform(4).unwrap()).unwrap();
        let draws = jm.sample(3, 4000).unwrap();
        assert_eq!(draws, jm.sample(3, 4000).unwrap());
        let frac = draws.iter().filter(|(k, _)| *k == 1).count() as f64 / 4000.0;
        assert!((frac - 0.75).abs() < 0.03, "{frac}");
        for (k, seq) in &draws {
            assert_eq!(seq.len(), 4);
            assert!((seq[2][0] - 10.0 * *k as f64).abs() < 1.0);
        }
    }

}
