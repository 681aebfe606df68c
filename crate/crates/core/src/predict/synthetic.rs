use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::bezier::{bernstein_basis, TimeGrid};
use crate::error::{Error, Result};
use crate::fit::Trajectory;

const PROTOTYPE_DEGREE: usize = 3;
const BOX_SCALE: f64 = 10.0;

/// Shape of a synthetic dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub prototypes: usize,
    pub per_prototype: usize,
    /// Standard deviation of i.i.d. noise added to every point.
    pub noise_sigma: f64,
    /// Standard deviation of a per-trajectory offset added to each prototype control
    /// point, giving every trajectory its own smooth deviation from the prototype.
    pub curve_jitter: f64,
    pub n: usize,
    pub d: usize,
    pub seed: u64,
}

/// Draws `prototypes` cubic Bézier mean curves with control points uniform in
/// `[0, 10]^d`, then `per_prototype` noisy copies of each on the uniform grid.
/// Ids are `p{prototype}-{index}`.
pub fn make_synthetic(
    prototypes: usize,
    per_prototype: usize,
    noise_sigma: f64,
    seed: u64,
    n: usize,
    d: usize,
) -> Result<Vec<Trajectory>> {
    make_synthetic_with(&SynthSpec {
        prototypes,
        per_prototype,
        noise_sigma,
        curve_jitter: 0.0,
        n,
        d,
        seed,
    })
}

/// [`make_synthetic`] with optional per-trajectory control-point jitter.
pub fn make_synthetic_with(spec: &SynthSpec) -> Result<Vec<Trajectory>> {
    let d = spec.d;
    for (count, reason) in [
        (spec.prototypes, "prototypes must be >= 1"),
        (spec.per_prototype, "per_prototype must be >= 1"),
        (d, "dimension must be >= 1"),
    ] {
        if count < 1 {
            return Err(Error::InvalidCount { count, reason });
        }
    }
    let normal = |sd: f64, domain: &'static str| {
        let bad = Error::Domain { value: sd, domain };
        if sd.is_nan() || sd < 0.0 {
            return Err(bad);
        }
        Normal::new(0.0, sd).map_err(|_| bad)
    };
    let noise = normal(spec.noise_sigma, "noise_sigma >= 0")?;
    let jitter = normal(spec.curve_jitter, "curve_jitter >= 0")?;
    let grid = TimeGrid::uniform(spec.n)?;
    let basis: Vec<Vec<f64>> = grid
        .values()
        .iter()
        .map(|&t| bernstein_basis(PROTOTYPE_DEGREE, t))
        .collect();
    let curve = |ctrl: &[DVector<f64>]| -> Vec<DVector<f64>> {
        basis
            .iter()
            .map(|b| {
                ctrl.iter()
                    .zip(b)
                    .fold(DVector::zeros(d), |acc, (c, w)| acc + c * *w)
            })
            .collect()
    };

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut out = Vec::with_capacity(spec.prototypes * spec.per_prototype);
    for p in 0..spec.prototypes {
        let ctrl: Vec<DVector<f64>> = (0..=PROTOTYPE_DEGREE)
            .map(|_| DVector::from_fn(d, |_, _| rng.random::<f64>() * BOX_SCALE))
            .collect();
        let prototype = curve(&ctrl);
        for i in 0..spec.per_prototype {
            let base = if spec.curve_jitter > 0.0 {
                let own: Vec<DVector<f64>> = ctrl
                    .iter()
                    .map(|c| c.map(|v| v + jitter.sample(&mut rng)))
                    .collect();
                curve(&own)
            } else {
                prototype.clone()
            };
            let points = base
                .iter()
                .map(|m| m.map(|v| v + noise.sample(&mut rng)))
                .collect();
            out.push(Trajectory::new(format!("p{p}-{i}"), points)?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_noise_copies_are_identical() {
        let data = make_synthetic(2, 4, 0.0, 3, 10, 2).unwrap();
        assert_eq!(data.len(), 8);
        assert!(data[..4].iter().all(|t| t.points == data[0].points));
        assert_ne!(data[0].points, data[4].points);
        assert_eq!(data[5].id, "p1-1");
        for t in &data {
            for p in &t.points {
                assert!(p.iter().all(|v| (0.0..=BOX_SCALE).contains(v)));
            }
        }
    }

    #[test]
    fn seeded_and_deterministic() {
        let a = make_synthetic(3, 5, 0.2, 11, 12, 2).unwrap();
        assert_eq!(a, make_synthetic(3, 5, 0.2, 11, 12, 2).unwrap());
        assert_ne!(a, make_synthetic(3, 5, 0.2, 12, 12, 2).unwrap());
    }

    #[test]
    fn noise_std_matches() {
        let sigma = 0.3;
        let clean = make_synthetic(1, 1, 0.0, 8, 20, 1).unwrap();
        let noisy = make_synthetic(1, 500, sigma, 8, 20, 1).unwrap();
        let resid: Vec<f64> = noisy
            .iter()
            .flat_map(|t| t.points.iter().zip(&clean[0].points).map(|(a, b)| a[0] - b[0]))
            .collect();
        assert_eq!(resid.len(), 10_000);
        let var = resid.iter().map(|r| r * r).sum::<f64>() / resid.len() as f64;
        assert!((var.sqrt() - sigma).abs() < 0.1 * sigma);
    }

    #[test]
    fn jitter_gives_smooth_per_trajectory_deviation() {
        let spec = SynthSpec {
            prototypes: 1,
            per_prototype: 200,
            noise_sigma: 0.0,
            curve_jitter: 0.5,
            n: 11,
            d: 1,
            seed: 2,
        };
        let data = make_synthetic_with(&spec).unwrap();
        let clean = make_synthetic(1, 1, 0.0, 2, 11, 1).unwrap();
        // endpoints move by exactly one control-point offset each
        let dev0: Vec<f64> = data.iter().map(|t| t.points[0][0] - clean[0].points[0][0]).collect();
        let var0 = dev0.iter().map(|v| v * v).sum::<f64>() / dev0.len() as f64;
        assert!((var0.sqrt() - 0.5).abs() < 0.1, "{var0}");
        // with no point noise, neighbouring deviations are strongly correlated
        let dev1: Vec<f64> = data.iter().map(|t| t.points[1][0] - clean[0].points[1][0]).collect();
        let cov: f64 = dev0.iter().zip(&dev1).map(|(a, b)| a * b).sum::<f64>() / dev0.len() as f64;
        let var1 = dev1.iter().map(|v| v * v).sum::<f64>() / dev1.len() as f64;
        assert!(cov / (var0 * var1).sqrt() > 0.8);
        assert_eq!(
            make_synthetic_with(&SynthSpec { curve_jitter: 0.0, ..spec.clone() }).unwrap(),
            make_synthetic(1, 200, 0.0, 2, 11, 1).unwrap()
        );
    }

    #[test]
    fn rejects_bad_counts() {
        assert!(make_synthetic(0, 1, 0.1, 0, 10, 2).is_err());
        assert!(make_synthetic(1, 0, 0.1, 0, 10, 2).is_err());
        assert!(make_synthetic(1, 1, -0.1, 0, 10, 2).is_err());
        assert!(make_synthetic(1, 1, 0.1, 0, 1, 2).is_err());
    }
}
