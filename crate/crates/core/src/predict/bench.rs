use std::fmt::Write as _;
use std::io::Write;

use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{ade, nll_metric, refine, ConditionPlan, SplitSpec};
use crate::bezier::TimeGrid;
use crate::error::{Error, Result};
use crate::fit::{dataset_shape, fit_mixture_traced, predict_prior, FitConfig, Trajectory};

const MIN_DATASET: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedPlan {
    pub name: String,
    pub plan: ConditionPlan,
}

/// `prior`, `posteriorA` (last input point) and `posteriorB` (fourth and last input points).
pub fn default_plans(split: &SplitSpec, obs_noise: f64) -> Result<Vec<NamedPlan>> {
    Ok(vec![
        NamedPlan {
            name: "prior".into(),
            plan: ConditionPlan::empty(),
        },
        NamedPlan {
            name: "posteriorA".into(),
            plan: ConditionPlan::posterior_a(split, obs_noise)?,
        },
        NamedPlan {
            name: "posteriorB".into(),
            plan: ConditionPlan::posterior_b(split, obs_noise)?,
        },
    ])
}

/// Mean metrics of one plan over the test set. `None` when no test case had a
/// step to evaluate on that side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanSummary {
    pub plan: String,
    pub ade_in: Option<f64>,
    pub ade_pred: Option<f64>,
    pub nll_in: Option<f64>,
    pub nll_pred: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetailRow {
    pub traj_id: String,
    pub plan: String,
    pub ade_in: Option<f64>,
    pub ade_pred: Option<f64>,
    pub nll_in: Option<f64>,
    pub nll_pred: Option<f64>,
}

/// A test case whose two-point posterior scores a worse prediction-side NLL than
/// the one-point posterior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NllFlag {
    pub traj_id: String,
    pub nll_pred_a: f64,
    pub nll_pred_b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub seed: u64,
    pub n_train: usize,
    pub n_test: usize,
    pub split: SplitSpec,
    pub fit: FitConfig,
    pub train_loss: f64,
    pub plans: Vec<NamedPlan>,
    pub summary: Vec<PlanSummary>,
    pub flags: Vec<NllFlag>,
    pub details: Vec<DetailRow>,
}

impl BenchReport {
    pub fn summary_for(&self, plan: &str) -> Option<&PlanSummary> {
        self.summary.iter().find(|s| s.plan == plan)
    }

    /// Aligned text table: one row per plan, input-side value before prediction-side value.
    pub fn to_table(&self) -> String {
        let cell = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.4}"));
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<12} {:>12} {:>12} {:>12} {:>12}",
            "plan", "ML-ADE in", "ML-ADE pred", "NLL in", "NLL pred"
        );
        for r in &self.summary {
            let _ = writeln!(
                s,
                "{:<12} {:>12} {:>12} {:>12} {:>12}",
                r.plan,
                cell(r.ade_in),
                cell(r.ade_pred),
                cell(r.nll_in),
                cell(r.nll_pred)
            );
        }
        let _ = writeln!(
            s,
            "train {} / test {}, flagged posteriorB NLL > posteriorA NLL: {}",
            self.n_train,
            self.n_test,
            self.flags.len()
        );
        s
    }

    /// `traj_id,plan,ade_in,ade_pred,nll_in,nll_pred`; missing values are empty fields.
    pub fn write_details_csv<W: Write>(&self, out: W) -> Result<()> {
        let io = |e: csv::Error| Error::Io {
            path: "<csv>".into(),
            source: e.into(),
        };
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["traj_id", "plan", "ade_in", "ade_pred", "nll_in", "nll_pred"])
            .map_err(io)?;
        let f = |v: Option<f64>| v.map_or(String::new(), |v| format!("{v}"));
        for r in &self.details {
            w.write_record([
                r.traj_id.clone(),
                r.plan.clone(),
                f(r.ade_in),
                f(r.ade_pred),
                f(r.nll_in),
                f(r.nll_pred),
            ])
            .map_err(io)?;
        }
        w.flush().map_err(|source| Error::Io {
            path: "<csv>".into(),
            source,
        })
    }
}

/// Seeded shuffle into `(train, test)` index lists with 80% for training.
pub fn split_indices(m: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..m).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = m * 4 / 5;
    let test = idx.split_off(n_train);
    (idx, test)
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

fn mean_of(vals: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let (sum, n) = vals.flatten().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Fits on a seeded 80% split, then scores every plan on each held-out trajectory.
/// Input-side metrics use the input steps not observed by the plan; prediction-side
/// metrics use the horizon steps not observed by the plan.
pub fn run_benchmark(
    data: &[Trajectory],
    cfg: &FitConfig,
    split: &SplitSpec,
    plans: &[NamedPlan],
    seed: u64,
) -> Result<BenchReport> {
    if data.len() < MIN_DATASET {
        return Err(Error::InvalidCount {
            count: data.len(),
            reason: "benchmark needs at least 10 trajectories",
        });
    }
    let (n, _) = dataset_shape(data)?;
    if n != split.n_steps() {
        return Err(Error::dim(split.n_steps(), n, "trajectory length vs split"));
    }
    for p in plans {
        if let Some(&s) = p.plan.steps().last() {
            if s >= n {
                return Err(Error::IndexOutOfRange { index: s, len: n });
            }
        }
    }

    let (train_idx, test_idx) = split_indices(data.len(), seed);
    let train: Vec<Trajectory> = train_idx.iter().map(|&i| data[i].clone()).collect();
    let test: Vec<&Trajectory> = test_idx.iter().map(|&i| &data[i]).collect();
    info!("benchmark: {} train / {} test", train.len(), test.len());

    let outcome = fit_mixture_traced(&train, cfg)?;
    let grid = TimeGrid::uniform(n)?;
    let prior = predict_prior(&outcome.mixture, &grid)?;

    let per_case: Vec<Vec<DetailRow>> = test
        .par_iter()
        .map(|traj| {
            plans
                .iter()
                .map(|np| {
                    let pred = refine(&prior, traj, &np.plan)?;
                    let keep = |r: std::ops::Range<usize>| -> Vec<usize> {
                        r.filter(|s| np.plan.steps().binary_search(s).is_err())
                            .collect()
                    };
                    let (ins, preds) = (keep(split.input_steps()), keep(split.prediction_steps()));
                    Ok(DetailRow {
                        traj_id: traj.id.clone(),
                        plan: np.name.clone(),
                        ade_in: finite(ade(&pred, traj, &ins)?),
                        ade_pred: finite(ade(&pred, traj, &preds)?),
                        nll_in: finite(nll_metric(&pred, traj, &ins)?),
                        nll_pred: finite(nll_metric(&pred, traj, &preds)?),
                    })
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;

    let summary = plans
        .iter()
        .enumerate()
        .map(|(p, np)| PlanSummary {
            plan: np.name.clone(),
            ade_in: mean_of(per_case.iter().map(|c| c[p].ade_in)),
            ade_pred: mean_of(per_case.iter().map(|c| c[p].ade_pred)),
            nll_in: mean_of(per_case.iter().map(|c| c[p].nll_in)),
            nll_pred: mean_of(per_case.iter().map(|c| c[p].nll_pred)),
        })
        .collect();

    let pos = |name: &str| plans.iter().position(|p| p.name == name);
    let flags = match (pos("posteriorA"), pos("posteriorB")) {
        (Some(a), Some(b)) => per_case
            .iter()
            .filter_map(|c| match (c[a].nll_pred, c[b].nll_pred) {
                (Some(na), Some(nb)) if nb > na => Some(NllFlag {
                    traj_id: c[a].traj_id.clone(),
                    nll_pred_a: na,
                    nll_pred_b: nb,
                }),
                _ => None,
            })
            .collect(),
        _ => Vec::new(),
    };

    Ok(BenchReport {
        seed,
        n_train: train.len(),
        n_test: test.len(),
        split: *split,
        fit: cfg.clone(),
        train_loss: outcome.loss,
        plans: plans.to_vec(),
        summary,
        flags,
        details: per_case.into_iter().flatten().collect(),
    })
}
