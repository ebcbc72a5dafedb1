//! Feasible-set projections, projected gradient descent with restarts,
//! parametric decision tasks, and regret measurement.

mod sets;
mod tasks;

use std::io::Write;

use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use sets::{project_onto, FeasibleSet, SetKind};
pub use tasks::{
    make_task, sample_theta, structure_len, task_objective, BlockTerm, ConeTerm, ParametricTask, RidgeTerm,
    Structure, TaskFamily, TaskInstance, HUBER_TASK_DELTA, THETA_DIM,
};

use crate::error::{dim_err, Error, Result};
use crate::linalg::{norm2, sub, Matrix};
use crate::rng::{derive_seed, rng_from_seed};

pub const DEFAULT_STEP_SIZE: f64 = 0.05;
/// Per-step geometric decay of the PGD step size within a restart.
pub const STEP_DECAY: f64 = 0.999;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PgdConfig {
    pub restarts: usize,
    pub steps: usize,
    pub step_size: f64,
    pub seed: u64,
}

impl PgdConfig {
    /// 5 restarts × 200 steps, used to optimize surrogates.
    pub fn decision(seed: u64) -> Self {
        PgdConfig { restarts: 5, steps: 200, step_size: DEFAULT_STEP_SIZE, seed }
    }

    /// 20 restarts × 2000 steps, used for ground-truth minimizers.
    pub fn oracle(seed: u64) -> Self {
        PgdConfig { restarts: 20, steps: 2000, step_size: DEFAULT_STEP_SIZE, seed }
    }
}

/// Best point of one restart, or `None` if it hit a non-finite value.
fn run_restart<F>(f: &F, set: &FeasibleSet, steps: usize, step_size: f64, seed: u64) -> Result<Option<(Vec<f64>, f64)>>
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
{
    let mut rng = rng_from_seed(seed);
    let start: Vec<f64> = (0..set.d).map(|_| rng.random_range(0.0..1.0)).collect();
    let mut x = project_onto(set, &start)?;
    let mut eta = step_size;
    let mut best: Option<(Vec<f64>, f64)> = None;
    for k in 0..=steps {
        let (v, g) = f(&x);
        if !v.is_finite() || g.iter().any(|gi| !gi.is_finite()) {
            return Ok(None);
        }
        if best.as_ref().is_none_or(|b| v < b.1) {
            best = Some((x.clone(), v));
        }
        if k == steps {
            break;
        }
        let y: Vec<f64> = x.iter().zip(&g).map(|(xi, gi)| xi - eta * gi).collect();
        x = project_onto(set, &y)?;
        eta *= STEP_DECAY;
    }
    Ok(best)
}

/// Projected gradient descent from `restarts` random starts. Returns the
/// lowest-value iterate seen; ties go to the earliest restart.
pub fn pgd_minimize<F>(f: F, set: &FeasibleSet, config: &PgdConfig) -> Result<(Vec<f64>, f64)>
where
    F: Fn(&[f64]) -> (f64, Vec<f64>) + Sync,
{
    if config.restarts == 0 || config.steps == 0 {
        return Err(Error::InvalidArgument("PGD needs at least one restart and one step".into()));
    }
    if !(config.step_size > 0.0) {
        return Err(Error::InvalidArgument("PGD step size must be positive".into()));
    }
    let results = (0..config.restarts)
        .into_par_iter()
        .map(|r| run_restart(&f, set, config.steps, config.step_size, derive_seed(config.seed, r as u64)))
        .collect::<Result<Vec<_>>>()?;
    results
        .into_iter()
        .flatten()
        .reduce(|best, cur| if cur.1 < best.1 { cur } else { best })
        .ok_or_else(|| Error::NonFinite("every PGD restart produced a non-finite objective".into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecisionReport {
    pub regret: f64,
    pub decision_error: f64,
    pub surrogate_value_at_decision: f64,
    pub true_value_at_decision: f64,
}

/// Ground-truth minimizer of `f_θ` over the task's set.
pub fn oracle_minimize(task: &ParametricTask, theta: &[f64], oracle: &PgdConfig) -> Result<(Vec<f64>, f64)> {
    let inst = task.instantiate(theta)?;
    pgd_minimize(|x| inst.value_and_grad(x), &task.feasible_set, oracle)
}

/// Regret and decision error of `x_hat` against the oracle minimizer.
/// `surrogate_value` is the surrogate's own value at `x_hat`, passed through
/// to the report.
pub fn evaluate_decision_quality(
    task: &ParametricTask,
    theta: &[f64],
    x_hat: &[f64],
    surrogate_value: f64,
    oracle: &PgdConfig,
) -> Result<(DecisionReport, Vec<f64>)> {
    if x_hat.len() != task.d {
        return dim_err(format!("decision has length {}, task has dimension {}", x_hat.len(), task.d));
    }
    if !task.feasible_set.contains(x_hat, 1e-9) {
        return Err(Error::Constraint(format!("decision is not in {}", task.feasible_set)));
    }
    let inst = task.instantiate(theta)?;
    let (x_star, f_star) = pgd_minimize(|x| inst.value_and_grad(x), &task.feasible_set, oracle)?;
    let f_hat = inst.value_and_grad(x_hat).0;
    let report = DecisionReport {
        regret: f_hat - f_star,
        decision_error: norm2(&sub(x_hat, &x_star)),
        surrogate_value_at_decision: surrogate_value,
        true_value_at_decision: f_hat,
    };
    Ok((report, x_star))
}

/// `n` feasible points: projections of uniform `[0,1]^d` samples.
pub fn sample_candidates(set: &FeasibleSet, n: usize, seed: u64) -> Result<Matrix> {
    let mut rng = rng_from_seed(seed);
    let mut rows = Vec::with_capacity(n);
    for _ in 0..n {
        let y: Vec<f64> = (0..set.d).map(|_| rng.random_range(0.0..1.0)).collect();
        rows.push(project_onto(set, &y)?);
    }
    Matrix::from_rows(&rows, set.d)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionRow {
    pub task: String,
    pub family: String,
    pub d: usize,
    pub seed: u64,
    pub model: String,
    pub regret: f64,
    pub decision_error: f64,
    pub surrogate_value: f64,
    pub true_value: f64,
}

pub fn write_decision_csv<W: Write>(rows: &[DecisionRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    if rows.is_empty() {
        w.write_record([
            "task",
            "family",
            "d",
            "seed",
            "model",
            "regret",
            "decision_error",
            "surrogate_value",
            "true_value",
        ])?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
