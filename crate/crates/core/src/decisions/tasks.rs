//! Parametric convex decision tasks: a weighted quadratic-linear backbone in
//! `x` with `θ`-dependent centre and cost, plus one structured convex term.

use std::fmt;
use std::str::FromStr;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::sets::FeasibleSet;
use crate::error::{dim_err, Error, Result};
use crate::linalg::{dot, norm2, Matrix};
use crate::model::{sigmoid, softplus};
use crate::rng::{rng_from_seed, Rng};
use crate::targets::log_sum_exp;

pub const THETA_DIM: usize = 8;
pub const HUBER_TASK_DELTA: f64 = 0.35;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TaskFamily {
    SimplexSocp,
    BoxSocp,
    BudgetTwoConeSocp,
    SimplexLogistic,
    BoxLogsumexp,
    BudgetHuber,
}

impl TaskFamily {
    pub const ALL: [TaskFamily; 6] = [
        TaskFamily::SimplexSocp,
        TaskFamily::BoxSocp,
        TaskFamily::BudgetTwoConeSocp,
        TaskFamily::SimplexLogistic,
        TaskFamily::BoxLogsumexp,
        TaskFamily::BudgetHuber,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskFamily::SimplexSocp => "SimplexSocp",
            TaskFamily::BoxSocp => "BoxSocp",
            TaskFamily::BudgetTwoConeSocp => "BudgetTwoConeSocp",
            TaskFamily::SimplexLogistic => "SimplexLogistic",
            TaskFamily::BoxLogsumexp => "BoxLogsumexp",
            TaskFamily::BudgetHuber => "BudgetHuber",
        }
    }

    /// snake_case task identifier, e.g. `budget_twocone_socp`.
    pub fn task_id(self) -> &'static str {
        match self {
            TaskFamily::SimplexSocp => "simplex_socp",
            TaskFamily::BoxSocp => "box_socp",
            TaskFamily::BudgetTwoConeSocp => "budget_twocone_socp",
            TaskFamily::SimplexLogistic => "simplex_logistic",
            TaskFamily::BoxLogsumexp => "box_logsumexp",
            TaskFamily::BudgetHuber => "budget_huber",
        }
    }

    /// Structural family of the objective's extra term.
    pub fn structure_kind(self) -> &'static str {
        match self {
            TaskFamily::SimplexSocp | TaskFamily::BoxSocp | TaskFamily::BudgetTwoConeSocp => "socp",
            TaskFamily::SimplexLogistic => "logistic",
            TaskFamily::BoxLogsumexp => "logsumexp",
            TaskFamily::BudgetHuber => "huber",
        }
    }

    pub fn alpha(self) -> f64 {
        match self {
            TaskFamily::SimplexLogistic | TaskFamily::BoxLogsumexp => 0.35,
            _ => 1.0,
        }
    }

    pub fn feasible_set(self, d: usize) -> FeasibleSet {
        match self {
            TaskFamily::SimplexSocp | TaskFamily::SimplexLogistic => FeasibleSet::simplex(d),
            TaskFamily::BoxSocp | TaskFamily::BoxLogsumexp => FeasibleSet::unit_box(d),
            TaskFamily::BudgetTwoConeSocp | TaskFamily::BudgetHuber => FeasibleSet::capped_simplex(d),
        }
    }
}

impl fmt::Display for TaskFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TaskFamily::ALL.into_iter().find(|f| f.as_str() == s || f.task_id() == s).ok_or_else(|| {
            Error::UnknownName {
                name: s.into(),
                valid: TaskFamily::ALL.map(|f| f.as_str()).join(", "),
            }
        })
    }
}

/// `λ(θ)‖A x − (d0 + D θ)‖` with `λ(θ) = softplus(l0 + l·θ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConeTerm {
    pub a: Matrix,
    pub weight0: f64,
    pub weight_map: Vec<f64>,
    pub offset0: Vec<f64>,
    pub offset_map: Matrix,
}

/// `β(θ) φ(aᵀx − b(θ))` with `β(θ) = softplus(β0 + β·θ)`, `b(θ) = b0 + b·θ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RidgeTerm {
    pub a: Vec<f64>,
    pub weight0: f64,
    pub weight_map: Vec<f64>,
    pub shift0: f64,
    pub shift_map: Vec<f64>,
}

/// `β(θ) logsumexp(A x − b(θ))`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockTerm {
    pub a: Matrix,
    pub weight0: f64,
    pub weight_map: Vec<f64>,
    pub shift0: Vec<f64>,
    pub shift_map: Matrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Structure {
    Cones(Vec<ConeTerm>),
    Logistic(Vec<RidgeTerm>),
    LogSumExp(Vec<BlockTerm>),
    Huber { delta: f64, terms: Vec<RidgeTerm> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParametricTask {
    pub family: TaskFamily,
    pub d: usize,
    pub theta_dim: usize,
    pub seed: u64,
    pub alpha: f64,
    pub weights: Vec<f64>,
    pub m0: Vec<f64>,
    pub m_map: Matrix,
    pub c0: Vec<f64>,
    pub c_map: Matrix,
    pub structure: Structure,
    pub feasible_set: FeasibleSet,
}

fn normal(rng: &mut Rng, scale: f64) -> f64 {
    let z: f64 = StandardNormal.sample(rng);
    scale * z
}

fn normal_vec(rng: &mut Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| normal(rng, scale)).collect()
}

fn normal_matrix(rng: &mut Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| normal(rng, scale))
}

/// Frozen task data for `(family, d, seed)`. Matrices acting on `x` have
/// entries `N(0, 1/d)`, maps acting on `θ` have entries `N(0, 1/8)`, and
/// constant terms are standard normal.
pub fn make_task(family: TaskFamily, d: usize, seed: u64) -> Result<ParametricTask> {
    if d < 2 {
        return dim_err(format!("decision tasks need d ≥ 2, got {d}"));
    }
    let mut rng = rng_from_seed(seed);
    let sx = 1.0 / (d as f64).sqrt();
    let st = 1.0 / (THETA_DIM as f64).sqrt();
    let weights = (0..d).map(|_| rng.random_range(0.8..=1.6)).collect();
    let m0 = normal_vec(&mut rng, d, 1.0);
    let m_map = normal_matrix(&mut rng, d, THETA_DIM, st);
    let c0 = normal_vec(&mut rng, d, 1.0);
    let c_map = normal_matrix(&mut rng, d, THETA_DIM, st);

    let ridge = |rng: &mut Rng| RidgeTerm {
        a: normal_vec(rng, d, sx),
        weight0: normal(rng, 1.0),
        weight_map: normal_vec(rng, THETA_DIM, st),
        shift0: normal(rng, 1.0),
        shift_map: normal_vec(rng, THETA_DIM, st),
    };
    let structure = match family {
        TaskFamily::SimplexSocp | TaskFamily::BoxSocp | TaskFamily::BudgetTwoConeSocp => {
            let cones = if family == TaskFamily::BudgetTwoConeSocp { 2 } else { 1 };
            Structure::Cones(
                (0..cones)
                    .map(|_| ConeTerm {
                        a: normal_matrix(&mut rng, d, d, sx),
                        weight0: normal(&mut rng, 1.0),
                        weight_map: normal_vec(&mut rng, THETA_DIM, st),
                        offset0: normal_vec(&mut rng, d, 1.0),
                        offset_map: normal_matrix(&mut rng, d, THETA_DIM, st),
                    })
                    .collect(),
            )
        }
        TaskFamily::SimplexLogistic => Structure::Logistic((0..(d / 3).max(6)).map(|_| ridge(&mut rng)).collect()),
        TaskFamily::BudgetHuber => Structure::Huber {
            delta: HUBER_TASK_DELTA,
            terms: (0..(d / 2).max(8)).map(|_| ridge(&mut rng)).collect(),
        },
        TaskFamily::BoxLogsumexp => Structure::LogSumExp(
            (0..2)
                .map(|_| BlockTerm {
                    a: normal_matrix(&mut rng, d, d, sx),
                    weight0: normal(&mut rng, 1.0),
                    weight_map: normal_vec(&mut rng, THETA_DIM, st),
                    shift0: normal_vec(&mut rng, d, 1.0),
                    shift_map: normal_matrix(&mut rng, d, THETA_DIM, st),
                })
                .collect(),
        ),
    };
    Ok(ParametricTask {
        family,
        d,
        theta_dim: THETA_DIM,
        seed,
        alpha: family.alpha(),
        weights,
        m0,
        m_map,
        c0,
        c_map,
        structure,
        feasible_set: family.feasible_set(d),
    })
}

/// Number of cone, ridge or block terms in the structured part.
pub fn structure_len(task: &ParametricTask) -> usize {
    match &task.structure {
        Structure::Cones(t) => t.len(),
        Structure::Logistic(t) | Structure::Huber { terms: t, .. } => t.len(),
        Structure::LogSumExp(t) => t.len(),
    }
}

/// A task with `θ` substituted: every coefficient is now a constant.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskInstance {
    pub alpha: f64,
    pub weights: Vec<f64>,
    pub m: Vec<f64>,
    pub c: Vec<f64>,
    terms: InstanceTerms,
}

#[derive(Debug, Clone, PartialEq)]
enum InstanceTerms {
    Cones(Vec<(f64, Matrix, Vec<f64>)>),
    Logistic(Vec<(f64, Vec<f64>, f64)>),
    LogSumExp(Vec<(f64, Matrix, Vec<f64>)>),
    Huber(f64, Vec<(f64, Vec<f64>, f64)>),
}

fn affine(base: &[f64], map: &Matrix, theta: &[f64]) -> Vec<f64> {
    let mut out = map.matvec(theta);
    out.iter_mut().zip(base).for_each(|(o, b)| *o += b);
    out
}

impl ParametricTask {
    pub fn instantiate(&self, theta: &[f64]) -> Result<TaskInstance> {
        if theta.len() != self.theta_dim {
            return dim_err(format!("θ has length {}, task expects {}", theta.len(), self.theta_dim));
        }
        let ridge = |t: &RidgeTerm| {
            (softplus(t.weight0 + dot(&t.weight_map, theta)), t.a.clone(), t.shift0 + dot(&t.shift_map, theta))
        };
        let terms = match &self.structure {
            Structure::Cones(ts) => InstanceTerms::Cones(
                ts.iter()
                    .map(|t| {
                        (softplus(t.weight0 + dot(&t.weight_map, theta)), t.a.clone(), affine(&t.offset0, &t.offset_map, theta))
                    })
                    .collect(),
            ),
            Structure::Logistic(ts) => InstanceTerms::Logistic(ts.iter().map(ridge).collect()),
            Structure::Huber { delta, terms } => InstanceTerms::Huber(*delta, terms.iter().map(ridge).collect()),
            Structure::LogSumExp(ts) => InstanceTerms::LogSumExp(
                ts.iter()
                    .map(|t| {
                        (softplus(t.weight0 + dot(&t.weight_map, theta)), t.a.clone(), affine(&t.shift0, &t.shift_map, theta))
                    })
                    .collect(),
            ),
        };
        Ok(TaskInstance {
            alpha: self.alpha,
            weights: self.weights.clone(),
            m: affine(&self.m0, &self.m_map, theta),
            c: affine(&self.c0, &self.c_map, theta),
            terms,
        })
    }
}

impl TaskInstance {
    pub fn dim(&self) -> usize {
        self.m.len()
    }

    /// Objective value and gradient; norm terms contribute zero at their apex.
    pub fn value_and_grad(&self, x: &[f64]) -> (f64, Vec<f64>) {
        assert_eq!(x.len(), self.dim(), "decision has the wrong dimension");
        let mut value = 0.0;
        let mut grad = self.c.clone();
        for i in 0..x.len() {
            let r = x[i] - self.m[i];
            value += 0.5 * self.alpha * self.weights[i] * r * r + self.c[i] * x[i];
            grad[i] += self.alpha * self.weights[i] * r;
        }
        match &self.terms {
            InstanceTerms::Cones(ts) => {
                for (lambda, a, off) in ts {
                    let mut u = a.matvec(x);
                    u.iter_mut().zip(off).for_each(|(ui, oi)| *ui -= oi);
                    let n = norm2(&u);
                    value += lambda * n;
                    if n > 0.0 {
                        u.iter_mut().for_each(|ui| *ui *= lambda / n);
                        a.add_matvec_t(&u, &mut grad);
                    }
                }
            }
            InstanceTerms::Logistic(ts) => {
                for (beta, a, b) in ts {
                    let t = dot(a, x) - b;
                    value += beta * softplus(t);
                    let s = beta * sigmoid(t);
                    grad.iter_mut().zip(a).for_each(|(g, ai)| *g += s * ai);
                }
            }
            InstanceTerms::Huber(delta, ts) => {
                for (beta, a, b) in ts {
                    let t = dot(a, x) - b;
                    let (h, dh) = crate::targets::huber(t, *delta);
                    value += beta * h;
                    grad.iter_mut().zip(a).for_each(|(g, ai)| *g += beta * dh * ai);
                }
            }
            InstanceTerms::LogSumExp(ts) => {
                for (beta, a, b) in ts {
                    let mut z = a.matvec(x);
                    z.iter_mut().zip(b).for_each(|(zi, bi)| *zi -= bi);
                    let (l, mut p) = log_sum_exp(&z);
                    value += beta * l;
                    p.iter_mut().for_each(|pi| *pi *= beta);
                    a.add_matvec_t(&p, &mut grad);
                }
            }
        }
        (value, grad)
    }
}

/// Value and gradient of `f_θ(x)`.
pub fn task_objective(task: &ParametricTask, theta: &[f64], x: &[f64]) -> Result<(f64, Vec<f64>)> {
    if x.len() != task.d {
        return dim_err(format!("decision has length {}, task has dimension {}", x.len(), task.d));
    }
    Ok(task.instantiate(theta)?.value_and_grad(x))
}

/// `θ ~ N(0, I)` of the task's parameter dimension.
pub fn sample_theta(task: &ParametricTask, seed: u64) -> Vec<f64> {
    let mut rng = rng_from_seed(seed);
    normal_vec(&mut rng, task.theta_dim, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn determinism_and_sizes() {
        for f in TaskFamily::ALL {
            assert_eq!(make_task(f, 10, 3).unwrap(), make_task(f, 10, 3).unwrap());
            assert_ne!(make_task(f, 10, 3).unwrap(), make_task(f, 10, 4).unwrap());
        }
        assert_eq!(structure_len(&make_task(TaskFamily::SimplexLogistic, 10, 0).unwrap()), 6);
        assert_eq!(structure_len(&make_task(TaskFamily::SimplexLogistic, 30, 0).unwrap()), 10);
        assert_eq!(structure_len(&make_task(TaskFamily::BudgetHuber, 10, 0).unwrap()), 8);
        assert_eq!(structure_len(&make_task(TaskFamily::BudgetHuber, 50, 0).unwrap()), 25);
        let two = make_task(TaskFamily::BudgetTwoConeSocp, 10, 0).unwrap();
        assert_eq!(structure_len(&two), 2);
        assert_eq!(two.feasible_set, FeasibleSet::capped_simplex(10));
        assert_eq!(two.feasible_set.budget, 3.0);
        assert_eq!(make_task(TaskFamily::BoxLogsumexp, 10, 0).unwrap().alpha, 0.35);
        assert_eq!(make_task(TaskFamily::BudgetHuber, 10, 0).unwrap().alpha, 1.0);
        let t = make_task(TaskFamily::SimplexSocp, 10, 0).unwrap();
        assert!(t.weights.iter().all(|w| (0.8..=1.6).contains(w)));
        assert!(make_task(TaskFamily::BoxSocp, 1, 0).is_err());
    }

    #[test]
    fn zero_theta_gives_base_maps() {
        let t = make_task(TaskFamily::BoxSocp, 6, 1).unwrap();
        let inst = t.instantiate(&[0.0; THETA_DIM]).unwrap();
        assert_eq!(inst.m, t.m0);
        assert_eq!(inst.c, t.c0);
    }

    #[test]
    fn backbone_vanishes_at_centre() {
        let mut t = make_task(TaskFamily::SimplexLogistic, 5, 2).unwrap();
        if let Structure::Logistic(ts) = &mut t.structure {
            ts.clear();
        }
        let theta = sample_theta(&t, 9);
        let inst = t.instantiate(&theta).unwrap();
        let (v, _) = inst.value_and_grad(&inst.m);
        assert!((v - dot(&inst.c, &inst.m)).abs() <= 1e-12);
    }

    #[test]
    fn gradients_match_finite_differences() {
        for f in TaskFamily::ALL {
            let t = make_task(f, 6, 5).unwrap();
            let theta = sample_theta(&t, 1);
            let x: Vec<f64> = (0..6).map(|i| 0.1 + 0.13 * i as f64).collect();
            let (_, g) = task_objective(&t, &theta, &x).unwrap();
            for i in 0..6 {
                let h = 1e-6;
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[i] += h;
                xm[i] -= h;
                let fd = (task_objective(&t, &theta, &xp).unwrap().0 - task_objective(&t, &theta, &xm).unwrap().0)
                    / (2.0 * h);
                assert!((fd - g[i]).abs() <= 1e-6 * fd.abs().max(1.0), "{f} coord {i}: {fd} vs {}", g[i]);
            }
        }
    }

    #[test]
    fn family_names_parse() {
        for f in TaskFamily::ALL {
            assert_eq!(f.as_str().parse::<TaskFamily>().unwrap(), f);
            assert_eq!(f.task_id().parse::<TaskFamily>().unwrap(), f);
        }
        let err = "Knapsack".parse::<TaskFamily>().unwrap_err().to_string();
        assert!(err.contains("BudgetHuber"));
    }
}
