//! Euclidean projections onto the decision sets.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SetKind {
    Simplex,
    Box,
    CappedSimplex,
}

/// `Simplex = {x ≥ 0, Σx = 1}`, `Box = [0,1]^d`,
/// `CappedSimplex = {0 ≤ x ≤ 1, Σx = budget}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeasibleSet {
    pub kind: SetKind,
    pub d: usize,
    pub budget: f64,
}

impl FeasibleSet {
    pub fn simplex(d: usize) -> Self {
        FeasibleSet { kind: SetKind::Simplex, d, budget: 1.0 }
    }

    pub fn unit_box(d: usize) -> Self {
        FeasibleSet { kind: SetKind::Box, d, budget: 0.0 }
    }

    /// Capped simplex with the default budget `0.3·d`.
    pub fn capped_simplex(d: usize) -> Self {
        FeasibleSet { kind: SetKind::CappedSimplex, d, budget: 0.3 * d as f64 }
    }

    pub fn capped_simplex_with_budget(d: usize, budget: f64) -> Result<Self> {
        if !(budget > 0.0 && budget < d as f64) {
            return Err(Error::InvalidArgument(format!("budget {budget} outside (0, {d})")));
        }
        Ok(FeasibleSet { kind: SetKind::CappedSimplex, d, budget })
    }

    /// Membership up to `tol` in every constraint.
    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        if x.len() != self.d || x.iter().any(|v| !v.is_finite()) {
            return false;
        }
        let sum: f64 = x.iter().sum();
        match self.kind {
            SetKind::Simplex => x.iter().all(|&v| v >= -tol) && (sum - 1.0).abs() <= tol,
            SetKind::Box => x.iter().all(|&v| v >= -tol && v <= 1.0 + tol),
            SetKind::CappedSimplex => {
                x.iter().all(|&v| v >= -tol && v <= 1.0 + tol) && (sum - self.budget).abs() <= tol
            }
        }
    }
}

impl fmt::Display for FeasibleSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            SetKind::Simplex => write!(f, "simplex(d={})", self.d),
            SetKind::Box => write!(f, "box(d={})", self.d),
            SetKind::CappedSimplex => write!(f, "capped_simplex(d={}, budget={})", self.d, self.budget),
        }
    }
}

/// `argmin_{x ∈ set} ‖x − y‖₂`.
pub fn project_onto(set: &FeasibleSet, y: &[f64]) -> Result<Vec<f64>> {
    if y.len() != set.d {
        return dim_err(format!("point has length {}, set has dimension {}", y.len(), set.d));
    }
    Ok(match set.kind {
        SetKind::Box => y.iter().map(|v| v.clamp(0.0, 1.0)).collect(),
        SetKind::Simplex => project_simplex(y),
        SetKind::CappedSimplex => project_capped(y, set.budget),
    })
}

fn project_simplex(y: &[f64]) -> Vec<f64> {
    let mut s = y.to_vec();
    s.sort_unstable_by(|a, b| b.total_cmp(a));
    let mut cum = 0.0;
    let mut tau = 0.0;
    for (k, &v) in s.iter().enumerate() {
        cum += v;
        let t = (cum - 1.0) / (k + 1) as f64;
        if v - t > 0.0 {
            tau = t;
        }
    }
    y.iter().map(|v| (v - tau).max(0.0)).collect()
}

fn capped_sum(y: &[f64], tau: f64) -> f64 {
    y.iter().map(|v| (v - tau).clamp(0.0, 1.0)).sum()
}

/// Bisection on the shift τ in `clamp(y − τ, 0, 1)`, followed by an exact
/// solve for τ on the resulting active set.
fn project_capped(y: &[f64], budget: f64) -> Vec<f64> {
    let mut lo = y.iter().copied().fold(f64::INFINITY, f64::min) - 1.0;
    let mut hi = y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if capped_sum(y, mid) > budget {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mut tau = 0.5 * (lo + hi);
    let (mut free_sum, mut free, mut ones) = (0.0, 0usize, 0usize);
    for &v in y {
        let t = v - tau;
        if t >= 1.0 {
            ones += 1;
        } else if t > 0.0 {
            free += 1;
            free_sum += v;
        }
    }
    if free > 0 {
        let exact = (free_sum + ones as f64 - budget) / free as f64;
        if (capped_sum(y, exact) - budget).abs() <= (capped_sum(y, tau) - budget).abs() {
            tau = exact;
        }
    }
    y.iter().map(|v| (v - tau).clamp(0.0, 1.0)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        let b = FeasibleSet::unit_box(3);
        assert_eq!(project_onto(&b, &[1.5, -0.2, 0.5]).unwrap(), vec![1.0, 0.0, 0.5]);
        let s = FeasibleSet::simplex(2);
        assert_eq!(project_onto(&s, &[2.0, 0.0]).unwrap(), vec![1.0, 0.0]);
        assert_eq!(project_onto(&FeasibleSet::simplex(3), &[0.2, 0.3, 0.5]).unwrap(), vec![0.2, 0.3, 0.5]);
        let c = FeasibleSet::capped_simplex(10);
        assert_eq!(c.budget, 3.0);
        let y = vec![0.3; 10];
        let p = project_onto(&c, &y).unwrap();
        for (a, b) in p.iter().zip(&y) {
            assert!((a - b).abs() <= 1e-15);
        }
    }

    #[test]
    fn simplex_matches_grid_search() {
        let y = [0.9, -0.4];
        let p = project_onto(&FeasibleSet::simplex(2), &y).unwrap();
        let best = (0..=10000)
            .map(|i| i as f64 / 10000.0)
            .min_by(|a, b| {
                let fa = (a - y[0]).powi(2) + (1.0 - a - y[1]).powi(2);
                let fb = (b - y[0]).powi(2) + (1.0 - b - y[1]).powi(2);
                fa.total_cmp(&fb)
            })
            .unwrap();
        assert!((p[0] - best).abs() <= 1e-4);
        assert!((p[0] + p[1] - 1.0).abs() <= 1e-15);
    }

    #[test]
    fn capped_sum_is_exact() {
        let c = FeasibleSet::capped_simplex(7);
        let y = [3.0, -1.0, 0.4, 0.41, 2.0, -0.3, 0.9];
        let p = project_onto(&c, &y).unwrap();
        assert!(c.contains(&p, 1e-12), "{p:?}");
    }

    #[test]
    fn rejects_bad_input() {
        assert!(project_onto(&FeasibleSet::simplex(3), &[1.0]).is_err());
        assert!(FeasibleSet::capped_simplex_with_budget(4, 4.0).is_err());
        assert!(FeasibleSet::capped_simplex_with_budget(4, 0.0).is_err());
    }
}
