//! Convex benchmark targets with exact value and subgradient oracles.

use std::fmt;
use std::str::FromStr;

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::linalg::{dot, Matrix};
use crate::model::{sigmoid, softplus};
use crate::rng::rng_from_seed;

/// Pieces in the max-affine part of [`TargetName::Mixed`].
pub const MIXED_PIECES: usize = 5;
pub const HUBER_DELTA: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TargetName {
    QuadraticIso,
    QuadraticAniso,
    NormEuclid,
    NormAniso,
    Mixed,
    SoftplusSum,
    LogSumExpQuad,
    Huber,
    L1Norm,
    ICKANPaperTarget,
}

impl TargetName {
    pub const ALL: [TargetName; 10] = [
        TargetName::QuadraticIso,
        TargetName::QuadraticAniso,
        TargetName::NormEuclid,
        TargetName::NormAniso,
        TargetName::Mixed,
        TargetName::SoftplusSum,
        TargetName::LogSumExpQuad,
        TargetName::Huber,
        TargetName::L1Norm,
        TargetName::ICKANPaperTarget,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TargetName::QuadraticIso => "QuadraticIso",
            TargetName::QuadraticAniso => "QuadraticAniso",
            TargetName::NormEuclid => "NormEuclid",
            TargetName::NormAniso => "NormAniso",
            TargetName::Mixed => "Mixed",
            TargetName::SoftplusSum => "SoftplusSum",
            TargetName::LogSumExpQuad => "LogSumExpQuad",
            TargetName::Huber => "Huber",
            TargetName::L1Norm => "L1Norm",
            TargetName::ICKANPaperTarget => "ICKANPaperTarget",
        }
    }
}

impl fmt::Display for TargetName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TargetName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TargetName::ALL.into_iter().find(|t| t.as_str() == s).ok_or_else(|| Error::UnknownName {
            name: s.to_string(),
            valid: TargetName::ALL.map(TargetName::as_str).join(", "),
        })
    }
}

/// Coefficients frozen at construction.
#[derive(Debug, Clone, PartialEq)]
pub enum TargetData {
    None,
    Weights(Vec<f64>),
    Mixed { w_quad: Vec<f64>, w_norm: Vec<f64>, slopes: Matrix, intercepts: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TargetFunction {
    pub name: TargetName,
    pub d: usize,
    pub seed: u64,
    pub data: TargetData,
}

/// `max(t, 0)`-style sign with `sign(0) = 0`.
fn sign0(t: f64) -> f64 {
    if t > 0.0 {
        1.0
    } else if t < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Huber-type penalty `t²` for `|t| ≤ δ`, `2δ|t| − δ²` otherwise, with its
/// derivative.
pub fn huber(t: f64, delta: f64) -> (f64, f64) {
    if t.abs() <= delta {
        (t * t, 2.0 * t)
    } else {
        (2.0 * delta * t.abs() - delta * delta, 2.0 * delta * sign0(t))
    }
}

/// `log Σ exp(z_i)` via the max shift, together with the softmax weights.
pub fn log_sum_exp(z: &[f64]) -> (f64, Vec<f64>) {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    (m + s.ln(), e.into_iter().map(|v| v / s).collect())
}

pub fn make_target(name: TargetName, d: usize, seed: u64) -> Result<TargetFunction> {
    if d < 2 {
        return dim_err(format!("targets need d ≥ 2, got {d}"));
    }
    let span = (d - 1) as f64;
    let mut rng = rng_from_seed(seed);
    let data = match name {
        TargetName::QuadraticAniso => {
            TargetData::Weights((0..d).map(|i| 0.5 + 2.0 * i as f64 / span).collect())
        }
        TargetName::NormAniso => TargetData::Weights((0..d).map(|i| 1.0 + 9.0 * i as f64 / span).collect()),
        TargetName::ICKANPaperTarget => TargetData::Weights((0..d).map(|_| rng.random_range(0.5..=2.0)).collect()),
        TargetName::Mixed => {
            let w_quad = (0..d).map(|_| rng.random_range(0.5..=2.0)).collect();
            let w_norm = (0..d).map(|_| rng.random_range(0.5..=2.0)).collect();
            let scale = 1.0 / (d as f64).sqrt();
            let slopes = Matrix::from_fn(MIXED_PIECES, d, |_, _| {
                let z: f64 = StandardNormal.sample(&mut rng);
                scale * z
            });
            let intercepts = (0..MIXED_PIECES).map(|_| StandardNormal.sample(&mut rng)).collect();
            TargetData::Mixed { w_quad, w_norm, slopes, intercepts }
        }
        _ => TargetData::None,
    };
    Ok(TargetFunction { name, d, seed, data })
}

impl TargetFunction {
    pub fn value(&self, x: &[f64]) -> f64 {
        self.value_and_subgradient(x).0
    }

    /// Exact value and a subgradient (`sign(0) = 0` at absolute-value kinks,
    /// zero at norm apexes).
    pub fn value_and_subgradient(&self, x: &[f64]) -> (f64, Vec<f64>) {
        assert_eq!(x.len(), self.d, "target expects dimension {}", self.d);
        match (self.name, &self.data) {
            (TargetName::QuadraticIso, _) => (0.5 * dot(x, x), x.to_vec()),
            (TargetName::QuadraticAniso, TargetData::Weights(w)) => {
                let v = 0.5 * x.iter().zip(w).map(|(xi, wi)| wi * xi * xi).sum::<f64>();
                (v, x.iter().zip(w).map(|(xi, wi)| wi * xi).collect())
            }
            (TargetName::NormEuclid, _) => weighted_norm(x, None),
            (TargetName::NormAniso, TargetData::Weights(w)) => weighted_norm(x, Some(w)),
            (TargetName::Mixed, TargetData::Mixed { w_quad, w_norm, slopes, intercepts }) => {
                let q = 0.25 * x.iter().zip(w_quad).map(|(xi, wi)| wi * xi * xi).sum::<f64>();
                let mut g: Vec<f64> = x.iter().zip(w_quad).map(|(xi, wi)| 0.5 * wi * xi).collect();
                let (n, gn) = weighted_norm(x, Some(w_norm));
                g.iter_mut().zip(&gn).for_each(|(a, b)| *a += 0.7 * b);
                let (k, m) = (0..slopes.rows())
                    .map(|k| (k, dot(slopes.row(k), x) + intercepts[k]))
                    .fold((0, f64::NEG_INFINITY), |best, cur| if cur.1 > best.1 { cur } else { best });
                g.iter_mut().zip(slopes.row(k)).for_each(|(a, b)| *a += b);
                (q + 0.7 * n + m, g)
            }
            (TargetName::SoftplusSum, _) => {
                (x.iter().map(|&t| softplus(t)).sum(), x.iter().map(|&t| sigmoid(t)).collect())
            }
            (TargetName::LogSumExpQuad, _) => {
                let (l, p) = log_sum_exp(x);
                let g = p.iter().zip(x).map(|(pi, xi)| pi + 0.2 * xi).collect();
                (l + 0.1 * dot(x, x), g)
            }
            (TargetName::Huber, _) => {
                let parts: Vec<(f64, f64)> = x.iter().map(|&t| huber(t, HUBER_DELTA)).collect();
                (parts.iter().map(|p| p.0).sum(), parts.iter().map(|p| p.1).collect())
            }
            (TargetName::L1Norm, _) => (x.iter().map(|t| t.abs()).sum(), x.iter().map(|&t| sign0(t)).collect()),
            (TargetName::ICKANPaperTarget, TargetData::Weights(w)) => {
                let v = x
                    .iter()
                    .zip(w)
                    .map(|(&t, wi)| t.abs() + (1.0 - t).abs() + 0.25 * wi * t * t)
                    .sum();
                let g = x
                    .iter()
                    .zip(w)
                    .map(|(&t, wi)| sign0(t) - sign0(1.0 - t) + 0.5 * wi * t)
                    .collect();
                (v, g)
            }
            (name, _) => unreachable!("target {name} constructed without its coefficients"),
        }
    }
}

fn weighted_norm(x: &[f64], w: Option<&Vec<f64>>) -> (f64, Vec<f64>) {
    let wi = |i: usize| w.map_or(1.0, |w| w[i]);
    let n = x.iter().enumerate().map(|(i, t)| wi(i) * t * t).sum::<f64>().sqrt();
    if n == 0.0 {
        return (0.0, vec![0.0; x.len()]);
    }
    (n, x.iter().enumerate().map(|(i, t)| wi(i) * t / n).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;

    #[test]
    fn anisotropic_weights() {
        let t = make_target(TargetName::QuadraticAniso, 5, 0).unwrap();
        assert_eq!(t.data, TargetData::Weights(vec![0.5, 1.0, 1.5, 2.0, 2.5]));
        let t = make_target(TargetName::NormAniso, 10, 0).unwrap();
        let TargetData::Weights(w) = t.data else { panic!() };
        assert_eq!(w[0], 1.0);
        assert_eq!(w[9], 10.0);
    }

    #[test]
    fn construction_is_deterministic() {
        for name in TargetName::ALL {
            assert_eq!(make_target(name, 6, 3).unwrap(), make_target(name, 6, 3).unwrap());
        }
        assert!(make_target(TargetName::L1Norm, 1, 0).is_err());
    }

    #[test]
    fn names_round_trip() {
        for name in TargetName::ALL {
            assert_eq!(name.as_str().parse::<TargetName>().unwrap(), name);
        }
        let err = "Quadratic".parse::<TargetName>().unwrap_err().to_string();
        assert!(err.contains("NormEuclid"));
    }

    #[test]
    fn closed_form_examples() {
        let t = make_target(TargetName::NormEuclid, 2, 0).unwrap();
        assert_eq!(t.value_and_subgradient(&[3.0, 4.0]), (5.0, vec![0.6, 0.8]));

        let t = make_target(TargetName::LogSumExpQuad, 2, 0).unwrap();
        let (v, g) = t.value_and_subgradient(&[0.0, 0.0]);
        assert!((v - 2f64.ln()).abs() < 1e-15);
        assert_eq!(g, vec![0.5, 0.5]);

        assert_eq!(huber(2.0, 1.0), (3.0, 2.0));
        let t = make_target(TargetName::Huber, 2, 0).unwrap();
        assert_eq!(t.value_and_subgradient(&[2.0, 0.0]), (3.0, vec![2.0, 0.0]));

        let t = make_target(TargetName::L1Norm, 2, 0).unwrap();
        assert_eq!(t.value_and_subgradient(&[-1.0, 2.0]), (3.0, vec![-1.0, 1.0]));

        let t = make_target(TargetName::ICKANPaperTarget, 4, 9).unwrap();
        let TargetData::Weights(w) = &t.data else { panic!() };
        assert!(w.iter().all(|&wi| (0.5..=2.0).contains(&wi)));
        let expected = 4.0 + 0.25 * w.iter().sum::<f64>();
        assert!((t.value(&[1.0; 4]) - expected).abs() < 1e-12);
    }

    #[test]
    fn log_sum_exp_is_stable() {
        let t = make_target(TargetName::LogSumExpQuad, 3, 0).unwrap();
        let (v, g) = t.value_and_subgradient(&[700.0, -700.0, 699.0]);
        assert!(v.is_finite() && g.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn every_target_is_convex_with_valid_subgradients() {
        let d = 5;
        for name in TargetName::ALL {
            let t = make_target(name, d, 17).unwrap();
            let mut rng = rng_from_seed(name as u64);
            for _ in 0..10_000 {
                let x: Vec<f64> = (0..d).map(|_| rng.random_range(-3.0..3.0)).collect();
                let y: Vec<f64> = (0..d).map(|_| rng.random_range(-3.0..3.0)).collect();
                let mid: Vec<f64> = x.iter().zip(&y).map(|(a, b)| 0.5 * (a + b)).collect();
                let (fx, gx) = t.value_and_subgradient(&x);
                let fy = t.value(&y);
                assert!(t.value(&mid) <= 0.5 * (fx + fy) + 1e-9, "{name} midpoint");
                let lin: f64 = gx.iter().zip(y.iter().zip(&x)).map(|(g, (a, b))| g * (a - b)).sum();
                assert!(fy >= fx + lin - 1e-9, "{name} subgradient");
            }
        }
    }
}
