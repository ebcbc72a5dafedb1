//! Max-affine approximation: the CPWL piece-count lower bound and tangent-net
//! under-approximations of convex functions.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::linalg::{dot, Matrix};

/// `x ↦ max_i (slopes_i·x + intercepts_i)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaxAffine {
    pub slopes: Matrix,
    pub intercepts: Vec<f64>,
}

impl MaxAffine {
    pub fn new(slopes: Matrix, intercepts: Vec<f64>) -> Result<Self> {
        if slopes.rows() == 0 || slopes.rows() != intercepts.len() {
            return dim_err(format!("{} slopes and {} intercepts", slopes.rows(), intercepts.len()));
        }
        Ok(MaxAffine { slopes, intercepts })
    }

    pub fn pieces(&self) -> usize {
        self.intercepts.len()
    }

    pub fn dim(&self) -> usize {
        self.slopes.cols()
    }
}

pub fn eval_max_affine(g: &MaxAffine, x: &[f64]) -> f64 {
    assert_eq!(x.len(), g.dim(), "point has the wrong dimension");
    (0..g.pieces()).map(|i| dot(g.slopes.row(i), x) + g.intercepts[i]).fold(f64::NEG_INFINITY, f64::max)
}

/// Volume of the Euclidean unit ball in `R^d`, `π^{d/2} / Γ(d/2 + 1)`.
pub fn unit_ball_volume(d: usize) -> f64 {
    let h = d as f64 / 2.0;
    (h * std::f64::consts::PI.ln() - libm::lgamma(h + 1.0)).exp()
}

/// Lower bound on the number of affine pieces any CPWL function needs to
/// approximate a `mu`-strongly convex function to sup-error `eps` on a
/// domain of the given volume: `volume / (ω_d 2^d) · (mu/eps)^{d/2}`.
pub fn cpwl_piece_lower_bound(volume: f64, d: usize, mu: f64, eps: f64) -> Result<f64> {
    if !(volume > 0.0 && mu > 0.0 && eps > 0.0) || d == 0 {
        return Err(Error::InvalidArgument("volume, mu and eps must be positive and d ≥ 1".into()));
    }
    let log = volume.ln() - unit_ball_volume(d).ln() - d as f64 * std::f64::consts::LN_2
        + 0.5 * d as f64 * (mu / eps).ln();
    Ok(log.exp())
}

/// One tangent plane `h(p) + ∇h(p)·(x − p)` per net point.
pub fn build_tangent_max_affine<F>(h: F, net_points: &Matrix) -> Result<MaxAffine>
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
{
    if net_points.rows() == 0 {
        return Err(Error::InvalidArgument("tangent net needs at least one point".into()));
    }
    let d = net_points.cols();
    let mut slopes = Matrix::zeros(net_points.rows(), d);
    let mut intercepts = Vec::with_capacity(net_points.rows());
    for i in 0..net_points.rows() {
        let p = net_points.row(i);
        let (v, g) = h(p);
        if g.len() != d {
            return dim_err("gradient length differs from the net dimension");
        }
        intercepts.push(v - dot(&g, p));
        slopes.row_mut(i).copy_from_slice(&g);
    }
    MaxAffine::new(slopes, intercepts)
}

/// Regular grid of `points_per_axis^d` points covering `[lo, hi]^d`
/// (endpoints included; a single point sits at the centre).
pub fn lattice(d: usize, points_per_axis: usize, lo: f64, hi: f64) -> Matrix {
    let k = points_per_axis;
    let coord = |i: usize| if k == 1 { 0.5 * (lo + hi) } else { lo + (hi - lo) * i as f64 / (k - 1) as f64 };
    let n = k.pow(d as u32);
    Matrix::from_fn(n, d, |row, j| coord(row / k.pow(j as u32) % k))
}

/// Cell-centred grid of `k^d` points in `[−1, 1]^d`.
pub fn cell_centred_net(d: usize, k: usize) -> Matrix {
    let n = k.pow(d as u32);
    Matrix::from_fn(n, d, |row, j| {
        let i = row / k.pow(j as u32) % k;
        -1.0 + (2 * i + 1) as f64 / k as f64
    })
}

/// `½‖x‖²` and its gradient.
pub fn half_squared_norm(x: &[f64]) -> (f64, Vec<f64>) {
    (0.5 * dot(x, x), x.to_vec())
}

/// Lattice points per axis for the dense sup-error estimate (about 10⁵ points).
pub fn dense_points_per_axis(d: usize) -> usize {
    match d {
        1 => 100_001,
        2 => 317,
        _ => (1e5f64.powf(1.0 / d as f64)).ceil() as usize,
    }
}

/// `max |h − g|` over the dense lattice on `[−1, 1]^d`.
pub fn sup_error<F>(h: F, g: &MaxAffine) -> f64
where
    F: Fn(&[f64]) -> (f64, Vec<f64>),
{
    let d = g.dim();
    let pts = lattice(d, dense_points_per_axis(d), -1.0, 1.0);
    (0..pts.rows()).map(|i| (h(pts.row(i)).0 - eval_max_affine(g, pts.row(i))).abs()).fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    pub d: usize,
    #[serde(rename = "N")]
    pub n: usize,
    pub sup_error: f64,
    /// Piece-count lower bound at `eps = sup_error` for `½‖x‖²` on `[−1,1]^d`.
    pub bound: f64,
}

/// Tangent nets of `k^d` points for each `k`, measured against `½‖x‖²`.
pub fn absorption_rate_table(d: usize, ks: &[usize]) -> Result<Vec<RateRow>> {
    ks.iter()
        .map(|&k| {
            let g = build_tangent_max_affine(half_squared_norm, &cell_centred_net(d, k))?;
            let e = sup_error(half_squared_norm, &g);
            Ok(RateRow { d, n: g.pieces(), sup_error: e, bound: cpwl_piece_lower_bound(2f64.powi(d as i32), d, 1.0, e)? })
        })
        .collect()
}

/// Least-squares slope of `log sup_error` against `log N`.
pub fn log_log_slope(rows: &[RateRow]) -> f64 {
    let pts: Vec<(f64, f64)> = rows.iter().map(|r| ((r.n as f64).ln(), r.sup_error.ln())).collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

/// Smallest cell-centred tangent net on `[−1, 1]` whose sup-error for `½x²`
/// is at most `eps`.
pub fn smallest_net_1d(eps: f64, max_k: usize) -> Result<(usize, f64)> {
    for k in 1..=max_k {
        let g = build_tangent_max_affine(half_squared_norm, &cell_centred_net(1, k))?;
        let e = sup_error(half_squared_norm, &g);
        if e <= eps {
            return Ok((k, e));
        }
    }
    Err(Error::InvalidArgument(format!("no net with at most {max_k} points reaches {eps}")))
}

pub fn write_rate_csv<W: Write>(rows: &[RateRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["d", "N", "sup_error", "bound"])?;
    for r in rows {
        w.write_record([r.d.to_string(), r.n.to_string(), r.sup_error.to_string(), r.bound.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
