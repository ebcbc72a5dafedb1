//! Exact optimality certificates for the cone-program value of a model.
//!
//! Given the forward trace at `x`, the backbone multipliers `ν_ℓ` and the
//! norm-branch duals `μ_g = λ_g u_g/‖u_g‖` form a dual-feasible point whose
//! objective equals the forward value. [`diagnostics_report`] measures every
//! feasibility, complementarity and tightness condition of that pair, and
//! compares the forward value with an independent simplex solve of the
//! lifted program.

mod lift;
pub mod simplex;

pub use lift::{build_lp_lift, simplex_lp_solve, LpLift, MAX_ORACLE_VARIABLES};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::linalg::{dot, norm2};
use crate::model::{ForwardTrace, SocIcnnParams};
use lift::require_relu;

#[derive(Debug, Clone, PartialEq)]
pub struct DualCertificate {
    /// Backbone chain multipliers, one vector per layer.
    pub nu: Vec<Vec<f64>>,
    /// Norm-branch duals, one vector per conic branch.
    pub mu_norm: Vec<Vec<f64>>,
    pub dual_value: f64,
}

impl DualCertificate {
    /// Affine piece `(slope, intercept)` of the backbone selected by this
    /// certificate: `v + Σ W_ℓᵀ ν_ℓ` and `b0 + Σ ν_ℓᵀ b_ℓ`.
    pub fn backbone_piece(&self, params: &SocIcnnParams) -> (Vec<f64>, f64) {
        let mut slope = params.v.clone();
        let mut intercept = params.b0;
        for (layer, nu) in params.layers.iter().zip(&self.nu) {
            if let Some(w) = &layer.w {
                w.add_matvec_t(nu, &mut slope);
            }
            intercept += dot(nu, &layer.b);
        }
        (slope, intercept)
    }
}

/// Value of the full cone program at `x`: the simplex optimum of the backbone
/// lift plus the closed-form optima of the quadratic and norm epigraphs.
pub fn socp_oracle_value(params: &SocIcnnParams, x: &[f64]) -> Result<f64> {
    let lift = build_lp_lift(params, x)?;
    let (lp_value, _) = simplex_lp_solve(&lift)?;
    let mut value = lp_value;
    for q in &params.quad {
        let r: Vec<f64> = (0..q.rank()).map(|i| dot(q.proj.row(i), x) + q.offset[i]).collect();
        value += q.alpha * 0.5 * dot(&r, &r);
    }
    for g in &params.conic {
        let r: Vec<f64> = (0..g.dim()).map(|i| dot(g.proj.row(i), x) + g.offset[i]).collect();
        value += g.lambda * norm2(&r);
    }
    Ok(value)
}

/// `W_ℓ x + U_ℓ z_{ℓ-1} + b_ℓ`, re-evaluated from the trace activations in the
/// same operation order as the forward pass.
fn recompute_preact(params: &SocIcnnParams, x: &[f64], trace: &ForwardTrace, l: usize) -> Vec<f64> {
    let layer = &params.layers[l];
    let mut pre = layer.b.clone();
    if let Some(w) = &layer.w {
        for (i, p) in pre.iter_mut().enumerate() {
            *p += dot(w.row(i), x);
        }
    }
    if let Some(u) = &layer.u {
        for (i, p) in pre.iter_mut().enumerate() {
            *p += dot(u.row(i), &trace.acts[l - 1]);
        }
    }
    pre
}

/// Top-down multiplier recursion `ν_L = c ⊙ 1[pre_L > 0]`,
/// `ν_ℓ = (U_{ℓ+1}ᵀ ν_{ℓ+1}) ⊙ 1[pre_ℓ > 0]`, plus `μ_g = λ_g u_g/‖u_g‖`
/// (zero when `u_g = 0`).
pub fn extract_dual_certificate(
    params: &SocIcnnParams,
    x: &[f64],
    trace: &ForwardTrace,
) -> Result<DualCertificate> {
    require_relu(params)?;
    params.check_input(x)?;
    let depth = params.depth();
    let mut nu: Vec<Vec<f64>> = vec![Vec::new(); depth];
    let mut bound = params.c.clone();
    for l in (0..depth).rev() {
        let cur: Vec<f64> = bound
            .iter()
            .zip(&trace.preacts[l])
            .map(|(&b, &t)| if t > 0.0 { b } else { 0.0 })
            .collect();
        if l > 0 {
            let u = params.layers[l].u.as_ref().expect("validated: hidden weight present");
            bound = vec![0.0; u.cols()];
            u.add_matvec_t(&cur, &mut bound);
        }
        nu[l] = cur;
    }
    let mu_norm: Vec<Vec<f64>> = params
        .conic
        .iter()
        .zip(&trace.conic_u)
        .zip(&trace.conic_t)
        .map(|((g, u), &t)| {
            if t > 0.0 {
                u.iter().map(|v| g.lambda * v / t).collect()
            } else {
                vec![0.0; u.len()]
            }
        })
        .collect();

    let mut dual_value = dot(&params.v, x) + params.b0;
    for (layer, n) in params.layers.iter().zip(&nu) {
        let mut affine = layer.b.clone();
        if let Some(w) = &layer.w {
            for (i, a) in affine.iter_mut().enumerate() {
                *a += dot(w.row(i), x);
            }
        }
        dual_value += dot(n, &affine);
    }
    for (q, &s) in params.quad.iter().zip(&trace.quad_s) {
        dual_value += q.alpha * s;
    }
    for (mu, u) in mu_norm.iter().zip(&trace.conic_u) {
        dual_value += dot(mu, u);
    }
    Ok(DualCertificate { nu, mu_norm, dual_value })
}

/// The optimality diagnostics of one (model, input) pair. Every field is a
/// non-negative maximum over components.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub primal_dual_gap: f64,
    pub forward_vs_oracle_abs_err: f64,
    pub relu_primal_violation: f64,
    pub relu_dual_box_violation: f64,
    pub relu_complementarity_slack: f64,
    pub quad_epigraph_violation: f64,
    pub quad_tightness_slack: f64,
    pub norm_epigraph_violation: f64,
    pub norm_tightness_slack: f64,
    pub norm_dual_ball_violation: f64,
    pub norm_dual_alignment_violation: f64,
}

impl DiagnosticsReport {
    pub const FIELD_NAMES: [&'static str; 11] = [
        "primal_dual_gap",
        "forward_vs_oracle_abs_err",
        "relu_primal_violation",
        "relu_dual_box_violation",
        "relu_complementarity_slack",
        "quad_epigraph_violation",
        "quad_tightness_slack",
        "norm_epigraph_violation",
        "norm_tightness_slack",
        "norm_dual_ball_violation",
        "norm_dual_alignment_violation",
    ];

    pub fn values(&self) -> [f64; 11] {
        [
            self.primal_dual_gap,
            self.forward_vs_oracle_abs_err,
            self.relu_primal_violation,
            self.relu_dual_box_violation,
            self.relu_complementarity_slack,
            self.quad_epigraph_violation,
            self.quad_tightness_slack,
            self.norm_epigraph_violation,
            self.norm_tightness_slack,
            self.norm_dual_ball_violation,
            self.norm_dual_alignment_violation,
        ]
    }

    pub fn fields(&self) -> impl Iterator<Item = (&'static str, f64)> {
        Self::FIELD_NAMES.into_iter().zip(self.values())
    }
}

fn max0(acc: &mut f64, v: f64) {
    *acc = acc.max(v.max(0.0));
}

/// Runs the forward pass, extracts the certificate and measures everything.
pub fn diagnostics_report(params: &SocIcnnParams, x: &[f64]) -> Result<DiagnosticsReport> {
    report_impl(params, x, true)
}

/// As [`diagnostics_report`] but without the simplex oracle, for models whose
/// lift is too large for it. `forward_vs_oracle_abs_err` is NaN.
pub fn diagnostics_report_without_oracle(params: &SocIcnnParams, x: &[f64]) -> Result<DiagnosticsReport> {
    report_impl(params, x, false)
}

fn report_impl(params: &SocIcnnParams, x: &[f64], with_oracle: bool) -> Result<DiagnosticsReport> {
    require_relu(params)?;
    let trace = params.forward(x)?;
    let cert = extract_dual_certificate(params, x, &trace)?;
    let oracle_err = if with_oracle { (trace.total - socp_oracle_value(params, x)?).abs() } else { f64::NAN };
    let mut r = DiagnosticsReport {
        primal_dual_gap: (trace.total - cert.dual_value).abs(),
        forward_vs_oracle_abs_err: oracle_err,
        ..Default::default()
    };

    let depth = params.depth();
    for l in 0..depth {
        let pre = recompute_preact(params, x, &trace, l);
        let z = &trace.acts[l];
        let mut comp = 0.0;
        for i in 0..z.len() {
            max0(&mut r.relu_primal_violation, pre[i] - z[i]);
            max0(&mut r.relu_primal_violation, -z[i]);
            comp += cert.nu[l][i] * (z[i] - pre[i]);
        }
        max0(&mut r.relu_complementarity_slack, comp.abs());

        let upper: Vec<f64> = if l + 1 == depth {
            params.c.clone()
        } else {
            let u = params.layers[l + 1].u.as_ref().expect("validated: hidden weight present");
            let mut b = vec![0.0; u.cols()];
            u.add_matvec_t(&cert.nu[l + 1], &mut b);
            b
        };
        for (n, b) in cert.nu[l].iter().zip(&upper) {
            max0(&mut r.relu_dual_box_violation, -n);
            max0(&mut r.relu_dual_box_violation, n - b);
        }
    }

    for (q, &s) in trace.quad_q.iter().zip(&trace.quad_s) {
        let half_sq = 0.5 * dot(q, q);
        max0(&mut r.quad_epigraph_violation, half_sq - s);
        max0(&mut r.quad_tightness_slack, (s - half_sq).abs());
    }
    for (g, ((u, &t), mu)) in params
        .conic
        .iter()
        .zip(trace.conic_u.iter().zip(&trace.conic_t).zip(&cert.mu_norm))
    {
        let n = dot(u, u).sqrt();
        max0(&mut r.norm_epigraph_violation, n - t);
        max0(&mut r.norm_tightness_slack, (t - n).abs());
        max0(&mut r.norm_dual_ball_violation, norm2(mu) - g.lambda);
        max0(&mut r.norm_dual_alignment_violation, (dot(mu, u) - g.lambda * t).abs());
    }
    Ok(r)
}
