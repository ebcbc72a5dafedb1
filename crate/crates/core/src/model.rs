//! SOC-ICNN parameters and the exact forward pass.
//!
//! A model is a ReLU (or Softplus) input-convex backbone
//!
//! ```text
//! z_1 = σ(W_1 x + b_1)
//! z_ℓ = σ(W_ℓ x + U_ℓ z_{ℓ-1} + b_ℓ)        ℓ = 2..L
//! f_backbone(x) = cᵀ z_L + vᵀ x + b0
//! ```
//!
//! plus `H` quadratic branches `α_h/2 · ‖B_h x + e_h‖²` and `G` conic branches
//! `λ_g · ‖A_g x + d_g‖`. Convexity requires `U_ℓ ≥ 0`, `c ≥ 0`, `α ≥ 0` and
//! `λ ≥ 0`; these are enforced by clamping so the stored weights are literally
//! the data of the lifted cone program.

use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::linalg::{dot, Matrix};
use crate::rng::{rng_from_seed, Rng};

pub const MODEL_FORMAT_VERSION: u32 = 1;

const BRANCH_WEIGHT_INIT: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Activation {
    ReLU,
    Softplus,
}

impl Activation {
    #[inline]
    pub fn apply(self, t: f64) -> f64 {
        match self {
            Activation::ReLU => t.max(0.0),
            Activation::Softplus => softplus(t),
        }
    }

    /// Derivative used by the backward passes. For ReLU the value at exactly
    /// zero is 0.
    #[inline]
    pub fn derivative(self, t: f64) -> f64 {
        match self {
            Activation::ReLU => {
                if t > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Softplus => sigmoid(t),
        }
    }
}

/// `log(1 + eᵗ)` without overflow for large `|t|`.
#[inline]
pub fn softplus(t: f64) -> f64 {
    t.max(0.0) + (-t.abs()).exp().ln_1p()
}

#[inline]
pub fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// One backbone layer. `w` is `None` for layers `ℓ ≥ 2` when passthrough is
/// disabled; `u` is `None` for layer 1.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub w: Option<Matrix>,
    pub u: Option<Matrix>,
    pub b: Vec<f64>,
}

impl LayerParams {
    pub fn width(&self) -> usize {
        self.b.len()
    }
}

/// `α/2 · ‖B x + e‖²`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadBranchParams {
    pub alpha: f64,
    pub proj: Matrix,
    pub offset: Vec<f64>,
}

impl QuadBranchParams {
    pub fn rank(&self) -> usize {
        self.offset.len()
    }
}

/// `λ · ‖A x + d‖`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConicBranchParams {
    pub lambda: f64,
    pub proj: Matrix,
    pub offset: Vec<f64>,
}

impl ConicBranchParams {
    pub fn dim(&self) -> usize {
        self.offset.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SocIcnnParams {
    pub d0: usize,
    pub layers: Vec<LayerParams>,
    pub c: Vec<f64>,
    pub v: Vec<f64>,
    pub b0: f64,
    pub quad: Vec<QuadBranchParams>,
    pub conic: Vec<ConicBranchParams>,
    pub passthrough: bool,
    pub activation: Activation,
}

/// Structural hyperparameters of a model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub d0: usize,
    pub widths: Vec<usize>,
    pub quad_ranks: Vec<usize>,
    pub conic_dims: Vec<usize>,
    pub passthrough: bool,
    pub activation: Activation,
}

impl Architecture {
    /// Plain ICNN (no branches).
    pub fn backbone(d0: usize, widths: Vec<usize>, passthrough: bool, activation: Activation) -> Self {
        Architecture { d0, widths, quad_ranks: vec![], conic_dims: vec![], passthrough, activation }
    }

    pub fn with_branches(mut self, quad_ranks: Vec<usize>, conic_dims: Vec<usize>) -> Self {
        self.quad_ranks = quad_ranks;
        self.conic_dims = conic_dims;
        self
    }

    pub fn check(&self) -> Result<()> {
        if self.d0 == 0 {
            return dim_err("input dimension d0 must be positive");
        }
        if self.widths.is_empty() {
            return dim_err("at least one backbone layer is required");
        }
        if self.widths.contains(&0) {
            return dim_err("layer widths must be positive");
        }
        if self.quad_ranks.contains(&0) || self.conic_dims.contains(&0) {
            return dim_err("branch ranks and dimensions must be positive");
        }
        Ok(())
    }

    /// Exact trainable-parameter count of a model with this architecture.
    pub fn parameter_count(&self) -> usize {
        let (d0, w) = (self.d0, &self.widths);
        let mut n = w[0] * d0 + w[0];
        for l in 1..w.len() {
            n += w[l] * w[l - 1] + w[l];
            if self.passthrough {
                n += w[l] * d0;
            }
        }
        n += w[w.len() - 1] + d0 + 1;
        n += self.quad_ranks.iter().map(|r| r * d0 + r + 1).sum::<usize>();
        n += self.conic_dims.iter().map(|k| k * d0 + k + 1).sum::<usize>();
        n
    }
}

fn normal(rng: &mut Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn gaussian_matrix(rng: &mut Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| scale * normal(rng))
}

fn half_normal_matrix(rng: &mut Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| scale * normal(rng).abs())
}

/// Feasible initialization: `W, B, A ~ N(0, 1/fan_in)`, `U, c ~ |N|/fan_in`,
/// `α = λ = 0.1`, biases and offsets zero.
pub fn init_model(arch: &Architecture, seed: u64) -> Result<SocIcnnParams> {
    arch.check()?;
    let mut rng = rng_from_seed(seed);
    let d0 = arch.d0;
    let in_scale = 1.0 / (d0 as f64).sqrt();
    let mut layers = Vec::with_capacity(arch.widths.len());
    for (l, &width) in arch.widths.iter().enumerate() {
        let w = (l == 0 || arch.passthrough).then(|| gaussian_matrix(&mut rng, width, d0, in_scale));
        let u = (l > 0).then(|| {
            let prev = arch.widths[l - 1];
            half_normal_matrix(&mut rng, width, prev, 1.0 / prev as f64)
        });
        layers.push(LayerParams { w, u, b: vec![0.0; width] });
    }
    let last = *arch.widths.last().unwrap();
    let c = (0..last).map(|_| normal(&mut rng).abs() / last as f64).collect();
    let v = (0..d0).map(|_| in_scale * normal(&mut rng)).collect();
    let quad = arch
        .quad_ranks
        .iter()
        .map(|&r| QuadBranchParams {
            alpha: BRANCH_WEIGHT_INIT,
            proj: gaussian_matrix(&mut rng, r, d0, in_scale),
            offset: vec![0.0; r],
        })
        .collect();
    let conic = arch
        .conic_dims
        .iter()
        .map(|&k| ConicBranchParams {
            lambda: BRANCH_WEIGHT_INIT,
            proj: gaussian_matrix(&mut rng, k, d0, in_scale),
            offset: vec![0.0; k],
        })
        .collect();
    Ok(SocIcnnParams {
        d0,
        layers,
        c,
        v,
        b0: 0.0,
        quad,
        conic,
        passthrough: arch.passthrough,
        activation: arch.activation,
    })
}

/// A feasible model with every parameter randomized, including biases,
/// offsets and branch weights. Used for certificate sweeps where the
/// zero-bias initialization would be too benign.
pub fn random_model(arch: &Architecture, seed: u64) -> Result<SocIcnnParams> {
    let mut p = init_model(arch, seed)?;
    let mut rng = rng_from_seed(seed ^ 0x005E_ED0F_B1A5);
    for layer in &mut p.layers {
        layer.b.iter_mut().for_each(|b| *b = 0.5 * normal(&mut rng));
    }
    p.b0 = normal(&mut rng);
    for q in &mut p.quad {
        q.alpha = rng.random_range(0.05..1.0);
        q.offset.iter_mut().for_each(|e| *e = normal(&mut rng));
    }
    for g in &mut p.conic {
        g.lambda = rng.random_range(0.05..1.0);
        g.offset.iter_mut().for_each(|d| *d = normal(&mut rng));
    }
    Ok(p)
}

/// Exact representer of `aᵀx + b + ½‖Bx‖² + Σ_g λ_g ‖A_g x + d_g‖`.
///
/// The backbone collapses to its affine readout: one width-1 layer whose
/// output weight `c` is zero, `v = a`, `b0 = b`. A `B` with zero rows adds
/// no quadratic branch.
pub fn from_structured_class(
    a: &[f64],
    b: f64,
    quad: &Matrix,
    norm_terms: &[(f64, Matrix, Vec<f64>)],
) -> Result<SocIcnnParams> {
    let d0 = a.len();
    if d0 == 0 {
        return dim_err("linear term must have positive length");
    }
    if quad.rows() > 0 && quad.cols() != d0 {
        return dim_err(format!("B has {} columns, expected {d0}", quad.cols()));
    }
    let mut conic = Vec::with_capacity(norm_terms.len());
    for (g, (lambda, map, offset)) in norm_terms.iter().enumerate() {
        if !(*lambda >= 0.0) {
            return Err(Error::Constraint(format!("norm term {g} has negative weight {lambda}")));
        }
        if map.cols() != d0 || map.rows() != offset.len() {
            return dim_err(format!("norm term {g} has inconsistent shape"));
        }
        conic.push(ConicBranchParams { lambda: *lambda, proj: map.clone(), offset: offset.clone() });
    }
    let quad = if quad.rows() > 0 {
        vec![QuadBranchParams { alpha: 1.0, proj: quad.clone(), offset: vec![0.0; quad.rows()] }]
    } else {
        vec![]
    };
    Ok(SocIcnnParams {
        d0,
        layers: vec![LayerParams { w: Some(Matrix::zeros(1, d0)), u: None, b: vec![0.0] }],
        c: vec![0.0],
        v: a.to_vec(),
        b0: b,
        quad,
        conic,
        passthrough: true,
        activation: Activation::ReLU,
    })
}

/// Per-input record of every intermediate of the forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub preacts: Vec<Vec<f64>>,
    pub acts: Vec<Vec<f64>>,
    pub backbone_value: f64,
    pub quad_q: Vec<Vec<f64>>,
    pub quad_s: Vec<f64>,
    pub conic_u: Vec<Vec<f64>>,
    pub conic_t: Vec<f64>,
    pub total: f64,
}

/// Receives floating-operation counts from the forward kernels.
pub trait OpTally {
    fn add(&mut self, n: u64);
}

struct NoTally;

impl OpTally for NoTally {
    #[inline(always)]
    fn add(&mut self, _: u64) {}
}

/// Counts multiplies, adds, comparisons and square roots as one op each.
#[derive(Debug, Default, Clone, Copy)]
pub struct FlopCounter(pub u64);

impl OpTally for FlopCounter {
    fn add(&mut self, n: u64) {
        self.0 += n;
    }
}

#[inline]
fn affine_into<T: OpTally>(m: &Matrix, x: &[f64], bias: &[f64], out: &mut [f64], tally: &mut T) {
    m.matvec_into(x, out);
    for (o, b) in out.iter_mut().zip(bias) {
        *o += b;
    }
    tally.add((2 * m.rows() * m.cols() + m.rows()) as u64);
}

impl SocIcnnParams {
    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn widths(&self) -> Vec<usize> {
        self.layers.iter().map(LayerParams::width).collect()
    }

    pub fn architecture(&self) -> Architecture {
        Architecture {
            d0: self.d0,
            widths: self.widths(),
            quad_ranks: self.quad.iter().map(QuadBranchParams::rank).collect(),
            conic_dims: self.conic.iter().map(ConicBranchParams::dim).collect(),
            passthrough: self.passthrough,
            activation: self.activation,
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.architecture().parameter_count()
    }

    /// Checks every shape relation between the parameter blocks.
    pub fn validate(&self) -> Result<()> {
        let d0 = self.d0;
        if d0 == 0 {
            return dim_err("d0 must be positive");
        }
        if self.layers.is_empty() {
            return dim_err("model has no layers");
        }
        let mut prev = 0;
        for (l, layer) in self.layers.iter().enumerate() {
            let width = layer.width();
            if width == 0 {
                return dim_err(format!("layer {} has zero width", l + 1));
            }
            match (&layer.w, l == 0 || self.passthrough) {
                (Some(w), true) if w.rows() == width && w.cols() == d0 => {}
                (None, false) => {}
                _ => return dim_err(format!("layer {} input weight has wrong shape or presence", l + 1)),
            }
            match (&layer.u, l) {
                (None, 0) => {}
                (Some(u), l) if l > 0 && u.rows() == width && u.cols() == prev => {}
                _ => return dim_err(format!("layer {} hidden weight has wrong shape or presence", l + 1)),
            }
            prev = width;
        }
        if self.c.len() != prev {
            return dim_err(format!("c has length {}, last width is {prev}", self.c.len()));
        }
        if self.v.len() != d0 {
            return dim_err(format!("v has length {}, expected {d0}", self.v.len()));
        }
        for (h, q) in self.quad.iter().enumerate() {
            if q.proj.cols() != d0 || q.proj.rows() != q.offset.len() {
                return dim_err(format!("quadratic branch {h} has inconsistent shape"));
            }
        }
        for (g, k) in self.conic.iter().enumerate() {
            if k.proj.cols() != d0 || k.proj.rows() != k.offset.len() {
                return dim_err(format!("conic branch {g} has inconsistent shape"));
            }
        }
        Ok(())
    }

    /// Whether every sign constraint holds.
    pub fn is_feasible(&self) -> bool {
        let nonneg = |s: &[f64]| s.iter().all(|&v| v >= 0.0);
        self.layers.iter().all(|l| l.u.as_ref().is_none_or(|u| nonneg(u.as_slice())))
            && nonneg(&self.c)
            && self.quad.iter().all(|q| q.alpha >= 0.0)
            && self.conic.iter().all(|g| g.lambda >= 0.0)
    }

    /// Clamps `U`, `c`, `α` and `λ` to be non-negative.
    pub fn project_feasible(&self) -> SocIcnnParams {
        let mut p = self.clone();
        p.project_feasible_in_place();
        p
    }

    pub fn project_feasible_in_place(&mut self) {
        for (slice, nonneg) in self.tensors_mut() {
            if nonneg {
                slice.iter_mut().for_each(|v| *v = v.max(0.0));
            }
        }
    }

    /// Every learnable tensor, in a fixed order, flagged with whether it is
    /// sign-constrained.
    pub fn tensors_mut(&mut self) -> Vec<(&mut [f64], bool)> {
        let mut out: Vec<(&mut [f64], bool)> = Vec::new();
        for layer in &mut self.layers {
            if let Some(w) = layer.w.as_mut() {
                out.push((w.as_mut_slice(), false));
            }
            if let Some(u) = layer.u.as_mut() {
                out.push((u.as_mut_slice(), true));
            }
            out.push((&mut layer.b, false));
        }
        out.push((&mut self.c, true));
        out.push((&mut self.v, false));
        out.push((std::slice::from_mut(&mut self.b0), false));
        for q in &mut self.quad {
            out.push((std::slice::from_mut(&mut q.alpha), true));
            out.push((q.proj.as_mut_slice(), false));
            out.push((&mut q.offset, false));
        }
        for g in &mut self.conic {
            out.push((std::slice::from_mut(&mut g.lambda), true));
            out.push((g.proj.as_mut_slice(), false));
            out.push((&mut g.offset, false));
        }
        out
    }

    /// Read-only counterpart of [`tensors_mut`](Self::tensors_mut).
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::new();
        for layer in &self.layers {
            if let Some(w) = layer.w.as_ref() {
                out.push(w.as_slice());
            }
            if let Some(u) = layer.u.as_ref() {
                out.push(u.as_slice());
            }
            out.push(&layer.b);
        }
        out.push(&self.c);
        out.push(&self.v);
        out.push(std::slice::from_ref(&self.b0));
        for q in &self.quad {
            out.push(std::slice::from_ref(&q.alpha));
            out.push(q.proj.as_slice());
            out.push(&q.offset);
        }
        for g in &self.conic {
            out.push(std::slice::from_ref(&g.lambda));
            out.push(g.proj.as_slice());
            out.push(&g.offset);
        }
        out
    }

    /// A model of identical shape with every parameter set to zero.
    pub fn zeros_like(&self) -> SocIcnnParams {
        let mut p = self.clone();
        for (s, _) in p.tensors_mut() {
            s.iter_mut().for_each(|v| *v = 0.0);
        }
        p
    }

    pub fn forward(&self, x: &[f64]) -> Result<ForwardTrace> {
        self.check_input(x)?;
        Ok(self.forward_impl(x, &mut NoTally))
    }

    /// Forward pass that also reports the number of floating operations.
    pub fn forward_counted(&self, x: &[f64]) -> Result<(ForwardTrace, u64)> {
        self.check_input(x)?;
        let mut counter = FlopCounter::default();
        let trace = self.forward_impl(x, &mut counter);
        Ok((trace, counter.0))
    }

    pub(crate) fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.d0 {
            return dim_err(format!("input has length {}, model expects {}", x.len(), self.d0));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("input contains a non-finite entry".into()));
        }
        Ok(())
    }

    fn forward_impl<T: OpTally>(&self, x: &[f64], tally: &mut T) -> ForwardTrace {
        let act = self.activation;
        let mut preacts: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        let mut acts: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        for (l, layer) in self.layers.iter().enumerate() {
            let width = layer.width();
            let mut pre = layer.b.clone();
            if let Some(w) = &layer.w {
                for (i, p) in pre.iter_mut().enumerate() {
                    *p += dot(w.row(i), x);
                }
                tally.add((2 * width * self.d0) as u64);
            }
            if let Some(u) = &layer.u {
                let z_prev = &acts[l - 1];
                for (i, p) in pre.iter_mut().enumerate() {
                    *p += dot(u.row(i), z_prev);
                }
                tally.add((2 * width * u.cols()) as u64);
            }
            let z: Vec<f64> = pre.iter().map(|&t| act.apply(t)).collect();
            tally.add(width as u64);
            preacts.push(pre);
            acts.push(z);
        }
        let z_last = acts.last().expect("validated: at least one layer");
        let backbone_value = dot(&self.c, z_last) + dot(&self.v, x) + self.b0;
        tally.add((2 * self.c.len() + 2 * self.d0 + 1) as u64);

        let mut total = backbone_value;
        let mut quad_q = Vec::with_capacity(self.quad.len());
        let mut quad_s = Vec::with_capacity(self.quad.len());
        for q in &self.quad {
            let mut qv = vec![0.0; q.rank()];
            affine_into(&q.proj, x, &q.offset, &mut qv, tally);
            let s = 0.5 * dot(&qv, &qv);
            total += q.alpha * s;
            tally.add((2 * q.rank() + 3) as u64);
            quad_q.push(qv);
            quad_s.push(s);
        }
        let mut conic_u = Vec::with_capacity(self.conic.len());
        let mut conic_t = Vec::with_capacity(self.conic.len());
        for g in &self.conic {
            let mut uv = vec![0.0; g.dim()];
            affine_into(&g.proj, x, &g.offset, &mut uv, tally);
            let t = dot(&uv, &uv).sqrt();
            total += g.lambda * t;
            tally.add((2 * g.dim() + 3) as u64);
            conic_u.push(uv);
            conic_t.push(t);
        }
        ForwardTrace { preacts, acts, backbone_value, quad_q, quad_s, conic_u, conic_t, total }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&ModelDoc::from(self))?)
    }

    pub fn from_json(text: &str) -> Result<SocIcnnParams> {
        let doc: ModelDoc = serde_json::from_str(text)?;
        doc.into_params()
    }
}

#[derive(Serialize, Deserialize)]
struct LayerDoc {
    #[serde(rename = "W", default, skip_serializing_if = "Option::is_none")]
    w: Option<Matrix>,
    #[serde(rename = "U", default, skip_serializing_if = "Option::is_none")]
    u: Option<Matrix>,
    b: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct QuadDoc {
    alpha: f64,
    #[serde(rename = "B")]
    proj: Matrix,
    e: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ConicDoc {
    lambda: f64,
    #[serde(rename = "A")]
    proj: Matrix,
    d: Vec<f64>,
}

/// On-disk model document, format version 1.
#[derive(Serialize, Deserialize)]
struct ModelDoc {
    version: u32,
    d0: usize,
    passthrough: bool,
    activation: Activation,
    layers: Vec<LayerDoc>,
    c: Vec<f64>,
    v: Vec<f64>,
    b0: f64,
    quad: Vec<QuadDoc>,
    conic: Vec<ConicDoc>,
}

impl From<&SocIcnnParams> for ModelDoc {
    fn from(p: &SocIcnnParams) -> Self {
        ModelDoc {
            version: MODEL_FORMAT_VERSION,
            d0: p.d0,
            passthrough: p.passthrough,
            activation: p.activation,
            layers: p
                .layers
                .iter()
                .map(|l| LayerDoc { w: l.w.clone(), u: l.u.clone(), b: l.b.clone() })
                .collect(),
            c: p.c.clone(),
            v: p.v.clone(),
            b0: p.b0,
            quad: p
                .quad
                .iter()
                .map(|q| QuadDoc { alpha: q.alpha, proj: q.proj.clone(), e: q.offset.clone() })
                .collect(),
            conic: p
                .conic
                .iter()
                .map(|g| ConicDoc { lambda: g.lambda, proj: g.proj.clone(), d: g.offset.clone() })
                .collect(),
        }
    }
}

impl ModelDoc {
    fn into_params(self) -> Result<SocIcnnParams> {
        if self.version != MODEL_FORMAT_VERSION {
            return Err(Error::InvalidArgument(format!("unsupported model format version {}", self.version)));
        }
        let d0 = self.d0;
        let p = SocIcnnParams {
            d0,
            layers: self
                .layers
                .into_iter()
                .map(|l| LayerParams { w: l.w.map(|w| w.with_empty_cols(d0)), u: l.u, b: l.b })
                .collect(),
            c: self.c,
            v: self.v,
            b0: self.b0,
            quad: self
                .quad
                .into_iter()
                .map(|q| QuadBranchParams { alpha: q.alpha, proj: q.proj.with_empty_cols(d0), offset: q.e })
                .collect(),
            conic: self
                .conic
                .into_iter()
                .map(|g| ConicBranchParams { lambda: g.lambda, proj: g.proj.with_empty_cols(d0), offset: g.d })
                .collect(),
            passthrough: self.passthrough,
            activation: self.activation,
        };
        p.validate()?;
        Ok(p)
    }
}


#[cfg(test)]
mod tests {
    use super::test_models::*;
    use super::*;

    fn arch(h: usize, g: usize) -> Architecture {
        Architecture::backbone(2, vec![4], true, Activation::ReLU).with_branches(vec![2; h], vec![2; g])
    }

    #[test]
    fn init_is_deterministic() {
        let a = init_model(&arch(0, 0), 7).unwrap();
        let b = init_model(&arch(0, 0), 7).unwrap();
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn init_is_feasible() {
        let a = Architecture::backbone(2, vec![4, 3], true, Activation::ReLU).with_branches(vec![2], vec![2]);
        let p = init_model(&a, 7).unwrap();
        assert!(p.is_feasible());
        assert!(p.quad[0].alpha >= 0.0 && p.conic[0].lambda >= 0.0);
    }

    #[test]
    fn seeds_change_parameters() {
        let a = init_model(&arch(1, 1), 7).unwrap();
        let b = init_model(&arch(1, 1), 8).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn init_rejects_zero_dimensions() {
        assert!(matches!(
            init_model(&Architecture::backbone(0, vec![4], true, Activation::ReLU), 0),
            Err(Error::Dimension(_))
        ));
        assert!(matches!(
            init_model(&Architecture::backbone(2, vec![4, 0], true, Activation::ReLU), 0),
            Err(Error::Dimension(_))
        ));
        assert!(init_model(&Architecture::backbone(2, vec![], true, Activation::ReLU), 0).is_err());
    }

    #[test]
    fn no_passthrough_drops_deep_input_weights() {
        let a = Architecture::backbone(3, vec![4, 4, 2], false, Activation::ReLU);
        let p = init_model(&a, 1).unwrap();
        assert!(p.layers[0].w.is_some());
        assert!(p.layers[1].w.is_none() && p.layers[2].w.is_none());
        assert!(p.layers[0].u.is_none());
        p.validate().unwrap();
    }

    #[test]
    fn projection_clamps_only_constrained_entries() {
        let a = Architecture::backbone(2, vec![1, 2], true, Activation::ReLU).with_branches(vec![1], vec![1]);
        let mut p = init_model(&a, 3).unwrap();
        p.layers[1].u = Some(Matrix::from_rows(&[vec![-1.0], vec![2.0]], 0).unwrap());
        p.c = vec![-0.5, 0.25];
        p.quad[0].alpha = -1.0;
        p.conic[0].lambda = -2.0;
        p.layers[0].b = vec![-3.0];
        let q = p.project_feasible();
        assert_eq!(q.layers[1].u.as_ref().unwrap().to_rows(), vec![vec![0.0], vec![2.0]]);
        assert_eq!(q.c, vec![0.0, 0.25]);
        assert_eq!(q.quad[0].alpha, 0.0);
        assert_eq!(q.conic[0].lambda, 0.0);
        assert_eq!(q.layers[0].b, vec![-3.0]);
        assert_eq!(q.project_feasible(), q);
        let feasible = init_model(&a, 3).unwrap();
        assert_eq!(feasible.project_feasible(), feasible);
    }

    #[test]
    fn relu_scalar_forward() {
        let p = relu_1d();
        assert_eq!(p.forward(&[2.0]).unwrap().total, 2.0);
        assert_eq!(p.forward(&[-3.0]).unwrap().total, 0.0);
    }

    #[test]
    fn branch_forward_values() {
        assert_eq!(pure_quadratic().forward(&[3.0, 4.0]).unwrap().total, 12.5);
        assert_eq!(pure_conic().forward(&[3.0, 4.0]).unwrap().total, 10.0);
    }

    #[test]
    fn forward_rejects_bad_input() {
        let p = pure_quadratic();
        assert!(matches!(p.forward(&[1.0]), Err(Error::Dimension(_))));
        assert!(matches!(p.forward(&[1.0, f64::NAN]), Err(Error::NonFinite(_))));
    }

    #[test]
    fn structured_class_examples() {
        let p = from_structured_class(&[0.0, 0.0], 0.0, &Matrix::identity(2), &[]).unwrap();
        assert_eq!(p.forward(&[1.0, 1.0]).unwrap().total, 1.0);

        let p = from_structured_class(
            &[1.0, 0.0],
            3.0,
            &Matrix::zeros(0, 2),
            &[(1.0, Matrix::identity(2), vec![0.0, 0.0])],
        )
        .unwrap();
        assert!(p.quad.is_empty());
        assert_eq!(p.forward(&[0.0, -4.0]).unwrap().total, 7.0);

        let err = from_structured_class(&[0.0], 0.0, &Matrix::zeros(0, 1), &[(-1.0, Matrix::identity(1), vec![0.0])]);
        assert!(matches!(err, Err(Error::Constraint(_))));
    }

    #[test]
    fn softplus_is_stable() {
        assert_eq!(softplus(1000.0), 1000.0);
        assert_eq!(softplus(-1000.0), 0.0);
        assert!((softplus(0.0) - 2f64.ln()).abs() < 1e-15);
        assert!((sigmoid(-800.0)).is_finite());
    }

    #[test]
    fn json_round_trip_is_exact() {
        for passthrough in [true, false] {
            let a = Architecture::backbone(3, vec![4, 3], passthrough, Activation::Softplus)
                .with_branches(vec![2], vec![3]);
            let p = random_model(&a, 99).unwrap();
            let text = p.to_json().unwrap();
            let back = SocIcnnParams::from_json(&text).unwrap();
            assert_eq!(back, p);
        }
    }

    #[test]
    fn json_schema_field_names() {
        let p = random_model(&arch(1, 1), 5).unwrap();
        let v: serde_json::Value = serde_json::from_str(&p.to_json().unwrap()).unwrap();
        assert_eq!(v["version"], 1);
        assert_eq!(v["activation"], "ReLU");
        assert!(v["layers"][0]["W"].is_array());
        assert!(v["layers"][0].get("U").is_none());
        assert!(v["quad"][0]["B"].is_array() && v["quad"][0]["e"].is_array());
        assert!(v["conic"][0]["A"].is_array() && v["conic"][0]["d"].is_array());
    }

    #[test]
    fn parameter_count_matches_tensor_sizes() {
        for passthrough in [true, false] {
            let a = Architecture::backbone(5, vec![6, 4, 3], passthrough, Activation::ReLU)
                .with_branches(vec![2, 5], vec![3]);
            let p = init_model(&a, 0).unwrap();
            let n: usize = p.tensors().iter().map(|t| t.len()).sum();
            assert_eq!(n, a.parameter_count());
        }
    }
}
