//! Reverse-mode derivatives of the forward pass.
//!
//! Two backward passes live here: the input subgradient (used by downstream
//! projected gradient descent and the convexity diagnostics) and the
//! parameter gradient of the mean-squared error (used by training). Both use
//! the conventions ReLU'(0) = 0 and ∇‖u‖ = 0 at u = 0.

use rayon::prelude::*;

use crate::error::{dim_err, Error, Result};
use crate::linalg::{axpy, Matrix};
use crate::model::{Activation, ForwardTrace, SocIcnnParams};

/// Gradients with respect to every learnable scalar, stored in a parameter
/// object of identical shape.
pub type ParamGradients = SocIcnnParams;

/// Samples per work unit in [`parameter_gradients`]. Fixed so the reduction
/// order, and hence the result, does not depend on the thread count.
const GRAD_CHUNK: usize = 32;

/// Backbone multipliers `ν_ℓ = (U_{ℓ+1}ᵀ ν_{ℓ+1}) ⊙ σ'(preact_ℓ)`, seeded with
/// `ν_L = c ⊙ σ'(preact_L)`.
pub fn backbone_multipliers(params: &SocIcnnParams, trace: &ForwardTrace) -> Vec<Vec<f64>> {
    let depth = params.depth();
    let mut nus: Vec<Vec<f64>> = vec![Vec::new(); depth];
    let mut upstream = params.c.clone();
    for l in (0..depth).rev() {
        let nu: Vec<f64> = upstream
            .iter()
            .zip(&trace.preacts[l])
            .map(|(&g, &t)| g * params.activation.derivative(t))
            .collect();
        if l > 0 {
            let u = params.layers[l].u.as_ref().expect("validated: hidden weight present");
            upstream = vec![0.0; u.cols()];
            u.add_matvec_t(&nu, &mut upstream);
        }
        nus[l] = nu;
    }
    nus
}

/// Input subgradient together with the backbone multipliers that produced it.
pub fn input_subgradient_with_chain(params: &SocIcnnParams, x: &[f64]) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let trace = params.forward(x)?;
    Ok(subgradient_from_trace(params, &trace))
}

/// Model output and an input subgradient from a single forward pass.
pub fn value_and_input_subgradient(params: &SocIcnnParams, x: &[f64]) -> Result<(f64, Vec<f64>)> {
    let trace = params.forward(x)?;
    Ok((trace.total, subgradient_from_trace(params, &trace).0))
}

fn subgradient_from_trace(params: &SocIcnnParams, trace: &ForwardTrace) -> (Vec<f64>, Vec<Vec<f64>>) {
    let nus = backbone_multipliers(params, trace);
    let mut g = params.v.clone();
    for (layer, nu) in params.layers.iter().zip(&nus) {
        if let Some(w) = &layer.w {
            w.add_matvec_t(nu, &mut g);
        }
    }
    for (q, qv) in params.quad.iter().zip(&trace.quad_q) {
        let scaled: Vec<f64> = qv.iter().map(|v| q.alpha * v).collect();
        q.proj.add_matvec_t(&scaled, &mut g);
    }
    for ((k, uv), &t) in params.conic.iter().zip(&trace.conic_u).zip(&trace.conic_t) {
        if t > 0.0 {
            let scaled: Vec<f64> = uv.iter().map(|v| k.lambda * v / t).collect();
            k.proj.add_matvec_t(&scaled, &mut g);
        }
    }
    (g, nus)
}

/// An element of the subdifferential of the model output at `x`.
pub fn input_subgradient(params: &SocIcnnParams, x: &[f64]) -> Result<Vec<f64>> {
    input_subgradient_with_chain(params, x).map(|(g, _)| g)
}

/// Accumulates `scale · ∂f(x)/∂θ` into `grads`.
fn accumulate_output_gradient(
    params: &SocIcnnParams,
    x: &[f64],
    trace: &ForwardTrace,
    scale: f64,
    grads: &mut ParamGradients,
) {
    grads.b0 += scale;
    axpy(scale, x, &mut grads.v);
    let depth = params.depth();
    axpy(scale, &trace.acts[depth - 1], &mut grads.c);

    let mut upstream: Vec<f64> = params.c.iter().map(|c| scale * c).collect();
    for l in (0..depth).rev() {
        let delta: Vec<f64> = upstream
            .iter()
            .zip(&trace.preacts[l])
            .map(|(&g, &t)| g * params.activation.derivative(t))
            .collect();
        let gl = &mut grads.layers[l];
        axpy(1.0, &delta, &mut gl.b);
        if let Some(gw) = gl.w.as_mut() {
            gw.add_outer(1.0, &delta, x);
        }
        if l > 0 {
            let gu = gl.u.as_mut().expect("mirror has hidden weight");
            gu.add_outer(1.0, &delta, &trace.acts[l - 1]);
            let u = params.layers[l].u.as_ref().expect("validated: hidden weight present");
            upstream = vec![0.0; u.cols()];
            u.add_matvec_t(&delta, &mut upstream);
        }
    }

    for ((q, gq), (qv, &s)) in params
        .quad
        .iter()
        .zip(grads.quad.iter_mut())
        .zip(trace.quad_q.iter().zip(&trace.quad_s))
    {
        gq.alpha += scale * s;
        let dq: Vec<f64> = qv.iter().map(|v| scale * q.alpha * v).collect();
        gq.proj.add_outer(1.0, &dq, x);
        axpy(1.0, &dq, &mut gq.offset);
    }
    for ((k, gk), (uv, &t)) in params
        .conic
        .iter()
        .zip(grads.conic.iter_mut())
        .zip(trace.conic_u.iter().zip(&trace.conic_t))
    {
        gk.lambda += scale * t;
        if t > 0.0 {
            let du: Vec<f64> = uv.iter().map(|v| scale * k.lambda * v / t).collect();
            gk.proj.add_outer(1.0, &du, x);
            axpy(1.0, &du, &mut gk.offset);
        }
    }
}

fn add_into(acc: &mut ParamGradients, other: &ParamGradients) {
    let src = other.tensors();
    for ((dst, _), s) in acc.tensors_mut().into_iter().zip(src) {
        axpy(1.0, s, dst);
    }
}

/// Mean-squared error over the batch and its exact gradient.
pub fn parameter_gradients(
    params: &SocIcnnParams,
    batch_x: &Matrix,
    batch_y: &[f64],
) -> Result<(f64, ParamGradients)> {
    let n = batch_x.rows();
    if n == 0 {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    if batch_y.len() != n {
        return dim_err(format!("batch has {n} inputs but {} targets", batch_y.len()));
    }
    if batch_x.cols() != params.d0 {
        return dim_err(format!("batch inputs have {} columns, model expects {}", batch_x.cols(), params.d0));
    }
    let inv_n = 1.0 / n as f64;
    let indices: Vec<usize> = (0..n).collect();
    let partials: Vec<Result<(f64, ParamGradients)>> = indices
        .par_chunks(GRAD_CHUNK)
        .map(|chunk| {
            let mut grads = params.zeros_like();
            let mut sse = 0.0;
            for &i in chunk {
                let x = batch_x.row(i);
                let trace = params.forward(x)?;
                let r = trace.total - batch_y[i];
                sse += r * r;
                accumulate_output_gradient(params, x, &trace, 2.0 * r * inv_n, &mut grads);
            }
            Ok((sse, grads))
        })
        .collect();
    let mut loss = 0.0;
    let mut total = params.zeros_like();
    for part in partials {
        let (sse, g) = part?;
        loss += sse;
        add_into(&mut total, &g);
    }
    Ok((loss * inv_n, total))
}

/// Largest coordinate-wise discrepancy between [`input_subgradient`] and a
/// central difference of the forward value.
///
/// The discrepancy is `|fd − g| / max(1, |fd|, |g|)`. Coordinates whose
/// stencil moves a pre-activation or branch norm to within `10·step` of its
/// kink (or across it) are skipped.
pub fn finite_difference_check(params: &SocIcnnParams, x: &[f64], step: f64) -> Result<f64> {
    if !(step > 0.0) {
        return Err(Error::InvalidArgument("finite-difference step must be positive".into()));
    }
    let g = input_subgradient(params, x)?;
    let base = params.forward(x)?;
    let threshold = 10.0 * step;
    let check_relu = params.activation == Activation::ReLU;
    // A unit that does not move across the stencil cannot cross its kink.
    let near_kink = |a: f64, b: f64| a != b && (a.abs() < threshold || b.abs() < threshold || (a > 0.0) != (b > 0.0));
    let kink_free = |t: &ForwardTrace| {
        let relu_ok = !check_relu
            || t.preacts
                .iter()
                .zip(&base.preacts)
                .flat_map(|(a, b)| a.iter().zip(b))
                .all(|(&a, &b)| !near_kink(a, b));
        relu_ok && t.conic_t.iter().zip(&base.conic_t).all(|(&a, &b)| !near_kink(a, b))
    };
    let mut worst: f64 = 0.0;
    let mut xp = x.to_vec();
    for i in 0..x.len() {
        xp[i] = x[i] + step;
        let plus = params.forward(&xp)?;
        xp[i] = x[i] - step;
        let minus = params.forward(&xp)?;
        xp[i] = x[i];
        if !(kink_free(&plus) && kink_free(&minus)) {
            continue;
        }
        let fd = (plus.total - minus.total) / (2.0 * step);
        let rel = (fd - g[i]).abs() / 1f64.max(fd.abs()).max(g[i].abs());
        worst = worst.max(rel);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::test_models::*;
    use crate::model::{init_model, random_model, Activation, Architecture};
    use crate::rng::rng_from_seed;
    use rand::Rng as _;

    #[test]
    fn relu_scalar_subgradient() {
        let p = relu_1d();
        assert_eq!(input_subgradient(&p, &[2.0]).unwrap(), vec![1.0]);
        assert_eq!(input_subgradient(&p, &[-3.0]).unwrap(), vec![0.0]);
        assert_eq!(input_subgradient(&p, &[0.0]).unwrap(), vec![0.0]);
    }

    #[test]
    fn branch_subgradients() {
        assert_eq!(input_subgradient(&pure_quadratic(), &[3.0, 4.0]).unwrap(), vec![3.0, 4.0]);
        let g = input_subgradient(&pure_conic(), &[3.0, 4.0]).unwrap();
        assert!((g[0] - 1.2).abs() < 1e-15 && (g[1] - 1.6).abs() < 1e-15);
        assert_eq!(input_subgradient(&pure_conic(), &[0.0, 0.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn mse_at_interpolation_is_stationary() {
        let a = Architecture::backbone(3, vec![5, 4], true, Activation::ReLU).with_branches(vec![2], vec![2]);
        let p = random_model(&a, 4).unwrap();
        let xs = Matrix::from_fn(6, 3, |i, j| (i as f64) * 0.3 - (j as f64) * 0.7 + 0.11);
        let ys: Vec<f64> = (0..6).map(|i| p.forward(xs.row(i)).unwrap().total).collect();
        let (loss, g) = parameter_gradients(&p, &xs, &ys).unwrap();
        assert_eq!(loss, 0.0);
        assert!(g.tensors().iter().all(|t| t.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn constant_model_gradient() {
        let mut p = zero_backbone(1);
        p.b0 = 1.0;
        let xs = Matrix::from_rows(&[vec![0.5]], 0).unwrap();
        let (loss, g) = parameter_gradients(&p, &xs, &[3.0]).unwrap();
        assert_eq!(loss, 4.0);
        assert_eq!(g.b0, -4.0);
    }

    #[test]
    fn empty_batch_is_rejected() {
        let p = zero_backbone(2);
        assert!(parameter_gradients(&p, &Matrix::zeros(0, 2), &[]).is_err());
    }

    /// Central differences over every parameter, computed without the
    /// backward pass.
    fn fd_parameter_gradient(p: &SocIcnnParams, xs: &Matrix, ys: &[f64], step: f64) -> Vec<f64> {
        let loss = |q: &SocIcnnParams| -> f64 {
            (0..xs.rows())
                .map(|i| {
                    let r = q.forward(xs.row(i)).unwrap().total - ys[i];
                    r * r
                })
                .sum::<f64>()
                / xs.rows() as f64
        };
        let total: usize = p.tensors().iter().map(|t| t.len()).sum();
        let mut out = Vec::with_capacity(total);
        for flat in 0..total {
            let perturbed = |delta: f64| {
                let mut q = p.clone();
                let mut k = flat;
                for (t, _) in q.tensors_mut() {
                    if k < t.len() {
                        t[k] += delta;
                        break;
                    }
                    k -= t.len();
                }
                q
            };
            out.push((loss(&perturbed(step)) - loss(&perturbed(-step))) / (2.0 * step));
        }
        out
    }

    #[test]
    fn parameter_gradients_match_finite_differences() {
        for activation in [Activation::ReLU, Activation::Softplus] {
            let a = Architecture::backbone(4, vec![6, 5, 4], true, activation).with_branches(vec![3], vec![2, 3]);
            let p = random_model(&a, 23).unwrap();
            let mut rng = rng_from_seed(23);
            let xs = Matrix::from_fn(8, 4, |_, _| rng.random_range(-2.0..2.0));
            let ys: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
            let (_, g) = parameter_gradients(&p, &xs, &ys).unwrap();
            let analytic: Vec<f64> = g.tensors().concat();
            let fd = fd_parameter_gradient(&p, &xs, &ys, 1e-5);
            for (i, (a, f)) in analytic.iter().zip(&fd).enumerate() {
                let rel = (a - f).abs() / a.abs().max(f.abs()).max(1e-3);
                assert!(rel <= 1e-5, "{activation:?} param {i}: analytic {a} vs fd {f}");
            }
        }
    }

    #[test]
    fn finite_difference_examples() {
        let q = pure_quadratic();
        for x in [[3.0, 4.0], [-0.2, 1.7], [0.0, 0.0]] {
            assert!(finite_difference_check(&q, &x, 1e-5).unwrap() <= 1e-8);
        }
        assert!(finite_difference_check(&pure_conic(), &[3.0, 4.0], 1e-6).unwrap() <= 1e-5);

        let a = Architecture::backbone(5, vec![8, 8], true, Activation::ReLU).with_branches(vec![3], vec![3]);
        let p = random_model(&a, 23).unwrap();
        let x = [0.3, -1.1, 0.7, 2.0, -0.4];
        assert!(finite_difference_check(&p, &x, 1e-5).unwrap() <= 1e-5);
        assert!(finite_difference_check(&p, &x, 0.0).is_err());
    }

    #[test]
    fn chain_multipliers_are_bounded() {
        let a = Architecture::backbone(4, vec![6, 6, 6], false, Activation::ReLU);
        let mut rng = rng_from_seed(1);
        for seed in 0..20 {
            let mut p = random_model(&a, seed).unwrap();
            p.v = vec![0.0; 4];
            let x: Vec<f64> = (0..4).map(|_| rng.random_range(-3.0..3.0)).collect();
            let (_, nus) = input_subgradient_with_chain(&p, &x).unwrap();
            let last = nus.len() - 1;
            for (n, c) in nus[last].iter().zip(&p.c) {
                assert!(*n >= 0.0 && n <= c);
            }
            for l in 0..last {
                let mut bound = vec![0.0; nus[l].len()];
                p.layers[l + 1].u.as_ref().unwrap().add_matvec_t(&nus[l + 1], &mut bound);
                for (n, b) in nus[l].iter().zip(&bound) {
                    assert!(*n >= 0.0 && n <= b);
                }
            }
        }
    }

    #[test]
    fn backbone_gradient_is_piecewise_constant() {
        let a = Architecture::backbone(3, vec![6, 5], true, Activation::ReLU);
        let p = init_model(&a, 12).unwrap();
        let mut rng = rng_from_seed(12);
        let mut checked = 0;
        for _ in 0..200 {
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-3.0..3.0)).collect();
            let d: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let y: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + 1e-7 * b).collect();
            let tx = p.forward(&x).unwrap();
            let ty = p.forward(&y).unwrap();
            let same_pattern = tx
                .preacts
                .iter()
                .flatten()
                .zip(ty.preacts.iter().flatten())
                .all(|(a, b)| (*a > 0.0) == (*b > 0.0));
            if same_pattern {
                checked += 1;
                assert_eq!(input_subgradient(&p, &x).unwrap(), input_subgradient(&p, &y).unwrap());
            }
        }
        assert!(checked > 150);
    }
}
