//! Linear-programming lift of the ReLU backbone.
//!
//! For fixed `x` the backbone value equals
//!
//! ```text
//! min   cᵀ z_L + vᵀx + b0
//! s.t.  z_ℓ − U_ℓ z_{ℓ-1} ≥ W_ℓ x + b_ℓ,   z_ℓ ≥ 0,   ℓ = 1..L
//! ```
//!
//! over the stacked hidden variables `z = (z_1, …, z_L)`.

use super::simplex::{solve_ge_lp, GeRow};
use crate::error::{Error, Result};
use crate::model::{Activation, SocIcnnParams};

/// Variable count above which the dense simplex oracle refuses to run.
pub const MAX_ORACLE_VARIABLES: usize = 500;

#[derive(Debug, Clone, PartialEq)]
pub struct LpLift {
    /// Linear objective over the stacked hidden variables.
    pub objective: Vec<f64>,
    /// `coeffs · z ≥ rhs` rows: first the layer recursions, then `z ≥ 0`.
    pub rows: Vec<GeRow>,
    /// `vᵀx + b0`.
    pub constant_term: f64,
    /// Offset of each layer's block inside the stacked variable vector.
    pub layer_offsets: Vec<usize>,
}

impl LpLift {
    pub fn num_variables(&self) -> usize {
        self.objective.len()
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }
}

pub(crate) fn require_relu(params: &SocIcnnParams) -> Result<()> {
    if params.activation != Activation::ReLU {
        return Err(Error::Unsupported("certificates require ReLU activation".into()));
    }
    Ok(())
}

pub fn build_lp_lift(params: &SocIcnnParams, x: &[f64]) -> Result<LpLift> {
    require_relu(params)?;
    params.validate()?;
    params.check_input(x)?;
    if !params.is_feasible() {
        return Err(Error::Constraint("model violates its sign constraints; project it first".into()));
    }
    let widths = params.widths();
    let n: usize = widths.iter().sum();
    let mut layer_offsets = Vec::with_capacity(widths.len());
    let mut off = 0;
    for w in &widths {
        layer_offsets.push(off);
        off += w;
    }

    let mut rows = Vec::with_capacity(2 * n);
    for (l, layer) in params.layers.iter().enumerate() {
        for i in 0..layer.width() {
            let mut coeffs = vec![0.0; n];
            coeffs[layer_offsets[l] + i] = 1.0;
            if let Some(u) = &layer.u {
                let prev = layer_offsets[l - 1];
                for (j, &uij) in u.row(i).iter().enumerate() {
                    coeffs[prev + j] -= uij;
                }
            }
            let mut rhs = layer.b[i];
            if let Some(w) = &layer.w {
                rhs += w.row(i).iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
            }
            rows.push(GeRow { coeffs, rhs });
        }
    }
    for k in 0..n {
        let mut coeffs = vec![0.0; n];
        coeffs[k] = 1.0;
        rows.push(GeRow { coeffs, rhs: 0.0 });
    }

    let mut objective = vec![0.0; n];
    let last = *layer_offsets.last().unwrap();
    objective[last..].copy_from_slice(&params.c);
    let constant_term = params.v.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + params.b0;
    Ok(LpLift { objective, rows, constant_term, layer_offsets })
}

/// Solves the lift with the simplex oracle. Returns the full optimal value
/// (including the constant term) and the optimal stacked `z`.
pub fn simplex_lp_solve(lift: &LpLift) -> Result<(f64, Vec<f64>)> {
    if lift.num_variables() > MAX_ORACLE_VARIABLES {
        return Err(Error::InvalidArgument(format!(
            "lift has {} variables; the dense oracle handles at most {MAX_ORACLE_VARIABLES}",
            lift.num_variables()
        )));
    }
    let sol = solve_ge_lp(&lift.objective, &lift.rows)?;
    Ok((sol.value + lift.constant_term, sol.y))
}
