//! Dense-tableau two-phase primal simplex with Bland's rule.
//!
//! Solves `min cᵀy  s.t.  G y ≥ h` over free variables `y`. The solver knows
//! nothing about networks: it is the independent oracle the certificate
//! checks are measured against, so it deliberately works from the generic
//! row form only.

use crate::error::{Error, LpStatus, Result};

const PIVOT_TOL: f64 = 1e-11;
const COST_TOL: f64 = 1e-11;
const FEAS_TOL: f64 = 1e-9;
const MAX_PIVOTS: usize = 200_000;

/// `coeffs · y ≥ rhs`.
#[derive(Debug, Clone, PartialEq)]
pub struct GeRow {
    pub coeffs: Vec<f64>,
    pub rhs: f64,
}

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub value: f64,
    pub y: Vec<f64>,
    pub pivots: usize,
}

struct Tableau {
    /// `m` constraint rows followed by the objective row; last column is the rhs.
    t: Vec<Vec<f64>>,
    basis: Vec<usize>,
    pivots: usize,
}

impl Tableau {
    fn rhs_col(&self) -> usize {
        self.t[0].len() - 1
    }

    fn pivot(&mut self, row: usize, col: usize) {
        let width = self.t[row].len();
        let p = self.t[row][col];
        for j in 0..width {
            self.t[row][j] /= p;
        }
        self.t[row][col] = 1.0;
        let pivot_row = self.t[row].clone();
        for (i, r) in self.t.iter_mut().enumerate() {
            if i == row {
                continue;
            }
            let f = r[col];
            if f == 0.0 {
                continue;
            }
            for j in 0..width {
                r[j] -= f * pivot_row[j];
            }
            r[col] = 0.0;
        }
        self.basis[row] = col;
        self.pivots += 1;
    }

    /// Minimizes the objective row over columns `< allowed`. Bland's rule:
    /// lowest-index improving column, lowest-index leaving variable on ties.
    fn optimize(&mut self, allowed: usize) -> Result<()> {
        let m = self.basis.len();
        let rhs = self.rhs_col();
        loop {
            if self.pivots > MAX_PIVOTS {
                return Err(Error::Lp(LpStatus::IterationLimit));
            }
            let obj = &self.t[m];
            let Some(enter) = (0..allowed).find(|&j| obj[j] < -COST_TOL) else {
                return Ok(());
            };
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..m {
                let a = self.t[i][enter];
                if a > PIVOT_TOL {
                    let ratio = self.t[i][rhs] / a;
                    leave = match leave {
                        None => Some((i, ratio)),
                        Some((bi, br)) => {
                            if ratio < br - 1e-14 || (ratio <= br + 1e-14 && self.basis[i] < self.basis[bi]) {
                                Some((i, ratio))
                            } else {
                                Some((bi, br))
                            }
                        }
                    };
                }
            }
            let Some((row, _)) = leave else {
                return Err(Error::Lp(LpStatus::Unbounded));
            };
            self.pivot(row, enter);
        }
    }
}

/// Solves `min objective·y  s.t.  rows` with `y` free.
pub fn solve_ge_lp(objective: &[f64], rows: &[GeRow]) -> Result<LpSolution> {
    let n = objective.len();
    let m = rows.len();
    if rows.iter().any(|r| r.coeffs.len() != n) {
        return Err(Error::Dimension("constraint row length differs from variable count".into()));
    }
    // Columns: p (n), q (n), surplus (m), artificials (one per row with rhs > 0).
    // Row i reads G_i p − G_i q − s_i = h_i; rows with h_i ≤ 0 are negated so
    // the surplus enters with +1 and can start in the basis.
    let needs_art: Vec<bool> = rows.iter().map(|r| r.rhs > 0.0).collect();
    let n_art = needs_art.iter().filter(|&&a| a).count();
    let n_struct = 2 * n + m;
    let width = n_struct + n_art + 1;
    let mut t = vec![vec![0.0; width]; m + 1];
    let mut basis = vec![0; m];
    let mut art_col = n_struct;
    for (i, r) in rows.iter().enumerate() {
        let sign = if needs_art[i] { 1.0 } else { -1.0 };
        for (j, &g) in r.coeffs.iter().enumerate() {
            t[i][j] = sign * g;
            t[i][n + j] = -sign * g;
        }
        t[i][2 * n + i] = -sign;
        t[i][width - 1] = sign * r.rhs;
        if needs_art[i] {
            t[i][art_col] = 1.0;
            basis[i] = art_col;
            art_col += 1;
        } else {
            basis[i] = 2 * n + i;
        }
    }
    let mut tab = Tableau { t, basis, pivots: 0 };

    if n_art > 0 {
        // Phase 1 objective Σ artificials, expressed in reduced form.
        for (i, &art) in needs_art.iter().enumerate() {
            if art {
                for j in 0..width {
                    if j < n_struct || j == width - 1 {
                        tab.t[m][j] -= tab.t[i][j];
                    }
                }
            }
        }
        tab.optimize(n_struct + n_art)?;
        if -tab.t[m][width - 1] > FEAS_TOL {
            return Err(Error::Lp(LpStatus::Infeasible));
        }
        // Drive remaining (zero-level) artificials out of the basis.
        let mut i = 0;
        while i < tab.basis.len() {
            if tab.basis[i] >= n_struct {
                if let Some(j) = (0..n_struct).find(|&j| tab.t[i][j].abs() > 1e-9) {
                    tab.pivot(i, j);
                } else {
                    tab.t.remove(i);
                    tab.basis.remove(i);
                    continue;
                }
            }
            i += 1;
        }
    }

    let m = tab.basis.len();
    let rhs = tab.rhs_col();
    let obj_row = &mut tab.t[m];
    obj_row.iter_mut().for_each(|v| *v = 0.0);
    for j in 0..n {
        obj_row[j] = objective[j];
        obj_row[n + j] = -objective[j];
    }
    for i in 0..m {
        let b = tab.basis[i];
        let cb = tab.t[m][b];
        if cb != 0.0 {
            for j in 0..=rhs {
                let v = tab.t[i][j];
                tab.t[m][j] -= cb * v;
            }
        }
    }
    tab.optimize(n_struct)?;

    let mut y = vec![0.0; n];
    for (i, &b) in tab.basis.iter().enumerate() {
        let val = tab.t[i][rhs];
        if b < n {
            y[b] += val;
        } else if b < 2 * n {
            y[b - n] -= val;
        }
    }
    let value = objective.iter().zip(&y).map(|(c, v)| c * v).sum();
    Ok(LpSolution { value, y, pivots: tab.pivots })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(coeffs: &[f64], rhs: f64) -> GeRow {
        GeRow { coeffs: coeffs.to_vec(), rhs }
    }

    #[test]
    fn textbook_problem() {
        // min -x - y  s.t. x + 2y ≤ 4, 3x + y ≤ 6, x, y ≥ 0  → (1.6, 1.2), -2.8
        let rows = [row(&[-1.0, -2.0], -4.0), row(&[-3.0, -1.0], -6.0), row(&[1.0, 0.0], 0.0), row(&[0.0, 1.0], 0.0)];
        let s = solve_ge_lp(&[-1.0, -1.0], &rows).unwrap();
        assert!((s.value + 2.8).abs() < 1e-12);
        assert!((s.y[0] - 1.6).abs() < 1e-12 && (s.y[1] - 1.2).abs() < 1e-12);
    }

    #[test]
    fn free_variable_can_go_negative() {
        // min y  s.t. y ≥ -3
        let s = solve_ge_lp(&[1.0], &[row(&[1.0], -3.0)]).unwrap();
        assert_eq!(s.value, -3.0);
    }

    #[test]
    fn lower_bounds_with_positive_rhs() {
        // min x + y  s.t. x ≥ 2, y ≥ 1, x + y ≥ 5
        let rows = [row(&[1.0, 0.0], 2.0), row(&[0.0, 1.0], 1.0), row(&[1.0, 1.0], 5.0)];
        let s = solve_ge_lp(&[1.0, 1.0], &rows).unwrap();
        assert!((s.value - 5.0).abs() < 1e-12);
    }

    #[test]
    fn detects_unbounded_and_infeasible() {
        assert!(matches!(solve_ge_lp(&[-1.0], &[row(&[1.0], 0.0)]), Err(Error::Lp(LpStatus::Unbounded))));
        let rows = [row(&[1.0], 2.0), row(&[-1.0], -1.0)];
        assert!(matches!(solve_ge_lp(&[1.0], &rows), Err(Error::Lp(LpStatus::Infeasible))));
    }

    #[test]
    fn redundant_rows_are_tolerated() {
        let rows = [row(&[1.0, 1.0], 1.0), row(&[2.0, 2.0], 2.0), row(&[1.0, 0.0], 0.0), row(&[0.0, 1.0], 0.0)];
        let s = solve_ge_lp(&[1.0, 2.0], &rows).unwrap();
        assert!((s.value - 1.0).abs() < 1e-12);
    }
}
