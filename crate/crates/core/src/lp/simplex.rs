//! Dense two-phase simplex with Bland's rule; the reference solver for small
//! instances.

use serde::Serialize;

use crate::error::{Error, Result};

use super::assemble::ConstraintSystem;

const MAX_VARIABLES: usize = 200;
const PIVOT_CAP: usize = 100_000;
const EPS: f64 = 1e-11;

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum OracleOutcome {
    Optimal { value: f64, x: Vec<f64> },
    Infeasible,
    Unbounded,
}

impl OracleOutcome {
    pub fn value(&self) -> Option<f64> {
        match self {
            OracleOutcome::Optimal { value, .. } => Some(*value),
            _ => None,
        }
    }
}

struct Tableau {
    /// Rows of `[B^-1 A | B^-1 b]`.
    rows: Vec<Vec<f64>>,
    basis: Vec<usize>,
    width: usize,
}

enum Pivoting {
    Optimal,
    Unbounded,
}

impl Tableau {
    fn rhs(&self, i: usize) -> f64 {
        self.rows[i][self.width]
    }

    fn pivot(&mut self, r: usize, col: usize) {
        let p = self.rows[r][col];
        self.rows[r].iter_mut().for_each(|v| *v /= p);
        let pivot_row = self.rows[r].clone();
        for (i, row) in self.rows.iter_mut().enumerate() {
            if i == r {
                continue;
            }
            let f = row[col];
            if f != 0.0 {
                row.iter_mut().zip(&pivot_row).for_each(|(v, pv)| *v -= f * pv);
            }
        }
        self.basis[r] = col;
    }

    fn objective(&self, cost: &[f64]) -> f64 {
        (0..self.rows.len()).map(|i| cost[self.basis[i]] * self.rhs(i)).sum()
    }

    /// Minimises `cost` over columns `< allowed` with Bland's rule.
    fn run(&mut self, cost: &[f64], allowed: usize) -> Result<Pivoting> {
        for _ in 0..PIVOT_CAP {
            let scale = 1.0 + cost.iter().fold(0.0_f64, |m, c| m.max(c.abs()));
            let entering = (0..allowed).find(|&j| {
                if self.basis.contains(&j) {
                    return false;
                }
                let reduced = cost[j] - (0..self.rows.len()).map(|i| cost[self.basis[i]] * self.rows[i][j]).sum::<f64>();
                reduced < -EPS * scale
            });
            let Some(col) = entering else {
                return Ok(Pivoting::Optimal);
            };
            let mut best: Option<(f64, usize)> = None;
            for i in 0..self.rows.len() {
                let a = self.rows[i][col];
                if a > EPS {
                    let ratio = self.rhs(i) / a;
                    let better = match best {
                        None => true,
                        Some((r, bi)) => {
                            ratio < r - 1e-13 || (ratio <= r + 1e-13 && self.basis[i] < self.basis[bi])
                        }
                    };
                    if better {
                        best = Some((ratio, i));
                    }
                }
            }
            match best {
                None => return Ok(Pivoting::Unbounded),
                Some((_, r)) => self.pivot(r, col),
            }
        }
        Err(Error::Oracle(format!("simplex exceeded {PIVOT_CAP} pivots")))
    }
}

/// Solves `min c.x, Ax = b, x >= 0` for systems with at most 200 columns.
pub fn brute_force_lp_oracle(cs: &ConstraintSystem) -> Result<OracleOutcome> {
    solve_dense(&cs.a.to_dense(), &cs.b, &cs.c)
}

/// [`brute_force_lp_oracle`] together with optimal row multipliers.
pub(crate) fn oracle_with_duals(cs: &ConstraintSystem) -> Result<(OracleOutcome, Option<Vec<f64>>)> {
    if cs.n_cols() > MAX_VARIABLES {
        return Err(Error::Oracle(format!("{} variables exceed the oracle limit of {MAX_VARIABLES}", cs.n_cols())));
    }
    simplex(&cs.a.to_dense(), &cs.b, &cs.c)
}

/// Dense entry point, also used by tests on hand-made problems.
pub fn solve_dense(a: &[Vec<f64>], b: &[f64], c: &[f64]) -> Result<OracleOutcome> {
    let n = c.len();
    if n > MAX_VARIABLES {
        return Err(Error::Oracle(format!("{n} variables exceed the oracle limit of {MAX_VARIABLES}")));
    }
    Ok(simplex(a, b, c)?.0)
}

/// Uncapped simplex; also returns row multipliers `y` with `c - A^T y >= 0`
/// at an optimum (zero on rows found redundant).
pub(crate) fn simplex(a: &[Vec<f64>], b: &[f64], c: &[f64]) -> Result<(OracleOutcome, Option<Vec<f64>>)> {
    let m = a.len();
    let n = c.len();
    if b.len() != m || a.iter().any(|r| r.len() != n) {
        return Err(Error::Oracle("inconsistent dense system".into()));
    }
    let width = n + m;
    let rows = (0..m)
        .map(|i| {
            let sign = if b[i] < 0.0 { -1.0 } else { 1.0 };
            let mut row = vec![0.0; width + 1];
            for j in 0..n {
                row[j] = sign * a[i][j];
            }
            row[n + i] = 1.0;
            row[width] = sign * b[i];
            row
        })
        .collect();
    let mut t = Tableau {
        rows,
        basis: (n..n + m).collect(),
        width,
    };

    let mut phase1 = vec![0.0; width];
    phase1[n..].iter_mut().for_each(|v| *v = 1.0);
    t.run(&phase1, width)?;
    let b_scale = 1.0 + b.iter().fold(0.0_f64, |s, v| s + v.abs());
    if t.objective(&phase1) > 1e-9 * b_scale {
        return Ok((OracleOutcome::Infeasible, None));
    }
    // Drive artificials out of the basis; rows where that is impossible are
    // redundant and dropped.
    let mut i = 0;
    while i < t.rows.len() {
        if t.basis[i] >= n {
            match (0..n).find(|&j| t.rows[i][j].abs() > 1e-9) {
                Some(j) => t.pivot(i, j),
                None => {
                    t.rows.remove(i);
                    t.basis.remove(i);
                    continue;
                }
            }
        }
        i += 1;
    }
    let mut phase2 = vec![0.0; width];
    phase2[..n].copy_from_slice(c);
    match t.run(&phase2, n)? {
        Pivoting::Unbounded => Ok((OracleOutcome::Unbounded, None)),
        Pivoting::Optimal => {
            let mut x = vec![0.0; n];
            for (i, &bi) in t.basis.iter().enumerate() {
                x[bi] = t.rhs(i).max(0.0);
            }
            let value = c.iter().zip(&x).map(|(a, b)| a * b).sum();
            // The artificial block of the tableau holds B^-1 of the sign-flipped rows.
            let y = (0..m)
                .map(|i| {
                    let sign = if b[i] < 0.0 { -1.0 } else { 1.0 };
                    sign * (0..t.rows.len()).map(|r| phase2[t.basis[r]] * t.rows[r][n + i]).sum::<f64>()
                })
                .collect();
            Ok((OracleOutcome::Optimal { value, x }, Some(y)))
        }
    }
}
