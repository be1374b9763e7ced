//! Discrete generalized Mather measures as a linear program.
//!
//! A column `w[i,j,k]` is the probability mass that leaves node `x_j` at time
//! `t_i` with velocity `v_k` and travels for one step; its landing point
//! `x_j + v_k dt` is split linearly between the two neighbouring nodes. The
//! measure on the time cell is `mu = w dt`.

mod assemble;
mod colgen;
mod conjugate;
mod measures;
mod pdhg;
mod simplex;

pub use assemble::{assemble_constraints, assemble_with_cost, Column, ConstraintSystem, NuMode, RowKind};
pub use conjugate::{verify_conjugate_bound, ConjugateReport, TestFunction};
pub use measures::{h_value, induced_measure, reference_measure, reference_measure_from, DiscreteMeasure, HValue, Residuals};
pub use pdhg::{solve_primal, solve_primal_from, PdhgOptions, PrimalSolution};
pub use simplex::{brute_force_lp_oracle, solve_dense, OracleOutcome};
pub(crate) use simplex::oracle_with_duals;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hamiltonian::HamiltonianSpec;

/// Time cells, space nodes and velocity nodes of the measure LP.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasureGrid {
    pub horizon: f64,
    pub nt: usize,
    pub half_width: f64,
    pub nx: usize,
    pub vmax: f64,
    pub nv: usize,
    pub zeta1: f64,
    pub zeta2: f64,
}

impl MeasureGrid {
    /// Grid with moment exponents `zeta1 = gamma1`, `zeta2 = (1 + gamma2') / 2`.
    pub fn new(
        spec: &HamiltonianSpec,
        horizon: f64,
        nt: usize,
        half_width: f64,
        nx: usize,
        vmax: f64,
        nv: usize,
    ) -> Result<Self> {
        let g = MeasureGrid {
            horizon,
            nt,
            half_width,
            nx,
            vmax,
            nv,
            zeta1: spec.gamma1,
            zeta2: 0.5 * (1.0 + spec.gamma2_conj()),
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.horizon > 0.0 && self.half_width > 0.0 && self.vmax > 0.0) {
            return Err(Error::Grid("horizon, half width and vmax must be positive".into()));
        }
        if self.nt == 0 || self.nx == 0 || self.nv == 0 {
            return Err(Error::Grid("nt, nx, nv must be positive".into()));
        }
        if !(self.zeta1 > 0.0 && self.zeta2 > 1.0) {
            return Err(Error::Grid(format!("moment exponents out of range: {} {}", self.zeta1, self.zeta2)));
        }
        Ok(())
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.nt as f64
    }

    pub fn dx(&self) -> f64 {
        2.0 * self.half_width / self.nx as f64
    }

    pub fn dv(&self) -> f64 {
        2.0 * self.vmax / self.nv as f64
    }

    pub fn x(&self, j: usize) -> f64 {
        -self.half_width + j as f64 * self.dx()
    }

    pub fn v(&self, k: usize) -> f64 {
        -self.vmax + k as f64 * self.dv()
    }

    /// Left end of time cell `i`.
    pub fn t(&self, i: usize) -> f64 {
        i as f64 * self.dt()
    }

    pub fn n_x(&self) -> usize {
        self.nx + 1
    }

    pub fn n_v(&self) -> usize {
        self.nv + 1
    }

    /// Flat index of `(i, j, k)` in a dense weight array.
    pub fn cell(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.n_x() + j) * self.n_v() + k
    }

    pub fn n_cells(&self) -> usize {
        self.nt * self.n_x() * self.n_v()
    }

    /// Landing point of `(j, k)` as `(left node, weight on the right node)`,
    /// or `None` if it leaves `[-R, R]`.
    pub fn landing(&self, j: usize, k: usize) -> Option<(usize, f64)> {
        let s = (self.x(j) + self.v(k) * self.dt() + self.half_width) / self.dx();
        let tol = 1e-9;
        if s < -tol || s > self.nx as f64 + tol {
            return None;
        }
        let s = s.clamp(0.0, self.nx as f64);
        let left = (s.floor() as usize).min(self.nx.saturating_sub(1));
        let frac = s - left as f64;
        // Snap round-off so exact node hits produce a single entry.
        let frac = if frac < 1e-12 {
            0.0
        } else if frac > 1.0 - 1e-12 {
            1.0
        } else {
            frac
        };
        Some((left, frac))
    }

    /// Splits velocity `v` between neighbouring velocity nodes, preserving the
    /// mean. `None` if `v` is outside `[-vmax, vmax]`.
    pub fn split_velocity(&self, v: f64) -> Option<(usize, f64)> {
        let s = (v + self.vmax) / self.dv();
        let tol = 1e-9;
        if !(s >= -tol && s <= self.nv as f64 + tol) {
            return None;
        }
        let s = s.clamp(0.0, self.nv as f64);
        let left = (s.floor() as usize).min(self.nv - 1);
        let frac = s - left as f64;
        let frac = if frac < 1e-12 {
            0.0
        } else if frac > 1.0 - 1e-12 {
            1.0
        } else {
            frac
        };
        Some((left, frac))
    }
}
