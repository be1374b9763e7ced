//! Finite-difference solver for the viscous price-formation system.

mod fp;
mod hjb;
mod price;
mod solve;
mod upwind;

pub use fp::solve_fp_forward;
pub use hjb::solve_hjb_backward;
pub use price::{balance_residual, initial_price_root, price_update, slice_price_root};
pub use solve::{
    fixed_point_solve, vanishing_viscosity_sweep, PriceRule, SolverOptions, SweepResult,
};
pub use upwind::{numerical_hp, Upwind};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::ProblemData;

/// Uniform space-time grid on `[0, T] x [-R, R]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub horizon: f64,
    pub half_width: f64,
    pub nt: usize,
    pub nx: usize,
}

impl GridSpec {
    pub fn new(horizon: f64, half_width: f64, nt: usize, nx: usize) -> Result<Self> {
        let g = GridSpec {
            horizon,
            half_width,
            nt,
            nx,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::Grid(format!("horizon must be positive, got {}", self.horizon)));
        }
        if !(self.half_width > 0.0 && self.half_width.is_finite()) {
            return Err(Error::Grid(format!("half width must be positive, got {}", self.half_width)));
        }
        if self.nt < 4 || self.nx < 4 {
            return Err(Error::Grid(format!("need nt, nx >= 4, got {} and {}", self.nt, self.nx)));
        }
        Ok(())
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.nt as f64
    }

    pub fn dx(&self) -> f64 {
        2.0 * self.half_width / self.nx as f64
    }

    pub fn x(&self, j: usize) -> f64 {
        -self.half_width + j as f64 * self.dx()
    }

    pub fn t(&self, i: usize) -> f64 {
        i as f64 * self.dt()
    }

    pub fn xs(&self) -> Vec<f64> {
        (0..=self.nx).map(|j| self.x(j)).collect()
    }

    pub fn ts(&self) -> Vec<f64> {
        (0..=self.nt).map(|i| self.t(i)).collect()
    }
}

/// Problem data sampled on a grid.
#[derive(Clone, Debug, PartialEq)]
pub struct SampledData {
    pub supply: Vec<f64>,
    pub terminal: Vec<f64>,
    pub terminal_slope: Vec<f64>,
    /// Density values, `sum(m0) * dx = 1`.
    pub m0: Vec<f64>,
}

impl SampledData {
    pub fn from_problem(data: &ProblemData, grid: &GridSpec) -> Result<Self> {
        data.validate()?;
        grid.validate()?;
        if (data.horizon - grid.horizon).abs() > 1e-12 * data.horizon {
            return Err(Error::Config(format!(
                "problem horizon {} differs from grid horizon {}",
                data.horizon, grid.horizon
            )));
        }
        let dx = grid.dx();
        let masses = data.node_masses(-grid.half_width, dx, grid.nx)?;
        Ok(SampledData {
            supply: grid.ts().iter().map(|&t| data.supply.value(t)).collect(),
            terminal: grid.xs().iter().map(|&x| data.terminal.value(x)).collect(),
            terminal_slope: grid.xs().iter().map(|&x| data.terminal.derivative(x)).collect(),
            m0: masses.iter().map(|w| w / dx).collect(),
        })
    }
}

/// Discrete solution `(u, m, varpi)` at one viscosity level.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MFGSolution {
    pub grid: GridSpec,
    /// `u[i][j]`, time node `i`, space node `j`.
    pub u: Vec<Vec<f64>>,
    /// Density, `sum_j m[i][j] dx = 1`.
    pub m: Vec<Vec<f64>>,
    pub varpi: Vec<f64>,
    pub epsilon: f64,
    pub balance_residual: Vec<f64>,
    pub iterations: usize,
    /// Price increments `max |varpi_new - varpi|` per iteration.
    pub history: Vec<f64>,
    /// Agent velocity `-H_p` used to transport `m[i]` over `[t_i, t_{i+1}]`.
    pub velocity: Vec<Vec<f64>>,
}

impl MFGSolution {
    /// Largest end-cell mass over time; should stay negligible when `R` is
    /// large enough for the truncation to be harmless.
    pub fn boundary_mass(&self) -> f64 {
        let dx = self.grid.dx();
        self.m
            .iter()
            .map(|row| (row[0] + row[row.len() - 1]) * dx)
            .fold(0.0, f64::max)
    }

    /// `max_i |sum_j m[i][j] dx - 1|`
    pub fn mass_defect(&self) -> f64 {
        let dx = self.grid.dx();
        self.m
            .iter()
            .map(|row| (crate::linalg::pairwise_sum(row) * dx - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// `max_i |varpi_{i+1} - varpi_i| / dt`
    pub fn price_lipschitz(&self) -> f64 {
        let dt = self.grid.dt();
        self.varpi.windows(2).map(|w| (w[1] - w[0]).abs() / dt).fold(0.0, f64::max)
    }

    /// `sup_t int |x|^gamma m(t, x) dx`
    pub fn max_moment(&self, gamma: f64) -> f64 {
        let dx = self.grid.dx();
        let xs = self.grid.xs();
        self.m
            .iter()
            .map(|row| {
                let terms: Vec<f64> = row.iter().zip(&xs).map(|(m, x)| m * x.abs().powf(gamma) * dx).collect();
                crate::linalg::pairwise_sum(&terms)
            })
            .fold(0.0, f64::max)
    }
}
