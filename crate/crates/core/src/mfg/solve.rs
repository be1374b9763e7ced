use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hamiltonian::HamiltonianSpec;
use crate::linalg::norm_inf;

use super::upwind::{end_slopes, Upwind};
use super::{
    balance_residual, initial_price_root, price_update, slice_price_root, solve_fp_forward, solve_hjb_backward,
    GridSpec, MFGSolution, SampledData,
};

/// How a new price path is produced from `(u, m)`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriceRule {
    /// Integrate the price ODE from the balance root at `t = 0`. Its balance
    /// residual is first order in the grid, so `balance_tol` must be loosened
    /// unless the instance is exact (quadratic `H`, `V = 0`).
    Ode,
    /// Clear the market slice by slice.
    #[default]
    Balance,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    /// Initial damping `theta`; halved whenever the price increment grows.
    pub damping: f64,
    /// Stop when `max |varpi_new - varpi| <= tol`.
    pub tol: f64,
    /// Accept the fixed point only if `max |balance residual| <= balance_tol`.
    pub balance_tol: f64,
    pub max_iter: usize,
    pub rule: PriceRule,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            damping: 0.5,
            tol: 1e-9,
            balance_tol: 1e-8,
            max_iter: 200,
            rule: PriceRule::Balance,
        }
    }
}

impl SolverOptions {
    fn validate(&self) -> Result<()> {
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::Config(format!("damping must lie in (0, 1], got {}", self.damping)));
        }
        if !(self.tol > 0.0) || !(self.balance_tol > 0.0) || self.max_iter == 0 {
            return Err(Error::Config("tolerances and max_iter must be positive".into()));
        }
        Ok(())
    }
}

/// Price path clearing the market for the terminal gradient and `m0` at
/// every node; the cold start of the iteration.
fn cold_start(spec: &HamiltonianSpec, grid: &GridSpec, data: &SampledData) -> Result<Vec<f64>> {
    let xs = grid.xs();
    data.supply
        .iter()
        .map(|&q| initial_price_root(spec, &xs, &data.terminal_slope, &data.m0, grid.dx(), q))
        .collect()
}

fn new_prices(
    spec: &HamiltonianSpec,
    grid: &GridSpec,
    data: &SampledData,
    u: &[Vec<f64>],
    m: &[Vec<f64>],
    varpi: &[f64],
    epsilon: f64,
    rule: PriceRule,
) -> Result<Vec<f64>> {
    match rule {
        PriceRule::Ode => price_update(spec, grid, u, m, &data.supply, epsilon, varpi[0]),
        PriceRule::Balance => {
            let slopes = end_slopes(&u[grid.nt], grid.dx());
            (0..=grid.nt)
                .map(|i| {
                    let row = &u[(i + 1).min(grid.nt)];
                    slice_price_root(spec, grid, row, slopes, &m[i], data.supply[i], varpi[i])
                })
                .collect()
        }
    }
}

/// Damped fixed point HJB -> FP -> price on a fixed viscosity level.
/// `warm` replaces the cold-start price path.
pub fn fixed_point_solve(
    spec: &HamiltonianSpec,
    data: &SampledData,
    grid: &GridSpec,
    epsilon: f64,
    options: &SolverOptions,
    warm: Option<&[f64]>,
) -> Result<MFGSolution> {
    options.validate()?;
    grid.validate()?;
    if !(epsilon >= 0.0 && epsilon.is_finite()) {
        return Err(Error::Config(format!("viscosity must be finite and >= 0, got {epsilon}")));
    }
    let mut varpi = match warm {
        Some(w) if w.len() == grid.nt + 1 => w.to_vec(),
        Some(w) => return Err(Error::Input(format!("warm start has {} prices, need {}", w.len(), grid.nt + 1))),
        None => cold_start(spec, grid, data)?,
    };
    let mut theta = options.damping;
    let mut history = Vec::new();
    for iteration in 1..=options.max_iter {
        let u = solve_hjb_backward(spec, &varpi, epsilon, grid, &data.terminal)?;
        let m = solve_fp_forward(spec, &u, &varpi, epsilon, grid, &data.m0)?;
        let proposal = new_prices(spec, grid, data, &u, &m, &varpi, epsilon, options.rule)?;
        let diff: Vec<f64> = proposal.iter().zip(&varpi).map(|(a, b)| a - b).collect();
        let increment = norm_inf(&diff);
        if !increment.is_finite() {
            return Err(Error::numerical("fixed point", format!("non-finite price increment at iteration {iteration}")));
        }
        if increment <= options.tol {
            history.push(increment);
            let residual = balance_residual(spec, grid, &u, &m, &varpi, &data.supply);
            let worst = norm_inf(&residual);
            if worst > options.balance_tol {
                return Err(Error::NonConvergence {
                    iterations: iteration,
                    last_residual: worst,
                    history,
                });
            }
            let slopes = end_slopes(&u[grid.nt], grid.dx());
            let velocity = (0..grid.nt)
                .map(|i| Upwind::new(spec, grid, &u[i + 1], varpi[i], slopes).velocity())
                .collect();
            return Ok(MFGSolution {
                grid: *grid,
                u,
                m,
                varpi,
                epsilon,
                balance_residual: residual,
                iterations: iteration,
                history,
                velocity,
            });
        }
        if history.last().is_some_and(|&prev| increment > prev) {
            theta = (0.5 * theta).max(1e-3);
        }
        history.push(increment);
        for (w, d) in varpi.iter_mut().zip(&diff) {
            *w += theta * d;
        }
    }
    Err(Error::NonConvergence {
        iterations: options.max_iter,
        last_residual: history.last().copied().unwrap_or(f64::NAN),
        history,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct SweepResult {
    pub solutions: Vec<MFGSolution>,
    /// Linear extrapolation to `eps = 0` from the last two levels.
    pub extrapolated_varpi: Vec<f64>,
    pub extrapolated_u0: Vec<f64>,
    /// `max |varpi^{eps_k+1} - varpi^{eps_k}|` between consecutive levels.
    pub consecutive_gaps: Vec<f64>,
}

fn richardson(coarse: &[f64], fine: &[f64], eps_coarse: f64, eps_fine: f64) -> Vec<f64> {
    let w = eps_fine / (eps_coarse - eps_fine);
    coarse.iter().zip(fine).map(|(c, f)| f - w * (c - f)).collect()
}

/// Solves along a strictly decreasing viscosity schedule, warm-starting each
/// level from the previous price path.
pub fn vanishing_viscosity_sweep(
    spec: &HamiltonianSpec,
    data: &SampledData,
    grid: &GridSpec,
    schedule: &[f64],
    options: &SolverOptions,
) -> Result<SweepResult> {
    if schedule.is_empty() || schedule.iter().any(|e| !(*e > 0.0)) || schedule.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(Error::Config("viscosity schedule must be positive and strictly decreasing".into()));
    }
    let mut solutions: Vec<MFGSolution> = Vec::with_capacity(schedule.len());
    for &eps in schedule {
        let warm = solutions.last().map(|s| s.varpi.as_slice());
        let sol = fixed_point_solve(spec, data, grid, eps, options, warm)
            .map_err(|e| e.with_context(format!("epsilon = {eps}")))?;
        solutions.push(sol);
    }
    let consecutive_gaps = solutions
        .windows(2)
        .map(|w| {
            let d: Vec<f64> = w[1].varpi.iter().zip(&w[0].varpi).map(|(a, b)| a - b).collect();
            norm_inf(&d)
        })
        .collect();
    let last = solutions.last().unwrap();
    let (extrapolated_varpi, extrapolated_u0) = match solutions.len() {
        1 => (last.varpi.clone(), last.u[0].clone()),
        k => {
            let prev = &solutions[k - 2];
            (
                richardson(&prev.varpi, &last.varpi, prev.epsilon, last.epsilon),
                richardson(&prev.u[0], &last.u[0], prev.epsilon, last.epsilon),
            )
        }
    };
    Ok(SweepResult {
        solutions,
        extrapolated_varpi,
        extrapolated_u0,
        consecutive_gaps,
    })
}
