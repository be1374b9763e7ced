//! Both sides of the duality between the price-formation MFG and the measure
//! LP, and the refinement report comparing them.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hamiltonian::HamiltonianSpec;
use crate::linalg::pairwise_sum;
use crate::lp::{
    assemble_constraints, induced_measure, oracle_with_duals, reference_measure, solve_primal, ConstraintSystem,
    DiscreteMeasure, MeasureGrid, NuMode, OracleOutcome, PdhgOptions, Residuals,
};
use crate::mfg::{vanishing_viscosity_sweep, GridSpec, MFGSolution, SampledData, SolverOptions};
use crate::problem::ProblemData;

/// `int (u(0) - u_T) dm0 - sum_i Q(t_i) varpi_i dt` from an initial value row
/// and a price path on the nodes of `grid`. `m0` is integrated with its hat
/// masses; the price sum runs over the `Nt` steps, each of which uses the
/// price at its left node.
pub fn dual_value_from(grid: &GridSpec, u0: &[f64], varpi: &[f64], data: &ProblemData) -> Result<f64> {
    if u0.len() != grid.nx + 1 || varpi.len() != grid.nt + 1 {
        return Err(Error::Input("value row or price path does not match the grid".into()));
    }
    let masses = data.node_masses(-grid.half_width, grid.dx(), grid.nx)?;
    let xs = grid.xs();
    let spatial: Vec<f64> = (0..xs.len())
        .map(|j| (u0[j] - data.terminal.value(xs[j])) * masses[j])
        .collect();
    let dt = grid.dt();
    let supply: Vec<f64> = (0..grid.nt).map(|i| data.supply.value(grid.t(i)) * varpi[i] * dt).collect();
    Ok(pairwise_sum(&spatial) - pairwise_sum(&supply))
}

pub fn dual_value(sol: &MFGSolution, data: &ProblemData) -> Result<f64> {
    dual_value_from(&sol.grid, &sol.u[0], &sol.varpi, data)
}

/// Cost of a measure under the LP cost vector of `cs`:
/// `sum (L + v u_T') mu` with the integrand taken at the step midpoint.
pub fn measure_cost(cs: &ConstraintSystem, mu: &DiscreteMeasure) -> Result<f64> {
    mu.cost(cs)
}

/// `int |F - G| dx` for two node-mass vectors on one grid.
pub fn wasserstein1(a: &[f64], b: &[f64], dx: f64) -> f64 {
    let mut cum = 0.0;
    let mut total = 0.0;
    for (x, y) in a.iter().zip(b) {
        cum += x - y;
        total += cum.abs();
    }
    total * dx
}

/// One rung of the refinement ladder. The MFG grid defaults to the LP's
/// `(Nt, Nx)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LadderLevel {
    pub nt: usize,
    pub nx: usize,
    pub nv: usize,
    #[serde(default)]
    pub mfg_nt: Option<usize>,
    #[serde(default)]
    pub mfg_nx: Option<usize>,
}

impl LadderLevel {
    pub fn square(n: usize, nv: usize) -> Self {
        LadderLevel {
            nt: n,
            nx: n,
            nv,
            mfg_nt: None,
            mfg_nx: None,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LpBackend {
    #[default]
    PrimalDual,
    /// Dense simplex; toy sizes only.
    Oracle,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GapOptions {
    pub half_width: f64,
    pub vmax: f64,
    pub schedule: Vec<f64>,
    pub solver: SolverOptions,
    pub lp: PdhgOptions,
    pub backend: LpBackend,
    /// Gaps below this count as converged when checking decay.
    pub gap_floor: f64,
    /// Slack allowed in the feasible-measure comparisons.
    pub sandwich_tol: f64,
}

impl Default for GapOptions {
    fn default() -> Self {
        GapOptions {
            half_width: 4.0,
            vmax: 2.0,
            schedule: vec![0.1, 0.05, 0.025, 0.0125],
            solver: SolverOptions::default(),
            lp: PdhgOptions::default(),
            backend: LpBackend::PrimalDual,
            gap_floor: 1e-6,
            sandwich_tol: 1e-6,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LevelReport {
    pub level: usize,
    pub nt: usize,
    pub nx: usize,
    pub nv: usize,
    pub h: f64,
    pub dt: f64,
    pub dx: f64,
    pub dv: f64,
    pub primal: f64,
    pub dual: f64,
    pub gap: f64,
    pub relative_gap: f64,
    pub residuals: Residuals,
    pub cost_reference: f64,
    pub cost_induced: f64,
    /// `|y* . (A mu_ind - b)|`: how far below the LP optimum the cost of the
    /// (approximately feasible) induced measure may legitimately fall.
    pub induced_slack: f64,
    pub induced_residual: f64,
    /// `W1(nu*, m^eps(T))`, diagnostic only.
    pub terminal_w1: f64,
    pub lp_iterations: usize,
    pub mfg_iterations: usize,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DualityReport {
    /// Values at the finest level.
    pub primal_value: f64,
    pub dual_value: f64,
    pub gap: f64,
    pub relative_gap: f64,
    pub residuals: Residuals,
    pub half_width: f64,
    pub vmax: f64,
    pub schedule: Vec<f64>,
    pub history: Vec<LevelReport>,
    pub checks: Vec<Check>,
}

impl DualityReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    /// Columns `level,h,dt,dx,dv,primal,dual,gap`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("level,h,dt,dx,dv,primal,dual,gap\n");
        for l in &self.history {
            s.push_str(&format!(
                "{},{:e},{:e},{:e},{:e},{:.15e},{:.15e},{:.15e}\n",
                l.level, l.h, l.dt, l.dx, l.dv, l.primal, l.dual, l.gap
            ));
        }
        s
    }
}

fn run_level(
    spec: &HamiltonianSpec,
    data: &ProblemData,
    level: usize,
    rung: &LadderLevel,
    options: &GapOptions,
) -> Result<LevelReport> {
    let start = Instant::now();
    let mfg_grid = GridSpec::new(
        data.horizon,
        options.half_width,
        rung.mfg_nt.unwrap_or(rung.nt),
        rung.mfg_nx.unwrap_or(rung.nx),
    )?;
    let sampled = SampledData::from_problem(data, &mfg_grid)?;
    let sweep = vanishing_viscosity_sweep(spec, &sampled, &mfg_grid, &options.schedule, &options.solver)?;
    let dual = dual_value_from(&mfg_grid, &sweep.extrapolated_u0, &sweep.extrapolated_varpi, data)?;
    let finest = sweep.solutions.last().expect("nonempty schedule");

    let mgrid = MeasureGrid::new(spec, data.horizon, rung.nt, options.half_width, rung.nx, options.vmax, rung.nv)?;
    let cs = assemble_constraints(&mgrid, spec, data, NuMode::Free)?;
    let (primal, x, y, lp_iterations) = match options.backend {
        LpBackend::PrimalDual => {
            let sol = solve_primal(&cs, &options.lp)?;
            (sol.value, sol.x, sol.y, sol.iterations)
        }
        LpBackend::Oracle => match oracle_with_duals(&cs)? {
            (OracleOutcome::Optimal { value, x }, Some(y)) => (value, x, y, 0),
            (OracleOutcome::Infeasible, _) => {
                return Err(Error::Infeasible(crate::error::InfeasibilityWitness {
                    identity: "oracle_phase_one".into(),
                    defect: f64::NAN,
                    details: Vec::new(),
                }))
            }
            _ => return Err(Error::numerical("gap_report", "oracle reports an unbounded LP")),
        },
    };
    let mu_star = DiscreteMeasure::from_lp(&cs, &x);
    let residuals = mu_star.residuals(&cs)?;

    let reference = reference_measure(&mgrid, data)?;
    let cost_reference = measure_cost(&cs, &reference)?;
    let (cost_induced, induced_slack, induced_residual, terminal_w1) = if mgrid.nt == mfg_grid.nt && mgrid.nx == mfg_grid.nx {
        let induced = induced_measure(finest, &mgrid)?;
        let w = induced.to_lp(&cs)?;
        let r = cs.residual(&w);
        let slack = r.iter().zip(&y).map(|(a, b)| a * b).sum::<f64>().abs();
        let residual = r.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let m_t: Vec<f64> = finest.m[mfg_grid.nt].iter().map(|v| v * mfg_grid.dx()).collect();
        (
            measure_cost(&cs, &induced)?,
            slack,
            residual,
            wasserstein1(&mu_star.nu, &m_t, mgrid.dx()),
        )
    } else {
        (f64::NAN, f64::NAN, f64::NAN, f64::NAN)
    };
    let gap = primal - dual;
    Ok(LevelReport {
        level,
        nt: rung.nt,
        nx: rung.nx,
        nv: rung.nv,
        h: mgrid.dt().max(mgrid.dx()).max(mgrid.dv()),
        dt: mgrid.dt(),
        dx: mgrid.dx(),
        dv: mgrid.dv(),
        primal,
        dual,
        gap,
        relative_gap: gap.abs() / dual.abs().max(1.0),
        residuals,
        cost_reference,
        cost_induced,
        induced_slack,
        induced_residual,
        terminal_w1,
        lp_iterations,
        mfg_iterations: sweep.solutions.iter().map(|s| s.iterations).sum(),
        seconds: start.elapsed().as_secs_f64(),
    })
}

/// Runs the MFG sweep and the free-terminal LP at every ladder level and
/// compares the two values. Levels run in parallel; failures carry the level.
pub fn gap_report(
    spec: &HamiltonianSpec,
    data: &ProblemData,
    ladder: &[LadderLevel],
    options: &GapOptions,
) -> Result<DualityReport> {
    if ladder.is_empty() {
        return Err(Error::Input("empty refinement ladder".into()));
    }
    if options.schedule.is_empty() {
        return Err(Error::Input("empty viscosity schedule".into()));
    }
    let history: Vec<LevelReport> = ladder
        .par_iter()
        .enumerate()
        .map(|(level, rung)| run_level(spec, data, level, rung, options).map_err(|e| e.with_context(format!("level {level}"))))
        .collect::<Result<_>>()?;

    let mut checks = Vec::new();
    let gaps: Vec<f64> = history.iter().map(|l| l.gap.abs()).collect();
    let decays = gaps.windows(2).all(|w| w[1] < w[0] || w[1] <= options.gap_floor);
    checks.push(Check {
        name: "gap_decay".into(),
        passed: decays,
        detail: format!("|gap| per level {gaps:?}"),
    });
    for l in &history {
        let tol = options.sandwich_tol * (1.0 + l.primal.abs());
        checks.push(Check {
            name: format!("primal_below_reference[{}]", l.level),
            passed: l.primal <= l.cost_reference + tol,
            detail: format!("{} <= {}", l.primal, l.cost_reference),
        });
        if l.cost_induced.is_finite() {
            checks.push(Check {
                name: format!("primal_below_induced[{}]", l.level),
                passed: l.primal <= l.cost_induced + tol + l.induced_slack,
                detail: format!("{} <= {} + slack {:e}", l.primal, l.cost_induced, l.induced_slack),
            });
            checks.push(Check {
                name: format!("dual_below_induced[{}]", l.level),
                passed: l.dual <= l.cost_induced + tol + l.induced_slack,
                detail: format!("{} <= {} + slack {:e}", l.dual, l.cost_induced, l.induced_slack),
            });
        }
    }
    let last = history.last().expect("nonempty");
    Ok(DualityReport {
        primal_value: last.primal,
        dual_value: last.dual,
        gap: last.gap,
        relative_gap: last.relative_gap,
        residuals: last.residuals.clone(),
        half_width: options.half_width,
        vmax: options.vmax,
        schedule: options.schedule.clone(),
        history,
        checks,
    })
}
