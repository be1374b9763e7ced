use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{Error, InfeasibilityWitness, Result};
use crate::hamiltonian::HamiltonianSpec;
use crate::linalg::pairwise_sum;
use crate::mfg::MFGSolution;
use crate::problem::ProblemData;

use super::assemble::{assemble_constraints, supply_averages, Column, ConstraintSystem, NuMode, RowKind};
use super::pdhg::{solve_primal, PdhgOptions, PrimalSolution};
use super::MeasureGrid;

/// Weights `mu[i,j,k]` (cell mass, slice total `dt`) and terminal node masses.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DiscreteMeasure {
    pub grid: MeasureGrid,
    pub weights: Vec<f64>,
    pub nu: Vec<f64>,
}

/// Sup-norm constraint violation per row family.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct Residuals {
    pub holonomy: f64,
    pub balance: f64,
    pub slice_mass: f64,
    pub terminal_mass: f64,
}

impl Residuals {
    pub fn max(&self) -> f64 {
        self.holonomy.max(self.balance).max(self.slice_mass).max(self.terminal_mass)
    }
}

impl DiscreteMeasure {
    pub fn zeros(grid: &MeasureGrid) -> Self {
        DiscreteMeasure {
            grid: grid.clone(),
            weights: vec![0.0; grid.n_cells()],
            nu: vec![0.0; grid.n_x()],
        }
    }

    /// Measure represented by an LP vector of `cs`.
    pub fn from_lp(cs: &ConstraintSystem, w: &[f64]) -> Self {
        let mut mu = DiscreteMeasure::zeros(&cs.grid);
        let dt = cs.grid.dt();
        for (col, &value) in cs.columns.iter().zip(w) {
            match *col {
                Column::Flow { i, j, k } => mu.weights[cs.grid.cell(i, j, k)] = value * dt,
                Column::Terminal { l } => mu.nu[l] = value,
            }
        }
        if let NuMode::Fixed(nu) = &cs.nu_mode {
            mu.nu = nu.clone();
        }
        mu
    }

    /// LP vector of `cs` for this measure. Fails if mass sits on a step that
    /// leaves the domain (such steps have no column).
    pub fn to_lp(&self, cs: &ConstraintSystem) -> Result<Vec<f64>> {
        if self.grid != cs.grid {
            return Err(Error::Grid("measure and constraint system use different grids".into()));
        }
        let dt = self.grid.dt();
        let mut w = Vec::with_capacity(cs.n_cols());
        let mut represented = 0.0;
        for col in &cs.columns {
            match *col {
                Column::Flow { i, j, k } => {
                    let value = self.weights[self.grid.cell(i, j, k)];
                    represented += value;
                    w.push(value / dt);
                }
                Column::Terminal { l } => w.push(self.nu[l]),
            }
        }
        let total = pairwise_sum(&self.weights);
        if (total - represented).abs() > 1e-12 * (1.0 + total) {
            return Err(Error::Domain(format!(
                "measure puts mass {:.3e} on steps leaving [-R, R]",
                total - represented
            )));
        }
        Ok(w)
    }

    pub fn slice_masses(&self) -> Vec<f64> {
        let per = self.grid.n_x() * self.grid.n_v();
        self.weights.chunks(per).map(pairwise_sum).collect()
    }

    pub fn nu_mean(&self) -> f64 {
        (0..self.grid.n_x()).map(|l| self.grid.x(l) * self.nu[l]).sum()
    }

    /// `sum |x|^zeta1 + |v|^zeta2` against `mu`, the moment controlled on
    /// feasible measures.
    pub fn moment(&self) -> f64 {
        let g = &self.grid;
        let mut terms = Vec::with_capacity(self.weights.len());
        for i in 0..g.nt {
            for j in 0..g.n_x() {
                for k in 0..g.n_v() {
                    let w = self.weights[g.cell(i, j, k)];
                    if w != 0.0 {
                        terms.push(w * (g.x(j).abs().powf(g.zeta1) + g.v(k).abs().powf(g.zeta2)));
                    }
                }
            }
        }
        pairwise_sum(&terms)
    }

    pub fn cost(&self, cs: &ConstraintSystem) -> Result<f64> {
        Ok(cs.objective(&self.to_lp(cs)?))
    }

    pub fn residuals(&self, cs: &ConstraintSystem) -> Result<Residuals> {
        let r = cs.residual(&self.to_lp(cs)?);
        let mut out = Residuals::default();
        for (kind, v) in cs.rows.iter().zip(&r) {
            let slot = match kind {
                RowKind::Holonomy { .. } => &mut out.holonomy,
                RowKind::Balance { .. } => &mut out.balance,
                RowKind::SliceMass { .. } => &mut out.slice_mass,
                RowKind::TerminalMass => &mut out.terminal_mass,
            };
            *slot = slot.max(v.abs());
        }
        Ok(out)
    }

    /// CSV with columns `t,x,v,weight`; `t` is the cell centre, `x` the
    /// departure node. Zero weights are skipped.
    pub fn to_csv(&self) -> String {
        let g = &self.grid;
        let mut s = String::from("t,x,v,weight\n");
        for i in 0..g.nt {
            let t = g.t(i) + 0.5 * g.dt();
            for j in 0..g.n_x() {
                for k in 0..g.n_v() {
                    let w = self.weights[g.cell(i, j, k)];
                    if w != 0.0 {
                        let _ = writeln!(s, "{t},{},{},{w:e}", g.x(j), g.v(k));
                    }
                }
            }
        }
        s
    }

    pub fn nu_csv(&self) -> String {
        let mut s = String::from("x,weight\n");
        for (l, w) in self.nu.iter().enumerate() {
            let _ = writeln!(s, "{},{w:e}", self.grid.x(l));
        }
        s
    }
}

/// Transports `m0` at the supply speed: on cell `i` the mass moves with
/// velocity `qbar[i]`, split between neighbouring velocity nodes. Landing
/// masses are exactly the next slice, so every constraint holds.
///
/// Linear landing spreads the support by up to one node per step. Nodes whose
/// velocity would leave the domain use the fastest velocity that stays
/// inside, and the split of the remaining nodes absorbs the momentum change
/// so the balance row stays exact.
pub fn reference_measure_from(grid: &MeasureGrid, m0: &[f64], qbar: &[f64]) -> Result<DiscreteMeasure> {
    let mut mu = DiscreteMeasure::zeros(grid);
    let (dt, dv) = (grid.dt(), grid.dv());
    let mut rho = m0.to_vec();
    for (i, &q) in qbar.iter().enumerate() {
        let (k, frac) = grid.split_velocity(q).ok_or_else(|| {
            Error::Grid(format!("supply average {q} at cell {i} exceeds vmax = {}", grid.vmax))
        })?;
        let k_hi = (k + 1).min(grid.nv);
        let inside = |j: usize| grid.landing(j, k).is_some() && grid.landing(j, k_hi).is_some();
        // Edge nodes: single in-domain velocity node closest to q.
        let mut edge: Vec<(usize, usize)> = Vec::new();
        let mut excess = 0.0;
        let mut free_mass = 0.0;
        for (j, &mass) in rho.iter().enumerate() {
            if mass == 0.0 {
                continue;
            }
            if inside(j) {
                free_mass += mass;
                continue;
            }
            let kk = (0..grid.n_v())
                .filter(|&kk| grid.landing(j, kk).is_some())
                .min_by(|&a, &b| (grid.v(a) - q).abs().total_cmp(&(grid.v(b) - q).abs()))
                .ok_or_else(|| Error::Domain(format!("no velocity keeps x = {} inside", grid.x(j))))?;
            excess += mass * (grid.v(kk) - q);
            edge.push((j, kk));
        }
        let theta = if excess == 0.0 {
            frac
        } else {
            if !(free_mass > 0.0) || k_hi == k {
                return Err(Error::Domain(format!("reference transport cannot balance cell {i}; increase R")));
            }
            frac - excess / (free_mass * dv)
        };
        if !(-1e-12..=1.0 + 1e-12).contains(&theta) {
            return Err(Error::Domain(format!(
                "mass near the boundary at cell {i} too large to rebalance; increase R"
            )));
        }
        let theta = theta.clamp(0.0, 1.0);
        let mut next = vec![0.0; grid.n_x()];
        let mut deposit = |j: usize, kk: usize, w: f64, next: &mut Vec<f64>| {
            if w == 0.0 {
                return;
            }
            let (left, f) = grid.landing(j, kk).expect("landing checked");
            mu.weights[grid.cell(i, j, kk)] += w * dt;
            next[left] += w * (1.0 - f);
            if f > 0.0 {
                next[left + 1] += w * f;
            }
        };
        for (j, &mass) in rho.iter().enumerate() {
            if mass != 0.0 && inside(j) {
                deposit(j, k, mass * (1.0 - theta), &mut next);
                deposit(j, k_hi, mass * theta, &mut next);
            }
        }
        for &(j, kk) in &edge {
            deposit(j, kk, rho[j], &mut next);
        }
        rho = next;
    }
    mu.nu = rho;
    Ok(mu)
}

/// [`reference_measure_from`] with the node masses and supply averages of
/// `data`.
pub fn reference_measure(grid: &MeasureGrid, data: &ProblemData) -> Result<DiscreteMeasure> {
    let m0 = data.node_masses(-grid.half_width, grid.dx(), grid.nx)?;
    reference_measure_from(grid, &m0, &supply_averages(grid, data))
}

/// Measure generated by an MFG solution: on cell `i` the mass `m[i,j] dx`
/// moves with the scheme velocity `-H_p`. Where one of the two velocity nodes
/// would leave the domain, the share goes to the other one.
pub fn induced_measure(sol: &MFGSolution, grid: &MeasureGrid) -> Result<DiscreteMeasure> {
    let g = &sol.grid;
    let same = g.nt == grid.nt
        && g.nx == grid.nx
        && (g.half_width - grid.half_width).abs() <= 1e-12 * grid.half_width
        && (g.horizon - grid.horizon).abs() <= 1e-12 * grid.horizon;
    if !same {
        return Err(Error::Grid("MFG grid and measure grid differ".into()));
    }
    let mut mu = DiscreteMeasure::zeros(grid);
    let (dt, dx) = (grid.dt(), grid.dx());
    for i in 0..grid.nt {
        for j in 0..grid.n_x() {
            let mass = sol.m[i][j] * dx;
            if mass == 0.0 {
                continue;
            }
            let v = sol.velocity[i][j];
            let (k, frac) = grid.split_velocity(v).ok_or_else(|| {
                Error::Grid(format!("velocity {v} at (t={}, x={}) exceeds vmax = {}", g.t(i), g.x(j), grid.vmax))
            })?;
            let lo_in = frac < 1.0 && grid.landing(j, k).is_some();
            let hi_in = frac > 0.0 && grid.landing(j, k + 1).is_some();
            let (wl, wh) = match (lo_in, hi_in) {
                (true, true) => (1.0 - frac, frac),
                (true, false) => (1.0, 0.0),
                (false, true) => (0.0, 1.0),
                (false, false) => {
                    return Err(Error::Domain(format!("induced step leaves the domain at x = {}", g.x(j))));
                }
            };
            mu.weights[grid.cell(i, j, k)] += mass * wl * dt;
            if wh > 0.0 {
                mu.weights[grid.cell(i, j, k + 1)] += mass * wh * dt;
            }
        }
    }
    mu.nu = sol.m[grid.nt].iter().map(|m| m * dx).collect();
    Ok(mu)
}

/// Value of the prescribed-terminal problem, `+inf` when no measure joins
/// `m0` to `nu`.
#[derive(Clone, Debug, Serialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum HValue {
    Finite { value: f64, solution: Box<PrimalSolution> },
    Infinite { witness: InfeasibilityWitness },
}

impl HValue {
    pub fn value(&self) -> f64 {
        match self {
            HValue::Finite { value, .. } => *value,
            HValue::Infinite { .. } => f64::INFINITY,
        }
    }
}

pub fn h_value(
    grid: &MeasureGrid,
    spec: &HamiltonianSpec,
    data: &ProblemData,
    nu: &[f64],
    options: &PdhgOptions,
) -> Result<HValue> {
    let cs = match assemble_constraints(grid, spec, data, NuMode::Fixed(nu.to_vec())) {
        Err(Error::Infeasible(witness)) => return Ok(HValue::Infinite { witness }),
        other => other?,
    };
    match solve_primal(&cs, options) {
        Ok(sol) => Ok(HValue::Finite {
            value: sol.value,
            solution: Box::new(sol),
        }),
        Err(Error::Infeasible(witness)) => Ok(HValue::Infinite { witness }),
        Err(e) => Err(e),
    }
}

/// `mean(nu) - mean(m0) - sum_i qbar_i dt` for fixed-terminal systems.
pub(crate) fn displacement_defect(cs: &ConstraintSystem, nu: &[f64]) -> f64 {
    let g = &cs.grid;
    let mean = |m: &[f64]| -> f64 { (0..g.n_x()).map(|l| g.x(l) * m[l]).sum() };
    let drift: f64 = cs.qbar.iter().map(|q| q * g.dt()).sum();
    mean(nu) - mean(&cs.m0) - drift
}

/// Row multipliers `y` with `A^T y = 0` and `b.y = displacement defect`:
/// `x_l` on holonomy rows, `-dt` on balance rows, `-dt qbar_i` on slice rows.
pub(crate) fn displacement_ray(cs: &ConstraintSystem) -> Vec<f64> {
    let g = &cs.grid;
    cs.rows
        .iter()
        .map(|row| match *row {
            RowKind::Holonomy { l, .. } => g.x(l),
            RowKind::Balance { .. } => -g.dt(),
            RowKind::SliceMass { i } => -g.dt() * cs.qbar[i],
            RowKind::TerminalMass => 0.0,
        })
        .collect()
}
