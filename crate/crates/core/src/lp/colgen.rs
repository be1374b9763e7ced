//! Column generation over deterministic policies. Without the balance rows
//! (and the prescribed terminal law) the LP is a finite-horizon control
//! problem solved by a backward sweep, so pricing is cheap; the master LP has
//! only `Nt` (+ `Nx + 1`) rows. Used to start the primal-dual solver.

use super::assemble::{Column, ConstraintSystem, NuMode, RowKind};

const BIG_M: f64 = 100.0;
/// Weight of the best dual point in the smoothed pricing point.
const SMOOTHING: f64 = 0.8;

/// Scale of the right-hand-side perturbation used against degeneracy.
const PERTURBATION: f64 = 1e-9;

struct Arc {
    col: usize,
    left: usize,
    frac: f64,
    coef: f64,
}

struct Policy {
    cost: f64,
    balance: Vec<f64>,
    terminal: Vec<f64>,
    flow: Vec<(usize, f64)>,
}

/// Optimal primal/dual pair in the unscaled LP space.
#[derive(Clone, Debug)]
pub(crate) struct Crash {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub rounds: usize,
}

struct Pricing<'a> {
    cs: &'a ConstraintSystem,
    /// Outgoing arcs per `[i][j]`.
    arcs: Vec<Vec<Vec<Arc>>>,
}

impl<'a> Pricing<'a> {
    fn new(cs: &'a ConstraintSystem) -> Self {
        let g = &cs.grid;
        let mut arcs: Vec<Vec<Vec<Arc>>> = (0..g.nt).map(|_| (0..g.n_x()).map(|_| Vec::new()).collect()).collect();
        for (col, column) in cs.columns.iter().enumerate() {
            if let Column::Flow { i, j, k } = *column {
                let (left, frac) = g.landing(j, k).expect("assembled columns land inside");
                arcs[i][j].push(Arc {
                    col,
                    left,
                    frac,
                    coef: g.v(k) - cs.qbar[i],
                });
            }
        }
        Pricing { cs, arcs }
    }

    /// Backward sweep with arc costs `c - lambda_i (v - Qbar_i)` and terminal
    /// values `terminal`; returns the value table and the chosen arcs.
    fn sweep(&self, lambda: &[f64], terminal: &[f64]) -> (Vec<Vec<f64>>, Vec<Vec<usize>>) {
        let nt = self.arcs.len();
        let nxn = terminal.len();
        let mut values = vec![terminal.to_vec()];
        let mut choices = Vec::with_capacity(nt);
        for i in (0..nt).rev() {
            let next = values.last().expect("nonempty");
            let mut cur = vec![f64::INFINITY; nxn];
            let mut choice = vec![usize::MAX; nxn];
            for j in 0..nxn {
                for (a, arc) in self.arcs[i][j].iter().enumerate() {
                    let mut v = self.cs.c[arc.col] - lambda[i] * arc.coef;
                    if arc.frac < 1.0 {
                        v += (1.0 - arc.frac) * next[arc.left];
                    }
                    if arc.frac > 0.0 {
                        v += arc.frac * next[arc.left + 1];
                    }
                    if v < cur[j] {
                        cur[j] = v;
                        choice[j] = a;
                    }
                }
            }
            values.push(cur);
            choices.push(choice);
        }
        values.reverse();
        choices.reverse();
        (values, choices)
    }

    fn policy(&self, choices: &[Vec<usize>]) -> Policy {
        let cs = self.cs;
        let nxn = cs.m0.len();
        let mut rho = cs.m0.clone();
        let mut flow = Vec::new();
        let mut cost = 0.0;
        let mut balance = Vec::with_capacity(choices.len());
        for (i, choice) in choices.iter().enumerate() {
            let mut next = vec![0.0; nxn];
            let mut bal = 0.0;
            for j in 0..nxn {
                if rho[j] == 0.0 {
                    continue;
                }
                let arc = &self.arcs[i][j][choice[j]];
                flow.push((arc.col, rho[j]));
                cost += cs.c[arc.col] * rho[j];
                bal += arc.coef * rho[j];
                if arc.frac < 1.0 {
                    next[arc.left] += (1.0 - arc.frac) * rho[j];
                }
                if arc.frac > 0.0 {
                    next[arc.left + 1] += arc.frac * rho[j];
                }
            }
            balance.push(bal);
            rho = next;
        }
        Policy {
            cost,
            balance,
            terminal: rho,
            flow,
        }
    }
}

/// Master LP `min c.theta, A theta = rhs, theta >= 0` kept as a column-major
/// tableau. Columns `0..m` are artificials `+e_r` (the starting basis, so
/// their tableau columns hold `B^-1`), columns `m..2m` are `-e_r`.
#[derive(Clone)]
struct Master {
    cols: Vec<Vec<f64>>,
    /// Columns as added, for refactorization.
    orig: Vec<Vec<f64>>,
    cost: Vec<f64>,
    rhs: Vec<f64>,
    rhs_orig: Vec<f64>,
    /// Right-hand-side perturbation active during primal simplex.
    shift: Option<Vec<f64>>,
    basis: Vec<usize>,
    pivots: usize,
}

impl Master {
    /// Starts from the artificial basis on the perturbed right-hand side.
    fn new(rhs: &[f64]) -> Self {
        let m = rhs.len();
        let shift: Vec<f64> = (0..m)
            .map(|r| PERTURBATION * (1.0 + ((r as f64 + 1.0) * 0.618_033_988_749_895).fract()))
            .collect();
        let mut cols = Vec::with_capacity(2 * m);
        for sign in [1.0, -1.0] {
            for r in 0..m {
                let mut col = vec![0.0; m];
                col[r] = sign;
                cols.push(col);
            }
        }
        Master {
            orig: cols.clone(),
            cols,
            cost: vec![BIG_M; 2 * m],
            rhs: rhs.iter().zip(&shift).map(|(b, d)| b + d).collect(),
            rhs_orig: rhs.to_vec(),
            shift: Some(shift),
            basis: (0..m).collect(),
            pivots: 0,
        }
    }

    /// Recomputes the tableau from the original columns to shed round-off.
    fn refactor(&mut self) -> Option<()> {
        let m = self.n_rows();
        // Gauss-Jordan on [B | I].
        let mut aug: Vec<Vec<f64>> = (0..m)
            .map(|r| {
                let mut row: Vec<f64> = self.basis.iter().map(|&b| self.orig[b][r]).collect();
                row.extend((0..m).map(|c| if c == r { 1.0 } else { 0.0 }));
                row
            })
            .collect();
        for k in 0..m {
            let p = (k..m).max_by(|&a, &b| aug[a][k].abs().total_cmp(&aug[b][k].abs()))?;
            if aug[p][k].abs() < 1e-14 {
                return None;
            }
            aug.swap(k, p);
            let piv = aug[k][k];
            aug[k].iter_mut().for_each(|v| *v /= piv);
            let row_k = aug[k].clone();
            for (r, row) in aug.iter_mut().enumerate() {
                if r != k && row[k] != 0.0 {
                    let f = row[k];
                    row.iter_mut().zip(&row_k).for_each(|(v, w)| *v -= f * w);
                }
            }
        }
        let apply = |a: &[f64]| -> Vec<f64> {
            (0..m).map(|r| (0..m).map(|c| aug[r][m + c] * a[c]).sum()).collect()
        };
        self.cols = self.orig.iter().map(|a| apply(a)).collect();
        let b: Vec<f64> = match &self.shift {
            Some(d) => self.rhs_orig.iter().zip(d).map(|(b, d)| b + d).collect(),
            None => self.rhs_orig.clone(),
        };
        self.rhs = apply(&b);
        self.pivots = 0;
        Some(())
    }

    fn n_rows(&self) -> usize {
        self.rhs.len()
    }

    fn add_column(&mut self, a: &[f64], cost: f64) {
        let m = self.n_rows();
        let mut col = vec![0.0; m];
        for (r, &ar) in a.iter().enumerate() {
            if ar != 0.0 {
                col.iter_mut().zip(&self.cols[r]).for_each(|(c, b)| *c += ar * b);
            }
        }
        self.cols.push(col);
        self.orig.push(a.to_vec());
        self.cost.push(cost);
    }

    fn reduced(&self, j: usize) -> f64 {
        self.cost[j] - self.basis.iter().zip(&self.cols[j]).map(|(&b, t)| self.cost[b] * t).sum::<f64>()
    }

    fn duals(&self) -> Vec<f64> {
        (0..self.n_rows()).map(|r| self.cost[r] - self.reduced(r)).collect()
    }

    /// `c_B B^-1 b` for the unperturbed `b`.
    fn value(&self) -> f64 {
        let pert: f64 = self.basis.iter().zip(&self.rhs).map(|(&b, v)| self.cost[b] * v).sum();
        match &self.shift {
            Some(d) => pert - dot(&self.duals(), d),
            None => pert,
        }
    }

    fn weights(&self) -> Vec<f64> {
        let mut w = vec![0.0; self.cols.len()];
        for (&b, v) in self.basis.iter().zip(&self.rhs) {
            w[b] = v.max(0.0);
        }
        w
    }

    fn pivot(&mut self, r: usize, entering: usize) {
        let p = self.cols[entering][r];
        let e = self.cols[entering].clone();
        for col in self.cols.iter_mut() {
            let f = col[r] / p;
            if f != 0.0 {
                col.iter_mut().zip(&e).for_each(|(c, ei)| *c -= f * ei);
                col[r] = f;
            }
        }
        let f = self.rhs[r] / p;
        self.rhs.iter_mut().zip(&e).for_each(|(c, ei)| *c -= f * ei);
        self.rhs[r] = f;
        self.basis[r] = entering;
        self.pivots += 1;
    }

    /// `rhs += sign * B^-1 d`; the `+e_r` artificial columns hold `B^-1`.
    fn apply_shift(&mut self, d: &[f64], sign: f64) {
        for (r, dr) in d.iter().enumerate() {
            let col = &self.cols[r];
            self.rhs.iter_mut().zip(col).for_each(|(v, c)| *v += sign * dr * c);
        }
    }

    /// Drops the perturbation and restores primal feasibility by dual
    /// simplex. Reduced costs do not depend on the right-hand side, so the
    /// basis stays dual feasible.
    fn unperturb(&mut self) -> Option<()> {
        if let Some(d) = self.shift.take() {
            self.apply_shift(&d, -1.0);
        }
        self.dual()
    }

    /// Primal simplex from the current (feasible) basis: Dantzig pricing,
    /// Bland's rule once degenerate pivots pile up. `Some(false)` when the
    /// pivot cap is hit; the basis is then feasible but not optimal.
    fn optimize(&mut self) -> Option<bool> {
        let tol = 1e-12 * (1.0 + BIG_M);
        let mut degenerate = 0usize;
        let mut bland = false;
        // Columns whose tableau entries are all round-off.
        let mut skip = vec![false; self.cols.len()];
        for _ in 0..100_000 {
            bland |= degenerate > 50;
            let mut entering = None;
            let mut best = -tol;
            for j in 0..self.cols.len() {
                if skip[j] {
                    continue;
                }
                let d = self.reduced(j);
                if d < best {
                    entering = Some(j);
                    if bland {
                        break;
                    }
                    best = d;
                }
            }
            let Some(j) = entering else {
                return Some(true);
            };
            if self.pivots >= 64 {
                self.refactor()?;
                continue;
            }
            let col_max = self.cols[j].iter().fold(0.0_f64, |m, v| m.max(v.abs()));
            let mut leave: Option<(f64, usize)> = None;
            for r in 0..self.n_rows() {
                let a = self.cols[j][r];
                if a > 1e-9 * col_max.max(1.0) {
                    let ratio = self.rhs[r].max(0.0) / a;
                    let better = match leave {
                        None => true,
                        Some((q, lr)) => {
                            ratio < q - 1e-12
                                || (ratio <= q + 1e-12
                                    && if bland {
                                        self.basis[r] < self.basis[lr]
                                    } else {
                                        a > self.cols[j][lr]
                                    })
                        }
                    };
                    if better {
                        leave = Some((ratio, r));
                    }
                }
            }
            let Some((ratio, r)) = leave else {
                skip[j] = true;
                continue;
            };
            degenerate = if ratio <= 1e-13 { degenerate + 1 } else { 0 };
            self.pivot(r, j);
        }
        self.refactor()?;
        Some(false)
    }

    /// Dual simplex until the basic values are non-negative.
    fn dual(&mut self) -> Option<()> {
        for _ in 0..10_000 {
            let Some((r, v)) = self
                .rhs
                .iter()
                .copied()
                .enumerate()
                .min_by(|a, b| a.1.total_cmp(&b.1))
            else {
                return Some(());
            };
            if v >= -1e-13 {
                return Some(());
            }
            let row_max = self.cols.iter().fold(0.0_f64, |m, c| m.max(c[r].abs()));
            let mut entering: Option<(f64, usize)> = None;
            for j in 0..self.cols.len() {
                let a = self.cols[j][r];
                if a < -1e-9 * row_max.max(1.0) {
                    let ratio = self.reduced(j).max(0.0) / -a;
                    if entering.map_or(true, |(q, _)| ratio < q) {
                        entering = Some((ratio, j));
                    }
                }
            }
            let (_, j) = entering?;
            self.pivot(r, j);
            if self.pivots >= 64 {
                self.refactor()?;
            }
        }
        None
    }
}

/// Runs column generation until the master value and the Lagrangian bound
/// agree to `1e-10` relative, until pricing stalls, or until the master hits
/// its pivot cap. Such a start is still handed over when the bound gap is
/// below `1e-6` relative; the primal-dual solver checks KKT before trusting
/// it. Returns `None` when the instance needs the artificial columns
/// (infeasible or unreachable nodes).
pub(crate) fn crash_start(cs: &ConstraintSystem, max_rounds: usize) -> Option<Crash> {
    let g = &cs.grid;
    let (nt, nxn) = (g.nt, g.n_x());
    let fixed = match &cs.nu_mode {
        NuMode::Fixed(nu) => Some(nu.as_slice()),
        NuMode::Free => None,
    };
    let pricing = Pricing::new(cs);
    // Master rows: balance, then terminal law (fixed) or convexity (free).
    let n_link = nt + if fixed.is_some() { nxn } else { 0 };
    let n_rows = n_link + usize::from(fixed.is_none());
    let mut rhs = vec![0.0; n_rows];
    match fixed {
        Some(nu) => rhs[nt..].copy_from_slice(nu),
        None => rhs[n_link] = 1.0,
    }
    let mut master = Master::new(&rhs);
    let n_art = master.cols.len();
    let column = |pol: &Policy| -> Vec<f64> {
        let mut a = pol.balance.clone();
        match fixed {
            Some(_) => a.extend_from_slice(&pol.terminal),
            None => a.push(1.0),
        }
        a
    };

    let mut policies: Vec<(Policy, Vec<Vec<usize>>)> = Vec::new();
    let (values, choices) = pricing.sweep(&vec![0.0; nt], &vec![0.0; nxn]);
    if !values[0].iter().zip(&cs.m0).all(|(v, m)| v.is_finite() || *m == 0.0) {
        return None;
    }
    let lower0 = expect(&cs.m0, &values[0]);
    let pol = pricing.policy(&choices);
    master.add_column(&column(&pol), pol.cost);
    policies.push((pol, choices));

    let mut best: Option<(f64, Vec<f64>)> = Some((lower0, vec![0.0; n_rows]));
    let mut best_values = values;
    let mut refresh = false;
    for round in 1..=max_rounds {
        let mut optimal = master.optimize()?;
        if optimal && (round % 10 == 0 || refresh) {
            master.refactor()?;
            optimal = master.optimize()?;
        }
        let upper = master.value();
        let y = master.duals();
        // Lagrangian bound at a dual point: sweep value plus the terminal pairing.
        let bound = |y: &[f64]| {
            let terminal: Vec<f64> = match fixed {
                Some(_) => y[nt..n_link].iter().map(|p| -p).collect(),
                None => vec![0.0; nxn],
            };
            let (values, choices) = pricing.sweep(&y[..nt], &terminal);
            let lower = expect(&cs.m0, &values[0]) + fixed.map_or(0.0, |nu| dot(nu, &y[nt..n_link]));
            (lower, values, choices)
        };
        let reduced = |pol: &Policy| pol.cost - dot(&column(pol), &y);
        let tol = 1e-12 * (1.0 + upper.abs());
        let mut candidate = None;
        if let Some((best_lower, center)) = &best {
            let mixed: Vec<f64> = center.iter().zip(&y).map(|(c, v)| SMOOTHING * c + (1.0 - SMOOTHING) * v).collect();
            let (lower, values, choices) = bound(&mixed);
            let pol = pricing.policy(&choices);
            if lower.is_finite() && lower > *best_lower {
                best = Some((lower, mixed));
                best_values = values;
            }
            if reduced(&pol) < -tol {
                candidate = Some((pol, choices));
            }
        }
        if candidate.is_none() {
            let (lower, values, choices) = bound(&y);
            if !lower.is_finite() {
                return None;
            }
            if best.as_ref().map_or(true, |b| lower >= b.0) {
                best = Some((lower, y.clone()));
                best_values = values;
            }
            let pol = pricing.policy(&choices);
            if reduced(&pol) < -tol {
                candidate = Some((pol, choices));
            }
        }
        let (lower, center) = best.clone().expect("set above");
        let stalled = candidate.as_ref().map_or(true, |(_, ch)| policies.iter().any(|(_, p)| p == ch));
        let converged = upper - lower <= 1e-10 * (1.0 + upper.abs());
        if stalled && !converged && !refresh {
            // Stale duals; retry from a fresh factorization.
            refresh = true;
            continue;
        }
        refresh = false;
        if converged || stalled || !optimal {
            let snapshot = master.clone();
            if master.unperturb().is_none() {
                // Keep the perturbed basis; its violation is of the order of the shift.
                master = snapshot;
            }
            let upper = master.value();
            let theta = master.weights();
            if theta[..n_art].iter().sum::<f64>() > 1e-12 || upper - lower > 1e-6 * (1.0 + upper.abs()) {
                return None;
            }
            return Some(assemble_start(cs, &policies, &theta[n_art..], &best_values, &center[..nt], round));
        }
        let (pol, choices) = candidate.expect("checked");
        master.add_column(&column(&pol), pol.cost);
        policies.push((pol, choices));
    }
    None
}

fn assemble_start(
    cs: &ConstraintSystem,
    policies: &[(Policy, Vec<Vec<usize>>)],
    theta: &[f64],
    values: &[Vec<f64>],
    lambda: &[f64],
    rounds: usize,
) -> Crash {
    let mut x = vec![0.0; cs.n_cols()];
    let mut terminal = vec![0.0; cs.m0.len()];
    for ((pol, _), &th) in policies.iter().zip(theta) {
        if th == 0.0 {
            continue;
        }
        for &(col, w) in &pol.flow {
            x[col] += th * w;
        }
        terminal.iter_mut().zip(&pol.terminal).for_each(|(t, p)| *t += th * p);
    }
    for (col, column) in cs.columns.iter().enumerate() {
        if let Column::Terminal { l } = *column {
            x[col] = terminal[l];
        }
    }
    let y = cs
        .rows
        .iter()
        .map(|row| match *row {
            RowKind::Holonomy { n, l } => {
                let v = -values[n][l];
                // Nodes nothing can leave: any finite bound keeps the
                // incoming columns dual feasible.
                if v.is_finite() {
                    v
                } else {
                    -1e6
                }
            }
            RowKind::Balance { i } => lambda[i],
            RowKind::SliceMass { .. } | RowKind::TerminalMass => 0.0,
        })
        .collect();
    Crash {
        x,
        y,
        rounds,
    }
}

/// `sum m v` over the support of `m`.
fn expect(m: &[f64], v: &[f64]) -> f64 {
    m.iter().zip(v).filter(|(m, _)| **m != 0.0).map(|(m, v)| m * v).sum()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
