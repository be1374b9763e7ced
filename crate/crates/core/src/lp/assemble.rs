use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{Error, InfeasibilityWitness, Result};
use crate::hamiltonian::{legendre_transform, HamiltonianSpec};
use crate::linalg::CsrMatrix;
use crate::problem::ProblemData;

use super::MeasureGrid;

/// Terminal measure: a decision variable, or prescribed node masses.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum NuMode {
    Free,
    Fixed(Vec<f64>),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RowKind {
    /// Discrete continuity equation at time node `n`, space node `l`.
    Holonomy { n: usize, l: usize },
    /// `sum w (v - Qbar_i) = 0` on time cell `i`.
    Balance { i: usize },
    /// `sum w = 1` on time cell `i`.
    SliceMass { i: usize },
    /// `sum nu = 1`.
    TerminalMass,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Column {
    Flow { i: usize, j: usize, k: usize },
    Terminal { l: usize },
}

/// `min c.w  s.t.  A w = b, w >= 0`.
#[derive(Clone, Debug)]
pub struct ConstraintSystem {
    pub grid: MeasureGrid,
    pub a: CsrMatrix,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
    pub rows: Vec<RowKind>,
    pub columns: Vec<Column>,
    /// Node masses of `m0`.
    pub m0: Vec<f64>,
    /// Cell averages of `Q`.
    pub qbar: Vec<f64>,
    pub nu_mode: NuMode,
}

impl ConstraintSystem {
    pub fn n_rows(&self) -> usize {
        self.a.nrows
    }

    pub fn n_cols(&self) -> usize {
        self.a.ncols
    }

    pub fn row_label(&self, r: usize) -> String {
        match self.rows[r] {
            RowKind::Holonomy { n, l } => format!("holonomy[{n},{l}]"),
            RowKind::Balance { i } => format!("balance[{i}]"),
            RowKind::SliceMass { i } => format!("slice_mass[{i}]"),
            RowKind::TerminalMass => "terminal_mass".into(),
        }
    }

    /// `A w - b`
    pub fn residual(&self, w: &[f64]) -> Vec<f64> {
        let mut r = vec![0.0; self.n_rows()];
        self.a.mul_vec(w, &mut r);
        for (ri, bi) in r.iter_mut().zip(&self.b) {
            *ri -= bi;
        }
        r
    }

    pub fn objective(&self, w: &[f64]) -> f64 {
        crate::linalg::dot(&self.c, w)
    }

    /// Text export. Header `nrows ncols nnz`, then one `row col value` line per
    /// entry, then `b` and `c` sections with one value per line, each section
    /// introduced by its name.
    pub fn to_triplet_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{} {} {}", self.n_rows(), self.n_cols(), self.a.nnz());
        for (r, c, v) in self.a.triplets() {
            let _ = writeln!(s, "{r} {c} {v:e}");
        }
        let _ = writeln!(s, "b");
        for v in &self.b {
            let _ = writeln!(s, "{v:e}");
        }
        let _ = writeln!(s, "c");
        for v in &self.c {
            let _ = writeln!(s, "{v:e}");
        }
        s
    }

    /// Parses [`Self::to_triplet_text`] output into `(A, b, c)`.
    pub fn parse_triplet_text(text: &str) -> Result<(CsrMatrix, Vec<f64>, Vec<f64>)> {
        let bad = |what: &str| Error::Input(format!("triplet text: {what}"));
        let mut lines = text.lines();
        let header: Vec<usize> = lines
            .next()
            .ok_or_else(|| bad("empty"))?
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| bad("header")))
            .collect::<Result<_>>()?;
        let [nrows, ncols, nnz] = header[..] else {
            return Err(bad("header needs three fields"));
        };
        let mut triplets = Vec::with_capacity(nnz);
        for _ in 0..nnz {
            let line = lines.next().ok_or_else(|| bad("truncated entries"))?;
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 3 {
                return Err(bad("entry needs three fields"));
            }
            let r = f[0].parse().map_err(|_| bad("row"))?;
            let c = f[1].parse().map_err(|_| bad("col"))?;
            let v = f[2].parse().map_err(|_| bad("value"))?;
            triplets.push((r, c, v));
        }
        let mut section = |name: &str, len: usize| -> Result<Vec<f64>> {
            if lines.next() != Some(name) {
                return Err(bad(&format!("missing {name} section")));
            }
            (0..len)
                .map(|_| lines.next().ok_or_else(|| bad(name))?.trim().parse().map_err(|_| bad(name)))
                .collect()
        };
        let b = section("b", nrows)?;
        let c = section("c", ncols)?;
        Ok((CsrMatrix::from_triplets(nrows, ncols, &triplets), b, c))
    }
}

fn check_probability(name: &str, masses: &[f64], len: usize) -> Result<()> {
    if masses.len() != len {
        return Err(Error::Input(format!("{name} has {} entries, expected {len}", masses.len())));
    }
    if masses.iter().any(|m| !(*m >= 0.0)) {
        return Err(Error::Input(format!("{name} has negative or NaN entries")));
    }
    let total: f64 = masses.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::Input(format!("{name} has total mass {total}, expected 1")));
    }
    Ok(())
}

/// Assembles the LP for node masses `m0`, cell-average supply `qbar` and a
/// per-unit cost `cost(i, x, v)` of a step started at `x` with velocity `v`.
pub fn assemble_with_cost(
    grid: &MeasureGrid,
    m0: &[f64],
    qbar: &[f64],
    nu_mode: NuMode,
    mut cost: impl FnMut(usize, f64, f64) -> Result<f64>,
) -> Result<ConstraintSystem> {
    grid.validate()?;
    let (nt, nxn, nvn) = (grid.nt, grid.n_x(), grid.n_v());
    check_probability("m0", m0, nxn)?;
    if qbar.len() != nt || qbar.iter().any(|q| !q.is_finite()) {
        return Err(Error::Input(format!("supply averages must be {nt} finite values")));
    }
    if let NuMode::Fixed(nu) = &nu_mode {
        check_probability("terminal measure", nu, nxn)?;
    }

    let hol = |n: usize, l: usize| n * nxn + l;
    let n_hol = (nt + 1) * nxn;
    let bal = |i: usize| n_hol + i;
    let slice = |i: usize| n_hol + nt + i;
    let terminal = n_hol + 2 * nt;
    let free = matches!(nu_mode, NuMode::Free);
    let n_rows = terminal + usize::from(free);

    let mut triplets = Vec::new();
    let mut columns = Vec::new();
    let mut c = Vec::new();
    for i in 0..nt {
        for j in 0..nxn {
            for k in 0..nvn {
                let Some((left, frac)) = grid.landing(j, k) else {
                    continue;
                };
                let col = columns.len();
                let v = grid.v(k);
                let value = cost(i, grid.x(j), v)?;
                if !value.is_finite() {
                    return Err(Error::numerical("assemble", format!("non-finite cost at ({i},{j},{k})")));
                }
                columns.push(Column::Flow { i, j, k });
                c.push(value);
                triplets.push((hol(i, j), col, -1.0));
                if frac < 1.0 {
                    triplets.push((hol(i + 1, left), col, 1.0 - frac));
                }
                if frac > 0.0 {
                    triplets.push((hol(i + 1, left + 1), col, frac));
                }
                triplets.push((bal(i), col, v - qbar[i]));
                triplets.push((slice(i), col, 1.0));
            }
        }
    }
    if free {
        for l in 0..nxn {
            let col = columns.len();
            columns.push(Column::Terminal { l });
            c.push(0.0);
            triplets.push((hol(nt, l), col, -1.0));
            triplets.push((terminal, col, 1.0));
        }
    }

    let mut b = vec![0.0; n_rows];
    for l in 0..nxn {
        b[hol(0, l)] = -m0[l];
        if let NuMode::Fixed(nu) = &nu_mode {
            b[hol(nt, l)] = nu[l];
        }
    }
    for i in 0..nt {
        b[slice(i)] = 1.0;
    }
    if free {
        b[terminal] = 1.0;
    }
    let mut rows: Vec<RowKind> = (0..=nt).flat_map(|n| (0..nxn).map(move |l| RowKind::Holonomy { n, l })).collect();
    rows.extend((0..nt).map(|i| RowKind::Balance { i }));
    rows.extend((0..nt).map(|i| RowKind::SliceMass { i }));
    if free {
        rows.push(RowKind::TerminalMass);
    }

    let a = CsrMatrix::from_triplets(n_rows, columns.len(), &triplets);
    // Rows no column can reach: harmless if their right-hand side is zero.
    let empty: Vec<usize> = (0..n_rows).filter(|&r| a.indptr[r] == a.indptr[r + 1]).collect();
    if let Some(&r) = empty.iter().find(|&&r| b[r].abs() > 0.0) {
        return Err(Error::Infeasible(InfeasibilityWitness {
            identity: "unreachable_node".into(),
            defect: b[r],
            details: vec![("row".into(), r as f64)],
        }));
    }
    let (a, b, rows) = if empty.is_empty() {
        (a, b, rows)
    } else {
        let keep: Vec<usize> = (0..n_rows).filter(|r| !empty.contains(r)).collect();
        let mut renumber = vec![usize::MAX; n_rows];
        for (new, &old) in keep.iter().enumerate() {
            renumber[old] = new;
        }
        let trip: Vec<_> = a.triplets().into_iter().map(|(r, c, v)| (renumber[r], c, v)).collect();
        (
            CsrMatrix::from_triplets(keep.len(), columns.len(), &trip),
            keep.iter().map(|&r| b[r]).collect(),
            keep.iter().map(|&r| rows[r]).collect(),
        )
    };

    Ok(ConstraintSystem {
        grid: grid.clone(),
        a,
        b,
        c,
        rows,
        columns,
        m0: m0.to_vec(),
        qbar: qbar.to_vec(),
        nu_mode,
    })
}

/// Cell averages of `Q` over the time cells.
pub(crate) fn supply_averages(grid: &MeasureGrid, data: &ProblemData) -> Vec<f64> {
    let dt = grid.dt();
    (0..grid.nt).map(|i| data.supply.integral(grid.t(i), grid.t(i) + dt) / dt).collect()
}

/// LP for an instance: cost `dt (L(x, v) + v u_T'(x))` at the midpoint of the
/// step.
pub fn assemble_constraints(
    grid: &MeasureGrid,
    spec: &HamiltonianSpec,
    data: &ProblemData,
    nu_mode: NuMode,
) -> Result<ConstraintSystem> {
    data.validate()?;
    if (data.horizon - grid.horizon).abs() > 1e-12 * data.horizon {
        return Err(Error::Config("problem and measure grid horizons differ".into()));
    }
    let m0 = data.node_masses(-grid.half_width, grid.dx(), grid.nx)?;
    let qbar = supply_averages(grid, data);
    let dt = grid.dt();
    assemble_with_cost(grid, &m0, &qbar, nu_mode, |_, x, v| {
        let mid = x + 0.5 * v * dt;
        Ok(dt * (legendre_transform(spec, mid, v)? + v * data.terminal.derivative(mid)))
    })
}
