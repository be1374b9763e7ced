use crate::error::{Error, Result};
use crate::hamiltonian::HamiltonianSpec;
use crate::linalg::pairwise_sum;

use super::upwind::{end_slopes, Upwind};
use super::GridSpec;

const ROOT_TOL: f64 = 1e-12;
const EXPANSION_CAP: usize = 200;
const ITERATION_CAP: usize = 400;

/// Root of a nonincreasing `f`, given as `(value, slope)`. Newton steps are
/// accepted only inside the current bracket; otherwise the bracket is bisected.
fn monotone_root(f: impl Fn(f64) -> (f64, f64), start: f64) -> Result<f64> {
    let (f0, _) = f(start);
    if f0 == 0.0 {
        return Ok(start);
    }
    let (mut lo, mut hi) = (start, start);
    let mut step = 1.0;
    let mut found = false;
    for _ in 0..EXPANSION_CAP {
        if f0 > 0.0 {
            lo = hi;
            hi = start + step;
            if f(hi).0 <= 0.0 {
                found = true;
                break;
            }
        } else {
            hi = lo;
            lo = start - step;
            if f(lo).0 >= 0.0 {
                found = true;
                break;
            }
        }
        step *= 2.0;
    }
    if !found {
        return Err(Error::RootFind(format!("no sign change within {EXPANSION_CAP} bracket expansions from {start}")));
    }
    let mut x = 0.5 * (lo + hi);
    for _ in 0..ITERATION_CAP {
        let (fx, dfx) = f(x);
        if fx.abs() <= ROOT_TOL {
            return Ok(x);
        }
        if !fx.is_finite() {
            return Err(Error::RootFind(format!("non-finite balance at {x}")));
        }
        if fx > 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        if hi - lo <= 4.0 * f64::EPSILON * (1.0 + x.abs()) {
            return Ok(x);
        }
        let newton = x - fx / dfx;
        x = if dfx < 0.0 && newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
    }
    Err(Error::RootFind(format!("no convergence in {ITERATION_CAP} iterations, bracket [{lo}, {hi}]")))
}

fn weighted(values: impl Iterator<Item = f64>, m: &[f64], dx: f64) -> f64 {
    let terms: Vec<f64> = values.zip(m).map(|(v, w)| v * w * dx).collect();
    pairwise_sum(&terms)
}

/// Price solving `-int H_p(x, varpi + u_x) m0 dx = q0` for a given gradient.
pub fn initial_price_root(
    spec: &HamiltonianSpec,
    xs: &[f64],
    gradient: &[f64],
    m0: &[f64],
    dx: f64,
    q0: f64,
) -> Result<f64> {
    if xs.len() != gradient.len() || xs.len() != m0.len() {
        return Err(Error::Input("initial_price_root: length mismatch".into()));
    }
    let balance = |w: f64| {
        let value = -weighted(xs.iter().zip(gradient).map(|(&x, g)| spec.hp(x, w + g)), m0, dx) - q0;
        let slope = -weighted(xs.iter().zip(gradient).map(|(&x, g)| spec.hpp(x, w + g)), m0, dx);
        (value, slope)
    };
    monotone_root(balance, 0.0)
}

/// Price clearing the discrete market on one slice: density `m`, gradients
/// taken from the upwind differences of `u_next`.
pub fn slice_price_root(
    spec: &HamiltonianSpec,
    grid: &GridSpec,
    u_next: &[f64],
    slopes: (f64, f64),
    m: &[f64],
    q: f64,
    start: f64,
) -> Result<f64> {
    let dx = grid.dx();
    let balance = |w: f64| {
        let flux = Upwind::new(spec, grid, u_next, w, slopes);
        let value = -weighted(flux.hp().into_iter(), m, dx) - q;
        // One-sided derivative of the EO flux; zero where both branches are cut.
        let slope = -weighted(
            (0..m.len()).map(|j| {
                let x = grid.x(j);
                let dm = if j == 0 { slopes.0 } else { (u_next[j] - u_next[j - 1]) / dx };
                let dp = if j + 1 == m.len() { slopes.1 } else { (u_next[j + 1] - u_next[j]) / dx };
                let mut s = 0.0;
                if w + dm > 0.0 && j > 0 {
                    s += spec.hpp(x, w + dm);
                }
                if w + dp < 0.0 && j + 1 < m.len() {
                    s += spec.hpp(x, w + dp);
                }
                s
            }),
            m,
            dx,
        );
        (value, slope)
    };
    monotone_root(balance, start)
}

/// Row of `u` whose gradients drive slice `i`.
fn driving_row(u: &[Vec<f64>], i: usize) -> &[f64] {
    &u[(i + 1).min(u.len() - 1)]
}

/// `residual[i] = -sum_j H_p m[i][j] dx - Q(t_i)` with the scheme's upwind `H_p`.
pub fn balance_residual(
    spec: &HamiltonianSpec,
    grid: &GridSpec,
    u: &[Vec<f64>],
    m: &[Vec<f64>],
    varpi: &[f64],
    supply: &[f64],
) -> Vec<f64> {
    let dx = grid.dx();
    let slopes = end_slopes(&u[grid.nt], dx);
    (0..=grid.nt)
        .map(|i| {
            let flux = Upwind::new(spec, grid, driving_row(u, i), varpi[i], slopes);
            -weighted(flux.hp().into_iter(), &m[i], dx) - supply[i]
        })
        .collect()
}

/// Integrates the price equation
/// `varpi' = [-Q' - int H_pp H_x m + eps int H_ppp u_xx^2 m] / int H_pp m`
/// by explicit Euler from the balance root on the first slice. `Q'` over a
/// step is the exact increment of the samples, so a supply-only forcing is
/// reproduced without drift.
pub fn price_update(
    spec: &HamiltonianSpec,
    grid: &GridSpec,
    u: &[Vec<f64>],
    m: &[Vec<f64>],
    supply: &[f64],
    epsilon: f64,
    start: f64,
) -> Result<Vec<f64>> {
    let (dt, dx, nt) = (grid.dt(), grid.dx(), grid.nt);
    let n = grid.nx + 1;
    let slopes = end_slopes(&u[nt], dx);
    let mut varpi = Vec::with_capacity(nt + 1);
    varpi.push(slice_price_root(spec, grid, &u[1], slopes, &m[0], supply[0], start)?);
    let bound = 0.5 * spec.kappa;
    for i in 0..nt {
        let w = varpi[i];
        let row = &u[i + 1];
        let flux = Upwind::new(spec, grid, row, w, slopes);
        let hp = flux.hp();
        let mut p_eff = Vec::with_capacity(n);
        for (j, &target) in hp.iter().enumerate() {
            p_eff.push(spec.invert_hp(grid.x(j), target)?);
        }
        let hpp: Vec<f64> = (0..n).map(|j| spec.hpp(grid.x(j), p_eff[j])).collect();
        let denominator = weighted(hpp.iter().copied(), &m[i], dx);
        if !(denominator >= bound) {
            return Err(Error::Degenerate { step: i, denominator, bound });
        }
        let transport = weighted((0..n).map(|j| hpp[j] * spec.hx(grid.x(j), p_eff[j])), &m[i], dx);
        let curvature = if epsilon > 0.0 {
            let terms = (0..n).map(|j| {
                if j == 0 || j + 1 == n {
                    return 0.0;
                }
                let uxx = (row[j + 1] - 2.0 * row[j] + row[j - 1]) / (dx * dx);
                spec.hppp(grid.x(j), p_eff[j]) * uxx * uxx
            });
            epsilon * weighted(terms, &m[i], dx)
        } else {
            0.0
        };
        let increment = -(supply[i + 1] - supply[i]) + dt * (curvature - transport);
        let next = w + increment / denominator;
        if !next.is_finite() {
            return Err(Error::numerical("price_update", format!("non-finite price at step {}", i + 1)));
        }
        varpi.push(next);
    }
    Ok(varpi)
}
