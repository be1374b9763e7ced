//! Mollification and the diagnostics built on it: subsolution residuals of
//! mollified value functions, price Lipschitz constants, moment traces and a
//! weak-convergence distance between measures.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::hamiltonian::HamiltonianSpec;
use crate::linalg::pairwise_sum;
use crate::lp::DiscreteMeasure;
use crate::mfg::{GridSpec, MFGSolution};

/// `(1 - s^2)^3` on `[-1, 1]`.
fn bump(s: f64) -> f64 {
    if s.abs() >= 1.0 {
        0.0
    } else {
        (1.0 - s * s).powi(3)
    }
}

/// Sampled time and space kernels of radius `alpha`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MollifierPair {
    pub alpha: f64,
    pub dt: f64,
    pub dx: f64,
    /// Symmetric time kernel at `s = k dt`, `k = -K..=K`; `sum rho_full dt = 1`.
    pub rho_full: Vec<f64>,
    /// One-sided weights at `s = k dt`, `k = 0..=K`: the past half of
    /// `rho_full` doubled, so that `sum rho dt = 1`.
    pub rho: Vec<f64>,
    /// Space kernel at `y = k dx`, `k = -J..=J`; `sum theta dx = 1`.
    pub theta: Vec<f64>,
    pub time_norm: f64,
    pub space_norm: f64,
}

fn symmetric_samples(alpha: f64, h: f64) -> (Vec<f64>, f64) {
    let half = ((alpha / h).ceil() as usize).saturating_sub(1);
    let raw: Vec<f64> = (0..=2 * half)
        .map(|k| bump((k as f64 - half as f64) * h / alpha))
        .collect();
    let norm = 1.0 / (pairwise_sum(&raw) * h);
    (raw.iter().map(|r| r * norm).collect(), norm)
}

impl MollifierPair {
    pub fn new(alpha: f64, dt: f64, dx: f64) -> Result<Self> {
        if !(alpha > 0.0 && dt > 0.0 && dx > 0.0) {
            return Err(Error::Input("mollifier radius and steps must be positive".into()));
        }
        if alpha < 2.0 * dt * (1.0 - 1e-12) || alpha < 2.0 * dx * (1.0 - 1e-12) {
            return Err(Error::Resolution(format!(
                "alpha = {alpha} is below twice the grid steps (dt = {dt}, dx = {dx})"
            )));
        }
        let (rho_full, time_norm) = symmetric_samples(alpha, dt);
        let (theta, space_norm) = symmetric_samples(alpha, dx);
        let k = rho_full.len() / 2;
        let rho = (0..=k)
            .map(|i| if i == 0 { rho_full[k] } else { 2.0 * rho_full[k + i] })
            .collect();
        let pair = MollifierPair {
            alpha,
            dt,
            dx,
            rho_full,
            rho,
            theta,
            time_norm,
            space_norm,
        };
        pair.check()?;
        Ok(pair)
    }

    /// `sum rho s^p dt` over the one-sided kernel.
    pub fn time_moment(&self, p: i32) -> f64 {
        let terms: Vec<f64> = self
            .rho
            .iter()
            .enumerate()
            .map(|(k, r)| r * (k as f64 * self.dt).powi(p) * self.dt)
            .collect();
        pairwise_sum(&terms)
    }

    /// `sum theta |y|^p dx`.
    pub fn space_moment(&self, p: i32) -> f64 {
        let j = self.theta.len() / 2;
        let terms: Vec<f64> = self
            .theta
            .iter()
            .enumerate()
            .map(|(k, t)| t * ((k as f64 - j as f64) * self.dx).abs().powi(p) * self.dx)
            .collect();
        pairwise_sum(&terms)
    }

    /// Normalisation, symmetry and first-moment bounds.
    pub fn check(&self) -> Result<()> {
        let fail = |what: String| Err(Error::numerical("mollifier", what));
        for (name, v, h) in [
            ("rho_full", &self.rho_full, self.dt),
            ("rho", &self.rho, self.dt),
            ("theta", &self.theta, self.dx),
        ] {
            let mass = pairwise_sum(v) * h;
            if (mass - 1.0).abs() > 1e-10 {
                return fail(format!("{name} has mass {mass}"));
            }
        }
        for v in [&self.rho_full, &self.theta] {
            if v.iter().zip(v.iter().rev()).any(|(a, b)| a != b) {
                return fail("kernel is not symmetric".into());
            }
        }
        if self.time_moment(1) > self.alpha || self.space_moment(1) > self.alpha {
            return fail("first moment exceeds alpha".into());
        }
        Ok(())
    }
}

/// Mollified values on time nodes `first..=Nt` (those with `t >= alpha`) and
/// space nodes `first_x..=Nx - first_x` (those where the spatial kernel fits
/// inside `[-R, R]`).
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Mollified {
    pub alpha: f64,
    pub first: usize,
    pub first_x: usize,
    pub u: Vec<Vec<f64>>,
}

/// `u^alpha(t, x) = sum_s rho(s) sum_y theta(y) u(t - s, x - y)` with past
/// times only. Nodes whose stencil would leave the grid are dropped rather
/// than padded.
pub fn mollify_solution(u: &[Vec<f64>], pair: &MollifierPair, grid: &GridSpec) -> Result<Mollified> {
    if u.len() != grid.nt + 1 || u.iter().any(|r| r.len() != grid.nx + 1) {
        return Err(Error::Input("value array does not match the grid".into()));
    }
    if (pair.dt - grid.dt()).abs() > 1e-12 * grid.dt() || (pair.dx - grid.dx()).abs() > 1e-12 * grid.dx() {
        return Err(Error::Grid("mollifier sampled on a different grid".into()));
    }
    let first = (0..=grid.nt)
        .find(|&i| grid.t(i) >= pair.alpha * (1.0 - 1e-12))
        .ok_or_else(|| Error::Resolution(format!("alpha = {} exceeds the horizon", pair.alpha)))?;
    let half = pair.theta.len() / 2;
    if 2 * half + 2 >= grid.nx {
        return Err(Error::Resolution(format!("alpha = {} exceeds the spatial window", pair.alpha)));
    }
    let cols = half..=grid.nx - half;
    let smoothed: Vec<Vec<f64>> = u
        .iter()
        .map(|row| {
            cols.clone()
                .map(|j| {
                    let terms: Vec<f64> = pair
                        .theta
                        .iter()
                        .enumerate()
                        .map(|(k, th)| th * row[j + half - k] * pair.dx)
                        .collect();
                    pairwise_sum(&terms)
                })
                .collect()
        })
        .collect();
    let out = (first..=grid.nt)
        .map(|i| {
            (0..=grid.nx - 2 * half)
                .map(|j| {
                    let terms: Vec<f64> = pair
                        .rho
                        .iter()
                        .enumerate()
                        .map(|(k, r)| r * smoothed[i - k][j] * pair.dt)
                        .collect();
                    pairwise_sum(&terms)
                })
                .collect()
        })
        .collect();
    Ok(Mollified {
        alpha: pair.alpha,
        first,
        first_x: half,
        u: out,
    })
}

/// `max (-w_t + H(x, varpi + w_x))_+` over interior nodes, centred
/// differences in both variables; `varpi` on the time nodes of `grid`.
pub fn subsolution_residual(spec: &HamiltonianSpec, moll: &Mollified, varpi: &[f64], grid: &GridSpec) -> f64 {
    let (dt, dx) = (grid.dt(), grid.dx());
    let mut worst = 0.0_f64;
    for r in 1..moll.u.len().saturating_sub(1) {
        let i = moll.first + r;
        for j in 1..moll.u[r].len() - 1 {
            let wt = (moll.u[r + 1][j] - moll.u[r - 1][j]) / (2.0 * dt);
            let wx = (moll.u[r][j + 1] - moll.u[r][j - 1]) / (2.0 * dx);
            worst = worst.max(-wt + spec.h(grid.x(moll.first_x + j), varpi[i] + wx));
        }
    }
    worst
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ResidualProfile {
    pub alphas: Vec<f64>,
    pub sup_residuals: Vec<f64>,
    /// Least-squares slope of `log residual` against `log alpha`; `NaN` when
    /// the fit is skipped.
    pub fitted_order: f64,
    pub fitted_constant: f64,
    /// Some residual is at the noise floor, so no fit was made.
    pub floor: bool,
    pub noise_floor: f64,
}

impl ResidualProfile {
    /// Columns `alpha,sup_residual`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("alpha,sup_residual\n");
        for (a, r) in self.alphas.iter().zip(&self.sup_residuals) {
            s.push_str(&format!("{a:e},{r:.15e}\n"));
        }
        s
    }

    /// `max residual / alpha`.
    pub fn max_ratio(&self) -> f64 {
        self.alphas
            .iter()
            .zip(&self.sup_residuals)
            .map(|(a, r)| r / a)
            .fold(0.0, f64::max)
    }
}

/// Residuals at or below this count as round-off.
pub const NOISE_FLOOR: f64 = 1e-10;

/// Mollifies `sol.u` at each radius, measures the subsolution residual and
/// fits `residual ~ C' alpha^order`.
pub fn commutation_order_fit(spec: &HamiltonianSpec, sol: &MFGSolution, alphas: &[f64]) -> Result<ResidualProfile> {
    if alphas.len() < 3 {
        return Err(Error::Input("need at least three mollifier radii".into()));
    }
    if alphas.windows(2).any(|w| !(w[1] < w[0])) || alphas.iter().any(|a| !(*a > 0.0)) {
        return Err(Error::Input("radii must be positive and strictly decreasing".into()));
    }
    let grid = &sol.grid;
    if alphas[0] >= grid.horizon / 4.0 {
        return Err(Error::Input(format!("alpha = {} is not below T/4", alphas[0])));
    }
    let sup_residuals = alphas
        .iter()
        .map(|&a| {
            let pair = MollifierPair::new(a, grid.dt(), grid.dx())?;
            let moll = mollify_solution(&sol.u, &pair, grid)?;
            Ok(subsolution_residual(spec, &moll, &sol.varpi, grid))
        })
        .collect::<Result<Vec<f64>>>()?;
    let floor = sup_residuals.iter().any(|r| *r <= NOISE_FLOOR);
    let (fitted_order, fitted_constant) = if floor {
        (f64::NAN, f64::NAN)
    } else {
        let xs: Vec<f64> = alphas.iter().map(|a| a.ln()).collect();
        let ys: Vec<f64> = sup_residuals.iter().map(|r| r.ln()).collect();
        let n = xs.len() as f64;
        let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
        let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
        let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
        let slope = sxy / sxx;
        (slope, (my - slope * mx).exp())
    };
    Ok(ResidualProfile {
        alphas: alphas.to_vec(),
        sup_residuals,
        fitted_order,
        fitted_constant,
        floor,
        noise_floor: NOISE_FLOOR,
    })
}

/// `max_i |varpi_{i+1} - varpi_i| / dt`; zero for paths shorter than two.
pub fn lipschitz_estimate(varpi: &[f64], dt: f64) -> f64 {
    varpi.windows(2).map(|w| (w[1] - w[0]).abs() / dt).fold(0.0, f64::max)
}

/// Trapezoid rule for `int |x|^gamma m(t, x) dx` at every time node; `m` is a
/// density on the nodes of `grid`.
pub fn moment_trace(m: &[Vec<f64>], grid: &GridSpec, gamma: f64) -> Vec<f64> {
    let xs = grid.xs();
    let dx = grid.dx();
    m.iter()
        .map(|row| {
            let last = row.len() - 1;
            let terms: Vec<f64> = row
                .iter()
                .zip(&xs)
                .enumerate()
                .map(|(j, (v, x))| {
                    let w = if j == 0 || j == last { 0.5 } else { 1.0 };
                    w * v * x.abs().powf(gamma) * dx
                })
                .collect();
            pairwise_sum(&terms)
        })
        .collect()
}

/// Distance between two measures under the test family.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PairDistance {
    pub a: usize,
    pub b: usize,
    pub distance: f64,
}

/// `t^r x^p v^q bump(x / R) bump(v / Vmax) / (1 + |x|^zeta1 + |v|^zeta2)`
/// for `r in {0, 1}`, `p, q in {0, 1, 2}`, evaluated at cell centres in time.
fn test_family(measure: &DiscreteMeasure) -> Vec<f64> {
    let g = &measure.grid;
    let mut out = vec![Vec::with_capacity(g.n_cells()); 18];
    for i in 0..g.nt {
        let t = g.t(i) + 0.5 * g.dt();
        for j in 0..g.n_x() {
            let x = g.x(j);
            for k in 0..g.n_v() {
                let v = g.v(k);
                let w = measure.weights[g.cell(i, j, k)];
                let envelope = bump(x / (g.half_width * (1.0 + 1e-9))) * bump(v / (g.vmax * (1.0 + 1e-9)))
                    / (1.0 + x.abs().powf(g.zeta1) + v.abs().powf(g.zeta2));
                let mut f = 0;
                for r in 0..2 {
                    for p in 0..3 {
                        for q in 0..3 {
                            out[f].push(w * t.powi(r) * x.powi(p) * v.powi(q) * envelope);
                            f += 1;
                        }
                    }
                }
            }
        }
    }
    out.iter().map(|terms| pairwise_sum(terms)).collect()
}

/// `max_f |int f dmu_a - int f dmu_b|` for every pair `a < b`.
pub fn weak_convergence_diagnostic(measures: &[DiscreteMeasure]) -> Result<Vec<PairDistance>> {
    if measures.len() < 2 {
        return Err(Error::Input("need at least two measures".into()));
    }
    if measures.iter().any(|m| m.grid != measures[0].grid) {
        return Err(Error::Grid("measures live on different grids".into()));
    }
    let integrals: Vec<Vec<f64>> = measures.iter().map(test_family).collect();
    let mut out = Vec::new();
    for a in 0..measures.len() {
        for b in a + 1..measures.len() {
            let distance = integrals[a]
                .iter()
                .zip(&integrals[b])
                .map(|(x, y)| (x - y).abs())
                .fold(0.0, f64::max);
            out.push(PairDistance { a, b, distance });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernels_are_normalised() {
        let p = MollifierPair::new(0.1, 1.0 / 64.0, 0.0125).unwrap();
        assert!((p.rho.iter().sum::<f64>() * p.dt - 1.0).abs() < 1e-12);
        assert!(p.time_moment(1) > 0.0 && p.time_moment(1) < 0.1);
        assert!(p.space_moment(1) < 0.1);
    }

    #[test]
    fn rejects_unresolved_radius() {
        assert!(matches!(MollifierPair::new(0.01, 0.01, 0.001), Err(Error::Resolution(_))));
    }
}
