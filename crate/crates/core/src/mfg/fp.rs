use crate::error::{Error, Result};
use crate::hamiltonian::HamiltonianSpec;
use crate::linalg::solve_tridiagonal;

use super::hjb::diffusion_matrix;
use super::upwind::{end_slopes, Upwind};
use super::GridSpec;

/// Applies the transpose of the linearised explicit HJB step to `m`.
pub(crate) fn transport(flux: &Upwind, m: &[f64], dt: f64, dx: f64) -> Vec<f64> {
    let n = m.len();
    let c = dt / dx;
    (0..n)
        .map(|k| {
            let mut out = m[k] - c * (flux.a[k] + flux.b[k]) * m[k];
            if k + 1 < n {
                out += c * flux.a[k + 1] * m[k + 1];
            }
            if k > 0 {
                out += c * flux.b[k - 1] * m[k - 1];
            }
            out
        })
        .collect()
}

/// Forward sweep for `m_t - (H_p m)_x = eps m_xx`, `m(0) = m0`.
///
/// Each step is the exact adjoint of the corresponding HJB step, so mass is
/// conserved and positivity holds whenever the HJB step is monotone.
pub fn solve_fp_forward(
    spec: &HamiltonianSpec,
    u: &[Vec<f64>],
    varpi: &[f64],
    epsilon: f64,
    grid: &GridSpec,
    m0: &[f64],
) -> Result<Vec<Vec<f64>>> {
    let (nt, n) = (grid.nt, grid.nx + 1);
    if u.len() != nt + 1 || varpi.len() != nt + 1 || m0.len() != n || u.iter().any(|r| r.len() != n) {
        return Err(Error::Input("fp: array shapes do not match the grid".into()));
    }
    if let Some(j) = m0.iter().position(|v| !(*v >= 0.0)) {
        return Err(Error::Input(format!("fp: initial density negative at node {j}")));
    }
    let (dt, dx) = (grid.dt(), grid.dx());
    let slopes = end_slopes(&u[nt], dx);
    let r = epsilon * dt / (dx * dx);
    let (lower, diag, upper) = diffusion_matrix(n, r);

    let mut m = Vec::with_capacity(nt + 1);
    m.push(m0.to_vec());
    for i in 0..nt {
        let flux = Upwind::new(spec, grid, &u[i + 1], varpi[i], slopes);
        flux.check_cfl(i, dt, dx)?;
        let diffused = if r > 0.0 { solve_tridiagonal(&lower, &diag, &upper, &m[i]) } else { m[i].clone() };
        let next = transport(&flux, &diffused, dt, dx);
        for (j, &v) in next.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::numerical("fp", format!("non-finite density at step {}, node {j}", i + 1)));
            }
            if v < -1e-12 {
                return Err(Error::NegativeMass { step: i + 1, node: j, value: v });
            }
        }
        m.push(next);
    }
    Ok(m)
}
