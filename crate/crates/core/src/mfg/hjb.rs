use crate::error::{Error, Result};
use crate::hamiltonian::HamiltonianSpec;
use crate::linalg::solve_tridiagonal;

use super::upwind::{end_slopes, Upwind};
use super::GridSpec;

/// Coefficients of `I - eps dt D2` with linearly extended ghost nodes.
/// The matrix is symmetric with unit row sums.
pub(crate) fn diffusion_matrix(n: usize, r: f64) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut lower = vec![-r; n];
    let mut diag = vec![1.0 + 2.0 * r; n];
    let mut upper = vec![-r; n];
    lower[0] = 0.0;
    upper[n - 1] = 0.0;
    diag[0] = 1.0 + r;
    diag[n - 1] = 1.0 + r;
    (lower, diag, upper)
}

/// Backward sweep for `-u_t + H(x, varpi + u_x) = eps u_xx`, `u(T) = terminal`.
///
/// Explicit Engquist-Osher Hamiltonian, implicit diffusion. Past the domain
/// `u` is extended linearly with the end slopes of `terminal`.
pub fn solve_hjb_backward(
    spec: &HamiltonianSpec,
    varpi: &[f64],
    epsilon: f64,
    grid: &GridSpec,
    terminal: &[f64],
) -> Result<Vec<Vec<f64>>> {
    let (nt, n) = (grid.nt, grid.nx + 1);
    if varpi.len() != nt + 1 || terminal.len() != n {
        return Err(Error::Input(format!(
            "hjb: expected {} prices and {} terminal samples, got {} and {}",
            nt + 1,
            n,
            varpi.len(),
            terminal.len()
        )));
    }
    if !(epsilon >= 0.0) {
        return Err(Error::Input(format!("viscosity must be >= 0, got {epsilon}")));
    }
    let (dt, dx) = (grid.dt(), grid.dx());
    let slopes = end_slopes(terminal, dx);
    let r = epsilon * dt / (dx * dx);
    let (lower, diag, upper) = diffusion_matrix(n, r);

    let mut u = vec![Vec::new(); nt + 1];
    u[nt] = terminal.to_vec();
    for i in (0..nt).rev() {
        let flux = Upwind::new(spec, grid, &u[i + 1], varpi[i], slopes);
        flux.check_cfl(i, dt, dx)?;
        let mut rhs: Vec<f64> = u[i + 1].iter().zip(&flux.hhat).map(|(v, h)| v - dt * h).collect();
        rhs[0] -= r * dx * slopes.0;
        rhs[n - 1] += r * dx * slopes.1;
        let row = if r > 0.0 { solve_tridiagonal(&lower, &diag, &upper, &rhs) } else { rhs };
        if let Some(j) = row.iter().position(|v| !v.is_finite()) {
            return Err(Error::numerical("hjb", format!("non-finite value at step {i}, node {j}")));
        }
        u[i] = row;
    }
    Ok(u)
}
