use crate::error::{Error, Result};
use crate::hamiltonian::HamiltonianSpec;

use super::GridSpec;

/// Engquist-Osher splitting of `H_p` for a kinetic part minimised at `p = 0`.
pub fn numerical_hp(spec: &HamiltonianSpec, x: f64, p_minus: f64, p_plus: f64) -> f64 {
    spec.hp(x, p_minus.max(0.0)) + spec.hp(x, p_plus.min(0.0))
}

/// One time slice of the upwind discretisation around a row `u` and price
/// `varpi`. Ghost nodes extend `u` linearly with the slopes `(left, right)`.
#[derive(Clone, Debug)]
pub struct Upwind {
    /// Numerical Hamiltonian `H(x_j, varpi + u_x)` per node.
    pub hhat: Vec<f64>,
    /// `dH/dp^-` per node (`>= 0`); zero at the left end.
    pub a: Vec<f64>,
    /// `-dH/dp^+` per node (`>= 0`); zero at the right end.
    pub b: Vec<f64>,
}

impl Upwind {
    pub fn new(spec: &HamiltonianSpec, grid: &GridSpec, u: &[f64], varpi: f64, slopes: (f64, f64)) -> Self {
        let n = u.len();
        let dx = grid.dx();
        let mut hhat = Vec::with_capacity(n);
        let mut a = Vec::with_capacity(n);
        let mut b = Vec::with_capacity(n);
        for j in 0..n {
            let x = grid.x(j);
            let dm = if j == 0 { slopes.0 } else { (u[j] - u[j - 1]) / dx };
            let dp = if j + 1 == n { slopes.1 } else { (u[j + 1] - u[j]) / dx };
            let pm = (varpi + dm).max(0.0);
            let pp = (varpi + dp).min(0.0);
            hhat.push(spec.h(x, pm) + spec.h(x, pp) - spec.h(x, 0.0));
            a.push(if j == 0 { 0.0 } else { spec.hp(x, pm) });
            b.push(if j + 1 == n { 0.0 } else { -spec.hp(x, pp) });
        }
        Upwind { hhat, a, b }
    }

    /// Numerical `H_p` per node, consistent with the transport in `fp`.
    pub fn hp(&self) -> Vec<f64> {
        self.a.iter().zip(&self.b).map(|(a, b)| a - b).collect()
    }

    /// Agent velocity `-H_p`.
    pub fn velocity(&self) -> Vec<f64> {
        self.a.iter().zip(&self.b).map(|(a, b)| b - a).collect()
    }

    /// Largest `dt (a_j + b_j) / dx`; the explicit part is monotone iff `<= 1`.
    pub fn courant(&self, dt: f64, dx: f64) -> f64 {
        self.a
            .iter()
            .zip(&self.b)
            .map(|(a, b)| dt * (a + b) / dx)
            .fold(0.0, f64::max)
    }

    pub fn check_cfl(&self, step: usize, dt: f64, dx: f64) -> Result<()> {
        let courant = self.courant(dt, dx);
        if courant > 1.0 + 1e-12 {
            return Err(Error::Cfl { step, courant });
        }
        if !courant.is_finite() || self.hhat.iter().any(|h| !h.is_finite()) {
            return Err(Error::numerical("upwind flux", format!("non-finite flux at step {step}")));
        }
        Ok(())
    }
}

/// End slopes of a row, used to extend it linearly past the domain.
pub(crate) fn end_slopes(row: &[f64], dx: f64) -> (f64, f64) {
    let n = row.len();
    ((row[1] - row[0]) / dx, (row[n - 1] - row[n - 2]) / dx)
}
