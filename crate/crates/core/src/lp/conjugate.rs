use serde::Serialize;

use crate::error::Result;

use super::assemble::ConstraintSystem;
use super::measures::DiscreteMeasure;

/// Test function on the columns of a constraint system.
#[derive(Clone, Debug, PartialEq)]
pub enum TestFunction {
    /// `phi = L + v u_T'`, the equality case.
    Cost,
    Zero,
    /// One value per column.
    Values(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConjugateReport {
    /// `int phi dmu - f(phi) - int (L + v u_T') dmu` per test function;
    /// nonpositive when the conjugate bound holds.
    pub margins: Vec<f64>,
    pub max_margin: f64,
    pub tightest: usize,
    /// `|mu(Omega) - T|`; the bound presumes total mass `T`.
    pub mass_defect: f64,
}

/// Checks `int phi dmu - T sup(phi - L - v u_T') <= int (L + v u_T') dmu` for
/// each test function, the sup taken over the grid cells.
pub fn verify_conjugate_bound(
    cs: &ConstraintSystem,
    mu: &DiscreteMeasure,
    tests: &[TestFunction],
) -> Result<ConjugateReport> {
    let w = mu.to_lp(cs)?;
    let dt = cs.grid.dt();
    let horizon = cs.grid.horizon;
    // Flow columns only; terminal columns have zero cost and no mu mass.
    let flow: Vec<usize> = (0..cs.n_cols())
        .filter(|&c| matches!(cs.columns[c], super::assemble::Column::Flow { .. }))
        .collect();
    let ell: Vec<f64> = flow.iter().map(|&c| cs.c[c] / dt).collect();
    let mass: f64 = flow.iter().map(|&c| w[c] * dt).sum();
    let cost: f64 = flow.iter().zip(&ell).map(|(&c, l)| l * w[c] * dt).sum();
    let mut margins = Vec::with_capacity(tests.len());
    for test in tests {
        let phi: Vec<f64> = match test {
            TestFunction::Cost => ell.clone(),
            TestFunction::Zero => vec![0.0; flow.len()],
            TestFunction::Values(v) => flow.iter().map(|&c| v[c]).collect(),
        };
        let pairing: f64 = flow.iter().zip(&phi).map(|(&c, p)| p * w[c] * dt).sum();
        let sup = phi.iter().zip(&ell).map(|(p, l)| p - l).fold(f64::NEG_INFINITY, f64::max);
        margins.push(pairing - horizon * sup - cost);
    }
    let (tightest, max_margin) = margins
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, m)| if m > best.1 { (i, m) } else { best });
    Ok(ConjugateReport {
        margins,
        max_margin,
        tightest,
        mass_defect: (mass - horizon).abs(),
    })
}
