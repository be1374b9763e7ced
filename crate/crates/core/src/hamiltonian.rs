//! Hamiltonian/Lagrangian pairs and their convex-duality checks.
//!
//! All built-in Hamiltonians are separable, `H(x, p) = K(p) - V(x)`, with a
//! uniformly convex kinetic part `K`. The Lagrangian is the Legendre
//! transform `L(x, v) = sup_p { -p v - H(x, p) }`, so that the optimal
//! velocity for momentum `p` is `v = -H_p(x, p)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Step used to difference `H_pp` when `H_ppp` has no closed form.
pub const HPPP_STEP: f64 = 1e-4;

const BISECTION_CAP: usize = 400;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Kinetic {
    /// `p^2 / 2`
    Quadratic,
    /// `(1 + p^2)^(gamma2 / 2)`
    PowerGamma2 { gamma2: f64 },
    /// `p^4 / 4`; strictly but not uniformly convex, kept for transform tests.
    Quartic,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Potential {
    Zero,
    /// `coef * (sqrt(x^2 + delta^2) - delta)`, a Lipschitz convex smoothing of `coef |x|`.
    SmoothAbs { coef: f64, delta: f64 },
}

impl Potential {
    pub fn value(&self, x: f64) -> f64 {
        match *self {
            Potential::Zero => 0.0,
            Potential::SmoothAbs { coef, delta } => coef * ((x * x + delta * delta).sqrt() - delta),
        }
    }

    pub fn derivative(&self, x: f64) -> f64 {
        match *self {
            Potential::Zero => 0.0,
            Potential::SmoothAbs { coef, delta } => coef * x / (x * x + delta * delta).sqrt(),
        }
    }

    pub fn second_derivative(&self, x: f64) -> f64 {
        match *self {
            Potential::Zero => 0.0,
            Potential::SmoothAbs { coef, delta } => {
                let r2 = x * x + delta * delta;
                coef * delta * delta / (r2 * r2.sqrt())
            }
        }
    }

    pub fn lipschitz(&self) -> f64 {
        match *self {
            Potential::Zero => 0.0,
            Potential::SmoothAbs { coef, .. } => coef.abs(),
        }
    }
}

/// A concrete Hamiltonian together with the structural constants it is
/// declared to satisfy (convexity `kappa`, growth exponents and constants).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HamiltonianSpec {
    pub kinetic: Kinetic,
    pub potential: Potential,
    pub kappa: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub growth_c: f64,
    pub growth_c1: f64,
    pub growth_c2: f64,
    pub separable: bool,
}

impl HamiltonianSpec {
    /// `H = p^2/2 - V(x)`.
    pub fn quadratic(potential: Potential) -> Self {
        Self::with_constants(Kinetic::Quadratic, potential)
    }

    /// `H = (1 + p^2)^(gamma2/2) - V(x)`.
    pub fn power(gamma2: f64, potential: Potential) -> Self {
        Self::with_constants(Kinetic::PowerGamma2 { gamma2 }, potential)
    }

    /// `H = p^4/4`; only strictly convex, so `kappa` is a small placeholder.
    pub fn quartic() -> Self {
        let mut spec = Self::with_constants(Kinetic::Quartic, Potential::Zero);
        spec.kappa = 1e-12;
        spec
    }

    /// Overrides the declared convexity constant.
    pub fn with_kappa(mut self, kappa: f64) -> Self {
        self.kappa = kappa;
        self
    }

    fn with_constants(kinetic: Kinetic, potential: Potential) -> Self {
        let gamma2 = match kinetic {
            Kinetic::Quadratic => 2.0,
            Kinetic::PowerGamma2 { gamma2 } => gamma2,
            Kinetic::Quartic => 4.0,
        };
        let kappa = match kinetic {
            Kinetic::Quadratic => 1.0,
            Kinetic::PowerGamma2 { gamma2 } if gamma2 >= 2.0 => gamma2,
            // H_pp decays like |p|^(gamma2-2); report its minimum on |p| <= 10.
            Kinetic::PowerGamma2 { gamma2 } => {
                let p2: f64 = 100.0;
                gamma2 * (1.0 + p2).powf(gamma2 / 2.0 - 2.0) * (1.0 + (gamma2 - 1.0) * p2)
            }
            Kinetic::Quartic => 0.0,
        };
        let lip = potential.lipschitz();
        let v0 = potential.value(0.0).abs();
        let scale = 2f64.powf(gamma2 / 2.0);
        let growth_c = (gamma2 * scale).max(2.0) + scale + lip + v0 + 1.0;
        HamiltonianSpec {
            kinetic,
            potential,
            kappa,
            gamma1: 1.0,
            gamma2,
            growth_c,
            growth_c1: 0.0,
            growth_c2: lip,
            separable: true,
        }
    }

    /// Short family name used by the registry.
    pub fn family_name(&self) -> &'static str {
        match self.kinetic {
            Kinetic::Quadratic => "quadratic",
            Kinetic::PowerGamma2 { .. } => "power_gamma2",
            Kinetic::Quartic => "quartic",
        }
    }

    fn kinetic(&self, p: f64) -> f64 {
        match self.kinetic {
            Kinetic::Quadratic => 0.5 * p * p,
            Kinetic::PowerGamma2 { gamma2 } => (1.0 + p * p).powf(0.5 * gamma2),
            Kinetic::Quartic => 0.25 * p.powi(4),
        }
    }

    fn kinetic_p(&self, p: f64) -> f64 {
        match self.kinetic {
            Kinetic::Quadratic => p,
            Kinetic::PowerGamma2 { gamma2 } => gamma2 * p * (1.0 + p * p).powf(0.5 * gamma2 - 1.0),
            Kinetic::Quartic => p.powi(3),
        }
    }

    fn kinetic_pp(&self, p: f64) -> f64 {
        match self.kinetic {
            Kinetic::Quadratic => 1.0,
            Kinetic::PowerGamma2 { gamma2 } => {
                let s = 1.0 + p * p;
                gamma2 * s.powf(0.5 * gamma2 - 2.0) * (1.0 + (gamma2 - 1.0) * p * p)
            }
            Kinetic::Quartic => 3.0 * p * p,
        }
    }

    pub fn h(&self, x: f64, p: f64) -> f64 {
        self.kinetic(p) - self.potential.value(x)
    }

    pub fn hp(&self, _x: f64, p: f64) -> f64 {
        self.kinetic_p(p)
    }

    pub fn hpp(&self, _x: f64, p: f64) -> f64 {
        self.kinetic_pp(p)
    }

    /// Third momentum derivative; closed form where registered, otherwise a
    /// central difference of `hpp` with step [`HPPP_STEP`].
    pub fn hppp(&self, x: f64, p: f64) -> f64 {
        match self.kinetic {
            Kinetic::Quadratic => 0.0,
            Kinetic::Quartic => 6.0 * p,
            Kinetic::PowerGamma2 { .. } => {
                (self.hpp(x, p + HPPP_STEP) - self.hpp(x, p - HPPP_STEP)) / (2.0 * HPPP_STEP)
            }
        }
    }

    pub fn hx(&self, x: f64, _p: f64) -> f64 {
        -self.potential.derivative(x)
    }

    pub fn v(&self, x: f64) -> f64 {
        self.potential.value(x)
    }

    pub fn v_prime(&self, x: f64) -> f64 {
        self.potential.derivative(x)
    }

    /// Minimiser of `p -> H(x, p)`; every built-in kinetic part is even.
    pub fn p_min(&self, _x: f64) -> f64 {
        0.0
    }

    /// Conjugate exponent `gamma2' = gamma2 / (gamma2 - 1)`.
    pub fn gamma2_conj(&self) -> f64 {
        self.gamma2 / (self.gamma2 - 1.0)
    }

    fn closed_form_lagrangian(&self) -> bool {
        match self.kinetic {
            Kinetic::Quadratic | Kinetic::Quartic => true,
            Kinetic::PowerGamma2 { gamma2 } => gamma2 == 2.0,
        }
    }

    /// Inverts `p -> H_p(x, p)`, which is strictly increasing.
    pub fn invert_hp(&self, x: f64, target: f64) -> Result<f64> {
        match self.kinetic {
            Kinetic::Quadratic => return Ok(target),
            Kinetic::PowerGamma2 { gamma2 } if gamma2 == 2.0 => return Ok(target / 2.0),
            Kinetic::Quartic => return Ok(target.cbrt()),
            _ => {}
        }
        let bound = self.momentum_bracket(target.abs());
        bisect_decreasing(|p| target - self.hp(x, p), -bound, bound).ok_or_else(|| {
            Error::numerical("invert_hp", format!("no root in bracket at x={x}, H_p={target}"))
        })
    }

    /// Half-width of a bracket containing the maximiser of `-p v - H(x, p)`.
    fn momentum_bracket(&self, speed: f64) -> f64 {
        10.0 * self.growth_c * (1.0 + speed).powf(1.0 / (self.gamma2 - 1.0))
    }

    fn velocity_bracket(&self, momentum: f64) -> f64 {
        10.0 * self.growth_c * (momentum.abs().powf(self.gamma2 - 1.0) + 1.0)
    }

    pub fn lagrangian(&self) -> LagrangianView<'_> {
        LagrangianView { spec: self }
    }
}

/// Finds the sign change of a decreasing function on `[lo, hi]` by bisection.
/// Returns `None` when the bracket does not contain a sign change.
fn bisect_decreasing(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> Option<f64> {
    let flo = f(lo);
    let fhi = f(hi);
    if flo < 0.0 || fhi > 0.0 {
        return None;
    }
    for _ in 0..BISECTION_CAP {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(0.5 * (lo + hi))
}

/// The Lagrangian associated with a [`HamiltonianSpec`].
#[derive(Clone, Copy, Debug)]
pub struct LagrangianView<'a> {
    spec: &'a HamiltonianSpec,
}

impl LagrangianView<'_> {
    pub fn closed_form(&self) -> bool {
        self.spec.closed_form_lagrangian()
    }

    pub fn gamma2_conj(&self) -> f64 {
        self.spec.gamma2_conj()
    }

    /// `L(x, v)`; panics only if the numeric maximisation fails, which the
    /// coercivity bracket rules out for the built-in families.
    pub fn l(&self, x: f64, v: f64) -> f64 {
        legendre_transform(self.spec, x, v).expect("Legendre transform failed")
    }

    /// `L_v(x, v) = -p*(x, v)` where `p*` is the maximiser.
    pub fn lv(&self, x: f64, v: f64) -> f64 {
        let spec = self.spec;
        match spec.kinetic {
            Kinetic::Quadratic => v,
            Kinetic::PowerGamma2 { gamma2 } if gamma2 == 2.0 => 0.5 * v,
            Kinetic::Quartic => v.cbrt(),
            _ => -spec.invert_hp(x, -v).expect("H_p inversion failed"),
        }
    }
}

/// `L(x, v) = sup_p { -p v - H(x, p) }`.
///
/// Closed forms are used for the registered families; otherwise the
/// maximiser solves `H_p(x, p) = -v` by bisection inside the coercivity
/// bracket `|p| <= 10 C (1 + |v|)^(1/(gamma2 - 1))`.
pub fn legendre_transform(spec: &HamiltonianSpec, x: f64, v: f64) -> Result<f64> {
    if !v.is_finite() {
        return Err(Error::Input(format!("velocity {v} is not finite")));
    }
    let potential = spec.v(x);
    match spec.kinetic {
        Kinetic::Quadratic => return Ok(0.5 * v * v + potential),
        Kinetic::PowerGamma2 { gamma2 } if gamma2 == 2.0 => return Ok(0.25 * v * v - 1.0 + potential),
        Kinetic::Quartic => return Ok(0.75 * v.abs().powf(4.0 / 3.0) + potential),
        _ => {}
    }
    numeric_legendre(spec, x, v)
}

/// The numeric route of [`legendre_transform`], available for every family.
pub fn numeric_legendre(spec: &HamiltonianSpec, x: f64, v: f64) -> Result<f64> {
    let bound = spec.momentum_bracket(v.abs());
    let p = bisect_decreasing(|p| -v - spec.hp(x, p), -bound, bound).ok_or_else(|| {
        Error::numerical("legendre_transform", format!("maximiser outside bracket at (x={x}, v={v})"))
    })?;
    Ok(-p * v - spec.h(x, p))
}

/// `max |sup_v(-p v - L(x, v)) - H(x, p)|` over the grid.
pub fn legendre_involution_check(spec: &HamiltonianSpec, xs: &[f64], ps: &[f64]) -> f64 {
    let lag = spec.lagrangian();
    let mut worst = 0.0_f64;
    for &x in xs {
        for &p in ps {
            let bound = spec.velocity_bracket(p);
            let v = match bisect_decreasing(|v| -p - lag.lv(x, v), -bound, bound) {
                Some(v) => v,
                None => return f64::INFINITY,
            };
            let h_back = -p * v - lag.l(x, v);
            worst = worst.max((h_back - spec.h(x, p)).abs());
        }
    }
    worst
}

/// `max |p + L_v(x, -H_p(x, p))|` over the samples.
pub fn dual_pairing_check(spec: &HamiltonianSpec, samples: &[(f64, f64)]) -> f64 {
    let lag = spec.lagrangian();
    samples
        .iter()
        .map(|&(x, p)| {
            let v = -spec.hp(x, p);
            (p - (-lag.lv(x, v))).abs()
        })
        .fold(0.0, f64::max)
}
