//! Problem data: supply curve, terminal cost, initial density.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Supply `Q(t)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Supply {
    Constant { value: f64 },
    /// `amplitude * cos(2 pi frequency t)`
    Cosine { amplitude: f64, frequency: f64 },
    /// `intercept + slope t`
    Affine { intercept: f64, slope: f64 },
}

impl Supply {
    pub fn value(&self, t: f64) -> f64 {
        match *self {
            Supply::Constant { value } => value,
            Supply::Cosine { amplitude, frequency } => amplitude * (2.0 * PI * frequency * t).cos(),
            Supply::Affine { intercept, slope } => intercept + slope * t,
        }
    }

    pub fn derivative(&self, t: f64) -> f64 {
        match *self {
            Supply::Constant { .. } => 0.0,
            Supply::Cosine { amplitude, frequency } => {
                -2.0 * PI * frequency * amplitude * (2.0 * PI * frequency * t).sin()
            }
            Supply::Affine { slope, .. } => slope,
        }
    }

    /// `int_a^b Q(t) dt`
    pub fn integral(&self, a: f64, b: f64) -> f64 {
        match *self {
            Supply::Constant { value } => value * (b - a),
            Supply::Cosine { amplitude, frequency } => {
                if frequency == 0.0 {
                    return amplitude * (b - a);
                }
                let w = 2.0 * PI * frequency;
                amplitude * ((w * b).sin() - (w * a).sin()) / w
            }
            Supply::Affine { intercept, slope } => intercept * (b - a) + 0.5 * slope * (b * b - a * a),
        }
    }

    /// `int_a^b Q(t)^2 dt`
    pub fn integral_sq(&self, a: f64, b: f64) -> f64 {
        match *self {
            Supply::Constant { value } => value * value * (b - a),
            Supply::Cosine { amplitude, frequency } => {
                if frequency == 0.0 {
                    return amplitude * amplitude * (b - a);
                }
                let w = 4.0 * PI * frequency;
                amplitude * amplitude * (0.5 * (b - a) + ((w * b).sin() - (w * a).sin()) / (2.0 * w))
            }
            Supply::Affine { intercept, slope } => {
                let cube = |t: f64| (intercept + slope * t).powi(3);
                if slope == 0.0 {
                    intercept * intercept * (b - a)
                } else {
                    (cube(b) - cube(a)) / (3.0 * slope)
                }
            }
        }
    }

    /// Every registered supply family is analytic.
    pub fn is_smooth(&self) -> bool {
        true
    }
}

/// Terminal cost `u_T(x)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TerminalCost {
    Zero,
    /// `slope * x`
    Linear { slope: f64 },
    /// `coef * (sqrt(x^2 + delta^2) - delta)`
    SmoothAbs { coef: f64, delta: f64 },
    /// `coef * |x|`; not C^1, used for the non-smooth diagnostics.
    Kink { coef: f64 },
}

impl TerminalCost {
    pub fn value(&self, x: f64) -> f64 {
        match *self {
            TerminalCost::Zero => 0.0,
            TerminalCost::Linear { slope } => slope * x,
            TerminalCost::SmoothAbs { coef, delta } => coef * ((x * x + delta * delta).sqrt() - delta),
            TerminalCost::Kink { coef } => coef * x.abs(),
        }
    }

    pub fn derivative(&self, x: f64) -> f64 {
        match *self {
            TerminalCost::Zero => 0.0,
            TerminalCost::Linear { slope } => slope,
            TerminalCost::SmoothAbs { coef, delta } => coef * x / (x * x + delta * delta).sqrt(),
            TerminalCost::Kink { coef } => if x == 0.0 { 0.0 } else { coef * x.signum() },
        }
    }

    pub fn second_derivative(&self, x: f64) -> f64 {
        match *self {
            TerminalCost::Zero | TerminalCost::Linear { .. } => 0.0,
            TerminalCost::SmoothAbs { coef, delta } => {
                let r2 = x * x + delta * delta;
                coef * delta * delta / (r2 * r2.sqrt())
            }
            TerminalCost::Kink { .. } => 0.0,
        }
    }
}

/// Initial density `m_0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Density {
    Uniform { a: f64, b: f64 },
    /// Triangular hat of the given half width.
    Hat { center: f64, half_width: f64 },
    /// `(1 - s^2)^3` bump, `s = (x - center) / half_width`.
    Bump { center: f64, half_width: f64 },
    Cauchy { center: f64, scale: f64 },
    /// Piecewise-linear density through `(knots[i], values[i])`, normalised to
    /// unit mass and zero outside the knots.
    Tabulated { knots: Vec<f64>, values: Vec<f64> },
}

const BUMP_NORM: f64 = 35.0 / 32.0;

impl Density {
    pub fn validate(&self) -> Result<()> {
        match self {
            Density::Uniform { a, b } if !(b > a) => Err(Error::Input("uniform density needs a < b".into())),
            Density::Hat { half_width, .. } | Density::Bump { half_width, .. } if !(*half_width > 0.0) => {
                Err(Error::Input("density half width must be positive".into()))
            }
            Density::Cauchy { scale, .. } if !(*scale > 0.0) => {
                Err(Error::Input("Cauchy scale must be positive".into()))
            }
            Density::Tabulated { knots, values } => {
                if knots.len() < 2 || knots.len() != values.len() {
                    return Err(Error::Input("tabulated density needs >= 2 matching knots/values".into()));
                }
                if knots.windows(2).any(|w| !(w[1] > w[0])) {
                    return Err(Error::Input("tabulated knots must increase".into()));
                }
                if values.iter().any(|v| !(*v >= 0.0)) || self.tabulated_mass() <= 0.0 {
                    return Err(Error::Input("tabulated density must be nonnegative with mass".into()));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    fn tabulated_mass(&self) -> f64 {
        match self {
            Density::Tabulated { knots, values } => knots
                .windows(2)
                .zip(values.windows(2))
                .map(|(k, v)| 0.5 * (k[1] - k[0]) * (v[0] + v[1]))
                .sum(),
            _ => 1.0,
        }
    }

    pub fn density(&self, x: f64) -> f64 {
        match self {
            Density::Uniform { a, b } => {
                if x >= *a && x <= *b {
                    1.0 / (b - a)
                } else {
                    0.0
                }
            }
            Density::Hat { center, half_width } => {
                let s = (x - center) / half_width;
                (1.0 - s.abs()).max(0.0) / half_width
            }
            Density::Bump { center, half_width } => {
                let s = (x - center) / half_width;
                if s.abs() >= 1.0 {
                    0.0
                } else {
                    BUMP_NORM * (1.0 - s * s).powi(3) / half_width
                }
            }
            Density::Cauchy { center, scale } => {
                let s = (x - center) / scale;
                1.0 / (PI * scale * (1.0 + s * s))
            }
            Density::Tabulated { knots, values } => {
                if x < knots[0] || x > *knots.last().unwrap() {
                    return 0.0;
                }
                let k = knots.partition_point(|&kx| kx <= x).clamp(1, knots.len() - 1);
                let w = (x - knots[k - 1]) / (knots[k] - knots[k - 1]);
                ((1.0 - w) * values[k - 1] + w * values[k]) / self.tabulated_mass()
            }
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        match self {
            Density::Uniform { a, b } => ((x - a) / (b - a)).clamp(0.0, 1.0),
            Density::Hat { center, half_width } => {
                let s = (x - center) / half_width;
                if s <= -1.0 {
                    0.0
                } else if s <= 0.0 {
                    0.5 * (1.0 + s) * (1.0 + s)
                } else if s < 1.0 {
                    1.0 - 0.5 * (1.0 - s) * (1.0 - s)
                } else {
                    1.0
                }
            }
            Density::Bump { center, half_width } => {
                let s = ((x - center) / half_width).clamp(-1.0, 1.0);
                let s2 = s * s;
                0.5 + BUMP_NORM * s * (1.0 - s2 + 0.6 * s2 * s2 - s2 * s2 * s2 / 7.0)
            }
            Density::Cauchy { center, scale } => 0.5 + ((x - center) / scale).atan() / PI,
            Density::Tabulated { knots, values } => {
                let mass = self.tabulated_mass();
                let mut acc = 0.0;
                for (k, v) in knots.windows(2).zip(values.windows(2)) {
                    if x <= k[0] {
                        break;
                    }
                    let len = k[1] - k[0];
                    if x >= k[1] {
                        acc += 0.5 * len * (v[0] + v[1]);
                    } else {
                        let d = x - k[0];
                        let slope = (v[1] - v[0]) / len;
                        acc += v[0] * d + 0.5 * slope * d * d;
                        break;
                    }
                }
                acc / mass
            }
        }
    }

    /// Points where the density is not smooth; quadrature splits there.
    pub fn breakpoints(&self) -> Vec<f64> {
        match self {
            Density::Uniform { a, b } => vec![*a, *b],
            Density::Hat { center, half_width } => vec![center - half_width, *center, center + half_width],
            Density::Bump { center, half_width } => vec![center - half_width, center + half_width],
            Density::Cauchy { center, .. } => vec![*center],
            Density::Tabulated { knots, .. } => knots.clone(),
        }
    }

    /// Compact support, if any.
    pub fn support(&self) -> Option<(f64, f64)> {
        match self {
            Density::Uniform { a, b } => Some((*a, *b)),
            Density::Hat { center, half_width } | Density::Bump { center, half_width } => {
                Some((center - half_width, center + half_width))
            }
            Density::Cauchy { .. } => None,
            Density::Tabulated { knots, .. } => Some((knots[0], *knots.last().unwrap())),
        }
    }

    /// `int_lo^hi f(x) m_0(x) dx` by Gauss–Legendre on pieces split at the breakpoints.
    pub fn integrate(&self, f: impl Fn(f64) -> f64, lo: f64, hi: f64) -> f64 {
        let mut cuts = vec![lo];
        cuts.extend(self.breakpoints().into_iter().filter(|&b| b > lo && b < hi));
        cuts.push(hi);
        cuts.sort_by(f64::total_cmp);
        let mut total = 0.0;
        for w in cuts.windows(2) {
            total += gauss_legendre(|x| f(x) * self.density(x), w[0], w[1], 64);
        }
        total
    }

    pub fn mean(&self) -> f64 {
        match self.support() {
            Some((a, b)) => self.integrate(|x| x, a, b),
            None => match self {
                Density::Cauchy { center, .. } => *center,
                _ => unreachable!(),
            },
        }
    }
}

/// Composite 5-point Gauss–Legendre quadrature.
pub fn gauss_legendre(f: impl Fn(f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
    const NODES: [f64; 5] = [
        0.0,
        -0.538_469_310_105_683,
        0.538_469_310_105_683,
        -0.906_179_845_938_664,
        0.906_179_845_938_664,
    ];
    const WEIGHTS: [f64; 5] = [
        0.568_888_888_888_889,
        0.478_628_670_499_366,
        0.478_628_670_499_366,
        0.236_926_885_056_189,
        0.236_926_885_056_189,
    ];
    if b <= a {
        return 0.0;
    }
    let h = (b - a) / panels as f64;
    let mut total = 0.0;
    for k in 0..panels {
        let mid = a + (k as f64 + 0.5) * h;
        let half = 0.5 * h;
        let mut s = 0.0;
        for (n, w) in NODES.iter().zip(WEIGHTS) {
            s += w * f(mid + half * n);
        }
        total += s * half;
    }
    total
}

/// Everything that defines an instance besides the Hamiltonian.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProblemData {
    pub horizon: f64,
    pub supply: Supply,
    pub terminal: TerminalCost,
    pub initial: Density,
    /// Moment order of `m_0`; must exceed `gamma1`.
    pub gamma: f64,
}

impl ProblemData {
    pub fn validate(&self) -> Result<()> {
        if !(self.horizon > 0.0) {
            return Err(Error::Input("horizon must be positive".into()));
        }
        self.initial.validate()
    }

    /// Node masses of `m_0` on `x_j = x_min + j dx`, `j = 0..=n`, using the
    /// cell `[x_j - dx/2, x_j + dx/2]` (tails folded into the end cells) and
    /// renormalised to unit mass.
    pub fn node_masses(&self, x_min: f64, dx: f64, n: usize) -> Result<Vec<f64>> {
        let mut masses: Vec<f64> = (0..=n)
            .map(|j| {
                let x = x_min + j as f64 * dx;
                let hi = if j == n { 1.0 } else { self.initial.cdf(x + 0.5 * dx) };
                let lo = if j == 0 { 0.0 } else { self.initial.cdf(x - 0.5 * dx) };
                (hi - lo).max(0.0)
            })
            .collect();
        let total: f64 = masses.iter().sum();
        if !(total > 0.0) {
            return Err(Error::Domain("initial density has no mass on the grid".into()));
        }
        for m in &mut masses {
            *m /= total;
        }
        Ok(masses)
    }
}
