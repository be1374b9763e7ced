//! Sampled verification of the standing structural assumptions on an instance.

use serde::Serialize;

use crate::hamiltonian::HamiltonianSpec;
use crate::problem::ProblemData;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckStatus {
    Pass,
    Fail,
    NotChecked,
}

/// Outcome of one assumption. `margin` is the worst slack of its
/// inequalities over the samples (negative means violated) and `witness` the
/// `(x, p)` point where it was attained.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AssumptionCheck {
    pub id: &'static str,
    pub name: &'static str,
    pub status: CheckStatus,
    pub margin: Option<f64>,
    pub witness: Option<(f64, f64)>,
    pub note: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AssumptionReport {
    pub checks: Vec<AssumptionCheck>,
    /// Tensor axes of the sampled `(x, p)` box.
    pub sample_x: Vec<f64>,
    pub sample_p: Vec<f64>,
}

impl AssumptionReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.status == CheckStatus::Pass)
    }

    pub fn get(&self, id: &str) -> Option<&AssumptionCheck> {
        self.checks.iter().find(|c| c.id == id)
    }

    pub fn failures(&self) -> impl Iterator<Item = &AssumptionCheck> {
        self.checks.iter().filter(|c| c.status == CheckStatus::Fail)
    }
}

/// Bounded `(x, p)` box sampled on a tensor grid.
#[derive(Clone, Debug, PartialEq, Serialize, serde::Deserialize)]
pub struct SampleBox {
    pub x_range: (f64, f64),
    pub p_range: (f64, f64),
    pub nx: usize,
    pub np: usize,
}

impl Default for SampleBox {
    fn default() -> Self {
        SampleBox {
            x_range: (-5.0, 5.0),
            p_range: (-5.0, 5.0),
            nx: 201,
            np: 201,
        }
    }
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n <= 1 {
        return vec![0.5 * (lo + hi)];
    }
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

/// Tracks the smallest slack seen and where.
struct Worst {
    margin: f64,
    at: (f64, f64),
}

impl Worst {
    fn new() -> Self {
        Worst {
            margin: f64::INFINITY,
            at: (f64::NAN, f64::NAN),
        }
    }

    fn see(&mut self, slack: f64, x: f64, p: f64) {
        // NaN slack counts as a violation.
        let slack = if slack.is_nan() { f64::NEG_INFINITY } else { slack };
        if slack < self.margin {
            self.margin = slack;
            self.at = (x, p);
        }
    }

    fn into_check(self, id: &'static str, name: &'static str, tol: f64, note: String) -> AssumptionCheck {
        let pass = self.margin >= -tol;
        AssumptionCheck {
            id,
            name,
            status: if pass { CheckStatus::Pass } else { CheckStatus::Fail },
            margin: Some(self.margin),
            witness: Some(self.at),
            note,
        }
    }
}

const TOL: f64 = 1e-9;

/// Checks each standing assumption on the sample box and reports pass/fail
/// with the worst sample.
pub fn validate_assumptions(spec: &HamiltonianSpec, data: &ProblemData, sample: &SampleBox) -> AssumptionReport {
    let xs = linspace(sample.x_range.0, sample.x_range.1, sample.nx);
    let ps = linspace(sample.p_range.0, sample.p_range.1, sample.np);
    let c = spec.growth_c;
    let mut checks = Vec::new();

    // uniform convexity
    let mut w = Worst::new();
    for &x in &xs {
        for &p in &ps {
            w.see(spec.hpp(x, p) - spec.kappa, x, p);
        }
    }
    checks.push(w.into_check("convexity", "uniform convexity H_pp >= kappa", TOL, format!("kappa = {}", spec.kappa)));

    // growth sandwich and derivative bounds
    let mut w = Worst::new();
    let (g1, g2) = (spec.gamma1, spec.gamma2);
    for &x in &xs {
        for &p in &ps {
            let h = spec.h(x, p);
            let ax = x.abs().powf(g1);
            let ap = p.abs().powf(g2);
            let lower = -spec.growth_c2 * ax + ap / (c * g2) - c;
            let upper = -spec.growth_c1 * ax + ap * c / g2 + c;
            w.see(h - lower, x, p);
            w.see(upper - h, x, p);
            w.see(c * (ap + 1.0) - spec.hx(x, p).abs(), x, p);
            w.see(c * (p.abs().powf(g2 - 1.0) + 1.0) - spec.hp(x, p).abs(), x, p);
        }
    }
    let note = format!("C = {c}, C1 = {}, C2 = {}, gamma1 = {g1}, gamma2 = {g2}", spec.growth_c1, spec.growth_c2);
    checks.push(w.into_check("growth", "growth bounds on H, H_x, H_p", TOL, note));

    // u_T in C^1 with bounded derivative
    let mut w = Worst::new();
    let fd = 1e-6;
    for &x in &xs {
        let d = data.terminal.derivative(x);
        w.see(c - d.abs(), x, 0.0);
        // One-sided quotients must agree; a kink shows up as a jump.
        let u0 = data.terminal.value(x);
        let right = (data.terminal.value(x + fd) - u0) / fd;
        let left = (u0 - data.terminal.value(x - fd)) / fd;
        w.see(1e-3 * (1.0 + d.abs()) - (right - left).abs(), x, 0.0);
        w.see(1e-3 * (1.0 + d.abs()) - (0.5 * (right + left) - d).abs(), x, 0.0);
    }
    checks.push(w.into_check("terminal_regularity", "u_T in C^1 with |u_T'| <= C", TOL, String::new()));

    // smooth supply
    let mut w = Worst::new();
    for &t in &linspace(0.0, data.horizon, 101) {
        let q = data.supply.value(t);
        let dq = data.supply.derivative(t);
        w.see(if q.is_finite() && dq.is_finite() { 0.0 } else { -1.0 }, t, 0.0);
    }
    let mut smooth = w.into_check("supply_smooth", "supply Q smooth on [0,T]", TOL, "witness is (t, 0)".into());
    if !data.supply.is_smooth() {
        smooth.status = CheckStatus::Fail;
    }
    checks.push(smooth);

    checks.push(moment_check(spec, data, sample));

    // separability with bounded H_pp, H_ppp
    if spec.separable {
        let mut w = Worst::new();
        let v0 = spec.v(0.0);
        for &x in &xs {
            for &p in &ps {
                let split = spec.h(0.0, p) - (spec.v(x) - v0);
                w.see(1e-10 * (1.0 + split.abs()) - (spec.h(x, p) - split).abs(), x, p);
                w.see(c - spec.hpp(x, p).abs(), x, p);
                w.see(c - spec.hppp(x, p).abs(), x, p);
            }
        }
        checks.push(w.into_check("separable", "separable H with bounded H_pp, H_ppp", TOL, String::new()));
    } else {
        checks.push(AssumptionCheck {
            id: "separable",
            name: "separable H with bounded H_pp, H_ppp",
            status: CheckStatus::Fail,
            margin: None,
            witness: Some((f64::NAN, f64::NAN)),
            note: "Hamiltonian declared non-separable".into(),
        });
    }

    // Lipschitz V, u_T with bounded second derivatives
    let mut w = Worst::new();
    for &x in &xs {
        w.see(c - spec.v_prime(x).abs(), x, 0.0);
        w.see(c - data.terminal.derivative(x).abs(), x, 0.0);
        w.see(c - spec.potential.second_derivative(x).abs(), x, 0.0);
        w.see(c - data.terminal.second_derivative(x).abs(), x, 0.0);
    }
    checks.push(w.into_check(
        "lipschitz_data",
        "V, u_T globally Lipschitz with bounded second derivatives",
        TOL,
        "regularity of m_0 is not sampled".into(),
    ));

    // convexity of V and u_T (midpoint test on neighbours and pairs)
    let mut w = Worst::new();
    let stride = (xs.len() / 25).max(1);
    for (i, &a) in xs.iter().enumerate().step_by(stride) {
        for &b in xs.iter().skip(i) {
            let mid = 0.5 * (a + b);
            let gap_v = 0.5 * (spec.v(a) + spec.v(b)) - spec.v(mid);
            let gap_u = 0.5 * (data.terminal.value(a) + data.terminal.value(b)) - data.terminal.value(mid);
            w.see(gap_v, a, b);
            w.see(gap_u, a, b);
        }
    }
    checks.push(w.into_check("convex_data", "V and u_T convex", 1e-12, "witness is the pair (a, b)".into()));

    AssumptionReport {
        checks,
        sample_x: xs,
        sample_p: ps,
    }
}

/// Moment of order `gamma` by quadrature on nested boxes `[-B 2^k, B 2^k]`.
/// Flags non-convergence of the sequence, or `gamma <= gamma1`.
fn moment_check(spec: &HamiltonianSpec, data: &ProblemData, sample: &SampleBox) -> AssumptionCheck {
    let m0 = &data.initial;
    let gamma = data.gamma;
    let base = sample.x_range.0.abs().max(sample.x_range.1.abs()).max(1.0);
    let levels = 14;
    let mut moments = Vec::with_capacity(levels);
    let mut acc = 0.0;
    let mut prev = 0.0_f64;
    let mut mass = 0.0;
    for k in 0..levels {
        let b = base * 2f64.powi(k as i32);
        // Shells keep the quadrature resolution proportional to the box.
        acc += m0.integrate(|x| x.abs().powf(gamma), -b, -prev) + m0.integrate(|x| x.abs().powf(gamma), prev, b);
        mass = m0.cdf(b) - m0.cdf(-b);
        moments.push(acc);
        prev = b;
    }
    let last = moments[levels - 1];
    let before = moments[levels - 2];
    let rel_growth = (last - before) / (1.0 + last.abs());
    let nonneg = data.initial.validate().is_ok();
    let mut margin = 1e-6 - rel_growth;
    let mut note = format!(
        "gamma = {gamma}, moments on nested boxes end at {before:.6e} -> {last:.6e}, mass {mass:.9}"
    );
    if !(gamma > spec.gamma1) {
        margin = margin.min(gamma - spec.gamma1);
        note.push_str("; gamma must exceed gamma1");
    }
    if !nonneg {
        margin = margin.min(-1.0);
        note.push_str("; density invalid");
    }
    AssumptionCheck {
        id: "initial_moment",
        name: "m_0 probability with finite moment of order gamma > gamma1",
        status: if margin >= 0.0 { CheckStatus::Pass } else { CheckStatus::Fail },
        margin: Some(margin),
        witness: Some((prev, last)),
        note,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hamiltonian::Potential;
    use crate::problem::{Density, Supply, TerminalCost};

    fn lq0() -> ProblemData {
        ProblemData {
            horizon: 1.0,
            supply: Supply::Constant { value: 1.0 },
            terminal: TerminalCost::Zero,
            initial: Density::Uniform { a: -1.0, b: 1.0 },
            gamma: 2.0,
        }
    }

    #[test]
    fn lq0_passes_everything() {
        let spec = HamiltonianSpec::quadratic(Potential::Zero);
        let report = validate_assumptions(&spec, &lq0(), &SampleBox::default());
        for c in &report.checks {
            assert_eq!(c.status, CheckStatus::Pass, "{c:?}");
        }
        assert_eq!(report.sample_x.len(), 201);
    }

    #[test]
    fn misdeclared_kappa_fails_with_witness() {
        let spec = HamiltonianSpec::quadratic(Potential::Zero).with_kappa(2.0);
        let report = validate_assumptions(&spec, &lq0(), &SampleBox::default());
        let c = report.get("convexity").unwrap();
        assert_eq!(c.status, CheckStatus::Fail);
        assert!((c.margin.unwrap() + 1.0).abs() < 1e-12);
        assert!(c.witness.is_some());
    }

    #[test]
    fn heavy_tail_flags_moment() {
        // Oracle: the truncated second moment of a Cauchy law grows linearly
        // in the box size, so successive nested boxes never settle.
        let mut data = lq0();
        data.initial = Density::Cauchy { center: 0.0, scale: 1.0 };
        let spec = HamiltonianSpec::quadratic(Potential::Zero);
        let small = data.initial.integrate(|x| x * x, -100.0, 100.0);
        let large = data.initial.integrate(|x| x * x, -200.0, 200.0);
        assert!(large - small > 0.5 * small);
        let report = validate_assumptions(&spec, &data, &SampleBox::default());
        assert_eq!(report.get("initial_moment").unwrap().status, CheckStatus::Fail);
    }

    #[test]
    fn builtins_with_potential_pass() {
        let mut data = lq0();
        data.terminal = TerminalCost::SmoothAbs { coef: 0.5, delta: 0.3 };
        for spec in [
            HamiltonianSpec::quadratic(Potential::SmoothAbs { coef: 1.0, delta: 0.2 }),
            HamiltonianSpec::power(2.0, Potential::SmoothAbs { coef: 1.0, delta: 0.2 }),
        ] {
            let report = validate_assumptions(&spec, &data, &SampleBox::default());
            let failed: Vec<_> = report.failures().collect();
            assert!(failed.is_empty(), "{}: {failed:?}", spec.family_name());
        }
    }

    #[test]
    fn steep_power_family_has_unbounded_hpp() {
        // H_pp = 3(1 + 2p^2)/sqrt(1 + p^2) grows linearly, so no constant bounds it.
        let spec = HamiltonianSpec::power(3.0, Potential::Zero);
        let report = validate_assumptions(&spec, &lq0(), &SampleBox::default());
        let c = report.get("separable").unwrap();
        assert_eq!(c.status, CheckStatus::Fail);
        assert_eq!(c.witness.unwrap().1.abs(), 5.0);
    }

    #[test]
    fn kink_terminal_cost_fails_c1() {
        let mut data = lq0();
        data.terminal = TerminalCost::Kink { coef: 1.0 };
        let spec = HamiltonianSpec::quadratic(Potential::Zero);
        let report = validate_assumptions(&spec, &data, &SampleBox::default());
        assert_eq!(report.get("terminal_regularity").unwrap().status, CheckStatus::Fail);
    }

    #[test]
    fn report_serialises() {
        let spec = HamiltonianSpec::quadratic(Potential::Zero);
        let report = validate_assumptions(&spec, &lq0(), &SampleBox { nx: 5, np: 5, ..SampleBox::default() });
        let json = serde_json::to_value(&report).unwrap();
        assert_eq!(json["checks"][0]["status"], "pass");
    }
}
