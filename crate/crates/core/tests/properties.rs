use proptest::prelude::*;

use pricemfg::analysis::{mollify_solution, MollifierPair};
use pricemfg::hamiltonian::{legendre_involution_check, legendre_transform, numeric_legendre, HamiltonianSpec, Potential};
use pricemfg::lp::{reference_measure_from, MeasureGrid};
use pricemfg::mfg::{solve_fp_forward, solve_hjb_backward, GridSpec};

fn grid() -> GridSpec {
    GridSpec::new(1.0, 2.0, 32, 32).unwrap()
}

fn potential() -> impl Strategy<Value = Potential> {
    prop_oneof![
        Just(Potential::Zero),
        (0.1..1.0f64, 0.05..0.5f64).prop_map(|(coef, delta)| Potential::SmoothAbs { coef, delta }),
    ]
}

fn spec() -> impl Strategy<Value = HamiltonianSpec> {
    (1.3..3.5f64, potential(), any::<bool>()).prop_map(|(g, v, quad)| {
        if quad {
            HamiltonianSpec::quadratic(v)
        } else {
            HamiltonianSpec::power(g, v)
        }
    })
}

/// Smooth value field with `|u_x| <= 1`.
fn field(g: &GridSpec, a: f64, b: f64, c: f64) -> Vec<Vec<f64>> {
    (0..=g.nt)
        .map(|i| {
            let t = g.t(i);
            g.xs().iter().map(|x| a * x + b * (c * x + t).sin() / c.max(1.0)).collect()
        })
        .collect()
}

fn bump_density(g: &GridSpec, centre: f64, width: f64) -> Vec<f64> {
    let raw: Vec<f64> = g
        .xs()
        .iter()
        .map(|x| {
            let s = (x - centre) / width;
            if s.abs() < 1.0 { (1.0 - s * s).powi(2) } else { 0.0 }
        })
        .collect();
    let mass: f64 = raw.iter().sum::<f64>() * g.dx();
    raw.iter().map(|v| v / mass).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn fp_conserves_mass_and_sign(
        a in -0.5..0.5f64,
        b in -0.5..0.5f64,
        c in 0.5..3.0f64,
        eps in 0.0..0.1f64,
        centre in -0.8..0.8f64,
        width in 0.3..1.0f64,
    ) {
        let g = grid();
        let spec = HamiltonianSpec::quadratic(Potential::Zero);
        let u = field(&g, a, b, c);
        let varpi = vec![-0.5; g.nt + 1];
        let m = solve_fp_forward(&spec, &u, &varpi, eps, &g, &bump_density(&g, centre, width)).unwrap();
        for row in &m {
            let mass: f64 = row.iter().sum::<f64>() * g.dx();
            prop_assert!((mass - 1.0).abs() <= 1e-10, "{mass}");
            prop_assert!(row.iter().all(|v| *v >= -1e-12));
        }
    }

    #[test]
    fn hjb_is_monotone_in_terminal_data(
        a in -0.5..0.5f64,
        c in 0.5..3.0f64,
        lift in 0.0..0.5f64,
        eps in 0.0..0.1f64,
        v in potential(),
    ) {
        let g = grid();
        let spec = HamiltonianSpec::quadratic(v);
        let low: Vec<f64> = g.xs().iter().map(|x| a * x + 0.3 * (c * x).sin() / c).collect();
        // A constant lift shifts the solution by the same constant.
        let high: Vec<f64> = low.iter().map(|u| u + lift).collect();
        let varpi: Vec<f64> = g.ts().iter().map(|t| -0.5 - 0.2 * t).collect();
        let u1 = solve_hjb_backward(&spec, &varpi, eps, &g, &low).unwrap();
        let u2 = solve_hjb_backward(&spec, &varpi, eps, &g, &high).unwrap();
        for (r1, r2) in u1.iter().zip(&u2) {
            for (x, y) in r1.iter().zip(r2) {
                prop_assert!(x <= &(y + 1e-12));
                prop_assert!((y - x - lift).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn legendre_round_trip(s in spec(), x in -2.0..2.0f64, p in -2.0..2.0f64) {
        prop_assert!(legendre_involution_check(&s, &[x], &[p]) <= 1e-5);
    }

    #[test]
    fn lagrangian_is_convex_and_matches_numeric(s in spec(), x in -2.0..2.0f64, v1 in -1.5..1.5f64, v2 in -1.5..1.5f64) {
        let lag = s.lagrangian();
        let mid = 0.5 * (v1 + v2);
        prop_assert!(lag.l(x, mid) <= 0.5 * (lag.l(x, v1) + lag.l(x, v2)) + 1e-12);
        let closed = legendre_transform(&s, x, v1).unwrap();
        let numeric = numeric_legendre(&s, x, v1).unwrap();
        prop_assert!((closed - numeric).abs() <= 1e-6 * (1.0 + closed.abs()), "{closed} {numeric}");
    }

    #[test]
    fn mollification_is_bounded_by_the_data(a in -1.0..1.0f64, b in -1.0..1.0f64, c in 0.5..4.0f64, alpha in 0.1..0.25f64) {
        let g = GridSpec::new(1.0, 2.0, 32, 128).unwrap();
        let u = field(&g, a, b, c);
        let (lo, hi) = u.iter().flatten().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(*v), h.max(*v)));
        let pair = MollifierPair::new(alpha, g.dt(), g.dx()).unwrap();
        let m = mollify_solution(&u, &pair, &g).unwrap();
        prop_assert!(m.u.iter().flatten().all(|v| *v >= lo - 1e-12 && *v <= hi + 1e-12));
    }

    #[test]
    fn reference_measure_satisfies_displacement(
        q in prop::collection::vec(-1.0..1.0f64, 8),
        w in prop::collection::vec(0.0..1.0f64, 17),
    ) {
        let spec = HamiltonianSpec::quadratic(Potential::Zero);
        let grid = MeasureGrid::new(&spec, 1.0, 8, 2.0, 16, 2.0, 8).unwrap();
        let total: f64 = w.iter().sum::<f64>().max(1e-9);
        // Keep mass off the outer nodes so the drift stays inside the box.
        let m0: Vec<f64> = w.iter().enumerate().map(|(j, v)| if (4..=12).contains(&j) { v / total } else { 0.0 }).collect();
        let s: f64 = m0.iter().sum();
        prop_assume!(s > 0.1);
        let m0: Vec<f64> = m0.iter().map(|v| v / s).collect();
        let mu = reference_measure_from(&grid, &m0, &q).unwrap();
        let mean0: f64 = m0.iter().enumerate().map(|(j, m)| m * grid.x(j)).sum();
        let supply: f64 = q.iter().sum::<f64>() * grid.dt();
        prop_assert!((mu.nu_mean() - mean0 - supply).abs() <= 1e-12);
        prop_assert!(mu.slice_masses().iter().all(|m| (m - grid.dt()).abs() <= 1e-14));
    }
}
