use pricemfg::hamiltonian::{HamiltonianSpec, Potential};
use pricemfg::mfg::{
    fixed_point_solve, solve_hjb_backward, vanishing_viscosity_sweep, GridSpec, PriceRule, SampledData, SolverOptions,
};
use pricemfg::problem::{Density, ProblemData, Supply, TerminalCost};

fn lq(supply: Supply, terminal: TerminalCost) -> ProblemData {
    ProblemData {
        horizon: 1.0,
        supply,
        terminal,
        initial: Density::Uniform { a: -1.0, b: 1.0 },
        gamma: 2.0,
    }
}

fn sup_dist(a: &[f64], f: impl Fn(usize) -> f64) -> f64 {
    a.iter().enumerate().map(|(i, v)| (v - f(i)).abs()).fold(0.0, f64::max)
}

#[test]
fn lq0_price_is_minus_one() {
    let spec = HamiltonianSpec::quadratic(Potential::Zero);
    let grid = GridSpec::new(1.0, 3.0, 64, 64).unwrap();
    let data = SampledData::from_problem(&lq(Supply::Constant { value: 1.0 }, TerminalCost::Zero), &grid).unwrap();
    let sol = fixed_point_solve(&spec, &data, &grid, 0.05, &SolverOptions::default(), None).unwrap();
    assert!(sol.iterations <= 30);
    assert!(sup_dist(&sol.varpi, |_| -1.0) <= 5e-3);
    assert!(sol.mass_defect() <= 1e-10);
}

#[test]
fn lq_lin_price_is_minus_two() {
    let spec = HamiltonianSpec::quadratic(Potential::Zero);
    let grid = GridSpec::new(1.0, 4.0, 64, 64).unwrap();
    let data = SampledData::from_problem(
        &lq(Supply::Constant { value: 1.0 }, TerminalCost::Linear { slope: 1.0 }),
        &grid,
    )
    .unwrap();
    for rule in [PriceRule::Balance, PriceRule::Ode] {
        // The ODE path does not see the mass parked on the end node.
        let options = SolverOptions { rule, balance_tol: 1e-4, ..SolverOptions::default() };
        let sol = fixed_point_solve(&spec, &data, &grid, 0.05, &options, None).unwrap();
        assert!(sol.boundary_mass() < 1e-4);
        assert!(sup_dist(&sol.varpi, |_| -2.0) <= 5e-3, "{rule:?}");
    }
}

#[test]
fn zero_supply_converges_at_once() {
    let spec = HamiltonianSpec::quadratic(Potential::Zero);
    let grid = GridSpec::new(1.0, 3.0, 16, 32).unwrap();
    let data = SampledData::from_problem(&lq(Supply::Constant { value: 0.0 }, TerminalCost::Zero), &grid).unwrap();
    let sol = fixed_point_solve(&spec, &data, &grid, 0.1, &SolverOptions::default(), None).unwrap();
    assert_eq!(sol.iterations, 1);
    assert!(sol.varpi.iter().all(|w| w.abs() < 1e-12));
    assert!(sol.u.iter().flatten().all(|v| v.abs() < 1e-12));
}

#[test]
fn cosine_supply_price_tracks_minus_supply() {
    let spec = HamiltonianSpec::quadratic(Potential::Zero);
    let grid = GridSpec::new(1.0, 3.0, 64, 64).unwrap();
    let data = SampledData::from_problem(
        &lq(Supply::Cosine { amplitude: 1.0, frequency: 1.0 }, TerminalCost::Zero),
        &grid,
    )
    .unwrap();
    for rule in [PriceRule::Balance, PriceRule::Ode] {
        let options = SolverOptions { rule, ..SolverOptions::default() };
        let sol = fixed_point_solve(&spec, &data, &grid, 0.0, &options, None).unwrap();
        let err = sup_dist(&sol.varpi, |i| -(2.0 * std::f64::consts::PI * grid.t(i)).cos());
        assert!(err <= 1e-3, "{rule:?}: {err}");
    }
}

#[test]
fn hjb_comparison_over_random_pairs() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
    let spec = HamiltonianSpec::quadratic(Potential::SmoothAbs { coef: 0.5, delta: 0.2 });
    let grid = GridSpec::new(1.0, 2.0, 32, 32).unwrap();
    let varpi: Vec<f64> = grid.ts().iter().map(|t| -0.5 - 0.3 * t).collect();
    for _ in 0..20 {
        // Lipschitz random data keeps the explicit step monotone.
        let mut low = Vec::with_capacity(33);
        let mut acc = rng.gen_range(-1.0..1.0);
        for _ in 0..33 {
            acc += rng.gen_range(-0.05..0.05);
            low.push(acc);
        }
        // Keep the linear extensions ordered too: the gap may not shrink
        // towards either end.
        let mut gap: Vec<f64> = (0..33).map(|_| rng.gen_range(0.0..0.05)).collect();
        gap[0] = gap[0].max(gap[1]);
        gap[32] = gap[32].max(gap[31]);
        let high: Vec<f64> = low.iter().zip(&gap).map(|(v, g)| v + g).collect();
        let eps = rng.gen_range(0.0..0.1);
        let u1 = solve_hjb_backward(&spec, &varpi, eps, &grid, &low).unwrap();
        let u2 = solve_hjb_backward(&spec, &varpi, eps, &grid, &high).unwrap();
        for (r1, r2) in u1.iter().zip(&u2) {
            for (a, b) in r1.iter().zip(r2) {
                assert!(*a <= b + 1e-12);
            }
        }
    }
}

#[test]
fn lq0_sweep_is_flat() {
    let spec = HamiltonianSpec::quadratic(Potential::Zero);
    let grid = GridSpec::new(1.0, 3.0, 32, 64).unwrap();
    let data = SampledData::from_problem(&lq(Supply::Constant { value: 1.0 }, TerminalCost::Zero), &grid).unwrap();
    let sweep = vanishing_viscosity_sweep(&spec, &data, &grid, &[0.1, 0.05, 0.025], &SolverOptions::default()).unwrap();
    for sol in &sweep.solutions {
        assert!(sup_dist(&sol.varpi, |_| -1.0) <= 1e-2);
        assert!(sol.mass_defect() <= 1e-10);
    }
    assert!(sup_dist(&sweep.extrapolated_varpi, |_| -1.0) <= 1e-2);
}

#[test]
fn smooth_potential_sweep_converges() {
    let spec = HamiltonianSpec::quadratic(Potential::SmoothAbs { coef: 1.0, delta: 0.2 });
    let grid = GridSpec::new(1.0, 3.0, 64, 64).unwrap();
    let data = SampledData::from_problem(
        &lq(Supply::Cosine { amplitude: 1.0, frequency: 1.0 }, TerminalCost::Zero),
        &grid,
    )
    .unwrap();
    let schedule = [0.1, 0.05, 0.025, 0.0125];
    let sweep = vanishing_viscosity_sweep(&spec, &data, &grid, &schedule, &SolverOptions::default()).unwrap();
    for s in &sweep.solutions {
        eprintln!(
            "eps {} iters {} lip {:.4} resid {:.2e} bmass {:.2e}",
            s.epsilon,
            s.iterations,
            s.price_lipschitz(),
            s.balance_residual.iter().fold(0.0f64, |a, b| a.max(b.abs())),
            s.boundary_mass()
        );
    }
    eprintln!("gaps {:?}", sweep.consecutive_gaps);
    for w in sweep.consecutive_gaps.windows(2) {
        assert!(w[1] <= w[0] + 1e-9);
    }
}
