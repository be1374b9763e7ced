use num_rational::BigRational;
use num_traits::Zero;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pricemfg::hamiltonian::{HamiltonianSpec, Potential};
use pricemfg::lp::{
    assemble_constraints, assemble_with_cost, brute_force_lp_oracle, reference_measure, solve_primal,
    verify_conjugate_bound, ConstraintSystem, MeasureGrid, NuMode, OracleOutcome, PdhgOptions, RowKind, TestFunction,
};
use pricemfg::problem::{Density, ProblemData, Supply, TerminalCost};
use pricemfg::Error;

fn exact(v: f64) -> BigRational {
    BigRational::from_float(v).expect("finite")
}

/// Dyadic grid: every matrix entry, node and supply average is exact in
/// binary, so the identities below hold without round-off.
fn dyadic_system(nu_mode: NuMode) -> ConstraintSystem {
    let spec = HamiltonianSpec::quadratic(Potential::Zero);
    let grid = MeasureGrid::new(&spec, 1.0, 4, 1.0, 4, 1.0, 4).unwrap();
    let m0 = vec![0.0, 0.25, 0.5, 0.25, 0.0];
    let qbar = vec![0.5, 0.25, -0.25, 0.5];
    assemble_with_cost(&grid, &m0, &qbar, nu_mode, |_, x, v| Ok(0.5 * v * v + x)).unwrap()
}

/// `(A^T y)_c` and `b.y` in exact arithmetic.
fn exact_pairing(cs: &ConstraintSystem, y: &[BigRational]) -> (Vec<BigRational>, BigRational) {
    let mut aty = vec![BigRational::zero(); cs.n_cols()];
    for (r, c, v) in cs.a.triplets() {
        aty[c] += exact(v) * &y[r];
    }
    let by = cs.b.iter().zip(y).fold(BigRational::zero(), |acc, (b, y)| acc + exact(*b) * y);
    (aty, by)
}

#[test]
fn time_test_function_is_annihilated_exactly() {
    // phi = t on holonomy rows, -dt on slice rows, T on the terminal row.
    let cs = dyadic_system(NuMode::Free);
    let g = &cs.grid;
    let y: Vec<BigRational> = cs
        .rows
        .iter()
        .map(|row| match *row {
            RowKind::Holonomy { n, .. } => exact(g.t(n)),
            RowKind::Balance { .. } => BigRational::zero(),
            RowKind::SliceMass { .. } => -exact(g.dt()),
            RowKind::TerminalMass => exact(g.horizon),
        })
        .collect();
    let (aty, by) = exact_pairing(&cs, &y);
    assert!(aty.iter().all(Zero::is_zero));
    assert!(by.is_zero());
}

#[test]
fn space_test_function_gives_displacement_exactly() {
    // phi = x with the balance multiplier -dt and slice multiplier -dt Qbar:
    // every column is annihilated and b.y = mean(nu) - mean(m0) - sum Qbar dt.
    let nu = vec![0.0, 0.0, 0.25, 0.5, 0.25];
    let cs = dyadic_system(NuMode::Fixed(nu.clone()));
    let g = &cs.grid;
    let y: Vec<BigRational> = cs
        .rows
        .iter()
        .map(|row| match *row {
            RowKind::Holonomy { l, .. } => exact(g.x(l)),
            RowKind::Balance { .. } => -exact(g.dt()),
            RowKind::SliceMass { i } => -exact(g.dt()) * exact(cs.qbar[i]),
            RowKind::TerminalMass => BigRational::zero(),
        })
        .collect();
    let (aty, by) = exact_pairing(&cs, &y);
    assert!(aty.iter().all(Zero::is_zero));
    let mean = |m: &[f64]| (0..m.len()).fold(BigRational::zero(), |acc, l| acc + exact(g.x(l)) * exact(m[l]));
    let drift = cs.qbar.iter().fold(BigRational::zero(), |acc, q| acc + exact(*q) * exact(g.dt()));
    assert_eq!(by, mean(&nu) - mean(&cs.m0) - drift);
    assert!(!by.is_zero());
}

#[test]
fn slice_rows_sum_to_horizon_on_feasible_points() {
    let cs = dyadic_system(NuMode::Free);
    let sol = solve_primal(&cs, &PdhgOptions::default()).unwrap();
    let total: f64 = sol.measure.slice_masses().iter().sum();
    assert!((total - cs.grid.horizon).abs() < 1e-9);
}

#[test]
fn triplet_text_round_trip() {
    let cs = dyadic_system(NuMode::Free);
    let (a, b, c) = ConstraintSystem::parse_triplet_text(&cs.to_triplet_text()).unwrap();
    assert_eq!(a, cs.a);
    assert_eq!(b, cs.b);
    assert_eq!(c, cs.c);
    assert!(ConstraintSystem::parse_triplet_text("2 2").is_err());
}

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
fn conjugate_bound_examples() {
    let spec = HamiltonianSpec::quadratic(Potential::Zero);
    let grid = MeasureGrid::new(&spec, 1.0, 8, 3.0, 12, 2.0, 8).unwrap();
    let data = lq0();
    let cs = assemble_constraints(&grid, &spec, &data, NuMode::Free).unwrap();
    let mu = reference_measure(&grid, &data).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut tests = vec![TestFunction::Cost, TestFunction::Zero];
    for _ in 0..20 {
        tests.push(TestFunction::Values((0..cs.n_cols()).map(|_| rng.gen_range(-3.0..3.0)).collect()));
    }
    let report = verify_conjugate_bound(&cs, &mu, &tests).unwrap();
    assert!(report.mass_defect < 1e-12);
    assert!(report.margins[0].abs() < 1e-12, "{}", report.margins[0]);
    assert!(report.margins[1] <= 1e-12);
    assert!(report.max_margin <= 1e-12, "{report:?}");
}

/// Random small LP on a 2 x 3 x 3 grid with random costs.
fn random_toy(rng: &mut ChaCha8Rng, nu_mode: Option<NuMode>) -> pricemfg::Result<ConstraintSystem> {
    let spec = HamiltonianSpec::quadratic(Potential::Zero);
    let grid = MeasureGrid::new(&spec, 1.0, 2, 1.0, 2, 1.0, 2).unwrap();
    let mut m0: Vec<f64> = (0..3).map(|_| rng.gen_range(0.0..1.0)).collect();
    let s: f64 = m0.iter().sum();
    m0.iter_mut().for_each(|m| *m /= s);
    let qbar: Vec<f64> = (0..2).map(|_| rng.gen_range(-0.4..0.4)).collect();
    let costs: Vec<f64> = (0..18).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut next = 0;
    assemble_with_cost(&grid, &m0, &qbar, nu_mode.unwrap_or(NuMode::Free), |_, _, _| {
        next += 1;
        Ok(costs[next - 1])
    })
}

#[test]
fn randomized_toys_match_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut optimal, mut infeasible) = (0, 0);
    for instance in 0..16 {
        let cs = random_toy(&mut rng, None).unwrap();
        assert!(cs.n_cols() <= 200);
        let oracle = brute_force_lp_oracle(&cs).unwrap();
        for crash in [true, false] {
            let opts = PdhgOptions {
                tol: 1e-11,
                crash,
                ..PdhgOptions::default()
            };
            let sol = solve_primal(&cs, &opts);
            match &oracle {
                OracleOutcome::Optimal { value, .. } => {
                    let v = sol.unwrap().value;
                    assert!((v - value).abs() <= 1e-7, "instance {instance} crash {crash}: {v} vs {value}");
                }
                OracleOutcome::Infeasible => {
                    assert!(matches!(sol, Err(Error::Infeasible(_))), "instance {instance}: {sol:?}")
                }
                OracleOutcome::Unbounded => panic!("instance {instance} unbounded"),
            }
        }
        match oracle {
            OracleOutcome::Optimal { .. } => optimal += 1,
            _ => infeasible += 1,
        }
    }
    assert!(optimal >= 10, "{optimal} feasible, {infeasible} infeasible");
}

#[test]
fn infeasible_toys_are_flagged_by_both() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let spec = HamiltonianSpec::quadratic(Potential::Zero);
    let grid = MeasureGrid::new(&spec, 1.0, 2, 1.0, 2, 1.0, 2).unwrap();
    // Supply faster than any velocity node.
    let m0 = vec![0.25, 0.5, 0.25];
    let fast = assemble_with_cost(&grid, &m0, &[1.5, 1.5], NuMode::Free, |_, _, v| Ok(v * v)).unwrap();
    // Terminal law with the wrong mean.
    let shifted = assemble_with_cost(&grid, &m0, &[0.0, 0.0], NuMode::Fixed(vec![0.0, 0.25, 0.75]), |_, _, v| Ok(v * v)).unwrap();
    let mut cases = vec![fast, shifted];
    for _ in 0..3 {
        let mut nu: Vec<f64> = (0..3).map(|_| rng.gen_range(0.0..1.0)).collect();
        let s: f64 = nu.iter().sum();
        nu.iter_mut().for_each(|m| *m /= s);
        cases.push(random_toy(&mut rng, Some(NuMode::Fixed(nu))).unwrap());
    }
    for (n, cs) in cases.iter().enumerate() {
        let oracle = brute_force_lp_oracle(cs).unwrap();
        let pdhg = solve_primal(cs, &PdhgOptions::default());
        match oracle {
            OracleOutcome::Infeasible => assert!(matches!(pdhg, Err(Error::Infeasible(_))), "case {n}: {pdhg:?}"),
            OracleOutcome::Optimal { value, .. } => {
                assert!((pdhg.unwrap().value - value).abs() <= 1e-7, "case {n}");
            }
            OracleOutcome::Unbounded => panic!("case {n} unbounded"),
        }
    }
    assert!(matches!(brute_force_lp_oracle(&cases[0]).unwrap(), OracleOutcome::Infeasible));
}
