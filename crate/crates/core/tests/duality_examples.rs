use pricemfg::duality::{dual_value, gap_report, measure_cost, GapOptions, LadderLevel, LpBackend};
use pricemfg::hamiltonian::{HamiltonianSpec, Potential};
use pricemfg::lp::{
    assemble_constraints, brute_force_lp_oracle, induced_measure, reference_measure, DiscreteMeasure, MeasureGrid,
    NuMode,
};
use pricemfg::mfg::{fixed_point_solve, vanishing_viscosity_sweep, GridSpec, SampledData, SolverOptions};
use pricemfg::problem::{Density, ProblemData, Supply, TerminalCost};

fn lq(q: f64, slope: f64) -> ProblemData {
    ProblemData {
        horizon: 1.0,
        supply: Supply::Constant { value: q },
        terminal: if slope == 0.0 { TerminalCost::Zero } else { TerminalCost::Linear { slope } },
        initial: Density::Uniform { a: -1.0, b: 1.0 },
        gamma: 2.0,
    }
}

fn quadratic() -> HamiltonianSpec {
    HamiltonianSpec::quadratic(Potential::Zero)
}

#[test]
fn dual_value_examples() {
    let spec = quadratic();
    let grid = GridSpec::new(1.0, 4.0, 32, 64).unwrap();
    // Closed forms: T(q^2/2 + q c).
    for (q, c, expected, tol) in [(1.0, 0.0, 0.5, 1e-2), (1.0, 1.0, 1.5, 3e-2), (0.0, 0.0, 0.0, 1e-12)] {
        let data = lq(q, c);
        let sampled = SampledData::from_problem(&data, &grid).unwrap();
        let sol = fixed_point_solve(&spec, &sampled, &grid, 0.0, &SolverOptions::default(), None).unwrap();
        let d = dual_value(&sol, &data).unwrap();
        assert!((d - expected).abs() <= tol, "q {q} c {c}: {d}");
    }
}

#[test]
fn measure_cost_examples() {
    let spec = quadratic();
    let grid = MeasureGrid::new(&spec, 1.0, 16, 4.0, 32, 2.0, 16).unwrap();

    let data = lq(1.0, 0.0);
    let cs = assemble_constraints(&grid, &spec, &data, NuMode::Free).unwrap();
    let cost = measure_cost(&cs, &reference_measure(&grid, &data).unwrap()).unwrap();
    assert!((cost - 0.5).abs() <= 5e-3, "{cost}");

    let rest = lq(0.0, 0.0);
    let cs = assemble_constraints(&grid, &spec, &rest, NuMode::Free).unwrap();
    let mut mu = DiscreteMeasure::zeros(&grid);
    let masses = rest.node_masses(-4.0, grid.dx(), grid.nx).unwrap();
    let k0 = grid.split_velocity(0.0).unwrap().0;
    for i in 0..grid.nt {
        for (j, m) in masses.iter().enumerate() {
            mu.weights[grid.cell(i, j, k0)] = m * grid.dt();
        }
    }
    mu.nu = masses;
    assert!(mu.residuals(&cs).unwrap().max() < 1e-14);
    assert_eq!(measure_cost(&cs, &mu).unwrap(), 0.0);

    let lin = lq(1.0, 1.0);
    let cs = assemble_constraints(&grid, &spec, &lin, NuMode::Free).unwrap();
    let mgrid = GridSpec::new(1.0, 4.0, 16, 32).unwrap();
    let sampled = SampledData::from_problem(&lin, &mgrid).unwrap();
    let sol = fixed_point_solve(&spec, &sampled, &mgrid, 0.0, &SolverOptions::default(), None).unwrap();
    let cost = measure_cost(&cs, &induced_measure(&sol, &grid).unwrap()).unwrap();
    assert!((cost - 1.5).abs() <= 5e-2, "{cost}");
}

#[test]
fn lq0_ladder_meets_relative_gaps() {
    let spec = quadratic();
    let data = lq(1.0, 0.0);
    let ladder = [LadderLevel::square(16, 8), LadderLevel::square(32, 16)];
    let report = gap_report(&spec, &data, &ladder, &GapOptions::default()).unwrap();
    assert!(report.all_passed(), "{:?}", report.checks);
    for (level, bound) in report.history.iter().zip([0.1, 0.05]) {
        assert!(level.relative_gap <= bound);
        assert!(level.residuals.max() <= 1e-7, "{:?}", level.residuals);
    }
    assert_eq!(report.gap, report.primal_value - report.dual_value);
    let csv = report.to_csv();
    assert!(csv.starts_with("level,h,dt,dx,dv,primal,dual,gap\n"));
    assert_eq!(csv.lines().count(), 3);
    let json = serde_json::to_value(&report).unwrap();
    assert_eq!(json["history"].as_array().unwrap().len(), 2);
}

#[test]
fn oracle_backend_passes_values_through() {
    // 2 x 2 x 3 LP cells checked by the dense oracle; the MFG side on its own
    // finer grid.
    let spec = quadratic();
    let data = lq(1.0, 0.0);
    let rung = LadderLevel {
        nt: 2,
        nx: 2,
        nv: 3,
        mfg_nt: Some(32),
        mfg_nx: Some(64),
    };
    let options = GapOptions {
        backend: LpBackend::Oracle,
        ..GapOptions::default()
    };
    let report = gap_report(&spec, &data, &[rung], &options).unwrap();

    let mgrid = MeasureGrid::new(&spec, 1.0, 2, options.half_width, 2, options.vmax, 3).unwrap();
    let cs = assemble_constraints(&mgrid, &spec, &data, NuMode::Free).unwrap();
    assert!(cs.n_cols() <= 200);
    let oracle = brute_force_lp_oracle(&cs).unwrap().value().unwrap();
    let grid = GridSpec::new(1.0, options.half_width, 32, 64).unwrap();
    let sampled = SampledData::from_problem(&data, &grid).unwrap();
    let sweep = vanishing_viscosity_sweep(&spec, &sampled, &grid, &options.schedule, &options.solver).unwrap();
    let dual = pricemfg::duality::dual_value_from(&grid, &sweep.extrapolated_u0, &sweep.extrapolated_varpi, &data).unwrap();
    assert_eq!(report.primal_value, oracle);
    assert_eq!(report.dual_value, dual);
    assert_eq!(report.gap, oracle - dual);
}
