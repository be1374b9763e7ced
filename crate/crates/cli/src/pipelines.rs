//! Pipeline drivers and artifact bookkeeping.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use serde_json::{json, Value};

use pricemfg::analysis::{commutation_order_fit, lipschitz_estimate, moment_trace, weak_convergence_diagnostic};
use pricemfg::assumptions::{validate_assumptions, CheckStatus, SampleBox};
use pricemfg::duality::{dual_value, gap_report, LpBackend};
use pricemfg::error::InfeasibilityWitness;
use pricemfg::lp::{assemble_constraints, brute_force_lp_oracle, induced_measure, solve_primal, OracleOutcome};
use pricemfg::mfg::{fixed_point_solve, vanishing_viscosity_sweep, MFGSolution, SampledData};
use pricemfg::{Error, Result};

use crate::config::RunConfig;

/// Output directory plus the list of files written into it.
pub struct Artifacts {
    dir: PathBuf,
    files: Vec<String>,
    timings: BTreeMap<String, f64>,
    config: Option<Value>,
    failed: Option<String>,
}

impl Artifacts {
    pub fn new(dir: &Path) -> std::io::Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Artifacts {
            dir: dir.to_path_buf(),
            files: Vec::new(),
            timings: BTreeMap::new(),
            config: None,
            failed: None,
        })
    }

    pub fn echo_config(&mut self, config: &RunConfig) {
        self.config = serde_json::to_value(config).ok();
    }

    pub fn text(&mut self, name: &str, contents: &str) {
        match fs::write(self.dir.join(name), contents) {
            Ok(()) => self.files.push(name.to_string()),
            Err(e) => self.failed = Some(format!("{name}: {e}")),
        }
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) {
        let text = serde_json::to_string_pretty(value).expect("artifact serialises");
        self.text(name, &(text + "\n"));
    }

    pub fn timing(&mut self, stage: &str, seconds: f64) {
        self.timings.insert(stage.to_string(), seconds);
    }

    pub fn failed_write(&self) -> Option<&str> {
        self.failed.as_deref()
    }

    pub fn manifest(&self, pipeline: &str, seed: u64, threads: Option<usize>, exit_code: u8) -> std::io::Result<()> {
        let manifest = json!({
            "tool": "pricemfg",
            "version": env!("CARGO_PKG_VERSION"),
            "library_version": pricemfg::VERSION,
            "pipeline": pipeline,
            "seed": seed,
            "threads": threads,
            "exit_code": exit_code,
            "config": self.config,
            "files": self.files,
            "timings": self.timings,
        });
        fs::write(
            self.dir.join("manifest.json"),
            serde_json::to_string_pretty(&manifest).expect("manifest serialises") + "\n",
        )
    }
}

pub fn run(pipeline: &str, config: &RunConfig, out: &mut Artifacts) -> Result<()> {
    let started = Instant::now();
    let result = match pipeline {
        "validate" => validate(config, out),
        "solve" => solve(config, out),
        "lp" => lp(config, out),
        "duality" => duality(config, out),
        "commutation" => commutation(config, out),
        "sweep" => sweep(config, out),
        other => Err(Error::Config(format!("unknown pipeline {other:?}"))),
    };
    out.timing(pipeline, started.elapsed().as_secs_f64());
    result
}

fn validate(config: &RunConfig, out: &mut Artifacts) -> Result<()> {
    let report = validate_assumptions(&config.spec()?, &config.data(), &SampleBox::default());
    let mut csv = String::from("id,name,status,margin\n");
    for c in &report.checks {
        let status = match c.status {
            CheckStatus::Pass => "pass",
            CheckStatus::Fail => "fail",
            CheckStatus::NotChecked => "not_checked",
        };
        let margin = c.margin.map(|m| format!("{m:e}")).unwrap_or_default();
        let _ = writeln!(csv, "{},{},{status},{margin}", c.id, c.name);
    }
    out.text("assumptions.csv", &csv);
    out.json(
        "summary.json",
        &json!({ "all_passed": report.all_passed(), "checks": report.checks }),
    );
    let failure = report
        .failures()
        .next()
        .map(|c| format!("assumption {} ({}) fails: {}", c.id, c.name, c.note));
    match failure {
        None => Ok(()),
        Some(msg) => Err(Error::Config(msg)),
    }
}

fn solve_at(config: &RunConfig, epsilon: f64) -> Result<MFGSolution> {
    let grid = config.grid()?;
    let sampled = SampledData::from_problem(&config.data(), &grid)?;
    fixed_point_solve(&config.spec()?, &sampled, &grid, epsilon, &config.solver.options, None)
}

fn solution_files(sol: &MFGSolution, out: &mut Artifacts, prefix: &str) {
    let g = &sol.grid;
    let mut price = String::from("t,varpi\n");
    for (i, p) in sol.varpi.iter().enumerate() {
        let _ = writeln!(price, "{},{p:.15e}", g.t(i));
    }
    out.text(&format!("{prefix}price.csv"), &price);
    let mut field = String::from("t,x,u,m\n");
    for i in 0..=g.nt {
        for j in 0..=g.nx {
            let _ = writeln!(field, "{},{},{:.15e},{:.15e}", g.t(i), g.x(j), sol.u[i][j], sol.m[i][j]);
        }
    }
    out.text(&format!("{prefix}fields.csv"), &field);
}

fn solve(config: &RunConfig, out: &mut Artifacts) -> Result<()> {
    let sol = solve_at(config, config.solver.epsilon)?;
    solution_files(&sol, out, "");
    let data = config.data();
    out.json(
        "summary.json",
        &json!({
            "epsilon": sol.epsilon,
            "iterations": sol.iterations,
            "dual_value": dual_value(&sol, &data)?,
            "mass_defect": sol.mass_defect(),
            "max_balance_residual": sol.balance_residual.iter().fold(0.0_f64, |a, r| a.max(r.abs())),
            "price_lipschitz": sol.price_lipschitz(),
            "max_moment": sol.max_moment(data.gamma),
            "history": sol.history,
        }),
    );
    Ok(())
}

fn lp(config: &RunConfig, out: &mut Artifacts) -> Result<()> {
    let grid = config.measure_grid()?;
    let spec = config.spec()?;
    let cs = assemble_constraints(&grid, &spec, &config.data(), config.nu_mode(&grid)?)?;
    match config.lp.backend {
        LpBackend::Oracle => match brute_force_lp_oracle(&cs)? {
            OracleOutcome::Optimal { value, .. } => {
                out.json(
                    "summary.json",
                    &json!({ "backend": "oracle", "value": value, "rows": cs.n_rows(), "columns": cs.n_cols() }),
                );
                Ok(())
            }
            OracleOutcome::Infeasible => Err(Error::Infeasible(InfeasibilityWitness {
                identity: "phase_one".into(),
                defect: f64::NAN,
                details: Vec::new(),
            })),
            OracleOutcome::Unbounded => Err(Error::Unbounded),
        },
        LpBackend::PrimalDual => {
            let sol = solve_primal(&cs, &config.lp.options)?;
            out.text("measure.csv", &sol.measure.to_csv());
            out.text("terminal.csv", &sol.measure.nu_csv());
            out.json(
                "summary.json",
                &json!({
                    "backend": "primal_dual",
                    "value": sol.value,
                    "dual_value": sol.dual_value,
                    "primal_residual": sol.primal_residual,
                    "dual_residual": sol.dual_residual,
                    "residuals": sol.measure.residuals(&cs)?,
                    "iterations": sol.iterations,
                    "restarts": sol.restarts,
                    "crash_rounds": sol.crash_rounds,
                    "rows": cs.n_rows(),
                    "columns": cs.n_cols(),
                }),
            );
            Ok(())
        }
    }
}

fn duality(config: &RunConfig, out: &mut Artifacts) -> Result<()> {
    let report = gap_report(&config.spec()?, &config.data(), &config.ladder(), &config.gap_options())?;
    out.text("gap_history.csv", &report.to_csv());
    out.json("summary.json", &report);
    match report.checks.iter().find(|c| !c.passed) {
        None => Ok(()),
        Some(c) => Err(Error::Numerical {
            context: format!("duality check {}", c.name),
            detail: c.detail.clone(),
        }),
    }
}

fn commutation(config: &RunConfig, out: &mut Artifacts) -> Result<()> {
    let spec = config.spec()?;
    let sol = solve_at(config, config.solver.epsilon)?;
    let profile = commutation_order_fit(&spec, &sol, &config.commutation.alphas)?;
    out.text("residual_profile.csv", &profile.to_csv());
    out.json("summary.json", &profile);
    Ok(())
}

fn sweep(config: &RunConfig, out: &mut Artifacts) -> Result<()> {
    let spec = config.spec()?;
    let data = config.data();
    let grid = config.grid()?;
    let sampled = SampledData::from_problem(&data, &grid)?;
    let schedule = &config.solver.schedule;
    let result = vanishing_viscosity_sweep(&spec, &sampled, &grid, schedule, &config.solver.options)?;

    let mut price = String::from("t");
    for e in schedule {
        let _ = write!(price, ",eps_{e}");
    }
    price.push_str(",extrapolated\n");
    for i in 0..=grid.nt {
        let _ = write!(price, "{}", grid.t(i));
        for s in &result.solutions {
            let _ = write!(price, ",{:.15e}", s.varpi[i]);
        }
        let _ = writeln!(price, ",{:.15e}", result.extrapolated_varpi[i]);
    }
    out.text("sweep_price.csv", &price);

    let gamma = spec.gamma1 + 1.0;
    let mut levels = String::from("epsilon,iterations,lipschitz,max_moment,consecutive_gap\n");
    let mut summary = Vec::new();
    for (n, s) in result.solutions.iter().enumerate() {
        let lip = lipschitz_estimate(&s.varpi, grid.dt());
        let moment = moment_trace(&s.m, &grid, gamma).into_iter().fold(0.0, f64::max);
        let gap = if n == 0 { f64::NAN } else { result.consecutive_gaps[n - 1] };
        let _ = writeln!(levels, "{},{},{lip:.15e},{moment:.15e},{gap:.15e}", s.epsilon, s.iterations);
        summary.push(json!({ "epsilon": s.epsilon, "iterations": s.iterations, "lipschitz": lip, "max_moment": moment }));
    }
    out.text("sweep_levels.csv", &levels);

    let mgrid = config.measure_grid()?;
    let measures = result
        .solutions
        .iter()
        .map(|s| induced_measure(s, &mgrid))
        .collect::<Result<Vec<_>>>()?;
    let distances = if measures.len() >= 2 { weak_convergence_diagnostic(&measures)? } else { Vec::new() };
    let mut weak = String::from("eps_a,eps_b,distance\n");
    for d in &distances {
        let _ = writeln!(weak, "{},{},{:.15e}", schedule[d.a], schedule[d.b], d.distance);
    }
    out.text("weak_convergence.csv", &weak);
    out.json(
        "summary.json",
        &json!({
            "moment_order": gamma,
            "levels": summary,
            "consecutive_gaps": result.consecutive_gaps,
            "weak_convergence": distances,
        }),
    );
    Ok(())
}
