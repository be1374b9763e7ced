mod config;
mod pipelines;
mod registry;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde_json::{json, Value};

use pricemfg::Error;

use config::RunConfig;
use pipelines::Artifacts;

#[derive(Parser)]
#[command(name = "pricemfg", version, about = "Price-formation MFG solver, measure LP and duality diagnostics")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML run configuration, or `builtin:NAME`.
    #[arg(long, global = true)]
    config: Option<String>,
    /// Output directory; defaults to the config's `output` or `out`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for the parallel stages.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Recorded in the manifest; every pipeline is deterministic.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
}

#[derive(Subcommand, Clone, Copy, PartialEq, Eq)]
enum Command {
    /// Check the standing assumptions on the configured instance.
    Validate,
    /// Solve the MFG system at one viscosity.
    Solve,
    /// Solve the measure linear program.
    Lp,
    /// Primal/dual ladder with the gap report.
    Duality,
    /// Mollified subsolution residuals against the radius.
    Commutation,
    /// Vanishing-viscosity sweep with Lipschitz, moment and weak-convergence traces.
    Sweep,
    /// Print the registered names.
    ListBuiltins {
        #[arg(long)]
        json: bool,
    },
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Validate => "validate",
            Command::Solve => "solve",
            Command::Lp => "lp",
            Command::Duality => "duality",
            Command::Commutation => "commutation",
            Command::Sweep => "sweep",
            Command::ListBuiltins { .. } => "list-builtins",
        }
    }
}

pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_NONCONVERGENCE: u8 = 3;
pub const EXIT_INFEASIBLE: u8 = 4;
pub const EXIT_NUMERICAL: u8 = 5;

fn exit_code(e: &Error) -> u8 {
    match e.root() {
        Error::Config(_) | Error::Input(_) | Error::Domain(_) | Error::Grid(_) | Error::Resolution(_) => EXIT_CONFIG,
        Error::NonConvergence { .. } => EXIT_NONCONVERGENCE,
        Error::Infeasible(_) => EXIT_INFEASIBLE,
        _ => EXIT_NUMERICAL,
    }
}

fn error_json(e: &Error) -> Value {
    let root = e.root();
    let kind = match root {
        Error::Config(_) => "config",
        Error::Input(_) => "input",
        Error::Cfl { .. } => "cfl",
        Error::Numerical { .. } => "numerical",
        Error::NonConvergence { .. } => "non_convergence",
        Error::RootFind(_) => "root_find",
        Error::Degenerate { .. } => "degenerate",
        Error::Domain(_) => "domain",
        Error::Grid(_) => "grid",
        Error::Resolution(_) => "resolution",
        Error::NegativeMass { .. } => "negative_mass",
        Error::Infeasible(_) => "infeasible",
        Error::Unbounded => "unbounded",
        Error::Oracle(_) => "oracle",
        Error::Context { .. } => "context",
    };
    let mut v = json!({
        "exit_code": exit_code(e),
        "kind": kind,
        "message": e.to_string(),
    });
    match root {
        Error::Infeasible(w) => v["witness"] = json!(w),
        Error::NonConvergence { history, .. } => v["history"] = json!(history),
        _ => {}
    }
    v
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Command::ListBuiltins { json } = cli.command {
        let reg = registry::registry();
        if json {
            println!("{}", serde_json::to_string_pretty(&reg).expect("registry serialises"));
        } else {
            print!("{}", reg.to_text());
        }
        return ExitCode::SUCCESS;
    }
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_CONFIG);
        }
    }
    let config = cli.config.as_deref().map(RunConfig::load);
    let out = cli
        .out
        .clone()
        .or_else(|| {
            config
                .as_ref()
                .and_then(|c| c.as_ref().ok())
                .and_then(|c| c.output.clone())
                .map(PathBuf::from)
        })
        .unwrap_or_else(|| PathBuf::from("out"));
    let mut artifacts = match Artifacts::new(&out) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: cannot create {}: {e}", out.display());
            return ExitCode::from(EXIT_CONFIG);
        }
    };
    let started = Instant::now();
    let result = match config {
        None => Err(Error::Config("--config is required".into())),
        Some(Err(e)) => Err(e),
        Some(Ok(config)) => {
            artifacts.echo_config(&config);
            pipelines::run(cli.command.name(), &config, &mut artifacts)
        }
    };
    let code = match &result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            artifacts.json("error.json", &error_json(e));
            exit_code(e)
        }
    };
    artifacts.timing("total", started.elapsed().as_secs_f64());
    let manifest = artifacts.manifest(cli.command.name(), cli.seed, cli.threads, code);
    if let Err(e) = manifest {
        eprintln!("error: cannot write manifest: {e}");
        return ExitCode::from(EXIT_NUMERICAL);
    }
    if let Some(failed) = artifacts.failed_write() {
        eprintln!("error: cannot write {failed}");
        return ExitCode::from(EXIT_NUMERICAL);
    }
    ExitCode::from(code)
}
