//! TOML run configuration.

use serde::{Deserialize, Serialize};

use pricemfg::duality::{GapOptions, LadderLevel, LpBackend};
use pricemfg::hamiltonian::{HamiltonianSpec, Potential};
use pricemfg::lp::{MeasureGrid, NuMode, PdhgOptions};
use pricemfg::mfg::{GridSpec, SolverOptions};
use pricemfg::problem::{Density, ProblemData, Supply, TerminalCost};
use pricemfg::{Error, Result};

use crate::registry;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub pipeline: Option<String>,
    #[serde(default)]
    pub output: Option<String>,
    pub problem: ProblemSection,
    pub grid: GridSection,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub lp: LpSection,
    #[serde(default)]
    pub duality: DualitySection,
    #[serde(default)]
    pub commutation: CommutationSection,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSection {
    pub hamiltonian: HamiltonianSection,
    pub supply: Supply,
    pub terminal: TerminalCost,
    pub initial: Density,
    #[serde(default = "one")]
    pub horizon: f64,
    #[serde(default = "two")]
    pub gamma: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HamiltonianSection {
    pub family: String,
    #[serde(default)]
    pub gamma2: Option<f64>,
    #[serde(default = "zero_potential")]
    pub potential: Potential,
    #[serde(default)]
    pub kappa: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub nt: usize,
    pub nx: usize,
    #[serde(default)]
    pub nv: Option<usize>,
    pub half_width: f64,
    #[serde(default = "two")]
    pub vmax: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverSection {
    /// Viscosity for `solve` and `commutation`.
    pub epsilon: f64,
    pub schedule: Vec<f64>,
    #[serde(flatten)]
    pub options: SolverOptions,
}

impl Default for SolverSection {
    fn default() -> Self {
        SolverSection {
            epsilon: 0.0,
            schedule: vec![0.1, 0.05, 0.025, 0.0125],
            options: SolverOptions::default(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NuSection {
    Free,
    /// `m0` translated by `shift`.
    Translated { shift: f64 },
    /// Node masses on the measure grid.
    Masses { masses: Vec<f64> },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct LpSection {
    pub nu: NuSection,
    pub backend: LpBackend,
    #[serde(flatten)]
    pub options: PdhgOptions,
}

impl Default for LpSection {
    fn default() -> Self {
        LpSection {
            nu: NuSection::Free,
            backend: LpBackend::default(),
            options: PdhgOptions::default(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DualitySection {
    /// Square levels `Nt = Nx = n`, `Nv = n / 2`.
    pub ladder: Vec<usize>,
    pub gap_floor: f64,
    pub sandwich_tol: f64,
}

impl Default for DualitySection {
    fn default() -> Self {
        let d = GapOptions::default();
        DualitySection {
            ladder: vec![16, 32, 64],
            gap_floor: d.gap_floor,
            sandwich_tol: d.sandwich_tol,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CommutationSection {
    pub alphas: Vec<f64>,
}

impl Default for CommutationSection {
    fn default() -> Self {
        CommutationSection {
            alphas: vec![0.2, 0.1, 0.05, 0.025],
        }
    }
}

fn one() -> f64 {
    1.0
}

fn two() -> f64 {
    2.0
}

fn zero_potential() -> Potential {
    Potential::Zero
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let config: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Reads a file, or a built-in example when `path` is `builtin:NAME`.
    pub fn load(path: &str) -> Result<Self> {
        let text = match path.strip_prefix("builtin:") {
            Some(name) => registry::example(name)
                .ok_or_else(|| Error::Config(format!("no built-in config named {name:?}")))?
                .to_string(),
            None => std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{path}: {e}")))?,
        };
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(p) = &self.pipeline {
            if !registry::PIPELINES.contains(&p.as_str()) {
                return Err(Error::Config(format!("unknown pipeline {p:?}")));
            }
        }
        self.spec()?;
        self.data().validate()?;
        self.grid()?;
        let s = &self.solver;
        if !(s.epsilon >= 0.0) {
            return Err(Error::Config("epsilon must be non-negative".into()));
        }
        if s.schedule.is_empty() || s.schedule.iter().any(|e| !(*e > 0.0)) || s.schedule.windows(2).any(|w| !(w[1] < w[0]))
        {
            return Err(Error::Config("schedule must be positive and strictly decreasing".into()));
        }
        if !(s.options.tol > 0.0 && s.options.balance_tol > 0.0) {
            return Err(Error::Config("solver tolerances must be positive".into()));
        }
        let lp = &self.lp.options;
        if !(lp.tol > 0.0 && lp.infeasibility_tol > 0.0) {
            return Err(Error::Config("lp tolerances must be positive".into()));
        }
        let d = &self.duality;
        if d.ladder.is_empty() || d.ladder.iter().any(|n| *n < 2) {
            return Err(Error::Config("ladder levels must be at least 2".into()));
        }
        if !(d.gap_floor > 0.0 && d.sandwich_tol > 0.0) {
            return Err(Error::Config("duality tolerances must be positive".into()));
        }
        let a = &self.commutation.alphas;
        if a.iter().any(|x| !(*x > 0.0)) || a.windows(2).any(|w| !(w[1] < w[0])) {
            return Err(Error::Config("alphas must be positive and strictly decreasing".into()));
        }
        Ok(())
    }

    pub fn spec(&self) -> Result<HamiltonianSpec> {
        let h = &self.problem.hamiltonian;
        let spec = match (h.family.as_str(), h.gamma2) {
            ("quadratic", None) => HamiltonianSpec::quadratic(h.potential.clone()),
            ("power_gamma2", Some(g)) if g > 1.0 => HamiltonianSpec::power(g, h.potential.clone()),
            ("power_gamma2", _) => return Err(Error::Config("power_gamma2 needs gamma2 > 1".into())),
            ("quadratic", Some(_)) => return Err(Error::Config("quadratic takes no gamma2".into())),
            (other, _) => return Err(Error::Config(format!("unknown Hamiltonian family {other:?}"))),
        };
        Ok(match h.kappa {
            Some(k) if k > 0.0 => spec.with_kappa(k),
            Some(_) => return Err(Error::Config("kappa must be positive".into())),
            None => spec,
        })
    }

    pub fn data(&self) -> ProblemData {
        let p = &self.problem;
        ProblemData {
            horizon: p.horizon,
            supply: p.supply.clone(),
            terminal: p.terminal.clone(),
            initial: p.initial.clone(),
            gamma: p.gamma,
        }
    }

    pub fn grid(&self) -> Result<GridSpec> {
        let g = &self.grid;
        GridSpec::new(self.problem.horizon, g.half_width, g.nt, g.nx).map_err(as_config)
    }

    pub fn nv(&self) -> usize {
        self.grid.nv.unwrap_or((self.grid.nt / 2).max(2))
    }

    pub fn measure_grid(&self) -> Result<MeasureGrid> {
        let g = &self.grid;
        MeasureGrid::new(&self.spec()?, self.problem.horizon, g.nt, g.half_width, g.nx, g.vmax, self.nv())
            .map_err(as_config)
    }

    pub fn nu_mode(&self, grid: &MeasureGrid) -> Result<NuMode> {
        Ok(match &self.lp.nu {
            NuSection::Free => NuMode::Free,
            NuSection::Translated { shift } => {
                NuMode::Fixed(self.data().node_masses(-grid.half_width - shift, grid.dx(), grid.nx)?)
            }
            NuSection::Masses { masses } => {
                if masses.len() != grid.nx + 1 {
                    return Err(Error::Config(format!(
                        "terminal masses need {} entries, got {}",
                        grid.nx + 1,
                        masses.len()
                    )));
                }
                NuMode::Fixed(masses.clone())
            }
        })
    }

    pub fn gap_options(&self) -> GapOptions {
        GapOptions {
            half_width: self.grid.half_width,
            vmax: self.grid.vmax,
            schedule: self.solver.schedule.clone(),
            solver: self.solver.options.clone(),
            lp: self.lp.options.clone(),
            backend: self.lp.backend,
            gap_floor: self.duality.gap_floor,
            sandwich_tol: self.duality.sandwich_tol,
        }
    }

    pub fn ladder(&self) -> Vec<LadderLevel> {
        self.duality
            .ladder
            .iter()
            .map(|&n| LadderLevel::square(n, (n / 2).max(2)))
            .collect()
    }
}

fn as_config(e: Error) -> Error {
    match e {
        Error::Input(s) | Error::Grid(s) => Error::Config(s),
        other => other,
    }
}
