//! Names the front end accepts.

use serde::Serialize;

pub const PIPELINES: &[&str] = &["validate", "solve", "lp", "duality", "commutation", "sweep"];

pub const FAMILIES: &[&str] = &["quadratic", "power_gamma2"];
pub const POTENTIALS: &[&str] = &["zero", "smooth_abs"];
pub const SUPPLIES: &[&str] = &["constant", "cosine", "affine"];
pub const TERMINALS: &[&str] = &["zero", "linear", "smooth_abs", "kink"];
pub const DENSITIES: &[&str] = &["uniform", "hat", "bump", "cauchy", "tabulated"];
pub const TERMINAL_LAWS: &[&str] = &["free", "translated", "masses"];

const EXAMPLES: &[(&str, &str)] = &[
    ("lq0", include_str!("../../../configs/lq0.toml")),
    ("lqlin", include_str!("../../../configs/lqlin.toml")),
    ("cosQ", include_str!("../../../configs/cosQ.toml")),
    ("power_gamma2", include_str!("../../../configs/power_gamma2.toml")),
    ("infeasible_nu", include_str!("../../../configs/infeasible_nu.toml")),
];

pub fn example(name: &str) -> Option<&'static str> {
    EXAMPLES.iter().find(|(n, _)| *n == name).map(|(_, text)| *text)
}

#[derive(Serialize)]
pub struct Registry {
    pub pipelines: &'static [&'static str],
    pub hamiltonian_families: &'static [&'static str],
    pub potentials: &'static [&'static str],
    pub supplies: &'static [&'static str],
    pub terminal_costs: &'static [&'static str],
    pub initial_densities: &'static [&'static str],
    pub terminal_laws: &'static [&'static str],
    pub example_configs: Vec<&'static str>,
}

pub fn registry() -> Registry {
    Registry {
        pipelines: PIPELINES,
        hamiltonian_families: FAMILIES,
        potentials: POTENTIALS,
        supplies: SUPPLIES,
        terminal_costs: TERMINALS,
        initial_densities: DENSITIES,
        terminal_laws: TERMINAL_LAWS,
        example_configs: EXAMPLES.iter().map(|(n, _)| *n).collect(),
    }
}

impl Registry {
    pub fn to_text(&self) -> String {
        let line = |label: &str, items: &[&str]| format!("{label:<20} {}\n", items.join(", "));
        [
            line("pipelines", self.pipelines),
            line("hamiltonians", self.hamiltonian_families),
            line("potentials", self.potentials),
            line("supplies", self.supplies),
            line("terminal costs", self.terminal_costs),
            line("initial densities", self.initial_densities),
            line("terminal laws", self.terminal_laws),
            line("example configs", &self.example_configs),
        ]
        .concat()
    }
}
