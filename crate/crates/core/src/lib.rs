//! Price-formation mean-field games and their dual measure linear program.

pub mod analysis;
pub mod assumptions;
pub mod duality;
pub mod error;
pub mod hamiltonian;
pub mod linalg;
pub mod lp;
pub mod mfg;
pub mod problem;

pub use error::{Error, Result};

/// Library version.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
