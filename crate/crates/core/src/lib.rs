//! Chart-level numerical toolkit for spin frames: builds gamma
//! representations, induced metrics, projectable connections and Dirac
//! residuals on user-defined geometries, and machine-verifies the transport
//! identities relating them under spin-frame transformations.

pub mod chart;
pub mod checks;
pub mod clifford;
pub mod connection;
pub mod dirac;
pub mod fieldlang;
pub mod randfields;
pub mod report;
pub mod scenario;
pub mod transform;

pub use clifford::{build_eta, build_gamma, GammaRep, Signature};
pub use report::{Report, Tolerances};
pub use scenario::{load_scenario, load_scenario_str, Scenario};
