//! Design and verification of distributed state observers for discrete-time
//! LTI systems with the system matrix in Jordan form.
//!
//! The pipeline classifies every unstable Jordan miniblock per sensor agent,
//! builds the per-agent permutations, decides which coupling gains stabilize
//! the estimation error from Laplacian spectra, and simulates the network.
//! Every verdict can be cross-checked against a dense eigenvalue oracle.

pub mod canon;
pub mod classify;
pub mod cli;
pub mod config;
pub mod design;
pub mod error;
pub mod fuzz;
pub mod linalg;
pub mod model;
pub mod report;
pub mod sim;
pub mod solvability;

pub use classify::{classify, BlockIndex, MiniblockClassification, ObsClass};
pub use config::ProblemConfig;
pub use design::{build_observers, closed_loop_error_matrix, pick_gains, GainAssignment, ObserverBank};
pub use error::{Error, ExitCode, Result};
pub use model::{Problem, Tolerances};
pub use sim::{simulate, SimulationTrace};
pub use solvability::{build_report, SolvabilityReport, Strategy};
