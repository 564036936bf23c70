//! Hetero-functional network minimum cost flow.
//!
//! A declarative model of operands, resources and processes is compiled into
//! an engineering system net (a timed, arc-constant colored Petri net) with
//! per-operand service nets, then into a sparse convex quadratic program
//! over a discrete horizon. The solved firing schedule is replayed through
//! the nets as an independent check.

pub mod error;
pub mod fixture;
pub mod incidence;
pub mod model;
pub mod petri;
pub mod qp;
pub mod service;
pub mod solver;
pub mod sparse;
pub mod system;

pub use error::{Diagnostic, Error, Result};
pub use model::{load_model, parse_model, parse_scenario, ScenarioDocument, SystemModel};
pub use qp::{compile, Program};
pub use solver::{extract, solve, verify, SolveOptions, SolveStatus, Solution};
