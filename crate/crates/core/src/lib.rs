//! Variable-metric indefinite proximal ADMM with BFGS-generated proximal
//! terms, plus numerical certification of its convergence conditions.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bfgs;
pub mod conditions;
pub mod diagnostics;
pub mod error;
pub mod model;
pub mod problems;
pub mod rng;
pub mod runner;
pub mod solver;
pub mod spectral;
pub mod strategies;

pub use error::{Error, Result};
pub use model::{FSpec, GSpec, KktResidual, PrimalDualPoint, ProblemInstance};
pub use spectral::SymMatrix;
pub use strategies::{Delta, ProximalTerm, Strategy, StrategyConfig};
pub use problems::{fingerprint, oracle_solve, GeneratorKind, GeneratorSpec};
pub use solver::{solve, Secant, SolveResult, SolverConfig, Status};
pub use runner::{run, InstanceSource, Results, RunConfig, RunOutcome, RunSummary, StrategyKind};
