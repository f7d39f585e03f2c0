//! Robust tube MPC with implicit set representations.
//!
//! Every set-algebraic object of the rigid tube controller — the tube
//! cross-section `S`, the tightened stage set `Y_S`, the terminal set `Z_f` —
//! is handled implicitly through support-function and feasibility linear
//! programs. Nothing is ever constructed in vertex or halfspace form (the
//! 2-D [`oracle`] exists purely so tests can falsify the implicit calculus).
//!
//! The crate splits into:
//!
//! * [`model`] — problem data (plant, constraint polyhedra, weights) plus
//!   validation and the JSON problem-file format,
//! * [`solver`] — self-contained dense LP/QP interior-point solvers behind a
//!   uniform contract,
//! * [`setcalc`] — support functions and membership tests for the implicit
//!   sets,
//! * [`synthesis`] — the offline design stage producing a [`TubeDesign`],
//! * [`controller`] — the online QP: assembly, solve, and the control law,
//! * [`sim`] — closed-loop simulation with configurable disturbances,
//! * [`benchmark`] — random-system sweeps over the offline stage,
//! * [`oracle`] — exact 2-D polygon geometry for cross-validation.

pub mod benchmark;
pub mod controller;
pub mod model;
pub mod oracle;
pub mod setcalc;
pub mod sim;
pub mod solver;
pub mod synthesis;

pub use controller::{OcpSolution, StepDiagnostics, TubeQp};
pub use model::{CostWeights, HPolyhedron, Plant, ProblemSpec, ValidationReport};
pub use setcalc::{ImplicitRpiSet, ImplicitTerminalSet, SupportValue};
pub use sim::{ClosedLoopTrace, DisturbancePolicy};
pub use solver::{LinearProgram, QuadraticProgram, SolveStatus, SolverSettings};
pub use synthesis::{SynthesisOptions, TubeDesign};
