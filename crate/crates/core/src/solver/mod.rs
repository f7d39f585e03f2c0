//! Self-contained dense LP and convex-QP solvers.
//!
//! Both problem classes run through a primal-dual interior-point method with
//! a Mehrotra-style predictor-corrector and a dense factorization of the
//! (regularized, quasidefinite) augmented KKT system:
//!
//! * linear programs use a homogeneous self-dual embedding, so infeasibility
//!   and unboundedness come out as checkable certificates rather than
//!   iteration stalls;
//! * quadratic programs use an infeasible-start method with a residual-based
//!   divergence test that validates a Farkas certificate before declaring
//!   infeasibility.
//!
//! The three types [`LinearProgram`], [`QuadraticProgram`] and
//! [`SolveStatus`] plus [`solve_lp`]/[`solve_qp`] are the only surface the
//! rest of the crate sees, so an external solver can be swapped in behind
//! this contract.
//!
//! Solvers are reentrant pure functions over immutable inputs; identical
//! inputs and settings produce bit-identical outputs on the same platform.

mod lp;
mod qp;

use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Dense linear program: minimize `cᵀx` subject to
/// `Aeq·x = beq` and `Ain·x ≤ bin`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LinearProgram {
    /// Objective vector `c` (minimized).
    pub objective: DVector<f64>,
    pub a_eq: DMatrix<f64>,
    pub b_eq: DVector<f64>,
    pub a_in: DMatrix<f64>,
    pub b_in: DVector<f64>,
    pub num_vars: usize,
}

/// Dense convex quadratic program: minimize `½xᵀHx + gᵀx` subject to
/// `Aeq·x = beq` and `Ain·x ≤ bin`. `H` must be symmetric positive
/// semidefinite (to tolerance).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QuadraticProgram {
    pub hessian: DMatrix<f64>,
    pub gradient: DVector<f64>,
    pub a_eq: DMatrix<f64>,
    pub b_eq: DVector<f64>,
    pub a_in: DMatrix<f64>,
    pub b_in: DVector<f64>,
    pub num_vars: usize,
}

/// Solver tolerances and limits, surfaced on the CLI as `--feas-tol`,
/// `--kkt-tol` and `--max-iter`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolverSettings {
    pub feas_tol: f64,
    pub kkt_tol: f64,
    pub max_iter: usize,
    /// Dump every posed problem to `DIR/{lp,qp}_NNNNNN.json` before solving.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub dump_dir: Option<PathBuf>,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            feas_tol: 1e-8,
            kkt_tol: 1e-8,
            max_iter: 200,
            dump_dir: None,
        }
    }
}

/// A converged primal-dual pair. The duals satisfy the stationarity
/// convention `∇f(x) + Aeqᵀ·dual_eq + Ainᵀ·dual_in = 0` with `dual_in ≥ 0`.
#[derive(Debug, Clone)]
pub struct Optimum {
    pub x: DVector<f64>,
    pub objective: f64,
    pub dual_eq: DVector<f64>,
    pub dual_in: DVector<f64>,
    pub iterations: usize,
}

impl Optimum {
    /// Dual objective `−beqᵀν − binᵀλ`; equals the primal objective at an
    /// exact LP optimum.
    pub fn lp_dual_objective(&self, lp: &LinearProgram) -> f64 {
        -self.dual_eq.dot(&lp.b_eq) - self.dual_in.dot(&lp.b_in)
    }
}

/// Farkas proof that `Aeq·x = beq, Ain·x ≤ bin` has no solution:
/// `Aeqᵀy_eq + Ainᵀy_in = 0`, `y_in ≥ 0`, `beqᵀy_eq + binᵀy_in < 0`,
/// all up to the solver tolerance.
#[derive(Debug, Clone)]
pub struct InfeasibilityCertificate {
    pub y_eq: DVector<f64>,
    pub y_in: DVector<f64>,
}

impl InfeasibilityCertificate {
    /// The stacked certificate vector (equality rows first).
    pub fn stacked(&self) -> DVector<f64> {
        let mut y = DVector::zeros(self.y_eq.len() + self.y_in.len());
        y.rows_mut(0, self.y_eq.len()).copy_from(&self.y_eq);
        y.rows_mut(self.y_eq.len(), self.y_in.len())
            .copy_from(&self.y_in);
        y
    }
}

/// A feasible improving ray: `Aeq·d = 0`, `Ain·d ≤ 0` and the objective
/// strictly decreases along `d`.
#[derive(Debug, Clone)]
pub struct UnboundedRay {
    pub ray: DVector<f64>,
}

/// Outcome of a solve. `Optimal` iterates satisfy
/// `‖Aeq·x − beq‖∞ ≤ feas_tol` and `max(Ain·x − bin) ≤ feas_tol` (scaled).
#[derive(Debug, Clone)]
pub enum SolveStatus {
    Optimal(Optimum),
    Infeasible(InfeasibilityCertificate),
    Unbounded(UnboundedRay),
}

impl SolveStatus {
    pub fn optimum(&self) -> Option<&Optimum> {
        match self {
            SolveStatus::Optimal(opt) => Some(opt),
            _ => None,
        }
    }

    pub fn is_optimal(&self) -> bool {
        matches!(self, SolveStatus::Optimal(_))
    }
}

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("malformed problem data: {0}")]
    Data(String),
    #[error(
        "no convergence in {iterations} iterations \
         (primal res {primal_residual:.3e}, dual res {dual_residual:.3e}, gap {gap:.3e})"
    )]
    NumericalFailure {
        iterations: usize,
        primal_residual: f64,
        dual_residual: f64,
        gap: f64,
        /// Last primal iterate, for post-mortem dumps.
        last_iterate: DVector<f64>,
    },
    #[error("failed to dump problem to {path}: {source}")]
    Dump {
        path: PathBuf,
        source: std::io::Error,
    },
}

static DUMP_COUNTER: AtomicU64 = AtomicU64::new(0);

fn dump_problem<T: Serialize>(kind: &str, problem: &T, dir: &PathBuf) -> Result<(), SolverError> {
    let id = DUMP_COUNTER.fetch_add(1, Ordering::Relaxed);
    let path = dir.join(format!("{kind}_{id:06}.json"));
    let file = std::fs::File::create(&path).map_err(|source| SolverError::Dump {
        path: path.clone(),
        source,
    })?;
    serde_json::to_writer(file, problem)
        .map_err(|e| SolverError::Dump { path, source: e.into() })
}

/// Solve a dense LP. See module docs for the method and certificates.
pub fn solve_lp(lp: &LinearProgram, settings: &SolverSettings) -> Result<SolveStatus, SolverError> {
    check_lp_shapes(lp)?;
    if let Some(dir) = &settings.dump_dir {
        dump_problem("lp", lp, dir)?;
    }
    lp::solve(lp, settings)
}

/// Solve a dense convex QP. See module docs for the method and certificates.
pub fn solve_qp(
    qp: &QuadraticProgram,
    settings: &SolverSettings,
) -> Result<SolveStatus, SolverError> {
    check_qp_shapes(qp)?;
    if let Some(dir) = &settings.dump_dir {
        dump_problem("qp", qp, dir)?;
    }
    qp::solve(qp, settings)
}

fn check_finite(name: &str, it: impl Iterator<Item = f64>) -> Result<(), SolverError> {
    for v in it {
        if !v.is_finite() {
            return Err(SolverError::Data(format!("non-finite entry in {name}")));
        }
    }
    Ok(())
}

fn check_lp_shapes(lp: &LinearProgram) -> Result<(), SolverError> {
    let n = lp.num_vars;
    if lp.objective.len() != n {
        return Err(SolverError::Data(format!(
            "objective has length {}, expected {n}",
            lp.objective.len()
        )));
    }
    check_block_shapes(n, &lp.a_eq, &lp.b_eq, &lp.a_in, &lp.b_in)?;
    check_finite("objective", lp.objective.iter().copied())
}

fn check_qp_shapes(qp: &QuadraticProgram) -> Result<(), SolverError> {
    let n = qp.num_vars;
    if qp.hessian.nrows() != n || qp.hessian.ncols() != n {
        return Err(SolverError::Data(format!(
            "Hessian is {}x{}, expected {n}x{n}",
            qp.hessian.nrows(),
            qp.hessian.ncols()
        )));
    }
    if qp.gradient.len() != n {
        return Err(SolverError::Data(format!(
            "gradient has length {}, expected {n}",
            qp.gradient.len()
        )));
    }
    check_block_shapes(n, &qp.a_eq, &qp.b_eq, &qp.a_in, &qp.b_in)?;
    check_finite("hessian", qp.hessian.iter().copied())?;
    check_finite("gradient", qp.gradient.iter().copied())
}

fn check_block_shapes(
    n: usize,
    a_eq: &DMatrix<f64>,
    b_eq: &DVector<f64>,
    a_in: &DMatrix<f64>,
    b_in: &DVector<f64>,
) -> Result<(), SolverError> {
    if a_eq.ncols() != n && a_eq.nrows() > 0 {
        return Err(SolverError::Data(format!(
            "equality block has {} columns, expected {n}",
            a_eq.ncols()
        )));
    }
    if a_eq.nrows() != b_eq.len() {
        return Err(SolverError::Data("equality row count mismatch".into()));
    }
    if a_in.ncols() != n && a_in.nrows() > 0 {
        return Err(SolverError::Data(format!(
            "inequality block has {} columns, expected {n}",
            a_in.ncols()
        )));
    }
    if a_in.nrows() != b_in.len() {
        return Err(SolverError::Data("inequality row count mismatch".into()));
    }
    check_finite("a_eq", a_eq.iter().copied())?;
    check_finite("b_eq", b_eq.iter().copied())?;
    check_finite("a_in", a_in.iter().copied())?;
    check_finite("b_in", b_in.iter().copied())
}

/// `‖v‖∞` that tolerates empty vectors.
pub(crate) fn inf_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()))
}

/// Largest step `θ ∈ [0, cap]` with `v + θ·dv ≥ 0` componentwise.
pub(crate) fn max_step(v: &DVector<f64>, dv: &DVector<f64>, cap: f64) -> f64 {
    let mut theta = cap;
    for (vi, di) in v.iter().zip(dv.iter()) {
        if *di < 0.0 {
            theta = theta.min(-vi / di);
        }
    }
    theta
}

#[cfg(test)]
mod tests;
