//! Online tube MPC: assemble the structured convex QP for a measured state,
//! solve it, and extract the control law `u = v₀⁰ + K_S·(x − z₀⁰)`.
//!
//! Decision vector layout (chosen to keep the dense KKT bandwidth small):
//! interleaved stage blocks `(z_0, v_0, …, z_{N−1}, v_{N−1})`, then the
//! terminal chain `z_N … z_{N+N_Z}`, then the disturbance picks
//! `ω_0 … ω_{N_S−1}`. The dimension identities
//!
//! ```text
//!   n_d  = N·n + N·m + (N_Z+1)·n + N_S·n
//!   n_eq = n + N·n + N_Z·n
//!   n_iq = N_S·q + N·p + (N_Z+1)·p
//! ```
//!
//! hold exactly and are checked in the test suite. The cost is block
//! diagonal over `(z, v)` with zero cost on `ω`, so the QP is convex but
//! only strictly convex in the `(z, v)` blocks; whichever `ω` the solver
//! converges to is returned (the optimizer set is flat along `ω`).
//!
//! Infeasibility of the QP means the state is outside the controllable set:
//! a legal runtime outcome surfaced as [`ControllerError::NotInDomain`] from
//! [`mpc_step`], never a crash.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use thiserror::Error;

use crate::model::ProblemSpec;
use crate::solver::{self, QuadraticProgram, SolveStatus, SolverError, SolverSettings};
use crate::synthesis::TubeDesign;

#[derive(Debug, Error)]
pub enum ControllerError {
    #[error("{0}")]
    Data(String),
    #[error("state is outside the controllable set (QP infeasible)")]
    NotInDomain,
    #[error("QP solver failed{}: {source}", dump_hint(.dump_dir))]
    Solver {
        dump_dir: Option<std::path::PathBuf>,
        #[source]
        source: SolverError,
    },
    #[error("optimal step violates a stage-constraint row by {violation:.3e} (row {row})")]
    PostconditionViolated { row: usize, violation: f64 },
}

fn dump_hint(dir: &Option<std::path::PathBuf>) -> String {
    dir.as_ref()
        .map(|d| format!(" (problem dumped under {})", d.display()))
        .unwrap_or_default()
}

/// Sizes of the assembled QP.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct QpDims {
    pub n_d: usize,
    pub n_eq: usize,
    pub n_iq: usize,
}

/// Named slices locating each component inside the decision vector.
#[derive(Debug, Clone)]
pub struct IndexMap {
    n: usize,
    m: usize,
    horizon: usize,
    n_s: usize,
    n_z: usize,
}

impl IndexMap {
    /// Offset of `z_k` for `k ≤ N + N_Z`.
    pub fn z_offset(&self, k: usize) -> usize {
        if k < self.horizon {
            k * (self.n + self.m)
        } else {
            self.horizon * (self.n + self.m) + (k - self.horizon) * self.n
        }
    }

    /// Offset of `v_k` for `k < N`.
    pub fn v_offset(&self, k: usize) -> usize {
        k * (self.n + self.m) + self.n
    }

    /// Offset of `ω_j` for `j < N_S`.
    pub fn omega_offset(&self, j: usize) -> usize {
        self.horizon * (self.n + self.m) + (self.n_z + 1) * self.n + j * self.n
    }

    pub fn num_z(&self) -> usize {
        self.horizon + self.n_z + 1
    }
}

/// The assembled tube optimal-control QP for one measured state.
#[derive(Debug, Clone)]
pub struct TubeQp {
    pub qp: QuadraticProgram,
    pub index_map: IndexMap,
    pub dims: QpDims,
}

/// Optimal plan extracted from the QP solution.
#[derive(Debug, Clone)]
pub struct OcpSolution {
    /// `z_0 … z_{N+N_Z}`.
    pub z_path: Vec<DVector<f64>>,
    /// `v_0 … v_{N−1}`.
    pub v_path: Vec<DVector<f64>>,
    /// `ω_0 … ω_{N_S−1}`.
    pub omega: Vec<DVector<f64>>,
    /// Optimal cost `V_T⁰(x)`.
    pub value: f64,
    pub solver_iterations: usize,
}

/// Outcome of one optimal-control solve. Infeasibility is data, not error.
#[derive(Debug, Clone)]
pub enum OcpOutcome {
    Feasible(OcpSolution),
    /// The measured state lies outside the controllable set.
    NotInDomain,
}

/// Per-step diagnostics surfaced by [`mpc_step`].
#[derive(Debug, Clone)]
pub struct StepDiagnostics {
    pub value: f64,
    pub z0: DVector<f64>,
    pub v0: DVector<f64>,
    pub solver_iterations: usize,
}

/// Assemble the QP for state `x`: block-diagonal cost over the stage and
/// terminal blocks, the tube initialization equality, nominal dynamics,
/// terminal chain, and the three inequality groups (disturbance rows,
/// tightened stage rows, tightened terminal rows).
pub fn assemble_qp(
    design: &TubeDesign,
    spec: &ProblemSpec,
    x: &DVector<f64>,
) -> Result<TubeQp, ControllerError> {
    let n = spec.plant.state_dim();
    let m = spec.plant.input_dim();
    if x.len() != n {
        return Err(ControllerError::Data(format!(
            "state has length {}, expected {n}",
            x.len()
        )));
    }
    if design.s.state_dim() != n || design.terminal.state_dim() != n {
        return Err(ControllerError::Data(
            "design and problem dimensions disagree".into(),
        ));
    }
    if design.f.len() != spec.y.num_rows() {
        return Err(ControllerError::Data(
            "tightening count does not match stage rows".into(),
        ));
    }
    let horizon = spec.horizon;
    let n_s = design.s.n_s();
    let n_z = design.terminal.n_z();
    let p = spec.y.num_rows();
    let q = spec.w.num_rows();

    let map = IndexMap {
        n,
        m,
        horizon,
        n_s,
        n_z,
    };
    let n_d = horizon * n + horizon * m + (n_z + 1) * n + n_s * n;
    let n_eq = n + horizon * n + n_z * n;
    let n_iq = n_s * q + horizon * p + (n_z + 1) * p;
    let dims = QpDims { n_d, n_eq, n_iq };

    // Cost: ½ xᵀHx with H = 2·blockdiag(Q, R, …, Q_Z, …, P), zero on ω.
    let mut h = DMatrix::zeros(n_d, n_d);
    let q_mat = spec.weights.q();
    let r_mat = spec.weights.r();
    let k_z = design.terminal.k_z();
    let q_z = q_mat + k_z.tr_mul(r_mat) * k_z;
    for k in 0..horizon {
        let zo = map.z_offset(k);
        let vo = map.v_offset(k);
        h.view_mut((zo, zo), (n, n)).copy_from(&(q_mat * 2.0));
        h.view_mut((vo, vo), (m, m)).copy_from(&(r_mat * 2.0));
    }
    for k in 0..n_z {
        let zo = map.z_offset(horizon + k);
        h.view_mut((zo, zo), (n, n)).copy_from(&(&q_z * 2.0));
    }
    let zo = map.z_offset(horizon + n_z);
    h.view_mut((zo, zo), (n, n)).copy_from(&(&design.p * 2.0));

    // Equalities: initialization, nominal dynamics, terminal chain.
    let mut a_eq = DMatrix::zeros(n_eq, n_d);
    let mut b_eq = DVector::zeros(n_eq);
    let scale = design.s.scale();
    a_eq.view_mut((0, map.z_offset(0)), (n, n))
        .copy_from(&DMatrix::identity(n, n));
    for j in 0..n_s {
        a_eq.view_mut((0, map.omega_offset(j)), (n, n))
            .copy_from(&(design.s.power(j) * scale));
    }
    b_eq.rows_mut(0, n).copy_from(x);

    let a = spec.plant.a();
    let b = spec.plant.b();
    for k in 0..horizon {
        let row = n + k * n;
        a_eq.view_mut((row, map.z_offset(k)), (n, n)).copy_from(a);
        a_eq.view_mut((row, map.v_offset(k)), (n, m)).copy_from(b);
        a_eq.view_mut((row, map.z_offset(k + 1)), (n, n))
            .copy_from(&(-DMatrix::<f64>::identity(n, n)));
    }
    let a_z = design.terminal.a_z();
    for k in 0..n_z {
        let row = n + horizon * n + k * n;
        a_eq.view_mut((row, map.z_offset(horizon + k)), (n, n))
            .copy_from(a_z);
        a_eq.view_mut((row, map.z_offset(horizon + k + 1)), (n, n))
            .copy_from(&(-DMatrix::<f64>::identity(n, n)));
    }

    // Inequalities: ω ∈ W, tightened stage rows, tightened terminal rows.
    let mut a_in = DMatrix::zeros(n_iq, n_d);
    let mut b_in = DVector::zeros(n_iq);
    for j in 0..n_s {
        a_in.view_mut((j * q, map.omega_offset(j)), (q, n))
            .copy_from(spec.w.normals());
        b_in.rows_mut(j * q, q).copy_from(spec.w.offsets());
    }
    let stage_base = n_s * q;
    let c_block = spec.y.normals().columns(0, n).clone_owned();
    let d_block = spec.y.normals().columns(n, m).clone_owned();
    for k in 0..horizon {
        let row = stage_base + k * p;
        a_in.view_mut((row, map.z_offset(k)), (p, n)).copy_from(&c_block);
        a_in.view_mut((row, map.v_offset(k)), (p, m)).copy_from(&d_block);
        for i in 0..p {
            b_in[row + i] = 1.0 - design.f[i];
        }
    }
    let term_base = stage_base + horizon * p;
    let zs = design.terminal.zs_rows();
    for k in 0..=n_z {
        let row = term_base + k * p;
        a_in.view_mut((row, map.z_offset(horizon + k)), (p, n))
            .copy_from(zs.normals());
        b_in.rows_mut(row, p).copy_from(zs.offsets());
    }

    Ok(TubeQp {
        qp: QuadraticProgram {
            hessian: h,
            gradient: DVector::zeros(n_d),
            a_eq,
            b_eq,
            a_in,
            b_in,
            num_vars: n_d,
        },
        index_map: map,
        dims,
    })
}

/// Solve an assembled tube QP. Optimal solutions come back constraint-checked
/// and unpacked along the index map; an infeasible QP is the
/// `x ∉ C_T` signal.
pub fn solve_ocp(
    tube_qp: &TubeQp,
    settings: &SolverSettings,
) -> Result<OcpOutcome, ControllerError> {
    match solver::solve_qp(&tube_qp.qp, settings) {
        Ok(SolveStatus::Optimal(opt)) => {
            let map = &tube_qp.index_map;
            let n = map.n;
            let m = map.m;
            let z_path: Vec<DVector<f64>> = (0..map.num_z())
                .map(|k| opt.x.rows(map.z_offset(k), n).clone_owned())
                .collect();
            let v_path: Vec<DVector<f64>> = (0..map.horizon)
                .map(|k| opt.x.rows(map.v_offset(k), m).clone_owned())
                .collect();
            let omega: Vec<DVector<f64>> = (0..map.n_s)
                .map(|j| opt.x.rows(map.omega_offset(j), n).clone_owned())
                .collect();
            Ok(OcpOutcome::Feasible(OcpSolution {
                z_path,
                v_path,
                omega,
                value: opt.objective,
                solver_iterations: opt.iterations,
            }))
        }
        Ok(SolveStatus::Infeasible(_)) => Ok(OcpOutcome::NotInDomain),
        Ok(SolveStatus::Unbounded(_)) => Err(ControllerError::Data(
            "tube QP cannot be unbounded: cost is nonnegative".into(),
        )),
        Err(source) => Err(ControllerError::Solver {
            dump_dir: settings.dump_dir.clone(),
            source,
        }),
    }
}

/// One controller step: assemble, solve, extract
/// `u = v₀⁰(x) + K_S·(x − z₀⁰(x))`, and assert the closed-loop stage
/// constraint `(x, u) ∈ Y` within the solver's feasibility band.
pub fn mpc_step(
    design: &TubeDesign,
    spec: &ProblemSpec,
    x: &DVector<f64>,
    settings: &SolverSettings,
) -> Result<(DVector<f64>, StepDiagnostics), ControllerError> {
    let tube_qp = assemble_qp(design, spec, x)?;
    match solve_ocp(&tube_qp, settings)? {
        OcpOutcome::NotInDomain => Err(ControllerError::NotInDomain),
        OcpOutcome::Feasible(sol) => {
            let z0 = sol.z_path[0].clone();
            let v0 = sol.v_path[0].clone();
            let u = &v0 + design.s.k_s() * (x - &z0);

            // (x, κ_T(x)) must satisfy every stage row; a violation beyond
            // the accumulated solver band indicates a tolerance bug.
            let mut xu = DVector::zeros(x.len() + u.len());
            xu.rows_mut(0, x.len()).copy_from(x);
            xu.rows_mut(x.len(), u.len()).copy_from(&u);
            let band = 100.0 * settings.feas_tol;
            let slack = spec.y.normals() * &xu - spec.y.offsets();
            for (row, v) in slack.iter().enumerate() {
                if *v > band {
                    return Err(ControllerError::PostconditionViolated {
                        row,
                        violation: *v,
                    });
                }
            }
            let diag = StepDiagnostics {
                value: sol.value,
                z0,
                v0,
                solver_iterations: sol.solver_iterations,
            };
            Ok((u, diag))
        }
    }
}

#[cfg(test)]
mod tests;
