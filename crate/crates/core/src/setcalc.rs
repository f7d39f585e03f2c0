//! Implicit set calculus.
//!
//! The tube cross-section `S`, the tightened stage set, and the terminal set
//! are never constructed. Every query about them reduces to small dense LPs
//! over the raw constraint rows:
//!
//! * the support of a polytope is one LP over its rows;
//! * the support of `S = (1−α)⁻¹ ⊕ⱼ A_Kʲ·W` splits into `N_S` supports of
//!   `W` at transformed directions (support of a Minkowski sum of images);
//! * membership in `S` is a feasibility LP over per-term disturbance picks;
//! * the support of the terminal intersection `⋂ⱼ A_Z⁻ʲ·Z_S` is one LP over
//!   a forward chain of states;
//! * membership in the terminal set needs no LP at all — iterating the
//!   terminal dynamics and checking rows is exact.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::model::{spectral_radius, HPolyhedron};
use crate::solver::{
    self, InfeasibilityCertificate, LinearProgram, SolveStatus, SolverError, SolverSettings,
};

#[derive(Debug, Error)]
pub enum SetCalcError {
    #[error("{0}")]
    Data(String),
    #[error("support LP failed{}: {source}", term.map(|j| format!(" at power index {j}")).unwrap_or_default())]
    Solver {
        /// Index `j` of the failing Minkowski term, when applicable.
        term: Option<usize>,
        #[source]
        source: SolverError,
    },
    #[error("support of the disturbance set is unbounded at power index {term}; W is not a C-set")]
    UnboundedDisturbance { term: usize },
    #[error("support LP was infeasible; the polyhedron has no points, which violates its invariants")]
    EmptyPolyhedron,
    #[error("contraction certificate violated: α_Ns = {computed} > α = {alpha}")]
    ContractionViolated { computed: f64, alpha: f64 },
}

/// A support-function value. Unbounded directions are a legal outcome for
/// D-sets, so they are a value here, not an error.
#[derive(Debug, Clone)]
pub enum SupportValue {
    Finite { value: f64, maximizer: DVector<f64> },
    Unbounded { ray: DVector<f64> },
}

impl SupportValue {
    pub fn finite(&self) -> Option<f64> {
        match self {
            SupportValue::Finite { value, .. } => Some(*value),
            SupportValue::Unbounded { .. } => None,
        }
    }

    pub fn is_unbounded(&self) -> bool {
        matches!(self, SupportValue::Unbounded { .. })
    }
}

/// `σ_P(y) = max { yᵀp : p ∈ P }` by one LP over the rows of `P`.
pub fn support_polytope(
    p: &HPolyhedron,
    y: &DVector<f64>,
    settings: &SolverSettings,
) -> Result<SupportValue, SetCalcError> {
    if y.len() != p.dim() {
        return Err(SetCalcError::Data(format!(
            "direction has length {}, polyhedron dimension is {}",
            y.len(),
            p.dim()
        )));
    }
    let lp = LinearProgram {
        objective: -y,
        a_eq: DMatrix::zeros(0, p.dim()),
        b_eq: DVector::zeros(0),
        a_in: p.normals().clone(),
        b_in: p.offsets().clone(),
        num_vars: p.dim(),
    };
    match solver::solve_lp(&lp, settings) {
        Ok(SolveStatus::Optimal(opt)) => Ok(SupportValue::Finite {
            value: -opt.objective,
            maximizer: opt.x,
        }),
        Ok(SolveStatus::Unbounded(ray)) => Ok(SupportValue::Unbounded { ray: ray.ray }),
        Ok(SolveStatus::Infeasible(_)) => Err(SetCalcError::EmptyPolyhedron),
        Err(source) => Err(SetCalcError::Solver { term: None, source }),
    }
}

/// The tube cross-section `S = (1−α)⁻¹ ⊕_{j<N_S} A_Kʲ·W`, held implicitly:
/// the local closed-loop matrix, the certificate pair `(α, N_S)`, and the
/// disturbance rows. Matrix powers `A_Kʲ` are prefilled at construction and
/// shared read-only afterwards.
#[derive(Debug, Clone)]
pub struct ImplicitRpiSet {
    a_k: DMatrix<f64>,
    k_s: DMatrix<f64>,
    w: HPolyhedron,
    alpha: f64,
    n_s: usize,
    powers: Vec<DMatrix<f64>>,
}

impl ImplicitRpiSet {
    /// Build from parts whose contraction certificate is trusted (e.g. read
    /// back from a design file). Cheap invariants are still enforced:
    /// `ρ(A_K) < 1`, `α ∈ [0, 1)`, `N_S ≥ 1`, consistent dimensions.
    pub fn from_certified_parts(
        a_k: DMatrix<f64>,
        k_s: DMatrix<f64>,
        w: HPolyhedron,
        alpha: f64,
        n_s: usize,
    ) -> Result<Self, SetCalcError> {
        let n = a_k.nrows();
        if a_k.ncols() != n || n == 0 {
            return Err(SetCalcError::Data("A_K must be square".into()));
        }
        if k_s.ncols() != n {
            return Err(SetCalcError::Data("K_S must have n columns".into()));
        }
        if w.dim() != n {
            return Err(SetCalcError::Data("W dimension mismatch".into()));
        }
        if !(0.0..1.0).contains(&alpha) {
            return Err(SetCalcError::Data(format!("α = {alpha} outside [0, 1)")));
        }
        if n_s == 0 {
            return Err(SetCalcError::Data("N_S must be ≥ 1".into()));
        }
        let rho = spectral_radius(&a_k);
        if rho >= 1.0 - 1e-9 {
            return Err(SetCalcError::Data(format!(
                "A + B·K_S must be strictly stable, spectral radius {rho}"
            )));
        }
        let mut powers = Vec::with_capacity(n_s);
        powers.push(DMatrix::identity(n, n));
        for j in 1..n_s {
            let next = &a_k * &powers[j - 1];
            powers.push(next);
        }
        Ok(Self {
            a_k,
            k_s,
            w,
            alpha,
            n_s,
            powers,
        })
    }

    /// Build and additionally verify the contraction certificate
    /// `α_{N_S} ≤ α` by `q` support LPs.
    pub fn new(
        a_k: DMatrix<f64>,
        k_s: DMatrix<f64>,
        w: HPolyhedron,
        alpha: f64,
        n_s: usize,
        settings: &SolverSettings,
    ) -> Result<Self, SetCalcError> {
        let set = Self::from_certified_parts(a_k, k_s, w, alpha, n_s)?;
        set.verify_contraction(settings)?;
        Ok(set)
    }

    /// Re-run the LP-based contraction certificate.
    pub fn verify_contraction(&self, settings: &SolverSettings) -> Result<(), SetCalcError> {
        let computed = crate::synthesis::compute_contraction(&self.a_k, &self.w, self.n_s, settings)
            .map_err(|e| match e {
                crate::synthesis::SynthesisError::SetCalc(inner) => inner,
                other => SetCalcError::Data(other.to_string()),
            })?;
        if computed <= self.alpha + crate::synthesis::CERTIFICATE_TOL * (1.0 + self.alpha) {
            Ok(())
        } else {
            Err(SetCalcError::ContractionViolated {
                computed,
                alpha: self.alpha,
            })
        }
    }

    pub fn a_k(&self) -> &DMatrix<f64> {
        &self.a_k
    }

    pub fn k_s(&self) -> &DMatrix<f64> {
        &self.k_s
    }

    pub fn w(&self) -> &HPolyhedron {
        &self.w
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn n_s(&self) -> usize {
        self.n_s
    }

    pub fn state_dim(&self) -> usize {
        self.a_k.nrows()
    }

    /// `A_Kʲ` for `j < N_S` from the prefilled cache.
    pub fn power(&self, j: usize) -> &DMatrix<f64> {
        &self.powers[j]
    }

    pub fn scale(&self) -> f64 {
        1.0 / (1.0 - self.alpha)
    }
}

/// `σ_S(η) = (1−α)⁻¹ Σ_{j<N_S} σ_W((A_Kʲ)ᵀη)`: exactly `N_S` LP solves.
pub fn support_s(
    s: &ImplicitRpiSet,
    eta: &DVector<f64>,
    settings: &SolverSettings,
) -> Result<f64, SetCalcError> {
    let mut total = 0.0;
    for j in 0..s.n_s() {
        let dir = s.power(j).tr_mul(eta);
        match support_polytope(s.w(), &dir, settings).map_err(|e| retag(e, j))? {
            SupportValue::Finite { value, .. } => total += value,
            SupportValue::Unbounded { .. } => {
                return Err(SetCalcError::UnboundedDisturbance { term: j })
            }
        }
    }
    Ok(s.scale() * total)
}

fn retag(e: SetCalcError, j: usize) -> SetCalcError {
    match e {
        SetCalcError::Solver { source, .. } => SetCalcError::Solver {
            term: Some(j),
            source,
        },
        other => other,
    }
}

/// Membership answer with the refutation kept around: a Farkas certificate
/// is a checkable "no".
#[derive(Debug, Clone)]
pub struct Membership {
    pub inside: bool,
    pub certificate: Option<InfeasibilityCertificate>,
}

/// `x ∈ S` iff disturbances `ω_0..ω_{N_S−1}` exist with
/// `x = (1−α)⁻¹ Σ A_Kʲ ω_j` and every `ω_j ∈ W`: a zero-objective
/// feasibility LP in `N_S·n` variables.
pub fn member_s(
    s: &ImplicitRpiSet,
    point: &DVector<f64>,
    settings: &SolverSettings,
) -> Result<Membership, SetCalcError> {
    let n = s.state_dim();
    if point.len() != n {
        return Err(SetCalcError::Data("point dimension mismatch".into()));
    }
    let q = s.w().num_rows();
    let nv = s.n_s() * n;
    let mut a_eq = DMatrix::zeros(n, nv);
    for j in 0..s.n_s() {
        a_eq.view_mut((0, j * n), (n, n))
            .copy_from(&(s.power(j) * s.scale()));
    }
    let mut a_in = DMatrix::zeros(s.n_s() * q, nv);
    let mut b_in = DVector::zeros(s.n_s() * q);
    for j in 0..s.n_s() {
        a_in.view_mut((j * q, j * n), (q, n))
            .copy_from(s.w().normals());
        b_in.rows_mut(j * q, q).copy_from(s.w().offsets());
    }
    let lp = LinearProgram {
        objective: DVector::zeros(nv),
        a_eq,
        b_eq: point.clone(),
        a_in,
        b_in,
        num_vars: nv,
    };
    match solver::solve_lp(&lp, settings) {
        Ok(SolveStatus::Optimal(_)) => Ok(Membership {
            inside: true,
            certificate: None,
        }),
        Ok(SolveStatus::Infeasible(cert)) => Ok(Membership {
            inside: false,
            certificate: Some(cert),
        }),
        Ok(SolveStatus::Unbounded(_)) => Err(SetCalcError::Data(
            "feasibility LP cannot be unbounded".into(),
        )),
        Err(source) => Err(SetCalcError::Solver { term: None, source }),
    }
}

/// The terminal constraint set `Z_f = ⋂_{j≤N_Z} A_Z⁻ʲ·Z_S`, held implicitly
/// through the terminal closed-loop matrix and the tightened rows
/// `(cᵢ + K_Zᵀdᵢ, 1 − fᵢ)`.
#[derive(Debug, Clone)]
pub struct ImplicitTerminalSet {
    a_z: DMatrix<f64>,
    k_z: DMatrix<f64>,
    zs: HPolyhedron,
    n_z: usize,
}

impl ImplicitTerminalSet {
    pub fn new(
        a_z: DMatrix<f64>,
        k_z: DMatrix<f64>,
        zs: HPolyhedron,
        n_z: usize,
    ) -> Result<Self, SetCalcError> {
        let n = a_z.nrows();
        if a_z.ncols() != n || n == 0 {
            return Err(SetCalcError::Data("A_Z must be square".into()));
        }
        if k_z.ncols() != n {
            return Err(SetCalcError::Data("K_Z must have n columns".into()));
        }
        if zs.dim() != n {
            return Err(SetCalcError::Data("Z_S dimension mismatch".into()));
        }
        let rho = spectral_radius(&a_z);
        if rho >= 1.0 - 1e-9 {
            return Err(SetCalcError::Data(format!(
                "A + B·K_Z must be strictly stable, spectral radius {rho}"
            )));
        }
        for (i, off) in zs.offsets().iter().enumerate() {
            if !(*off > 0.0 && *off <= 1.0) {
                return Err(SetCalcError::Data(format!(
                    "Z_S row {i} offset {off} outside (0, 1]; tightening violates admissibility"
                )));
            }
        }
        Ok(Self { a_z, k_z, zs, n_z })
    }

    pub fn a_z(&self) -> &DMatrix<f64> {
        &self.a_z
    }

    pub fn k_z(&self) -> &DMatrix<f64> {
        &self.k_z
    }

    pub fn zs_rows(&self) -> &HPolyhedron {
        &self.zs
    }

    pub fn n_z(&self) -> usize {
        self.n_z
    }

    pub fn state_dim(&self) -> usize {
        self.a_z.nrows()
    }
}

/// Support of `⋂_{k≤N_Z} A_Z⁻ᵏ·Z_S` at `ψ`: one LP in `(N_Z+1)·n` variables
/// over the chain `z_{k+1} = A_Z·z_k` with every `z_k ∈ Z_S`. With `N_Z = 0`
/// this reduces to the plain support of `Z_S`.
pub fn support_terminal_intersection(
    t: &ImplicitTerminalSet,
    psi: &DVector<f64>,
    settings: &SolverSettings,
) -> Result<SupportValue, SetCalcError> {
    if psi.len() != t.state_dim() {
        return Err(SetCalcError::Data("direction dimension mismatch".into()));
    }
    if t.n_z() == 0 {
        return support_polytope(t.zs_rows(), psi, settings);
    }
    let n = t.state_dim();
    let p = t.zs_rows().num_rows();
    let stages = t.n_z() + 1;
    let nv = stages * n;
    let mut objective = DVector::zeros(nv);
    objective.rows_mut(0, n).copy_from(&(-psi));

    let mut a_eq = DMatrix::zeros(t.n_z() * n, nv);
    for k in 0..t.n_z() {
        a_eq.view_mut((k * n, k * n), (n, n)).copy_from(t.a_z());
        a_eq.view_mut((k * n, (k + 1) * n), (n, n))
            .copy_from(&(-DMatrix::<f64>::identity(n, n)));
    }
    let mut a_in = DMatrix::zeros(stages * p, nv);
    let mut b_in = DVector::zeros(stages * p);
    for k in 0..stages {
        a_in.view_mut((k * p, k * n), (p, n))
            .copy_from(t.zs_rows().normals());
        b_in.rows_mut(k * p, p).copy_from(t.zs_rows().offsets());
    }
    let lp = LinearProgram {
        objective,
        a_eq,
        b_eq: DVector::zeros(t.n_z() * n),
        a_in,
        b_in,
        num_vars: nv,
    };
    match solver::solve_lp(&lp, settings) {
        Ok(SolveStatus::Optimal(opt)) => Ok(SupportValue::Finite {
            value: -opt.objective,
            maximizer: opt.x.rows(0, n).clone_owned(),
        }),
        Ok(SolveStatus::Unbounded(ray)) => Ok(SupportValue::Unbounded {
            ray: ray.ray.rows(0, n).clone_owned(),
        }),
        Ok(SolveStatus::Infeasible(_)) => Err(SetCalcError::EmptyPolyhedron),
        Err(source) => Err(SetCalcError::Solver { term: None, source }),
    }
}

/// `z ∈ Z_f` iff the chain `z_{k+1} = A_Z·z_k` satisfies every `Z_S` row for
/// `k = 0..N_Z`. Direct forward iteration; no LP.
pub fn member_zf(t: &ImplicitTerminalSet, z: &DVector<f64>, tol: f64) -> bool {
    let mut state = z.clone();
    for _ in 0..=t.n_z() {
        if state.iter().any(|v| !v.is_finite()) {
            return false;
        }
        if t.zs_rows().violation(&state) > tol {
            return false;
        }
        state = t.a_z() * state;
    }
    true
}
