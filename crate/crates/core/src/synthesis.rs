//! Offline design: gains, contraction certificate `(N_S, α)`, constraint
//! tightenings `fᵢ`, terminal cost check, and terminal horizon `N_Z`,
//! assembled into a [`TubeDesign`].
//!
//! Every search works directly on support values of the raw constraint rows;
//! no set is ever built. The two failure modes — an iteration cap reached
//! before the certificate holds, and tightenings reaching 1 so the
//! admissibility assumption cannot hold — are reported as distinct
//! [`FailureReason`]s and counted separately by the benchmark harness.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    check_spd, matrix_to_rows, spectral_radius, HPolyhedron, ModelError, PolyhedronRole,
    ProblemSpec,
};
use crate::setcalc::{
    support_polytope, support_terminal_intersection, ImplicitRpiSet, ImplicitTerminalSet,
    SetCalcError, SupportValue,
};
use crate::solver::SolverSettings;

/// Slack applied to every LP-backed certificate comparison. Support values
/// land within a few ulps of exact after polishing, but hand-written or
/// reloaded designs pin α and f as literals, so the inclusion tests must
/// absorb float-path drift.
pub const CERTIFICATE_TOL: f64 = 1e-9;

/// How the terminal horizon certificate is checked.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NzMode {
    /// The necessary-and-sufficient inclusion test: one chain LP of
    /// `(N_Z+1)·n` variables per stage row and candidate.
    Exact,
    /// The cheaper one-step inclusion test: one `n`-variable LP per stage
    /// row and candidate. May certify a larger `N_Z` than necessary.
    #[default]
    Sufficient,
}

/// Source of the tube gain `K_S`.
#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum KsSource {
    /// LQR with identity weights.
    #[default]
    LqrIdentity,
    /// LQR with user weights.
    LqrWeights { qs: Vec<Vec<f64>>, rs: Vec<Vec<f64>> },
    /// A user-supplied stabilizing gain.
    Given { k: Vec<Vec<f64>> },
}

/// Source of the terminal gain `K_Z` and cost matrix `P`.
#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum KzSource {
    /// LQR with the problem's cost weights `(Q, R)`; the Riccati solution
    /// satisfies the terminal Lyapunov inequality with equality.
    #[default]
    LqrCostWeights,
    /// User-supplied pair, checked against the Lyapunov inequality.
    Given { k: Vec<Vec<f64>>, p: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthesisOptions {
    #[serde(default = "default_alpha_target")]
    pub alpha_target: f64,
    #[serde(default = "default_cap")]
    pub max_ns: usize,
    #[serde(default = "default_cap")]
    pub max_nz: usize,
    #[serde(default)]
    pub nz_mode: NzMode,
    #[serde(default)]
    pub ks_source: KsSource,
    #[serde(default)]
    pub kz_source: KzSource,
    /// When set, `(N_S, α)` must additionally certify `α·S ⊆ ε·B∞`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon_rpi: Option<f64>,
}

fn default_alpha_target() -> f64 {
    0.5
}

fn default_cap() -> usize {
    10_000
}

impl Default for SynthesisOptions {
    fn default() -> Self {
        Self {
            alpha_target: default_alpha_target(),
            max_ns: default_cap(),
            max_nz: default_cap(),
            nz_mode: NzMode::default(),
            ks_source: KsSource::default(),
            kz_source: KzSource::default(),
            epsilon_rpi: None,
        }
    }
}

impl SynthesisOptions {
    pub fn check(&self) -> Result<(), ModelError> {
        if !(self.alpha_target > 0.0 && self.alpha_target < 1.0) {
            return Err(ModelError::Data(format!(
                "alpha_target must be in (0, 1), got {}",
                self.alpha_target
            )));
        }
        if self.max_ns == 0 || self.max_nz == 0 {
            return Err(ModelError::Data("iteration caps must be ≥ 1".into()));
        }
        if let Some(eps) = self.epsilon_rpi {
            if !(eps > 0.0) {
                return Err(ModelError::Data(format!(
                    "epsilon_rpi must be > 0, got {eps}"
                )));
            }
        }
        Ok(())
    }
}

/// Which assumption or cap made the offline design fail.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureReason {
    /// `N_S` search hit its cap before the contraction target held.
    ContractionCap,
    /// Some tightening reached 1, so the cross-section cannot be admissible.
    Admissibility,
    /// `N_Z` search hit its cap before the terminal condition held.
    TerminalCap,
    /// The Riccati fixed point did not converge within its sweep cap.
    RiccatiNonConvergence,
    /// Problem data failed validation before any search started.
    Validation,
    /// A user-supplied gain or cost matrix violates its assumption.
    BadGain,
    /// A solver broke down mid-search (benchmark bookkeeping).
    Numerical,
}

#[derive(Debug, Error)]
pub enum SynthesisError {
    #[error("synthesis failed at stage `{stage}` ({reason:?}) after {iterations} iterations: {detail}")]
    Failure {
        stage: &'static str,
        reason: FailureReason,
        iterations: usize,
        detail: String,
    },
    #[error(transparent)]
    SetCalc(#[from] SetCalcError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

fn fail(
    stage: &'static str,
    reason: FailureReason,
    iterations: usize,
    detail: String,
) -> SynthesisError {
    SynthesisError::Failure {
        stage,
        reason,
        iterations,
        detail,
    }
}

/// Per-stage record of what the design run did.
#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct Provenance {
    pub alpha_target: f64,
    pub nz_mode: NzMode,
    pub ks_source: String,
    pub kz_source: String,
    pub epsilon_rpi: Option<f64>,
    pub ns_candidates: usize,
    pub nz_candidates: usize,
    pub lp_solves: u64,
    /// Stage wall-times in milliseconds, in execution order.
    pub stage_ms: Vec<(String, f64)>,
}

/// The complete offline synthesis output: everything needed to pose the
/// online QP.
#[derive(Debug, Clone)]
pub struct TubeDesign {
    pub s: ImplicitRpiSet,
    /// Tightening scalars, one per stage row, each in `[0, 1)`.
    pub f: DVector<f64>,
    pub terminal: ImplicitTerminalSet,
    /// Terminal cost matrix, symmetric positive definite.
    pub p: DMatrix<f64>,
    pub nz_mode: NzMode,
    pub provenance: Provenance,
}

/// Unconstrained infinite-horizon discrete-time LQR via the Riccati fixed
/// point `P ← Qw + AᵀPA − AᵀPB(Rw+BᵀPB)⁻¹BᵀPA` from `P₀ = Qw`, stopping at
/// relative increment 1e-12 or 10000 sweeps.
///
/// Returns `(K, P)` with `K = −(Rw+BᵀPB)⁻¹BᵀPA` and `ρ(A+BK) < 1`.
pub fn gain_lqr(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    qw: &DMatrix<f64>,
    rw: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>), SynthesisError> {
    check_spd("Qw", qw)?;
    check_spd("Rw", rw)?;
    const SWEEP_CAP: usize = 10_000;
    let mut p = qw.clone();
    let mut converged = false;
    for _ in 0..SWEEP_CAP {
        let next = riccati_map(a, b, qw, rw, &p)
            .ok_or_else(|| {
                fail(
                    "gain_lqr",
                    FailureReason::RiccatiNonConvergence,
                    0,
                    "Rw + BᵀPB lost positive definiteness".into(),
                )
            })?
            .0;
        let diff = (&next - &p).amax();
        let scale = next.amax().max(1.0);
        p = next;
        if diff <= 1e-12 * scale {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(fail(
            "gain_lqr",
            FailureReason::RiccatiNonConvergence,
            SWEEP_CAP,
            "Riccati fixed point did not reach 1e-12 relative increment".into(),
        ));
    }
    let (_, k) = riccati_map(a, b, qw, rw, &p).ok_or_else(|| {
        fail(
            "gain_lqr",
            FailureReason::RiccatiNonConvergence,
            0,
            "Rw + BᵀPB lost positive definiteness".into(),
        )
    })?;
    let rho = spectral_radius(&(a + b * &k));
    if rho >= 1.0 {
        return Err(fail(
            "gain_lqr",
            FailureReason::RiccatiNonConvergence,
            SWEEP_CAP,
            format!("closed loop not strictly stable, ρ = {rho}"),
        ));
    }
    Ok((k, p))
}

/// One application of the Riccati map, returning `(Ric(P), K(P))`.
fn riccati_map(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    qw: &DMatrix<f64>,
    rw: &DMatrix<f64>,
    p: &DMatrix<f64>,
) -> Option<(DMatrix<f64>, DMatrix<f64>)> {
    let btp = b.tr_mul(p);
    let gram = rw + &btp * b;
    let chol = gram.cholesky()?;
    let btpa = &btp * a;
    let x = chol.solve(&btpa);
    let next = qw + a.tr_mul(p) * a - btpa.tr_mul(&x);
    // Symmetrize to stop drift across thousands of sweeps.
    let next = (&next + next.transpose()) * 0.5;
    Some((next, -x))
}

/// `α_{N_S} = max_i σ_W((A_K^{N_S})ᵀ eᵢ)` with `q` support LPs. Nonnegative
/// whenever the origin is interior to `W`; `N_S = 0` gives the support of
/// `W` at its own rows, exactly 1 for an irreducible offset-1 representation.
pub fn compute_contraction(
    a_k: &DMatrix<f64>,
    w: &HPolyhedron,
    n_s: usize,
    settings: &SolverSettings,
) -> Result<f64, SynthesisError> {
    let n = a_k.nrows();
    let mut power = DMatrix::identity(n, n);
    for _ in 0..n_s {
        power = a_k * power;
    }
    contraction_of_power(&power, w, settings)
}

fn contraction_of_power(
    power: &DMatrix<f64>,
    w: &HPolyhedron,
    settings: &SolverSettings,
) -> Result<f64, SynthesisError> {
    let mut alpha: f64 = 0.0;
    for i in 0..w.num_rows() {
        let dir = power.tr_mul(&w.normal_row(i));
        match support_polytope(w, &dir, settings)? {
            SupportValue::Finite { value, .. } => alpha = alpha.max(value),
            SupportValue::Unbounded { .. } => {
                return Err(SetCalcError::UnboundedDisturbance { term: i }.into())
            }
        }
    }
    Ok(alpha.max(0.0))
}

/// Smallest `N_S ≤ max_ns` with `α_{N_S} ≤ alpha_target`, returning that
/// `N_S` together with `α = α_{N_S}` itself. With `epsilon_rpi` set, the
/// candidate must additionally certify `α·S ⊆ ε·B∞`, checked on the 2n
/// signed coordinate directions through running support sums.
pub fn find_ns(
    a_k: &DMatrix<f64>,
    w: &HPolyhedron,
    opts: &SynthesisOptions,
    settings: &SolverSettings,
) -> Result<(usize, f64), SynthesisError> {
    let n = a_k.nrows();
    // Running power A_K^k and, for the ε-RPI variant, running sums
    // Σ_{j<k} σ_W((A_Kʲ)ᵀ(±e_i)).
    let mut power = DMatrix::identity(n, n);
    let mut radius_sums = vec![0.0_f64; 2 * n];
    for candidate in 1..=opts.max_ns {
        if opts.epsilon_rpi.is_some() {
            for (idx, sum) in radius_sums.iter_mut().enumerate() {
                let mut dir = DVector::zeros(n);
                dir[idx / 2] = if idx % 2 == 0 { 1.0 } else { -1.0 };
                let d = power.tr_mul(&dir);
                match support_polytope(w, &d, settings)? {
                    SupportValue::Finite { value, .. } => *sum += value,
                    SupportValue::Unbounded { .. } => {
                        return Err(SetCalcError::UnboundedDisturbance { term: idx }.into())
                    }
                }
            }
        }
        power = a_k * power;
        let alpha = contraction_of_power(&power, w, settings)?;
        if alpha <= opts.alpha_target + CERTIFICATE_TOL {
            let eps_ok = match opts.epsilon_rpi {
                None => true,
                Some(eps) => {
                    let radius = radius_sums.iter().fold(0.0_f64, |acc, v| acc.max(*v));
                    alpha * radius / (1.0 - alpha) <= eps + CERTIFICATE_TOL * (1.0 + eps)
                }
            };
            if eps_ok {
                return Ok((candidate, alpha));
            }
        }
    }
    Err(fail(
        "n_s_search",
        FailureReason::ContractionCap,
        opts.max_ns,
        format!("no N_S ≤ {} meets the contraction target", opts.max_ns),
    ))
}

/// Tightenings `fᵢ = σ_S(cᵢ + K_Sᵀdᵢ)` accumulated by the running iteration
/// `f_{(k+1,i)} = f_{(k,i)} + (1−α)⁻¹·σ_W((A_Kᵀ)ᵏ ηᵢ)`: `N_S·p` support
/// LPs, partial sums nondecreasing in `k`.
pub fn compute_tightenings(
    s: &ImplicitRpiSet,
    y: &HPolyhedron,
    k_s: &DMatrix<f64>,
    settings: &SolverSettings,
) -> Result<DVector<f64>, SynthesisError> {
    let n = s.state_dim();
    let m = k_s.nrows();
    if y.dim() != n + m {
        return Err(SynthesisError::Model(ModelError::Data(format!(
            "Y lives in R^{}, expected R^{}",
            y.dim(),
            n + m
        ))));
    }
    let p = y.num_rows();
    let mut f = DVector::zeros(p);
    let mut worst: Option<usize> = None;
    for i in 0..p {
        let row = y.normal_row(i);
        let c = row.rows(0, n).clone_owned();
        let d = row.rows(n, m).clone_owned();
        let eta = &c + k_s.tr_mul(&d);
        // Direction iterate d_k = (A_Kᵀ)ᵏ·η.
        let mut dir = eta;
        let mut acc = 0.0;
        for k in 0..s.n_s() {
            match support_polytope(s.w(), &dir, settings).map_err(|e| tag_term(e, k))? {
                SupportValue::Finite { value, .. } => acc += s.scale() * value,
                SupportValue::Unbounded { .. } => {
                    return Err(SetCalcError::UnboundedDisturbance { term: k }.into())
                }
            }
            dir = s.a_k().tr_mul(&dir);
        }
        f[i] = acc;
        if acc >= 1.0 && worst.map(|w| f[w] < acc).unwrap_or(true) {
            worst = Some(i);
        }
    }
    if let Some(i) = worst {
        return Err(fail(
            "tightening",
            FailureReason::Admissibility,
            s.n_s(),
            format!("f[{i}] = {} ≥ 1: S is not strictly admissible for Y", f[i]),
        ));
    }
    Ok(f)
}

fn tag_term(e: SetCalcError, k: usize) -> SetCalcError {
    match e {
        SetCalcError::Solver { source, .. } => SetCalcError::Solver {
            term: Some(k),
            source,
        },
        other => other,
    }
}

/// Check the terminal Lyapunov inequality: the largest eigenvalue of
/// `A_ZᵀPA_Z − P + Qw + K_ZᵀRwK_Z` must be ≤ 1e-8·‖P‖ with `P` symmetric
/// positive definite. `Qw`, `Rw` must themselves be positive definite.
pub fn verify_terminal_cost(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    k_z: &DMatrix<f64>,
    p: &DMatrix<f64>,
    qw: &DMatrix<f64>,
    rw: &DMatrix<f64>,
) -> Result<bool, SynthesisError> {
    check_spd("Qw", qw)?;
    check_spd("Rw", rw)?;
    if check_spd("P", p).is_err() {
        return Ok(false);
    }
    let a_z = a + b * k_z;
    let residual = a_z.tr_mul(p) * &a_z - p + qw + k_z.tr_mul(rw) * k_z;
    let residual = (&residual + residual.transpose()) * 0.5;
    let max_eig = residual
        .symmetric_eigenvalues()
        .iter()
        .fold(f64::NEG_INFINITY, |acc, v| acc.max(*v));
    let p_norm = p
        .clone()
        .symmetric_eigenvalues()
        .iter()
        .fold(0.0_f64, |acc, v| acc.max(v.abs()));
    Ok(max_eig <= 1e-8 * p_norm)
}

/// Smallest `N_Z ≤ max_nz` certifying the terminal horizon under the chosen
/// mode, searched incrementally from `N_Z = 0` with the running power
/// `A_Z^{N_Z+1}`.
pub fn find_nz(
    a_z: &DMatrix<f64>,
    k_z: &DMatrix<f64>,
    zs: &HPolyhedron,
    f: &DVector<f64>,
    opts: &SynthesisOptions,
    settings: &SolverSettings,
) -> Result<usize, SynthesisError> {
    let p = zs.num_rows();
    if f.len() != p {
        return Err(SynthesisError::Model(ModelError::Data(
            "tightening vector length must match Z_S rows".into(),
        )));
    }
    let mut power = a_z.clone(); // A_Z^{candidate+1}
    for candidate in 0..=opts.max_nz {
        let mut ok = true;
        for i in 0..p {
            let psi = power.tr_mul(&zs.normal_row(i));
            let value = match opts.nz_mode {
                NzMode::Sufficient => support_polytope(zs, &psi, settings)?,
                NzMode::Exact => {
                    let t = ImplicitTerminalSet::new(
                        a_z.clone(),
                        k_z.clone(),
                        zs.clone(),
                        candidate,
                    )?;
                    support_terminal_intersection(&t, &psi, settings)?
                }
            };
            match value {
                SupportValue::Finite { value, .. } => {
                    if value + f[i] > 1.0 + CERTIFICATE_TOL {
                        ok = false;
                        break;
                    }
                }
                // An unbounded support simply fails the condition at this
                // candidate; contraction will shrink ψ at larger N_Z.
                SupportValue::Unbounded { .. } => {
                    ok = false;
                    break;
                }
            }
        }
        if ok {
            return Ok(candidate);
        }
        power = a_z * power;
    }
    Err(fail(
        "n_z_search",
        FailureReason::TerminalCap,
        opts.max_nz,
        format!("no N_Z ≤ {} meets the terminal condition", opts.max_nz),
    ))
}

fn matrix_from_nested(name: &str, rows: &[Vec<f64>]) -> Result<DMatrix<f64>, SynthesisError> {
    if rows.is_empty() || rows[0].is_empty() {
        return Err(SynthesisError::Model(ModelError::Data(format!(
            "{name} must be a nonempty matrix"
        ))));
    }
    let ncols = rows[0].len();
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(SynthesisError::Model(ModelError::Data(format!(
            "{name} rows are ragged"
        ))));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |r, c| rows[r][c]))
}

/// Run the complete offline design. Deterministic given the problem and
/// options; aborts at the first failing stage with its name, iteration
/// count, and offending indices.
pub fn design(spec: &ProblemSpec) -> Result<TubeDesign, SynthesisError> {
    design_with_settings(spec, &SolverSettings::default())
}

pub fn design_with_settings(
    spec: &ProblemSpec,
    settings: &SolverSettings,
) -> Result<TubeDesign, SynthesisError> {
    let opts = &spec.options;
    opts.check()?;
    let (a, b) = (spec.plant.a(), spec.plant.b());
    let (n, m) = (spec.plant.state_dim(), spec.plant.input_dim());
    let q_rows = spec.w.num_rows() as u64;
    let p_rows = spec.y.num_rows() as u64;
    let mut prov = Provenance {
        alpha_target: opts.alpha_target,
        nz_mode: opts.nz_mode,
        ks_source: format!("{:?}", opts.ks_source),
        kz_source: format!("{:?}", opts.kz_source),
        epsilon_rpi: opts.epsilon_rpi,
        ..Default::default()
    };

    // Validation gate.
    let t0 = Instant::now();
    let plant_report = crate::model::validate_plant(&spec.plant, 1e-8);
    if !plant_report.pass {
        return Err(fail(
            "validation",
            FailureReason::Validation,
            0,
            plant_report.messages.join("; "),
        ));
    }
    let y_report = crate::model::validate_polyhedron(&spec.y, PolyhedronRole::Stage, 1e-9)?;
    if !y_report.pass {
        return Err(fail(
            "validation",
            FailureReason::Validation,
            0,
            format!("Y: {}", y_report.messages.join("; ")),
        ));
    }
    let w_report =
        crate::model::validate_polyhedron(&spec.w, PolyhedronRole::Disturbance, 1e-9)?;
    if !w_report.pass {
        return Err(fail(
            "validation",
            FailureReason::Validation,
            0,
            format!("W: {}", w_report.messages.join("; ")),
        ));
    }
    prov.stage_ms
        .push(("validation".into(), ms_since(t0)));

    // Tube gain K_S.
    let t0 = Instant::now();
    let k_s = match &opts.ks_source {
        KsSource::LqrIdentity => {
            gain_lqr(a, b, &DMatrix::identity(n, n), &DMatrix::identity(m, m))?.0
        }
        KsSource::LqrWeights { qs, rs } => {
            let qs = matrix_from_nested("ks_source.qs", qs)?;
            let rs = matrix_from_nested("ks_source.rs", rs)?;
            gain_lqr(a, b, &qs, &rs)?.0
        }
        KsSource::Given { k } => {
            let k = matrix_from_nested("ks_source.k", k)?;
            if k.nrows() != m || k.ncols() != n {
                return Err(fail(
                    "gain_ks",
                    FailureReason::BadGain,
                    0,
                    format!("K_S must be {m}x{n}"),
                ));
            }
            let rho = spectral_radius(&(a + b * &k));
            if rho >= 1.0 - 1e-9 {
                return Err(fail(
                    "gain_ks",
                    FailureReason::BadGain,
                    0,
                    format!("A + B·K_S not strictly stable, ρ = {rho}"),
                ));
            }
            k
        }
    };
    let a_k = a + b * &k_s;
    prov.stage_ms.push(("gain_ks".into(), ms_since(t0)));

    // Contraction horizon.
    let t0 = Instant::now();
    let (n_s, alpha) = find_ns(&a_k, &spec.w, opts, settings)?;
    prov.ns_candidates = n_s;
    prov.lp_solves += n_s as u64 * q_rows;
    if opts.epsilon_rpi.is_some() {
        prov.lp_solves += n_s as u64 * 2 * n as u64;
    }
    let s = ImplicitRpiSet::from_certified_parts(a_k.clone(), k_s.clone(), spec.w.clone(), alpha, n_s)?;
    prov.stage_ms.push(("n_s_search".into(), ms_since(t0)));

    // Tightenings.
    let t0 = Instant::now();
    let f = compute_tightenings(&s, &spec.y, &k_s, settings)?;
    prov.lp_solves += n_s as u64 * p_rows;
    prov.stage_ms.push(("tightening".into(), ms_since(t0)));

    // Terminal gain and cost.
    let t0 = Instant::now();
    let (k_z, p_mat) = match &opts.kz_source {
        KzSource::LqrCostWeights => gain_lqr(a, b, spec.weights.q(), spec.weights.r())?,
        KzSource::Given { k, p } => {
            let k = matrix_from_nested("kz_source.k", k)?;
            let p = matrix_from_nested("kz_source.p", p)?;
            if !verify_terminal_cost(a, b, &k, &p, spec.weights.q(), spec.weights.r())? {
                return Err(fail(
                    "gain_kz",
                    FailureReason::BadGain,
                    0,
                    "supplied (K_Z, P) violate the terminal Lyapunov inequality".into(),
                ));
            }
            (k, p)
        }
    };
    let a_z = a + b * &k_z;
    prov.stage_ms.push(("gain_kz".into(), ms_since(t0)));

    // Terminal horizon over the tightened rows (cᵢ + K_Zᵀdᵢ, 1 − fᵢ).
    let t0 = Instant::now();
    let zs = zs_rows(spec, &k_z, &f)?;
    let n_z = find_nz(&a_z, &k_z, &zs, &f, opts, settings)?;
    prov.nz_candidates = n_z + 1;
    prov.lp_solves += (n_z as u64 + 1) * p_rows;
    let terminal = ImplicitTerminalSet::new(a_z, k_z, zs, n_z)?;
    prov.stage_ms.push(("n_z_search".into(), ms_since(t0)));

    Ok(TubeDesign {
        s,
        f,
        terminal,
        p: p_mat,
        nz_mode: opts.nz_mode,
        provenance: prov,
    })
}

fn ms_since(t0: Instant) -> f64 {
    t0.elapsed().as_secs_f64() * 1e3
}

/// The tightened terminal rows `(cᵢ + K_Zᵀdᵢ) z ≤ 1 − fᵢ` in raw form.
pub fn zs_rows(
    spec: &ProblemSpec,
    k_z: &DMatrix<f64>,
    f: &DVector<f64>,
) -> Result<HPolyhedron, SynthesisError> {
    let n = spec.plant.state_dim();
    let p = spec.y.num_rows();
    let mut normals = DMatrix::zeros(p, n);
    let mut offsets = DVector::zeros(p);
    for i in 0..p {
        let (c, d) = spec.y_row_split(i);
        let eta = &c + k_z.tr_mul(&d);
        normals.row_mut(i).copy_from(&eta.transpose());
        offsets[i] = 1.0 - f[i];
    }
    Ok(HPolyhedron::from_raw_rows(normals, offsets)?)
}

// ── Design-file serialization ───────────────────────────────────────────

/// On-disk form of a [`TubeDesign`]. Together with the problem file it fully
/// reconstructs the in-memory design; loading re-checks the cheap
/// invariants, [`TubeDesign::verify`] re-runs the LP certificates.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DesignFile {
    #[serde(rename = "K_S")]
    pub k_s: Vec<Vec<f64>>,
    pub alpha: f64,
    #[serde(rename = "N_S")]
    pub n_s: usize,
    pub f: Vec<f64>,
    #[serde(rename = "K_Z")]
    pub k_z: Vec<Vec<f64>>,
    #[serde(rename = "P")]
    pub p: Vec<Vec<f64>>,
    #[serde(rename = "N_Z")]
    pub n_z: usize,
    pub mode: NzMode,
    pub provenance: Provenance,
}

impl TubeDesign {
    pub fn to_file(&self) -> DesignFile {
        DesignFile {
            k_s: matrix_to_rows(self.s.k_s()),
            alpha: self.s.alpha(),
            n_s: self.s.n_s(),
            f: self.f.iter().copied().collect(),
            k_z: matrix_to_rows(self.terminal.k_z()),
            p: matrix_to_rows(&self.p),
            n_z: self.terminal.n_z(),
            mode: self.nz_mode,
            provenance: self.provenance.clone(),
        }
    }

    /// Rebuild from a design file and its problem. Re-checks the cheap
    /// certificate invariants: strict stability of both closed loops,
    /// `α ∈ [0,1)`, `max fᵢ < 1`, offsets of the tightened rows, and the
    /// terminal Lyapunov residual.
    pub fn from_file(file: &DesignFile, spec: &ProblemSpec) -> Result<Self, SynthesisError> {
        let (n, m) = (spec.plant.state_dim(), spec.plant.input_dim());
        let k_s = matrix_from_nested("K_S", &file.k_s)?;
        let k_z = matrix_from_nested("K_Z", &file.k_z)?;
        let p_mat = matrix_from_nested("P", &file.p)?;
        if k_s.nrows() != m || k_s.ncols() != n || k_z.nrows() != m || k_z.ncols() != n {
            return Err(SynthesisError::Model(ModelError::Data(
                "gain dimensions do not match the plant".into(),
            )));
        }
        if file.f.len() != spec.y.num_rows() {
            return Err(SynthesisError::Model(ModelError::Data(
                "tightening vector length does not match Y".into(),
            )));
        }
        let f = DVector::from_vec(file.f.clone());
        let f_max = f.iter().fold(f64::NEG_INFINITY, |acc, v| acc.max(*v));
        if f_max >= 1.0 {
            return Err(SynthesisError::Model(ModelError::Data(format!(
                "max tightening {f_max} ≥ 1 violates admissibility"
            ))));
        }
        let a_k = spec.plant.a() + spec.plant.b() * &k_s;
        let s = ImplicitRpiSet::from_certified_parts(
            a_k,
            k_s,
            spec.w.clone(),
            file.alpha,
            file.n_s,
        )?;
        let a_z = spec.plant.a() + spec.plant.b() * &k_z;
        if !verify_terminal_cost(
            spec.plant.a(),
            spec.plant.b(),
            &k_z,
            &p_mat,
            spec.weights.q(),
            spec.weights.r(),
        )? {
            return Err(SynthesisError::Model(ModelError::Data(
                "terminal Lyapunov residual check failed on load".into(),
            )));
        }
        let zs = zs_rows(spec, &k_z, &f)?;
        let terminal = ImplicitTerminalSet::new(a_z, k_z, zs, file.n_z)?;
        Ok(Self {
            s,
            f,
            terminal,
            p: p_mat,
            nz_mode: file.mode,
            provenance: file.provenance.clone(),
        })
    }

    /// Re-run every LP-backed certificate: the contraction inclusion, the
    /// tightening recomputation and admissibility bound, and the terminal
    /// horizon condition under the recorded mode.
    pub fn verify(&self, spec: &ProblemSpec, settings: &SolverSettings) -> Result<(), SynthesisError> {
        self.s.verify_contraction(settings)?;
        let f = compute_tightenings(&self.s, &spec.y, self.s.k_s(), settings)?;
        let drift = (&f - &self.f).amax();
        if drift > 1e-7 {
            return Err(fail(
                "verify",
                FailureReason::Admissibility,
                0,
                format!("stored tightenings drift {drift:.3e} from recomputation"),
            ));
        }
        if !verify_terminal_cost(
            spec.plant.a(),
            spec.plant.b(),
            self.terminal.k_z(),
            &self.p,
            spec.weights.q(),
            spec.weights.r(),
        )? {
            return Err(fail(
                "verify",
                FailureReason::BadGain,
                0,
                "terminal Lyapunov inequality violated".into(),
            ));
        }
        let opts = SynthesisOptions {
            nz_mode: self.nz_mode,
            max_nz: self.terminal.n_z() + 1,
            ..spec.options.clone()
        };
        let certified = find_nz(
            self.terminal.a_z(),
            self.terminal.k_z(),
            self.terminal.zs_rows(),
            &self.f,
            &opts,
            settings,
        )?;
        if certified > self.terminal.n_z() {
            return Err(fail(
                "verify",
                FailureReason::TerminalCap,
                certified,
                format!(
                    "recorded N_Z = {} fails the terminal condition",
                    self.terminal.n_z()
                ),
            ));
        }
        Ok(())
    }
}
