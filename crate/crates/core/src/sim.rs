//! Closed-loop simulation of `x⁺ = A·x + B·κ_T(x) + w` with configurable
//! disturbance generation and full trace capture.
//!
//! Randomness comes from ChaCha8 streams keyed by `(seed, step)`, so traces
//! are reproducible across platforms; the seed is recorded in the trace
//! metadata. A feasibility loss mid-run aborts with the partial trace —
//! theory says it cannot happen, so surfacing it loudly is the point.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controller::{self, ControllerError};
use crate::model::{HPolyhedron, ProblemSpec};
use crate::setcalc::{support_polytope, SupportValue};
use crate::solver::SolverSettings;
use crate::synthesis::TubeDesign;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("{0}")]
    Data(String),
    #[error("initial state is outside the controllable set")]
    NotInDomain,
    #[error("controller lost feasibility at step {step}; partial trace retained")]
    MidRunInfeasible {
        step: usize,
        trace: Box<ClosedLoopTrace>,
    },
    #[error("controller failed at step {step}: {source}")]
    Controller {
        step: usize,
        #[source]
        source: ControllerError,
    },
    #[error("custom disturbance sequence exhausted at step {0}")]
    SequenceExhausted(usize),
    #[error("rejection sampling failed after {0} draws; W is degenerate")]
    RejectionFailure(usize),
    #[error("support evaluation failed: {0}")]
    SetCalc(#[from] crate::setcalc::SetCalcError),
}

/// How per-step disturbances are produced. Every generated `w` satisfies all
/// rows of `W` (extreme vertices are radially pulled back inside when the LP
/// maximizer overshoots by a rounding step, never projected).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DisturbanceMode {
    Zero,
    /// Maximize a seeded random direction over `W`; the optimal-face point
    /// the LP returns (a vertex for generic directions).
    ExtremeVertex,
    /// Rejection sampling inside `W` from its bounding box.
    UniformBox,
    /// Fixed user sequence, consumed by step index.
    CustomSequence,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DisturbancePolicy {
    pub mode: DisturbanceMode,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sequence: Option<Vec<Vec<f64>>>,
}

impl DisturbancePolicy {
    pub fn zero() -> Self {
        Self {
            mode: DisturbanceMode::Zero,
            seed: 0,
            sequence: None,
        }
    }

    pub fn extreme(seed: u64) -> Self {
        Self {
            mode: DisturbanceMode::ExtremeVertex,
            seed,
            sequence: None,
        }
    }

    pub fn uniform(seed: u64) -> Self {
        Self {
            mode: DisturbanceMode::UniformBox,
            seed,
            sequence: None,
        }
    }
}

/// SplitMix64 step, used to derive independent per-step RNG streams.
pub(crate) fn mix_seed(mut z: u64, salt: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15).wrapping_add(salt.wrapping_mul(0xbf58476d1ce4e5b9));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Draw the step-`k` disturbance under the policy; deterministic in
/// `(seed, k)`.
pub fn sample_disturbance(
    w: &HPolyhedron,
    policy: &DisturbancePolicy,
    k: usize,
    settings: &SolverSettings,
) -> Result<DVector<f64>, SimError> {
    let n = w.dim();
    match policy.mode {
        DisturbanceMode::Zero => Ok(DVector::zeros(n)),
        DisturbanceMode::CustomSequence => {
            let seq = policy
                .sequence
                .as_ref()
                .ok_or_else(|| SimError::Data("custom mode requires a sequence".into()))?;
            let raw = seq.get(k).ok_or(SimError::SequenceExhausted(k))?;
            if raw.len() != n {
                return Err(SimError::Data(format!(
                    "sequence entry {k} has length {}, expected {n}",
                    raw.len()
                )));
            }
            let v = DVector::from_vec(raw.clone());
            if w.violation(&v) > 0.0 {
                return Err(SimError::Data(format!(
                    "sequence entry {k} violates a disturbance row"
                )));
            }
            Ok(v)
        }
        DisturbanceMode::ExtremeVertex => {
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(policy.seed, k as u64));
            // Gaussian direction via Box-Muller keeps the draw platform-stable.
            let dir = DVector::from_fn(n, |_, _| {
                let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
                let u2: f64 = rng.gen_range(0.0..1.0);
                (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
            });
            match support_polytope(w, &dir, settings)? {
                SupportValue::Finite { maximizer, .. } => Ok(pull_inside(w, maximizer)),
                SupportValue::Unbounded { .. } => {
                    Err(SimError::Data("disturbance set is unbounded".into()))
                }
            }
        }
        DisturbanceMode::UniformBox => {
            // Bounding box from coordinate supports.
            let mut lo = DVector::zeros(n);
            let mut hi = DVector::zeros(n);
            for i in 0..n {
                let mut dir = DVector::zeros(n);
                dir[i] = 1.0;
                hi[i] = match support_polytope(w, &dir, settings)? {
                    SupportValue::Finite { value, .. } => value,
                    SupportValue::Unbounded { .. } => {
                        return Err(SimError::Data("disturbance set is unbounded".into()))
                    }
                };
                dir[i] = -1.0;
                lo[i] = -match support_polytope(w, &dir, settings)? {
                    SupportValue::Finite { value, .. } => value,
                    SupportValue::Unbounded { .. } => {
                        return Err(SimError::Data("disturbance set is unbounded".into()))
                    }
                };
            }
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(policy.seed, k as u64));
            const CAP: usize = 1_000_000;
            for _ in 0..CAP {
                let cand = DVector::from_fn(n, |i, _| rng.gen_range(lo[i]..=hi[i]));
                if w.violation(&cand) <= 0.0 {
                    return Ok(cand);
                }
            }
            Err(SimError::RejectionFailure(CAP))
        }
    }
}

/// Scale a near-vertex point back inside `W` when LP rounding left it a few
/// ulps outside. Radial scaling toward the interior origin keeps every row
/// satisfied exactly.
fn pull_inside(w: &HPolyhedron, point: DVector<f64>) -> DVector<f64> {
    let mut ratio: f64 = 1.0;
    for i in 0..w.num_rows() {
        let val = w.normal_row(i).dot(&point);
        if val > w.offsets()[i] {
            ratio = ratio.max(val / w.offsets()[i]);
        }
    }
    if ratio > 1.0 {
        point / ratio
    } else {
        point
    }
}

/// One closed-loop step record.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceStep {
    pub k: usize,
    pub x: Vec<f64>,
    pub u: Vec<f64>,
    pub w: Vec<f64>,
    pub z0: Vec<f64>,
    pub v0: Vec<f64>,
    pub value: f64,
    pub solver_iters: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TraceMetadata {
    pub design_hash: String,
    pub problem_hash: String,
    pub policy: DisturbancePolicy,
    pub seed: u64,
    pub steps: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClosedLoopTrace {
    pub steps: Vec<TraceStep>,
    pub metadata: TraceMetadata,
}

impl ClosedLoopTrace {
    /// CSV with columns `k, x[..], u[..], w[..], z0[..], v0[..], value,
    /// iters`. Floats print in shortest round-trip form, so re-parsing
    /// reproduces the trace bit-for-bit.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        if let Some(first) = self.steps.first() {
            let mut header = vec!["k".to_string()];
            header.extend((0..first.x.len()).map(|i| format!("x{i}")));
            header.extend((0..first.u.len()).map(|i| format!("u{i}")));
            header.extend((0..first.w.len()).map(|i| format!("w{i}")));
            header.extend((0..first.z0.len()).map(|i| format!("z0_{i}")));
            header.extend((0..first.v0.len()).map(|i| format!("v0_{i}")));
            header.push("value".into());
            header.push("iters".into());
            out.push_str(&header.join(","));
            out.push('\n');
        }
        for s in &self.steps {
            let mut row = vec![s.k.to_string()];
            for series in [&s.x, &s.u, &s.w, &s.z0, &s.v0] {
                row.extend(series.iter().map(|v| format!("{v}")));
            }
            row.push(format!("{}", s.value));
            row.push(s.solver_iters.to_string());
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    /// Replays the plant update on each recorded step; the stored successor
    /// state must match bit-for-bit.
    pub fn replay_consistent(&self, spec: &ProblemSpec) -> bool {
        for pair in self.steps.windows(2) {
            let (s0, s1) = (&pair[0], &pair[1]);
            let x = DVector::from_vec(s0.x.clone());
            let u = DVector::from_vec(s0.u.clone());
            let w = DVector::from_vec(s0.w.clone());
            let next = spec.plant.a() * &x + spec.plant.b() * &u + &w;
            if next
                .iter()
                .zip(s1.x.iter())
                .any(|(a, b)| a.to_bits() != b.to_bits())
            {
                return false;
            }
        }
        true
    }
}

/// FNV-1a over a byte stream; stable content fingerprint for trace metadata.
pub(crate) fn fnv1a_hex(bytes: &[u8]) -> String {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    format!("{h:016x}")
}

/// Run `steps` closed-loop iterations from `x0`. Every visited state must
/// stay feasible; a mid-run infeasibility aborts with the partial trace and
/// the offending step index.
pub fn simulate(
    design: &TubeDesign,
    spec: &ProblemSpec,
    x0: &DVector<f64>,
    steps: usize,
    policy: &DisturbancePolicy,
    settings: &SolverSettings,
) -> Result<ClosedLoopTrace, SimError> {
    let design_hash = fnv1a_hex(
        serde_json::to_string(&design.to_file())
            .map_err(|e| SimError::Data(e.to_string()))?
            .as_bytes(),
    );
    let problem_hash = fnv1a_hex(
        serde_json::to_string(&crate::model::problem_to_json(spec))
            .map_err(|e| SimError::Data(e.to_string()))?
            .as_bytes(),
    );
    let metadata = TraceMetadata {
        design_hash,
        problem_hash,
        policy: policy.clone(),
        seed: policy.seed,
        steps,
    };
    let mut trace = ClosedLoopTrace {
        steps: Vec::with_capacity(steps),
        metadata,
    };

    let mut x = x0.clone();
    for k in 0..steps {
        let (u, diag) = match controller::mpc_step(design, spec, &x, settings) {
            Ok(ok) => ok,
            Err(ControllerError::NotInDomain) if k == 0 => return Err(SimError::NotInDomain),
            Err(ControllerError::NotInDomain) => {
                return Err(SimError::MidRunInfeasible {
                    step: k,
                    trace: Box::new(trace),
                })
            }
            Err(source) => return Err(SimError::Controller { step: k, source }),
        };
        let w = sample_disturbance(&spec.w, policy, k, settings)?;
        let next = spec.plant.a() * &x + spec.plant.b() * &u + &w;
        trace.steps.push(TraceStep {
            k,
            x: x.iter().copied().collect(),
            u: u.iter().copied().collect(),
            w: w.iter().copied().collect(),
            z0: diag.z0.iter().copied().collect(),
            v0: diag.v0.iter().copied().collect(),
            value: diag.value,
            solver_iters: diag.solver_iterations,
        });
        x = next;
    }
    Ok(trace)
}

/// Verdict of the per-step value-decrease inequality
/// `V(x_{k+1}) ≤ V(x_k) − λ_min(Q)·‖z₀(x_k)‖² + 1e-6`.
#[derive(Debug, Clone, Serialize)]
pub struct DecreaseReport {
    pub pass: bool,
    /// Most negative slack across steps (negative values are margin).
    pub worst_margin: f64,
    pub violations: Vec<(usize, f64)>,
}

/// Check the decrease inequality along a recorded trace.
pub fn check_decrease(trace: &ClosedLoopTrace, q: &nalgebra::DMatrix<f64>) -> DecreaseReport {
    let lambda_min = q
        .clone()
        .symmetric_eigenvalues()
        .iter()
        .fold(f64::INFINITY, |acc, v| acc.min(*v));
    let mut report = DecreaseReport {
        pass: true,
        worst_margin: f64::NEG_INFINITY,
        violations: Vec::new(),
    };
    for pair in trace.steps.windows(2) {
        let (s0, s1) = (&pair[0], &pair[1]);
        let z0_sq: f64 = s0.z0.iter().map(|v| v * v).sum();
        let margin = s1.value - (s0.value - lambda_min * z0_sq + 1e-6);
        report.worst_margin = report.worst_margin.max(margin);
        if margin > 0.0 {
            report.pass = false;
            report.violations.push((s0.k, margin));
        }
    }
    if trace.steps.len() < 2 {
        report.worst_margin = 0.0;
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthesis::design;
    use crate::synthesis::tests::double_integrator_spec;

    fn settings() -> SolverSettings {
        SolverSettings::default()
    }

    #[test]
    fn zero_policy_keeps_origin_fixed() {
        let spec = double_integrator_spec(8);
        let d = design(&spec).unwrap();
        let trace = simulate(
            &d,
            &spec,
            &DVector::zeros(2),
            6,
            &DisturbancePolicy::zero(),
            &settings(),
        )
        .unwrap();
        for s in &trace.steps {
            assert!(s.x.iter().all(|v| v.abs() <= 1e-6));
            assert!(s.u.iter().all(|v| v.abs() <= 1e-6));
            assert!(s.value.abs() <= 1e-7);
        }
    }

    #[test]
    fn extreme_vertex_draws_satisfy_rows_and_are_deterministic() {
        let w = HPolyhedron::box_scaled(2, 0.1);
        let policy = DisturbancePolicy::extreme(7);
        let sets = settings();
        for k in 0..20 {
            let a = sample_disturbance(&w, &policy, k, &sets).unwrap();
            let b = sample_disturbance(&w, &policy, k, &sets).unwrap();
            assert_eq!(a, b);
            assert!(w.violation(&a) <= 0.0, "violation {}", w.violation(&a));
            // A box vertex has both coordinates at the radius.
            assert!(a.iter().all(|v| (v.abs() - 0.1).abs() <= 1e-6));
        }
    }

    #[test]
    fn box_vertex_for_fixed_direction() {
        // Direction (0.7, 0.7) picks the (1, 1) vertex of B∞.
        let w = HPolyhedron::inf_ball(2);
        let dir = DVector::from_row_slice(&[0.7, 0.7]);
        match support_polytope(&w, &dir, &settings()).unwrap() {
            SupportValue::Finite { maximizer, .. } => {
                assert!((maximizer[0] - 1.0).abs() <= 1e-7);
                assert!((maximizer[1] - 1.0).abs() <= 1e-7);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn uniform_box_stays_inside_with_near_zero_mean() {
        let w = HPolyhedron::inf_ball(2);
        let policy = DisturbancePolicy::uniform(11);
        let sets = settings();
        let n_draws = 10_000;
        let mut mean = DVector::zeros(2);
        for k in 0..n_draws {
            let d = sample_disturbance(&w, &policy, k, &sets).unwrap();
            assert!(w.violation(&d) <= 0.0);
            mean += &d;
        }
        mean /= n_draws as f64;
        // Mean of U[−1,1] over 10⁴ draws: σ_mean = 1/√(3·10⁴) ≈ 0.0058.
        let three_sigma = 3.0 / (3.0_f64 * n_draws as f64).sqrt();
        assert!(mean.amax() <= three_sigma, "mean {mean:?}");
    }

    #[test]
    fn custom_sequence_is_consumed_and_bounded() {
        let w = HPolyhedron::inf_ball(2);
        let policy = DisturbancePolicy {
            mode: DisturbanceMode::CustomSequence,
            seed: 0,
            sequence: Some(vec![vec![0.5, -0.5]]),
        };
        let sets = settings();
        let d = sample_disturbance(&w, &policy, 0, &sets).unwrap();
        assert_eq!(d, DVector::from_row_slice(&[0.5, -0.5]));
        assert!(matches!(
            sample_disturbance(&w, &policy, 1, &sets),
            Err(SimError::SequenceExhausted(1))
        ));
    }

    #[test]
    fn trace_replay_is_bit_exact_and_deterministic() {
        let spec = double_integrator_spec(8);
        let d = design(&spec).unwrap();
        let x0 = DVector::from_row_slice(&[5.0, -2.0]);
        let policy = DisturbancePolicy::extreme(42);
        let sets = settings();
        let t1 = simulate(&d, &spec, &x0, 10, &policy, &sets).unwrap();
        let t2 = simulate(&d, &spec, &x0, 10, &policy, &sets).unwrap();
        assert!(t1.replay_consistent(&spec));
        assert_eq!(
            serde_json::to_string(&t1.steps).unwrap(),
            serde_json::to_string(&t2.steps).unwrap()
        );
    }

    #[test]
    fn states_in_s_stay_in_s_under_extreme_disturbances() {
        let spec = double_integrator_spec(8);
        let d = design(&spec).unwrap();
        let sets = settings();
        let x0 = DVector::from_row_slice(&[0.05, 0.0]);
        assert!(crate::setcalc::member_s(&d.s, &x0, &sets).unwrap().inside);
        let trace = simulate(&d, &spec, &x0, 12, &DisturbancePolicy::extreme(3), &sets).unwrap();
        for s in &trace.steps {
            let x = DVector::from_vec(s.x.clone());
            assert!(
                crate::setcalc::member_s(&d.s, &x, &sets).unwrap().inside,
                "step {} left S: {:?}",
                s.k,
                s.x
            );
        }
    }

    #[test]
    fn decrease_report_flags_corruption() {
        let spec = double_integrator_spec(8);
        let d = design(&spec).unwrap();
        let x0 = DVector::from_row_slice(&[8.0, 1.0]);
        let sets = settings();
        let mut trace = simulate(&d, &spec, &x0, 10, &DisturbancePolicy::extreme(5), &sets).unwrap();
        let clean = check_decrease(&trace, spec.weights.q());
        assert!(clean.pass, "violations: {:?}", clean.violations);

        // Bump one value past any legitimate decrease: the report must
        // localize the corruption.
        trace.steps[4].value += 1e6;
        let dirty = check_decrease(&trace, spec.weights.q());
        assert!(!dirty.pass);
        assert!(dirty.violations.iter().any(|(k, _)| *k == 3 || *k == 4));
    }
}
