//! Problem data: the uncertain plant, constraint polyhedra, cost weights,
//! and the JSON problem-file format.
//!
//! Everything here is immutable after construction and safe to share across
//! threads; validation operations are pure and idempotent.

use std::path::{Path, PathBuf};

use nalgebra::{Complex, DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::setcalc;
use crate::solver::SolverSettings;
use crate::synthesis::SynthesisOptions;

/// Numerical rank cutoff for the PBH test: singular values below this
/// fraction of the largest count as zero.
pub const PBH_RANK_TOL: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("{0}")]
    Data(String),
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error in {path} at line {line}, column {column}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("support evaluation failed during validation: {0}")]
    SetCalc(#[from] crate::setcalc::SetCalcError),
}

/// The uncertain linear plant `x⁺ = A·x + B·u + w`.
#[derive(Debug, Clone)]
pub struct Plant {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
}

impl Plant {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self, ModelError> {
        let n = a.nrows();
        if n == 0 || a.ncols() != n {
            return Err(ModelError::Data(format!(
                "A must be square and nonempty, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        if b.nrows() != n || b.ncols() == 0 {
            return Err(ModelError::Data(format!(
                "B must be {n}xm with m ≥ 1, got {}x{}",
                b.nrows(),
                b.ncols()
            )));
        }
        if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
            return Err(ModelError::Data("plant matrices must be finite".into()));
        }
        Ok(Self { a, b })
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }
}

/// Largest absolute eigenvalue.
pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    m.complex_eigenvalues()
        .iter()
        .fold(0.0_f64, |acc, l| acc.max(l.norm()))
}

/// A polyhedron `{x : normalᵢᵀx ≤ offsetᵢ}` in halfspace form.
///
/// Constraint sets ingested from problem files carry offset 1 on every row
/// (proper D-set form); the tightened terminal rows keep their `1 − fᵢ`
/// offsets.
#[derive(Debug, Clone, PartialEq)]
pub struct HPolyhedron {
    normals: DMatrix<f64>,
    offsets: DVector<f64>,
}

impl HPolyhedron {
    /// Build from rows with general positive offsets, normalizing each row to
    /// offset 1. Rows with offset ≤ 0 are rejected: such a set cannot contain
    /// the origin in its interior, and the tightening arithmetic assumes the
    /// offset-1 form.
    pub fn new(normals: DMatrix<f64>, offsets: DVector<f64>) -> Result<Self, ModelError> {
        if normals.nrows() == 0 {
            return Err(ModelError::Data("polyhedron needs at least one row".into()));
        }
        if normals.nrows() != offsets.len() {
            return Err(ModelError::Data("row/offset count mismatch".into()));
        }
        if normals.iter().chain(offsets.iter()).any(|v| !v.is_finite()) {
            return Err(ModelError::Data("polyhedron data must be finite".into()));
        }
        let mut scaled = normals;
        for (i, off) in offsets.iter().enumerate() {
            if *off <= 0.0 {
                return Err(ModelError::Data(format!(
                    "row {i} has offset {off}; only strictly positive offsets are representable"
                )));
            }
            let inv = 1.0 / off;
            scaled.row_mut(i).scale_mut(inv);
        }
        Ok(Self {
            offsets: DVector::from_element(scaled.nrows(), 1.0),
            normals: scaled,
        })
    }

    /// Build from rows already in offset-1 form.
    pub fn from_unit_rows(normals: DMatrix<f64>) -> Result<Self, ModelError> {
        let offsets = DVector::from_element(normals.nrows(), 1.0);
        Self::new(normals, offsets)
    }

    /// Build from raw rows, keeping offsets exactly as given (used for the
    /// tightened terminal rows whose offsets are `1 − fᵢ`).
    pub fn from_raw_rows(normals: DMatrix<f64>, offsets: DVector<f64>) -> Result<Self, ModelError> {
        if normals.nrows() == 0 {
            return Err(ModelError::Data("polyhedron needs at least one row".into()));
        }
        if normals.nrows() != offsets.len() {
            return Err(ModelError::Data("row/offset count mismatch".into()));
        }
        if normals.iter().chain(offsets.iter()).any(|v| !v.is_finite()) {
            return Err(ModelError::Data("polyhedron data must be finite".into()));
        }
        Ok(Self { normals, offsets })
    }

    /// The unit ∞-norm ball in `R^dim`, `2·dim` rows.
    pub fn inf_ball(dim: usize) -> Self {
        Self::box_scaled(dim, 1.0)
    }

    /// The ∞-norm ball of the given radius in offset-1 form.
    pub fn box_scaled(dim: usize, radius: f64) -> Self {
        assert!(dim >= 1 && radius > 0.0);
        let mut normals = DMatrix::zeros(2 * dim, dim);
        for i in 0..dim {
            normals[(2 * i, i)] = 1.0 / radius;
            normals[(2 * i + 1, i)] = -1.0 / radius;
        }
        Self {
            normals,
            offsets: DVector::from_element(2 * dim, 1.0),
        }
    }

    /// Stage-constraint box `{‖x‖∞ ≤ x_radius} × {‖u‖∞ ≤ u_radius}` in
    /// `R^{n+m}`, offset-1 form, `2(n+m)` rows.
    pub fn stage_box(n: usize, m: usize, x_radius: f64, u_radius: f64) -> Self {
        assert!(n >= 1 && m >= 1 && x_radius > 0.0 && u_radius > 0.0);
        let mut normals = DMatrix::zeros(2 * (n + m), n + m);
        for i in 0..n {
            normals[(2 * i, i)] = 1.0 / x_radius;
            normals[(2 * i + 1, i)] = -1.0 / x_radius;
        }
        for j in 0..m {
            normals[(2 * n + 2 * j, n + j)] = 1.0 / u_radius;
            normals[(2 * n + 2 * j + 1, n + j)] = -1.0 / u_radius;
        }
        Self {
            normals,
            offsets: DVector::from_element(2 * (n + m), 1.0),
        }
    }

    pub fn dim(&self) -> usize {
        self.normals.ncols()
    }

    pub fn num_rows(&self) -> usize {
        self.normals.nrows()
    }

    pub fn normals(&self) -> &DMatrix<f64> {
        &self.normals
    }

    pub fn offsets(&self) -> &DVector<f64> {
        &self.offsets
    }

    pub fn normal_row(&self, i: usize) -> DVector<f64> {
        self.normals.row(i).transpose()
    }

    /// `max_i (normalᵢᵀx − offsetᵢ)`: ≤ 0 iff `x` satisfies every row.
    pub fn violation(&self, x: &DVector<f64>) -> f64 {
        (&self.normals * x - &self.offsets)
            .iter()
            .fold(f64::NEG_INFINITY, |acc, v| acc.max(*v))
    }

    pub fn contains(&self, x: &DVector<f64>, tol: f64) -> bool {
        self.violation(x) <= tol
    }
}

/// Quadratic stage-cost weights; both matrices symmetric positive definite.
#[derive(Debug, Clone)]
pub struct CostWeights {
    q: DMatrix<f64>,
    r: DMatrix<f64>,
}

impl CostWeights {
    pub fn new(q: DMatrix<f64>, r: DMatrix<f64>) -> Result<Self, ModelError> {
        check_spd("Q", &q)?;
        check_spd("R", &r)?;
        Ok(Self { q, r })
    }

    pub fn identity(n: usize, m: usize) -> Self {
        Self {
            q: DMatrix::identity(n, n),
            r: DMatrix::identity(m, m),
        }
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn r(&self) -> &DMatrix<f64> {
        &self.r
    }

    pub fn min_eigenvalue_q(&self) -> f64 {
        self.q
            .clone()
            .symmetric_eigenvalues()
            .iter()
            .fold(f64::INFINITY, |acc, v| acc.min(*v))
    }
}

pub(crate) fn check_spd(name: &str, m: &DMatrix<f64>) -> Result<(), ModelError> {
    if m.nrows() == 0 || m.nrows() != m.ncols() {
        return Err(ModelError::Data(format!("{name} must be square")));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(ModelError::Data(format!("{name} must be finite")));
    }
    let scale = m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
    let asym = (m - m.transpose())
        .iter()
        .fold(0.0_f64, |acc, v| acc.max(v.abs()));
    if asym > 1e-9 * (1.0 + scale) {
        return Err(ModelError::Data(format!(
            "{name} asymmetry {asym:.3e} exceeds 1e-9 relative tolerance"
        )));
    }
    let min_eig = m
        .clone()
        .symmetric_eigenvalues()
        .iter()
        .fold(f64::INFINITY, |acc, v| acc.min(*v));
    if min_eig <= 0.0 {
        return Err(ModelError::Data(format!(
            "{name} must be positive definite (min eigenvalue {min_eig:.3e})"
        )));
    }
    Ok(())
}

/// A complete control problem: plant, constraints, weights, horizon, options.
#[derive(Debug, Clone)]
pub struct ProblemSpec {
    pub plant: Plant,
    /// Stage constraints on `(x, u)` in `R^{n+m}`, offset-1 rows `(cᵢ, dᵢ)`.
    pub y: HPolyhedron,
    /// Disturbance bound in `R^n`, offset-1 rows `eᵢ`.
    pub w: HPolyhedron,
    pub weights: CostWeights,
    pub horizon: usize,
    pub options: SynthesisOptions,
}

impl ProblemSpec {
    pub fn new(
        plant: Plant,
        y: HPolyhedron,
        w: HPolyhedron,
        weights: CostWeights,
        horizon: usize,
        options: SynthesisOptions,
    ) -> Result<Self, ModelError> {
        let (n, m) = (plant.state_dim(), plant.input_dim());
        if y.dim() != n + m {
            return Err(ModelError::Data(format!(
                "Y lives in R^{}, expected R^{}",
                y.dim(),
                n + m
            )));
        }
        if w.dim() != n {
            return Err(ModelError::Data(format!(
                "W lives in R^{}, expected R^{n}",
                w.dim()
            )));
        }
        if weights.q().nrows() != n || weights.r().nrows() != m {
            return Err(ModelError::Data("cost weight dimensions mismatch".into()));
        }
        if horizon == 0 {
            return Err(ModelError::Data("horizon N must be ≥ 1".into()));
        }
        options.check()?;
        Ok(Self {
            plant,
            y,
            w,
            weights,
            horizon,
            options,
        })
    }

    /// Split row `i` of Y into its state part `cᵢ` and input part `dᵢ`.
    pub fn y_row_split(&self, i: usize) -> (DVector<f64>, DVector<f64>) {
        let n = self.plant.state_dim();
        let m = self.plant.input_dim();
        let row = self.y.normal_row(i);
        (
            row.rows(0, n).clone_owned(),
            row.rows(n, m).clone_owned(),
        )
    }
}

/// One eigenvalue on or outside the unit circle, with its PBH margin.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PbhMode {
    pub eigenvalue_re: f64,
    pub eigenvalue_im: f64,
    pub magnitude: f64,
    /// Smallest singular value of `[A − λI, B]` relative to the largest.
    pub rank_margin: f64,
    pub controllable: bool,
}

/// Result of a validation operation. Never mutates its input; two calls on
/// the same data produce identical reports.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ValidationReport {
    pub pass: bool,
    pub unstable_modes: Vec<PbhMode>,
    pub redundant_rows: Vec<usize>,
    pub unbounded_directions: Vec<usize>,
    pub messages: Vec<String>,
}

/// Stabilizability check via the PBH test: every eigenvalue `λ` of `A` with
/// `|λ| ≥ 1 − tol` must satisfy `rank([A − λI, B]) = n`.
pub fn validate_plant(plant: &Plant, tol: f64) -> ValidationReport {
    let n = plant.state_dim();
    let m = plant.input_dim();
    let eigs = plant.a().complex_eigenvalues();
    let mut report = ValidationReport {
        pass: true,
        ..Default::default()
    };
    for lambda in eigs.iter() {
        if lambda.norm() < 1.0 - tol {
            continue;
        }
        // Complex PBH matrix [A − λI, B].
        let mut pbh = DMatrix::<Complex<f64>>::zeros(n, n + m);
        for r in 0..n {
            for c in 0..n {
                pbh[(r, c)] = Complex::new(plant.a()[(r, c)], 0.0);
            }
            pbh[(r, r)] -= lambda;
            for c in 0..m {
                pbh[(r, n + c)] = Complex::new(plant.b()[(r, c)], 0.0);
            }
        }
        let sv = pbh.svd(false, false).singular_values;
        let sigma_max = sv.iter().fold(0.0_f64, |acc, v| acc.max(*v));
        let sigma_min = sv.iter().fold(f64::INFINITY, |acc, v| acc.min(*v));
        let margin = if sigma_max > 0.0 {
            sigma_min / sigma_max
        } else {
            0.0
        };
        let controllable = margin > PBH_RANK_TOL;
        if !controllable {
            report.pass = false;
            report.messages.push(format!(
                "uncontrollable unstable mode at {:.6}{:+.6}i (PBH margin {margin:.3e})",
                lambda.re, lambda.im
            ));
        }
        report.unstable_modes.push(PbhMode {
            eigenvalue_re: lambda.re,
            eigenvalue_im: lambda.im,
            magnitude: lambda.norm(),
            rank_margin: margin,
            controllable,
        });
    }
    report
}

/// Which invariants a polyhedron must satisfy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolyhedronRole {
    /// Proper D-set: origin strictly inside; unboundedness allowed.
    Stage,
    /// Proper C-set: origin strictly inside and bounded.
    Disturbance,
}

/// Origin-interior, boundedness (disturbance role), and redundancy checks.
///
/// Redundant rows are flagged, never removed: redundancy costs constraint
/// rows, not correctness. A zero normal row is a data error rather than a
/// finding.
pub fn validate_polyhedron(
    p: &HPolyhedron,
    role: PolyhedronRole,
    tol: f64,
) -> Result<ValidationReport, ModelError> {
    let dim = p.dim();
    let settings = SolverSettings::default();
    let mut report = ValidationReport {
        pass: true,
        ..Default::default()
    };

    for i in 0..p.num_rows() {
        let norm = p.normal_row(i).amax();
        if norm == 0.0 {
            return Err(ModelError::Data(format!("row {i} has a zero normal")));
        }
    }

    for (i, off) in p.offsets().iter().enumerate() {
        if *off < tol {
            report.pass = false;
            report
                .messages
                .push(format!("row {i} offset {off:.3e} < {tol:.1e}: origin not strictly inside"));
        }
    }

    if role == PolyhedronRole::Disturbance {
        // Boundedness certified by finite support values in all 2·dim signed
        // coordinate directions.
        for k in 0..2 * dim {
            let mut dir = DVector::zeros(dim);
            dir[k / 2] = if k % 2 == 0 { 1.0 } else { -1.0 };
            match setcalc::support_polytope(p, &dir, &settings)? {
                setcalc::SupportValue::Finite { .. } => {}
                setcalc::SupportValue::Unbounded { .. } => {
                    report.pass = false;
                    report.unbounded_directions.push(k);
                    report.messages.push(format!(
                        "unbounded in coordinate direction {}{}",
                        if k % 2 == 0 { "+" } else { "-" },
                        k / 2
                    ));
                }
            }
        }
    }

    // Row i is redundant iff maximizing its normal over the remaining rows
    // stays within its offset.
    if p.num_rows() > 1 {
        for i in 0..p.num_rows() {
            let others = HPolyhedron {
                normals: p.normals.clone().remove_row(i),
                offsets: p.offsets.clone().remove_row(i),
            };
            let dir = p.normal_row(i);
            match setcalc::support_polytope(&others, &dir, &settings)? {
                setcalc::SupportValue::Finite { value, .. } => {
                    if value <= p.offsets[i] + tol {
                        report.redundant_rows.push(i);
                    }
                }
                setcalc::SupportValue::Unbounded { .. } => {}
            }
        }
    }

    Ok(report)
}

// ── Problem file format ─────────────────────────────────────────────────

#[derive(Debug, Serialize, Deserialize)]
struct StageFile {
    #[serde(rename = "C")]
    c: Vec<Vec<f64>>,
    #[serde(rename = "D")]
    d: Vec<Vec<f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct DisturbanceFile {
    #[serde(rename = "E")]
    e: Vec<Vec<f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ProblemFile {
    #[serde(rename = "A")]
    a: Vec<Vec<f64>>,
    #[serde(rename = "B")]
    b: Vec<Vec<f64>>,
    #[serde(rename = "Y")]
    y: StageFile,
    #[serde(rename = "W")]
    w: DisturbanceFile,
    #[serde(rename = "Q")]
    q: Vec<Vec<f64>>,
    #[serde(rename = "R")]
    r: Vec<Vec<f64>>,
    #[serde(rename = "N")]
    n: usize,
    #[serde(default)]
    options: SynthesisOptions,
}

fn matrix_from_rows(name: &str, rows: &[Vec<f64>]) -> Result<DMatrix<f64>, ModelError> {
    if rows.is_empty() {
        return Err(ModelError::Data(format!("{name} has no rows")));
    }
    let ncols = rows[0].len();
    if ncols == 0 {
        return Err(ModelError::Data(format!("{name} has empty rows")));
    }
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(ModelError::Data(format!("{name} rows have ragged lengths")));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |r, c| rows[r][c]))
}

pub(crate) fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|r| m.row(r).iter().copied().collect())
        .collect()
}

/// Parse a problem file. Offsets are implicitly 1 throughout (`Y` rows are
/// `(cᵢ, dᵢ)` split into the matrices `C`, `D`; `W` rows are `E`).
pub fn parse_problem_file(path: &Path) -> Result<ProblemSpec, ModelError> {
    let text = std::fs::read_to_string(path).map_err(|source| ModelError::Io {
        path: path.to_owned(),
        source,
    })?;
    let file: ProblemFile = serde_json::from_str(&text).map_err(|e| ModelError::Parse {
        path: path.to_owned(),
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    problem_from_file(file)
}

fn problem_from_file(file: ProblemFile) -> Result<ProblemSpec, ModelError> {
    let a = matrix_from_rows("A", &file.a)?;
    let b = matrix_from_rows("B", &file.b)?;
    let plant = Plant::new(a, b)?;
    let (n, m) = (plant.state_dim(), plant.input_dim());

    let c = matrix_from_rows("Y.C", &file.y.c)?;
    let d = matrix_from_rows("Y.D", &file.y.d)?;
    if c.nrows() != d.nrows() {
        return Err(ModelError::Data("Y.C and Y.D row counts differ".into()));
    }
    if c.ncols() != n || d.ncols() != m {
        return Err(ModelError::Data(format!(
            "Y rows must split into {n} state and {m} input columns"
        )));
    }
    let mut y_rows = DMatrix::zeros(c.nrows(), n + m);
    y_rows.view_mut((0, 0), (c.nrows(), n)).copy_from(&c);
    y_rows.view_mut((0, n), (d.nrows(), m)).copy_from(&d);
    let y = HPolyhedron::from_unit_rows(y_rows)?;

    let e = matrix_from_rows("W.E", &file.w.e)?;
    if e.ncols() != n {
        return Err(ModelError::Data(format!("W rows must have {n} columns")));
    }
    let w = HPolyhedron::from_unit_rows(e)?;

    let q = matrix_from_rows("Q", &file.q)?;
    let r = matrix_from_rows("R", &file.r)?;
    let weights = CostWeights::new(q, r)?;

    ProblemSpec::new(plant, y, w, weights, file.n, file.options)
}

/// Serialize a problem back into the file schema (used by the benchmark
/// harness and test fixtures).
pub fn problem_to_json(spec: &ProblemSpec) -> serde_json::Value {
    let n = spec.plant.state_dim();
    let m = spec.plant.input_dim();
    let c = spec.y.normals().columns(0, n).clone_owned();
    let d = spec.y.normals().columns(n, m).clone_owned();
    serde_json::json!({
        "A": matrix_to_rows(spec.plant.a()),
        "B": matrix_to_rows(spec.plant.b()),
        "Y": { "C": matrix_to_rows(&c), "D": matrix_to_rows(&d) },
        "W": { "E": matrix_to_rows(spec.w.normals()) },
        "Q": matrix_to_rows(spec.weights.q()),
        "R": matrix_to_rows(spec.weights.r()),
        "N": spec.horizon,
        "options": serde_json::to_value(&spec.options).expect("options serialize"),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plant_1d(a: f64, b: f64) -> Plant {
        Plant::new(
            DMatrix::from_row_slice(1, 1, &[a]),
            DMatrix::from_row_slice(1, 1, &[b]),
        )
        .unwrap()
    }

    #[test]
    fn stable_plant_passes_regardless_of_b() {
        let report = validate_plant(&plant_1d(0.5, 0.0), 1e-8);
        assert!(report.pass);
        assert!(report.unstable_modes.is_empty());
    }

    #[test]
    fn unstable_uncontrollable_mode_fails() {
        let report = validate_plant(&plant_1d(2.0, 0.0), 1e-8);
        assert!(!report.pass);
        assert_eq!(report.unstable_modes.len(), 1);
        assert!(!report.unstable_modes[0].controllable);
    }

    #[test]
    fn double_integrator_passes_pbh_at_unit_eigenvalue() {
        let plant = Plant::new(
            DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]),
            DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
        )
        .unwrap();
        let report = validate_plant(&plant, 1e-8);
        assert!(report.pass);
        // Both eigenvalues sit at 1 and must be reported with their margins.
        assert_eq!(report.unstable_modes.len(), 2);
        assert!(report.unstable_modes.iter().all(|m| m.controllable));
    }

    #[test]
    fn unit_ball_is_a_valid_disturbance_set() {
        let w = HPolyhedron::inf_ball(2);
        let report = validate_polyhedron(&w, PolyhedronRole::Disturbance, 1e-9).unwrap();
        assert!(report.pass);
        assert!(report.redundant_rows.is_empty());
        assert!(report.unbounded_directions.is_empty());
    }

    #[test]
    fn slab_fails_disturbance_boundedness() {
        // {w : w₁ ≤ 1, −w₁ ≤ 1} in R² is unbounded along ±e₂.
        let rows = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, -1.0, 0.0]);
        let w = HPolyhedron::from_unit_rows(rows).unwrap();
        let report = validate_polyhedron(&w, PolyhedronRole::Disturbance, 1e-9).unwrap();
        assert!(!report.pass);
        assert!(!report.unbounded_directions.is_empty());
    }

    #[test]
    fn stage_box_has_expected_row_count() {
        // Y = 100·B∞² × 50·B∞¹ scaled to offset-1 rows: p = 6.
        let y = HPolyhedron::stage_box(2, 1, 100.0, 50.0);
        assert_eq!(y.num_rows(), 6);
        assert_eq!(y.dim(), 3);
        let report = validate_polyhedron(&y, PolyhedronRole::Stage, 1e-9).unwrap();
        assert!(report.pass);
        assert!(report.redundant_rows.is_empty());
    }

    #[test]
    fn redundant_row_is_flagged_not_removed() {
        // Unit box plus the slack row x₁ ≤ 2 (scaled to offset 1).
        let rows = DMatrix::from_row_slice(5, 2, &[
            1.0, 0.0, //
            -1.0, 0.0, //
            0.0, 1.0, //
            0.0, -1.0, //
            0.5, 0.0, //
        ]);
        let p = HPolyhedron::from_unit_rows(rows).unwrap();
        let report = validate_polyhedron(&p, PolyhedronRole::Disturbance, 1e-9).unwrap();
        assert!(report.pass);
        assert_eq!(report.redundant_rows, vec![4]);
        assert_eq!(p.num_rows(), 5);
    }

    #[test]
    fn validation_is_idempotent() {
        let w = HPolyhedron::inf_ball(3);
        let r1 = validate_polyhedron(&w, PolyhedronRole::Disturbance, 1e-9).unwrap();
        let r2 = validate_polyhedron(&w, PolyhedronRole::Disturbance, 1e-9).unwrap();
        assert_eq!(
            serde_json::to_string(&r1).unwrap(),
            serde_json::to_string(&r2).unwrap()
        );
    }

    #[test]
    fn offsets_normalize_to_one_and_nonpositive_rejected() {
        let rows = DMatrix::from_row_slice(2, 1, &[2.0, -1.0]);
        let offs = DVector::from_row_slice(&[4.0, 2.0]);
        let p = HPolyhedron::new(rows, offs).unwrap();
        // 2x ≤ 4 becomes 0.5x ≤ 1.
        assert!((p.normals()[(0, 0)] - 0.5).abs() < 1e-15);
        assert!((p.offsets()[0] - 1.0).abs() < 1e-15);

        let bad = HPolyhedron::new(
            DMatrix::from_row_slice(1, 1, &[1.0]),
            DVector::from_row_slice(&[0.0]),
        );
        assert!(bad.is_err());
    }
}
