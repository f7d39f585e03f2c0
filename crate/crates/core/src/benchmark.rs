//! Random-system generation and offline-design sweeps.
//!
//! Each `(n, m)` row runs `samples_per_dim` independent designs over the
//! standard setup `Y = scale_x·B∞ⁿ × scale_u·B∞ᵐ`, `W = B∞ⁿ`, `Q = R = I`,
//! with LQR-identity tube gains (an eigenvalue-placement rule would need a
//! multi-input pole placer for no coverage gain, so reports must not be
//! compared numerically against pole-placement baselines — the report header
//! says so). Failures are data: they feed the per-reason breakdown and the
//! success rate, never abort the sweep.
//!
//! Samples are embarrassingly parallel. Every sample derives its own RNG
//! stream from `(master seed, dim index, sample index)`, so results are
//! order-independent and reproducible; raw per-sample records persist as
//! JSON lines from which every table entry is re-derivable exactly.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    spectral_radius, validate_plant, CostWeights, HPolyhedron, ModelError, Plant, ProblemSpec,
};
use crate::sim::mix_seed;
use crate::solver::SolverSettings;
use crate::synthesis::{
    design_with_settings, FailureReason, SynthesisError, SynthesisOptions,
};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("failed to generate a valid plant after {tries} redraws (seed {seed})")]
    Generation { tries: usize, seed: u64 },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{0}")]
    Data(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchConfig {
    /// State/input dimension pairs, one table row each.
    pub dims: Vec<(usize, usize)>,
    pub samples_per_dim: usize,
    /// Upper end of the uniform spectral-radius draw for generated plants.
    #[serde(default = "default_rho")]
    pub rho_target: f64,
    /// `(state, input)` box radii for the stage constraints.
    #[serde(default = "default_scales")]
    pub constraint_scales: (f64, f64),
    /// Iteration cap applied to both the `N_S` and `N_Z` searches.
    #[serde(default = "default_caps")]
    pub caps: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_rho() -> f64 {
    0.95
}

fn default_scales() -> (f64, f64) {
    (100.0, 50.0)
}

fn default_caps() -> usize {
    10_000
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            dims: vec![(2, 1), (3, 1), (5, 1), (8, 2)],
            samples_per_dim: 50,
            rho_target: default_rho(),
            constraint_scales: default_scales(),
            caps: default_caps(),
            seed: 0,
        }
    }
}

impl BenchConfig {
    pub fn check(&self) -> Result<(), BenchError> {
        if self.dims.is_empty() || self.samples_per_dim == 0 {
            return Err(BenchError::Data("empty benchmark configuration".into()));
        }
        if self.dims.iter().any(|(n, m)| *n == 0 || *m == 0) {
            return Err(BenchError::Data("dimensions must be ≥ 1".into()));
        }
        if !(self.rho_target > 0.0 && self.rho_target < 1.0) {
            return Err(BenchError::Data("rho_target must be in (0, 1)".into()));
        }
        Ok(())
    }
}

/// What happened to one sample.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleOutcome {
    Success {
        n_s: usize,
        alpha: f64,
        n_z: usize,
        /// Contraction search plus tightening time, milliseconds.
        t_s_ms: f64,
        /// Terminal search time, milliseconds.
        t_z_ms: f64,
    },
    Failure {
        reason: FailureReason,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SampleRecord {
    pub dim_index: usize,
    pub sample_index: usize,
    pub n: usize,
    pub m: usize,
    pub seed: u64,
    pub outcome: SampleOutcome,
}

/// One table row: success-based means plus the failure breakdown.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct BenchRow {
    pub n: usize,
    pub m: usize,
    pub mean_ns: Option<f64>,
    pub mean_alpha: Option<f64>,
    pub mean_ts_ms: Option<f64>,
    pub mean_nz: Option<f64>,
    pub mean_tz_s: Option<f64>,
    pub success_rate: f64,
    pub failures: Vec<(FailureReason, usize)>,
}

fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Random strictly stable plant: `A = G·(ρ_draw/ρ(G))` with `G` a
/// standard-normal draw and `ρ_draw` uniform in `[0.3, 0.95]`; `B`
/// standard-normal. Redraws (cap 100) until validation passes; the result is
/// stabilizable by construction since `ρ(A) < 1`.
pub fn random_system(n: usize, m: usize, seed: u64) -> Result<Plant, BenchError> {
    random_system_with(n, m, seed, 0.95)
}

/// Same generator with a configurable upper end of the spectral-radius draw.
pub fn random_system_with(n: usize, m: usize, seed: u64, rho_hi: f64) -> Result<Plant, BenchError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rho_lo = 0.3_f64.min(rho_hi);
    const REDRAW_CAP: usize = 100;
    for _ in 0..REDRAW_CAP {
        let g = DMatrix::from_fn(n, n, |_, _| standard_normal(&mut rng));
        let rho_draw = rng.gen_range(rho_lo..=rho_hi);
        let rho_g = spectral_radius(&g);
        if rho_g < 1e-12 {
            continue;
        }
        let a = g * (rho_draw / rho_g);
        let b = DMatrix::from_fn(n, m, |_, _| standard_normal(&mut rng));
        let plant = match Plant::new(a, b) {
            Ok(p) => p,
            Err(_) => continue,
        };
        if validate_plant(&plant, 1e-8).pass {
            return Ok(plant);
        }
    }
    Err(BenchError::Generation {
        tries: REDRAW_CAP,
        seed,
    })
}

fn run_sample(
    cfg: &BenchConfig,
    dim_index: usize,
    sample_index: usize,
    settings: &SolverSettings,
) -> Result<SampleRecord, BenchError> {
    let (n, m) = cfg.dims[dim_index];
    let seed = mix_seed(mix_seed(cfg.seed, dim_index as u64), sample_index as u64);
    let plant = random_system_with(n, m, seed, cfg.rho_target)?;
    let (sx, su) = cfg.constraint_scales;
    let spec = ProblemSpec::new(
        plant,
        HPolyhedron::stage_box(n, m, sx, su),
        HPolyhedron::inf_ball(n),
        CostWeights::identity(n, m),
        1,
        SynthesisOptions {
            max_ns: cfg.caps,
            max_nz: cfg.caps,
            ..Default::default()
        },
    )?;
    let outcome = match design_with_settings(&spec, settings) {
        Ok(design) => {
            let stage = |name: &str| -> f64 {
                design
                    .provenance
                    .stage_ms
                    .iter()
                    .filter(|(s, _)| s == name)
                    .map(|(_, t)| *t)
                    .sum()
            };
            SampleOutcome::Success {
                n_s: design.s.n_s(),
                alpha: design.s.alpha(),
                n_z: design.terminal.n_z(),
                t_s_ms: stage("n_s_search") + stage("tightening"),
                t_z_ms: stage("n_z_search"),
            }
        }
        Err(SynthesisError::Failure { reason, .. }) => SampleOutcome::Failure { reason },
        // Numerical trouble inside a solve counts against the sample, not
        // the sweep.
        Err(_) => SampleOutcome::Failure {
            reason: FailureReason::Numerical,
        },
    };
    Ok(SampleRecord {
        dim_index,
        sample_index,
        n,
        m,
        seed,
        outcome,
    })
}

/// Run the sweep: all samples of all rows, in parallel, collected in index
/// order.
pub fn run_bench(
    cfg: &BenchConfig,
    settings: &SolverSettings,
) -> Result<(Vec<BenchRow>, Vec<SampleRecord>), BenchError> {
    cfg.check()?;
    let jobs: Vec<(usize, usize)> = (0..cfg.dims.len())
        .flat_map(|d| (0..cfg.samples_per_dim).map(move |s| (d, s)))
        .collect();
    let records: Vec<SampleRecord> = jobs
        .par_iter()
        .map(|(d, s)| run_sample(cfg, *d, *s, settings))
        .collect::<Result<_, _>>()?;
    let rows = aggregate(cfg, &records)?;
    Ok((rows, records))
}

/// Aggregate raw records into table rows. Success-based means in record
/// order, so re-running on a reloaded raw log reproduces the table exactly.
pub fn aggregate(cfg: &BenchConfig, records: &[SampleRecord]) -> Result<Vec<BenchRow>, BenchError> {
    let mut rows = Vec::with_capacity(cfg.dims.len());
    for (dim_index, (n, m)) in cfg.dims.iter().enumerate() {
        let of_dim: Vec<&SampleRecord> =
            records.iter().filter(|r| r.dim_index == dim_index).collect();
        if of_dim.is_empty() {
            return Err(BenchError::Data(format!(
                "no records for dimension index {dim_index}"
            )));
        }
        let total = of_dim.len();
        let mut sums = (0.0_f64, 0.0_f64, 0.0_f64, 0.0_f64, 0.0_f64);
        let mut successes = 0usize;
        let mut failures: Vec<(FailureReason, usize)> = Vec::new();
        for r in &of_dim {
            match &r.outcome {
                SampleOutcome::Success {
                    n_s,
                    alpha,
                    n_z,
                    t_s_ms,
                    t_z_ms,
                } => {
                    successes += 1;
                    sums.0 += *n_s as f64;
                    sums.1 += *alpha;
                    sums.2 += *t_s_ms;
                    sums.3 += *n_z as f64;
                    sums.4 += *t_z_ms / 1e3;
                }
                SampleOutcome::Failure { reason } => {
                    match failures.iter_mut().find(|(r0, _)| r0 == reason) {
                        Some((_, c)) => *c += 1,
                        None => failures.push((*reason, 1)),
                    }
                }
            }
        }
        let mean = |sum: f64| -> Option<f64> {
            (successes > 0).then(|| sum / successes as f64)
        };
        rows.push(BenchRow {
            n: *n,
            m: *m,
            mean_ns: mean(sums.0),
            mean_alpha: mean(sums.1),
            mean_ts_ms: mean(sums.2),
            mean_nz: mean(sums.3),
            mean_tz_s: mean(sums.4),
            success_rate: successes as f64 / total as f64,
            failures,
        });
    }
    Ok(rows)
}

/// Table rows as CSV (`n, m, NS_mean, alpha_mean, tS_ms, NZ_mean, tZ_s,
/// success_rate`).
pub fn rows_to_csv(rows: &[BenchRow]) -> String {
    let mut out = String::from("n,m,NS_mean,alpha_mean,tS_ms,NZ_mean,tZ_s,success_rate\n");
    let fmt = |v: &Option<f64>| v.map(|x| format!("{x}")).unwrap_or_default();
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.n,
            r.m,
            fmt(&r.mean_ns),
            fmt(&r.mean_alpha),
            fmt(&r.mean_ts_ms),
            fmt(&r.mean_nz),
            fmt(&r.mean_tz_s),
            r.success_rate
        ));
    }
    out
}

/// Raw records as JSON lines.
pub fn records_to_jsonl(records: &[SampleRecord]) -> String {
    records
        .iter()
        .map(|r| serde_json::to_string(r).expect("record serializes"))
        .collect::<Vec<_>>()
        .join("\n")
        + "\n"
}

pub fn records_from_jsonl(text: &str) -> Result<Vec<SampleRecord>, BenchError> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| BenchError::Data(e.to_string())))
        .collect()
}
