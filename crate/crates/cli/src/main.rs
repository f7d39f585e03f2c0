//! `rigidtube`: validate problems, run the offline design, step the online
//! controller, simulate closed loops, and sweep random-system benchmarks.
//!
//! Exit codes: 0 success, 2 validation failure, 3 synthesis failure,
//! 4 state not in the controllable domain, 5 numerical failure, 64 usage
//! error. Structured results go to standard output as a single JSON object
//! (or to files via `-o`); human-readable diagnostics go to standard error.
//! Every run also writes a manifest (tool version, resolved options, input
//! hashes, wall time, exit status) whose path is controlled by
//! `--manifest`. Global flags mirror environment variables prefixed
//! `RIGIDTUBE_`.

mod svg;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use nalgebra::DVector;
use serde::Serialize;
use sha2::{Digest, Sha256};

use rigidtube::benchmark::{self, BenchConfig};
use rigidtube::controller::{self, ControllerError};
use rigidtube::model::{
    parse_problem_file, validate_plant, validate_polyhedron, ModelError, PolyhedronRole,
    ProblemSpec,
};
use rigidtube::setcalc::{
    support_polytope, support_s, support_terminal_intersection, SetCalcError, SupportValue,
};
use rigidtube::sim::{self, DisturbanceMode, DisturbancePolicy, SimError};
use rigidtube::solver::{SolverError, SolverSettings};
use rigidtube::synthesis::{self, DesignFile, SynthesisError, TubeDesign};

const EXIT_VALIDATION: i32 = 2;
const EXIT_SYNTHESIS: i32 = 3;
const EXIT_NOT_IN_DOMAIN: i32 = 4;
const EXIT_NUMERICAL: i32 = 5;
const EXIT_USAGE: i32 = 64;

#[derive(Parser, Debug)]
#[command(name = "rigidtube", version, about = "Robust tube MPC toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Primal/dual feasibility tolerance for the LP/QP solvers.
    #[arg(long, global = true, env = "RIGIDTUBE_FEAS_TOL", default_value_t = 1e-8)]
    feas_tol: f64,

    /// KKT/complementarity tolerance for the LP/QP solvers.
    #[arg(long, global = true, env = "RIGIDTUBE_KKT_TOL", default_value_t = 1e-8)]
    kkt_tol: f64,

    /// Interior-point iteration cap.
    #[arg(long, global = true, env = "RIGIDTUBE_MAX_ITER", default_value_t = 200)]
    max_iter: usize,

    /// Seed override for randomized subcommands.
    #[arg(long, global = true, env = "RIGIDTUBE_SEED")]
    seed: Option<u64>,

    /// Dump every posed LP/QP as JSON into this directory.
    #[arg(long, global = true, env = "RIGIDTUBE_DUMP_PROBLEMS", value_name = "DIR")]
    dump_problems: Option<PathBuf>,

    /// Echo a one-object JSON summary of file-writing subcommands to stdout.
    #[arg(long, global = true)]
    json: bool,

    /// Where to write the run manifest.
    #[arg(
        long,
        global = true,
        env = "RIGIDTUBE_MANIFEST",
        default_value = "rigidtube-manifest.json"
    )]
    manifest: PathBuf,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Validate a problem file: plant stabilizability (PBH), constraint-set
    /// properness, disturbance-set boundedness, row redundancy.
    Validate { problem: PathBuf },
    /// Run the offline design and write the design file.
    Design {
        problem: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
        /// Re-run all LP-backed certificates after the design.
        #[arg(long)]
        verify: bool,
    },
    /// One controller step at a given state.
    Step {
        design: PathBuf,
        problem: PathBuf,
        /// State as comma-separated numbers, e.g. "1.0,-2.5".
        #[arg(long, allow_hyphen_values = true)]
        x: String,
    },
    /// Closed-loop simulation; writes a CSV trace and optionally an SVG plot.
    Simulate {
        design: PathBuf,
        problem: PathBuf,
        /// Initial state as comma-separated numbers.
        #[arg(long, allow_hyphen_values = true)]
        x0: String,
        #[arg(long, default_value_t = 20)]
        steps: usize,
        #[arg(long, value_enum, default_value_t = DistArg::Extreme)]
        dist: DistArg,
        /// JSON file with a disturbance sequence (mode `custom`).
        #[arg(long)]
        dist_file: Option<PathBuf>,
        #[arg(short, long)]
        output: PathBuf,
        /// Render ‖z0‖ and ‖v0‖ versus k on a log scale.
        #[arg(long)]
        plot: Option<PathBuf>,
    },
    /// Random-system offline benchmark sweep.
    Bench {
        /// Benchmark configuration JSON; defaults cover small dimensions.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(short, long)]
        output: PathBuf,
        /// Raw per-sample records as JSON lines.
        #[arg(long)]
        raw: Option<PathBuf>,
        /// Allow table rows beyond n = 100 (long runs).
        #[arg(long)]
        large: bool,
    },
    /// Evaluate a support function from a design and a direction.
    Support {
        design: PathBuf,
        problem: PathBuf,
        #[arg(long, value_enum)]
        set: SetArg,
        /// Direction as comma-separated numbers.
        #[arg(long, allow_hyphen_values = true)]
        dir: String,
    },
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum DistArg {
    Zero,
    Extreme,
    Uniform,
    Custom,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum SetArg {
    /// Disturbance set W.
    W,
    /// Stage set Y (direction lives in R^{n+m}).
    Y,
    /// Tightened terminal rows Z_S.
    Zs,
    /// Tube cross-section S (sum of N_S supports of W).
    S,
    /// Terminal set Z_f (chain LP).
    Zf,
}

/// Error carrying its process exit code.
#[derive(Debug)]
struct CliError {
    code: i32,
    message: String,
}

impl CliError {
    fn new(code: i32, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        CliError::new(EXIT_VALIDATION, e.to_string())
    }
}

impl From<SynthesisError> for CliError {
    fn from(e: SynthesisError) -> Self {
        match &e {
            SynthesisError::Failure { reason, .. } => CliError::new(
                EXIT_SYNTHESIS,
                format!("{e} (reason code: {reason:?})"),
            ),
            SynthesisError::SetCalc(SetCalcError::Solver { .. }) => {
                CliError::new(EXIT_NUMERICAL, e.to_string())
            }
            _ => CliError::new(EXIT_VALIDATION, e.to_string()),
        }
    }
}

impl From<SetCalcError> for CliError {
    fn from(e: SetCalcError) -> Self {
        match &e {
            SetCalcError::Solver { .. } => CliError::new(EXIT_NUMERICAL, e.to_string()),
            _ => CliError::new(EXIT_VALIDATION, e.to_string()),
        }
    }
}

impl From<ControllerError> for CliError {
    fn from(e: ControllerError) -> Self {
        match &e {
            ControllerError::NotInDomain => CliError::new(EXIT_NOT_IN_DOMAIN, e.to_string()),
            ControllerError::Data(_) => CliError::new(EXIT_VALIDATION, e.to_string()),
            _ => CliError::new(EXIT_NUMERICAL, e.to_string()),
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match &e {
            SimError::NotInDomain => CliError::new(EXIT_NOT_IN_DOMAIN, e.to_string()),
            SimError::Data(_) | SimError::SequenceExhausted(_) => {
                CliError::new(EXIT_VALIDATION, e.to_string())
            }
            _ => CliError::new(EXIT_NUMERICAL, e.to_string()),
        }
    }
}

impl From<SolverError> for CliError {
    fn from(e: SolverError) -> Self {
        CliError::new(EXIT_NUMERICAL, e.to_string())
    }
}

impl From<benchmark::BenchError> for CliError {
    fn from(e: benchmark::BenchError) -> Self {
        match &e {
            benchmark::BenchError::Generation { .. } => {
                CliError::new(EXIT_NUMERICAL, e.to_string())
            }
            _ => CliError::new(EXIT_VALIDATION, e.to_string()),
        }
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::new(
        EXIT_VALIDATION,
        format!("i/o failure on {}: {e}", path.display()),
    )
}

#[derive(Serialize)]
struct RunManifest {
    tool: &'static str,
    version: &'static str,
    subcommand: String,
    options: serde_json::Value,
    input_hashes: BTreeMap<String, String>,
    wall_time_ms: f64,
    exit_status: i32,
}

fn sha256_file(path: &Path) -> Result<String, CliError> {
    let bytes = std::fs::read(path).map_err(|e| io_err(path, e))?;
    let mut hasher = Sha256::new();
    hasher.update(&bytes);
    Ok(hasher
        .finalize()
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect())
}

fn parse_vector(text: &str, expected: usize, what: &str) -> Result<DVector<f64>, CliError> {
    let values: Result<Vec<f64>, _> = text
        .split(',')
        .map(|t| t.trim().parse::<f64>())
        .collect();
    let values = values.map_err(|e| {
        CliError::new(EXIT_USAGE, format!("could not parse {what} \"{text}\": {e}"))
    })?;
    if values.len() != expected {
        return Err(CliError::new(
            EXIT_USAGE,
            format!("{what} has {} entries, expected {expected}", values.len()),
        ));
    }
    Ok(DVector::from_vec(values))
}

fn load_design(path: &Path, spec: &ProblemSpec) -> Result<TubeDesign, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let file: DesignFile = serde_json::from_str(&text).map_err(|e| {
        CliError::new(
            EXIT_VALIDATION,
            format!("design file {} is malformed: {e}", path.display()),
        )
    })?;
    Ok(TubeDesign::from_file(&file, spec)?)
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    std::fs::write(path, contents).map_err(|e| io_err(path, e))
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => EXIT_USAGE,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };

    let started = Instant::now();
    let settings = SolverSettings {
        feas_tol: cli.feas_tol,
        kkt_tol: cli.kkt_tol,
        max_iter: cli.max_iter,
        dump_dir: cli.dump_problems.clone(),
    };
    if let Some(dir) = &settings.dump_dir {
        if let Err(e) = std::fs::create_dir_all(dir) {
            eprintln!("rigidtube: cannot create dump directory: {e}");
            std::process::exit(EXIT_VALIDATION);
        }
    }

    let mut hashes = BTreeMap::new();
    let outcome = run(&cli, &settings, &mut hashes);
    let exit_status = match &outcome {
        Ok(()) => 0,
        Err(e) => e.code,
    };

    let manifest = RunManifest {
        tool: "rigidtube",
        version: env!("CARGO_PKG_VERSION"),
        subcommand: subcommand_name(&cli.command).to_string(),
        options: serde_json::json!({
            "feas_tol": cli.feas_tol,
            "kkt_tol": cli.kkt_tol,
            "max_iter": cli.max_iter,
            "seed": cli.seed,
            "dump_problems": cli.dump_problems,
            "json": cli.json,
            "argv": std::env::args().skip(1).collect::<Vec<_>>(),
        }),
        input_hashes: hashes,
        wall_time_ms: started.elapsed().as_secs_f64() * 1e3,
        exit_status,
    };
    match serde_json::to_string_pretty(&manifest) {
        Ok(text) => {
            if let Err(e) = std::fs::write(&cli.manifest, text) {
                eprintln!(
                    "rigidtube: could not write manifest {}: {e}",
                    cli.manifest.display()
                );
            }
        }
        Err(e) => eprintln!("rigidtube: could not serialize manifest: {e}"),
    }

    if let Err(e) = outcome {
        eprintln!("rigidtube: {}", e.message);
        std::process::exit(e.code);
    }
}

fn subcommand_name(c: &Command) -> &'static str {
    match c {
        Command::Validate { .. } => "validate",
        Command::Design { .. } => "design",
        Command::Step { .. } => "step",
        Command::Simulate { .. } => "simulate",
        Command::Bench { .. } => "bench",
        Command::Support { .. } => "support",
    }
}

fn run(
    cli: &Cli,
    settings: &SolverSettings,
    hashes: &mut BTreeMap<String, String>,
) -> Result<(), CliError> {
    match &cli.command {
        Command::Validate { problem } => {
            hashes.insert(problem.display().to_string(), sha256_file(problem)?);
            let spec = parse_problem_file(problem)?;
            let plant = validate_plant(&spec.plant, 1e-8);
            let y = validate_polyhedron(&spec.y, PolyhedronRole::Stage, 1e-9)?;
            let w = validate_polyhedron(&spec.w, PolyhedronRole::Disturbance, 1e-9)?;
            let pass = plant.pass && y.pass && w.pass;
            let report = serde_json::json!({
                "pass": pass,
                "plant": plant,
                "Y": y,
                "W": w,
            });
            println!("{}", serde_json::to_string_pretty(&report).unwrap());
            if pass {
                Ok(())
            } else {
                Err(CliError::new(EXIT_VALIDATION, "problem failed validation"))
            }
        }

        Command::Design {
            problem,
            output,
            verify,
        } => {
            hashes.insert(problem.display().to_string(), sha256_file(problem)?);
            let spec = parse_problem_file(problem)?;
            let design = synthesis::design_with_settings(&spec, settings)?;
            if *verify {
                design.verify(&spec, settings)?;
            }
            let text = serde_json::to_string_pretty(&design.to_file())
                .map_err(|e| CliError::new(EXIT_NUMERICAL, e.to_string()))?;
            write_file(output, &text)?;
            if cli.json {
                println!(
                    "{}",
                    serde_json::json!({
                        "design": output,
                        "N_S": design.s.n_s(),
                        "alpha": design.s.alpha(),
                        "N_Z": design.terminal.n_z(),
                        "max_f": design.f.max(),
                        "verified": verify,
                    })
                );
            }
            Ok(())
        }

        Command::Step { design, problem, x } => {
            hashes.insert(problem.display().to_string(), sha256_file(problem)?);
            hashes.insert(design.display().to_string(), sha256_file(design)?);
            let spec = parse_problem_file(problem)?;
            let d = load_design(design, &spec)?;
            let x = parse_vector(x, spec.plant.state_dim(), "--x")?;
            match controller::mpc_step(&d, &spec, &x, settings) {
                Ok((u, diag)) => {
                    let out = serde_json::json!({
                        "status": "optimal",
                        "u": u.iter().copied().collect::<Vec<_>>(),
                        "value": diag.value,
                        "z0": diag.z0.iter().copied().collect::<Vec<_>>(),
                        "v0": diag.v0.iter().copied().collect::<Vec<_>>(),
                        "iterations": diag.solver_iterations,
                    });
                    println!("{}", serde_json::to_string_pretty(&out).unwrap());
                    Ok(())
                }
                Err(ControllerError::NotInDomain) => {
                    println!("{}", serde_json::json!({ "status": "not_in_domain" }));
                    Err(ControllerError::NotInDomain.into())
                }
                Err(e) => Err(e.into()),
            }
        }

        Command::Simulate {
            design,
            problem,
            x0,
            steps,
            dist,
            dist_file,
            output,
            plot,
        } => {
            hashes.insert(problem.display().to_string(), sha256_file(problem)?);
            hashes.insert(design.display().to_string(), sha256_file(design)?);
            let spec = parse_problem_file(problem)?;
            let d = load_design(design, &spec)?;
            let x0 = parse_vector(x0, spec.plant.state_dim(), "--x0")?;
            let seed = cli.seed.unwrap_or(0);
            let policy = match dist {
                DistArg::Zero => DisturbancePolicy::zero(),
                DistArg::Extreme => DisturbancePolicy::extreme(seed),
                DistArg::Uniform => DisturbancePolicy::uniform(seed),
                DistArg::Custom => {
                    let path = dist_file.as_ref().ok_or_else(|| {
                        CliError::new(EXIT_USAGE, "--dist custom requires --dist-file")
                    })?;
                    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
                    let sequence: Vec<Vec<f64>> = serde_json::from_str(&text).map_err(|e| {
                        CliError::new(EXIT_VALIDATION, format!("bad disturbance file: {e}"))
                    })?;
                    DisturbancePolicy {
                        mode: DisturbanceMode::CustomSequence,
                        seed,
                        sequence: Some(sequence),
                    }
                }
            };
            let trace = sim::simulate(&d, &spec, &x0, *steps, &policy, settings)?;
            write_file(output, &trace.to_csv())?;
            if let Some(plot_path) = plot {
                write_file(plot_path, &svg::trace_plot(&trace))?;
            }
            if cli.json {
                let last = trace.steps.last();
                println!(
                    "{}",
                    serde_json::json!({
                        "trace": output,
                        "plot": plot,
                        "steps": trace.steps.len(),
                        "final_value": last.map(|s| s.value),
                        "design_hash": trace.metadata.design_hash,
                    })
                );
            }
            Ok(())
        }

        Command::Bench {
            config,
            output,
            raw,
            large,
        } => {
            let mut cfg = match config {
                Some(path) => {
                    hashes.insert(path.display().to_string(), sha256_file(path)?);
                    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
                    serde_json::from_str::<BenchConfig>(&text).map_err(|e| {
                        CliError::new(EXIT_VALIDATION, format!("bad bench config: {e}"))
                    })?
                }
                None => BenchConfig::default(),
            };
            if let Some(seed) = cli.seed {
                cfg.seed = seed;
            }
            if !large {
                if let Some((n, m)) = cfg.dims.iter().find(|(n, _)| *n > 100) {
                    return Err(CliError::new(
                        EXIT_USAGE,
                        format!("dimension ({n}, {m}) needs --large"),
                    ));
                }
            }
            eprintln!(
                "rigidtube bench: tube gains are LQR-identity (not eigenvalue placement); \
                 N_S/alpha statistics are comparable to placement-based tables in order of \
                 magnitude only"
            );
            let (rows, records) = benchmark::run_bench(&cfg, settings)?;
            write_file(output, &benchmark::rows_to_csv(&rows))?;
            if let Some(raw_path) = raw {
                write_file(raw_path, &benchmark::records_to_jsonl(&records))?;
            }
            if cli.json {
                println!(
                    "{}",
                    serde_json::json!({ "table": output, "raw": raw, "rows": rows })
                );
            }
            Ok(())
        }

        Command::Support {
            design,
            problem,
            set,
            dir,
        } => {
            hashes.insert(problem.display().to_string(), sha256_file(problem)?);
            hashes.insert(design.display().to_string(), sha256_file(design)?);
            let spec = parse_problem_file(problem)?;
            let d = load_design(design, &spec)?;
            let n = spec.plant.state_dim();
            let m = spec.plant.input_dim();
            let out = match set {
                SetArg::W => {
                    let y = parse_vector(dir, n, "--dir")?;
                    support_json("W", support_polytope(&spec.w, &y, settings)?)
                }
                SetArg::Y => {
                    let y = parse_vector(dir, n + m, "--dir")?;
                    support_json("Y", support_polytope(&spec.y, &y, settings)?)
                }
                SetArg::Zs => {
                    let y = parse_vector(dir, n, "--dir")?;
                    support_json("Z_S", support_polytope(d.terminal.zs_rows(), &y, settings)?)
                }
                SetArg::Zf => {
                    let y = parse_vector(dir, n, "--dir")?;
                    support_json("Z_f", support_terminal_intersection(&d.terminal, &y, settings)?)
                }
                SetArg::S => {
                    let eta = parse_vector(dir, n, "--dir")?;
                    let value = support_s(&d.s, &eta, settings)?;
                    // Maximizer of a Minkowski sum: scaled sum of per-term
                    // maximizers at the transformed directions.
                    let mut maximizer = DVector::zeros(n);
                    for j in 0..d.s.n_s() {
                        let dir_j = d.s.power(j).tr_mul(&eta);
                        match support_polytope(&spec.w, &dir_j, settings)? {
                            SupportValue::Finite { maximizer: w_j, .. } => {
                                maximizer += d.s.power(j) * w_j * d.s.scale();
                            }
                            SupportValue::Unbounded { .. } => unreachable!("W is a C-set"),
                        }
                    }
                    serde_json::json!({
                        "set": "S",
                        "value": value,
                        "maximizer": maximizer.iter().copied().collect::<Vec<_>>(),
                        "unbounded": false,
                    })
                }
            };
            println!("{}", serde_json::to_string_pretty(&out).unwrap());
            Ok(())
        }
    }
}

fn support_json(set: &str, value: SupportValue) -> serde_json::Value {
    match value {
        SupportValue::Finite { value, maximizer } => serde_json::json!({
            "set": set,
            "value": value,
            "maximizer": maximizer.iter().copied().collect::<Vec<_>>(),
            "unbounded": false,
        }),
        SupportValue::Unbounded { ray } => serde_json::json!({
            "set": set,
            "value": null,
            "maximizer": null,
            "unbounded": true,
            "ray": ray.iter().copied().collect::<Vec<_>>(),
        }),
    }
}
