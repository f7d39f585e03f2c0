use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::model::{CostWeights, HPolyhedron, Plant, ProblemSpec};
use crate::setcalc::{member_s, ImplicitRpiSet, ImplicitTerminalSet};
use crate::synthesis::tests::double_integrator_spec;
use crate::synthesis::{design, Provenance, SynthesisOptions};

fn settings() -> SolverSettings {
    SolverSettings::default()
}

/// Synthetic design/problem pair with prescribed dimensions. Constraint
/// geometry is irrelevant for shape checks; certificates are trusted.
fn synthetic_instance(
    n: usize,
    m: usize,
    horizon: usize,
    n_s: usize,
    n_z: usize,
    extra_p: usize,
    extra_q: usize,
    rng: &mut ChaCha8Rng,
) -> (TubeDesign, ProblemSpec) {
    let a = DMatrix::from_fn(n, n, |r, c| if r == c { 0.4 } else { 0.05 });
    let b = DMatrix::from_fn(n, m, |r, c| if r % m == c { 1.0 } else { 0.1 });
    let plant = Plant::new(a.clone(), b.clone()).unwrap();

    let mut y_rows = HPolyhedron::stage_box(n, m, 10.0, 10.0).normals().clone();
    for _ in 0..extra_p {
        let extra = DMatrix::from_fn(1, n + m, |_, _| rng.gen_range(-0.05..0.05));
        let end = y_rows.nrows();
        y_rows = y_rows.insert_rows(end, 1, 0.0);
        y_rows.row_mut(end).copy_from(&extra.row(0));
    }
    let y = HPolyhedron::from_unit_rows(y_rows).unwrap();

    let mut w_rows = HPolyhedron::inf_ball(n).normals().clone();
    for _ in 0..extra_q {
        let extra = DMatrix::from_fn(1, n, |_, _| rng.gen_range(-0.05..0.05));
        let end = w_rows.nrows();
        w_rows = w_rows.insert_rows(end, 1, 0.0);
        w_rows.row_mut(end).copy_from(&extra.row(0));
    }
    let w = HPolyhedron::from_unit_rows(w_rows).unwrap();

    let weights = CostWeights::identity(n, m);
    let spec = ProblemSpec::new(
        plant,
        y.clone(),
        w.clone(),
        weights,
        horizon,
        SynthesisOptions::default(),
    )
    .unwrap();

    let k_s = DMatrix::zeros(m, n);
    let s = ImplicitRpiSet::from_certified_parts(a.clone(), k_s, w, 0.5, n_s).unwrap();
    let f = DVector::zeros(y.num_rows());
    let k_z = DMatrix::zeros(m, n);
    let zs = crate::synthesis::zs_rows(&spec, &k_z, &f).unwrap();
    let terminal = ImplicitTerminalSet::new(a, k_z, zs, n_z).unwrap();
    let design = TubeDesign {
        s,
        f,
        terminal,
        p: DMatrix::identity(n, n),
        nz_mode: crate::synthesis::NzMode::Sufficient,
        provenance: Provenance::default(),
    };
    (design, spec)
}

#[test]
fn dimension_identities_small_case() {
    // n=2, m=1, N=1, N_S=1, N_Z=0, p=6, q=4:
    // n_d = 2+1+2+2 = 7, n_eq = 2+2+0 = 4, n_iq = 4+6+6 = 16.
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (design, spec) = synthetic_instance(2, 1, 1, 1, 0, 0, 0, &mut rng);
    let tq = assemble_qp(&design, &spec, &DVector::zeros(2)).unwrap();
    assert_eq!(
        tq.dims,
        QpDims {
            n_d: 7,
            n_eq: 4,
            n_iq: 16
        }
    );
    assert_eq!(tq.qp.hessian.nrows(), 7);
    assert_eq!(tq.qp.a_eq.nrows(), 4);
    assert_eq!(tq.qp.a_in.nrows(), 16);
}

#[test]
fn dimension_identities_randomized_sweep() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for _ in 0..25 {
        let n = rng.gen_range(1..4);
        let m = rng.gen_range(1..3);
        let horizon = rng.gen_range(1..5);
        let n_s = rng.gen_range(1..4);
        let n_z = rng.gen_range(0..4);
        let extra_p = rng.gen_range(0..3);
        let extra_q = rng.gen_range(0..3);
        let (design, spec) = synthetic_instance(n, m, horizon, n_s, n_z, extra_p, extra_q, &mut rng);
        let p = spec.y.num_rows();
        let q = spec.w.num_rows();
        let tq = assemble_qp(&design, &spec, &DVector::zeros(n)).unwrap();
        assert_eq!(tq.dims.n_d, horizon * n + horizon * m + (n_z + 1) * n + n_s * n);
        assert_eq!(tq.dims.n_eq, n + horizon * n + n_z * n);
        assert_eq!(tq.dims.n_iq, n_s * q + horizon * p + (n_z + 1) * p);
        assert_eq!(tq.qp.num_vars, tq.dims.n_d);
        assert_eq!(tq.qp.a_eq.nrows(), tq.dims.n_eq);
        assert_eq!(tq.qp.a_in.nrows(), tq.dims.n_iq);
    }
}

#[test]
fn value_zero_at_origin() {
    let spec = double_integrator_spec(8);
    let design = design(&spec).unwrap();
    let tq = assemble_qp(&design, &spec, &DVector::zeros(2)).unwrap();
    match solve_ocp(&tq, &settings()).unwrap() {
        OcpOutcome::Feasible(sol) => {
            assert!(sol.value.abs() <= 1e-7);
            assert!(sol.z_path[0].amax() <= 1e-6);
            assert!(sol.v_path[0].amax() <= 1e-6);
        }
        OcpOutcome::NotInDomain => panic!("origin must be controllable"),
    }
}

#[test]
fn inside_s_value_zero_and_linear_law() {
    let spec = double_integrator_spec(8);
    let design = design(&spec).unwrap();
    let sets = settings();
    // A point well inside S: scale the disturbance ball radius down.
    let x = DVector::from_row_slice(&[0.05, 0.0]);
    assert!(member_s(&design.s, &x, &sets).unwrap().inside);
    let (u, diag) = mpc_step(&design, &spec, &x, &sets).unwrap();
    assert!(diag.value <= 1e-7, "value {} should vanish on S", diag.value);
    // z₀⁰ = 0 is optimal, so u = K_S·x.
    let expected = design.s.k_s() * &x;
    assert!((u - expected).amax() <= 1e-5);
}

#[test]
fn far_state_is_not_in_domain() {
    let spec = double_integrator_spec(8);
    let design = design(&spec).unwrap();
    let x = DVector::from_row_slice(&[1e4, 0.0]);
    match mpc_step(&design, &spec, &x, &settings()) {
        Err(ControllerError::NotInDomain) => {}
        other => panic!("expected NotInDomain, got {other:?}"),
    }
}

#[test]
fn step_satisfies_stage_rows() {
    let spec = double_integrator_spec(8);
    let design = design(&spec).unwrap();
    let sets = settings();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..10 {
        let x = DVector::from_fn(2, |_, _| rng.gen_range(-20.0..20.0));
        match mpc_step(&design, &spec, &x, &sets) {
            Ok((u, _)) => {
                let mut xu = DVector::zeros(3);
                xu.rows_mut(0, 2).copy_from(&x);
                xu[2] = u[0];
                assert!(spec.y.violation(&xu) <= 1e-6);
            }
            Err(ControllerError::NotInDomain) => {}
            Err(other) => panic!("unexpected error {other:?}"),
        }
    }
}

#[test]
fn value_positive_outside_s() {
    let spec = double_integrator_spec(8);
    let design = design(&spec).unwrap();
    let sets = settings();
    let x = DVector::from_row_slice(&[10.0, 0.0]);
    assert!(!member_s(&design.s, &x, &sets).unwrap().inside);
    let (_, diag) = mpc_step(&design, &spec, &x, &sets).unwrap();
    assert!(diag.value > 1e-3);
}

#[test]
fn local_lipschitz_behavior_of_the_plan() {
    let spec = double_integrator_spec(8);
    let design = design(&spec).unwrap();
    let sets = settings();
    let x_bar = DVector::from_row_slice(&[12.0, -3.0]);
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    // Estimate a local ratio bound from perturbation pairs, then check a
    // held-out pair stays within twice that bound.
    let mut ratios = Vec::new();
    let (_, base) = mpc_step(&design, &spec, &x_bar, &sets).unwrap();
    for _ in 0..12 {
        let dx = DVector::from_fn(2, |_, _| rng.gen_range(-1e-3..1e-3));
        let x = &x_bar + &dx;
        let (_, diag) = mpc_step(&design, &spec, &x, &sets).unwrap();
        let num = (&diag.z0 - &base.z0).amax();
        let den = dx.amax();
        if den > 1e-6 {
            ratios.push(num / den);
        }
    }
    let bound = ratios.iter().cloned().fold(0.0_f64, f64::max);
    assert!(bound.is_finite());
    let dx = DVector::from_row_slice(&[7e-4, -4e-4]);
    let (_, diag) = mpc_step(&design, &spec, &(&x_bar + &dx), &sets).unwrap();
    let ratio = (&diag.z0 - &base.z0).amax() / dx.amax();
    assert!(
        ratio <= 2.0 * bound + 1e-3,
        "held-out ratio {ratio} exceeds twice the estimated bound {bound}"
    );
}

#[test]
fn value_function_zero_iff_near_s_boundary_probe() {
    // Probabilistic check of the zero-on-S / positive-off-S split along a ray.
    let spec = double_integrator_spec(8);
    let design = design(&spec).unwrap();
    let sets = settings();
    let dir = DVector::from_row_slice(&[1.0, 0.3]);
    for t in [0.02_f64, 0.05, 0.08] {
        let x = &dir * t;
        let inside = member_s(&design.s, &x, &sets).unwrap().inside;
        let tq = assemble_qp(&design, &spec, &x).unwrap();
        let value = match solve_ocp(&tq, &sets).unwrap() {
            OcpOutcome::Feasible(sol) => sol.value,
            OcpOutcome::NotInDomain => panic!("ray point must be feasible"),
        };
        if inside {
            assert!(value <= 1e-7);
        } else {
            assert!(value > 1e-9);
        }
    }
}
