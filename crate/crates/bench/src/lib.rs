//! Shared fixtures for the criterion benches.

use nalgebra::{DMatrix, DVector};

use rigidtube::model::{CostWeights, HPolyhedron, Plant, ProblemSpec};
use rigidtube::setcalc::{ImplicitRpiSet, ImplicitTerminalSet};
use rigidtube::synthesis::{gain_lqr, zs_rows, NzMode, Provenance, SynthesisOptions, TubeDesign};

/// The double-integrator fixture used across the test suite.
pub fn double_integrator(horizon: usize) -> ProblemSpec {
    let plant = Plant::new(
        DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]),
        DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
    )
    .unwrap();
    ProblemSpec::new(
        plant,
        HPolyhedron::stage_box(2, 1, 100.0, 50.0),
        HPolyhedron::box_scaled(2, 0.1),
        CostWeights::identity(2, 1),
        horizon,
        SynthesisOptions::default(),
    )
    .unwrap()
}

/// A trusted-certificate design at the scale of a 10-state, 4-input plant
/// with horizon 20, N_S = 24, N_Z = 15: the 680-variable online QP.
pub fn large_instance() -> (TubeDesign, ProblemSpec) {
    let plant = rigidtube::benchmark::random_system(10, 4, 77).unwrap();
    let spec = ProblemSpec::new(
        plant,
        HPolyhedron::stage_box(10, 4, 500.0, 50.0),
        HPolyhedron::inf_ball(10),
        CostWeights::new(DMatrix::identity(10, 10) * 100.0, DMatrix::identity(4, 4)).unwrap(),
        20,
        SynthesisOptions::default(),
    )
    .unwrap();
    let (k_s, _) = gain_lqr(
        spec.plant.a(),
        spec.plant.b(),
        &DMatrix::identity(10, 10),
        &DMatrix::identity(4, 4),
    )
    .unwrap();
    let a_k = spec.plant.a() + spec.plant.b() * &k_s;
    let s = ImplicitRpiSet::from_certified_parts(a_k, k_s, spec.w.clone(), 0.0408, 24).unwrap();
    let (k_z, p) = gain_lqr(
        spec.plant.a(),
        spec.plant.b(),
        spec.weights.q(),
        spec.weights.r(),
    )
    .unwrap();
    let a_z = spec.plant.a() + spec.plant.b() * &k_z;
    let f = DVector::from_element(spec.y.num_rows(), 0.05);
    let zs = zs_rows(&spec, &k_z, &f).unwrap();
    let terminal = ImplicitTerminalSet::new(a_z, k_z, zs, 15).unwrap();
    let design = TubeDesign {
        s,
        f,
        terminal,
        p,
        nz_mode: NzMode::Sufficient,
        provenance: Provenance::default(),
    };
    (design, spec)
}
