use approx::assert_relative_eq;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn settings() -> SolverSettings {
    SolverSettings::default()
}

/// `min cᵀx` over the rows `Ain·x ≤ bin` only.
fn inequality_lp(c: &[f64], a_in: DMatrix<f64>, b_in: &[f64]) -> LinearProgram {
    let n = c.len();
    LinearProgram {
        objective: DVector::from_row_slice(c),
        a_eq: DMatrix::zeros(0, n),
        b_eq: DVector::zeros(0),
        a_in,
        b_in: DVector::from_row_slice(b_in),
        num_vars: n,
    }
}

/// Rows of the unit ∞-norm ball in `R^n`.
fn box_rows(n: usize) -> DMatrix<f64> {
    let mut a = DMatrix::zeros(2 * n, n);
    for i in 0..n {
        a[(2 * i, i)] = 1.0;
        a[(2 * i + 1, i)] = -1.0;
    }
    a
}

#[test]
fn lp_box_support() {
    // max (1,1)ᵀw over the unit ∞-ball: optimum 2 at (1, 1).
    let lp = inequality_lp(&[-1.0, -1.0], box_rows(2), &[1.0; 4]);
    let status = solve_lp(&lp, &settings()).unwrap();
    let opt = status.optimum().expect("optimal");
    assert_relative_eq!(opt.objective, -2.0, epsilon = 1e-9);
    assert_relative_eq!(opt.x[0], 1.0, epsilon = 1e-9);
    assert_relative_eq!(opt.x[1], 1.0, epsilon = 1e-9);
}

#[test]
fn lp_redundant_bounds() {
    // min x s.t. x ≥ 1, x ≥ 3: optimum 3.
    let a = DMatrix::from_row_slice(2, 1, &[-1.0, -1.0]);
    let lp = inequality_lp(&[1.0], a, &[-1.0, -3.0]);
    let status = solve_lp(&lp, &settings()).unwrap();
    let opt = status.optimum().expect("optimal");
    assert_relative_eq!(opt.objective, 3.0, epsilon = 1e-9);
}

#[test]
fn lp_three_row_polyhedron_is_bounded_in_objective_direction() {
    // max (1,0)ᵀw over {w₁+w₂ ≤ 1, w₁−w₂ ≤ 1, −w₁ ≤ 1}: optimum 1, not
    // unbounded (vertex (1, 0) of the first two rows).
    let a = DMatrix::from_row_slice(3, 2, &[1.0, 1.0, 1.0, -1.0, -1.0, 0.0]);
    let lp = inequality_lp(&[-1.0, 0.0], a, &[1.0, 1.0, 1.0]);
    let status = solve_lp(&lp, &settings()).unwrap();
    let opt = status.optimum().expect("optimal, not unbounded");
    assert_relative_eq!(opt.objective, -1.0, epsilon = 1e-9);
    assert_relative_eq!(opt.x[0], 1.0, epsilon = 1e-8);
}

#[test]
fn lp_unbounded_direction_returns_ray() {
    // A slab {|w₁| ≤ 1} leaves w₂ free: max w₂ diverges along (0, 1).
    let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, -1.0, 0.0]);
    let lp = inequality_lp(&[0.0, -1.0], a, &[1.0, 1.0]);
    match solve_lp(&lp, &settings()).unwrap() {
        SolveStatus::Unbounded(ray) => {
            // Improving feasible direction: objective decreases, rows do not.
            assert!(lp.objective.dot(&ray.ray) < -1e-8);
            let violation = (&lp.a_in * &ray.ray)
                .iter()
                .fold(0.0_f64, |acc, v| acc.max(*v));
            assert!(violation <= 1e-8);
        }
        other => panic!("expected unbounded, got {other:?}"),
    }
}

#[test]
fn lp_infeasible_returns_farkas_certificate() {
    // x ≤ −1 and x ≥ 1 cannot hold together.
    let a = DMatrix::from_row_slice(2, 1, &[1.0, -1.0]);
    let lp = inequality_lp(&[0.0], a, &[-1.0, -1.0]);
    match solve_lp(&lp, &settings()).unwrap() {
        SolveStatus::Infeasible(cert) => {
            assert!(cert.y_in.iter().all(|v| *v >= -1e-12));
            let at = lp.a_in.tr_mul(&cert.y_in);
            assert!(inf_norm(&at) <= 1e-7);
            assert!(cert.y_in.dot(&lp.b_in) < -1e-9);
        }
        other => panic!("expected infeasible, got {other:?}"),
    }
}

#[test]
fn lp_iteration_cap_reports_numerical_failure() {
    let lp = inequality_lp(&[-1.0, -1.0], box_rows(2), &[1.0; 4]);
    let tight = SolverSettings {
        max_iter: 1,
        ..settings()
    };
    match solve_lp(&lp, &tight) {
        Err(SolverError::NumericalFailure { iterations, .. }) => assert_eq!(iterations, 1),
        other => panic!("expected numerical failure, got {other:?}"),
    }
}

#[test]
fn qp_scalar_bound() {
    // min x² s.t. x ≥ 1: x = 1, objective 1.
    let qp = QuadraticProgram {
        hessian: DMatrix::from_row_slice(1, 1, &[2.0]),
        gradient: DVector::zeros(1),
        a_eq: DMatrix::zeros(0, 1),
        b_eq: DVector::zeros(0),
        a_in: DMatrix::from_row_slice(1, 1, &[-1.0]),
        b_in: DVector::from_row_slice(&[-1.0]),
        num_vars: 1,
    };
    let status = solve_qp(&qp, &settings()).unwrap();
    let opt = status.optimum().expect("optimal");
    assert_relative_eq!(opt.x[0], 1.0, epsilon = 1e-7);
    assert_relative_eq!(opt.objective, 1.0, epsilon = 1e-7);
}

#[test]
fn qp_projection_onto_line() {
    // min ½‖x‖² s.t. x₁ + x₂ = 2: x = (1, 1), objective 1.
    let qp = QuadraticProgram {
        hessian: DMatrix::identity(2, 2),
        gradient: DVector::zeros(2),
        a_eq: DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
        b_eq: DVector::from_row_slice(&[2.0]),
        a_in: DMatrix::zeros(0, 2),
        b_in: DVector::zeros(0),
        num_vars: 2,
    };
    let status = solve_qp(&qp, &settings()).unwrap();
    let opt = status.optimum().expect("optimal");
    assert_relative_eq!(opt.x[0], 1.0, epsilon = 1e-7);
    assert_relative_eq!(opt.x[1], 1.0, epsilon = 1e-7);
    assert_relative_eq!(opt.objective, 1.0, epsilon = 1e-7);
}

#[test]
fn qp_separable_clipping() {
    // min x₁² + x₂² s.t. x₁ ≤ −1, x₂ ≤ −2: x = (−1, −2), objective 5.
    let qp = QuadraticProgram {
        hessian: DMatrix::identity(2, 2) * 2.0,
        gradient: DVector::zeros(2),
        a_eq: DMatrix::zeros(0, 2),
        b_eq: DVector::zeros(0),
        a_in: DMatrix::identity(2, 2),
        b_in: DVector::from_row_slice(&[-1.0, -2.0]),
        num_vars: 2,
    };
    let status = solve_qp(&qp, &settings()).unwrap();
    let opt = status.optimum().expect("optimal");
    assert_relative_eq!(opt.x[0], -1.0, epsilon = 1e-7);
    assert_relative_eq!(opt.x[1], -2.0, epsilon = 1e-7);
    assert_relative_eq!(opt.objective, 5.0, epsilon = 1e-7);
}

#[test]
fn qp_rejects_indefinite_hessian() {
    let qp = QuadraticProgram {
        hessian: DMatrix::from_row_slice(1, 1, &[-1.0]),
        gradient: DVector::zeros(1),
        a_eq: DMatrix::zeros(0, 1),
        b_eq: DVector::zeros(0),
        a_in: DMatrix::zeros(0, 1),
        b_in: DVector::zeros(0),
        num_vars: 1,
    };
    assert!(matches!(
        solve_qp(&qp, &settings()),
        Err(SolverError::Data(_))
    ));
}

#[test]
fn qp_infeasible_constraints_return_certificate() {
    let qp = QuadraticProgram {
        hessian: DMatrix::identity(1, 1),
        gradient: DVector::zeros(1),
        a_eq: DMatrix::zeros(0, 1),
        b_eq: DVector::zeros(0),
        a_in: DMatrix::from_row_slice(2, 1, &[1.0, -1.0]),
        b_in: DVector::from_row_slice(&[-1.0, -1.0]),
        num_vars: 1,
    };
    match solve_qp(&qp, &settings()).unwrap() {
        SolveStatus::Infeasible(cert) => {
            let at = qp.a_in.tr_mul(&cert.y_in);
            assert!(inf_norm(&at) <= 1e-7);
            assert!(cert.y_in.dot(&qp.b_in) < -1e-9);
        }
        other => panic!("expected infeasible, got {other:?}"),
    }
}

fn random_bounded_lp(rng: &mut ChaCha8Rng, n: usize) -> LinearProgram {
    let extra = rng.gen_range(0..4);
    let mut a = DMatrix::zeros(2 * n + extra, n);
    let mut b = DVector::zeros(2 * n + extra);
    a.view_mut((0, 0), (2 * n, n)).copy_from(&box_rows(n));
    for i in 0..2 * n {
        b[i] = rng.gen_range(0.5..3.0);
    }
    for r in 0..extra {
        for c in 0..n {
            a[(2 * n + r, c)] = rng.gen_range(-1.0..1.0);
        }
        b[2 * n + r] = rng.gen_range(0.2..2.0);
    }
    let c: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
    inequality_lp(&c, a, b.as_slice())
}

#[test]
fn lp_duality_holds_on_random_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..200 {
        let n = rng.gen_range(1..6);
        let lp = random_bounded_lp(&mut rng, n);
        let status = solve_lp(&lp, &settings()).unwrap();
        let opt = status.optimum().expect("bounded nonempty LP");
        let dual = opt.lp_dual_objective(&lp);
        assert!(
            (opt.objective - dual).abs() <= 1e-6 * (1.0 + opt.objective.abs()),
            "duality gap {} vs {}",
            opt.objective,
            dual
        );
        // Stationarity of the returned duals.
        let grad = &lp.objective + lp.a_in.tr_mul(&opt.dual_in);
        assert!(inf_norm(&grad) <= 1e-6 * (1.0 + inf_norm(&lp.objective)));
        assert!(opt.dual_in.iter().all(|v| *v >= -1e-9));
    }
}

#[test]
fn solver_outputs_are_bit_identical_across_calls() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let lp = random_bounded_lp(&mut rng, 4);
    let a = solve_lp(&lp, &settings()).unwrap();
    let b = solve_lp(&lp, &settings()).unwrap();
    let (oa, ob) = (a.optimum().unwrap(), b.optimum().unwrap());
    assert_eq!(oa.objective.to_bits(), ob.objective.to_bits());
    assert_eq!(oa.x.len(), ob.x.len());
    for (xa, xb) in oa.x.iter().zip(ob.x.iter()) {
        assert_eq!(xa.to_bits(), xb.to_bits());
    }

    let qp = QuadraticProgram {
        hessian: DMatrix::identity(4, 4),
        gradient: DVector::from_fn(4, |i, _| 0.3 * i as f64 - 0.5),
        a_eq: DMatrix::zeros(0, 4),
        b_eq: DVector::zeros(0),
        a_in: lp.a_in.clone(),
        b_in: lp.b_in.clone(),
        num_vars: 4,
    };
    let qa = solve_qp(&qp, &settings()).unwrap();
    let qb = solve_qp(&qp, &settings()).unwrap();
    let (oa, ob) = (qa.optimum().unwrap(), qb.optimum().unwrap());
    assert_eq!(oa.objective.to_bits(), ob.objective.to_bits());
    for (xa, xb) in oa.x.iter().zip(ob.x.iter()) {
        assert_eq!(xa.to_bits(), xb.to_bits());
    }
}

#[test]
fn qp_objective_no_worse_than_random_feasible_points() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for _case in 0..1000 {
        let n = rng.gen_range(1..=8);
        // H = GᵀG is convex; occasionally rank deficient, which is allowed.
        let g = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
        let hessian = g.tr_mul(&g);
        let gradient = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
        let lp = random_bounded_lp(&mut rng, n);
        let qp = QuadraticProgram {
            hessian,
            gradient,
            a_eq: DMatrix::zeros(0, n),
            b_eq: DVector::zeros(0),
            a_in: lp.a_in.clone(),
            b_in: lp.b_in.clone(),
            num_vars: n,
        };
        let status = solve_qp(&qp, &settings()).unwrap();
        let opt = status.optimum().expect("feasible bounded QP");
        let value = |x: &DVector<f64>| 0.5 * x.dot(&(&qp.hessian * x)) + qp.gradient.dot(x);
        for _ in 0..100 {
            // Random candidate pulled toward the strictly feasible origin
            // until every row holds.
            let mut cand = DVector::from_fn(n, |_, _| rng.gen_range(-3.0..3.0));
            for _ in 0..60 {
                let worst = (&qp.a_in * &cand - &qp.b_in)
                    .iter()
                    .fold(f64::NEG_INFINITY, |acc, v| acc.max(*v));
                if worst <= 0.0 {
                    break;
                }
                cand *= 0.5;
            }
            assert!(
                opt.objective <= value(&cand) + 1e-7,
                "solver objective {} beaten by candidate {}",
                opt.objective,
                value(&cand)
            );
        }
    }
}
