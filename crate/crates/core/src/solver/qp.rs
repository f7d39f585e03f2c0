//! Infeasible-start primal-dual interior-point solver for convex QPs.
//!
//! For `min ½xᵀHx + gᵀx : Aeq·x = beq, Ain·x + s = bin, s ≥ 0` the method
//! drives the perturbed KKT system
//!
//! ```text
//!   H·x + g + Aeqᵀy + Ainᵀλ = 0
//!   Aeq·x − beq = 0
//!   Ain·x + s − bin = 0
//!   s∘λ = μ·e,   s, λ ≥ 0
//! ```
//!
//! to `μ → 0` with Mehrotra predictor-corrector steps. Each iteration
//! factors the regularized quasidefinite augmented matrix
//!
//! ```text
//!   [ H+εI   Aeqᵀ   Ainᵀ  ]
//!   [ Aeq    −εI    0     ]
//!   [ Ain    0     −D−εI  ]      D = diag(s/λ)
//! ```
//!
//! once and reuses it for the predictor and corrector. Infeasibility is a
//! runtime outcome, not a crash: diverging duals are tested as a Farkas
//! certificate every iteration and reported once they prove the constraint
//! system empty at tolerance.

use nalgebra::linalg::LU;
use nalgebra::{DMatrix, DVector};

use super::lp::solve_refined;
use super::{
    inf_norm, max_step, InfeasibilityCertificate, Optimum, QuadraticProgram, SolveStatus,
    SolverError, SolverSettings, UnboundedRay,
};

pub(super) fn solve(
    qp: &QuadraticProgram,
    settings: &SolverSettings,
) -> Result<SolveStatus, SolverError> {
    let n = qp.num_vars;
    let me = qp.a_eq.nrows();
    let mi = qp.a_in.nrows();

    let h_norm = qp.hessian.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
    let hs = check_hessian(qp, h_norm)?;

    let data_scale = qp
        .gradient
        .iter()
        .chain(qp.a_eq.iter())
        .chain(qp.b_eq.iter())
        .chain(qp.a_in.iter())
        .chain(qp.b_in.iter())
        .fold(h_norm.max(1.0), |acc, v| acc.max(v.abs()));

    let mut x = DVector::<f64>::zeros(n);
    let mut y = DVector::<f64>::zeros(me);
    let mut s = DVector::from_fn(mi, |i, _| qp.b_in[i].max(1.0));
    let mut lam = DVector::<f64>::from_element(mi, 1.0);

    let b_norm = inf_norm(&qp.b_eq).max(inf_norm(&qp.b_in));
    let g_norm = inf_norm(&qp.gradient);
    let mut reg = 1e-11 * data_scale;

    let mut last_pres = f64::INFINITY;
    let mut last_dres = f64::INFINITY;
    let mut last_gap = f64::INFINITY;

    for iter in 0..settings.max_iter {
        let hx = &hs * &x;
        let r_d = &hx + &qp.gradient + qp.a_eq.tr_mul(&y) + qp.a_in.tr_mul(&lam);
        let r_eq = &qp.a_eq * &x - &qp.b_eq;
        let r_in = &qp.a_in * &x + &s - &qp.b_in;
        let gap = s.dot(&lam);
        let mu = if mi > 0 { gap / mi as f64 } else { 0.0 };

        let objective = 0.5 * x.dot(&hx) + qp.gradient.dot(&x);
        let pres = {
            let pe = inf_norm(&r_eq);
            let violation = (&qp.a_in * &x - &qp.b_in)
                .iter()
                .fold(0.0_f64, |acc, v| acc.max(*v));
            pe.max(violation)
        };
        let dres = inf_norm(&r_d);
        last_pres = pres;
        last_dres = dres;
        last_gap = gap;

        if pres <= settings.feas_tol * (1.0 + b_norm)
            && dres <= settings.kkt_tol * (1.0 + g_norm + inf_norm(&hx))
            && gap <= settings.kkt_tol * (1.0 + objective.abs())
        {
            return Ok(SolveStatus::Optimal(Optimum {
                x,
                objective,
                dual_eq: y,
                dual_in: lam,
                iterations: iter,
            }));
        }

        // Farkas test on the diverging dual candidate (y, λ), normalized to
        // ‖·‖∞ = 1; see the LP solver for the soundness argument.
        let cert_val = qp.b_eq.dot(&y) + qp.b_in.dot(&lam);
        let w_norm = inf_norm(&y).max(inf_norm(&lam));
        if cert_val < 0.0 && w_norm > 0.0 {
            let bw = cert_val / w_norm;
            let at = (qp.a_eq.tr_mul(&y) + qp.a_in.tr_mul(&lam)) / w_norm;
            let atn = inf_norm(&at);
            if bw <= -10.0 * settings.feas_tol && atn * 1e6 <= -bw {
                return Ok(SolveStatus::Infeasible(InfeasibilityCertificate {
                    y_eq: &y / w_norm,
                    y_in: &lam / w_norm,
                }));
            }
        }

        // Unbounded descent ray: H·d ≈ 0, gᵀd < 0, feasible direction.
        let gd = qp.gradient.dot(&x);
        let x_norm = inf_norm(&x);
        if gd < 0.0 && x_norm > 1.0 {
            let d = &x / x_norm;
            let gdn = gd / x_norm;
            let res = inf_norm(&(&hs * &d))
                .max(inf_norm(&(&qp.a_eq * &d)))
                .max(
                    (&qp.a_in * &d)
                        .iter()
                        .fold(0.0_f64, |acc, v| acc.max(*v)),
                );
            if gdn <= -10.0 * settings.feas_tol && res * 1e6 <= -gdn {
                return Ok(SolveStatus::Unbounded(UnboundedRay { ray: d }));
            }
        }

        let dim = n + me + mi;
        let mut k = DMatrix::zeros(dim, dim);
        k.view_mut((0, 0), (n, n)).copy_from(&hs);
        k.view_mut((0, n), (n, me)).copy_from(&qp.a_eq.transpose());
        k.view_mut((0, n + me), (n, mi))
            .copy_from(&qp.a_in.transpose());
        k.view_mut((n, 0), (me, n)).copy_from(&qp.a_eq);
        k.view_mut((n + me, 0), (mi, n)).copy_from(&qp.a_in);
        for i in 0..n {
            k[(i, i)] += reg;
        }
        for i in 0..me {
            k[(n + i, n + i)] = -reg;
        }
        for i in 0..mi {
            k[(n + me + i, n + me + i)] = -s[i] / lam[i] - reg;
        }

        let (lu, k) = match factorize(k, &mut reg, &hs, qp, &s, &lam) {
            Some(pair) => pair,
            None => {
                return Err(failure(iter, last_pres, last_dres, last_gap, &x));
            }
        };

        let direction = |sigma: f64,
                         corr: Option<&DVector<f64>>|
         -> Option<(DVector<f64>, DVector<f64>, DVector<f64>, DVector<f64>)> {
            let mut rc = DVector::from_element(mi, sigma * mu);
            for i in 0..mi {
                rc[i] -= s[i] * lam[i];
                if let Some(c) = corr {
                    rc[i] -= c[i];
                }
            }
            let mut rhs = DVector::zeros(dim);
            rhs.rows_mut(0, n).copy_from(&(-(&r_d)));
            rhs.rows_mut(n, me).copy_from(&(-(&r_eq)));
            let mut block = -(&r_in);
            for i in 0..mi {
                block[i] -= rc[i] / lam[i];
            }
            rhs.rows_mut(n + me, mi).copy_from(&block);

            let sol = solve_refined(&lu, &k, &rhs)?;
            let dx = sol.rows(0, n).clone_owned();
            let dy = sol.rows(n, me).clone_owned();
            let dlam = sol.rows(n + me, mi).clone_owned();
            let mut ds = DVector::zeros(mi);
            for i in 0..mi {
                ds[i] = (rc[i] - s[i] * dlam[i]) / lam[i];
            }
            Some((dx, ds, dy, dlam))
        };

        // Predictor.
        let (_dx_a, ds_a, _dy_a, dlam_a) = match direction(0.0, None) {
            Some(d) => d,
            None => return Err(failure(iter, last_pres, last_dres, last_gap, &x)),
        };
        let alpha_p_aff = max_step(&s, &ds_a, 1.0);
        let alpha_d_aff = max_step(&lam, &dlam_a, 1.0);
        let mu_aff = if mi > 0 {
            (&s + &ds_a * alpha_p_aff).dot(&(&lam + &dlam_a * alpha_d_aff)) / mi as f64
        } else {
            0.0
        };
        let sigma = if mu > 0.0 {
            (mu_aff / mu).clamp(0.0, 1.0).powi(3).clamp(1e-10, 0.9999)
        } else {
            0.0
        };

        // Corrector.
        let corr = ds_a.component_mul(&dlam_a);
        let (dx, ds, dy, dlam) = match direction(sigma, Some(&corr)) {
            Some(d) => d,
            None => return Err(failure(iter, last_pres, last_dres, last_gap, &x)),
        };

        let alpha_p = (0.995 * max_step(&s, &ds, 1.0 / 0.995)).min(1.0);
        let alpha_d = (0.995 * max_step(&lam, &dlam, 1.0 / 0.995)).min(1.0);
        if alpha_p.max(alpha_d) < 1e-12 {
            return Err(failure(iter, last_pres, last_dres, last_gap, &x));
        }

        x += &dx * alpha_p;
        s += &ds * alpha_p;
        y += &dy * alpha_d;
        lam += &dlam * alpha_d;
    }

    Err(failure(
        settings.max_iter,
        last_pres,
        last_dres,
        last_gap,
        &x,
    ))
}

fn failure(
    iterations: usize,
    primal_residual: f64,
    dual_residual: f64,
    gap: f64,
    x: &DVector<f64>,
) -> SolverError {
    SolverError::NumericalFailure {
        iterations,
        primal_residual,
        dual_residual,
        gap,
        last_iterate: x.clone(),
    }
}

/// Symmetry and positive-semidefiniteness gate. Returns the symmetrized
/// Hessian used by the iteration.
fn check_hessian(qp: &QuadraticProgram, h_norm: f64) -> Result<DMatrix<f64>, SolverError> {
    let n = qp.num_vars;
    let asym = (&qp.hessian - qp.hessian.transpose())
        .iter()
        .fold(0.0_f64, |acc, v| acc.max(v.abs()));
    if asym > 1e-9 * (1.0 + h_norm) {
        return Err(SolverError::Data(format!(
            "Hessian asymmetry {asym:.3e} exceeds 1e-9 relative tolerance"
        )));
    }
    let hs = (&qp.hessian + qp.hessian.transpose()) * 0.5;
    // Min eigenvalue ≥ −1e-9·‖H‖ is certified through a shifted Cholesky:
    // the shift exceeds the allowed negative curvature by enough margin that
    // a PSD-to-tolerance matrix always factors.
    let shift = 1e-9 * h_norm + 1e-12;
    let shifted = &hs + DMatrix::identity(n, n) * shift;
    if shifted.cholesky().is_none() {
        return Err(SolverError::Data(
            "Hessian is not positive semidefinite to tolerance".into(),
        ));
    }
    Ok(hs)
}

#[allow(clippy::type_complexity)]
fn factorize(
    k: DMatrix<f64>,
    reg: &mut f64,
    hs: &DMatrix<f64>,
    qp: &QuadraticProgram,
    s: &DVector<f64>,
    lam: &DVector<f64>,
) -> Option<(LU<f64, nalgebra::Dyn, nalgebra::Dyn>, DMatrix<f64>)> {
    let n = qp.num_vars;
    let me = qp.a_eq.nrows();
    let mi = qp.a_in.nrows();
    let mut mat = k;
    for _ in 0..4 {
        let lu = LU::new(mat.clone());
        if lu.is_invertible() {
            return Some((lu, mat));
        }
        *reg *= 100.0;
        for i in 0..n {
            mat[(i, i)] = hs[(i, i)] + *reg;
        }
        for i in 0..me {
            mat[(n + i, n + i)] = -*reg;
        }
        for i in 0..mi {
            mat[(n + me + i, n + me + i)] = -s[i] / lam[i] - *reg;
        }
    }
    None
}
