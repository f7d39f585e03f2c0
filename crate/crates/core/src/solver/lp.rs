//! Homogeneous self-dual interior-point LP solver.
//!
//! The LP `min cᵀx : Aeq·x = beq, Ain·x ≤ bin` is embedded, with slacks
//! `s ≥ 0` for the inequality rows, into the self-dual system
//!
//! ```text
//!   Aeq·x − beq·τ               = 0
//!   Ain·x + s − bin·τ           = 0
//!   c·τ − Aeqᵀy + Ainᵀz         = 0      (z ≥ 0 duals of the ≤ rows)
//!   beqᵀy − binᵀz − cᵀx − κ     = 0
//!   s∘z = 0,  τ·κ = 0,  s, z, τ, κ ≥ 0
//! ```
//!
//! A strictly complementary solution has either `τ > 0` (optimal after
//! dividing by `τ`) or `κ > 0` (the iterate carries a Farkas certificate of
//! primal infeasibility or an improving ray). Search directions come from a
//! Mehrotra predictor-corrector; each iteration factors one regularized
//! quasidefinite augmented matrix and reuses it for all right-hand sides.
//! An active-set polish step recovers vertex solutions to near machine
//! precision, which the set-calculus layer relies on.

use nalgebra::linalg::LU;
use nalgebra::{DMatrix, DVector};

use super::{
    inf_norm, max_step, InfeasibilityCertificate, LinearProgram, Optimum, SolveStatus,
    SolverError, SolverSettings, UnboundedRay,
};

struct Iterate {
    x: DVector<f64>,
    s: DVector<f64>,
    tau: f64,
    y: DVector<f64>,
    z: DVector<f64>,
    kappa: f64,
}

pub(super) fn solve(
    lp: &LinearProgram,
    settings: &SolverSettings,
) -> Result<SolveStatus, SolverError> {
    let n = lp.num_vars;
    let me = lp.a_eq.nrows();
    let mi = lp.a_in.nrows();

    let data_scale = lp
        .objective
        .iter()
        .chain(lp.a_eq.iter())
        .chain(lp.b_eq.iter())
        .chain(lp.a_in.iter())
        .chain(lp.b_in.iter())
        .fold(1.0_f64, |acc, v| acc.max(v.abs()));

    let mut it = Iterate {
        x: DVector::zeros(n),
        s: DVector::from_element(mi, 1.0),
        tau: 1.0,
        y: DVector::zeros(me),
        z: DVector::from_element(mi, 1.0),
        kappa: 1.0,
    };

    let b_norm = inf_norm(&lp.b_eq).max(inf_norm(&lp.b_in));
    let c_norm = inf_norm(&lp.objective);
    let degree = (mi + 1) as f64;
    let mut reg = 1e-11 * data_scale;

    let mut last_pres = f64::INFINITY;
    let mut last_dres = f64::INFINITY;
    let mut last_gap = f64::INFINITY;

    for iter in 0..settings.max_iter {
        // Residuals of the self-dual system at the current iterate.
        let r_p1 = &lp.a_eq * &it.x - &lp.b_eq * it.tau;
        let r_p2 = &lp.a_in * &it.x + &it.s - &lp.b_in * it.tau;
        let r_d =
            &lp.objective * it.tau - lp.a_eq.tr_mul(&it.y) + lp.a_in.tr_mul(&it.z);
        let r_g = lp.b_eq.dot(&it.y) - lp.b_in.dot(&it.z) - lp.objective.dot(&it.x) - it.kappa;
        let mu = (it.s.dot(&it.z) + it.tau * it.kappa) / degree;

        // Optimality of the scaled-back candidate.
        if it.tau > 1e-300 {
            let xs = &it.x / it.tau;
            let pres = {
                let pe = inf_norm(&(&lp.a_eq * &xs - &lp.b_eq));
                let slack = &lp.a_in * &xs - &lp.b_in;
                let pi = slack.iter().fold(0.0_f64, |acc, v| acc.max(*v));
                pe.max(pi)
            };
            let dres = inf_norm(&r_d) / it.tau;
            let primal_obj = lp.objective.dot(&xs);
            let dual_obj = (lp.b_eq.dot(&it.y) - lp.b_in.dot(&it.z)) / it.tau;
            let gap = (primal_obj - dual_obj).abs();
            last_pres = pres;
            last_dres = dres;
            last_gap = gap;
            if pres <= settings.feas_tol * (1.0 + b_norm)
                && dres <= settings.kkt_tol * (1.0 + c_norm)
                && gap <= settings.kkt_tol * (1.0 + primal_obj.abs())
            {
                let mut opt = Optimum {
                    x: xs,
                    objective: primal_obj,
                    dual_eq: -(&it.y) / it.tau,
                    dual_in: &it.z / it.tau,
                    iterations: iter,
                };
                polish(lp, settings, &mut opt);
                return Ok(SolveStatus::Optimal(opt));
            }
        }

        // Infeasibility: normalize the candidate w = (−y, z) to ‖w‖∞ = 1 and
        // demand both a clearly negative bᵀw and a Farkas ratio |bᵀw|/‖Aᵀw‖
        // large enough that the certificate rules out every feasible point of
        // plausible magnitude. This keeps zero-objective feasibility LPs from
        // being misclassified by transient weak certificates.
        let cert_val = lp.b_eq.dot(&it.y) - lp.b_in.dot(&it.z);
        let w_norm = inf_norm(&it.y).max(inf_norm(&it.z));
        if cert_val > 0.0 && w_norm > 0.0 {
            let bw = -cert_val / w_norm;
            let at = (lp.a_in.tr_mul(&it.z) - lp.a_eq.tr_mul(&it.y)) / w_norm;
            let atn = inf_norm(&at);
            if bw <= -10.0 * settings.feas_tol && atn * 1e6 <= -bw {
                return Ok(SolveStatus::Infeasible(InfeasibilityCertificate {
                    y_eq: -(&it.y) / w_norm,
                    y_in: &it.z / w_norm,
                }));
            }
        }

        // Unboundedness: normalize the candidate ray to ‖d‖∞ = 1 and demand a
        // clearly improving objective and the analogous feasibility ratio.
        let obj_val = lp.objective.dot(&it.x);
        let x_norm = inf_norm(&it.x);
        if obj_val < 0.0 && x_norm > 0.0 {
            let d = &it.x / x_norm;
            let cd = obj_val / x_norm;
            let eq_res = inf_norm(&(&lp.a_eq * &d));
            let in_res = (&lp.a_in * &d)
                .iter()
                .fold(0.0_f64, |acc, v| acc.max(*v));
            let res = eq_res.max(in_res);
            if cd <= -10.0 * settings.feas_tol && res * 1e6 <= -cd {
                return Ok(SolveStatus::Unbounded(UnboundedRay { ray: d }));
            }
        }

        // Augmented matrix, shared by every solve this iteration:
        //   [ εI    Aeqᵀ   Ainᵀ  ]   unknowns (dx, −dy, dz)
        //   [ Aeq   −εI    0     ]
        //   [ Ain   0     −D−εI  ]   with D = diag(s/z).
        let dim = n + me + mi;
        let mut k = DMatrix::zeros(dim, dim);
        k.view_mut((0, n), (n, me)).copy_from(&lp.a_eq.transpose());
        k.view_mut((0, n + me), (n, mi))
            .copy_from(&lp.a_in.transpose());
        k.view_mut((n, 0), (me, n)).copy_from(&lp.a_eq);
        k.view_mut((n + me, 0), (mi, n)).copy_from(&lp.a_in);
        for i in 0..n {
            k[(i, i)] = reg;
        }
        for i in 0..me {
            k[(n + i, n + i)] = -reg;
        }
        for i in 0..mi {
            k[(n + me + i, n + me + i)] = -it.s[i] / it.z[i] - reg;
        }

        let (lu, k) = match factorize(k, &mut reg, lp, &it) {
            Some(pair) => pair,
            None => {
                return Err(numerical_failure(iter, last_pres, last_dres, last_gap, &it));
            }
        };

        // g2 solves against the τ column (−c, beq, bin); data-only, so it is
        // shared by the predictor and corrector.
        let mut rhs_tau = DVector::zeros(dim);
        rhs_tau.rows_mut(0, n).copy_from(&(-(&lp.objective)));
        rhs_tau.rows_mut(n, me).copy_from(&lp.b_eq);
        rhs_tau.rows_mut(n + me, mi).copy_from(&lp.b_in);
        let g2 = match solve_refined(&lu, &k, &rhs_tau) {
            Some(v) => v,
            None => return Err(numerical_failure(iter, last_pres, last_dres, last_gap, &it)),
        };

        let direction = |sigma: f64,
                         corr_s: Option<&DVector<f64>>,
                         corr_tk: f64|
         -> Option<(DVector<f64>, DVector<f64>, f64, DVector<f64>, DVector<f64>, f64)> {
            let eta = 1.0 - sigma;
            // Complementarity targets.
            let mut rc_s = DVector::from_element(mi, sigma * mu);
            for i in 0..mi {
                rc_s[i] -= it.s[i] * it.z[i];
                if let Some(c) = corr_s {
                    rc_s[i] -= c[i];
                }
            }
            let rc_tk = sigma * mu - it.tau * it.kappa - corr_tk;

            let mut rhs = DVector::zeros(dim);
            rhs.rows_mut(0, n).copy_from(&(-eta * &r_d));
            rhs.rows_mut(n, me).copy_from(&(-eta * &r_p1));
            let mut block = -eta * &r_p2;
            for i in 0..mi {
                block[i] -= rc_s[i] / it.z[i];
            }
            rhs.rows_mut(n + me, mi).copy_from(&block);

            let g1 = solve_refined(&lu, &k, &rhs)?;

            let psi = |g: &DVector<f64>| -> f64 {
                let gx = g.rows(0, n);
                let gy = g.rows(n, me);
                let gz = g.rows(n + me, mi);
                lp.objective.dot(&gx.clone_owned())
                    + lp.b_eq.dot(&gy.clone_owned())
                    + lp.b_in.dot(&gz.clone_owned())
            };

            let denom = it.kappa / it.tau - psi(&g2);
            if denom.abs() < 1e-300 {
                return None;
            }
            let dtau = (-eta * r_g + psi(&g1) + rc_tk / it.tau) / denom;

            let full = &g1 + &g2 * dtau;
            let dx = full.rows(0, n).clone_owned();
            let dy = -full.rows(n, me).clone_owned();
            let dz = full.rows(n + me, mi).clone_owned();
            let mut ds = DVector::zeros(mi);
            for i in 0..mi {
                ds[i] = (rc_s[i] - it.s[i] * dz[i]) / it.z[i];
            }
            let dkappa = (rc_tk - it.kappa * dtau) / it.tau;
            Some((dx, ds, dtau, dy, dz, dkappa))
        };

        // Predictor.
        let (_dx_a, ds_a, dtau_a, _dy_a, dz_a, dkap_a) = match direction(0.0, None, 0.0) {
            Some(d) => d,
            None => return Err(numerical_failure(iter, last_pres, last_dres, last_gap, &it)),
        };
        let mut theta_aff = max_step(&it.s, &ds_a, 1.0);
        theta_aff = max_step(&it.z, &dz_a, theta_aff);
        if dtau_a < 0.0 {
            theta_aff = theta_aff.min(-it.tau / dtau_a);
        }
        if dkap_a < 0.0 {
            theta_aff = theta_aff.min(-it.kappa / dkap_a);
        }
        let mu_aff = {
            let s_a = &it.s + &ds_a * theta_aff;
            let z_a = &it.z + &dz_a * theta_aff;
            (s_a.dot(&z_a) + (it.tau + theta_aff * dtau_a) * (it.kappa + theta_aff * dkap_a))
                / degree
        };
        let sigma = (mu_aff / mu).clamp(0.0, 1.0).powi(3).clamp(1e-10, 0.9999);

        // Corrector.
        let corr_s = ds_a.component_mul(&dz_a);
        let corr_tk = dtau_a * dkap_a;
        let (dx, ds, dtau, dy, dz, dkappa) = match direction(sigma, Some(&corr_s), corr_tk) {
            Some(d) => d,
            None => return Err(numerical_failure(iter, last_pres, last_dres, last_gap, &it)),
        };

        let mut theta = max_step(&it.s, &ds, 1.0 / 0.995);
        theta = max_step(&it.z, &dz, theta);
        if dtau < 0.0 {
            theta = theta.min(-it.tau / dtau);
        }
        if dkappa < 0.0 {
            theta = theta.min(-it.kappa / dkappa);
        }
        let alpha = (0.995 * theta).min(1.0);
        if alpha < 1e-12 {
            return Err(numerical_failure(iter, last_pres, last_dres, last_gap, &it));
        }

        it.x += &dx * alpha;
        it.s += &ds * alpha;
        it.tau += alpha * dtau;
        it.y += &dy * alpha;
        it.z += &dz * alpha;
        it.kappa += alpha * dkappa;
    }

    Err(numerical_failure(
        settings.max_iter,
        last_pres,
        last_dres,
        last_gap,
        &it,
    ))
}

fn numerical_failure(
    iterations: usize,
    primal_residual: f64,
    dual_residual: f64,
    gap: f64,
    it: &Iterate,
) -> SolverError {
    let last = if it.tau > 1e-300 {
        &it.x / it.tau
    } else {
        it.x.clone()
    };
    SolverError::NumericalFailure {
        iterations,
        primal_residual,
        dual_residual,
        gap,
        last_iterate: last,
    }
}

/// Factor the augmented matrix, bumping the static regularization on the
/// rare singular factorization. Mutates `reg` so later iterations reuse the
/// working value. Returns the factorization together with the matrix it
/// factored (needed for iterative refinement).
#[allow(clippy::type_complexity)]
fn factorize(
    k: DMatrix<f64>,
    reg: &mut f64,
    lp: &LinearProgram,
    it: &Iterate,
) -> Option<(LU<f64, nalgebra::Dyn, nalgebra::Dyn>, DMatrix<f64>)> {
    let n = lp.num_vars;
    let me = lp.a_eq.nrows();
    let mi = lp.a_in.nrows();
    let mut mat = k;
    for _ in 0..4 {
        let lu = LU::new(mat.clone());
        if lu.is_invertible() {
            return Some((lu, mat));
        }
        *reg *= 100.0;
        for i in 0..n {
            mat[(i, i)] = *reg;
        }
        for i in 0..me {
            mat[(n + i, n + i)] = -*reg;
        }
        for i in 0..mi {
            mat[(n + me + i, n + me + i)] = -it.s[i] / it.z[i] - *reg;
        }
    }
    None
}

/// One LU solve plus a single iterative-refinement pass against `k`.
pub(super) fn solve_refined(
    lu: &LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    k: &DMatrix<f64>,
    rhs: &DVector<f64>,
) -> Option<DVector<f64>> {
    let mut sol = lu.solve(rhs)?;
    let residual = rhs - k * &sol;
    if inf_norm(&residual) > 0.0 {
        if let Some(corr) = lu.solve(&residual) {
            sol += corr;
        }
    }
    Some(sol)
}

/// Active-set polish: identify tight rows by the complementarity indicator
/// `z > s`, solve the active system in the least-squares sense, and accept
/// the refined point only when it stays feasible and does not worsen the
/// objective beyond solver noise. Vertex optima come back near machine
/// precision; degenerate faces fall back to the interior-point iterate.
fn polish(lp: &LinearProgram, settings: &SolverSettings, opt: &mut Optimum) {
    if inf_norm(&lp.objective) == 0.0 {
        return;
    }
    let n = lp.num_vars;
    let me = lp.a_eq.nrows();
    let slack = &lp.b_in - &lp.a_in * &opt.x;
    let active: Vec<usize> = (0..lp.a_in.nrows())
        .filter(|&i| opt.dual_in[i] > slack[i].abs())
        .collect();
    // Underdetermined active sets are fine: the SVD solve below returns the
    // minimum-norm point of the optimal face, which still sharpens the
    // objective value to the exact row data.
    if me + active.len() == 0 {
        return;
    }
    let mut act = DMatrix::zeros(me + active.len(), n);
    let mut rhs = DVector::zeros(me + active.len());
    act.view_mut((0, 0), (me, n)).copy_from(&lp.a_eq);
    rhs.rows_mut(0, me).copy_from(&lp.b_eq);
    for (row, &i) in active.iter().enumerate() {
        act.row_mut(me + row).copy_from(&lp.a_in.row(i));
        rhs[me + row] = lp.b_in[i];
    }
    let svd = act.svd(true, true);
    let candidate = match svd.solve(&rhs, 1e-12) {
        Ok(sol) => sol.column(0).clone_owned(),
        Err(_) => return,
    };

    let b_norm = inf_norm(&lp.b_eq).max(inf_norm(&lp.b_in));
    let feas_band = 10.0 * settings.feas_tol * (1.0 + b_norm);
    let eq_ok = inf_norm(&(&lp.a_eq * &candidate - &lp.b_eq)) <= feas_band;
    let in_ok = (&lp.a_in * &candidate - &lp.b_in)
        .iter()
        .all(|v| *v <= feas_band);
    let obj = lp.objective.dot(&candidate);
    let obj_ok = obj <= opt.objective + 10.0 * settings.kkt_tol * (1.0 + opt.objective.abs());
    if eq_ok && in_ok && obj_ok {
        opt.x = candidate;
        opt.objective = obj;
    }
}
