//! Exhaustive active-set enumeration, used as an independent oracle for small problems.

use nalgebra::{DMatrix, DVector};

use super::{kkt_residual, QpSolution, QpStatus, QuadraticProgram};

/// Largest inequality count accepted; the search visits `2^m_in` active sets.
pub const BRUTE_FORCE_MAX_INEQUALITIES: usize = 20;

/// Solve every equality-constrained KKT system obtained by fixing a subset of
/// inequalities as active, and keep the feasible, dual-feasible candidate with
/// the smallest objective.
///
/// Singular KKT systems (dependent active rows or a Hessian singular on the
/// active null space) are skipped. Returns `Infeasible` when no candidate passes.
pub fn brute_force_solve(qp: &QuadraticProgram, tol: f64) -> QpSolution {
    let n = qp.dim();
    let me = qp.num_eq();
    let mi = qp.num_in();
    assert!(
        mi <= BRUTE_FORCE_MAX_INEQUALITIES,
        "brute-force QP limited to {BRUTE_FORCE_MAX_INEQUALITIES} inequalities"
    );
    let scale = 1.0 + qp.q.norm();
    let mut best: Option<(f64, QpSolution)> = None;
    for mask in 0u32..(1u32 << mi) {
        let active: Vec<usize> = (0..mi).filter(|i| mask & (1 << i) != 0).collect();
        let m = me + active.len();
        if m > n {
            continue;
        }
        let mut kkt = DMatrix::zeros(n + m, n + m);
        kkt.view_mut((0, 0), (n, n)).copy_from(&qp.p);
        let mut rhs = DVector::zeros(n + m);
        rhs.rows_mut(0, n).copy_from(&(-&qp.q));
        for r in 0..me {
            for c in 0..n {
                kkt[(n + r, c)] = qp.a_eq[(r, c)];
                kkt[(c, n + r)] = qp.a_eq[(r, c)];
            }
            rhs[n + r] = qp.b_eq[r];
        }
        for (k, &i) in active.iter().enumerate() {
            for c in 0..n {
                kkt[(n + me + k, c)] = qp.a_in[(i, c)];
                kkt[(c, n + me + k)] = qp.a_in[(i, c)];
            }
            rhs[n + me + k] = qp.b_in[i];
        }
        let lu = kkt.full_piv_lu();
        if !lu.is_invertible() {
            continue;
        }
        let Some(sol) = lu.solve(&rhs) else {
            continue;
        };
        if sol.iter().any(|v| !v.is_finite()) {
            continue;
        }
        let x = sol.rows(0, n).into_owned();
        let eq = sol.rows(n, me).into_owned();
        let mut inm = DVector::zeros(mi);
        for (k, &i) in active.iter().enumerate() {
            inm[i] = sol[n + me + k];
        }
        let res = kkt_residual(qp, &x, &eq, &inm);
        // Feasibility and dual feasibility relative to the problem scale.
        let xs = 1.0 + x.amax();
        if res.primal > tol * xs || res.dual > tol * scale {
            continue;
        }
        let obj = qp.objective(&x);
        if best.as_ref().is_none_or(|(b, _)| obj < *b) {
            let inm = inm.map(|mu| mu.max(0.0));
            let kkt_res = kkt_residual(qp, &x, &eq, &inm).max();
            best = Some((
                obj,
                QpSolution {
                    x,
                    eq_multipliers: eq,
                    in_multipliers: inm,
                    status: QpStatus::Optimal,
                    kkt_residual: kkt_res,
                    iterations: 0,
                },
            ));
        }
    }
    best.map(|(_, s)| s).unwrap_or_else(|| QpSolution {
        x: DVector::zeros(n),
        eq_multipliers: DVector::zeros(me),
        in_multipliers: DVector::zeros(mi),
        status: QpStatus::Infeasible,
        kkt_residual: f64::INFINITY,
        iterations: 0,
    })
}
