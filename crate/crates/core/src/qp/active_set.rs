//! Primal active-set iteration with a null-space KKT solve.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::{kkt_residual, QpOptions, QpSolution, QpStatus, QuadraticProgram};

/// Proximal weight of the elastic phase-1 problem.
const PHASE1_PROX: f64 = 1e-6;
const PHASE1_ROUNDS: usize = 30;

/// Constraint rows scaled to unit norm, with dependent equality rows split off.
struct Normalized {
    a_eq: DMatrix<f64>,
    b_eq: DVector<f64>,
    eq_rows: Vec<usize>,
    eq_scale: Vec<f64>,
    /// Equality rows linearly dependent on `eq_rows`; only checked for consistency.
    dependent_eq: Vec<(DVector<f64>, f64)>,
    a_in: DMatrix<f64>,
    b_in: DVector<f64>,
    in_rows: Vec<usize>,
    in_scale: Vec<f64>,
}

fn normalize(qp: &QuadraticProgram, tol: f64) -> Option<Normalized> {
    let n = qp.dim();
    let mut kept: Vec<DVector<f64>> = Vec::new();
    // Orthonormal basis of the kept rows, for the independence test.
    let mut ortho: Vec<DVector<f64>> = Vec::new();
    let mut b_eq = Vec::new();
    let mut eq_rows = Vec::new();
    let mut eq_scale = Vec::new();
    let mut dependent_eq = Vec::new();
    for i in 0..qp.num_eq() {
        let row = qp.a_eq.row(i).transpose();
        let s = row.norm();
        if s == 0.0 {
            if qp.b_eq[i].abs() > tol {
                return None;
            }
            continue;
        }
        let unit = row / s;
        let b = qp.b_eq[i] / s;
        let mut r = unit.clone();
        for o in &ortho {
            let c = o.dot(&r);
            r -= o * c;
        }
        if r.norm() > 1e-10 {
            ortho.push(r.normalize());
            kept.push(unit);
            b_eq.push(b);
            eq_rows.push(i);
            eq_scale.push(s);
        } else {
            dependent_eq.push((unit, b));
        }
    }
    let mut a_eq = DMatrix::zeros(kept.len(), n);
    for (k, r) in kept.iter().enumerate() {
        a_eq.set_row(k, &r.transpose());
    }

    let mut in_rows = Vec::new();
    let mut in_scale = Vec::new();
    let mut b_in = Vec::new();
    let mut rows = Vec::new();
    for i in 0..qp.num_in() {
        let row = qp.a_in.row(i).transpose();
        let s = row.norm();
        if s == 0.0 {
            if qp.b_in[i] < -tol {
                return None;
            }
            continue;
        }
        rows.push(row / s);
        b_in.push(qp.b_in[i] / s);
        in_rows.push(i);
        in_scale.push(s);
    }
    let mut a_in = DMatrix::zeros(rows.len(), n);
    for (k, r) in rows.iter().enumerate() {
        a_in.set_row(k, &r.transpose());
    }
    Some(Normalized {
        a_eq,
        b_eq: DVector::from_vec(b_eq),
        eq_rows,
        eq_scale,
        dependent_eq,
        a_in,
        b_in: DVector::from_vec(b_in),
        in_rows,
        in_scale,
    })
}

/// Null-space factorisation of a working-set matrix `A_w` (m x n, full row rank).
struct WorkingFactor {
    /// n x m orthonormal basis of range(A_w^T).
    y: DMatrix<f64>,
    /// n x (n-m) orthonormal basis of null(A_w).
    z: DMatrix<f64>,
    /// m x m upper-triangular with `A_w^T = Y R`.
    r: DMatrix<f64>,
}

fn factor(aw: &DMatrix<f64>) -> WorkingFactor {
    let (m, n) = aw.shape();
    if m == 0 {
        return WorkingFactor {
            y: DMatrix::zeros(n, 0),
            z: DMatrix::identity(n, n),
            r: DMatrix::zeros(0, 0),
        };
    }
    // QR of [A_w^T | I] yields a full orthogonal Q whose leading m columns span range(A_w^T).
    let mut aug = DMatrix::zeros(n, m + n);
    aug.columns_mut(0, m).copy_from(&aw.transpose());
    aug.columns_mut(m, n).fill_with_identity();
    let q = aug.qr().q();
    let y = q.columns(0, m).into_owned();
    let z = q.columns(m, n - m).into_owned();
    let mut r = y.tr_mul(&aw.transpose());
    for i in 0..m {
        for j in 0..i {
            r[(i, j)] = 0.0;
        }
    }
    WorkingFactor { y, z, r }
}

enum Step {
    /// Newton step to the minimiser on the current working subspace.
    Newton(DVector<f64>),
    /// Zero-curvature descent direction; the objective decreases without bound along it.
    Descent(DVector<f64>),
}

fn reduced_step(p: &DMatrix<f64>, reg: f64, z: &DMatrix<f64>, g: &DVector<f64>, gtol: f64) -> Step {
    let k = z.ncols();
    if k == 0 {
        return Step::Newton(DVector::zeros(z.nrows()));
    }
    let hr = z.tr_mul(&(p * z));
    let gr = z.tr_mul(g);
    let hmax = hr.diagonal().amax();
    if let Some(ch) = (&hr + DMatrix::identity(k, k) * reg).cholesky() {
        let ldiag = ch.l_dirty().diagonal();
        let dmin = ldiag.iter().fold(f64::INFINITY, |a, &b| a.min(b * b));
        if dmin > 1e-12 * hmax.max(f64::MIN_POSITIVE) {
            return Step::Newton(-(z * ch.solve(&gr)));
        }
    }
    let eig = SymmetricEigen::new(hr);
    let lmax = eig.eigenvalues.amax();
    let thr = 1e-12 * lmax.max(f64::MIN_POSITIVE);
    let mut flat = DVector::zeros(k);
    let mut newton = DVector::zeros(k);
    for (i, &lam) in eig.eigenvalues.iter().enumerate() {
        let u = eig.eigenvectors.column(i);
        let c = u.dot(&gr);
        if lam > thr {
            newton -= u * (c / lam);
        } else {
            flat -= u * c;
        }
    }
    if flat.norm() > gtol {
        Step::Descent(z * flat)
    } else {
        Step::Newton(z * newton)
    }
}

struct CoreProblem<'a> {
    p: &'a DMatrix<f64>,
    q: &'a DVector<f64>,
    a_eq: &'a DMatrix<f64>,
    b_eq: &'a DVector<f64>,
    a_in: &'a DMatrix<f64>,
    b_in: &'a DVector<f64>,
    tol: f64,
    max_iter: usize,
}

struct CoreResult {
    x: DVector<f64>,
    eq_mult: DVector<f64>,
    in_mult: DVector<f64>,
    status: QpStatus,
    iterations: usize,
}

impl CoreProblem<'_> {
    fn working_matrix(&self, active: &[usize]) -> DMatrix<f64> {
        let me = self.a_eq.nrows();
        let n = self.q.len();
        let mut aw = DMatrix::zeros(me + active.len(), n);
        if me > 0 {
            aw.rows_mut(0, me).copy_from(self.a_eq);
        }
        for (k, &i) in active.iter().enumerate() {
            aw.set_row(me + k, &self.a_in.row(i));
        }
        aw
    }

    fn multipliers(&self, f: &WorkingFactor, g: &DVector<f64>) -> DVector<f64> {
        if f.r.nrows() == 0 {
            return DVector::zeros(0);
        }
        let rhs = -f.y.tr_mul(g);
        f.r.solve_upper_triangular(&rhs)
            .unwrap_or_else(|| DVector::zeros(f.r.nrows()))
    }

    /// Largest step along `d` keeping inactive inequalities satisfied; ties go to the smallest index.
    fn ratio_test(&self, x: &DVector<f64>, d: &DVector<f64>, is_active: &[bool], cap: f64) -> (f64, Option<usize>) {
        let dn = d.norm();
        let mut alpha = cap;
        let mut block = None;
        for i in 0..self.a_in.nrows() {
            if is_active[i] {
                continue;
            }
            let row = self.a_in.row(i);
            let ad = row.dot(&d.transpose());
            if ad <= 1e-14 * dn {
                continue;
            }
            let slack = (self.b_in[i] - row.dot(&x.transpose())).max(0.0);
            let a = slack / ad;
            if a < alpha {
                alpha = a;
                block = Some(i);
            }
        }
        (alpha, block)
    }

    fn run(&self, x0: DVector<f64>) -> CoreResult {
        let n = self.q.len();
        let me = self.a_eq.nrows();
        let mi = self.a_in.nrows();
        let reg = 1e-12 * self.p.trace().abs() / n.max(1) as f64;
        let qscale = 1.0 + self.q.norm();
        let dual_tol = self.tol * qscale;
        let mut x = x0;
        let mut active: Vec<usize> = Vec::new();
        let mut is_active = vec![false; mi];
        let mut status = QpStatus::MaxIterations;
        let mut iterations = 0;
        let mut last_mult = DVector::zeros(me);

        while iterations < self.max_iter {
            iterations += 1;
            let aw = self.working_matrix(&active);
            let f = factor(&aw);
            let g = self.p * &x + self.q;
            let gtol = 1e-10 * (qscale + g.norm());
            let at_minimizer = match reduced_step(self.p, reg, &f.z, &g, gtol) {
                Step::Descent(d) => {
                    let (alpha, block) = self.ratio_test(&x, &d, &is_active, f64::INFINITY);
                    match block {
                        Some(i) => {
                            x += d * alpha;
                            active.push(i);
                            is_active[i] = true;
                            continue;
                        }
                        None => {
                            status = QpStatus::Unbounded;
                            break;
                        }
                    }
                }
                Step::Newton(d) => {
                    if d.norm() <= 1e-15 * (1.0 + x.norm()) {
                        true
                    } else {
                        let (alpha, block) = self.ratio_test(&x, &d, &is_active, 1.0);
                        x += d * alpha;
                        match block {
                            Some(i) => {
                                active.push(i);
                                is_active[i] = true;
                                false
                            }
                            None => true,
                        }
                    }
                }
            };
            if !at_minimizer {
                continue;
            }
            let g = self.p * &x + self.q;
            let lam = self.multipliers(&f, &g);
            last_mult = lam.clone();
            // Most negative inequality multiplier, smallest index on ties.
            let mut drop: Option<(usize, f64)> = None;
            for (k, &i) in active.iter().enumerate() {
                let mu = lam[me + k];
                if mu < -dual_tol {
                    let better = match drop {
                        None => true,
                        Some((j, v)) => mu < v || (mu == v && i < active[j]),
                    };
                    if better {
                        drop = Some((k, mu));
                    }
                }
            }
            match drop {
                None => {
                    status = QpStatus::Optimal;
                    break;
                }
                Some((k, _)) => {
                    let i = active.remove(k);
                    is_active[i] = false;
                }
            }
        }

        let mut eq_mult = DVector::zeros(me);
        let mut in_mult = DVector::zeros(mi);
        if last_mult.len() == me + active.len() {
            eq_mult.copy_from(&last_mult.rows(0, me));
            for (k, &i) in active.iter().enumerate() {
                in_mult[i] = last_mult[me + k];
            }
        }
        if status == QpStatus::Optimal {
            self.polish(&mut x, &mut eq_mult, &mut in_mult, &active);
        }
        CoreResult {
            x,
            eq_mult,
            in_mult,
            status,
            iterations,
        }
    }

    /// Re-solve the final working-set KKT system directly to shed accumulated round-off.
    fn polish(&self, x: &mut DVector<f64>, eq_mult: &mut DVector<f64>, in_mult: &mut DVector<f64>, active: &[usize]) {
        let n = self.q.len();
        let me = self.a_eq.nrows();
        let aw = self.working_matrix(active);
        let m = aw.nrows();
        let mut kkt = DMatrix::zeros(n + m, n + m);
        kkt.view_mut((0, 0), (n, n)).copy_from(self.p);
        kkt.view_mut((0, n), (n, m)).copy_from(&aw.transpose());
        kkt.view_mut((n, 0), (m, n)).copy_from(&aw);
        let mut rhs = DVector::zeros(n + m);
        rhs.rows_mut(0, n).copy_from(&(-self.q));
        for k in 0..m {
            rhs[n + k] = if k < me { self.b_eq[k] } else { self.b_in[active[k - me]] };
        }
        let Some(sol) = kkt.lu().solve(&rhs) else {
            return;
        };
        if sol.iter().any(|v| !v.is_finite()) {
            return;
        }
        let xp = sol.rows(0, n).into_owned();
        let lp = sol.rows(n, m).into_owned();
        if lp.rows(me, m - me).iter().any(|&mu| mu < -self.tol * (1.0 + self.q.norm())) {
            return;
        }
        let mut ep = DVector::zeros(me);
        ep.copy_from(&lp.rows(0, me));
        let mut ip = DVector::zeros(self.a_in.nrows());
        for (k, &i) in active.iter().enumerate() {
            ip[i] = lp[me + k];
        }
        let before = self.residual(x, eq_mult, in_mult);
        let after = self.residual(&xp, &ep, &ip);
        if after < before {
            *x = xp;
            *eq_mult = ep;
            *in_mult = ip;
        }
    }

    fn residual(&self, x: &DVector<f64>, eq: &DVector<f64>, inm: &DVector<f64>) -> f64 {
        let qp = QuadraticProgram {
            p: self.p.clone(),
            q: self.q.clone(),
            a_eq: self.a_eq.clone(),
            b_eq: self.b_eq.clone(),
            a_in: self.a_in.clone(),
            b_in: self.b_in.clone(),
        };
        kkt_residual(&qp, x, eq, inm).max()
    }
}

fn project_onto_equalities(norm: &Normalized, x: &DVector<f64>) -> Option<DVector<f64>> {
    let mut x = x.clone();
    if norm.a_eq.nrows() > 0 {
        let gram = &norm.a_eq * norm.a_eq.transpose();
        let r = &norm.a_eq * &x - &norm.b_eq;
        let w = gram.cholesky()?.solve(&r);
        x -= norm.a_eq.tr_mul(&w);
    }
    Some(x)
}

fn max_violation(norm: &Normalized, x: &DVector<f64>) -> f64 {
    let mut v = 0.0_f64;
    if norm.a_in.nrows() > 0 {
        let s = &norm.a_in * x - &norm.b_in;
        v = s.iter().fold(v, |m, &e| m.max(e));
    }
    if norm.a_eq.nrows() > 0 {
        v = v.max((&norm.a_eq * x - &norm.b_eq).amax());
    }
    for (row, b) in &norm.dependent_eq {
        v = v.max((row.dot(x) - b).abs());
    }
    v
}

/// Elastic phase 1: minimise the total inequality excess, with a small proximal
/// term so the subproblem is strictly convex. Re-centring at each round's
/// answer is a proximal-point iteration, which terminates finitely here.
fn phase1(norm: &Normalized, hint: &DVector<f64>, tol: f64) -> Option<DVector<f64>> {
    let n = hint.len();
    let mut x = project_onto_equalities(norm, hint)?;
    for (row, b) in &norm.dependent_eq {
        if (row.dot(&x) - b).abs() > tol.max(1e-9 * (1.0 + b.abs())) {
            return None;
        }
    }
    if max_violation(norm, &x) <= tol {
        return Some(x);
    }
    let mi = norm.a_in.nrows();
    let me = norm.a_eq.nrows();
    let n1 = n + mi;
    let p1 = DMatrix::identity(n1, n1) * PHASE1_PROX;
    let mut a_eq1 = DMatrix::zeros(me, n1);
    if me > 0 {
        a_eq1.columns_mut(0, n).copy_from(&norm.a_eq);
    }
    let mut a_in1 = DMatrix::zeros(2 * mi, n1);
    a_in1.view_mut((0, 0), (mi, n)).copy_from(&norm.a_in);
    for i in 0..mi {
        a_in1[(i, n + i)] = -1.0;
        a_in1[(mi + i, n + i)] = -1.0;
    }
    let mut b_in1 = DVector::zeros(2 * mi);
    b_in1.rows_mut(0, mi).copy_from(&norm.b_in);

    let mut prev_excess = f64::INFINITY;
    for _ in 0..PHASE1_ROUNDS {
        let mut q1 = DVector::zeros(n1);
        q1.rows_mut(0, n).copy_from(&(&x * -PHASE1_PROX));
        q1.rows_mut(n, mi).fill(1.0);
        let mut z0 = DVector::zeros(n1);
        z0.rows_mut(0, n).copy_from(&x);
        let excess0 = &norm.a_in * &x - &norm.b_in;
        for i in 0..mi {
            z0[n + i] = excess0[i].max(0.0);
        }
        let core = CoreProblem {
            p: &p1,
            q: &q1,
            a_eq: &a_eq1,
            b_eq: &norm.b_eq,
            a_in: &a_in1,
            b_in: &b_in1,
            tol: tol.min(1e-9),
            max_iter: 100 * (n1 + 2 * mi),
        };
        let res = core.run(z0);
        x = res.x.rows(0, n).into_owned();
        let viol = max_violation(norm, &x);
        if viol <= tol {
            return Some(x);
        }
        let excess: f64 = (&norm.a_in * &x - &norm.b_in).iter().map(|e| e.max(0.0)).sum();
        if excess >= prev_excess * (1.0 - 1e-9) {
            return None;
        }
        prev_excess = excess;
    }
    None
}

pub(super) fn feasible_point(qp: &QuadraticProgram, hint: Option<&DVector<f64>>, tol: f64) -> Option<DVector<f64>> {
    let norm = normalize(qp, tol)?;
    let start = hint.cloned().unwrap_or_else(|| DVector::zeros(qp.dim()));
    phase1(&norm, &start, tol)
}

pub(super) fn solve(qp: &QuadraticProgram, hint: Option<&DVector<f64>>, opts: &QpOptions) -> QpSolution {
    let n = qp.dim();
    let tol = opts.tol;
    let max_iter = opts.max_iter.unwrap_or(100 * (n + qp.num_in()).max(1));
    let start = hint.cloned().unwrap_or_else(|| DVector::zeros(n));
    let infeasible = |x: DVector<f64>| QpSolution {
        x,
        eq_multipliers: DVector::zeros(qp.num_eq()),
        in_multipliers: DVector::zeros(qp.num_in()),
        status: QpStatus::Infeasible,
        kkt_residual: f64::INFINITY,
        iterations: 0,
    };
    let Some(norm) = normalize(qp, tol) else {
        return infeasible(start);
    };
    let Some(x0) = phase1(&norm, &start, tol) else {
        return infeasible(start);
    };
    let core = CoreProblem {
        p: &qp.p,
        q: &qp.q,
        a_eq: &norm.a_eq,
        b_eq: &norm.b_eq,
        a_in: &norm.a_in,
        b_in: &norm.b_in,
        tol,
        max_iter,
    };
    let res = core.run(x0);

    let mut eq_multipliers = DVector::zeros(qp.num_eq());
    for (k, &i) in norm.eq_rows.iter().enumerate() {
        eq_multipliers[i] = res.eq_mult[k] / norm.eq_scale[k];
    }
    let mut in_multipliers = DVector::zeros(qp.num_in());
    for (k, &i) in norm.in_rows.iter().enumerate() {
        in_multipliers[i] = (res.in_mult[k] / norm.in_scale[k]).max(0.0);
    }
    let residual = kkt_residual(qp, &res.x, &eq_multipliers, &in_multipliers).max();
    let status = match res.status {
        // An optimal working set without a certificate at `tol` is reported as unfinished.
        QpStatus::Optimal if residual > tol => QpStatus::MaxIterations,
        s => s,
    };
    QpSolution {
        x: res.x,
        eq_multipliers,
        in_multipliers,
        status,
        kkt_residual: residual,
        iterations: res.iterations,
    }
}
