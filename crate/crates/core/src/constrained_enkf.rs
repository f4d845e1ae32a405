//! Constraint-aware analysis: members whose unconstrained update violates
//! `F v = f`, `G v <= g` are re-solved as convex QPs, either over an
//! eigenbasis of range(C) or over the anomaly coefficients b.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::constraints::{LinearConstraints, ViolationReport, ViolationTolerance};
use crate::enkf::{self, FilterModel, FilterRun, Observation, RangeSystem, Transition, UpdateVariant};
use crate::ensemble::{Ensemble, EnsembleStats};
use crate::error::{Error, Result, RunPhase};
use crate::linalg;
use crate::noise::NoiseStreams;
use crate::qp::{self, QpOptions, QpStatus, QuadraticProgram};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConstrainedVariant {
    /// QP in the original variables restricted to `v_hat + range(C)`.
    Original,
    /// QP in the anomaly coefficients `b`, `v = v_hat + B b`.
    Range,
}

impl ConstrainedVariant {
    /// The unconstrained formula paired with this variant.
    pub fn unconstrained(self) -> UpdateVariant {
        match self {
            ConstrainedVariant::Original => UpdateVariant::Gain,
            ConstrainedVariant::Range => UpdateVariant::Range,
        }
    }
}

fn check_constraints(c: &LinearConstraints, d: usize) -> Result<()> {
    if c.dim() != d {
        return Err(Error::DimensionMismatch {
            what: "constraint columns",
            expected: d,
            found: c.dim(),
        });
    }
    Ok(())
}

/// Solve `min 1/2 z^T P z + q^T z` s.t. `F (v_hat + M z) = f`, `G (v_hat + M z) <= g`.
fn solve_reduced(
    p: DMatrix<f64>,
    q: DVector<f64>,
    m: &DMatrix<f64>,
    v_hat: &DVector<f64>,
    constraints: &LinearConstraints,
    hint: &DVector<f64>,
    opts: &QpOptions,
) -> Result<DVector<f64>> {
    let a_eq = constraints.f() * m;
    let b_eq = constraints.f_rhs() - constraints.f() * v_hat;
    let a_in = constraints.g() * m;
    let b_in = constraints.g_rhs() - constraints.g() * v_hat;
    let prog = QuadraticProgram::new(p, q, a_eq, b_eq, a_in, b_in)?;
    let sol = qp::solve_from(&prog, hint, opts);
    match sol.status {
        QpStatus::Optimal => Ok(sol.x),
        QpStatus::Infeasible => Err(Error::infeasible()),
        QpStatus::Unbounded => Err(Error::Numerical("constrained update QP is unbounded".into())),
        QpStatus::MaxIterations => Err(Error::Numerical(format!(
            "constrained update QP not solved to tolerance (KKT residual {:e})",
            sol.kkt_residual
        ))),
    }
}

/// Minimise `1/2 |y^(n) - H v|^2_Gamma + 1/2 |v - v_hat|^2_C` over `v - v_hat in range(C)`
/// subject to the constraints.
///
/// Writes `v = v_hat + U Lambda^{1/2} zeta` with `(U, Lambda)` the retained
/// eigenpairs of `C`, which turns the covariance weight into `|zeta|^2` and
/// keeps the QP well conditioned.
pub fn constrained_update_original(
    v_hat: &DVector<f64>,
    stats: &EnsembleStats,
    observation: &Observation,
    y: &DVector<f64>,
    constraints: &LinearConstraints,
    opts: &QpOptions,
) -> Result<DVector<f64>> {
    let d = stats.dim();
    linalg::check_len("predicted member", v_hat, d)?;
    check_constraints(constraints, d)?;
    let basis = stats.range_basis();
    let r = basis.rank();
    if r == 0 {
        return if constraints.is_satisfied(v_hat, ViolationTolerance::default()) {
            Ok(v_hat.clone())
        } else {
            Err(Error::infeasible())
        };
    }
    let mut m = basis.vectors.clone();
    for (c, lam) in basis.values.iter().enumerate() {
        m.column_mut(c).scale_mut(lam.sqrt());
    }
    let h = observation.h();
    let hm = h * &m;
    let w = observation.gamma_solve(&hm).transpose();
    let mut p = &w * &hm + DMatrix::identity(r, r);
    linalg::symmetrize(&mut p);
    let q = -(&w * (y - h * v_hat));
    let hint = linalg::cholesky("reduced Hessian", &p)?.solve(&(-&q));
    let z = solve_reduced(p, q, &m, v_hat, constraints, &hint, opts)?;
    Ok(v_hat + m * z)
}

/// Minimise `1/2 |y^(n) - H v_hat - H B b|^2_Gamma + 1/(2D) |b|^2` subject to
/// `F B b = f - F v_hat`, `G B b <= g - G v_hat`; returns `(v_hat + B b, b)`.
pub fn constrained_update_range_with(
    v_hat: &DVector<f64>,
    system: &RangeSystem,
    observation: &Observation,
    y: &DVector<f64>,
    constraints: &LinearConstraints,
    opts: &QpOptions,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let innov = y - observation.h() * v_hat;
    let q = system.linear_term(&innov);
    let hint = system.solve(&innov);
    let b = solve_reduced(system.p.clone(), q, &system.b, v_hat, constraints, &hint, opts)?;
    Ok((v_hat + &system.b * &b, b))
}

pub fn constrained_update_range(
    v_hat: &DVector<f64>,
    stats: &EnsembleStats,
    observation: &Observation,
    y: &DVector<f64>,
    constraints: &LinearConstraints,
    opts: &QpOptions,
) -> Result<DVector<f64>> {
    linalg::check_len("predicted member", v_hat, stats.dim())?;
    check_constraints(constraints, stats.dim())?;
    let system = RangeSystem::new(stats, observation)?;
    Ok(constrained_update_range_with(v_hat, &system, observation, y, constraints, opts)?.0)
}

/// Minimise `1/2 |y - H v|^2_Gamma + 1/2 |v - v_hat|^2_{C + eps I}` subject to the
/// constraints, directly in `v`. A reference formulation whose `eps -> 0`
/// limit is [`constrained_update_original`].
pub fn regularized_constrained_update(
    v_hat: &DVector<f64>,
    stats: &EnsembleStats,
    observation: &Observation,
    y: &DVector<f64>,
    constraints: &LinearConstraints,
    eps: f64,
    opts: &QpOptions,
) -> Result<DVector<f64>> {
    let d = stats.dim();
    check_constraints(constraints, d)?;
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::InvalidInput(format!("regularisation must be positive, got {eps}")));
    }
    let h = observation.h();
    let ht_gi = observation.gamma_solve(h).transpose();
    let mut p = &ht_gi * h + enkf::regularized_precision(&stats.covariance, eps);
    linalg::symmetrize(&mut p);
    // Work in w = v - v_hat so the quadratic term carries no large linear offset.
    let q = -(&ht_gi * (y - h * v_hat));
    let hint = linalg::cholesky("regularised Hessian", &p)?.solve(&(-&q));
    let eye = DMatrix::identity(d, d);
    let w = solve_reduced(p, q, &eye, v_hat, constraints, &hint, opts)?;
    Ok(v_hat + w)
}

/// Options for a constrained run.
#[derive(Debug, Clone, Copy)]
pub struct ConstraintOptions {
    /// `None` records violations of the unconstrained updates without re-solving.
    pub variant: Option<ConstrainedVariant>,
    pub tolerance: ViolationTolerance,
    pub qp: QpOptions,
}

impl Default for ConstraintOptions {
    fn default() -> Self {
        ConstraintOptions {
            variant: Some(ConstrainedVariant::Range),
            tolerance: ViolationTolerance::default(),
            qp: QpOptions::default(),
        }
    }
}

/// Outcome of one constrained analysis step.
pub struct ConstrainedStep {
    pub ensemble: Ensemble,
    /// Violated rows of each member's unconstrained update.
    pub violations: Vec<Vec<usize>>,
    pub resolved: usize,
}

/// Unconstrained update of every member, then a QP re-solve of each member whose
/// update violates the constraints. Non-violating members keep their update.
pub fn constrained_analysis(
    predicted: &Ensemble,
    stats: &EnsembleStats,
    observation: &Observation,
    perturbed: &[DVector<f64>],
    constraints: &LinearConstraints,
    update: UpdateVariant,
    opts: &ConstraintOptions,
    phase: RunPhase,
) -> Result<ConstrainedStep> {
    check_constraints(constraints, predicted.dim())?;
    let updated = enkf::apply_update(update, predicted, stats, observation, perturbed)?;
    let violations: Vec<Vec<usize>> = updated.members().map(|v| constraints.violations(&v, opts.tolerance)).collect();
    let Some(variant) = opts.variant else {
        return Ok(ConstrainedStep {
            ensemble: updated,
            violations,
            resolved: 0,
        });
    };
    let todo: Vec<usize> = (0..violations.len()).filter(|&n| !violations[n].is_empty()).collect();
    if todo.is_empty() {
        return Ok(ConstrainedStep {
            ensemble: updated,
            violations,
            resolved: 0,
        });
    }
    let system = match variant {
        ConstrainedVariant::Range => Some(RangeSystem::new(stats, observation)?),
        ConstrainedVariant::Original => None,
    };
    let solved: Vec<Result<DVector<f64>>> = todo
        .par_iter()
        .map(|&n| {
            let v_hat = predicted.member(n);
            let y = &perturbed[n];
            let r = match &system {
                Some(sys) => constrained_update_range_with(&v_hat, sys, observation, y, constraints, &opts.qp).map(|x| x.0),
                None => constrained_update_original(&v_hat, stats, observation, y, constraints, &opts.qp),
            };
            r.map_err(|e| e.at(phase, n))
        })
        .collect();
    let mut m = updated.into_matrix();
    for (&n, v) in todo.iter().zip(solved) {
        m.set_column(n, &v?);
    }
    Ok(ConstrainedStep {
        ensemble: Ensemble::from_matrix(m)?,
        violations,
        resolved: todo.len(),
    })
}

/// Filter run with per-step constraint handling and a violation report.
pub fn constrained_filter_run<T: Transition>(
    model: &FilterModel<T>,
    initial: &Ensemble,
    data: &[DVector<f64>],
    constraints: &LinearConstraints,
    streams: &NoiseStreams,
    opts: &ConstraintOptions,
) -> Result<(FilterRun, ViolationReport)> {
    let update = opts.variant.map(|v| v.unconstrained()).unwrap_or_default();
    let mut run = FilterRun {
        predicted: Vec::with_capacity(data.len()),
        analysis: vec![initial.clone()],
        perturbed: Vec::with_capacity(data.len()),
        seed: streams.seed(),
    };
    let mut report = ViolationReport::new(constraints);
    for (j, y) in data.iter().enumerate() {
        let (predicted, stats) = enkf::predict(run.final_ensemble(), model, j, streams)?;
        let perturbed = enkf::perturb_observations(y, &model.observation, model.perturb, predicted.size(), j + 1, streams)?;
        let step = constrained_analysis(
            &predicted,
            &stats,
            &model.observation,
            &perturbed,
            constraints,
            update,
            opts,
            RunPhase::Step(j + 1),
        )?;
        report.push_step(&step.violations, step.resolved);
        run.predicted.push(predicted);
        run.perturbed.push(perturbed);
        run.analysis.push(step.ensemble);
    }
    Ok((run, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::compute_stats;
    use crate::models::ModelError;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn dv(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    fn scalar_obs() -> Observation {
        Observation::new(DMatrix::from_element(1, 1, 1.0), DMatrix::from_element(1, 1, 1.0)).unwrap()
    }

    fn upper(c: f64) -> LinearConstraints {
        LinearConstraints::new(DMatrix::zeros(0, 1), DVector::zeros(0), DMatrix::from_element(1, 1, 1.0), dv(&[c])).unwrap()
    }

    #[test]
    fn scalar_active_bound() {
        // Members +-1 give C = 1, v_hat = 0, y = 2: unconstrained optimum 1, capped to 1/2.
        let ens = Ensemble::new(vec![dv(&[1.0]), dv(&[-1.0])]).unwrap();
        let stats = compute_stats(&ens);
        let opts = QpOptions::default();
        let y = dv(&[2.0]);
        let o = constrained_update_original(&dv(&[0.0]), &stats, &scalar_obs(), &y, &upper(0.5), &opts).unwrap();
        let r = constrained_update_range(&dv(&[0.0]), &stats, &scalar_obs(), &y, &upper(0.5), &opts).unwrap();
        assert!((o[0] - 0.5).abs() < 1e-12);
        assert!((r[0] - 0.5).abs() < 1e-12);
        let free = constrained_update_original(&dv(&[0.0]), &stats, &scalar_obs(), &y, &upper(5.0), &opts).unwrap();
        assert!((free[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn unreachable_constraint_is_an_error() {
        // Collapsed ensemble: no increment is possible, and v_hat = 0 violates v <= -1.
        let ens = Ensemble::new(vec![dv(&[0.0]), dv(&[0.0])]).unwrap();
        let stats = compute_stats(&ens);
        let r = constrained_update_original(&dv(&[0.0]), &stats, &scalar_obs(), &dv(&[2.0]), &upper(-1.0), &QpOptions::default());
        assert!(matches!(r, Err(Error::Infeasible { .. })));
        let r = constrained_update_range(&dv(&[0.0]), &stats, &scalar_obs(), &dv(&[2.0]), &upper(-1.0), &QpOptions::default());
        assert!(matches!(r, Err(Error::Infeasible { .. })));
    }

    #[test]
    fn equality_reproduces_data_in_range() {
        // F = H, f = y: the answer interpolates y when reachable inside range(C).
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let ens = Ensemble::from_matrix(DMatrix::from_fn(3, 4, |_, _| rng.sample(StandardNormal))).unwrap();
        let stats = compute_stats(&ens);
        let h = DMatrix::from_row_slice(1, 3, &[1.0, 0.5, 0.0]);
        let obs = Observation::new(h.clone(), DMatrix::from_element(1, 1, 0.01)).unwrap();
        let y = dv(&[2.5]);
        let c = LinearConstraints::new(h.clone(), y.clone(), DMatrix::zeros(0, 3), DVector::zeros(0)).unwrap();
        let v_hat = ens.member(0);
        let v = constrained_update_range(&v_hat, &stats, &obs, &y, &c, &QpOptions::default()).unwrap();
        assert!(((&h * &v)[0] - 2.5).abs() < 1e-9);
        // Direct KKT solve of the equality-constrained b-problem.
        let sys = RangeSystem::new(&stats, &obs).unwrap();
        let n = 4;
        let fb = &h * &sys.b;
        let mut kkt = DMatrix::zeros(n + 1, n + 1);
        kkt.view_mut((0, 0), (n, n)).copy_from(&sys.p);
        kkt.view_mut((0, n), (n, 1)).copy_from(&fb.transpose());
        kkt.view_mut((n, 0), (1, n)).copy_from(&fb);
        let mut rhs = DVector::zeros(n + 1);
        rhs.rows_mut(0, n).copy_from(&(-sys.linear_term(&(&y - &h * &v_hat))));
        rhs[n] = 2.5 - (&h * &v_hat)[0];
        let sol = kkt.lu().solve(&rhs).unwrap();
        let v_kkt = &v_hat + &sys.b * sol.rows(0, n);
        assert!((v - v_kkt).amax() < 1e-8);
    }

    #[test]
    fn inactive_constraints_give_unconstrained_answer() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ens = Ensemble::from_matrix(DMatrix::from_fn(4, 3, |_, _| rng.sample(StandardNormal))).unwrap();
        let stats = compute_stats(&ens);
        let obs = Observation::new(DMatrix::from_row_slice(2, 4, &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0]), DMatrix::identity(2, 2)).unwrap();
        let y = dv(&[0.3, -0.2]);
        let c = LinearConstraints::bounds(&DVector::from_element(4, -100.0), &DVector::from_element(4, 100.0)).unwrap();
        let k = enkf::analysis_update(&ens, &stats, &obs, &vec![y.clone(); 3]).unwrap();
        for n in 0..3 {
            let v = constrained_update_original(&ens.member(n), &stats, &obs, &y, &c, &QpOptions::default()).unwrap();
            assert!((v - k.member(n)).amax() < 1e-9);
        }
    }

    #[test]
    fn run_without_active_constraints_matches_plain_filter() {
        let id = |_: usize, v: &DVector<f64>| -> std::result::Result<DVector<f64>, ModelError> { Ok(v.clone()) };
        let obs = Observation::new(DMatrix::from_row_slice(1, 2, &[1.0, 0.0]), DMatrix::identity(1, 1)).unwrap();
        let model = FilterModel::new(id, obs, DMatrix::identity(2, 2) * 0.1, true).unwrap();
        let init = Ensemble::new(vec![dv(&[0.0, 1.0]), dv(&[1.0, 0.0]), dv(&[0.5, 0.5])]).unwrap();
        let data = vec![dv(&[0.2]), dv(&[0.4]), dv(&[0.3])];
        let c = LinearConstraints::bounds(&dv(&[-1e3, -1e3]), &dv(&[1e3, 1e3])).unwrap();
        let streams = NoiseStreams::new(1);
        let plain = enkf::filter_run(&model, &init, &data, &streams, UpdateVariant::Gain).unwrap();
        let opts = ConstraintOptions {
            variant: Some(ConstrainedVariant::Original),
            ..Default::default()
        };
        let (run, report) = constrained_filter_run(&model, &init, &data, &c, &streams, &opts).unwrap();
        assert_eq!(plain.analysis, run.analysis);
        assert!(!report.any_violation());
        assert_eq!(report.steps(), 3);
    }
}
