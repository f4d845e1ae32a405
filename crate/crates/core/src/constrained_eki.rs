//! Constrained ensemble Kalman inversion: parameter-space and data-space
//! constraints lifted to `v = (u, w)` and enforced by the constrained
//! analysis step.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::constrained_enkf::{self, ConstraintOptions};
use crate::constraints::{LinearConstraints, ViolationReport, ViolationTolerance};
use crate::eki::{self, EkiHistory, ForwardMap, InverseProblem};
use crate::ensemble::{compute_stats_with, Ensemble, EnsembleStats};
use crate::enkf::{Observation, RangeSystem};
use crate::error::{Error, Result, RunPhase};
use crate::linalg;
use crate::qp::QpOptions;

/// `F_u u = f_u`, `G_u u <= g_u`, `F_w w = f_w`, `G_w w <= g_w`.
#[derive(Debug, Clone, PartialEq)]
pub struct LiftedConstraints {
    pub p: usize,
    pub k: usize,
    pub f_u: DMatrix<f64>,
    pub f_u_rhs: DVector<f64>,
    pub g_u: DMatrix<f64>,
    pub g_u_rhs: DVector<f64>,
    pub f_w: DMatrix<f64>,
    pub f_w_rhs: DVector<f64>,
    pub g_w: DMatrix<f64>,
    pub g_w_rhs: DVector<f64>,
    /// Labels of the parameter inequality rows, if named.
    pub g_u_labels: Option<Vec<String>>,
}

impl LiftedConstraints {
    pub fn unconstrained(p: usize, k: usize) -> Self {
        LiftedConstraints {
            p,
            k,
            f_u: DMatrix::zeros(0, p),
            f_u_rhs: DVector::zeros(0),
            g_u: DMatrix::zeros(0, p),
            g_u_rhs: DVector::zeros(0),
            f_w: DMatrix::zeros(0, k),
            f_w_rhs: DVector::zeros(0),
            g_w: DMatrix::zeros(0, k),
            g_w_rhs: DVector::zeros(0),
            g_u_labels: None,
        }
    }

    pub fn with_parameter_inequalities(mut self, g: DMatrix<f64>, rhs: DVector<f64>) -> Self {
        self.g_u = g;
        self.g_u_rhs = rhs;
        self
    }

    pub fn with_parameter_equalities(mut self, f: DMatrix<f64>, rhs: DVector<f64>) -> Self {
        self.f_u = f;
        self.f_u_rhs = rhs;
        self
    }

    pub fn with_data_inequalities(mut self, g: DMatrix<f64>, rhs: DVector<f64>) -> Self {
        self.g_w = g;
        self.g_w_rhs = rhs;
        self
    }

    pub fn with_data_equalities(mut self, f: DMatrix<f64>, rhs: DVector<f64>) -> Self {
        self.f_w = f;
        self.f_w_rhs = rhs;
        self
    }

    fn check(&self) -> Result<()> {
        let blocks: [(&'static str, &DMatrix<f64>, &DVector<f64>, usize); 4] = [
            ("parameter equality columns", &self.f_u, &self.f_u_rhs, self.p),
            ("parameter inequality columns", &self.g_u, &self.g_u_rhs, self.p),
            ("data equality columns", &self.f_w, &self.f_w_rhs, self.k),
            ("data inequality columns", &self.g_w, &self.g_w_rhs, self.k),
        ];
        for (what, m, rhs, cols) in blocks {
            if m.nrows() > 0 && m.ncols() != cols {
                return Err(Error::DimensionMismatch {
                    what,
                    expected: cols,
                    found: m.ncols(),
                });
            }
            linalg::check_len("constraint right-hand side", rhs, m.nrows())?;
        }
        Ok(())
    }

    /// `F = diag(F_u, F_w)`, `G = diag(G_u, G_w)`, `f = (f_u, f_w)`, `g = (g_u, g_w)`.
    pub fn assemble(&self) -> Result<LinearConstraints> {
        self.check()?;
        let (p, k) = (self.p, self.k);
        let block = |a: &DMatrix<f64>, b: &DMatrix<f64>| {
            let mut m = DMatrix::zeros(a.nrows() + b.nrows(), p + k);
            if a.nrows() > 0 {
                m.view_mut((0, 0), (a.nrows(), p)).copy_from(a);
            }
            if b.nrows() > 0 {
                m.view_mut((a.nrows(), p), (b.nrows(), k)).copy_from(b);
            }
            m
        };
        let stack = |a: &DVector<f64>, b: &DVector<f64>| DVector::from_iterator(a.len() + b.len(), a.iter().chain(b.iter()).cloned());
        let f = block(&self.f_u, &self.f_w);
        let g = block(&self.g_u, &self.g_w);
        let c = LinearConstraints::with_dim(p + k, f, stack(&self.f_u_rhs, &self.f_w_rhs), g, stack(&self.g_u_rhs, &self.g_w_rhs))?;
        let labels = (0..self.f_u.nrows())
            .map(|i| format!("u_eq{i}"))
            .chain((0..self.f_w.nrows()).map(|i| format!("w_eq{i}")))
            .chain(match &self.g_u_labels {
                Some(l) => l.clone(),
                None => (0..self.g_u.nrows()).map(|i| format!("u_ineq{i}")).collect(),
            })
            .chain((0..self.g_w.nrows()).map(|i| format!("w_ineq{i}")))
            .collect();
        c.with_labels(labels)
    }

    /// The parameter-space part alone, as constraints on `u`.
    pub fn parameter_constraints(&self) -> Result<LinearConstraints> {
        self.check()?;
        LinearConstraints::with_dim(self.p, self.f_u.clone(), self.f_u_rhs.clone(), self.g_u.clone(), self.g_u_rhs.clone())
    }
}

/// Box constraints of the layered-soil inversion on `u = (c_s0, k, z_0, n, z_1, alpha)`:
/// `0 <= c_s0 <= cs0_max`, `0 <= k <= k_max`, `0 <= z_0 <= z_1`, `0 <= n <= 1`,
/// `z_0 <= z_1 <= H`, `1 <= alpha <= alpha_max`, two rows per interval.
pub fn wave_box_constraints(depth: f64, cs0_max: f64, k_max: f64, alpha_max: f64, k: usize) -> LiftedConstraints {
    #[rustfmt::skip]
    let rows: [([f64; 6], f64, &str); 12] = [
        ([-1.0, 0.0, 0.0, 0.0, 0.0, 0.0], 0.0, "cs0>=0"),
        ([1.0, 0.0, 0.0, 0.0, 0.0, 0.0], cs0_max, "cs0<=max"),
        ([0.0, -1.0, 0.0, 0.0, 0.0, 0.0], 0.0, "k>=0"),
        ([0.0, 1.0, 0.0, 0.0, 0.0, 0.0], k_max, "k<=max"),
        ([0.0, 0.0, -1.0, 0.0, 0.0, 0.0], 0.0, "z0>=0"),
        ([0.0, 0.0, 1.0, 0.0, -1.0, 0.0], 0.0, "z0<=z1"),
        ([0.0, 0.0, 0.0, -1.0, 0.0, 0.0], 0.0, "n>=0"),
        ([0.0, 0.0, 0.0, 1.0, 0.0, 0.0], 1.0, "n<=1"),
        ([0.0, 0.0, 1.0, 0.0, -1.0, 0.0], 0.0, "z1>=z0"),
        ([0.0, 0.0, 0.0, 0.0, 1.0, 0.0], depth, "z1<=H"),
        ([0.0, 0.0, 0.0, 0.0, 0.0, -1.0], -1.0, "alpha>=1"),
        ([0.0, 0.0, 0.0, 0.0, 0.0, 1.0], alpha_max, "alpha<=max"),
    ];
    let mut g = DMatrix::zeros(12, 6);
    let mut rhs = DVector::zeros(12);
    for (i, (row, b, _)) in rows.iter().enumerate() {
        g.set_row(i, &nalgebra::RowDVector::from_row_slice(row));
        rhs[i] = *b;
    }
    let mut c = LiftedConstraints::unconstrained(6, k).with_parameter_inequalities(g, rhs);
    c.g_u_labels = Some(rows.iter().map(|r| r.2.to_string()).collect());
    c
}

fn lifted_member(u: &DVector<f64>, w: &DVector<f64>) -> DVector<f64> {
    DVector::from_iterator(u.len() + w.len(), u.iter().chain(w.iter()).cloned())
}

fn split_member(v: DVector<f64>, p: usize) -> (DVector<f64>, DVector<f64>) {
    let k = v.len() - p;
    (v.rows(0, p).into_owned(), v.rows(p, k).into_owned())
}

/// Constrained update of one member `(u, G(u))` in the original lifted variables.
pub fn constrained_eki_update_original(
    u: &DVector<f64>,
    g_u: &DVector<f64>,
    lifted_stats: &EnsembleStats,
    observation: &Observation,
    y: &DVector<f64>,
    constraints: &LinearConstraints,
    opts: &QpOptions,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let v_hat = lifted_member(u, g_u);
    let v = constrained_enkf::constrained_update_original(&v_hat, lifted_stats, observation, y, constraints, opts)?;
    Ok(split_member(v, u.len()))
}

/// Constrained update of one member in anomaly coefficients; the `u` and `w`
/// parts come from the same `b` through `B_u` and `B_w`.
pub fn constrained_eki_update_range(
    u: &DVector<f64>,
    g_u: &DVector<f64>,
    lifted_stats: &EnsembleStats,
    observation: &Observation,
    y: &DVector<f64>,
    constraints: &LinearConstraints,
    opts: &QpOptions,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let v_hat = lifted_member(u, g_u);
    let system = RangeSystem::new(lifted_stats, observation)?;
    let (v, _) = constrained_enkf::constrained_update_range_with(&v_hat, &system, observation, y, constraints, opts)?;
    Ok(split_member(v, u.len()))
}

/// Draw from `sampler` until `n` draws satisfy the parameter constraints and
/// `accept`. Fails after `max_draws` draws.
pub fn rejection_sample_initial<R, S, P>(
    mut sampler: S,
    constraints: &LinearConstraints,
    accept: P,
    n: usize,
    max_draws: usize,
    rng: &mut R,
) -> Result<Ensemble>
where
    R: Rng + ?Sized,
    S: FnMut(&mut R) -> DVector<f64>,
    P: Fn(&DVector<f64>) -> bool,
{
    if max_draws < n {
        return Err(Error::InvalidInput(format!("max_draws {max_draws} is below the ensemble size {n}")));
    }
    let mut kept = Vec::with_capacity(n);
    let mut draws = 0;
    while kept.len() < n {
        if draws == max_draws {
            return Err(Error::InvalidInput(format!(
                "initial ensemble: only {} of {n} members accepted in {max_draws} draws (acceptance rate {:.3e})",
                kept.len(),
                kept.len() as f64 / max_draws as f64
            )));
        }
        draws += 1;
        let u = sampler(rng);
        if constraints.is_satisfied(&u, ViolationTolerance::Absolute(0.0)) && accept(&u) {
            kept.push(u);
        }
    }
    Ensemble::new(kept)
}

/// Iterated EKI where each iteration's update is followed by a constrained
/// re-solve of violating members on the lifted system.
pub fn constrained_eki_run<G: ForwardMap>(
    problem: &InverseProblem<G>,
    constraints: &LinearConstraints,
    initial: &Ensemble,
    iterations: usize,
    streams: &crate::noise::NoiseStreams,
    opts: &ConstraintOptions,
) -> Result<(EkiHistory, ViolationReport)> {
    let p = initial.dim();
    let k = problem.data_dim();
    if constraints.dim() != p + k {
        return Err(Error::DimensionMismatch {
            what: "lifted constraint columns",
            expected: p + k,
            found: constraints.dim(),
        });
    }
    let observation = problem.lifted_observation(p)?;
    let update = opts.variant.map(|v| v.unconstrained()).unwrap_or_default();
    let mut hist = EkiHistory::new(initial.clone());
    let mut report = ViolationReport::new(constraints);
    for j in 0..iterations {
        let u = hist.final_ensemble();
        let w = eki::evaluate_ensemble(&problem.forward, u, j)?;
        let lifted = eki::lift(u, &w)?;
        let stats = compute_stats_with(&lifted, problem.divisor);
        let y = problem.perturbed_data(u.size(), j, streams)?;
        let step = constrained_enkf::constrained_analysis(&lifted, &stats, &observation, &y, constraints, update, opts, RunPhase::Iteration(j))?;
        report.push_step(&step.violations, step.resolved);
        let (u_next, w_next) = eki::split(&step.ensemble, p)?;
        hist.evaluations.push(w);
        hist.updated_w.push(w_next);
        hist.ensembles.push(u_next);
    }
    Ok((hist, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constrained_enkf::ConstrainedVariant;
    use crate::eki::FnForward;
    use crate::models::ModelError;
    use crate::noise::NoiseStreams;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dv(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    #[test]
    fn assembly_blocks() {
        let c = LiftedConstraints::unconstrained(2, 3)
            .with_parameter_inequalities(DMatrix::from_row_slice(1, 2, &[1.0, 2.0]), dv(&[5.0]))
            .assemble()
            .unwrap();
        assert_eq!(c.g().shape(), (1, 5));
        assert_eq!(c.g().row(0).iter().cloned().collect::<Vec<_>>(), vec![1.0, 2.0, 0.0, 0.0, 0.0]);

        let c = LiftedConstraints::unconstrained(2, 2)
            .with_data_equalities(DMatrix::from_row_slice(1, 2, &[1.0, -1.0]), dv(&[0.0]))
            .assemble()
            .unwrap();
        assert_eq!(c.f().row(0).iter().cloned().collect::<Vec<_>>(), vec![0.0, 0.0, 1.0, -1.0]);

        let wave = wave_box_constraints(30.0, 1000.0, 100.0, 10.0, 4);
        assert_eq!(wave.g_u.nrows(), 12);
        let a = wave.assemble().unwrap();
        assert_eq!(a.num_in(), 12);
        assert_eq!(a.labels()[9], "z1<=H");
        let bad = LiftedConstraints::unconstrained(2, 2).with_parameter_inequalities(DMatrix::zeros(1, 3), dv(&[0.0]));
        assert!(bad.assemble().is_err());
    }

    fn scalar_setup() -> (Ensemble, DMatrix<f64>, EnsembleStats, Observation) {
        let u = Ensemble::new(vec![dv(&[0.0]), dv(&[2.0])]).unwrap();
        let w = u.as_matrix().clone();
        let lifted = eki::lift(&u, &w).unwrap();
        let stats = compute_stats_with(&lifted, Default::default());
        let mut h = DMatrix::zeros(1, 2);
        h[(0, 1)] = 1.0;
        let obs = Observation::new(h, DMatrix::identity(1, 1)).unwrap();
        (u, w, stats, obs)
    }

    #[test]
    fn scalar_cap() {
        // Member u = 2 moves to 3 unconstrained; u <= 2.5 caps it. The lifted
        // covariance is rank one along (1, 1), so w moves with u.
        let (u, w, stats, obs) = scalar_setup();
        let c = LiftedConstraints::unconstrained(1, 1)
            .with_parameter_inequalities(DMatrix::from_element(1, 1, 1.0), dv(&[2.5]))
            .assemble()
            .unwrap();
        let y = dv(&[4.0]);
        let opts = QpOptions::default();
        let gu = w.column(1).into_owned();
        let (uo, wo) = constrained_eki_update_original(&u.member(1), &gu, &stats, &obs, &y, &c, &opts).unwrap();
        let (ur, wr) = constrained_eki_update_range(&u.member(1), &gu, &stats, &obs, &y, &c, &opts).unwrap();
        assert!((uo[0] - 2.5).abs() < 1e-12 && (ur[0] - 2.5).abs() < 1e-12);
        assert!((wo[0] - 2.5).abs() < 1e-12 && (wr[0] - 2.5).abs() < 1e-12);
        // Inactive: the plain updates.
        let loose = LiftedConstraints::unconstrained(1, 1)
            .with_parameter_inequalities(DMatrix::from_element(1, 1, 1.0), dv(&[10.0]))
            .assemble()
            .unwrap();
        let (u0, w0) = constrained_eki_update_original(&u.member(0), &w.column(0).into_owned(), &stats, &obs, &y, &loose, &opts).unwrap();
        assert!((u0[0] - 2.0).abs() < 1e-9 && (w0[0] - 2.0).abs() < 1e-9);
    }

    #[test]
    fn data_equality_is_met() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let u = Ensemble::from_matrix(DMatrix::from_fn(2, 5, |_, _| rng.random_range(-1.0..1.0))).unwrap();
        let w = DMatrix::from_fn(2, 5, |i, j| u.as_matrix()[(0, j)] * (i as f64 + 1.0) + u.as_matrix()[(1, j)].powi(2));
        let lifted = eki::lift(&u, &w).unwrap();
        let stats = compute_stats_with(&lifted, Default::default());
        let mut h = DMatrix::zeros(2, 4);
        h.view_mut((0, 2), (2, 2)).fill_with_identity();
        let obs = Observation::new(h, DMatrix::identity(2, 2) * 0.5).unwrap();
        let y = dv(&[0.4, 0.9]);
        let c = LiftedConstraints::unconstrained(2, 2)
            .with_data_equalities(DMatrix::from_row_slice(1, 2, &[1.0, 0.0]), dv(&[0.4]))
            .assemble()
            .unwrap();
        let (_, wr) = constrained_eki_update_range(&u.member(0), &w.column(0).into_owned(), &stats, &obs, &y, &c, &QpOptions::default()).unwrap();
        assert!((wr[0] - 0.4).abs() < 1e-8);
    }

    #[test]
    fn rejection_sampling() {
        let c = wave_box_constraints(30.0, 1000.0, 100.0, 10.0, 1).parameter_constraints().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let sampler = |r: &mut ChaCha8Rng| {
            dv(&[
                r.random_range(0.0..1000.0),
                r.random_range(0.0..100.0),
                r.random_range(0.0..30.0),
                r.random_range(0.0..1.0),
                r.random_range(0.0..30.0),
                r.random_range(1.0..10.0),
            ])
        };
        let screen = |u: &DVector<f64>| crate::models::wave::WaveParams::from_slice(u.as_slice()).unwrap().cs_below_z1() <= 5000.0;
        let ens = rejection_sample_initial(sampler, &c, screen, 20, 100_000, &mut rng).unwrap();
        for u in ens.members() {
            assert!(c.is_satisfied(&u, ViolationTolerance::Absolute(0.0)));
            assert!(screen(&u));
        }
        let err = rejection_sample_initial(sampler, &c, |_| false, 5, 50, &mut rng);
        assert!(err.is_err());
        let all = rejection_sample_initial(|r: &mut ChaCha8Rng| dv(&[r.random_range(0.0..1.0)]), &LinearConstraints::none(1), |_| true, 4, 4, &mut rng);
        assert!(all.is_ok());
    }

    #[test]
    fn inactive_run_matches_plain_eki() {
        let f = FnForward {
            output_dim: 2,
            f: |u: &DVector<f64>| -> std::result::Result<DVector<f64>, ModelError> { Ok(dv(&[u[0] + u[1], u[0] - 0.5 * u[1]])) },
        };
        let problem = InverseProblem::new(f, dv(&[1.0, 0.2]), DMatrix::identity(2, 2) * 0.1, true).unwrap();
        let init = Ensemble::new(vec![dv(&[0.0, 0.1]), dv(&[0.5, -0.3]), dv(&[0.2, 0.4])]).unwrap();
        let streams = NoiseStreams::new(8);
        let plain = eki::eki_run(&problem, &init, 4, &streams).unwrap();
        let c = LiftedConstraints::unconstrained(2, 2)
            .with_parameter_inequalities(DMatrix::identity(2, 2), dv(&[1e3, 1e3]))
            .assemble()
            .unwrap();
        let opts = ConstraintOptions {
            variant: Some(ConstrainedVariant::Original),
            ..Default::default()
        };
        let (hist, report) = constrained_eki_run(&problem, &c, &init, 4, &streams, &opts).unwrap();
        for (a, b) in plain.ensembles.iter().zip(&hist.ensembles) {
            assert!((a.as_matrix() - b.as_matrix()).amax() < 1e-9);
        }
        assert!(!report.any_violation());
    }
}
