use cenkf_core::constrained_enkf::{constrained_analysis, ConstrainedVariant, ConstraintOptions};
use cenkf_core::enkf::{analysis_update, perturb_observations, Observation, UpdateVariant};
use cenkf_core::qp::solve;
use cenkf_core::{compute_stats, Ensemble, LinearConstraints, NoiseStreams, Purpose, QpOptions, QuadraticProgram, RunPhase};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn randn(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.sample::<f64, _>(StandardNormal))
}

struct Instance {
    ensemble: Ensemble,
    observation: Observation,
    perturbed: Vec<DVector<f64>>,
}

fn instance(seed: u64, d: usize, k: usize, n: usize) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ensemble = Ensemble::from_matrix(randn(&mut rng, d, n)).unwrap();
    let a = randn(&mut rng, k, k);
    let gamma = &a * a.transpose() + DMatrix::identity(k, k) * 0.5;
    let gamma = (&gamma + gamma.transpose()) * 0.5;
    let observation = Observation::new(randn(&mut rng, k, d), gamma).unwrap();
    let y = randn(&mut rng, k, 1).column(0).into_owned();
    let perturbed = perturb_observations(&y, &observation, true, n, 1, &NoiseStreams::new(seed)).unwrap();
    Instance {
        ensemble,
        observation,
        perturbed,
    }
}

/// Bounds around the ensemble mean, `width` standard units wide.
fn box_around_mean(e: &Ensemble, width: f64) -> LinearConstraints {
    let m = e.as_matrix().column_mean();
    let lo = m.map(|x| x - width);
    let hi = m.map(|x| x + width);
    LinearConstraints::bounds(&lo, &hi).unwrap()
}

fn options(variant: ConstrainedVariant) -> ConstraintOptions {
    ConstraintOptions {
        variant: Some(variant),
        ..Default::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn constrained_members_are_feasible(seed in any::<u64>(), d in 1usize..6, k in 1usize..4, n in 2usize..7, width in 0.05f64..1.0, original in any::<bool>()) {
        let inst = instance(seed, d, k, n);
        let stats = compute_stats(&inst.ensemble);
        let c = box_around_mean(&inst.ensemble, width);
        let variant = if original { ConstrainedVariant::Original } else { ConstrainedVariant::Range };
        let step = constrained_analysis(&inst.ensemble, &stats, &inst.observation, &inst.perturbed, &c, variant.unconstrained(), &options(variant), RunPhase::Standalone).unwrap();
        for v in step.ensemble.members() {
            prop_assert!(c.max_violation(&v) <= 1e-8 * (1.0 + width), "violation {}", c.max_violation(&v));
        }
        prop_assert_eq!(step.resolved, step.violations.iter().filter(|v| !v.is_empty()).count());
    }

    #[test]
    fn inactive_constraints_change_nothing(seed in any::<u64>(), d in 1usize..6, k in 1usize..4, n in 2usize..7) {
        let inst = instance(seed, d, k, n);
        let stats = compute_stats(&inst.ensemble);
        let c = box_around_mean(&inst.ensemble, 1e6);
        let free = analysis_update(&inst.ensemble, &stats, &inst.observation, &inst.perturbed).unwrap();
        let step = constrained_analysis(&inst.ensemble, &stats, &inst.observation, &inst.perturbed, &c, UpdateVariant::Gain, &options(ConstrainedVariant::Original), RunPhase::Standalone).unwrap();
        prop_assert_eq!(step.resolved, 0);
        prop_assert_eq!(step.ensemble.as_matrix(), free.as_matrix());
    }

    #[test]
    fn covariance_is_symmetric_psd_and_shift_invariant(seed in any::<u64>(), d in 1usize..7, n in 2usize..9, shift in -1e3f64..1e3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = randn(&mut rng, d, n);
        let s = compute_stats(&Ensemble::from_matrix(x.clone()).unwrap());
        let t = compute_stats(&Ensemble::from_matrix(x.add_scalar(shift)).unwrap());
        prop_assert!((&s.covariance - s.covariance.transpose()).amax() <= 1e-14);
        let min_eig = s.covariance.clone().symmetric_eigen().eigenvalues.min();
        prop_assert!(min_eig >= -1e-12, "min eigenvalue {}", min_eig);
        prop_assert!((&s.covariance - &t.covariance).amax() <= 1e-9 * (1.0 + shift.abs()));
        prop_assert!((&t.mean - &s.mean).add_scalar(-shift).amax() <= 1e-9 * (1.0 + shift.abs()));
    }

    #[test]
    fn qp_answer_is_feasible_and_beats_a_known_feasible_point(seed in any::<u64>(), n in 1usize..7, mi in 0usize..6, me in 0usize..3) {
        let me = me.min(n - 1);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = randn(&mut rng, n, n);
        let p = &m * m.transpose() + DMatrix::identity(n, n) * 0.05;
        let p = (&p + p.transpose()) * 0.5;
        let q = randn(&mut rng, n, 1).column(0).into_owned() * 3.0;
        let x0 = randn(&mut rng, n, 1).column(0).into_owned();
        let a_in = randn(&mut rng, mi, n);
        let b_in = &a_in * &x0 + DVector::from_fn(mi, |_, _| rng.random_range(0.0..0.5));
        let a_eq = randn(&mut rng, me, n);
        let b_eq = &a_eq * &x0;
        let qp = QuadraticProgram::new(p, q, a_eq.clone(), b_eq.clone(), a_in.clone(), b_in.clone()).unwrap();
        let s = solve(&qp, &QpOptions::default());
        prop_assert!(s.is_optimal());
        if me > 0 {
            prop_assert!((&a_eq * &s.x - &b_eq).amax() <= 1e-8);
        }
        if mi > 0 {
            prop_assert!((&a_in * &s.x - &b_in).max() <= 1e-8);
        }
        prop_assert!(qp.objective(&s.x) <= qp.objective(&x0) + 1e-9 * (1.0 + qp.objective(&x0).abs()));
    }

    #[test]
    fn noise_streams_are_addressed_by_purpose_step_and_member(seed in any::<u64>(), step in 0u64..1000, member in 0u64..1000) {
        let s = NoiseStreams::new(seed);
        let draw = |p, j, m| s.rng(p, j, m).next_u64();
        prop_assert_eq!(draw(Purpose::ObservationNoise, step, member), draw(Purpose::ObservationNoise, step, member));
        prop_assert_ne!(draw(Purpose::ObservationNoise, step, member), draw(Purpose::ObservationNoise, step, member + 1));
        prop_assert_ne!(draw(Purpose::ObservationNoise, step, member), draw(Purpose::ProcessNoise, step, member));
        prop_assert_ne!(draw(Purpose::ObservationNoise, step, member), draw(Purpose::ObservationNoise, step + 1, member));
    }
}
