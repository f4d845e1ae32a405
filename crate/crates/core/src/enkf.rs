//! Stochastic ensemble Kalman filter: prediction, perturbed observations and
//! the analysis step in gain form and in range-of-covariance (b-space) form.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use rayon::prelude::*;

use crate::ensemble::{compute_stats_with, Divisor, Ensemble, EnsembleStats};
use crate::error::{Error, Result, RunPhase};
use crate::linalg;
use crate::models::ModelError;
use crate::noise::{GaussianNoise, NoiseStreams, Purpose};

/// Linear observation `y = H v + eta`, `eta ~ N(0, Gamma)` with `Gamma` positive definite.
#[derive(Debug, Clone)]
pub struct Observation {
    h: DMatrix<f64>,
    noise: GaussianNoise,
    gamma_chol: Cholesky<f64, Dyn>,
}

impl Observation {
    pub fn new(h: DMatrix<f64>, gamma: DMatrix<f64>) -> Result<Self> {
        let k = h.nrows();
        if k == 0 || h.ncols() == 0 {
            return Err(Error::InvalidInput("observation operator is empty".into()));
        }
        linalg::check_square("observation noise covariance", &gamma, k)?;
        if h.iter().chain(gamma.iter()).any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("observation model".into()));
        }
        let noise = GaussianNoise::new("observation noise covariance", gamma)?;
        let gamma_chol = linalg::cholesky("observation noise covariance", noise.covariance())?;
        Ok(Observation { h, noise, gamma_chol })
    }

    pub fn h(&self) -> &DMatrix<f64> {
        &self.h
    }

    pub fn gamma(&self) -> &DMatrix<f64> {
        self.noise.covariance()
    }

    pub fn noise(&self) -> &GaussianNoise {
        &self.noise
    }

    pub fn obs_dim(&self) -> usize {
        self.h.nrows()
    }

    pub fn state_dim(&self) -> usize {
        self.h.ncols()
    }

    /// `Gamma^{-1} x`.
    pub fn gamma_solve(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        self.gamma_chol.solve(x)
    }

    pub fn gamma_solve_vec(&self, x: &DVector<f64>) -> DVector<f64> {
        self.gamma_chol.solve(x)
    }
}

/// Indexed family of state maps `Psi_j`.
pub trait Transition: Sync {
    /// Advance `v` from observation time `step` to `step + 1`.
    fn apply(&self, step: usize, v: &DVector<f64>) -> std::result::Result<DVector<f64>, ModelError>;
}

impl<F> Transition for F
where
    F: Fn(usize, &DVector<f64>) -> std::result::Result<DVector<f64>, ModelError> + Sync,
{
    fn apply(&self, step: usize, v: &DVector<f64>) -> std::result::Result<DVector<f64>, ModelError> {
        self(step, v)
    }
}

/// Dynamics, observation and noise model of the filter.
pub struct FilterModel<T> {
    pub transition: T,
    pub observation: Observation,
    /// Process noise `Sigma`.
    pub process: GaussianNoise,
    /// Whether observations are perturbed per member (`s = 1`).
    pub perturb: bool,
    pub divisor: Divisor,
}

impl<T: Transition> FilterModel<T> {
    pub fn new(transition: T, observation: Observation, process_cov: DMatrix<f64>, perturb: bool) -> Result<Self> {
        let d = observation.state_dim();
        linalg::check_square("process noise covariance", &process_cov, d)?;
        let process = GaussianNoise::new("process noise covariance", process_cov)?;
        Ok(FilterModel {
            transition,
            observation,
            process,
            perturb,
            divisor: Divisor::N,
        })
    }

    pub fn with_divisor(mut self, divisor: Divisor) -> Self {
        self.divisor = divisor;
        self
    }
}

/// Push every member through `Psi_step` and add process noise drawn from the
/// member's own substream.
pub fn predict<T: Transition>(
    ensemble: &Ensemble,
    model: &FilterModel<T>,
    step: usize,
    streams: &NoiseStreams,
) -> Result<(Ensemble, EnsembleStats)> {
    let d = ensemble.dim();
    if d != model.observation.state_dim() {
        return Err(Error::DimensionMismatch {
            what: "ensemble state",
            expected: model.observation.state_dim(),
            found: d,
        });
    }
    let phase = RunPhase::Step(step + 1);
    let out: Vec<Result<DVector<f64>>> = (0..ensemble.size())
        .into_par_iter()
        .map(|n| {
            let v = ensemble.member(n);
            let fwd_err = |source| Error::ForwardModel { phase, member: n, source };
            let mut next = model.transition.apply(step, &v).map_err(fwd_err)?;
            if next.len() != d {
                return Err(Error::DimensionMismatch {
                    what: "transition output",
                    expected: d,
                    found: next.len(),
                });
            }
            if !linalg::all_finite(&next) {
                return Err(fwd_err(ModelError::NonFinite { time: f64::NAN }));
            }
            if !model.process.is_zero() {
                let mut rng = streams.rng(Purpose::ProcessNoise, (step + 1) as u64, n as u64);
                next += model.process.sample(&mut rng);
            }
            Ok(next)
        })
        .collect();
    let members = out.into_iter().collect::<Result<Vec<_>>>()?;
    let predicted = Ensemble::new(members)?;
    let stats = compute_stats_with(&predicted, model.divisor);
    Ok((predicted, stats))
}

/// `y^(n) = y + s eta^(n)` with `eta^(n)` from the member's observation substream.
pub fn perturb_observations(
    y: &DVector<f64>,
    observation: &Observation,
    perturb: bool,
    members: usize,
    step: usize,
    streams: &NoiseStreams,
) -> Result<Vec<DVector<f64>>> {
    linalg::check_len("observation", y, observation.obs_dim())?;
    if !linalg::all_finite(y) {
        return Err(Error::NonFinite("observation".into()));
    }
    Ok((0..members)
        .map(|n| {
            if perturb {
                let mut rng = streams.rng(Purpose::ObservationNoise, step as u64, n as u64);
                y + observation.noise().sample(&mut rng)
            } else {
                y.clone()
            }
        })
        .collect())
}

/// `K = C H^T (H C H^T + Gamma)^{-1}`.
pub fn kalman_gain(stats: &EnsembleStats, observation: &Observation) -> Result<DMatrix<f64>> {
    check_stats(stats, observation)?;
    let h = observation.h();
    let hc = h * &stats.covariance;
    let mut s = &hc * h.transpose() + observation.gamma();
    linalg::symmetrize(&mut s);
    let chol = Cholesky::new(s.clone()).ok_or_else(|| {
        let eig = SymmetricEigen::new(s);
        let (lo, hi) = eig.eigenvalues.iter().fold((f64::INFINITY, 0.0_f64), |(a, b), &x| (a.min(x), b.max(x)));
        Error::Numerical(format!("innovation covariance is singular (eigenvalues in [{lo:e}, {hi:e}])"))
    })?;
    // K^T = S^{-1} H C since C is symmetric.
    Ok(chol.solve(&hc).transpose())
}

/// The same gain written as `C (H^T Gamma^{-1} H C + I)^{-1} H^T Gamma^{-1}`.
pub fn kalman_gain_information_form(stats: &EnsembleStats, observation: &Observation) -> Result<DMatrix<f64>> {
    check_stats(stats, observation)?;
    let d = stats.dim();
    let h = observation.h();
    let ht_gi = observation.gamma_solve(h).transpose();
    let m = &ht_gi * h * &stats.covariance + DMatrix::identity(d, d);
    let x = m
        .lu()
        .solve(&ht_gi)
        .ok_or_else(|| Error::Numerical("information-form gain system is singular".into()))?;
    Ok(&stats.covariance * x)
}

fn check_stats(stats: &EnsembleStats, observation: &Observation) -> Result<()> {
    if stats.dim() != observation.state_dim() {
        return Err(Error::DimensionMismatch {
            what: "ensemble statistics",
            expected: observation.state_dim(),
            found: stats.dim(),
        });
    }
    Ok(())
}

fn check_perturbed(perturbed: &[DVector<f64>], n: usize, k: usize) -> Result<()> {
    if perturbed.len() != n {
        return Err(Error::DimensionMismatch {
            what: "perturbed observations",
            expected: n,
            found: perturbed.len(),
        });
    }
    for y in perturbed {
        linalg::check_len("perturbed observation", y, k)?;
    }
    Ok(())
}

/// `v^(n) = v_hat^(n) + K (y^(n) - H v_hat^(n))` for every member.
pub fn analysis_update(
    predicted: &Ensemble,
    stats: &EnsembleStats,
    observation: &Observation,
    perturbed: &[DVector<f64>],
) -> Result<Ensemble> {
    check_perturbed(perturbed, predicted.size(), observation.obs_dim())?;
    let k = kalman_gain(stats, observation)?;
    let h = observation.h();
    let members = predicted
        .members()
        .zip(perturbed)
        .map(|(v, y)| {
            let innov = y - h * &v;
            v + &k * innov
        })
        .collect();
    Ensemble::new(members)
}

/// The N-dimensional least-squares system of the b-space update, shared by all members.
pub struct RangeSystem {
    /// Anomaly map `B` (d x N).
    pub b: DMatrix<f64>,
    /// `H B` (k x N).
    pub hb: DMatrix<f64>,
    /// `P = B^T H^T Gamma^{-1} H B + I / D`.
    pub p: DMatrix<f64>,
    /// `B^T H^T Gamma^{-1}` (N x k).
    pub rhs_map: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
}

impl RangeSystem {
    pub fn new(stats: &EnsembleStats, observation: &Observation) -> Result<Self> {
        check_stats(stats, observation)?;
        let n = stats.size();
        let b = stats.anomaly_map();
        let hb = observation.h() * &b;
        let rhs_map = observation.gamma_solve(&hb).transpose();
        let mut p = &rhs_map * &hb + DMatrix::identity(n, n) / stats.divisor_value();
        linalg::symmetrize(&mut p);
        let chol = linalg::cholesky("b-space Hessian", &p)?;
        Ok(RangeSystem { b, hb, p, rhs_map, chol })
    }

    /// Linear term `q = -B^T H^T Gamma^{-1} (y^(n) - H v_hat)` of the member's objective.
    pub fn linear_term(&self, innovation: &DVector<f64>) -> DVector<f64> {
        -(&self.rhs_map * innovation)
    }

    /// Unconstrained minimiser `b = P^{-1} B^T H^T Gamma^{-1} innovation`.
    pub fn solve(&self, innovation: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(&(&self.rhs_map * innovation))
    }
}

/// Minimise `1/2 |y^(n) - H v_hat - H B b|^2_Gamma + 1/(2D) |b|^2` per member and
/// return `v_hat + B b`.
pub fn range_update(
    predicted: &Ensemble,
    stats: &EnsembleStats,
    observation: &Observation,
    perturbed: &[DVector<f64>],
) -> Result<Ensemble> {
    check_perturbed(perturbed, predicted.size(), observation.obs_dim())?;
    let sys = RangeSystem::new(stats, observation)?;
    let h = observation.h();
    let members = predicted
        .members()
        .zip(perturbed)
        .map(|(v, y)| {
            let innov = y - h * &v;
            let b = sys.solve(&innov);
            v + &sys.b * b
        })
        .collect();
    Ensemble::new(members)
}

/// `(C + eps I)^{-1}` through the symmetric eigendecomposition.
pub fn regularized_precision(covariance: &DMatrix<f64>, eps: f64) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(covariance.clone());
    let inv = eig.eigenvalues.map(|l| 1.0 / (l.max(0.0) + eps));
    let mut out = &eig.eigenvectors * DMatrix::from_diagonal(&inv) * eig.eigenvectors.transpose();
    linalg::symmetrize(&mut out);
    out
}

/// Minimiser of `1/2 |y - H v|^2_Gamma + 1/2 |v - v_hat|^2_{C + eps I}` from its
/// normal equations. A reference formulation; the gain and range updates are
/// its `eps -> 0` limit.
pub fn regularized_update(
    v_hat: &DVector<f64>,
    stats: &EnsembleStats,
    observation: &Observation,
    y: &DVector<f64>,
    eps: f64,
) -> Result<DVector<f64>> {
    check_stats(stats, observation)?;
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::InvalidInput(format!("regularisation must be positive, got {eps}")));
    }
    let h = observation.h();
    let ht_gi = observation.gamma_solve(h).transpose();
    let mut a = &ht_gi * h + regularized_precision(&stats.covariance, eps);
    linalg::symmetrize(&mut a);
    let rhs = &ht_gi * (y - h * v_hat);
    let w = linalg::cholesky("regularised normal equations", &a)?.solve(&rhs);
    Ok(v_hat + w)
}

/// Which unconstrained analysis formula a run uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum UpdateVariant {
    #[default]
    Gain,
    Range,
}

pub fn apply_update(
    variant: UpdateVariant,
    predicted: &Ensemble,
    stats: &EnsembleStats,
    observation: &Observation,
    perturbed: &[DVector<f64>],
) -> Result<Ensemble> {
    match variant {
        UpdateVariant::Gain => analysis_update(predicted, stats, observation, perturbed),
        UpdateVariant::Range => range_update(predicted, stats, observation, perturbed),
    }
}

/// Everything a filter run produced. Index 0 of `analysis` is the initial ensemble;
/// `predicted[j]` and `perturbed[j]` belong to the step producing `analysis[j + 1]`.
#[derive(Debug, Clone)]
pub struct FilterRun {
    pub predicted: Vec<Ensemble>,
    pub analysis: Vec<Ensemble>,
    pub perturbed: Vec<Vec<DVector<f64>>>,
    pub seed: u64,
}

impl FilterRun {
    pub fn steps(&self) -> usize {
        self.predicted.len()
    }

    pub fn final_ensemble(&self) -> &Ensemble {
        self.analysis.last().expect("a run always holds the initial ensemble")
    }
}

/// Predict-then-update over the data sequence `y_1, ..., y_J`.
pub fn filter_run<T: Transition>(
    model: &FilterModel<T>,
    initial: &Ensemble,
    data: &[DVector<f64>],
    streams: &NoiseStreams,
    variant: UpdateVariant,
) -> Result<FilterRun> {
    let mut run = FilterRun {
        predicted: Vec::with_capacity(data.len()),
        analysis: vec![initial.clone()],
        perturbed: Vec::with_capacity(data.len()),
        seed: streams.seed(),
    };
    for (j, y) in data.iter().enumerate() {
        let current = run.final_ensemble();
        let (predicted, stats) = predict(current, model, j, streams)?;
        let perturbed = perturb_observations(y, &model.observation, model.perturb, predicted.size(), j + 1, streams)?;
        let updated = apply_update(variant, &predicted, &stats, &model.observation, &perturbed)?;
        run.predicted.push(predicted);
        run.perturbed.push(perturbed);
        run.analysis.push(updated);
    }
    Ok(run)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::compute_stats;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn dv(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    fn identity_map(_: usize, v: &DVector<f64>) -> std::result::Result<DVector<f64>, ModelError> {
        Ok(v.clone())
    }

    fn scalar_obs(gamma: f64) -> Observation {
        Observation::new(DMatrix::from_element(1, 1, 1.0), DMatrix::from_element(1, 1, gamma)).unwrap()
    }

    fn randn(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| rng.sample::<f64, _>(StandardNormal))
    }

    fn random_setup(rng: &mut ChaCha8Rng, d: usize, k: usize, n: usize) -> (Ensemble, EnsembleStats, Observation) {
        let ens = Ensemble::from_matrix(randn(rng, d, n)).unwrap();
        let stats = compute_stats(&ens);
        let a = randn(rng, k, k);
        let gamma = &a * a.transpose() + DMatrix::identity(k, k) * 0.5;
        let obs = Observation::new(randn(rng, k, d), gamma).unwrap();
        (ens, stats, obs)
    }

    #[test]
    fn predict_identity_without_noise() {
        let ens = Ensemble::new(vec![dv(&[1.0, 2.0]), dv(&[3.0, -1.0])]).unwrap();
        let obs = Observation::new(DMatrix::from_row_slice(1, 2, &[1.0, 0.0]), DMatrix::identity(1, 1)).unwrap();
        let model = FilterModel::new(identity_map, obs.clone(), DMatrix::zeros(2, 2), false).unwrap();
        let (p, _) = predict(&ens, &model, 0, &NoiseStreams::new(1)).unwrap();
        assert_eq!(p, ens);
        let double = |_: usize, v: &DVector<f64>| Ok(v * 2.0);
        let model = FilterModel::new(double, obs, DMatrix::zeros(2, 2), false).unwrap();
        let (p, _) = predict(&ens, &model, 0, &NoiseStreams::new(1)).unwrap();
        assert_eq!(p.member(0), dv(&[2.0, 4.0]));
    }

    #[test]
    fn predict_noise_reproducible_from_stream() {
        let ens = Ensemble::new(vec![dv(&[1.0, 2.0]), dv(&[3.0, -1.0]), dv(&[0.0, 0.5])]).unwrap();
        let obs = Observation::new(DMatrix::from_row_slice(1, 2, &[1.0, 0.0]), DMatrix::identity(1, 1)).unwrap();
        let model = FilterModel::new(identity_map, obs, DMatrix::identity(2, 2), false).unwrap();
        let streams = NoiseStreams::new(42);
        let (p, _) = predict(&ens, &model, 4, &streams).unwrap();
        for n in 0..3 {
            let mut rng = streams.rng(Purpose::ProcessNoise, 5, n as u64);
            let xi = dv(&[rng.sample(StandardNormal), rng.sample(StandardNormal)]);
            assert!((p.member(n) - ens.member(n) - xi).amax() < 1e-15);
        }
    }

    #[test]
    fn predict_reports_failing_member() {
        let ens = Ensemble::new(vec![dv(&[1.0]), dv(&[-1.0])]).unwrap();
        let bad = |_: usize, v: &DVector<f64>| {
            if v[0] < 0.0 {
                Err(ModelError::Unphysical("negative".into()))
            } else {
                Ok(v.clone())
            }
        };
        let model = FilterModel::new(bad, scalar_obs(1.0), DMatrix::zeros(1, 1), false).unwrap();
        match predict(&ens, &model, 2, &NoiseStreams::new(0)) {
            Err(Error::ForwardModel { phase, member, .. }) => {
                assert_eq!(phase, RunPhase::Step(3));
                assert_eq!(member, 1);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn perturbations() {
        let obs = scalar_obs(4.0);
        let y = dv(&[1.5]);
        let streams = NoiseStreams::new(9);
        let same = perturb_observations(&y, &obs, false, 5, 1, &streams).unwrap();
        assert!(same.iter().all(|v| *v == y));
        let a = perturb_observations(&y, &obs, true, 5, 1, &streams).unwrap();
        let b = perturb_observations(&y, &obs, true, 5, 1, &streams).unwrap();
        assert_eq!(a, b);
        let mut rng = streams.rng(Purpose::ObservationNoise, 1, 3);
        let eta: f64 = rng.sample(StandardNormal);
        assert!((a[3][0] - (1.5 + 2.0 * eta)).abs() < 1e-15);
    }

    #[test]
    fn perturbation_mean_is_unbiased() {
        let obs = Observation::new(DMatrix::identity(2, 2), DMatrix::from_diagonal(&dv(&[1.0, 9.0]))).unwrap();
        let n = 100_000;
        let p = perturb_observations(&DVector::zeros(2), &obs, true, n, 0, &NoiseStreams::new(3)).unwrap();
        let mean = p.iter().fold(DVector::zeros(2), |a, b| a + b) / n as f64;
        assert!(mean[0].abs() < 3.0 / (n as f64).sqrt());
        assert!(mean[1].abs() < 9.0 / (n as f64).sqrt());
    }

    #[test]
    fn gain_special_cases() {
        let zero = compute_stats(&Ensemble::new(vec![dv(&[1.0, 2.0]); 3]).unwrap());
        let obs = Observation::new(DMatrix::from_row_slice(1, 2, &[1.0, 1.0]), DMatrix::identity(1, 1)).unwrap();
        assert_eq!(kalman_gain(&zero, &obs).unwrap().amax(), 0.0);
        // Members 0 and 2 give C = 1.
        let unit = compute_stats(&Ensemble::new(vec![dv(&[0.0]), dv(&[2.0])]).unwrap());
        let k = kalman_gain(&unit, &scalar_obs(1.0)).unwrap();
        assert!((k[(0, 0)] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn gain_forms_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..100 {
            let (_, stats, obs) = random_setup(&mut rng, 5, 3, 4);
            let k1 = kalman_gain(&stats, &obs).unwrap();
            let k2 = kalman_gain_information_form(&stats, &obs).unwrap();
            assert!((&k1 - &k2).amax() <= 1e-10 * k1.amax().max(1.0));
        }
    }

    #[test]
    fn analysis_special_cases() {
        let ens = Ensemble::new(vec![dv(&[1.0]); 3]).unwrap();
        let stats = compute_stats(&ens);
        let y = vec![dv(&[5.0]); 3];
        assert_eq!(analysis_update(&ens, &stats, &scalar_obs(1.0), &y).unwrap(), ens);

        let ens = Ensemble::new(vec![dv(&[0.0]), dv(&[2.0])]).unwrap();
        let stats = compute_stats(&ens);
        let y = vec![dv(&[4.0]); 2];
        let out = analysis_update(&ens, &stats, &scalar_obs(1.0), &y).unwrap();
        assert!((out.member(0)[0] - 2.0).abs() < 1e-15);
        assert!((out.member(1)[0] - 3.0).abs() < 1e-15);
    }

    #[test]
    fn tiny_noise_interpolates_data() {
        // C = I from anomalies +-1 along each axis (N = 4, divisor N: e e^T / 4 * 2 per axis).
        let s = 2f64.sqrt();
        let ens = Ensemble::new(vec![dv(&[s, 0.0]), dv(&[-s, 0.0]), dv(&[0.0, s]), dv(&[0.0, -s])]).unwrap();
        let stats = compute_stats(&ens);
        assert!((&stats.covariance - DMatrix::<f64>::identity(2, 2)).amax() < 1e-14);
        let obs = Observation::new(DMatrix::identity(2, 2), DMatrix::identity(2, 2) * 1e-12).unwrap();
        let y = dv(&[3.0, -7.0]);
        let out = analysis_update(&ens, &stats, &obs, &vec![y.clone(); 4]).unwrap();
        for v in out.members() {
            assert!((v - &y).amax() < 1e-6);
        }
    }

    #[test]
    fn range_matches_gain() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let (ens, stats, obs) = random_setup(&mut rng, 4, 2, 3);
            let y: Vec<_> = (0..3).map(|_| randn(&mut rng, 2, 1).column(0).into_owned()).collect();
            let a = analysis_update(&ens, &stats, &obs, &y).unwrap();
            let b = range_update(&ens, &stats, &obs, &y).unwrap();
            let scale = a.as_matrix().amax().max(1.0);
            assert!((a.as_matrix() - b.as_matrix()).amax() <= 1e-8 * scale);
        }
    }

    #[test]
    fn range_update_scalar_calculus() {
        // N = 2, anomalies +-1, H = 1, Gamma = 1: with s = b1 - b2 the objective is
        // 1/2 (r - s/2)^2 + s^2/8 at b1 = -b2, minimised at s = r, so v = v_hat + r/2.
        let ens = Ensemble::new(vec![dv(&[1.0]), dv(&[-1.0])]).unwrap();
        let stats = compute_stats(&ens);
        let y = vec![dv(&[4.0]); 2];
        let out = range_update(&ens, &stats, &scalar_obs(1.0), &y).unwrap();
        assert!((out.member(0)[0] - (1.0 + 3.0 / 2.0)).abs() < 1e-14);
        assert!((out.member(1)[0] - (-1.0 + 5.0 / 2.0)).abs() < 1e-14);
        let collapsed = Ensemble::new(vec![dv(&[1.0]); 2]).unwrap();
        let cs = compute_stats(&collapsed);
        assert_eq!(range_update(&collapsed, &cs, &scalar_obs(1.0), &y).unwrap(), collapsed);
    }

    #[test]
    fn regularized_update_cases() {
        // C = 0, H = Gamma = 1: v = (v_hat + eps y) / (1 + eps).
        let ens = Ensemble::new(vec![dv(&[2.0]); 2]).unwrap();
        let stats = compute_stats(&ens);
        let v = regularized_update(&dv(&[2.0]), &stats, &scalar_obs(1.0), &dv(&[5.0]), 0.25).unwrap();
        assert!((v[0] - (2.0 + 0.25 * 5.0) / 1.25).abs() < 1e-14);

        // Large eps with square invertible H: least-squares fit H v = y dominates.
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (ens, stats, _) = random_setup(&mut rng, 3, 3, 4);
        let h = randn(&mut rng, 3, 3) + DMatrix::identity(3, 3) * 3.0;
        let obs = Observation::new(h.clone(), DMatrix::identity(3, 3)).unwrap();
        let y = dv(&[1.0, -2.0, 0.5]);
        let v = regularized_update(&ens.member(0), &stats, &obs, &y, 1e8).unwrap();
        let ls = h.lu().solve(&y).unwrap();
        assert!((v - &ls).amax() < 1e-5 * ls.amax());
    }

    #[test]
    fn regularized_limit_is_first_order() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..20 {
            let (ens, stats, obs) = random_setup(&mut rng, 5, 2, 3);
            let y = vec![randn(&mut rng, 2, 1).column(0).into_owned(); 3];
            let target = analysis_update(&ens, &stats, &obs, &y).unwrap().member(0);
            let mut errs = Vec::new();
            for eps in [1e-2, 1e-4, 1e-6, 1e-8] {
                let v = regularized_update(&ens.member(0), &stats, &obs, &y[0], eps).unwrap();
                errs.push((v - &target).norm());
            }
            assert!(errs.windows(2).all(|w| w[1] < w[0]), "{errs:?}");
            assert!(errs[3] <= 1e-5 * target.norm().max(1.0));
            let e1 = (regularized_update(&ens.member(0), &stats, &obs, &y[0], 1e-4).unwrap() - &target).norm();
            let e2 = (regularized_update(&ens.member(0), &stats, &obs, &y[0], 1e-5).unwrap() - &target).norm();
            assert!((5.0..=20.0).contains(&(e1 / e2)), "ratio {}", e1 / e2);
        }
    }

    #[test]
    fn increments_lie_in_covariance_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..20 {
            let (ens, stats, obs) = random_setup(&mut rng, 6, 3, 3);
            let y: Vec<_> = (0..3).map(|_| randn(&mut rng, 3, 1).column(0).into_owned()).collect();
            let out = analysis_update(&ens, &stats, &obs, &y).unwrap();
            let basis = stats.range_basis();
            for n in 0..3 {
                let inc = out.member(n) - ens.member(n);
                assert!(basis.projection_residual(&inc) <= 1e-9 * inc.norm().max(1.0));
            }
        }
    }

    #[test]
    fn scalar_kalman_step() {
        // One step, Psi = identity, Sigma = 0, s = 0, members {0, 2}: C = 1, K = 1/2.
        let ens = Ensemble::new(vec![dv(&[0.0]), dv(&[2.0])]).unwrap();
        let model = FilterModel::new(identity_map, scalar_obs(1.0), DMatrix::zeros(1, 1), false).unwrap();
        let run = filter_run(&model, &ens, &[dv(&[4.0])], &NoiseStreams::new(0), UpdateVariant::Gain).unwrap();
        assert_eq!(run.steps(), 1);
        assert!((run.final_ensemble().member(0)[0] - 2.0).abs() < 1e-14);
        assert!((run.final_ensemble().member(1)[0] - 3.0).abs() < 1e-14);
        let empty = filter_run(&model, &ens, &[], &NoiseStreams::new(0), UpdateVariant::Gain).unwrap();
        assert_eq!(empty.analysis.len(), 1);
        assert_eq!(empty.final_ensemble(), &ens);
    }

    #[test]
    fn gain_and_range_runs_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let a = randn(&mut rng, 3, 3) * 0.3 + DMatrix::identity(3, 3) * 0.8;
        let lin = move |_: usize, v: &DVector<f64>| Ok(&a * v);
        let obs = Observation::new(DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 0.0, 0.0, 1.0, 1.0]), DMatrix::identity(2, 2) * 0.3).unwrap();
        let model = FilterModel::new(lin, obs, DMatrix::identity(3, 3) * 0.05, true).unwrap();
        let init = Ensemble::from_matrix(randn(&mut rng, 3, 5)).unwrap();
        let data: Vec<_> = (0..5).map(|_| randn(&mut rng, 2, 1).column(0).into_owned()).collect();
        let streams = NoiseStreams::new(4);
        let g = filter_run(&model, &init, &data, &streams, UpdateVariant::Gain).unwrap();
        let r = filter_run(&model, &init, &data, &streams, UpdateVariant::Range).unwrap();
        for (x, y) in g.analysis.iter().zip(&r.analysis) {
            assert!((x.as_matrix() - y.as_matrix()).amax() <= 1e-7);
        }
    }
}
