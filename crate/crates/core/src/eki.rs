//! Ensemble Kalman inversion: the EnKF applied to the lifted state
//! `v = (u, w)` with `w = G(u)` and observation operator `H = [0, I]`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::enkf::{self, Observation};
use crate::ensemble::{Divisor, Ensemble};
use crate::error::{Error, Result, RunPhase};
use crate::linalg;
use crate::models::ModelError;
use crate::noise::{GaussianNoise, NoiseStreams};

/// Forward map `u -> G(u)` from parameters to predicted data.
pub trait ForwardMap: Sync {
    fn output_dim(&self) -> usize;
    fn evaluate(&self, u: &DVector<f64>) -> std::result::Result<DVector<f64>, ModelError>;
}

/// A closure with a declared output dimension.
pub struct FnForward<F> {
    pub output_dim: usize,
    pub f: F,
}

impl<F> ForwardMap for FnForward<F>
where
    F: Fn(&DVector<f64>) -> std::result::Result<DVector<f64>, ModelError> + Sync,
{
    fn output_dim(&self) -> usize {
        self.output_dim
    }

    fn evaluate(&self, u: &DVector<f64>) -> std::result::Result<DVector<f64>, ModelError> {
        (self.f)(u)
    }
}

/// Data `y = G(u) + eta`, `eta ~ N(0, Gamma)`.
pub struct InverseProblem<G> {
    pub forward: G,
    pub data: DVector<f64>,
    noise: GaussianNoise,
    /// Whether data are perturbed per member (`s = 1`).
    pub perturb: bool,
    pub divisor: Divisor,
}

impl<G: ForwardMap> InverseProblem<G> {
    pub fn new(forward: G, data: DVector<f64>, gamma: DMatrix<f64>, perturb: bool) -> Result<Self> {
        let k = forward.output_dim();
        linalg::check_len("data", &data, k)?;
        linalg::check_square("data noise covariance", &gamma, k)?;
        if !linalg::all_finite(&data) {
            return Err(Error::NonFinite("data".into()));
        }
        linalg::cholesky("data noise covariance", &gamma)?;
        let noise = GaussianNoise::new("data noise covariance", gamma)?;
        Ok(InverseProblem {
            forward,
            data,
            noise,
            perturb,
            divisor: Divisor::N,
        })
    }

    pub fn with_divisor(mut self, divisor: Divisor) -> Self {
        self.divisor = divisor;
        self
    }

    pub fn data_dim(&self) -> usize {
        self.data.len()
    }

    pub fn gamma(&self) -> &DMatrix<f64> {
        self.noise.covariance()
    }

    /// The observation `H = [0, I]` on lifted vectors of parameter dimension `p`.
    pub fn lifted_observation(&self, p: usize) -> Result<Observation> {
        let k = self.data_dim();
        let mut h = DMatrix::zeros(k, p + k);
        h.view_mut((0, p), (k, k)).fill_with_identity();
        Observation::new(h, self.gamma().clone())
    }

    /// Per-member data copies for one iteration.
    pub fn perturbed_data(&self, members: usize, iteration: usize, streams: &NoiseStreams) -> Result<Vec<DVector<f64>>> {
        let obs = Observation::new(DMatrix::identity(self.data_dim(), self.data_dim()), self.gamma().clone())?;
        enkf::perturb_observations(&self.data, &obs, self.perturb, members, iteration, streams)
    }
}

/// `G(u^(n))` for every member, as the columns of a k x N matrix. Members are
/// evaluated in parallel; the first failing member in index order is reported.
pub fn evaluate_ensemble<G: ForwardMap>(forward: &G, u: &Ensemble, iteration: usize) -> Result<DMatrix<f64>> {
    let k = forward.output_dim();
    let phase = RunPhase::Iteration(iteration);
    let outs: Vec<Result<DVector<f64>>> = (0..u.size())
        .into_par_iter()
        .map(|n| {
            let err = |source| Error::ForwardModel { phase, member: n, source };
            let w = forward.evaluate(&u.member(n)).map_err(err)?;
            if w.len() != k {
                return Err(Error::DimensionMismatch {
                    what: "forward model output",
                    expected: k,
                    found: w.len(),
                });
            }
            if !linalg::all_finite(&w) {
                return Err(err(ModelError::NonFinite { time: f64::NAN }));
            }
            Ok(w)
        })
        .collect();
    let mut w = DMatrix::zeros(k, u.size());
    for (n, r) in outs.into_iter().enumerate() {
        w.set_column(n, &r?);
    }
    Ok(w)
}

/// Empirical parameter/data covariance blocks.
#[derive(Debug, Clone)]
pub struct BlockStats {
    pub u_mean: DVector<f64>,
    pub w_mean: DVector<f64>,
    pub c_uu: DMatrix<f64>,
    pub c_uw: DMatrix<f64>,
    pub c_ww: DMatrix<f64>,
    pub u_anomalies: DMatrix<f64>,
    pub w_anomalies: DMatrix<f64>,
}

pub fn block_stats(u: &Ensemble, w: &DMatrix<f64>) -> Result<BlockStats> {
    block_stats_with(u, w, Divisor::N)
}

pub fn block_stats_with(u: &Ensemble, w: &DMatrix<f64>, divisor: Divisor) -> Result<BlockStats> {
    let n = u.size();
    if w.ncols() != n {
        return Err(Error::DimensionMismatch {
            what: "forward evaluations",
            expected: n,
            found: w.ncols(),
        });
    }
    if let Some(j) = (0..n).find(|&j| w.column(j).iter().any(|x| !x.is_finite())) {
        return Err(Error::ForwardModel {
            phase: RunPhase::Standalone,
            member: j,
            source: ModelError::NonFinite { time: f64::NAN },
        });
    }
    let mean = |m: &DMatrix<f64>| {
        let mut s = DVector::zeros(m.nrows());
        for c in m.column_iter() {
            s += c;
        }
        s / n as f64
    };
    let anomalies = |m: &DMatrix<f64>, mu: &DVector<f64>| {
        let mut a = m.clone();
        for mut c in a.column_iter_mut() {
            c -= mu;
        }
        a
    };
    let u_mean = mean(u.as_matrix());
    let w_mean = mean(w);
    let ua = anomalies(u.as_matrix(), &u_mean);
    let wa = anomalies(w, &w_mean);
    let dv = divisor.value(n);
    let mut c_uu = &ua * ua.transpose() / dv;
    let mut c_ww = &wa * wa.transpose() / dv;
    linalg::symmetrize(&mut c_uu);
    linalg::symmetrize(&mut c_ww);
    let c_uw = &ua * wa.transpose() / dv;
    Ok(BlockStats {
        u_mean,
        w_mean,
        c_uu,
        c_uw,
        c_ww,
        u_anomalies: ua,
        w_anomalies: wa,
    })
}

/// Data-space innovations `(C_ww + Gamma)^{-1} (y^(n) - G(u^(n)))` as columns.
fn weighted_innovations(stats: &BlockStats, gamma: &DMatrix<f64>, w: &DMatrix<f64>, perturbed: &[DVector<f64>]) -> Result<DMatrix<f64>> {
    let n = w.ncols();
    if perturbed.len() != n {
        return Err(Error::DimensionMismatch {
            what: "perturbed data",
            expected: n,
            found: perturbed.len(),
        });
    }
    let mut s = &stats.c_ww + gamma;
    linalg::symmetrize(&mut s);
    let chol = linalg::cholesky("C_ww + Gamma", &s)?;
    let mut innov = DMatrix::zeros(w.nrows(), n);
    for (j, y) in perturbed.iter().enumerate() {
        linalg::check_len("perturbed data", y, w.nrows())?;
        innov.set_column(j, &(y - w.column(j)));
    }
    Ok(chol.solve(&innov))
}

/// `u^(n) + C_uw (C_ww + Gamma)^{-1} (y^(n) - G(u^(n)))`.
pub fn eki_update(
    u: &Ensemble,
    w: &DMatrix<f64>,
    stats: &BlockStats,
    gamma: &DMatrix<f64>,
    perturbed: &[DVector<f64>],
) -> Result<Ensemble> {
    let x = weighted_innovations(stats, gamma, w, perturbed)?;
    Ensemble::from_matrix(u.as_matrix() + &stats.c_uw * x)
}

/// `G(u^(n)) + C_ww (C_ww + Gamma)^{-1} (y^(n) - G(u^(n)))`.
pub fn w_update(w: &DMatrix<f64>, stats: &BlockStats, gamma: &DMatrix<f64>, perturbed: &[DVector<f64>]) -> Result<DMatrix<f64>> {
    let x = weighted_innovations(stats, gamma, w, perturbed)?;
    Ok(w + &stats.c_ww * x)
}

/// Stack `(u, w)` column by column into a lifted ensemble.
pub fn lift(u: &Ensemble, w: &DMatrix<f64>) -> Result<Ensemble> {
    let p = u.dim();
    let k = w.nrows();
    let mut v = DMatrix::zeros(p + k, u.size());
    v.rows_mut(0, p).copy_from(u.as_matrix());
    v.rows_mut(p, k).copy_from(w);
    Ensemble::from_matrix(v)
}

/// Split a lifted ensemble back into its parameter part and data part.
pub fn split(v: &Ensemble, p: usize) -> Result<(Ensemble, DMatrix<f64>)> {
    let k = v.dim() - p;
    let u = Ensemble::from_matrix(v.as_matrix().rows(0, p).into_owned())?;
    Ok((u, v.as_matrix().rows(p, k).into_owned()))
}

/// Parameter ensembles `ensembles[0..=J]`, forward evaluations of
/// `ensembles[j]` for `j < J`, and the updated data parts.
#[derive(Debug, Clone)]
pub struct EkiHistory {
    pub ensembles: Vec<Ensemble>,
    pub evaluations: Vec<DMatrix<f64>>,
    pub updated_w: Vec<DMatrix<f64>>,
}

impl EkiHistory {
    pub fn new(initial: Ensemble) -> Self {
        EkiHistory {
            ensembles: vec![initial],
            evaluations: Vec::new(),
            updated_w: Vec::new(),
        }
    }

    pub fn iterations(&self) -> usize {
        self.ensembles.len() - 1
    }

    pub fn final_ensemble(&self) -> &Ensemble {
        self.ensembles.last().expect("history holds the initial ensemble")
    }
}

/// `iterations` rounds of evaluate-then-update.
pub fn eki_run<G: ForwardMap>(
    problem: &InverseProblem<G>,
    initial: &Ensemble,
    iterations: usize,
    streams: &NoiseStreams,
) -> Result<EkiHistory> {
    let mut hist = EkiHistory::new(initial.clone());
    for j in 0..iterations {
        let u = hist.final_ensemble();
        let w = evaluate_ensemble(&problem.forward, u, j)?;
        let stats = block_stats_with(u, &w, problem.divisor)?;
        let y = problem.perturbed_data(u.size(), j, streams)?;
        let next = eki_update(u, &w, &stats, problem.gamma(), &y)?;
        let w_next = w_update(&w, &stats, problem.gamma(), &y)?;
        hist.evaluations.push(w);
        hist.updated_w.push(w_next);
        hist.ensembles.push(next);
    }
    Ok(hist)
}

/// `|y - G(mean)|_Gamma`.
pub fn data_misfit<G: ForwardMap>(problem: &InverseProblem<G>, u: &DVector<f64>) -> Result<f64> {
    let w = problem
        .forward
        .evaluate(u)
        .map_err(|source| Error::ForwardModel { phase: RunPhase::Standalone, member: 0, source })?;
    let r = &problem.data - w;
    let chol = linalg::cholesky("data noise covariance", problem.gamma())?;
    Ok(r.dot(&chol.solve(&r)).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::enkf::analysis_update;
    use crate::ensemble::compute_stats;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn dv(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    fn randn(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
        DMatrix::from_fn(r, c, |_, _| rng.sample::<f64, _>(StandardNormal))
    }

    fn linear(a: DMatrix<f64>) -> FnForward<impl Fn(&DVector<f64>) -> std::result::Result<DVector<f64>, ModelError> + Sync> {
        FnForward {
            output_dim: a.nrows(),
            f: move |u: &DVector<f64>| Ok(&a * u),
        }
    }

    #[test]
    fn block_stats_cases() {
        let u = Ensemble::new(vec![dv(&[1.0, 2.0]); 3]).unwrap();
        let w = DMatrix::from_element(1, 3, 4.0);
        let s = block_stats(&u, &w).unwrap();
        assert_eq!(s.c_uu.amax() + s.c_uw.amax() + s.c_ww.amax(), 0.0);

        let delta = dv(&[1.0, -2.0]);
        let omega = dv(&[3.0]);
        let u = Ensemble::new(vec![&delta + dv(&[5.0, 5.0]), -&delta + dv(&[5.0, 5.0])]).unwrap();
        let w = DMatrix::from_columns(&[&omega + dv(&[1.0]), -&omega + dv(&[1.0])]);
        let s = block_stats(&u, &w).unwrap();
        assert!((s.c_uw - &delta * omega.transpose()).amax() < 1e-14);

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = randn(&mut rng, 3, 4);
        let u = Ensemble::from_matrix(randn(&mut rng, 4, 6)).unwrap();
        let w = &a * u.as_matrix();
        let s = block_stats(&u, &w).unwrap();
        assert!((&s.c_uw - &s.c_uu * a.transpose()).amax() < 1e-12);
    }

    #[test]
    fn scalar_update_by_hand() {
        let u = Ensemble::new(vec![dv(&[0.0]), dv(&[2.0])]).unwrap();
        let w = u.as_matrix().clone();
        let s = block_stats(&u, &w).unwrap();
        let gamma = DMatrix::from_element(1, 1, 1.0);
        let y = vec![dv(&[4.0]); 2];
        let next = eki_update(&u, &w, &s, &gamma, &y).unwrap();
        assert!((next.member(0)[0] - 2.0).abs() < 1e-14);
        assert!((next.member(1)[0] - 3.0).abs() < 1e-14);
        let wn = w_update(&w, &s, &gamma, &y).unwrap();
        assert!((wn[(0, 0)] - 2.0).abs() < 1e-14);
        // Huge noise: w stays at G(u).
        let wn = w_update(&w, &s, &DMatrix::from_element(1, 1, 1e8), &y).unwrap();
        assert!((wn - &w).amax() < 1e-7);
        // Collapsed ensemble does not move.
        let c = Ensemble::new(vec![dv(&[1.0]); 2]).unwrap();
        let wc = c.as_matrix().clone();
        let sc = block_stats(&c, &wc).unwrap();
        assert_eq!(eki_update(&c, &wc, &sc, &gamma, &y).unwrap(), c);
        assert_eq!(w_update(&wc, &sc, &gamma, &y).unwrap(), wc);
    }

    #[test]
    fn matches_lifted_enkf_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let (p, k, n) = (3, 2, 5);
            let g = randn(&mut rng, k, p);
            let u = Ensemble::from_matrix(randn(&mut rng, p, n)).unwrap();
            let w = (&g * u.as_matrix()).map(|x| x + 0.1 * x * x);
            let a = randn(&mut rng, k, k);
            let gamma = &a * a.transpose() + DMatrix::identity(k, k);
            let y: Vec<_> = (0..n).map(|_| randn(&mut rng, k, 1).column(0).into_owned()).collect();
            let s = block_stats(&u, &w).unwrap();
            let un = eki_update(&u, &w, &s, &gamma, &y).unwrap();
            let wn = w_update(&w, &s, &gamma, &y).unwrap();

            let v = lift(&u, &w).unwrap();
            let vs = compute_stats(&v);
            let mut h = DMatrix::zeros(k, p + k);
            h.view_mut((0, p), (k, k)).fill_with_identity();
            let obs = Observation::new(h, gamma.clone()).unwrap();
            let lifted = analysis_update(&v, &vs, &obs, &y).unwrap();
            let (ul, wl) = split(&lifted, p).unwrap();
            assert!((ul.as_matrix() - un.as_matrix()).amax() < 1e-9);
            assert!((wl - wn).amax() < 1e-9);

            // Block structure of the lifted gain: K = [C_uw; C_ww] (C_ww + Gamma)^{-1}.
            let kgain = enkf::kalman_gain(&vs, &obs).unwrap();
            let sinv = (&s.c_ww + &gamma).try_inverse().unwrap();
            let mut block = DMatrix::zeros(p + k, k);
            block.rows_mut(0, p).copy_from(&(&s.c_uw * &sinv));
            block.rows_mut(p, k).copy_from(&(&s.c_ww * &sinv));
            assert!((kgain - block).amax() < 1e-12);
        }
    }

    #[test]
    fn run_reduces_misfit_and_stays_in_span() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (p, k, n) = (8, 4, 5);
        let a = randn(&mut rng, k, p);
        let truth = randn(&mut rng, p, 1).column(0).into_owned();
        let data = &a * &truth;
        let problem = InverseProblem::new(linear(a), data, DMatrix::identity(k, k) * 0.01, false).unwrap();
        let init = Ensemble::from_matrix(randn(&mut rng, p, n)).unwrap();
        let hist = eki_run(&problem, &init, 20, &NoiseStreams::new(2)).unwrap();
        assert_eq!(hist.iterations(), 20);
        let m0 = data_misfit(&problem, &init.stats().mean).unwrap();
        let m20 = data_misfit(&problem, &hist.final_ensemble().stats().mean).unwrap();
        assert!(m20 <= m0);
        for e in &hist.ensembles {
            for v in e.members() {
                assert!(linalg::span_residual(init.as_matrix(), &v) <= 1e-8 * v.norm());
            }
        }
        let none = eki_run(&problem, &init, 0, &NoiseStreams::new(2)).unwrap();
        assert_eq!(none.ensembles.len(), 1);
    }

    #[test]
    fn forward_failure_names_iteration_and_member() {
        let f = FnForward {
            output_dim: 1,
            f: |u: &DVector<f64>| {
                if u[0] > 10.0 {
                    Err(ModelError::Unphysical("too big".into()))
                } else {
                    Ok(u.clone())
                }
            },
        };
        let problem = InverseProblem::new(f, dv(&[100.0]), DMatrix::identity(1, 1), false).unwrap();
        let init = Ensemble::new(vec![dv(&[0.0]), dv(&[1.0]), dv(&[2.0])]).unwrap();
        match eki_run(&problem, &init, 5, &NoiseStreams::new(0)) {
            Err(Error::ForwardModel { phase: RunPhase::Iteration(j), member, .. }) => {
                assert!(j >= 1);
                assert!(member < 3);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn single_member_rejected() {
        assert!(Ensemble::new(vec![dv(&[1.0])]).is_err());
    }
}
