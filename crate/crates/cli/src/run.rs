//! Experiment dispatch: synthetic data generation, filtering and inversion,
//! and writing of the result files.

use std::fmt;
use std::path::{Path, PathBuf};

use cenkf_core::constrained_eki::{self, LiftedConstraints};
use cenkf_core::constrained_enkf::{self, ConstrainedVariant, ConstraintOptions};
use cenkf_core::eki::{self, EkiHistory, FnForward, InverseProblem};
use cenkf_core::enkf::{self, FilterModel, FilterRun, Observation, UpdateVariant};
use cenkf_core::models::ultradian::{Meal, MealSchedule, UltradianModel, AUGMENTED_DIM, GLUCOSE_INDEX, STATE_NAMES};
use cenkf_core::models::wave::{cs_profile, wave_forward, Ricker, WaveGrid, WaveParams, PARAM_NAMES};
use cenkf_core::models::ModelError;
use cenkf_core::{Ensemble, LinearConstraints, NoiseStreams, Purpose, QpOptions, ViolationReport, ViolationTolerance};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::config::{ConfigError, ConstraintConfig, GlucoseConfig, Kind, ModelConfig, RunConfig, Variant, WaveConfig};
use crate::data::{ingest_measurements, DataError, Schema};
use crate::output::{self, num, Table};
use crate::plot;

#[derive(Debug)]
pub enum RunError {
    Config(ConfigError),
    Data(DataError),
    Core(cenkf_core::Error),
    Model(ModelError),
    Io { path: PathBuf, source: std::io::Error },
}

impl RunError {
    /// 2 for configuration and input problems, 3 for numerical or forward-model
    /// failures, 4 for infeasible constraints, 1 for I/O.
    pub fn exit_code(&self) -> i32 {
        use cenkf_core::Error as E;
        match self {
            RunError::Config(_) | RunError::Data(_) => 2,
            RunError::Core(E::Infeasible { .. }) => 4,
            RunError::Core(E::InvalidInput(_) | E::DimensionMismatch { .. }) => 2,
            RunError::Core(_) | RunError::Model(_) => 3,
            RunError::Io { .. } => 1,
        }
    }
}

impl fmt::Display for RunError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RunError::Config(e) => write!(f, "configuration error: {e}"),
            RunError::Data(e) => write!(f, "data error: {e}"),
            RunError::Core(e) => write!(f, "{e}"),
            RunError::Model(e) => write!(f, "forward model failed: {e}"),
            RunError::Io { path, source } => write!(f, "cannot write {}: {source}", path.display()),
        }
    }
}

impl std::error::Error for RunError {}

impl From<ConfigError> for RunError {
    fn from(e: ConfigError) -> Self {
        RunError::Config(e)
    }
}

impl From<DataError> for RunError {
    fn from(e: DataError) -> Self {
        RunError::Data(e)
    }
}

impl From<cenkf_core::Error> for RunError {
    fn from(e: cenkf_core::Error) -> Self {
        RunError::Core(e)
    }
}

impl From<ModelError> for RunError {
    fn from(e: ModelError) -> Self {
        RunError::Model(e)
    }
}

fn config_err(cfg: &RunConfig, message: impl Into<String>) -> RunError {
    RunError::Config(ConfigError {
        path: cfg.path.clone(),
        message: message.into(),
    })
}

/// Files written by a run.
#[derive(Debug, Default)]
pub struct RunSummary {
    pub files: Vec<PathBuf>,
    pub lines: Vec<String>,
}

fn streams(cfg: &RunConfig) -> NoiseStreams {
    NoiseStreams::new(cfg.seed)
}

fn constraint_options(cfg: &RunConfig) -> ConstraintOptions {
    ConstraintOptions {
        variant: match cfg.ensemble.variant {
            Variant::ConstrainedOriginal => Some(ConstrainedVariant::Original),
            Variant::ConstrainedRange => Some(ConstrainedVariant::Range),
            Variant::Gain | Variant::Range => None,
        },
        tolerance: ViolationTolerance::Relative(cfg.ensemble.violation_tol),
        qp: QpOptions {
            tol: cfg.ensemble.qp_tol,
            ..QpOptions::default()
        },
    }
}

/// Report of the violations present in each ensemble, as produced by an
/// unconstrained run.
fn report_violations<'a>(constraints: &LinearConstraints, ensembles: impl Iterator<Item = &'a Ensemble>, tol: ViolationTolerance) -> ViolationReport {
    let mut report = ViolationReport::new(constraints);
    for e in ensembles {
        let v: Vec<Vec<usize>> = e.members().map(|m| constraints.violations(&m, tol)).collect();
        report.push_step(&v, 0);
    }
    report
}

/// Gaussian draws `mean + std * xi` kept only inside the constraints.
fn gaussian_initial(cfg: &RunConfig, mean: &DVector<f64>, std: &DVector<f64>, constraints: &LinearConstraints) -> Result<Ensemble, RunError> {
    let mut rng = streams(cfg).rng(Purpose::InitialEnsemble, 0, 0);
    let sampler = |r: &mut rand_chacha::ChaCha20Rng| {
        DVector::from_fn(mean.len(), |i, _| {
            let xi: f64 = StandardNormal.sample(r);
            mean[i] + std[i] * xi
        })
    };
    Ok(constrained_eki::rejection_sample_initial(
        sampler,
        constraints,
        |_| true,
        cfg.ensemble.members,
        cfg.ensemble.max_draws,
        &mut rng,
    )?)
}

// ---------------------------------------------------------------- glucose

fn state_constraints(cfg: &RunConfig, d: usize) -> LinearConstraints {
    match &cfg.constraints {
        ConstraintConfig::State(c) => c.clone(),
        ConstraintConfig::Parameters(_) => LinearConstraints::none(d),
    }
}

fn ultradian(g: &GlucoseConfig, meals: &[(f64, f64)]) -> Result<UltradianModel, RunError> {
    let meals = meals.iter().map(|&(time, carbs)| Meal { time, carbs }).collect();
    let schedule = MealSchedule::new(meals, g.meal_decay, g.meal_scale)?;
    Ok(UltradianModel::new(g.params.clone(), schedule, g.dt_max)?)
}

fn glucose_observation(g: &GlucoseConfig) -> Result<Observation, RunError> {
    let mut h = DMatrix::zeros(1, AUGMENTED_DIM);
    h[(0, GLUCOSE_INDEX)] = 1.0;
    Ok(Observation::new(h, DMatrix::from_element(1, 1, g.obs_std * g.obs_std))?)
}

/// Synthetic glucose experiment.
pub struct GlucoseTruth {
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    pub observations: Vec<f64>,
    pub meals: Vec<(f64, f64)>,
}

pub fn simulate_glucose(cfg: &RunConfig, g: &GlucoseConfig) -> Result<GlucoseTruth, RunError> {
    let truth0 = g.truth.clone().ok_or_else(|| config_err(cfg, "glucose.truth missing"))?;
    let model = ultradian(g, &g.meals)?;
    let s = streams(cfg);
    let steps = (g.horizon / g.obs_interval).floor() as usize;
    if steps == 0 {
        return Err(config_err(cfg, "glucose.horizon is shorter than one observation interval"));
    }
    let process = DVector::from_fn(AUGMENTED_DIM, |i, _| g.process_std[i]);
    let mut times = vec![g.start_time];
    let mut states = vec![truth0];
    let mut observations = Vec::with_capacity(steps);
    for j in 0..steps {
        let mut rng = s.rng(Purpose::SyntheticData, (j + 1) as u64, 0);
        let jitter = if g.obs_jitter > 0.0 { rng.random_range(-g.obs_jitter..g.obs_jitter) } else { 0.0 };
        let t1 = g.start_time + (j + 1) as f64 * g.obs_interval + jitter;
        let mut x = model.psi(&states[j], times[j], t1)?;
        for i in 0..AUGMENTED_DIM {
            let xi: f64 = StandardNormal.sample(&mut rng);
            x[i] += process[i] * xi;
        }
        let eta: f64 = StandardNormal.sample(&mut rng);
        observations.push(x[GLUCOSE_INDEX] + g.obs_std * eta);
        times.push(t1);
        states.push(x);
    }
    Ok(GlucoseTruth {
        times,
        states,
        observations,
        meals: g.meals.clone(),
    })
}

/// Filter output kept in memory.
pub struct FilterOutcome {
    /// `times[0]` is the start time, `times[j]` the time of observation `j`.
    pub times: Vec<f64>,
    pub run: FilterRun,
    pub report: ViolationReport,
}

pub fn glucose_filter(cfg: &RunConfig, g: &GlucoseConfig) -> Result<FilterOutcome, RunError> {
    let path = g.measurements.as_ref().ok_or_else(|| config_err(cfg, "glucose.measurements missing"))?;
    let series = ingest_measurements(path, Schema::Glucose)?;
    if series.times[0] <= g.start_time {
        return Err(config_err(
            cfg,
            format!("first glucose time {} is not after glucose.start_time {}", series.times[0], g.start_time),
        ));
    }
    let mut times = vec![g.start_time];
    times.extend_from_slice(&series.times);
    let model = ultradian(g, &series.meals)?;
    let ts = times.clone();
    let transition = move |j: usize, v: &DVector<f64>| model.psi(v, ts[j], ts[j + 1]);
    let process_cov = DMatrix::from_diagonal(&g.process_std.map(|s| s * s));
    let filter = FilterModel::new(transition, glucose_observation(g)?, process_cov, cfg.ensemble.perturb)?.with_divisor(cfg.ensemble.divisor);
    let constraints = state_constraints(cfg, AUGMENTED_DIM);
    let initial = gaussian_initial(cfg, &g.initial_mean, &g.initial_std, &constraints)?;
    let opts = constraint_options(cfg);
    let s = streams(cfg);
    let (run, report) = match cfg.ensemble.variant {
        Variant::ConstrainedOriginal | Variant::ConstrainedRange => {
            constrained_enkf::constrained_filter_run(&filter, &initial, &series.values, &constraints, &s, &opts)?
        }
        Variant::Gain | Variant::Range => {
            let update = if cfg.ensemble.variant == Variant::Gain { UpdateVariant::Gain } else { UpdateVariant::Range };
            let run = enkf::filter_run(&filter, &initial, &series.values, &s, update)?;
            let report = report_violations(&constraints, run.analysis.iter().skip(1), opts.tolerance);
            (run, report)
        }
    };
    Ok(FilterOutcome { times, run, report })
}

// ---------------------------------------------------------------- wave

fn ricker(w: &WaveConfig) -> Ricker {
    Ricker::new(w.ricker_amplitude, w.ricker_frequency)
}

/// Forward map `u -> surface acceleration` for the configured grid and input.
pub fn wave_map(w: &WaveConfig) -> impl Fn(&DVector<f64>) -> Result<DVector<f64>, ModelError> + Sync {
    let grid = w.grid;
    let input = ricker(w);
    move |u: &DVector<f64>| {
        let p = WaveParams::from_slice(u.as_slice())?;
        wave_forward(&p, &grid, |t| input.value(t))
    }
}

/// Clean truth response and its noisy copy.
pub struct WaveData {
    pub times: Vec<f64>,
    pub clean: Option<DVector<f64>>,
    pub noisy: DVector<f64>,
}

pub fn synthesize_wave(cfg: &RunConfig, w: &WaveConfig) -> Result<WaveData, RunError> {
    let truth = w.truth.ok_or_else(|| config_err(cfg, "wave.truth missing"))?;
    let clean = wave_map(w)(&truth.to_vector())?;
    let sigma = w.noise_fraction * clean.amax();
    let mut rng = streams(cfg).rng(Purpose::SyntheticData, 0, 0);
    let noisy = clean.map(|x| {
        let e: f64 = StandardNormal.sample(&mut rng);
        x + sigma * e
    });
    Ok(WaveData {
        times: w.grid.output_times(),
        clean: Some(clean),
        noisy,
    })
}

fn wave_data(cfg: &RunConfig, w: &WaveConfig) -> Result<WaveData, RunError> {
    let Some(path) = &w.data else {
        return synthesize_wave(cfg, w);
    };
    let series = ingest_measurements(path, Schema::Plain)?;
    if series.columns.len() != 1 {
        return Err(RunError::Data(DataError {
            path: path.clone(),
            message: format!("expected one data column, found {}", series.columns.len()),
        }));
    }
    let expected = w.grid.output_times();
    let aligned = series.len() == expected.len() && series.times.iter().zip(&expected).all(|(a, b)| (a - b).abs() <= 1e-9 * (1.0 + b.abs()));
    if !aligned {
        return Err(RunError::Data(DataError {
            path: path.clone(),
            message: format!(
                "data times do not match the wave grid output times ({} samples every {} s)",
                w.grid.samples, w.grid.dt_out
            ),
        }));
    }
    Ok(WaveData {
        times: series.times.clone(),
        clean: None,
        noisy: series.first_column(),
    })
}

fn parameter_constraints(cfg: &RunConfig, k: usize) -> Option<LiftedConstraints> {
    match &cfg.constraints {
        ConstraintConfig::Parameters(c) => {
            let mut lifted = LiftedConstraints::unconstrained(c.p, k)
                .with_parameter_equalities(c.f_u.clone(), c.f_u_rhs.clone())
                .with_parameter_inequalities(c.g_u.clone(), c.g_u_rhs.clone());
            lifted.g_u_labels = c.g_u_labels.clone();
            Some(lifted)
        }
        ConstraintConfig::State(_) => None,
    }
}

/// Inversion output kept in memory.
pub struct InvertOutcome {
    pub history: EkiHistory,
    pub report: ViolationReport,
    pub data: WaveData,
    pub noise_std: f64,
    /// `|y - G(u)|_Gamma / sqrt(k)` at the final ensemble mean and at the truth.
    pub misfit_final_mean: Option<f64>,
    pub misfit_truth: Option<f64>,
    pub truth: Option<WaveParams>,
    pub depth: f64,
    pub grid: WaveGrid,
}

/// The accepted initial parameter ensemble: uniform on the prior box,
/// restricted to the parameter constraints, the velocity screen below `z1`
/// and parameters the forward model accepts.
pub fn wave_initial(cfg: &RunConfig, w: &WaveConfig) -> Result<Ensemble, RunError> {
    let param_constraints = match parameter_constraints(cfg, 0) {
        Some(l) => l.parameter_constraints()?,
        None => LinearConstraints::none(PARAM_NAMES.len()),
    };
    let (lo, hi) = (w.prior_lower.clone(), w.prior_upper.clone());
    let (grid, screen) = (w.grid, w.velocity_screen);
    let accept = |u: &DVector<f64>| match WaveParams::from_slice(u.as_slice()) {
        Ok(p) => p.check(grid.depth).is_ok() && p.cs_below_z1() <= screen && grid.substeps(p.max_velocity()).is_ok(),
        Err(_) => false,
    };
    let sampler = |r: &mut rand_chacha::ChaCha20Rng| DVector::from_fn(lo.len(), |i, _| lo[i] + (hi[i] - lo[i]) * r.random::<f64>());
    let mut rng = streams(cfg).rng(Purpose::InitialEnsemble, 0, 0);
    Ok(constrained_eki::rejection_sample_initial(
        sampler,
        &param_constraints,
        accept,
        cfg.ensemble.members,
        cfg.ensemble.max_draws,
        &mut rng,
    )?)
}

pub fn wave_invert(cfg: &RunConfig, w: &WaveConfig) -> Result<InvertOutcome, RunError> {
    let data = wave_data(cfg, w)?;
    let k = data.noisy.len();
    let noise_std = w.gamma_fraction * data.noisy.amax();
    if !(noise_std > 0.0) {
        return Err(config_err(cfg, "data are identically zero; the noise level would vanish"));
    }
    let problem = InverseProblem::new(
        FnForward {
            output_dim: k,
            f: wave_map(w),
        },
        data.noisy.clone(),
        DMatrix::identity(k, k) * (noise_std * noise_std),
        cfg.ensemble.perturb,
    )?
    .with_divisor(cfg.ensemble.divisor);
    let initial = wave_initial(cfg, w)?;
    let lifted = parameter_constraints(cfg, k).unwrap_or_else(|| LiftedConstraints::unconstrained(PARAM_NAMES.len(), k));
    let assembled = lifted.assemble()?;
    let opts = constraint_options(cfg);
    let s = streams(cfg);
    let iterations = cfg.ensemble.iterations;
    let (history, report) = if cfg.ensemble.variant.is_constrained() {
        constrained_eki::constrained_eki_run(&problem, &assembled, &initial, iterations, &s, &opts)?
    } else {
        let history = eki::eki_run(&problem, &initial, iterations, &s)?;
        let lifted_members: Vec<Ensemble> = history
            .ensembles
            .iter()
            .skip(1)
            .zip(&history.updated_w)
            .map(|(u, w)| eki::lift(u, w))
            .collect::<Result<_, _>>()?;
        let report = report_violations(&assembled, lifted_members.iter(), opts.tolerance);
        (history, report)
    };
    let per_sample = |u: &DVector<f64>| eki::data_misfit(&problem, u).ok().map(|m| m / (k as f64).sqrt());
    let misfit_final_mean = per_sample(&history.final_ensemble().stats().mean);
    let misfit_truth = w.truth.and_then(|t| per_sample(&t.to_vector()));
    Ok(InvertOutcome {
        history,
        report,
        data,
        noise_std,
        misfit_final_mean,
        misfit_truth,
        truth: w.truth,
        depth: w.grid.depth,
        grid: w.grid,
    })
}

/// Profile at the midpoints `(i + 1/2) H / P` of `P` equal layers, evaluated at
/// the initial mean, final mean and truth.
pub fn profile_table(out: &InvertOutcome, points: usize) -> Result<Table, RunError> {
    let mean = |e: &Ensemble| WaveParams::from_slice(e.stats().mean.as_slice());
    let first = mean(&out.history.ensembles[0])?;
    let last = mean(out.history.final_ensemble())?;
    let mut t = Table::new(["z", "cs_initial_mean", "cs_final_mean", "cs_true"]);
    for i in 0..points {
        let z = out.depth * (i as f64 + 0.5) / points as f64;
        let truth = match &out.truth {
            Some(p) => cs_profile(z, p, out.depth)?,
            None => f64::NAN,
        };
        t.push(vec![num(z), num(cs_profile(z, &first, out.depth)?), num(cs_profile(z, &last, out.depth)?), num(truth)]);
    }
    Ok(t)
}

// ---------------------------------------------------------------- output

struct Writer {
    dir: PathBuf,
    summary: RunSummary,
}

impl Writer {
    fn new(dir: &Path) -> Result<Self, RunError> {
        std::fs::create_dir_all(dir).map_err(|source| RunError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        Ok(Writer {
            dir: dir.to_path_buf(),
            summary: RunSummary::default(),
        })
    }

    fn table(&mut self, name: &str, t: &Table) -> Result<PathBuf, RunError> {
        let path = self.dir.join(name);
        t.write(&path).map_err(|source| RunError::Io { path: path.clone(), source })?;
        self.summary.files.push(path.clone());
        Ok(path)
    }

    fn plot(&mut self, name: &str, f: impl FnOnce(&Path) -> Result<(), Box<dyn std::error::Error>>) -> Result<(), RunError> {
        let path = self.dir.join(name);
        f(&path).map_err(|e| RunError::Io {
            path: path.clone(),
            source: std::io::Error::other(e.to_string()),
        })?;
        self.summary.files.push(path);
        Ok(())
    }
}

/// Run the configured experiment and write its result files to `cfg.output`.
pub fn run(cfg: &RunConfig, plots: bool) -> Result<RunSummary, RunError> {
    let mut w = Writer::new(&cfg.output)?;
    match (cfg.kind, &cfg.model) {
        (Kind::Simulate, ModelConfig::Glucose(g)) => {
            let truth = simulate_glucose(cfg, g)?;
            let mut t = Table::new(["step", "time"].into_iter().map(String::from).chain(STATE_NAMES.iter().map(|s| s.to_string())));
            for (j, x) in truth.states.iter().enumerate() {
                let mut row = vec![j.to_string(), num(truth.times[j])];
                row.extend(x.iter().map(|&v| num(v)));
                t.push(row);
            }
            w.table("truth.csv", &t)?;
            w.table("measurements.csv", &glucose_measurement_table(&truth))?;
            w.summary.lines.push(format!("{} glucose observations, {} meals", truth.observations.len(), truth.meals.len()));
        }
        (Kind::Simulate, ModelConfig::Wave(wc)) => {
            let data = synthesize_wave(cfg, wc)?;
            let truth = wc.truth.expect("validated");
            let mut t = Table::new(PARAM_NAMES);
            t.push(truth.to_vector().iter().map(|&x| num(x)).collect());
            w.table("truth.csv", &t)?;
            let mut d = Table::new(["time", "y1"]);
            for (ti, y) in data.times.iter().zip(data.noisy.iter()) {
                d.push(vec![num(*ti), num(*y)]);
            }
            w.table("data.csv", &d)?;
            if let Some(clean) = &data.clean {
                let mut c = Table::new(["time", "y1"]);
                for (ti, y) in data.times.iter().zip(clean.iter()) {
                    c.push(vec![num(*ti), num(*y)]);
                }
                w.table("clean.csv", &c)?;
            }
            w.summary.lines.push(format!("{} acceleration samples", data.noisy.len()));
        }
        (Kind::Filter, ModelConfig::Glucose(g)) => {
            let out = glucose_filter(cfg, g)?;
            let traj = w.table(
                "trajectory.csv",
                &output::ensemble_table("step", &STATE_NAMES, &out.run.analysis, Some(&out.times)),
            )?;
            let ms = w.table(
                "mean_spread.csv",
                &output::mean_spread_table("step", &STATE_NAMES, &out.run.analysis, Some(&out.times), cfg.ensemble.divisor),
            )?;
            let viol = w.table("violations.csv", &output::violation_table(&out.report))?;
            let _ = traj;
            if plots {
                w.plot("mean_spread.svg", |p| plot::plot_mean_spread(&ms, p, "ensemble mean and spread"))?;
                w.plot("violations.svg", |p| plot::plot_violations(&viol, p, "fraction of members violating each constraint"))?;
            }
            w.summary.lines.push(format!(
                "{} steps, {} members re-solved in total",
                out.run.steps(),
                out.report.resolved().iter().sum::<usize>()
            ));
        }
        (Kind::Invert, ModelConfig::Wave(wc)) => {
            let out = wave_invert(cfg, wc)?;
            let evo = w.table(
                "ensemble_evolution.csv",
                &output::ensemble_table("iteration", &PARAM_NAMES, &out.history.ensembles, None),
            )?;
            let ms = w.table(
                "mean_spread.csv",
                &output::mean_spread_table("iteration", &PARAM_NAMES, &out.history.ensembles, None, cfg.ensemble.divisor),
            )?;
            let viol = w.table("violations.csv", &output::violation_table(&out.report))?;
            let prof = w.table("profile.csv", &profile_table(&out, wc.profile_points)?)?;
            if plots {
                w.plot("ensemble_evolution.svg", |p| plot::plot_evolution(&evo, p, "parameter ensemble by iteration"))?;
                w.plot("mean_spread.svg", |p| plot::plot_mean_spread(&ms, p, "ensemble mean and spread"))?;
                w.plot("violations.svg", |p| plot::plot_violations(&viol, p, "fraction of members violating each constraint"))?;
                w.plot("profile.svg", |p| plot::plot_profile(&prof, p, "shear velocity profile"))?;
            }
            w.summary.lines.push(format!("{} iterations, noise std {:.3e}", out.history.iterations(), out.noise_std));
            let show = |m: Option<f64>| m.map_or("n/a".to_string(), |m| format!("{m:.3}"));
            w.summary.lines.push(format!(
                "data misfit per sample: final mean {}, truth {}",
                show(out.misfit_final_mean),
                show(out.misfit_truth)
            ));
        }
        (kind, _) => return Err(config_err(cfg, format!("kind {} does not apply to model {}", kind.name(), cfg.model_name()))),
    }
    Ok(w.summary)
}

/// Meal and glucose rows in time order, meals first at equal times.
pub fn glucose_measurement_table(truth: &GlucoseTruth) -> Table {
    let mut rows: Vec<(f64, u8, f64)> = truth.meals.iter().map(|&(t, c)| (t, 0, c)).collect();
    rows.extend(truth.times[1..].iter().zip(&truth.observations).map(|(&t, &y)| (t, 1, y)));
    rows.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut t = Table::new(["time", "type", "value"]);
    for (time, kind, v) in rows {
        t.push(vec![num(time), if kind == 0 { "meal".into() } else { "glucose".into() }, num(v)]);
    }
    t
}
