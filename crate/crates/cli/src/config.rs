//! Run configuration: a TOML file parsed into a validated [`RunConfig`].

use std::fmt;
use std::path::{Path, PathBuf};

use cenkf_core::constrained_eki::{wave_box_constraints, LiftedConstraints};
use cenkf_core::models::ultradian::{UltradianParams, AUGMENTED_DIM, LOWER_BOUNDS, STATE_NAMES, UPPER_BOUNDS};
use cenkf_core::models::wave::{WaveGrid, WaveParams, PARAM_NAMES};
use cenkf_core::{Divisor, LinearConstraints};
use nalgebra::{DMatrix, DVector};
use serde::Deserialize;

#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub path: PathBuf,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path.display(), self.message)
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Kind {
    Simulate,
    Filter,
    Invert,
}

impl Kind {
    pub fn name(self) -> &'static str {
        match self {
            Kind::Simulate => "simulate",
            Kind::Filter => "filter",
            Kind::Invert => "invert",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Glucose,
    Wave,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Gain,
    Range,
    ConstrainedOriginal,
    ConstrainedRange,
}

impl Variant {
    pub fn is_constrained(self) -> bool {
        matches!(self, Variant::ConstrainedOriginal | Variant::ConstrainedRange)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
pub enum DivisorName {
    #[serde(rename = "n")]
    N,
    #[serde(rename = "n-1")]
    NMinusOne,
}

fn default_true() -> bool {
    true
}

fn default_tol() -> f64 {
    1e-9
}

fn default_divisor() -> DivisorName {
    DivisorName::N
}

fn default_variant() -> Variant {
    Variant::ConstrainedRange
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    kind: Kind,
    model: ModelKind,
    #[serde(default)]
    seed: u64,
    #[serde(default = "default_output")]
    output: PathBuf,
    #[serde(default)]
    ensemble: Option<RawEnsemble>,
    #[serde(default)]
    constraints: Option<RawConstraints>,
    #[serde(default)]
    glucose: Option<RawGlucose>,
    #[serde(default)]
    wave: Option<RawWave>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEnsemble {
    members: usize,
    #[serde(default = "default_true")]
    perturb: bool,
    #[serde(default = "default_divisor")]
    divisor: DivisorName,
    #[serde(default = "default_variant")]
    variant: Variant,
    #[serde(default = "default_tol")]
    violation_tol: f64,
    #[serde(default = "default_tol")]
    qp_tol: f64,
    #[serde(default)]
    iterations: Option<usize>,
    #[serde(default)]
    max_draws: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConstraints {
    /// Named bound list: `"glucose"` or `"wave-box"`.
    #[serde(default)]
    named: Option<String>,
    #[serde(default)]
    lower: Option<Vec<f64>>,
    #[serde(default)]
    upper: Option<Vec<f64>>,
    #[serde(default)]
    eq_matrix: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    eq_rhs: Option<Vec<f64>>,
    #[serde(default)]
    ineq_matrix: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    ineq_rhs: Option<Vec<f64>>,
    #[serde(default)]
    cs0_max: Option<f64>,
    #[serde(default)]
    k_max: Option<f64>,
    #[serde(default)]
    alpha_max: Option<f64>,
}

/// Ultradian constants; every field must be present in a parameter file.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawUltradianParams {
    v_p: f64,
    v_i: f64,
    v_g: f64,
    e: f64,
    t_p: f64,
    t_i: f64,
    t_d: f64,
    r_m: f64,
    a_1: f64,
    c_1: f64,
    c_2: f64,
    c_3: f64,
    c_4: f64,
    c_5: f64,
    u_b: f64,
    u_0: f64,
    u_m: f64,
    alpha: f64,
    beta: f64,
}

impl From<RawUltradianParams> for UltradianParams {
    fn from(r: RawUltradianParams) -> Self {
        UltradianParams {
            v_p: r.v_p,
            v_i: r.v_i,
            v_g: r.v_g,
            e: r.e,
            t_p: r.t_p,
            t_i: r.t_i,
            t_d: r.t_d,
            r_m: r.r_m,
            a_1: r.a_1,
            c_1: r.c_1,
            c_2: r.c_2,
            c_3: r.c_3,
            c_4: r.c_4,
            c_5: r.c_5,
            u_b: r.u_b,
            u_0: r.u_0,
            u_m: r.u_m,
            alpha: r.alpha,
            beta: r.beta,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawParamFile {
    params: RawUltradianParams,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGlucose {
    #[serde(default)]
    params_file: Option<PathBuf>,
    #[serde(default)]
    params: Option<RawUltradianParams>,
    dt_max: f64,
    meal_decay: f64,
    meal_scale: f64,
    obs_std: f64,
    #[serde(default)]
    start_time: f64,
    #[serde(default)]
    process_std: Option<Vec<f64>>,
    #[serde(default)]
    initial_mean: Option<Vec<f64>>,
    #[serde(default)]
    initial_std: Option<Vec<f64>>,
    #[serde(default)]
    measurements: Option<PathBuf>,
    #[serde(default)]
    truth: Option<Vec<f64>>,
    #[serde(default)]
    horizon: Option<f64>,
    #[serde(default)]
    obs_interval: Option<f64>,
    #[serde(default)]
    obs_jitter: f64,
    #[serde(default)]
    meals: Vec<[f64; 2]>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawWave {
    depth: f64,
    cells: usize,
    dt_out: f64,
    samples: usize,
    courant: f64,
    max_substeps: u64,
    ricker_amplitude: f64,
    ricker_frequency: f64,
    noise_fraction: f64,
    #[serde(default)]
    gamma_fraction: Option<f64>,
    #[serde(default)]
    truth: Option<Vec<f64>>,
    #[serde(default)]
    data: Option<PathBuf>,
    #[serde(default)]
    prior_lower: Option<Vec<f64>>,
    #[serde(default)]
    prior_upper: Option<Vec<f64>>,
    #[serde(default = "default_profile_points")]
    profile_points: usize,
    #[serde(default = "default_velocity_screen")]
    velocity_screen: f64,
}

fn default_velocity_screen() -> f64 {
    5000.0
}

fn default_profile_points() -> usize {
    10
}

/// Ensemble and update settings.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleSettings {
    pub members: usize,
    pub perturb: bool,
    pub divisor: Divisor,
    pub variant: Variant,
    pub violation_tol: f64,
    pub qp_tol: f64,
    pub iterations: usize,
    pub max_draws: usize,
}

#[derive(Debug, Clone)]
pub struct GlucoseConfig {
    pub params: UltradianParams,
    pub dt_max: f64,
    pub meal_decay: f64,
    pub meal_scale: f64,
    pub obs_std: f64,
    pub start_time: f64,
    pub process_std: DVector<f64>,
    pub initial_mean: DVector<f64>,
    pub initial_std: DVector<f64>,
    pub measurements: Option<PathBuf>,
    pub truth: Option<DVector<f64>>,
    pub horizon: f64,
    pub obs_interval: f64,
    pub obs_jitter: f64,
    pub meals: Vec<(f64, f64)>,
}

#[derive(Debug, Clone)]
pub struct WaveConfig {
    pub grid: WaveGrid,
    pub ricker_amplitude: f64,
    pub ricker_frequency: f64,
    /// Synthetic noise standard deviation as a fraction of `max |G(truth)|`.
    pub noise_fraction: f64,
    /// Standard deviation assumed in `Gamma`, as a fraction of `max |y|`.
    pub gamma_fraction: f64,
    pub truth: Option<WaveParams>,
    pub data: Option<PathBuf>,
    pub prior_lower: DVector<f64>,
    pub prior_upper: DVector<f64>,
    pub profile_points: usize,
    /// Initial members with `c_s` below `z1` above this (m/s) are discarded.
    pub velocity_screen: f64,
}

#[derive(Debug, Clone)]
pub enum ModelConfig {
    Glucose(GlucoseConfig),
    Wave(WaveConfig),
}

/// Constraints on the model state (glucose) or on the parameters (wave).
#[derive(Debug, Clone)]
pub enum ConstraintConfig {
    State(LinearConstraints),
    Parameters(LiftedConstraints),
}

impl ConstraintConfig {
    pub fn rows(&self) -> usize {
        match self {
            ConstraintConfig::State(c) => c.num_rows(),
            ConstraintConfig::Parameters(c) => c.f_u.nrows() + c.g_u.nrows(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub path: PathBuf,
    pub kind: Kind,
    pub seed: u64,
    pub output: PathBuf,
    pub ensemble: EnsembleSettings,
    pub constraints: ConstraintConfig,
    pub model: ModelConfig,
}

impl RunConfig {
    pub fn model_name(&self) -> &'static str {
        match self.model {
            ModelConfig::Glucose(_) => "glucose",
            ModelConfig::Wave(_) => "wave",
        }
    }
}

struct Ctx<'a> {
    path: &'a Path,
    dir: PathBuf,
}

impl Ctx<'_> {
    fn err(&self, message: impl Into<String>) -> ConfigError {
        ConfigError {
            path: self.path.to_path_buf(),
            message: message.into(),
        }
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.dir.join(p)
        }
    }

    fn vector(&self, field: &str, v: &[f64], len: usize) -> Result<DVector<f64>, ConfigError> {
        if v.len() != len {
            return Err(self.err(format!("{field}: expected {len} values, found {}", v.len())));
        }
        if let Some(i) = v.iter().position(|x| !x.is_finite()) {
            return Err(self.err(format!("{field}[{i}] is not finite")));
        }
        Ok(DVector::from_column_slice(v))
    }

    fn matrix(&self, field: &str, rows: &[Vec<f64>], cols: usize) -> Result<DMatrix<f64>, ConfigError> {
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(self.err(format!("{field} row {i}: width {} does not match the dimension {cols}", r.len())));
            }
        }
        let flat: Vec<f64> = rows.iter().flatten().cloned().collect();
        if flat.iter().any(|x| !x.is_finite()) {
            return Err(self.err(format!("{field} has non-finite entries")));
        }
        Ok(DMatrix::from_row_slice(rows.len(), cols, &flat))
    }

    fn positive(&self, field: &str, x: f64) -> Result<f64, ConfigError> {
        if x.is_finite() && x > 0.0 {
            Ok(x)
        } else {
            Err(self.err(format!("{field} must be positive, got {x}")))
        }
    }

    fn nonnegative(&self, field: &str, x: f64) -> Result<f64, ConfigError> {
        if x.is_finite() && x >= 0.0 {
            Ok(x)
        } else {
            Err(self.err(format!("{field} must be non-negative, got {x}")))
        }
    }
}

/// Read, parse and validate a run configuration.
pub fn parse_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError {
        path: path.to_path_buf(),
        message: format!("cannot read: {e}"),
    })?;
    parse_config_str(&text, path)
}

/// Parse configuration text; relative paths resolve against `path`'s directory.
pub fn parse_config_str(text: &str, path: &Path) -> Result<RunConfig, ConfigError> {
    let ctx = Ctx {
        path,
        dir: path.parent().map(Path::to_path_buf).unwrap_or_default(),
    };
    let raw: RawConfig = toml::from_str(text).map_err(|e| ctx.err(e.to_string()))?;

    let model = match raw.model {
        ModelKind::Glucose => {
            if raw.wave.is_some() {
                return Err(ctx.err("[wave] section given for the glucose model"));
            }
            let g = raw.glucose.ok_or_else(|| ctx.err("missing [glucose] section"))?;
            ModelConfig::Glucose(glucose_config(&ctx, g, raw.kind)?)
        }
        ModelKind::Wave => {
            if raw.glucose.is_some() {
                return Err(ctx.err("[glucose] section given for the wave model"));
            }
            let w = raw.wave.ok_or_else(|| ctx.err("missing [wave] section"))?;
            ModelConfig::Wave(wave_config(&ctx, w, raw.kind)?)
        }
    };
    match (raw.kind, &model) {
        (Kind::Filter, ModelConfig::Wave(_)) => return Err(ctx.err("kind = \"filter\" needs the glucose model")),
        (Kind::Invert, ModelConfig::Glucose(_)) => return Err(ctx.err("kind = \"invert\" needs the wave model")),
        _ => {}
    }

    let ensemble = ensemble_settings(&ctx, raw.ensemble, raw.kind)?;
    let constraints = constraint_config(&ctx, raw.constraints.unwrap_or_default(), &model)?;
    if ensemble.variant.is_constrained() && constraints.rows() == 0 && raw.kind != Kind::Simulate {
        return Err(ctx.err(format!("variant {:?} needs a [constraints] section", ensemble.variant)));
    }

    Ok(RunConfig {
        path: path.to_path_buf(),
        kind: raw.kind,
        seed: raw.seed,
        output: ctx.resolve(&raw.output),
        ensemble,
        constraints,
        model,
    })
}

fn ensemble_settings(ctx: &Ctx, raw: Option<RawEnsemble>, kind: Kind) -> Result<EnsembleSettings, ConfigError> {
    let raw = match raw {
        Some(r) => r,
        None if kind == Kind::Simulate => RawEnsemble {
            members: 1,
            perturb: true,
            divisor: DivisorName::N,
            variant: Variant::Gain,
            violation_tol: default_tol(),
            qp_tol: default_tol(),
            iterations: None,
            max_draws: None,
        },
        None => return Err(ctx.err("missing [ensemble] section")),
    };
    if raw.members < 2 && kind != Kind::Simulate {
        return Err(ctx.err(format!("ensemble.members must be at least 2, got {}", raw.members)));
    }
    ctx.nonnegative("ensemble.violation_tol", raw.violation_tol)?;
    ctx.positive("ensemble.qp_tol", raw.qp_tol)?;
    let iterations = match (kind, raw.iterations) {
        (Kind::Invert, None) => return Err(ctx.err("ensemble.iterations is required for inversions")),
        (Kind::Filter, Some(_)) => return Err(ctx.err("ensemble.iterations applies to inversions only; filter steps follow the data")),
        (_, n) => n.unwrap_or(0),
    };
    let max_draws = raw.max_draws.unwrap_or(1000 * raw.members.max(1));
    if max_draws < raw.members {
        return Err(ctx.err("ensemble.max_draws is below ensemble.members"));
    }
    Ok(EnsembleSettings {
        members: raw.members,
        perturb: raw.perturb,
        divisor: match raw.divisor {
            DivisorName::N => Divisor::N,
            DivisorName::NMinusOne => Divisor::NMinusOne,
        },
        variant: raw.variant,
        violation_tol: raw.violation_tol,
        qp_tol: raw.qp_tol,
        iterations,
        max_draws,
    })
}

fn glucose_config(ctx: &Ctx, g: RawGlucose, kind: Kind) -> Result<GlucoseConfig, ConfigError> {
    let params: UltradianParams = match (g.params_file, g.params) {
        (Some(_), Some(_)) => return Err(ctx.err("give either glucose.params_file or [glucose.params], not both")),
        (Some(file), None) => {
            let file = ctx.resolve(&file);
            let text = std::fs::read_to_string(&file).map_err(|e| ctx.err(format!("glucose.params_file {}: {e}", file.display())))?;
            let p: RawParamFile = toml::from_str(&text).map_err(|e| ConfigError {
                path: file.clone(),
                message: e.to_string(),
            })?;
            p.params.into()
        }
        (None, Some(p)) => p.into(),
        (None, None) => return Err(ctx.err("glucose parameters missing: set glucose.params_file or [glucose.params]")),
    };
    params.validate().map_err(|e| ctx.err(format!("glucose parameters: {e}")))?;
    let d = AUGMENTED_DIM;
    let dt_max = ctx.positive("glucose.dt_max", g.dt_max)?;
    let meal_decay = ctx.positive("glucose.meal_decay", g.meal_decay)?;
    let meal_scale = ctx.nonnegative("glucose.meal_scale", g.meal_scale)?;
    let obs_std = ctx.positive("glucose.obs_std", g.obs_std)?;
    let obs_jitter = ctx.nonnegative("glucose.obs_jitter", g.obs_jitter)?;
    let need = |field: &str, v: Option<Vec<f64>>| -> Result<DVector<f64>, ConfigError> {
        match v {
            Some(v) => ctx.vector(field, &v, d),
            None => Err(ctx.err(format!("{field} is required for kind = \"{}\"", kind.name()))),
        }
    };
    let zeros = || Some(vec![0.0; d]);
    let (process_std, initial_mean, initial_std, truth, horizon, obs_interval) = match kind {
        Kind::Simulate => {
            let horizon = g.horizon.ok_or_else(|| ctx.err("glucose.horizon is required for simulate"))?;
            let interval = g.obs_interval.ok_or_else(|| ctx.err("glucose.obs_interval is required for simulate"))?;
            ctx.positive("glucose.horizon", horizon)?;
            ctx.positive("glucose.obs_interval", interval)?;
            if obs_jitter >= 0.5 * interval {
                return Err(ctx.err("glucose.obs_jitter must be below half of glucose.obs_interval"));
            }
            let truth = need("glucose.truth", g.truth)?;
            let ps = need("glucose.process_std", g.process_std.or_else(zeros))?;
            (ps, DVector::zeros(d), DVector::zeros(d), Some(truth), horizon, interval)
        }
        _ => {
            if g.measurements.is_none() {
                return Err(ctx.err("glucose.measurements is required for filter runs"));
            }
            let ps = need("glucose.process_std", g.process_std)?;
            let m = need("glucose.initial_mean", g.initial_mean)?;
            let s = need("glucose.initial_std", g.initial_std)?;
            let truth = g.truth.map(|t| ctx.vector("glucose.truth", &t, d)).transpose()?;
            (ps, m, s, truth, 0.0, 0.0)
        }
    };
    if process_std.iter().chain(initial_std.iter()).any(|&s| s < 0.0) {
        return Err(ctx.err("standard deviations must be non-negative"));
    }
    let mut meals = Vec::with_capacity(g.meals.len());
    for (i, [t, c]) in g.meals.into_iter().enumerate() {
        if !(t.is_finite() && c.is_finite() && c >= 0.0) {
            return Err(ctx.err(format!("glucose.meals[{i}] = [{t}, {c}] is invalid")));
        }
        meals.push((t, c));
    }
    Ok(GlucoseConfig {
        params,
        dt_max,
        meal_decay,
        meal_scale,
        obs_std,
        start_time: g.start_time,
        process_std,
        initial_mean,
        initial_std,
        measurements: g.measurements.map(|p| ctx.resolve(&p)),
        truth,
        horizon,
        obs_interval,
        obs_jitter,
        meals,
    })
}

fn wave_config(ctx: &Ctx, w: RawWave, kind: Kind) -> Result<WaveConfig, ConfigError> {
    let grid = WaveGrid {
        depth: w.depth,
        cells: w.cells,
        dt_out: w.dt_out,
        samples: w.samples,
        courant: w.courant,
        max_substeps: w.max_substeps,
    };
    grid.validate().map_err(|e| ctx.err(format!("wave grid: {e}")))?;
    ctx.positive("wave.ricker_amplitude", w.ricker_amplitude)?;
    ctx.positive("wave.ricker_frequency", w.ricker_frequency)?;
    ctx.nonnegative("wave.noise_fraction", w.noise_fraction)?;
    let gamma_fraction = w.gamma_fraction.unwrap_or(w.noise_fraction);
    if kind == Kind::Invert {
        ctx.positive("wave.gamma_fraction", gamma_fraction)?;
    }
    let truth = match w.truth {
        Some(t) => {
            let v = ctx.vector("wave.truth", &t, PARAM_NAMES.len())?;
            let p = WaveParams::from_slice(v.as_slice()).map_err(|e| ctx.err(format!("wave.truth: {e}")))?;
            p.check(grid.depth).map_err(|e| ctx.err(format!("wave.truth: {e}")))?;
            Some(p)
        }
        None => None,
    };
    if kind == Kind::Simulate && truth.is_none() {
        return Err(ctx.err("wave.truth is required for simulate"));
    }
    if kind == Kind::Invert && truth.is_none() && w.data.is_none() {
        return Err(ctx.err("inversion needs wave.data or wave.truth to synthesize data from"));
    }
    let (prior_lower, prior_upper) = match (kind, w.prior_lower, w.prior_upper) {
        (Kind::Invert, Some(l), Some(u)) => {
            let l = ctx.vector("wave.prior_lower", &l, 6)?;
            let u = ctx.vector("wave.prior_upper", &u, 6)?;
            if l.iter().zip(u.iter()).any(|(a, b)| a >= b) {
                return Err(ctx.err("wave.prior_lower must lie strictly below wave.prior_upper"));
            }
            (l, u)
        }
        (Kind::Invert, _, _) => return Err(ctx.err("wave.prior_lower and wave.prior_upper are required for inversions")),
        _ => (DVector::zeros(6), DVector::zeros(6)),
    };
    if w.profile_points == 0 {
        return Err(ctx.err("wave.profile_points must be positive"));
    }
    ctx.positive("wave.velocity_screen", w.velocity_screen)?;
    Ok(WaveConfig {
        grid,
        ricker_amplitude: w.ricker_amplitude,
        ricker_frequency: w.ricker_frequency,
        noise_fraction: w.noise_fraction,
        gamma_fraction,
        truth,
        data: w.data.map(|p| ctx.resolve(&p)),
        prior_lower,
        prior_upper,
        profile_points: w.profile_points,
        velocity_screen: w.velocity_screen,
    })
}

fn constraint_config(ctx: &Ctx, c: RawConstraints, model: &ModelConfig) -> Result<ConstraintConfig, ConfigError> {
    let (d, names): (usize, Vec<&str>) = match model {
        ModelConfig::Glucose(_) => (AUGMENTED_DIM, STATE_NAMES.to_vec()),
        ModelConfig::Wave(_) => (PARAM_NAMES.len(), PARAM_NAMES.to_vec()),
    };
    let explicit = c.lower.is_some() || c.upper.is_some() || c.eq_matrix.is_some() || c.ineq_matrix.is_some();
    let wave_limits = c.cs0_max.is_some() || c.k_max.is_some() || c.alpha_max.is_some();
    if c.named.is_some() && explicit {
        return Err(ctx.err("constraints: give either a named list or explicit blocks, not both"));
    }
    if wave_limits && c.named.as_deref() != Some("wave-box") {
        return Err(ctx.err("constraints.cs0_max, k_max and alpha_max apply to named = \"wave-box\" only"));
    }
    if let Some(name) = c.named.as_deref() {
        return match (name, model) {
            ("glucose", ModelConfig::Glucose(_)) => {
                let lc = LinearConstraints::bounds(&DVector::from_column_slice(&LOWER_BOUNDS), &DVector::from_column_slice(&UPPER_BOUNDS))
                    .map_err(|e| ctx.err(format!("constraints: {e}")))?;
                let lc = lc.with_labels(bound_labels(&names)).map_err(|e| ctx.err(e.to_string()))?;
                Ok(ConstraintConfig::State(lc))
            }
            ("wave-box", ModelConfig::Wave(w)) => {
                let (Some(cs0), Some(k), Some(alpha)) = (c.cs0_max, c.k_max, c.alpha_max) else {
                    return Err(ctx.err("named = \"wave-box\" needs cs0_max, k_max and alpha_max"));
                };
                for (f, v) in [("constraints.cs0_max", cs0), ("constraints.k_max", k)] {
                    ctx.positive(f, v)?;
                }
                if !(alpha.is_finite() && alpha >= 1.0) {
                    return Err(ctx.err("constraints.alpha_max must be at least 1"));
                }
                let lifted = wave_box_constraints(w.grid.depth, cs0, k, alpha, 0);
                lifted.parameter_constraints().map_err(|e| ctx.err(format!("constraints: {e}")))?;
                Ok(ConstraintConfig::Parameters(lifted))
            }
            (other, _) => Err(ctx.err(format!("constraints.named = \"{other}\" does not apply to this model"))),
        };
    }

    let mut f = DMatrix::zeros(0, d);
    let mut f_rhs = DVector::zeros(0);
    let mut g_rows: Vec<Vec<f64>> = Vec::new();
    let mut g_rhs: Vec<f64> = Vec::new();
    let mut labels: Vec<String> = Vec::new();
    match (c.eq_matrix, c.eq_rhs) {
        (Some(m), Some(r)) => {
            f = ctx.matrix("constraints.eq_matrix", &m, d)?;
            f_rhs = ctx.vector("constraints.eq_rhs", &r, m.len())?;
            labels.extend((0..m.len()).map(|i| format!("eq{i}")));
        }
        (None, None) => {}
        _ => return Err(ctx.err("constraints.eq_matrix and constraints.eq_rhs go together")),
    }
    if c.lower.is_some() || c.upper.is_some() {
        let lower = c.lower.map(|l| ctx.vector("constraints.lower", &l, d)).transpose()?;
        let upper = c.upper.map(|u| ctx.vector("constraints.upper", &u, d)).transpose()?;
        if let Some(l) = &lower {
            for i in 0..d {
                let mut row = vec![0.0; d];
                row[i] = -1.0;
                g_rows.push(row);
                g_rhs.push(-l[i]);
                labels.push(format!("{}>=lower", names[i]));
            }
        }
        if let Some(u) = &upper {
            for i in 0..d {
                let mut row = vec![0.0; d];
                row[i] = 1.0;
                g_rows.push(row);
                g_rhs.push(u[i]);
                labels.push(format!("{}<=upper", names[i]));
            }
        }
    }
    match (c.ineq_matrix, c.ineq_rhs) {
        (Some(m), Some(r)) => {
            ctx.matrix("constraints.ineq_matrix", &m, d)?;
            ctx.vector("constraints.ineq_rhs", &r, m.len())?;
            labels.extend((0..m.len()).map(|i| format!("ineq{i}")));
            g_rows.extend(m);
            g_rhs.extend(r);
        }
        (None, None) => {}
        _ => return Err(ctx.err("constraints.ineq_matrix and constraints.ineq_rhs go together")),
    }
    let g = ctx.matrix("constraints", &g_rows, d)?;
    let g_rhs = DVector::from_vec(g_rhs);
    let infeasible = |e: cenkf_core::Error| ctx.err(format!("constraints: {e}"));
    match model {
        ModelConfig::Glucose(_) => {
            let lc = LinearConstraints::with_dim(d, f, f_rhs, g, g_rhs).map_err(infeasible)?;
            Ok(ConstraintConfig::State(lc.with_labels(labels).map_err(|e| ctx.err(e.to_string()))?))
        }
        ModelConfig::Wave(_) => {
            let eq_labels = f.nrows();
            let mut lifted = LiftedConstraints::unconstrained(d, 0)
                .with_parameter_equalities(f, f_rhs)
                .with_parameter_inequalities(g, g_rhs);
            lifted.g_u_labels = Some(labels[eq_labels..].to_vec());
            lifted.parameter_constraints().map_err(infeasible)?;
            Ok(ConstraintConfig::Parameters(lifted))
        }
    }
}

fn bound_labels(names: &[&str]) -> Vec<String> {
    names
        .iter()
        .map(|n| format!("{n}>=lower"))
        .chain(names.iter().map(|n| format!("{n}<=upper")))
        .collect()
}
