//! Ultradian glucose-insulin model with meal forcing.
//!
//! State `[I_p, I_i, G, h_1, h_2, h_3]`; the filter works on the augmented
//! vector `[I_p, I_i, G, h_1, h_2, h_3, R_g]` where `R_g` is carried through
//! each interval unchanged.

use nalgebra::DVector;

use super::integrate::rk4;
use super::ModelError;

pub const STATE_DIM: usize = 6;
pub const AUGMENTED_DIM: usize = 7;
pub const GLUCOSE_INDEX: usize = 2;
pub const RG_INDEX: usize = 6;
pub const STATE_NAMES: [&str; AUGMENTED_DIM] = ["I_p", "I_i", "G", "h1", "h2", "h3", "R_g"];

/// Box bounds on the augmented state used for the glucose experiment.
pub const LOWER_BOUNDS: [f64; AUGMENTED_DIM] = [0.01, 0.01, 2000.0, 0.01, 0.01, 0.01, 0.0];
pub const UPPER_BOUNDS: [f64; AUGMENTED_DIM] = [10000.0, 10000.0, 40000.0, 10000.0, 10000.0, 10000.0, 1_000_000.0];

/// Rate and shape constants. Volumes in litres, times in minutes, insulin in
/// mU, glucose in mg.
#[derive(Debug, Clone, PartialEq)]
pub struct UltradianParams {
    pub v_p: f64,
    pub v_i: f64,
    pub v_g: f64,
    pub e: f64,
    pub t_p: f64,
    pub t_i: f64,
    pub t_d: f64,
    pub r_m: f64,
    pub a_1: f64,
    pub c_1: f64,
    pub c_2: f64,
    pub c_3: f64,
    pub c_4: f64,
    pub c_5: f64,
    pub u_b: f64,
    pub u_0: f64,
    pub u_m: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl Default for UltradianParams {
    /// Values from the original ultradian oscillator literature; the shipped
    /// config file repeats them so runs never depend on these constants silently.
    fn default() -> Self {
        UltradianParams {
            v_p: 3.0,
            v_i: 11.0,
            v_g: 10.0,
            e: 0.2,
            t_p: 6.0,
            t_i: 100.0,
            t_d: 12.0,
            r_m: 209.0,
            a_1: 6.6,
            c_1: 300.0,
            c_2: 144.0,
            c_3: 100.0,
            c_4: 80.0,
            c_5: 26.0,
            u_b: 72.0,
            u_0: 4.0,
            u_m: 94.0,
            alpha: 7.5,
            beta: 1.77,
        }
    }
}

impl UltradianParams {
    pub fn validate(&self) -> Result<(), ModelError> {
        let positive = [
            ("V_p", self.v_p),
            ("V_i", self.v_i),
            ("V_g", self.v_g),
            ("E", self.e),
            ("t_p", self.t_p),
            ("t_i", self.t_i),
            ("t_d", self.t_d),
            ("C_1", self.c_1),
            ("C_2", self.c_2),
            ("C_3", self.c_3),
            ("C_4", self.c_4),
            ("C_5", self.c_5),
            ("beta", self.beta),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(ModelError::Unphysical(format!("{name} must be positive, got {v}")));
            }
        }
        let rest = [self.r_m, self.a_1, self.u_b, self.u_0, self.u_m, self.alpha];
        if rest.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::Unphysical("non-finite rate constant".into()));
        }
        Ok(())
    }

    pub fn kappa(&self) -> f64 {
        (1.0 / self.c_4) * (1.0 / self.v_i - 1.0 / (self.e * self.t_i))
    }

    /// Glucose-dependent insulin production.
    pub fn f1(&self, g: f64) -> f64 {
        self.r_m / (1.0 + (-g / (self.v_g * self.c_1) + self.a_1).exp())
    }

    /// Insulin-independent glucose utilisation.
    pub fn f2(&self, g: f64) -> f64 {
        self.u_b * (1.0 - (-g / (self.c_2 * self.v_g)).exp())
    }

    /// Insulin-dependent utilisation rate; multiply by `G` for the flux.
    ///
    /// For `I_i <= 0` the power term is taken at its `I_i -> 0+` limit, which
    /// keeps the map defined on states an unconstrained update can produce.
    pub fn f3(&self, i_i: f64) -> f64 {
        let x = self.kappa() * i_i;
        let sat = if x > 0.0 { 1.0 / (1.0 + x.powf(-self.beta)) } else { 0.0 };
        (self.u_0 + (self.u_m - self.u_0) * sat) / (self.c_3 * self.v_g)
    }

    /// Delayed hepatic glucose production.
    pub fn f4(&self, h3: f64, r_g: f64) -> f64 {
        r_g / (1.0 + (self.alpha * (h3 / (self.c_5 * self.v_p) - 1.0)).exp())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Meal {
    /// Minutes.
    pub time: f64,
    /// Carbohydrate amount.
    pub carbs: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MealSchedule {
    meals: Vec<Meal>,
    /// Exponential decay constant `k` (1/min).
    pub decay: f64,
    /// Multiplier converting a meal's carbohydrate amount to glucose mass.
    pub scale: f64,
}

impl MealSchedule {
    pub fn new(meals: Vec<Meal>, decay: f64, scale: f64) -> Result<Self, ModelError> {
        if !(decay.is_finite() && decay > 0.0) {
            return Err(ModelError::Unphysical(format!("meal decay must be positive, got {decay}")));
        }
        if !scale.is_finite() {
            return Err(ModelError::Unphysical("meal scale is not finite".into()));
        }
        for w in meals.windows(2) {
            if w[1].time <= w[0].time {
                return Err(ModelError::Invalid(format!(
                    "meal times must be strictly increasing ({} then {})",
                    w[0].time, w[1].time
                )));
            }
        }
        if meals.iter().any(|m| !(m.time.is_finite() && m.carbs.is_finite())) {
            return Err(ModelError::Invalid("non-finite meal entry".into()));
        }
        Ok(MealSchedule { meals, decay, scale })
    }

    pub fn empty(decay: f64) -> Self {
        MealSchedule {
            meals: Vec::new(),
            decay,
            scale: 1.0,
        }
    }

    pub fn meals(&self) -> &[Meal] {
        &self.meals
    }
}

/// Glucose appearance rate from meals strictly before `t`.
pub fn meal_forcing(t: f64, schedule: &MealSchedule) -> f64 {
    let k = schedule.decay;
    schedule
        .meals
        .iter()
        .take_while(|m| m.time < t)
        .map(|m| schedule.scale * m.carbs * k / 60.0 * (k * (m.time - t)).exp())
        .sum()
}

/// Right-hand side of the six-state system with hepatic production scale `r_g`.
pub fn ultradian_rhs(x: &[f64], t: f64, r_g: f64, p: &UltradianParams, schedule: &MealSchedule) -> [f64; STATE_DIM] {
    let (ip, ii, g, h1, h2, h3) = (x[0], x[1], x[2], x[3], x[4], x[5]);
    let exchange = p.e * (ip / p.v_p - ii / p.v_i);
    [
        p.f1(g) - exchange - ip / p.t_p,
        exchange - ii / p.t_i,
        p.f4(h3, r_g) + meal_forcing(t, schedule) - p.f2(g) - p.f3(ii) * g,
        (ip - h1) / p.t_d,
        (h1 - h2) / p.t_d,
        (h2 - h3) / p.t_d,
    ]
}

/// Deterministic interval map on the augmented state.
#[derive(Debug, Clone)]
pub struct UltradianModel {
    pub params: UltradianParams,
    pub schedule: MealSchedule,
    /// Largest RK4 substep (min).
    pub dt_max: f64,
}

impl UltradianModel {
    pub fn new(params: UltradianParams, schedule: MealSchedule, dt_max: f64) -> Result<Self, ModelError> {
        params.validate()?;
        if !(dt_max.is_finite() && dt_max > 0.0) {
            return Err(ModelError::Invalid(format!("dt_max must be positive, got {dt_max}")));
        }
        Ok(UltradianModel {
            params,
            schedule,
            dt_max,
        })
    }

    /// Integrate the six ODE states over `[t0, t1]`, passing `R_g` through.
    ///
    /// The interval is split at meal onsets so each RK4 segment has a smooth
    /// right-hand side.
    pub fn psi(&self, v: &DVector<f64>, t0: f64, t1: f64) -> Result<DVector<f64>, ModelError> {
        if v.len() != AUGMENTED_DIM {
            return Err(ModelError::Invalid(format!(
                "augmented state has length {}, expected {AUGMENTED_DIM}",
                v.len()
            )));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(ModelError::NonFinite { time: t0 });
        }
        let r_g = v[RG_INDEX];
        let rhs = |t: f64, x: &DVector<f64>| {
            DVector::from_row_slice(&ultradian_rhs(x.as_slice(), t, r_g, &self.params, &self.schedule))
        };
        let mut x = v.rows(0, STATE_DIM).into_owned();
        let mut t = t0;
        let cuts = self.schedule.meals.iter().map(|m| m.time).filter(|&tm| tm > t0 && tm < t1);
        for stop in cuts.chain(std::iter::once(t1)) {
            x = rk4(rhs, &x, t, stop, self.dt_max)?;
            t = stop;
        }
        let mut out = v.clone();
        out.rows_mut(0, STATE_DIM).copy_from(&x);
        Ok(out)
    }

    /// A resting state: the trajectory from `state` after `minutes` without meals.
    pub fn settle(&self, state: &DVector<f64>, minutes: f64) -> Result<DVector<f64>, ModelError> {
        let quiet = UltradianModel {
            params: self.params.clone(),
            schedule: MealSchedule::empty(self.schedule.decay),
            dt_max: self.dt_max,
        };
        quiet.psi(state, 0.0, minutes)
    }
}
