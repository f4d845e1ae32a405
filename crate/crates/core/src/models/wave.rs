//! 1-D shear-wave propagation through a horizontally layered soil column.
//!
//! Solves `d/dz (c_s(z)^2 dd/dz) = d^2 d/dt^2` on `0 < z < H` with prescribed
//! displacement `d(H, t) = d_0(t)`, a stress-free surface `dd/dz(0, t) = 0` and
//! zero initial data. Space uses a flux-form centred difference with `c_s^2`
//! sampled at cell midpoints and a ghost node at the surface; time uses
//! leapfrog. The observable is the surface acceleration.

use nalgebra::DVector;

use super::ModelError;

pub const PARAM_NAMES: [&str; 6] = ["cs0", "k", "z0", "n", "z1", "alpha"];

/// Relative slack on the depth ordering `0 <= z0 <= z1 <= H`.
pub const GEOMETRY_TOL: f64 = 1e-9;

/// Parameters of the three-piece velocity profile.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WaveParams {
    /// Surface velocity (m/s).
    pub cs0: f64,
    /// Gradient scale (1/m).
    pub k: f64,
    /// Depth where the gradient zone starts (m).
    pub z0: f64,
    /// Gradient exponent.
    pub n: f64,
    /// Depth of the velocity jump (m).
    pub z1: f64,
    /// Velocity ratio across the jump.
    pub alpha: f64,
}

impl WaveParams {
    pub fn from_slice(u: &[f64]) -> Result<Self, ModelError> {
        if u.len() != 6 {
            return Err(ModelError::Invalid(format!("wave parameter vector has length {}, expected 6", u.len())));
        }
        Ok(WaveParams {
            cs0: u[0],
            k: u[1],
            z0: u[2],
            n: u[3],
            z1: u[4],
            alpha: u[5],
        })
    }

    pub fn to_vector(&self) -> DVector<f64> {
        DVector::from_vec(vec![self.cs0, self.k, self.z0, self.n, self.z1, self.alpha])
    }

    /// Velocity at the top of the gradient zone's lower end, `c_s0 (1 + k (z1 - z0))^n`.
    fn gradient_top(&self) -> f64 {
        self.cs0 * (1.0 + self.k * (self.z1 - self.z0)).powf(self.n)
    }

    /// Velocity just below the jump at `z1`, `alpha c_s0 (1 + k (z1 - z0))^n`.
    pub fn cs_below_z1(&self) -> f64 {
        self.alpha * self.gradient_top()
    }

    /// Velocity at depth `z`, without range checks.
    fn eval(&self, z: f64) -> f64 {
        if z <= self.z0 {
            self.cs0
        } else if z <= self.z1 {
            self.cs0 * (1.0 + self.k * (z - self.z0)).powf(self.n)
        } else {
            self.cs_below_z1()
        }
    }

    /// Refuse parameter sets the profile formula cannot represent physically.
    pub fn check(&self, depth: f64) -> Result<(), ModelError> {
        let v = [self.cs0, self.k, self.z0, self.n, self.z1, self.alpha];
        if v.iter().any(|x| !x.is_finite()) {
            return Err(ModelError::Unphysical("non-finite profile parameter".into()));
        }
        // Depth ordering is checked with the same relative slack the constraint
        // handling allows, so QP round-off on an active row is not refused.
        let slack = |x: f64| GEOMETRY_TOL * (1.0 + x.abs());
        if self.z0 < -slack(0.0) {
            return Err(ModelError::Unphysical(format!("z0 = {} is above the surface", self.z0)));
        }
        if self.z1 < self.z0 - slack(self.z0) {
            return Err(ModelError::Unphysical(format!("z1 = {} lies above z0 = {}", self.z1, self.z0)));
        }
        if self.z1 > depth + slack(depth) {
            return Err(ModelError::Unphysical(format!("z1 = {} lies below the column depth {depth}", self.z1)));
        }
        for c in [self.cs0, self.gradient_top(), self.cs_below_z1()] {
            if !(c.is_finite() && c > 0.0) {
                return Err(ModelError::Unphysical(format!("shear velocity {c} is not positive")));
            }
        }
        Ok(())
    }

    /// Largest velocity anywhere in the column.
    pub fn max_velocity(&self) -> f64 {
        self.cs0.max(self.gradient_top()).max(self.cs_below_z1())
    }
}

/// Shear velocity at depth `z` in a column of depth `depth`.
pub fn cs_profile(z: f64, p: &WaveParams, depth: f64) -> Result<f64, ModelError> {
    if !(0.0..=depth).contains(&z) {
        return Err(ModelError::Invalid(format!("depth {z} outside [0, {depth}]")));
    }
    Ok(p.eval(z))
}

/// Spatial grid, output sampling and time-step policy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WaveGrid {
    /// Column depth `H` (m).
    pub depth: f64,
    /// Number of cells; nodes are `z_i = i H / cells`.
    pub cells: usize,
    /// Output sampling interval (s).
    pub dt_out: f64,
    /// Number of output samples, at `t_k = k dt_out`, `k = 1..=samples`.
    pub samples: usize,
    /// Courant number used to pick the internal step.
    pub courant: f64,
    /// Refuse runs needing more internal steps per output sample than this.
    pub max_substeps: u64,
}

impl WaveGrid {
    pub fn dz(&self) -> f64 {
        self.depth / self.cells as f64
    }

    pub fn horizon(&self) -> f64 {
        self.dt_out * self.samples as f64
    }

    pub fn output_times(&self) -> Vec<f64> {
        (1..=self.samples).map(|k| k as f64 * self.dt_out).collect()
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.depth.is_finite() && self.depth > 0.0) {
            return Err(ModelError::Invalid(format!("column depth {}", self.depth)));
        }
        if self.cells < 2 || self.samples == 0 {
            return Err(ModelError::Invalid("grid needs at least 2 cells and 1 sample".into()));
        }
        if !(self.dt_out.is_finite() && self.dt_out > 0.0) {
            return Err(ModelError::Invalid(format!("output interval {}", self.dt_out)));
        }
        if !(self.courant > 0.0 && self.courant <= 1.0) {
            return Err(ModelError::Invalid(format!("Courant number {} outside (0, 1]", self.courant)));
        }
        Ok(())
    }

    /// Internal steps per output sample needed for stability at velocity `c_max`.
    pub fn substeps(&self, c_max: f64) -> Result<u64, ModelError> {
        let m = (self.dt_out * c_max / (self.courant * self.dz())).ceil().max(1.0);
        if !m.is_finite() || m > self.max_substeps as f64 {
            return Err(ModelError::Cfl {
                required: if m.is_finite() { m as u64 } else { u64::MAX },
                limit: self.max_substeps,
            });
        }
        Ok(m as u64)
    }
}

/// Ricker wavelet `A (1 - 2 a^2) exp(-a^2)` with `a = pi f (t - t0)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ricker {
    pub amplitude: f64,
    pub frequency: f64,
    pub delay: f64,
}

impl Ricker {
    /// Delay of `1.5 / f`, so the wavelet starts from rest to round-off.
    pub fn new(amplitude: f64, frequency: f64) -> Self {
        Ricker {
            amplitude,
            frequency,
            delay: 1.5 / frequency,
        }
    }

    pub fn value(&self, t: f64) -> f64 {
        let a = std::f64::consts::PI * self.frequency * (t - self.delay);
        let a2 = a * a;
        self.amplitude * (1.0 - 2.0 * a2) * (-a2).exp()
    }

    pub fn second_derivative(&self, t: f64) -> f64 {
        let w = std::f64::consts::PI * self.frequency;
        let a = w * (t - self.delay);
        let a2 = a * a;
        self.amplitude * w * w * (-8.0 * a2 * a2 + 24.0 * a2 - 6.0) * (-a2).exp()
    }
}

/// Surface displacement and acceleration at the output times.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceResponse {
    pub times: Vec<f64>,
    pub displacement: Vec<f64>,
    pub acceleration: Vec<f64>,
}

pub fn simulate_surface<F>(p: &WaveParams, grid: &WaveGrid, input: F) -> Result<SurfaceResponse, ModelError>
where
    F: Fn(f64) -> f64,
{
    grid.validate()?;
    p.check(grid.depth)?;
    let m = grid.cells;
    let dz = grid.dz();
    // c^2 at midpoints z_{i+1/2}, i = 0..m-1.
    let c2: Vec<f64> = (0..m)
        .map(|i| {
            let c = p.eval((i as f64 + 0.5) * dz);
            c * c
        })
        .collect();
    let c_max = c2.iter().fold(0.0_f64, |a, &b| a.max(b)).sqrt().max(p.max_velocity());
    let sub = grid.substeps(c_max)?;
    let dt = grid.dt_out / sub as f64;
    let r = dt * dt / (dz * dz);

    let mut prev = vec![0.0; m + 1];
    let mut cur = vec![0.0; m + 1];
    let mut next = vec![0.0; m + 1];
    let mut lap = vec![0.0; m + 1];
    let mut times = Vec::with_capacity(grid.samples);
    let mut displacement = Vec::with_capacity(grid.samples);
    let mut acceleration = Vec::with_capacity(grid.samples);

    let total = sub * grid.samples as u64;
    for step in 0..total {
        laplacian(&c2, &cur, &mut lap);
        for i in 0..m {
            next[i] = 2.0 * cur[i] - prev[i] + r * lap[i];
        }
        let t_next = (step + 1) as f64 * dt;
        next[m] = input(t_next);
        std::mem::swap(&mut prev, &mut cur);
        std::mem::swap(&mut cur, &mut next);
        if (step + 1) % sub == 0 {
            laplacian(&c2, &cur, &mut lap);
            let acc = lap[0] / (dz * dz);
            if !(acc.is_finite() && cur[0].is_finite()) {
                return Err(ModelError::NonFinite { time: t_next });
            }
            times.push(((step + 1) / sub) as f64 * grid.dt_out);
            displacement.push(cur[0]);
            acceleration.push(acc);
        }
    }
    Ok(SurfaceResponse {
        times,
        displacement,
        acceleration,
    })
}

/// Undivided flux-form operator: `lap[i] * dz^2 ≈ d/dz (c^2 dd/dz)` at interior nodes and the surface.
fn laplacian(c2: &[f64], d: &[f64], lap: &mut [f64]) {
    let m = c2.len();
    lap[0] = 2.0 * c2[0] * (d[1] - d[0]);
    for i in 1..m {
        lap[i] = c2[i] * (d[i + 1] - d[i]) - c2[i - 1] * (d[i] - d[i - 1]);
    }
    lap[m] = 0.0;
}

/// Surface acceleration time series, the forward map of the inversion.
pub fn wave_forward<F>(p: &WaveParams, grid: &WaveGrid, input: F) -> Result<DVector<f64>, ModelError>
where
    F: Fn(f64) -> f64,
{
    Ok(DVector::from_vec(simulate_surface(p, grid, input)?.acceleration))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layered() -> WaveParams {
        WaveParams {
            cs0: 300.0,
            k: 0.5,
            z0: 4.0,
            n: 0.5,
            z1: 18.0,
            alpha: 1.8,
        }
    }

    fn homogeneous(c: f64) -> WaveParams {
        WaveParams {
            cs0: c,
            k: 0.0,
            z0: 0.0,
            n: 1.0,
            z1: 0.0,
            alpha: 1.0,
        }
    }

    fn grid(cells: usize) -> WaveGrid {
        WaveGrid {
            depth: 30.0,
            cells,
            dt_out: 0.002,
            samples: 150,
            courant: 0.9,
            max_substeps: 10_000,
        }
    }

    #[test]
    fn profile_pieces() {
        let p = layered();
        let h = 30.0;
        assert_eq!(cs_profile(1.0, &p, h).unwrap(), 300.0);
        assert_eq!(cs_profile(p.z0, &p, h).unwrap(), p.cs0);
        let above = cs_profile(p.z1, &p, h).unwrap();
        let below = cs_profile(p.z1 + 1e-9, &p, h).unwrap();
        assert_eq!(below / above, p.alpha);
        assert_eq!(cs_profile(29.0, &p, h).unwrap(), 1.8 * 300.0 * (1.0f64 + 0.5 * 14.0).sqrt());
        assert!(cs_profile(31.0, &p, h).is_err());
        assert!(cs_profile(-0.1, &p, h).is_err());
    }

    #[test]
    fn refuses_unphysical_parameters() {
        let h = 30.0;
        let bad = [
            WaveParams { cs0: -10.0, ..layered() },
            WaveParams { z0: -1.0, ..layered() },
            WaveParams { z1: 2.0, ..layered() },
            WaveParams { z1: 31.0, ..layered() },
            WaveParams { k: -1.0, ..layered() },
            WaveParams { alpha: f64::NAN, ..layered() },
        ];
        for p in bad {
            assert!(matches!(p.check(h), Err(ModelError::Unphysical(_))), "{p:?}");
        }
        assert!(layered().check(h).is_ok());
    }

    #[test]
    fn refuses_excessive_substeps() {
        let g = WaveGrid {
            max_substeps: 4,
            ..grid(60)
        };
        let r = wave_forward(&layered(), &g, |t| Ricker::new(1.0, 15.0).value(t));
        assert!(matches!(r, Err(ModelError::Cfl { .. })));
    }

    #[test]
    fn zero_input_gives_zero_output() {
        let out = wave_forward(&layered(), &grid(60), |_| 0.0).unwrap();
        assert!(out.iter().all(|&a| a == 0.0));
    }

    #[test]
    fn linear_in_input() {
        let w = Ricker::new(1.0, 15.0);
        let a = wave_forward(&layered(), &grid(60), |t| w.value(t)).unwrap();
        let b = wave_forward(&layered(), &grid(60), |t| 3.5 * w.value(t)).unwrap();
        assert!((b - a.clone() * 3.5).amax() <= 1e-10 * a.amax() * 3.5);
    }

    fn homogeneous_error(cells: usize) -> f64 {
        let c = 300.0;
        let w = Ricker::new(1.0, 15.0);
        let g = grid(cells);
        let s = simulate_surface(&homogeneous(c), &g, |t| w.value(t)).unwrap();
        let travel = g.depth / c;
        let mut err = 0.0_f64;
        let mut peak = 0.0_f64;
        for (t, d) in s.times.iter().zip(&s.displacement) {
            if *t < 3.0 * travel {
                let exact = 2.0 * w.value(t - travel);
                err = err.max((d - exact).abs());
                peak = peak.max(exact.abs());
            }
        }
        err / peak
    }

    #[test]
    fn homogeneous_column_matches_travelling_wave() {
        let e1 = homogeneous_error(60);
        let e2 = homogeneous_error(120);
        assert!(e1 <= 0.02, "error {e1}");
        assert!(e1 / e2 >= 3.0, "refinement ratio {}", e1 / e2);
    }

    #[test]
    fn ricker_second_derivative_matches_finite_difference() {
        let w = Ricker::new(2.0, 12.0);
        let h = 1e-5;
        for t in [0.05, 0.1, 0.125, 0.2] {
            let fd = (w.value(t + h) - 2.0 * w.value(t) + w.value(t - h)) / (h * h);
            assert!((fd - w.second_derivative(t)).abs() < 1e-4 * w.second_derivative(0.125).abs());
        }
    }
}
