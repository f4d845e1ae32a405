//! Classical fourth-order Runge-Kutta with uniform substeps.

use nalgebra::DVector;

use super::ModelError;

/// Integrate `dx/dt = rhs(t, x)` from `t0` to `t1` with `ceil((t1 - t0) / dt_max)`
/// equal RK4 steps, so the interval is covered exactly.
pub fn rk4<F>(rhs: F, x0: &DVector<f64>, t0: f64, t1: f64, dt_max: f64) -> Result<DVector<f64>, ModelError>
where
    F: Fn(f64, &DVector<f64>) -> DVector<f64>,
{
    if !(t0.is_finite() && t1.is_finite()) || t1 < t0 {
        return Err(ModelError::Invalid(format!("integration interval [{t0}, {t1}]")));
    }
    if !(dt_max > 0.0 && dt_max.is_finite()) {
        return Err(ModelError::Invalid(format!("maximum step {dt_max}")));
    }
    let mut x = x0.clone();
    if t1 == t0 {
        return Ok(x);
    }
    let steps = ((t1 - t0) / dt_max).ceil().max(1.0) as usize;
    let h = (t1 - t0) / steps as f64;
    for i in 0..steps {
        let t = t0 + i as f64 * h;
        let k1 = rhs(t, &x);
        let k2 = rhs(t + 0.5 * h, &(&x + &k1 * (0.5 * h)));
        let k3 = rhs(t + 0.5 * h, &(&x + &k2 * (0.5 * h)));
        let k4 = rhs(t + h, &(&x + &k3 * h));
        x += (k1 + (k2 + k3) * 2.0 + k4) * (h / 6.0);
        if x.iter().any(|v| !v.is_finite()) {
            return Err(ModelError::NonFinite { time: t + h });
        }
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn exp_error(dt: f64) -> f64 {
        let x = rk4(|_, x| x.clone(), &DVector::from_element(1, 1.0), 0.0, 1.0, dt).unwrap();
        (x[0] - std::f64::consts::E).abs()
    }

    #[test]
    fn zero_rhs_is_identity() {
        let x0 = DVector::from_vec(vec![1.0, -2.0]);
        let x = rk4(|_, x| DVector::zeros(x.len()), &x0, 0.0, 5.0, 0.1).unwrap();
        assert_eq!(x, x0);
    }

    #[test]
    fn exponential_growth() {
        assert!(exp_error(1e-3) < 1e-9);
    }

    #[test]
    fn fourth_order_convergence() {
        let (e1, e2) = (exp_error(0.1), exp_error(0.05));
        let order = (e1 / e2).log2();
        assert!((3.7..=4.3).contains(&order), "order {order}");
        assert!(e1 / e2 > 14.0);
    }

    #[test]
    fn covers_interval_exactly() {
        // dx/dt = 1 is integrated exactly whatever the step count.
        let x = rk4(|_, _| DVector::from_element(1, 1.0), &DVector::zeros(1), 0.3, 1.0, 0.25).unwrap();
        assert!((x[0] - 0.7).abs() < 1e-15);
    }

    #[test]
    fn blow_up_reports_time() {
        let r = rk4(|_, x| x.map(|v| v * v * 1e300), &DVector::from_element(1, 1.0), 0.0, 1.0, 0.1);
        assert!(matches!(r, Err(ModelError::NonFinite { .. })));
    }

    #[test]
    fn rejects_reversed_interval() {
        assert!(rk4(|_, x| x.clone(), &DVector::zeros(1), 1.0, 0.0, 0.1).is_err());
    }
}
