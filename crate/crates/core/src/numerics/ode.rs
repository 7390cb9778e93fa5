//! Fixed-step classical Runge-Kutta for scalar initial value problems.

use crate::{Error, Result};

/// Integrates `y' = f(x, y)` from `(x0, y0)` to `x1` with `steps` RK4 steps.
pub fn rk4_scalar<F>(f: F, x0: f64, y0: f64, x1: f64, steps: usize) -> Result<f64>
where
    F: Fn(f64, f64) -> f64,
{
    if steps == 0 {
        return Err(Error::InvalidParameter("RK4 needs at least one step".into()));
    }
    let h = (x1 - x0) / steps as f64;
    let field = |x: f64, y: f64| -> Result<f64> {
        let v = f(x, y);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFiniteVectorField { at: x })
        }
    };
    let mut y = y0;
    for i in 0..steps {
        let x = x0 + h * i as f64;
        let k1 = field(x, y)?;
        let k2 = field(x + 0.5 * h, y + 0.5 * h * k1)?;
        let k3 = field(x + 0.5 * h, y + 0.5 * h * k2)?;
        let k4 = field(x + h, y + h * k3)?;
        y += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    Ok(y)
}

/// Classical RK4 over an explicit, possibly uneven, increasing mesh.
pub fn rk4_scalar_mesh<F>(f: F, mesh: &[f64], y0: f64) -> Result<f64>
where
    F: Fn(f64, f64) -> f64,
{
    if mesh.len() < 2 || mesh.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::InvalidParameter("RK4 mesh needs two or more increasing nodes".into()));
    }
    let field = |x: f64, y: f64| -> Result<f64> {
        let v = f(x, y);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::NonFiniteVectorField { at: x })
        }
    };
    let mut y = y0;
    for w in mesh.windows(2) {
        let (x, h) = (w[0], w[1] - w[0]);
        let k1 = field(x, y)?;
        let k2 = field(x + 0.5 * h, y + 0.5 * h * k1)?;
        let k3 = field(x + 0.5 * h, y + 0.5 * h * k2)?;
        let k4 = field(w[1], y + h * k3)?;
        y += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    Ok(y)
}

/// Solves `G'(m) = g(m)`, `G(m0) = 0` and returns `G(m1)`.
pub fn ode_solve_scalar<F>(g: F, m0: f64, m1: f64, steps: usize) -> Result<f64>
where
    F: Fn(f64) -> f64,
{
    if !(m0 < m1) {
        return Err(Error::InvalidParameter(format!(
            "ODE interval must satisfy m0 < m1, got [{m0}, {m1}]"
        )));
    }
    rk4_scalar(|m, _| g(m), m0, 0.0, m1, steps)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uneven_mesh_matches_uniform() {
        let mesh: Vec<f64> = (0..=64).map(|i| (i as f64 / 64.0).powi(2)).collect();
        let v = rk4_scalar_mesh(|x, _| x.cos(), &mesh, 0.0).unwrap();
        assert!((v - 1f64.sin()).abs() < 1e-9);
        assert!(rk4_scalar_mesh(|_, y| y, &[0.0, 0.0], 1.0).is_err());
    }

    #[test]
    fn zero_field() {
        assert_eq!(ode_solve_scalar(|_| 0.0, -3.0, -0.5, 10).unwrap(), 0.0);
    }

    #[test]
    fn unit_field() {
        let v = ode_solve_scalar(|_| 1.0, -2.0, -1.0, 100).unwrap();
        assert!((v - 1.0).abs() < 1e-12);
    }

    #[test]
    fn linear_field() {
        // antiderivative m^2 / 2 between -1 and 0
        let v = ode_solve_scalar(|m| m, -1.0, 0.0, 256).unwrap();
        assert!((v + 0.5).abs() < 1e-12);
    }

    #[test]
    fn fourth_order_convergence() {
        let exact = 1f64.exp();
        let err = |n| (rk4_scalar(|_, y| y, 0.0, 1.0, 1.0, n).unwrap() - exact).abs();
        for n in [8, 16, 32] {
            let ratio = err(n) / err(2 * n);
            assert!((12.0..=20.0).contains(&ratio), "n = {n}: ratio {ratio}");
        }
        let g = |m: f64| (3.0 * m).cos();
        let exact = ((3.0f64 * 0.5).sin() - (3.0f64 * -1.0).sin()) / 3.0;
        let err = |n| (ode_solve_scalar(g, -1.0, 0.5, n).unwrap() - exact).abs();
        let ratio = err(16) / err(32);
        assert!((12.0..=20.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn non_finite_field_is_reported() {
        let err = ode_solve_scalar(|m| 1.0 / (m + 0.5), -1.0, 0.0, 2).unwrap_err();
        assert!(matches!(err, Error::NonFiniteVectorField { .. }));
    }
}
