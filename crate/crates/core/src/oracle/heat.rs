use std::f64::consts::PI;

use crate::error::{Error, Result};

/// In-place tridiagonal solve; `d` is overwritten by the solution.
fn thomas(lower: &[f64], diag: &[f64], upper: &[f64], d: &mut [f64], work: &mut [f64]) {
    let n = d.len();
    work[0] = upper[0] / diag[0];
    d[0] /= diag[0];
    for i in 1..n {
        let denom = diag[i] - lower[i] * work[i - 1];
        if i + 1 < n {
            work[i] = upper[i] / denom;
        }
        d[i] = (d[i] - lower[i] * d[i - 1]) / denom;
    }
    for i in (0..n - 1).rev() {
        d[i] -= work[i] * d[i + 1];
    }
}

/// Crank-Nicolson solution of `u_t = k u_xx` on `[0, 1]` with
/// `u_x(0, t) = 0` and `u_x(1, t) = flux_amplitude * sin(pi t)`, closed by
/// ghost points at both ends.
///
/// `u0` is given on the fine grid. Returns `steps` snapshots at
/// `t_i = i * horizon / steps`, `i = 1..=steps`. Each output interval is
/// split into equal substeps no longer than `dt`, which defaults to the
/// grid spacing.
pub fn solve_heat_1d_timedep(
    u0: &[f64],
    k: f64,
    flux_amplitude: f64,
    horizon: f64,
    steps: usize,
    dt: Option<f64>,
) -> Result<Vec<Vec<f64>>> {
    let n = u0.len();
    if n < 3 {
        return Err(Error::Grid(format!("heat solver needs at least 3 points, got {n}")));
    }
    if !(k > 0.0) || !(horizon > 0.0) || steps == 0 {
        return Err(Error::Spec(format!(
            "need k > 0, horizon > 0 and at least one output step; got k = {k}, horizon = {horizon}, steps = {steps}"
        )));
    }
    let m = n - 1;
    let h = 1.0 / m as f64;
    let dt = dt.unwrap_or(h);
    if !(dt > 0.0) {
        return Err(Error::Spec(format!("time step must be positive, got {dt}")));
    }
    let interval = horizon / steps as f64;
    let sub = (interval / dt).ceil().max(1.0) as usize;
    let tau = interval / sub as f64;
    let r = k * tau / (h * h);

    // L = tridiag(1, -2, 1) with reflected neighbours in the boundary rows
    let mut lower = vec![1.0; n];
    let mut upper = vec![1.0; n];
    upper[0] = 2.0;
    lower[m] = 2.0;
    let diag = vec![1.0 + r; n];
    let lower_a: Vec<f64> = lower.iter().map(|v| -0.5 * r * v).collect();
    let upper_a: Vec<f64> = upper.iter().map(|v| -0.5 * r * v).collect();
    let flux = |t: f64| flux_amplitude * (PI * t).sin();

    let mut u = u0.to_vec();
    let mut rhs = vec![0.0; n];
    let mut work = vec![0.0; n];
    let mut out = Vec::with_capacity(steps);
    let mut t = 0.0;
    for i in 1..=steps {
        for s in 0..sub {
            let t_next = if s + 1 == sub { i as f64 * interval } else { t + tau };
            for j in 0..n {
                let left = if j == 0 { upper[0] * u[1] } else { lower[j] * u[j - 1] };
                let right = if j == 0 || j == m { 0.0 } else { upper[j] * u[j + 1] };
                rhs[j] = u[j] + 0.5 * r * (left + right - 2.0 * u[j]);
            }
            // right ghost node u_{m+1} = u_{m-1} + 2 h g(t)
            rhs[m] += r * h * (flux(t) + flux(t_next));
            thomas(&lower_a, &diag, &upper_a, &mut rhs, &mut work);
            std::mem::swap(&mut u, &mut rhs);
            t = t_next;
        }
        if u.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericFault {
                context: "heat solver".into(),
            });
        }
        out.push(u.clone());
    }
    Ok(out)
}

/// `exp(-k (omega pi)^2 t) cos(omega pi x)`, the flux-free solution for `u0 = cos(omega pi x)`
/// with integer `omega`.
pub fn heat_mode_exact(k: f64, omega: f64, t: f64, x: f64) -> f64 {
    (-k * (omega * PI).powi(2) * t).exp() * (omega * PI * x).cos()
}
