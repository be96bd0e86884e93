use crate::error::{Error, Result};
use crate::transforms::kernels::{derivative_into, forward_into, inverse_into};
use crate::transforms::{BasisKind, SpectralCoeffs};

/// Default step as a fraction of [`split_step_dt_limit`]. Nonlinear
/// blow-up was observed from about a third of the linear limit, so this
/// keeps the default at least ten times below it.
pub const DEFAULT_DT_FACTOR: f64 = 0.025;

/// `|R(iy)|` for the RK4 stability polynomial.
fn rk4_gain(y: f64) -> f64 {
    let y2 = y * y;
    let y6 = y2 * y2 * y2;
    (1.0 - y6 / 72.0 + y6 * y2 / 576.0).max(0.0).sqrt()
}

/// Largest step for which every mode of the linearized split step,
/// `exp(-nu w^2 dt) |R(i umax w dt)|`, stays at or below one.
pub fn split_step_dt_limit(basis: BasisKind, nu: f64, modes: usize, umax: f64) -> f64 {
    let umax = umax.max(1e-12);
    let unstable = |dt: f64| {
        (0..modes).any(|i| {
            let w = basis.wavenumber(i);
            rk4_gain(umax * w * dt) * (-nu * w * w * dt).exp() > 1.0 + 1e-12
        })
    };
    let (mut lo, mut hi) = (0.0, 1e-8);
    while !unstable(hi) {
        lo = hi;
        hi *= 2.0;
        if hi > 1e3 {
            return hi;
        }
    }
    for _ in 0..50 {
        let mid = 0.5 * (lo + hi);
        if unstable(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    lo
}

fn is_smooth(mut n: usize) -> bool {
    for p in [2, 3, 5, 7] {
        while n % p == 0 {
            n /= p;
        }
    }
    n == 1
}

/// Interval count of the 3/2-padded quadrature grid.
fn padded_intervals(m: usize) -> usize {
    let mut mp = (3 * m).div_ceil(2);
    while !is_smooth(mp) {
        mp += 1;
    }
    mp
}

/// Strang-split pseudospectral solver for `u_t + u u_x = nu u_xx` in the
/// cosine (Neumann) or sine (Dirichlet) basis.
#[derive(Debug, Clone)]
pub struct BurgersSolver {
    basis: BasisKind,
    nu: f64,
    n_fine: usize,
    modes: usize,
    u: Vec<f64>,
    ux: Vec<f64>,
    full: Vec<f64>,
}

impl BurgersSolver {
    pub fn new(basis: BasisKind, nu: f64, n_fine: usize) -> Result<Self> {
        if basis == BasisKind::Waws {
            return Err(Error::Spec("Burgers solver supports the cosine and sine bases".into()));
        }
        if !(nu > 0.0) {
            return Err(Error::Spec(format!("viscosity must be positive, got {nu}")));
        }
        if n_fine < 5 {
            return Err(Error::Grid(format!("fine grid needs at least 5 points, got {n_fine}")));
        }
        let n_pad = padded_intervals(n_fine - 1) + 1;
        Ok(Self {
            basis,
            nu,
            n_fine,
            modes: basis.modes(n_fine),
            u: vec![0.0; n_pad],
            ux: vec![0.0; n_pad],
            full: vec![0.0; basis.modes(n_pad)],
        })
    }

    pub fn n_fine(&self) -> usize {
        self.n_fine
    }

    /// `-u u_x` projected onto the first `modes` coefficients.
    fn advection(&mut self, a: &[f64], out: &mut [f64]) {
        inverse_into(self.basis, a, &mut self.u);
        derivative_into(self.basis, a, &mut self.ux);
        for (u, ux) in self.u.iter_mut().zip(&self.ux) {
            *u *= -ux;
        }
        forward_into(self.basis, &self.u, &mut self.full);
        out.copy_from_slice(&self.full[..out.len()]);
    }

    fn diffuse(&self, a: &mut [f64], h: f64) {
        for (i, v) in a.iter_mut().enumerate() {
            let k = self.basis.wavenumber(i);
            *v *= (-self.nu * k * k * h).exp();
        }
    }

    fn rk4(&mut self, a: &mut [f64], dt: f64, k: &mut [Vec<f64>; 4], tmp: &mut [f64]) {
        let [k1, k2, k3, k4] = k;
        self.advection(a, k1);
        for i in 0..a.len() {
            tmp[i] = a[i] + 0.5 * dt * k1[i];
        }
        self.advection(tmp, k2);
        for i in 0..a.len() {
            tmp[i] = a[i] + 0.5 * dt * k2[i];
        }
        self.advection(tmp, k3);
        for i in 0..a.len() {
            tmp[i] = a[i] + dt * k3[i];
        }
        self.advection(tmp, k4);
        for i in 0..a.len() {
            a[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
    }

    /// Coefficients of `u0` sampled on the fine grid.
    pub fn project(&self, u0: &[f64]) -> Result<Vec<f64>> {
        if u0.len() != self.n_fine {
            return Err(Error::shape(format!(
                "initial condition has {} points, solver grid has {}",
                u0.len(),
                self.n_fine
            )));
        }
        let mut a = vec![0.0; self.modes];
        forward_into(self.basis, u0, &mut a);
        Ok(a)
    }

    /// Step used when none is requested, from the initial amplitude.
    pub fn default_dt(&self, a0: &[f64]) -> f64 {
        let mut u = vec![0.0; self.n_fine];
        inverse_into(self.basis, a0, &mut u);
        let umax = u.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        DEFAULT_DT_FACTOR * split_step_dt_limit(self.basis, self.nu, self.modes, umax)
    }

    /// Integrates from `t = 0` and returns coefficient snapshots at each of
    /// the increasing `times`. Each interval between output times is split
    /// into equal steps no longer than `dt`.
    pub fn solve(&mut self, a0: &[f64], times: &[f64], dt: f64) -> Result<Vec<Vec<f64>>> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::Spec(format!("time step must be positive, got {dt}")));
        }
        if a0.len() != self.modes {
            return Err(Error::shape("coefficient count does not match the solver grid"));
        }
        let mut prev = 0.0;
        for &t in times {
            if !(t > prev) || !t.is_finite() {
                return Err(Error::Spec(format!("output times must be positive and increasing, got {times:?}")));
            }
            prev = t;
        }
        let bound = 10.0 * a0.iter().map(|v| v.abs()).sum::<f64>() + 1e-300;
        let mut a = a0.to_vec();
        let mut ks: [Vec<f64>; 4] = std::array::from_fn(|_| vec![0.0; self.modes]);
        let mut tmp = vec![0.0; self.modes];
        let mut out = Vec::with_capacity(times.len());
        let mut t = 0.0;
        for &target in times {
            let steps = ((target - t) / dt).ceil().max(1.0) as usize;
            let h = (target - t) / steps as f64;
            for s in 0..steps {
                self.diffuse(&mut a, 0.5 * h);
                self.rk4(&mut a, h, &mut ks, &mut tmp);
                self.diffuse(&mut a, 0.5 * h);
                let size: f64 = a.iter().map(|v| v.abs()).sum();
                if !size.is_finite() || size > bound {
                    return Err(Error::Stability {
                        time: t + (s + 1) as f64 * h,
                        dt: h,
                        suggested_dt: h / 4.0,
                    });
                }
            }
            t = target;
            out.push(a.clone());
        }
        Ok(out)
    }
}

/// Solves viscous Burgers from `u0` given on an `n_fine`-point grid and
/// returns the solution at each of `times` as spectral coefficients.
pub fn solve_burgers_1d(
    u0: &[f64],
    nu: f64,
    basis: BasisKind,
    times: &[f64],
    dt: Option<f64>,
) -> Result<Vec<SpectralCoeffs>> {
    let mut solver = BurgersSolver::new(basis, nu, u0.len())?;
    let a0 = solver.project(u0)?;
    let dt = dt.unwrap_or_else(|| solver.default_dt(&a0));
    let snaps = solver.solve(&a0, times, dt)?;
    Ok(snaps
        .into_iter()
        .map(|coeffs| SpectralCoeffs {
            basis,
            coeffs,
            source_n: u0.len(),
        })
        .collect())
}

/// Samples an expansion on an `n_out`-point grid: by subsampling the fine
/// nodes when the grids nest, otherwise by direct evaluation of the series.
pub fn restrict(c: &SpectralCoeffs, n_out: usize) -> Result<Vec<f64>> {
    if n_out < 3 {
        return Err(Error::Grid(format!("output resolution {n_out} is below 3")));
    }
    let m_fine = c.source_n - 1;
    let m_out = n_out - 1;
    if m_fine % m_out == 0 {
        let mut fine = vec![0.0; c.source_n];
        inverse_into(c.basis, &c.coeffs, &mut fine);
        let stride = m_fine / m_out;
        return Ok((0..n_out).map(|j| fine[j * stride]).collect());
    }
    Ok((0..n_out).map(|j| c.eval_at(j as f64 / m_out as f64)).collect())
}
