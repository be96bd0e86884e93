//! Fast semi-periodic transform kernels.
//!
//! Conventions for a grid of `n` points, `m = n - 1` intervals:
//!
//! * Cosine: modes `k = 0..=m`, all nodes.
//! * Sine: modes `k = 1..m` stored at index `k - 1`, interior nodes only.
//! * Waws: modes `sin((k + 1/2) pi x)`, `k = 0..m`, nodes `1..=m`.
//!
//! Forward maps use interpolation normalization. Each forward/inverse pair
//! also has an adjoint (the transpose of its matrix), computed with the same
//! FFT path and endpoint reweighting.

use std::f64::consts::PI;

use super::BasisKind;
use crate::fft::{real_fft, C64};

/// `y_j = sum_{k=0}^{m} z(k) cos(pi j k / m)`, `j = 0..y.len()`.
fn cos_raw(m: usize, z: impl Fn(usize) -> f64, y: &mut [f64]) {
    real_fft(2 * m).with_spectrum(
        |ext| {
            ext[0] = z(0);
            ext[m] = z(m);
            for k in 1..m {
                let v = 0.5 * z(k);
                ext[k] = v;
                ext[2 * m - k] = v;
            }
        },
        |spec| {
            for (out, s) in y.iter_mut().zip(spec) {
                *out = s.re;
            }
        },
    );
}

/// `y_j = sum_{k=1}^{m-1} z(k - 1) sin(pi j k / m)`, `j = 1..=y.len()`, written to `y[j-1]`.
fn sin_raw(m: usize, z: impl Fn(usize) -> f64, y: &mut [f64]) {
    real_fft(2 * m).with_spectrum(
        |ext| {
            for k in 1..m {
                let v = z(k - 1);
                ext[k] = v;
                ext[2 * m - k] = -v;
            }
        },
        |spec| {
            for (out, s) in y.iter_mut().zip(&spec[1..]) {
                *out = -0.5 * s.im;
            }
        },
    );
}

/// `a_k = sum_{j=1}^{m} u(j) sin(pi (2k+1) j / 2m)`, `k = 0..a.len()`.
///
/// With `theta_j = pi j / 2m` the kernel is `sin(pi k j / m + theta_j)`, so
/// the sine part (weights `u_j cos theta_j`) and the cosine part (weights
/// `u_j sin theta_j`) share one real FFT of length `2m`.
fn waws_analysis(m: usize, u: impl Fn(usize) -> f64, a: &mut [f64]) {
    let plan = real_fft(2 * m);
    let tw = plan.half_angle_twiddles();
    plan.with_spectrum(
        |g| {
            for j in 1..m {
                let v = u(j);
                let p = v * tw[j].re;
                let q = -v * tw[j].im;
                g[j] = 0.5 * (q - p);
                g[2 * m - j] = 0.5 * (q + p);
            }
            g[m] = u(m);
        },
        |spec| {
            for (out, s) in a.iter_mut().zip(spec) {
                *out = s.re + s.im;
            }
        },
    );
}

/// Calls `emit(j, z_j)` for `j = 0..=m` with
/// `z_j = conj(sum_{k=0}^{m-1} c(k) e^{i pi (2k+1) j / 2m})`.
fn waws_rotated(m: usize, c: impl Fn(usize) -> f64, mut emit: impl FnMut(usize, C64)) {
    let plan = real_fft(2 * m);
    let tw = plan.half_angle_twiddles();
    plan.with_spectrum(
        |g| {
            for (k, v) in g[..m].iter_mut().enumerate() {
                *v = c(k);
            }
        },
        |spec| {
            for (j, (s, t)) in spec.iter().zip(tw).enumerate() {
                emit(j, s * t);
            }
        },
    );
}

/// `y_j = sum_{k=0}^{m-1} c(k) sin(pi (2k+1) j / 2m)`, `j = 0..=m`; `y_0 = 0`.
fn waws_synthesis(m: usize, c: impl Fn(usize) -> f64, y: &mut [f64]) {
    waws_rotated(m, c, |j, z| y[j] = -z.im);
    y[0] = 0.0;
}

/// `y_j = sum_{k=0}^{m-1} d(k) cos(pi (2k+1) j / 2m)`, `j = 0..=m`.
fn waws_cos_synthesis(m: usize, d: impl Fn(usize) -> f64, y: &mut [f64]) {
    waws_rotated(m, d, |j, z| y[j] = z.re);
}

/// Entry `k` of `c`, zero past its end.
fn padded(c: &[f64]) -> impl Fn(usize) -> f64 + '_ {
    |k| c.get(k).copied().unwrap_or(0.0)
}

fn endpoint_weight(j: usize, m: usize) -> f64 {
    if j == 0 || j == m {
        0.5
    } else {
        1.0
    }
}

/// Grid values `f` (length n) to coefficients `c` (length `basis.modes(n)`).
pub(crate) fn forward_into(basis: BasisKind, f: &[f64], c: &mut [f64]) {
    let n = f.len();
    let m = n - 1;
    let scale = 2.0 / m as f64;
    match basis {
        BasisKind::Cosine => {
            cos_raw(m, |j| endpoint_weight(j, m) * f[j], c);
            for (k, ck) in c.iter_mut().enumerate() {
                *ck *= scale * endpoint_weight(k, m);
            }
        }
        BasisKind::Sine => {
            sin_raw(m, |i| f[i + 1], c);
            c.iter_mut().for_each(|v| *v *= scale);
        }
        BasisKind::Waws => {
            waws_analysis(m, |j| if j == m { 0.5 * f[j] } else { f[j] }, c);
            c.iter_mut().for_each(|v| *v *= scale);
        }
    }
}

/// Transpose of [`forward_into`]: coefficient-space `g` to grid-space `out`.
pub(crate) fn forward_adjoint_into(basis: BasisKind, g: &[f64], out: &mut [f64]) {
    let n = out.len();
    let m = n - 1;
    let scale = 2.0 / m as f64;
    match basis {
        BasisKind::Cosine => {
            cos_raw(m, |k| scale * endpoint_weight(k, m) * g[k], out);
            for (j, v) in out.iter_mut().enumerate() {
                *v *= endpoint_weight(j, m);
            }
        }
        BasisKind::Sine => {
            out[0] = 0.0;
            out[m] = 0.0;
            sin_raw(m, |i| g[i], &mut out[1..m]);
            out[1..m].iter_mut().for_each(|v| *v *= scale);
        }
        BasisKind::Waws => {
            waws_synthesis(m, |k| g[k], out);
            for j in 1..=m {
                let weight = if j == m { 0.5 } else { 1.0 };
                out[j] *= scale * weight;
            }
        }
    }
}

/// Evaluates coefficients `c` (length <= `basis.modes(out.len())`) on the grid.
pub(crate) fn inverse_into(basis: BasisKind, c: &[f64], out: &mut [f64]) {
    let n = out.len();
    debug_assert!(c.len() <= basis.modes(n));
    let m = n - 1;
    match basis {
        BasisKind::Cosine => cos_raw(m, padded(c), out),
        BasisKind::Sine => {
            out[0] = 0.0;
            out[m] = 0.0;
            sin_raw(m, padded(c), &mut out[1..m]);
        }
        BasisKind::Waws => waws_synthesis(m, padded(c), out),
    }
}

/// Transpose of [`inverse_into`]: grid-space `g` to the first `out.len()` coefficients.
pub(crate) fn inverse_adjoint_into(basis: BasisKind, g: &[f64], out: &mut [f64]) {
    let m = g.len() - 1;
    match basis {
        BasisKind::Cosine => cos_raw(m, |j| g[j], out),
        BasisKind::Sine => sin_raw(m, |i| g[i + 1], out),
        BasisKind::Waws => waws_analysis(m, |j| g[j], out),
    }
}

/// Derivative of the expansion `c`, sampled on the `out.len()`-point grid.
pub(crate) fn derivative_into(basis: BasisKind, c: &[f64], out: &mut [f64]) {
    let n = out.len();
    let m = n - 1;
    match basis {
        // d/dx sin(k pi x) = k pi cos(k pi x)
        BasisKind::Sine => cos_raw(m, |k| if k == 0 { 0.0 } else { k as f64 * PI * padded(c)(k - 1) }, out),
        BasisKind::Cosine => {
            // d/dx cos(k pi x) = -k pi sin(k pi x); mode m vanishes on the nodes
            out[0] = 0.0;
            out[m] = 0.0;
            sin_raw(m, |i| -((i + 1) as f64) * PI * padded(c)(i + 1), &mut out[1..m]);
        }
        BasisKind::Waws => waws_cos_synthesis(m, |k| (k as f64 + 0.5) * PI * padded(c)(k), out),
    }
}
