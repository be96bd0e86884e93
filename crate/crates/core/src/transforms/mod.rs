//! Semi-periodic transforms on boundary-inclusive uniform grids.
//!
//! Each [`BasisKind`] is a trigonometric family that satisfies one kind of
//! homogeneous boundary condition on `[0, 1]`. Forward transforms are the DFT
//! of the matching odd, even or dual extension of the samples, so anything
//! reconstructed from coefficients satisfies that boundary condition.

pub(crate) mod kernels;
pub mod timing;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{for_each_line, map_axis, Tensor};

/// Uniform grid `x_j = j / (n - 1)` on `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Grid1D {
    n_points: usize,
}

impl Grid1D {
    pub fn new(n_points: usize) -> Result<Self> {
        if n_points < 3 {
            return Err(Error::invalid_input(format!(
                "grid needs at least 3 points, got {n_points}"
            )));
        }
        Ok(Self { n_points })
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }

    pub fn spacing(&self) -> f64 {
        1.0 / (self.n_points - 1) as f64
    }

    pub fn node(&self, j: usize) -> f64 {
        let m = self.n_points - 1;
        if j == m {
            1.0
        } else {
            j as f64 / m as f64
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n_points).map(|j| self.node(j)).collect()
    }
}

/// Tensor product of 1-D grids; axis order matches array layout.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Grid2D {
    pub y: Grid1D,
    pub x: Grid1D,
}

impl Grid2D {
    pub fn new(ny: usize, nx: usize) -> Result<Self> {
        Ok(Self {
            y: Grid1D::new(ny)?,
            x: Grid1D::new(nx)?,
        })
    }

    pub fn shape(&self) -> [usize; 2] {
        [self.y.n_points(), self.x.n_points()]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisKind {
    /// `cos(k pi x)`, `k = 0..n`; homogeneous Neumann.
    Cosine,
    /// `sin(k pi x)`, `k = 1..n-1`; homogeneous Dirichlet.
    Sine,
    /// `sin((k + 1/2) pi x)`, `k = 0..n-1`; `f(0) = 0`, `f'(1) = 0`.
    Waws,
}

impl BasisKind {
    /// Number of modes representable on an `n`-point grid.
    pub fn modes(self, n: usize) -> usize {
        match self {
            BasisKind::Cosine => n,
            BasisKind::Sine => n - 2,
            BasisKind::Waws => n - 1,
        }
    }

    /// Physical mode number of coefficient index `i`.
    pub fn mode_number(self, i: usize) -> usize {
        match self {
            BasisKind::Sine => i + 1,
            _ => i,
        }
    }

    /// Angular wavenumber of coefficient index `i`, so that `phi_i(x)` oscillates like `sin/cos(wavenumber * x)`.
    pub fn wavenumber(self, i: usize) -> f64 {
        use std::f64::consts::PI;
        match self {
            BasisKind::Cosine => i as f64 * PI,
            BasisKind::Sine => (i + 1) as f64 * PI,
            BasisKind::Waws => (i as f64 + 0.5) * PI,
        }
    }

    /// Evaluates basis function `i` at `x`.
    pub fn eval(self, i: usize, x: f64) -> f64 {
        let w = self.wavenumber(i) * x;
        match self {
            BasisKind::Cosine => w.cos(),
            BasisKind::Sine | BasisKind::Waws => w.sin(),
        }
    }

    pub fn boundary_condition(self) -> BoundaryCondition {
        match self {
            BasisKind::Cosine => BoundaryCondition::Neumann,
            BasisKind::Sine => BoundaryCondition::Dirichlet,
            BasisKind::Waws => BoundaryCondition::MixedWaws,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            BasisKind::Cosine => "cosine",
            BasisKind::Sine => "sine",
            BasisKind::Waws => "waws",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryCondition {
    Dirichlet,
    Neumann,
    MixedWaws,
}

impl BoundaryCondition {
    pub fn basis(self) -> BasisKind {
        match self {
            BoundaryCondition::Dirichlet => BasisKind::Sine,
            BoundaryCondition::Neumann => BasisKind::Cosine,
            BoundaryCondition::MixedWaws => BasisKind::Waws,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralCoeffs {
    pub basis: BasisKind,
    pub coeffs: Vec<f64>,
    pub source_n: usize,
}

impl SpectralCoeffs {
    /// Evaluates the expansion at an arbitrary point by direct summation.
    pub fn eval_at(&self, x: f64) -> f64 {
        self.coeffs
            .iter()
            .enumerate()
            .map(|(i, c)| c * self.basis.eval(i, x))
            .sum()
    }
}

fn check_len(n: usize) -> Result<()> {
    if n < 3 {
        return Err(Error::invalid_input(format!(
            "transform needs at least 3 samples, got {n}"
        )));
    }
    Ok(())
}

/// Mirror about `x = 1`: `[f_0, ..., f_{n-1}, f_{n-2}, ..., f_1]`.
pub fn even_extension(f: &[f64]) -> Result<Vec<f64>> {
    check_len(f.len())?;
    let m = f.len() - 1;
    let mut out = f.to_vec();
    out.extend((1..m).rev().map(|j| f[j]));
    Ok(out)
}

/// Antisymmetric mirror about both ends; boundary samples are treated as zero.
pub fn odd_extension(f: &[f64]) -> Result<Vec<f64>> {
    check_len(f.len())?;
    let m = f.len() - 1;
    let mut out = vec![0.0; 2 * m];
    for j in 1..m {
        out[j] = f[j];
        out[2 * m - j] = -f[j];
    }
    Ok(out)
}

/// Dual extension of period 4: antisymmetric about `x = 0`, symmetric about `x = 1`.
///
/// `f_0` is treated as zero.
pub fn waws_extension(f: &[f64]) -> Result<Vec<f64>> {
    check_len(f.len())?;
    let m = f.len() - 1;
    let mut out = vec![0.0; 4 * m];
    for j in 1..=m {
        out[j] = f[j];
        out[2 * m + j] = -f[j];
        if j < m {
            out[2 * m - j] = f[j];
            out[4 * m - j] = -f[j];
        }
    }
    Ok(out)
}

/// Interpolating coefficients of `f` in `basis`.
///
/// Sine ignores both boundary samples and Waws ignores `f[0]`, so the result is
/// the projection onto the boundary-condition-satisfying subspace.
pub fn forward(f: &[f64], basis: BasisKind) -> Result<SpectralCoeffs> {
    check_len(f.len())?;
    if let Some(j) = f.iter().position(|v| !v.is_finite()) {
        return Err(Error::invalid_input(format!("non-finite sample at index {j}")));
    }
    let mut coeffs = vec![0.0; basis.modes(f.len())];
    kernels::forward_into(basis, f, &mut coeffs);
    Ok(SpectralCoeffs {
        basis,
        coeffs,
        source_n: f.len(),
    })
}

/// Number of coefficients of `c` that must fit on an `n_out` grid.
fn significant_len(c: &[f64]) -> usize {
    c.iter().rposition(|&v| v != 0.0).map_or(0, |i| i + 1)
}

fn fit_to_capacity(basis: BasisKind, coeffs: &[f64], n_out: usize) -> Result<&[f64]> {
    let capacity = basis.modes(n_out);
    if coeffs.len() <= capacity {
        return Ok(coeffs);
    }
    let needed = significant_len(coeffs);
    if needed > capacity {
        return Err(Error::CoefficientOverflow {
            basis: basis.name(),
            highest_mode: basis.mode_number(needed - 1),
            n_out,
            capacity,
        });
    }
    Ok(&coeffs[..capacity])
}

/// Evaluates the expansion on a uniform `n_out`-point grid.
pub fn inverse(c: &SpectralCoeffs, n_out: usize) -> Result<Vec<f64>> {
    check_len(n_out)?;
    let coeffs = fit_to_capacity(c.basis, &c.coeffs, n_out)?;
    let mut out = vec![0.0; n_out];
    kernels::inverse_into(c.basis, coeffs, &mut out);
    Ok(out)
}

/// Keeps the lowest `k_keep` modes, zero-padding if the expansion is shorter.
pub fn truncate_pad(c: &SpectralCoeffs, k_keep: usize) -> SpectralCoeffs {
    let mut coeffs = c.coeffs.clone();
    coeffs.resize(k_keep.max(1), 0.0);
    SpectralCoeffs {
        basis: c.basis,
        coeffs,
        source_n: c.source_n,
    }
}

/// Derivative of the expansion sampled on its source grid.
///
/// Sine maps to a cosine series, cosine to a sine series, Waws to the
/// matching half-integer cosine series.
pub fn spectral_derivative(c: &SpectralCoeffs) -> Result<Vec<f64>> {
    check_len(c.source_n)?;
    let coeffs = fit_to_capacity(c.basis, &c.coeffs, c.source_n)?;
    let mut out = vec![0.0; c.source_n];
    kernels::derivative_into(c.basis, coeffs, &mut out);
    Ok(out)
}

fn check_axes(shape: &[usize], bases: &[BasisKind]) -> Result<()> {
    if shape.len() != bases.len() {
        return Err(Error::shape(format!(
            "{} bases given for a {}-dimensional field",
            bases.len(),
            shape.len()
        )));
    }
    for &n in shape {
        check_len(n)?;
    }
    Ok(())
}

/// Forward transform along every axis; `bases[a]` applies to axis `a`.
pub fn forward_nd(field: &Tensor, bases: &[BasisKind]) -> Result<Tensor> {
    check_axes(field.shape(), bases)?;
    if !field.is_finite() {
        return Err(Error::invalid_input("non-finite sample in field"));
    }
    let mut shape = field.shape().to_vec();
    let mut data = field.data().to_vec();
    for (axis, &basis) in bases.iter().enumerate().rev() {
        let out_len = basis.modes(shape[axis]);
        let (s, d) = map_axis(&data, &shape, axis, out_len, |line, out| {
            kernels::forward_into(basis, line, out)
        });
        shape = s;
        data = d;
    }
    Tensor::new(shape, data)
}

/// Inverse transform along every axis onto a grid of extents `out_shape`.
pub fn inverse_nd(coeffs: &Tensor, bases: &[BasisKind], out_shape: &[usize]) -> Result<Tensor> {
    check_axes(out_shape, bases)?;
    if coeffs.ndim() != bases.len() {
        return Err(Error::shape("coefficient rank does not match bases"));
    }
    let mut shape = coeffs.shape().to_vec();
    let mut data = coeffs.data().to_vec();
    for (axis, &basis) in bases.iter().enumerate() {
        let n_out = out_shape[axis];
        let capacity = basis.modes(n_out);
        if shape[axis] > capacity {
            return Err(Error::CoefficientOverflow {
                basis: basis.name(),
                highest_mode: basis.mode_number(shape[axis] - 1),
                n_out,
                capacity,
            });
        }
        let (s, d) = map_axis(&data, &shape, axis, n_out, |line, out| {
            kernels::inverse_into(basis, line, out)
        });
        shape = s;
        data = d;
    }
    Tensor::new(shape, data)
}

/// Row-wise then column-wise forward transform of an `ny x nx` field.
pub fn transform2d_forward(field: &Tensor, basis_x: BasisKind, basis_y: BasisKind) -> Result<Tensor> {
    if field.ndim() != 2 {
        return Err(Error::shape("transform2d_forward expects a matrix"));
    }
    forward_nd(field, &[basis_y, basis_x])
}

pub fn transform2d_inverse(
    coeffs: &Tensor,
    basis_x: BasisKind,
    basis_y: BasisKind,
    ny_out: usize,
    nx_out: usize,
) -> Result<Tensor> {
    if coeffs.ndim() != 2 {
        return Err(Error::shape("transform2d_inverse expects a matrix"));
    }
    inverse_nd(coeffs, &[basis_y, basis_x], &[ny_out, nx_out])
}

/// Forward-then-inverse pass per axis, projecting onto the basis span.
pub fn projection_filter(field: &Tensor, bases: &[BasisKind]) -> Result<Tensor> {
    let coeffs = forward_nd(field, bases)?;
    inverse_nd(&coeffs, bases, field.shape())
}

fn line_bc_error(line: &[f64], bc: BoundaryCondition) -> f64 {
    let m = line.len() - 1;
    match bc {
        BoundaryCondition::Dirichlet => line[0].abs().max(line[m].abs()),
        BoundaryCondition::Neumann | BoundaryCondition::MixedWaws => {
            let basis = bc.basis();
            let mut coeffs = vec![0.0; basis.modes(line.len())];
            kernels::forward_into(basis, line, &mut coeffs);
            let mut deriv = vec![0.0; line.len()];
            kernels::derivative_into(basis, &coeffs, &mut deriv);
            if bc == BoundaryCondition::Neumann {
                deriv[0].abs().max(deriv[m].abs())
            } else {
                line[0].abs().max(deriv[m].abs())
            }
        }
    }
}

/// Largest boundary-condition violation over every boundary line of `field`.
///
/// Neumann derivatives come from the cosine expansion of each line, Waws
/// derivatives from the dual expansion.
pub fn bc_error(field: &Tensor, bcs: &[BoundaryCondition]) -> Result<f64> {
    if field.ndim() != bcs.len() {
        return Err(Error::shape(format!(
            "{} boundary conditions for a {}-dimensional field",
            bcs.len(),
            field.ndim()
        )));
    }
    for &n in field.shape() {
        check_len(n)?;
    }
    let mut worst: f64 = 0.0;
    for (axis, &bc) in bcs.iter().enumerate() {
        for_each_line(field.data(), field.shape(), axis, |line| {
            worst = worst.max(line_bc_error(line, bc));
        });
    }
    Ok(worst)
}

/// [`bc_error`] for a 1-D sample vector.
pub fn bc_error_1d(f: &[f64], bc: BoundaryCondition) -> Result<f64> {
    check_len(f.len())?;
    Ok(line_bc_error(f, bc))
}
