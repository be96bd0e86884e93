//! Forward evaluation and vector-Jacobian products for every tape operation.

use std::cell::Cell;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{map_axis, Tensor};
use crate::transforms::{kernels, BasisKind};

thread_local! {
    static ADJOINT_FAULT: Cell<bool> = const { Cell::new(false) };
}

/// Corrupts the inverse-transform adjoint on the current thread.
///
/// Exists so the gradient checker can be exercised against a known-bad
/// vector-Jacobian product. Never enable outside of tests.
#[doc(hidden)]
pub fn inject_adjoint_fault(enabled: bool) {
    ADJOINT_FAULT.with(|f| f.set(enabled));
}

fn adjoint_fault() -> bool {
    ADJOINT_FAULT.with(|f| f.get())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Gelu,
    Relu,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Gelu => 0.5 * x * (1.0 + libm::erf(x * std::f64::consts::FRAC_1_SQRT_2)),
            Activation::Relu => x.max(0.0),
        }
    }

    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Gelu => {
                let cdf = 0.5 * (1.0 + libm::erf(x * std::f64::consts::FRAC_1_SQRT_2));
                let pdf = (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt();
                cdf + x * pdf
            }
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) enum Op {
    Leaf,
    /// inputs: x, weight, bias
    Affine,
    Activation(Activation),
    ForwardTransform {
        bases: Vec<BasisKind>,
    },
    InverseTransform {
        bases: Vec<BasisKind>,
        n_out: Vec<usize>,
    },
    Truncate {
        keep: Vec<usize>,
    },
    /// inputs: coefficients, weights
    Banded {
        bands: Vec<usize>,
    },
    Add,
    Scale(f64),
    Sum,
    SumSquares,
    RelativeL2 {
        target: Tensor,
    },
}

impl Op {
    pub(crate) fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Affine => "pointwise_affine",
            Op::Activation(_) => "activation",
            Op::ForwardTransform { .. } => "forward_transform",
            Op::InverseTransform { .. } => "inverse_transform",
            Op::Truncate { .. } => "truncate",
            Op::Banded { .. } => "banded_spectral_multiply",
            Op::Add => "add",
            Op::Scale(_) => "scale",
            Op::Sum => "sum",
            Op::SumSquares => "sum_squares",
            Op::RelativeL2 { .. } => "relative_l2_loss",
        }
    }

    pub(crate) fn eval(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        match self {
            Op::Leaf => Err(Error::InvalidUse("leaf nodes are not evaluated".into())),
            Op::Affine => affine(inputs[0], inputs[1], inputs[2]),
            Op::Activation(kind) => {
                let x = inputs[0];
                let data = x.data().iter().map(|&v| kind.apply(v)).collect();
                Tensor::new(x.shape().to_vec(), data)
            }
            Op::ForwardTransform { bases } => {
                check_grid_axes(inputs[0], bases.len())?;
                let mut shape = inputs[0].shape().to_vec();
                let mut data = inputs[0].data().to_vec();
                for (i, &basis) in bases.iter().enumerate().rev() {
                    let axis = i + 1;
                    let modes = basis.modes(shape[axis]);
                    let (s, d) = map_axis(&data, &shape, axis, modes, |line, out| {
                        kernels::forward_into(basis, line, out)
                    });
                    shape = s;
                    data = d;
                }
                Tensor::new(shape, data)
            }
            Op::InverseTransform { bases, n_out } => {
                check_grid_axes(inputs[0], bases.len())?;
                let mut shape = inputs[0].shape().to_vec();
                let mut data = inputs[0].data().to_vec();
                for (i, &basis) in bases.iter().enumerate() {
                    let axis = i + 1;
                    let n = n_out[i];
                    if n < 3 || shape[axis] > basis.modes(n) {
                        return Err(Error::shape(format!(
                            "{} coefficients along axis {axis} do not fit a {}-point {} grid",
                            shape[axis],
                            n,
                            basis.name()
                        )));
                    }
                    let (s, d) = map_axis(&data, &shape, axis, n, |line, out| {
                        kernels::inverse_into(basis, line, out)
                    });
                    shape = s;
                    data = d;
                }
                Tensor::new(shape, data)
            }
            Op::Truncate { keep } => {
                let x = inputs[0];
                let mut shape = x.shape().to_vec();
                let mut data = x.data().to_vec();
                for (i, &k) in keep.iter().enumerate() {
                    let axis = i + 1;
                    if k == 0 || k > shape[axis] {
                        return Err(Error::shape(format!(
                            "cannot keep {k} of {} modes along axis {axis}",
                            shape[axis]
                        )));
                    }
                    let (s, d) = map_axis(&data, &shape, axis, k, |line, out| {
                        out.copy_from_slice(&line[..k])
                    });
                    shape = s;
                    data = d;
                }
                Tensor::new(shape, data)
            }
            Op::Banded { bands } => banded_forward(inputs[0], inputs[1], bands),
            Op::Add => {
                let (a, b) = (inputs[0], inputs[1]);
                if a.shape() != b.shape() {
                    return Err(Error::shape(format!(
                        "add: {:?} vs {:?}",
                        a.shape(),
                        b.shape()
                    )));
                }
                let data = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
                Tensor::new(a.shape().to_vec(), data)
            }
            Op::Scale(s) => {
                let x = inputs[0];
                Tensor::new(x.shape().to_vec(), x.data().iter().map(|v| s * v).collect())
            }
            Op::Sum => Ok(Tensor::scalar(inputs[0].data().iter().sum())),
            Op::SumSquares => Ok(Tensor::scalar(
                inputs[0].data().iter().map(|v| v * v).sum(),
            )),
            Op::RelativeL2 { target } => {
                let (errs, _) = relative_errors(inputs[0], target)?;
                Ok(Tensor::scalar(errs.iter().sum::<f64>() / errs.len() as f64))
            }
        }
    }

    /// Returns the gradient for each input flagged in `needs`.
    pub(crate) fn vjp(
        &self,
        inputs: &[&Tensor],
        out: &Tensor,
        grad: &Tensor,
        needs: &[bool],
    ) -> Result<Vec<Option<Tensor>>> {
        let mut result: Vec<Option<Tensor>> = vec![None; inputs.len()];
        match self {
            Op::Leaf => {}
            Op::Affine => {
                let (gx, gw, gb) = affine_vjp(inputs[0], inputs[1], grad, needs);
                result[0] = gx;
                result[1] = gw;
                result[2] = gb;
            }
            Op::Activation(kind) => {
                let x = inputs[0];
                let data = x
                    .data()
                    .iter()
                    .zip(grad.data())
                    .map(|(&v, &g)| g * kind.derivative(v))
                    .collect();
                result[0] = Some(Tensor::new(x.shape().to_vec(), data)?);
            }
            Op::ForwardTransform { bases } => {
                let x_shape = inputs[0].shape();
                let mut shape = grad.shape().to_vec();
                let mut data = grad.data().to_vec();
                for (i, &basis) in bases.iter().enumerate() {
                    let axis = i + 1;
                    let n = x_shape[axis];
                    let (s, d) = map_axis(&data, &shape, axis, n, |line, out| {
                        kernels::forward_adjoint_into(basis, line, out)
                    });
                    shape = s;
                    data = d;
                }
                result[0] = Some(Tensor::new(shape, data)?);
            }
            Op::InverseTransform { bases, .. } => {
                let x_shape = inputs[0].shape();
                let mut shape = grad.shape().to_vec();
                let mut data = grad.data().to_vec();
                let fault = adjoint_fault();
                for (i, &basis) in bases.iter().enumerate().rev() {
                    let axis = i + 1;
                    let k = x_shape[axis];
                    let (s, d) = map_axis(&data, &shape, axis, k, |line, out| {
                        kernels::inverse_adjoint_into(basis, line, out);
                        if fault {
                            out[0] *= 1.5;
                        }
                    });
                    shape = s;
                    data = d;
                }
                result[0] = Some(Tensor::new(shape, data)?);
            }
            Op::Truncate { keep } => {
                let x_shape = inputs[0].shape();
                let mut shape = grad.shape().to_vec();
                let mut data = grad.data().to_vec();
                for (i, &k) in keep.iter().enumerate() {
                    let axis = i + 1;
                    let n = x_shape[axis];
                    let (s, d) = map_axis(&data, &shape, axis, n, |line, out| {
                        out[..k].copy_from_slice(line);
                        out[k..].iter_mut().for_each(|v| *v = 0.0);
                    });
                    shape = s;
                    data = d;
                }
                result[0] = Some(Tensor::new(shape, data)?);
            }
            Op::Banded { bands } => {
                let (gc, ga) = banded_vjp(inputs[0], inputs[1], bands, grad, needs);
                result[0] = gc;
                result[1] = ga;
            }
            Op::Add => {
                result[0] = Some(grad.clone());
                result[1] = Some(grad.clone());
            }
            Op::Scale(s) => {
                let data = grad.data().iter().map(|g| s * g).collect();
                result[0] = Some(Tensor::new(grad.shape().to_vec(), data)?);
            }
            Op::Sum => {
                let x = inputs[0];
                result[0] = Some(Tensor::full(x.shape(), grad.data()[0]));
            }
            Op::SumSquares => {
                let x = inputs[0];
                let g = grad.data()[0];
                let data = x.data().iter().map(|v| 2.0 * g * v).collect();
                result[0] = Some(Tensor::new(x.shape().to_vec(), data)?);
            }
            Op::RelativeL2 { target } => {
                let pred = inputs[0];
                let (errs, ref_norms) = relative_errors(pred, target)?;
                let batch = errs.len();
                let per = pred.len() / batch;
                let g = grad.data()[0] / batch as f64;
                let mut data = vec![0.0; pred.len()];
                for i in 0..batch {
                    let diff_norm = errs[i] * ref_norms[i];
                    if diff_norm == 0.0 {
                        continue;
                    }
                    let coef = g / (diff_norm * ref_norms[i]);
                    for j in i * per..(i + 1) * per {
                        data[j] = coef * (pred.data()[j] - target.data()[j]);
                    }
                }
                result[0] = Some(Tensor::new(pred.shape().to_vec(), data)?);
            }
        }
        let _ = out;
        for (slot, &need) in result.iter_mut().zip(needs) {
            if !need {
                *slot = None;
            }
        }
        Ok(result)
    }
}

fn check_grid_axes(x: &Tensor, dims: usize) -> Result<()> {
    if x.ndim() != dims + 2 {
        return Err(Error::shape(format!(
            "expected [batch, {dims} grid axes, channels], got {:?}",
            x.shape()
        )));
    }
    Ok(())
}

/// `c[m x n] = a[m x k] * b[k x n] + beta * c`, all with explicit strides.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    rsa: usize,
    csa: usize,
    b: &[f64],
    rsb: usize,
    csb: usize,
    beta: f64,
    c: &mut [f64],
) {
    assert!(a.len() >= m.saturating_sub(1) * rsa + k.saturating_sub(1) * csa + 1 || m * k == 0);
    assert!(b.len() >= k.saturating_sub(1) * rsb + n.saturating_sub(1) * csb + 1 || k * n == 0);
    assert!(c.len() >= m * n);
    // SAFETY: the asserts above bound every strided access inside the slices.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn affine(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    let c_in = *x.shape().last().unwrap();
    if w.ndim() != 2 || w.shape()[0] != c_in {
        return Err(Error::shape(format!(
            "affine: input {:?} does not match weight {:?}",
            x.shape(),
            w.shape()
        )));
    }
    let c_out = w.shape()[1];
    if b.len() != c_out {
        return Err(Error::shape(format!(
            "affine: bias {:?} does not match weight {:?}",
            b.shape(),
            w.shape()
        )));
    }
    let rows = x.len() / c_in;
    let mut out = Vec::with_capacity(rows * c_out);
    for _ in 0..rows {
        out.extend_from_slice(b.data());
    }
    gemm(rows, c_in, c_out, x.data(), c_in, 1, w.data(), c_out, 1, 1.0, &mut out);
    let mut shape = x.shape().to_vec();
    *shape.last_mut().unwrap() = c_out;
    Tensor::new(shape, out)
}

type AffineGrads = (Option<Tensor>, Option<Tensor>, Option<Tensor>);

fn affine_vjp(x: &Tensor, w: &Tensor, g: &Tensor, needs: &[bool]) -> AffineGrads {
    let c_in = w.shape()[0];
    let c_out = w.shape()[1];
    let rows = x.len() / c_in;
    let gx = needs[0].then(|| {
        let mut data = vec![0.0; rows * c_in];
        gemm(rows, c_out, c_in, g.data(), c_out, 1, w.data(), 1, c_out, 0.0, &mut data);
        Tensor::new(x.shape().to_vec(), data).unwrap()
    });
    let gw = needs[1].then(|| {
        let mut data = vec![0.0; c_in * c_out];
        gemm(c_in, rows, c_out, x.data(), 1, c_in, g.data(), c_out, 1, 0.0, &mut data);
        Tensor::new(vec![c_in, c_out], data).unwrap()
    });
    let gb = needs[2].then(|| {
        let mut data = vec![0.0; c_out];
        for row in g.data().chunks_exact(c_out) {
            for (acc, v) in data.iter_mut().zip(row) {
                *acc += v;
            }
        }
        Tensor::new(vec![c_out], data).unwrap()
    });
    (gx, gw, gb)
}

/// One coupling between an output mode and an input mode through a weight block.
struct Term {
    out_mode: usize,
    in_mode: usize,
    block: usize,
}

struct BandLayout {
    batch: usize,
    modes: usize,
    c_in: usize,
    c_out: usize,
    terms: Vec<Term>,
}

/// Validates shapes and enumerates all (output mode, input mode, block) triples.
///
/// 1D weights are `[k, 2b-1, C, C']`; 2D weights `[kx, 2bx-1, ky, 2by-1, C, C']`
/// for coefficient tensors laid out `[batch, ky, kx, C]`.
fn band_layout(c: &Tensor, a: &Tensor, bands: &[usize]) -> Result<BandLayout> {
    let dims = bands.len();
    if !(1..=2).contains(&dims) || c.ndim() != dims + 2 {
        return Err(Error::shape(format!(
            "banded multiply: coefficients {:?} with {dims} band(s)",
            c.shape()
        )));
    }
    let ks: Vec<usize> = c.shape()[1..=dims].to_vec();
    for (&b, &k) in bands.iter().zip(&ks) {
        if b == 0 || b > k {
            return Err(Error::config(format!(
                "bandwidth {b} must lie in 1..={k} (retained modes)"
            )));
        }
    }
    let c_in = c.shape()[dims + 1];
    let expected: Vec<usize> = if dims == 1 {
        vec![ks[0], 2 * bands[0] - 1, c_in]
    } else {
        // ks = [ky, kx], bands = [by, bx]
        vec![ks[1], 2 * bands[1] - 1, ks[0], 2 * bands[0] - 1, c_in]
    };
    if a.ndim() != expected.len() + 1 || a.shape()[..expected.len()] != expected[..] {
        return Err(Error::shape(format!(
            "banded weights {:?} do not match expected leading extents {expected:?}",
            a.shape()
        )));
    }
    let c_out = *a.shape().last().unwrap();
    let mut terms = Vec::new();
    if dims == 1 {
        let (k, b) = (ks[0] as isize, bands[0] as isize);
        for out in 0..k {
            for d in 0..2 * b - 1 {
                let j = out + d - (b - 1);
                if (0..k).contains(&j) {
                    terms.push(Term {
                        out_mode: out as usize,
                        in_mode: j as usize,
                        block: (out * (2 * b - 1) + d) as usize,
                    });
                }
            }
        }
    } else {
        let (ky, kx) = (ks[0] as isize, ks[1] as isize);
        let (by, bx) = (bands[0] as isize, bands[1] as isize);
        for oy in 0..ky {
            for ox in 0..kx {
                for dx in 0..2 * bx - 1 {
                    let jx = ox + dx - (bx - 1);
                    if !(0..kx).contains(&jx) {
                        continue;
                    }
                    for dy in 0..2 * by - 1 {
                        let jy = oy + dy - (by - 1);
                        if !(0..ky).contains(&jy) {
                            continue;
                        }
                        let block = ((ox * (2 * bx - 1) + dx) * ky + oy) * (2 * by - 1) + dy;
                        terms.push(Term {
                            out_mode: (oy * kx + ox) as usize,
                            in_mode: (jy * kx + jx) as usize,
                            block: block as usize,
                        });
                    }
                }
            }
        }
    }
    Ok(BandLayout {
        batch: c.shape()[0],
        modes: ks.iter().product(),
        c_in,
        c_out,
        terms,
    })
}

fn banded_forward(c: &Tensor, a: &Tensor, bands: &[usize]) -> Result<Tensor> {
    let lay = band_layout(c, a, bands)?;
    let (ci, co) = (lay.c_in, lay.c_out);
    let mut out = vec![0.0; lay.batch * lay.modes * co];
    for bi in 0..lay.batch {
        let cin = &c.data()[bi * lay.modes * ci..(bi + 1) * lay.modes * ci];
        let cout = &mut out[bi * lay.modes * co..(bi + 1) * lay.modes * co];
        for t in &lay.terms {
            let x = &cin[t.in_mode * ci..(t.in_mode + 1) * ci];
            let w = &a.data()[t.block * ci * co..(t.block + 1) * ci * co];
            let y = &mut cout[t.out_mode * co..(t.out_mode + 1) * co];
            for (xc, wrow) in x.iter().zip(w.chunks_exact(co)) {
                for (yv, wv) in y.iter_mut().zip(wrow) {
                    *yv += xc * wv;
                }
            }
        }
    }
    let mut shape = c.shape().to_vec();
    *shape.last_mut().unwrap() = co;
    Tensor::new(shape, out)
}

fn banded_vjp(
    c: &Tensor,
    a: &Tensor,
    bands: &[usize],
    g: &Tensor,
    needs: &[bool],
) -> (Option<Tensor>, Option<Tensor>) {
    let lay = band_layout(c, a, bands).expect("validated on the forward pass");
    let (ci, co) = (lay.c_in, lay.c_out);
    let mut gc = needs[0].then(|| vec![0.0; c.len()]);
    let mut ga = needs[1].then(|| vec![0.0; a.len()]);
    for bi in 0..lay.batch {
        let cin = &c.data()[bi * lay.modes * ci..(bi + 1) * lay.modes * ci];
        let gout = &g.data()[bi * lay.modes * co..(bi + 1) * lay.modes * co];
        for t in &lay.terms {
            let gy = &gout[t.out_mode * co..(t.out_mode + 1) * co];
            let w = &a.data()[t.block * ci * co..(t.block + 1) * ci * co];
            if let Some(gc) = gc.as_mut() {
                let gx = &mut gc[bi * lay.modes * ci + t.in_mode * ci..][..ci];
                for (gxc, wrow) in gx.iter_mut().zip(w.chunks_exact(co)) {
                    *gxc += wrow.iter().zip(gy).map(|(wv, gv)| wv * gv).sum::<f64>();
                }
            }
            if let Some(ga) = ga.as_mut() {
                let x = &cin[t.in_mode * ci..(t.in_mode + 1) * ci];
                let gw = &mut ga[t.block * ci * co..(t.block + 1) * ci * co];
                for (xc, gwrow) in x.iter().zip(gw.chunks_exact_mut(co)) {
                    for (gwv, gv) in gwrow.iter_mut().zip(gy) {
                        *gwv += xc * gv;
                    }
                }
            }
        }
    }
    (
        gc.map(|d| Tensor::new(c.shape().to_vec(), d).unwrap()),
        ga.map(|d| Tensor::new(a.shape().to_vec(), d).unwrap()),
    )
}

/// Per-sample relative errors and reference norms over the leading axis.
pub(crate) fn relative_errors(pred: &Tensor, target: &Tensor) -> Result<(Vec<f64>, Vec<f64>)> {
    if pred.shape() != target.shape() {
        return Err(Error::shape(format!(
            "relative L2: prediction {:?} vs reference {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    let batch = pred.shape()[0];
    let per = pred.len() / batch;
    let mut errs = Vec::with_capacity(batch);
    let mut norms = Vec::with_capacity(batch);
    for i in 0..batch {
        let p = &pred.data()[i * per..(i + 1) * per];
        let r = &target.data()[i * per..(i + 1) * per];
        let ref_norm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        if ref_norm == 0.0 {
            return Err(Error::DegenerateSample { index: i });
        }
        let diff = p
            .iter()
            .zip(r)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        errs.push(diff / ref_norm);
        norms.push(ref_norm);
    }
    Ok((errs, norms))
}
