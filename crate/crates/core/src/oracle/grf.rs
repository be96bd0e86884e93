use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::transforms::{inverse_nd, BasisKind};

/// Gaussian random field with covariance `gamma * (alpha (-Laplacian) + beta)^(-p)`
/// diagonalized by the eigenfunctions of the chosen basis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GrfSpec {
    #[serde(default = "one")]
    pub dimension: usize,
    pub alpha: f64,
    pub beta: f64,
    pub p: f64,
    pub gamma: f64,
    pub basis: BasisKind,
}

fn one() -> usize {
    1
}

impl GrfSpec {
    /// `625 (-4 Laplacian + 25)^-2`.
    pub fn burgers(basis: BasisKind) -> Self {
        Self {
            dimension: 1,
            alpha: 4.0,
            beta: 25.0,
            p: 2.0,
            gamma: 625.0,
            basis,
        }
    }

    /// `16 (-Laplacian + 16)^-2`, i.e. the multi-step covariance with the
    /// sign of the Laplacian chosen so that every eigenvalue is positive.
    pub fn multistep(basis: BasisKind) -> Self {
        Self {
            dimension: 1,
            alpha: 1.0,
            beta: 16.0,
            p: 2.0,
            gamma: 16.0,
            basis,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=2).contains(&self.dimension) {
            return Err(Error::Spec(format!("dimension must be 1 or 2, got {}", self.dimension)));
        }
        if self.p <= self.dimension as f64 / 2.0 {
            return Err(Error::Spec(format!(
                "p = {} is not trace-class in {} dimension(s); need p > {}",
                self.p,
                self.dimension,
                self.dimension as f64 / 2.0
            )));
        }
        if !(self.gamma > 0.0) {
            return Err(Error::Spec("gamma must be positive".into()));
        }
        Ok(())
    }

    /// Covariance eigenvalue for the Laplacian eigenvalue `mu`.
    fn eigenvalue(&self, mu: f64) -> Result<f64> {
        let base = self.alpha * mu + self.beta;
        if !(base > 0.0) {
            return Err(Error::Spec(format!(
                "non-positive eigenvalue: alpha * {mu:.4} + beta = {base:.4}"
            )));
        }
        Ok(self.gamma / base.powf(self.p))
    }

    /// `lambda_i` and the L2-normalization factor for 1-D mode index `i`.
    pub fn mode(&self, i: usize) -> Result<(f64, f64)> {
        let k = self.basis.wavenumber(i);
        let norm = if self.basis == BasisKind::Cosine && i == 0 {
            1.0
        } else {
            std::f64::consts::SQRT_2
        };
        Ok((self.eigenvalue(k * k)?, norm))
    }

    /// Pointwise variance `sum_i lambda_i phi_i(x)^2` over the modes kept at resolution `n`.
    pub fn variance_at(&self, x: f64, n: usize) -> Result<f64> {
        self.validate()?;
        let mut total = 0.0;
        for i in 0..self.basis.modes(n) {
            let (lambda, norm) = self.mode(i)?;
            let phi = norm * self.basis.eval(i, x);
            total += lambda * phi * phi;
        }
        Ok(total)
    }

    /// Basis coefficients of one sample, truncated to the modes representable at `n`.
    ///
    /// Shape `[K]` in 1-D and `[K, K]` in 2-D.
    pub fn sample_coeffs(&self, n: usize, seed: u64) -> Result<Tensor> {
        self.validate()?;
        if n < 3 {
            return Err(Error::Grid(format!("resolution {n} is below 3")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let k = self.basis.modes(n);
        let modes: Vec<(f64, f64)> = (0..k).map(|i| self.mode(i)).collect::<Result<_>>()?;
        if self.dimension == 1 {
            let data = modes
                .iter()
                .map(|&(lambda, norm)| {
                    let xi: f64 = rng.sample(StandardNormal);
                    xi * lambda.sqrt() * norm
                })
                .collect();
            return Tensor::new(vec![k], data);
        }
        let mut data = Vec::with_capacity(k * k);
        for iy in 0..k {
            for ix in 0..k {
                let ky = self.basis.wavenumber(iy);
                let kx = self.basis.wavenumber(ix);
                let lambda = self.eigenvalue(kx * kx + ky * ky)?;
                let xi: f64 = rng.sample(StandardNormal);
                data.push(xi * lambda.sqrt() * modes[iy].1 * modes[ix].1);
            }
        }
        Tensor::new(vec![k, k], data)
    }
}

/// One GRF sample on an `n`-point grid (`[n]` or `[n, n]`).
pub fn grf_sample(spec: &GrfSpec, n: usize, seed: u64) -> Result<Tensor> {
    let coeffs = spec.sample_coeffs(n, seed)?;
    let bases = vec![spec.basis; spec.dimension];
    let out = vec![n; spec.dimension];
    inverse_nd(&coeffs, &bases, &out)
}
