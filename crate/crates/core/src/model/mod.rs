//! The SPFNO network.
//!
//! Input `[batch, grid..., C_in]` is optionally augmented with grid
//! coordinates, lifted to `W` channels, passed through `L` layers of
//! `v = W_l u + T^-1 A_l T_kmax u`, and projected by a two-layer head. An
//! optional projection filter maps the output onto the span of the basis.

mod checkpoint;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize};

pub use checkpoint::{Checkpoint, CheckpointMeta, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

use crate::autodiff::{grad_check, Activation, GradCheckConfig, GradCheckReport, Tape, Var};
use crate::error::{Error, Result};
use crate::par::Exec;
use crate::tensor::Tensor;
use crate::transforms::{BasisKind, BoundaryCondition, Grid1D};

fn one_or_many<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Vec<usize>, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum OneOrMany {
        One(usize),
        Many(Vec<usize>),
    }
    Ok(match OneOrMany::deserialize(d)? {
        OneOrMany::One(v) => vec![v],
        OneOrMany::Many(v) => v,
    })
}

fn default_true() -> bool {
    true
}

fn default_head_width() -> usize {
    128
}

/// Architecture hyperparameters. Per-dimension fields accept a single
/// number, which is then used for every dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpfnoConfig {
    /// Modes kept per dimension.
    #[serde(deserialize_with = "one_or_many")]
    pub k_max: Vec<usize>,
    /// Number of spectral layers `L`.
    pub layers: usize,
    /// Channel width `W`.
    pub width: usize,
    /// Band half-width `b` per dimension; `b = 1` is mode-diagonal.
    #[serde(deserialize_with = "one_or_many")]
    pub bandwidth: Vec<usize>,
    /// Basis per grid dimension, in array axis order.
    pub bases: Vec<BasisKind>,
    pub in_channels: usize,
    pub out_channels: usize,
    #[serde(default = "default_true")]
    pub append_coords: bool,
    #[serde(default)]
    pub activation: Activation,
    #[serde(default = "default_true")]
    pub use_projection_filter: bool,
    #[serde(default = "default_head_width")]
    pub head_width: usize,
    /// Hidden width of a two-layer skip path; single affine map when absent.
    #[serde(default)]
    pub skip_hidden: Option<usize>,
}

impl SpfnoConfig {
    pub fn dims(&self) -> usize {
        self.bases.len()
    }

    /// Broadcasts single-valued per-dimension fields and checks invariants.
    pub fn validate(&mut self) -> Result<()> {
        let dims = self.dims();
        if !(1..=2).contains(&dims) {
            return Err(Error::config(format!("bases: 1 or 2 grid dimensions supported, got {dims}")));
        }
        for (name, field) in [("k_max", &mut self.k_max), ("bandwidth", &mut self.bandwidth)] {
            if field.len() == 1 && dims > 1 {
                *field = vec![field[0]; dims];
            }
            if field.len() != dims {
                return Err(Error::config(format!(
                    "{name}: expected 1 or {dims} values, got {}",
                    field.len()
                )));
            }
        }
        for d in 0..dims {
            if self.bandwidth[d] == 0 {
                return Err(Error::config("bandwidth: must be at least 1"));
            }
            if self.k_max[d] < self.bandwidth[d] {
                return Err(Error::config(format!(
                    "k_max: {} is smaller than bandwidth {} in dimension {d}",
                    self.k_max[d], self.bandwidth[d]
                )));
            }
        }
        for (name, v) in [
            ("layers", self.layers),
            ("width", self.width),
            ("in_channels", self.in_channels),
            ("out_channels", self.out_channels),
            ("head_width", self.head_width),
        ] {
            if v == 0 {
                return Err(Error::config(format!("{name}: must be at least 1")));
            }
        }
        if self.skip_hidden == Some(0) {
            return Err(Error::config("skip_hidden: must be at least 1"));
        }
        Ok(())
    }

    /// Smallest grid extent per dimension that can hold `k_max` modes.
    pub fn min_grid(&self) -> Vec<usize> {
        self.bases
            .iter()
            .zip(&self.k_max)
            .map(|(&b, &k)| {
                let extra = b.modes(3) as isize - 3;
                (k as isize - extra).max(3) as usize
            })
            .collect()
    }

    pub fn boundary_conditions(&self) -> Vec<BoundaryCondition> {
        self.bases.iter().map(|b| b.boundary_condition()).collect()
    }

    fn lifted_channels(&self) -> usize {
        self.in_channels + if self.append_coords { self.dims() } else { 0 }
    }

    fn spectral_shape(&self) -> Vec<usize> {
        let w = self.width;
        let k = &self.k_max;
        let b: Vec<usize> = self.bandwidth.iter().map(|b| 2 * b - 1).collect();
        if self.dims() == 1 {
            vec![k[0], b[0], w, w]
        } else {
            // axis order is [y, x]; weights are stored x-major
            vec![k[1], b[1], k[0], b[0], w, w]
        }
    }

    /// Names, shapes and init scales of every parameter, in storage order.
    pub fn parameter_layout(&self) -> Vec<(String, Vec<usize>, f64)> {
        let w = self.width;
        let mut out = Vec::new();
        let affine = |out: &mut Vec<(String, Vec<usize>, f64)>, prefix: &str, fan_in: usize, fan_out: usize| {
            let s = 1.0 / (fan_in as f64).sqrt();
            out.push((format!("{prefix}.weight"), vec![fan_in, fan_out], s));
            out.push((format!("{prefix}.bias"), vec![fan_out], s));
        };
        affine(&mut out, "lift", self.lifted_channels(), w);
        let band_terms: usize = self.bandwidth.iter().map(|b| 2 * b - 1).product();
        for l in 0..self.layers {
            out.push((
                format!("layers.{l}.spectral"),
                self.spectral_shape(),
                1.0 / (w * band_terms) as f64,
            ));
            match self.skip_hidden {
                None => affine(&mut out, &format!("layers.{l}.skip"), w, w),
                Some(h) => {
                    affine(&mut out, &format!("layers.{l}.skip.0"), w, h);
                    affine(&mut out, &format!("layers.{l}.skip.1"), h, w);
                }
            }
        }
        affine(&mut out, "head.0", w, self.head_width);
        affine(&mut out, "head.1", self.head_width, self.out_channels);
        out
    }
}

#[derive(Debug, Clone)]
pub struct Spfno {
    config: SpfnoConfig,
    params: Vec<(String, Tensor)>,
}

impl Spfno {
    /// Builds a model with parameters drawn from `seed`.
    pub fn build(mut config: SpfnoConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = config
            .parameter_layout()
            .into_iter()
            .map(|(name, shape, s)| {
                let n = shape.iter().product();
                let data = (0..n).map(|_| rng.gen_range(-s..s)).collect();
                Tensor::new(shape, data).map(|t| (name, t))
            })
            .collect::<Result<_>>()?;
        Ok(Self { config, params })
    }

    /// Reassembles a model from stored parameters, checking names and shapes.
    pub fn from_parts(mut config: SpfnoConfig, params: Vec<(String, Tensor)>) -> Result<Self> {
        config.validate()?;
        let layout = config.parameter_layout();
        if layout.len() != params.len() {
            return Err(Error::shape(format!(
                "config expects {} parameter tensors, got {}",
                layout.len(),
                params.len()
            )));
        }
        for ((name, shape, _), (pname, t)) in layout.iter().zip(&params) {
            if name != pname || shape != t.shape() {
                return Err(Error::shape(format!(
                    "parameter '{pname}' {:?} does not match expected '{name}' {shape:?}",
                    t.shape()
                )));
            }
            if !t.is_finite() {
                return Err(Error::NumericFault {
                    context: format!("parameter '{pname}'"),
                });
            }
        }
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &SpfnoConfig {
        &self.config
    }

    pub fn params(&self) -> &[(String, Tensor)] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [(String, Tensor)] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|(_, t)| t.len()).sum()
    }

    pub fn set_projection_filter(&mut self, enabled: bool) {
        self.config.use_projection_filter = enabled;
    }

    /// Errors unless every grid extent can represent `k_max` modes.
    pub fn check_grid(&self, grid: &[usize]) -> Result<()> {
        if grid.len() != self.config.dims() {
            return Err(Error::shape(format!(
                "model has {} grid dimensions, input has {}",
                self.config.dims(),
                grid.len()
            )));
        }
        for (d, (&n, &basis)) in grid.iter().zip(&self.config.bases).enumerate() {
            if n < 3 || basis.modes(n) < self.config.k_max[d] {
                return Err(Error::config(format!(
                    "k_max = {} in dimension {d} needs at least {} {} grid points, got {n}",
                    self.config.k_max[d],
                    self.config.min_grid()[d],
                    basis.name()
                )));
            }
        }
        Ok(())
    }

    fn check_input(&self, input: &Tensor) -> Result<Vec<usize>> {
        let dims = self.config.dims();
        if input.ndim() != dims + 2 || input.shape()[dims + 1] != self.config.in_channels {
            return Err(Error::shape(format!(
                "expected input [batch, {dims} grid axes, {}], got {:?}",
                self.config.in_channels,
                input.shape()
            )));
        }
        let grid = input.shape()[1..=dims].to_vec();
        self.check_grid(&grid)?;
        Ok(grid)
    }

    fn with_coords(&self, input: &Tensor, grid: &[usize]) -> Tensor {
        if !self.config.append_coords {
            return input.clone();
        }
        let c_in = self.config.in_channels;
        let c = c_in + grid.len();
        let grids: Vec<Grid1D> = grid.iter().map(|&n| Grid1D::new(n).expect("checked")).collect();
        let mut shape = input.shape().to_vec();
        *shape.last_mut().unwrap() = c;
        let points = input.len() / c_in;
        let mut data = Vec::with_capacity(points * c);
        let per_sample: usize = grid.iter().product();
        for p in 0..points {
            data.extend_from_slice(&input.data()[p * c_in..(p + 1) * c_in]);
            let mut rem = p % per_sample;
            let mut coords = vec![0.0; grid.len()];
            for d in (0..grid.len()).rev() {
                coords[d] = grids[d].node(rem % grid[d]);
                rem /= grid[d];
            }
            data.extend_from_slice(&coords);
        }
        Tensor::new(shape, data).expect("consistent shape")
    }

    /// Records the parameters as borrowed leaves on `tape`.
    pub fn attach<'a>(&'a self, tape: &mut Tape<'a>) -> Result<Vec<Var>> {
        self.params.iter().map(|(_, t)| tape.param(t)).collect()
    }

    /// Records the forward pass for `input` using parameter leaves `p`.
    pub fn graph(&self, tape: &mut Tape<'_>, p: &[Var], input: &Tensor) -> Result<Var> {
        let grid = self.check_input(input)?;
        let cfg = &self.config;
        let x = tape.constant(self.with_coords(input, &grid))?;
        let mut i = 0;
        let mut next = || {
            let v = p[i];
            i += 1;
            v
        };
        let mut u = tape.pointwise_affine(x, next(), next())?;
        for l in 0..cfg.layers {
            let a = next();
            let c = tape.forward_transform(u, &cfg.bases)?;
            let c = tape.truncate(c, &cfg.k_max)?;
            let c = tape.banded_spectral_multiply(c, a, &cfg.bandwidth)?;
            let spectral = tape.inverse_transform(c, &cfg.bases, &grid)?;
            let skip = match cfg.skip_hidden {
                None => tape.pointwise_affine(u, next(), next())?,
                Some(_) => {
                    let h = tape.pointwise_affine(u, next(), next())?;
                    let h = tape.activation(h, cfg.activation)?;
                    tape.pointwise_affine(h, next(), next())?
                }
            };
            u = tape.add(skip, spectral)?;
            if l + 1 < cfg.layers {
                u = tape.activation(u, cfg.activation)?;
            }
        }
        let h = tape.pointwise_affine(u, next(), next())?;
        let h = tape.activation(h, cfg.activation)?;
        let mut out = tape.pointwise_affine(h, next(), next())?;
        if cfg.use_projection_filter {
            let c = tape.forward_transform(out, &cfg.bases)?;
            out = tape.inverse_transform(c, &cfg.bases, &grid)?;
        }
        Ok(out)
    }

    /// Inference on a whole batch in one graph.
    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let p = self.attach(&mut tape)?;
        let out = self.graph(&mut tape, &p, input)?;
        Ok(tape.value(out).clone())
    }

    /// Inference one sample at a time, reassembled in order.
    pub fn predict(&self, input: &Tensor, exec: Exec) -> Result<Tensor> {
        self.check_input(input)?;
        let batch = input.shape()[0];
        let outputs = exec.try_map(batch, |i| {
            let mut shape = input.shape().to_vec();
            shape[0] = 1;
            let sample = input.index_leading(i).reshape(shape)?;
            let out = self.forward(&sample)?;
            let mut s = out.shape().to_vec();
            s.remove(0);
            out.reshape(s)
        })?;
        Tensor::stack(&outputs)
    }

    /// Same parameters on a different grid; transforms are resized, `k_max` is kept.
    pub fn forward_at_resolution(&self, input: &Tensor) -> Result<Tensor> {
        self.forward(input)
    }
}

/// Gradient check of the relative-L2 loss of a freshly built model on a
/// random input/target pair of the given grid, all drawn from `cfg.seed`.
pub fn grad_check_model(config: SpfnoConfig, grid: &[usize], cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    let model = Spfno::build(config, cfg.seed)?;
    model.check_grid(grid)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut random = |channels: usize| {
        let mut shape = vec![1];
        shape.extend_from_slice(grid);
        shape.push(channels);
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
    };
    let input = random(model.config.in_channels)?;
    let target = random(model.config.out_channels)?;
    grad_check(
        model.params(),
        |tape, p| {
            let pred = model.graph(tape, p, &input)?;
            tape.relative_l2_loss(pred, &target)
        },
        cfg,
    )
}
