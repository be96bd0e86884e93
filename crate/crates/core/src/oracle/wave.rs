use std::f64::consts::{PI, SQRT_2};

use crate::error::Result;
use crate::tensor::Tensor;
use crate::transforms::Grid2D;

/// `k cos(pi x) cos(pi y) cos(c sqrt(2) pi t)` on a `[y, x]` grid.
pub fn wave2d_exact(k: f64, c: f64, t: f64, grid: &Grid2D) -> Result<Tensor> {
    let [ny, nx] = grid.shape();
    let phase = (c * SQRT_2 * PI * t).cos();
    let cy: Vec<f64> = (0..ny).map(|j| (PI * grid.y.node(j)).cos()).collect();
    let cx: Vec<f64> = (0..nx).map(|i| (PI * grid.x.node(i)).cos()).collect();
    let data = cy
        .iter()
        .flat_map(|&vy| cx.iter().map(move |&vx| k * vx * vy * phase))
        .collect();
    Tensor::new(vec![ny, nx], data)
}
