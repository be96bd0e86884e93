//! Reference solvers and dataset generation.

mod burgers;
mod dataset;
mod grf;
mod heat;
mod wave;

pub use burgers::{restrict, split_step_dt_limit, solve_burgers_1d, BurgersSolver, DEFAULT_DT_FACTOR};
pub use dataset::{
    generate, make_dataset, task_bases, Dataset, Pde, SplitSummary, TaskSpec, DATASET_MAGIC, DATASET_VERSION,
    TASK_VERSION,
};
pub use grf::{grf_sample, GrfSpec};
pub use heat::{heat_mode_exact, solve_heat_1d_timedep};
pub use wave::wave2d_exact;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of sample `index` in a run seeded with `seed`.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    splitmix64(splitmix64(seed) ^ index)
}

#[cfg(test)]
mod tests;
