use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::burgers::{restrict, BurgersSolver};
use super::grf::GrfSpec;
use super::heat::solve_heat_1d_timedep;
use super::wave::wave2d_exact;
use super::derive_seed;
use crate::container;
use crate::error::{Error, Result};
use crate::par::Exec;
use crate::tensor::Tensor;
use crate::trainer::{bc_linf, Samples};
use crate::transforms::{BasisKind, BoundaryCondition, Grid1D, Grid2D, SpectralCoeffs};

pub const DATASET_MAGIC: &[u8; 8] = b"SPFDATA1";
pub const DATASET_VERSION: u32 = 1;
pub const TASK_VERSION: u32 = 1;

fn neumann() -> BoundaryCondition {
    BoundaryCondition::Neumann
}

fn final_time() -> Vec<f64> {
    vec![1.0]
}

fn four() -> usize {
    4
}

fn unit() -> f64 {
    1.0
}

/// The equation and its physical parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Pde {
    /// `u_t + u u_x = nu u_xx` from a GRF initial condition.
    Burgers1d {
        nu: f64,
        #[serde(default = "neumann")]
        bc: BoundaryCondition,
        /// Defaults to `625 (-4 Laplacian + 25)^-2` in the basis of `bc`.
        #[serde(default)]
        grf: Option<GrfSpec>,
        #[serde(default = "final_time")]
        output_times: Vec<f64>,
        /// Defaults to `DEFAULT_DT_FACTOR` times the split-step stability limit
        /// of each sample.
        #[serde(default)]
        dt: Option<f64>,
        #[serde(default = "four")]
        fine_factor: usize,
    },
    /// `u_t = k u_xx`, `u0 = cos(omega pi x)`, `u_x(0) = 0`, `u_x(1) = U sin(pi t)`.
    Heat1d {
        #[serde(alias = "k")]
        diffusivity: f64,
        #[serde(alias = "U")]
        flux_amplitude: f64,
        /// `omega` is drawn uniformly from this range.
        omega: [f64; 2],
        #[serde(default = "unit")]
        horizon: f64,
        steps: usize,
        #[serde(default)]
        dt: Option<f64>,
        #[serde(default = "four")]
        fine_factor: usize,
    },
    /// Analytic standing wave with amplitude drawn uniformly from `amplitude`.
    Wave2d {
        #[serde(default = "unit")]
        c: f64,
        amplitude: [f64; 2],
        #[serde(default = "unit")]
        horizon: f64,
        steps: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub version: u32,
    pub pde: Pde,
    pub resolution: usize,
    pub train_samples: usize,
    pub test_samples: usize,
    #[serde(default)]
    pub seed: u64,
    /// Additional resolutions at which the test split is also stored,
    /// restricted from the same reference solutions.
    #[serde(default)]
    pub extra_test_resolutions: Vec<usize>,
}

impl TaskSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::config(msg));
        if self.version != TASK_VERSION {
            return Err(Error::VersionMismatch {
                found: self.version,
                expected: TASK_VERSION,
            });
        }
        if self.resolution < 3 || self.extra_test_resolutions.iter().any(|&n| n < 3) {
            return bad("resolution: must be at least 3".into());
        }
        if self.train_samples == 0 && self.test_samples == 0 {
            return bad("train_samples: at least one sample is required".into());
        }
        let check_range = |name: &str, r: [f64; 2]| {
            if !(r[0] <= r[1]) || !r[0].is_finite() || !r[1].is_finite() {
                return Err(Error::config(format!("{name}: expected [low, high], got {r:?}")));
            }
            Ok(())
        };
        match &self.pde {
            Pde::Burgers1d {
                nu,
                bc,
                grf,
                output_times,
                dt,
                fine_factor,
            } => {
                if !(*nu > 0.0) {
                    return bad(format!("pde.burgers1d.nu: must be positive, got {nu}"));
                }
                if *bc == BoundaryCondition::MixedWaws {
                    return bad("pde.burgers1d.bc: must be neumann or dirichlet".into());
                }
                if let Some(g) = grf {
                    if g.basis != bc.basis() || g.dimension != 1 {
                        return bad("pde.burgers1d.grf: must be 1-D in the basis of bc".into());
                    }
                    g.validate()?;
                }
                let mut prev = 0.0;
                for &t in output_times {
                    if !(t > prev) {
                        return bad(format!(
                            "pde.burgers1d.output_times: must be positive and increasing, got {output_times:?}"
                        ));
                    }
                    prev = t;
                }
                if output_times.is_empty() {
                    return bad("pde.burgers1d.output_times: at least one time is required".into());
                }
                if dt.is_some_and(|d| !(d > 0.0)) {
                    return bad("pde.burgers1d.dt: must be positive".into());
                }
                if *fine_factor == 0 {
                    return bad("pde.burgers1d.fine_factor: must be at least 1".into());
                }
            }
            Pde::Heat1d {
                diffusivity,
                omega,
                horizon,
                steps,
                dt,
                fine_factor,
                ..
            } => {
                if !(*diffusivity > 0.0) {
                    return bad("pde.heat1d.diffusivity: must be positive".into());
                }
                check_range("pde.heat1d.omega", *omega)?;
                if !(*horizon > 0.0) || *steps == 0 {
                    return bad("pde.heat1d: horizon must be positive and steps at least 1".into());
                }
                if dt.is_some_and(|d| !(d > 0.0)) {
                    return bad("pde.heat1d.dt: must be positive".into());
                }
                if *fine_factor == 0 {
                    return bad("pde.heat1d.fine_factor: must be at least 1".into());
                }
                let m_fine = fine_factor * (self.resolution - 1);
                for &n in std::iter::once(&self.resolution).chain(&self.extra_test_resolutions) {
                    if m_fine % (n - 1) != 0 {
                        return Err(Error::Grid(format!(
                            "resolution {n} does not nest in the {}-point reference grid",
                            m_fine + 1
                        )));
                    }
                }
            }
            Pde::Wave2d {
                amplitude,
                horizon,
                steps,
                ..
            } => {
                check_range("pde.wave2d.amplitude", *amplitude)?;
                if !(*horizon > 0.0) || *steps == 0 {
                    return bad("pde.wave2d: horizon must be positive and steps at least 1".into());
                }
            }
        }
        Ok(())
    }

    pub fn dims(&self) -> usize {
        match self.pde {
            Pde::Wave2d { .. } => 2,
            _ => 1,
        }
    }

    /// Output times of every sample.
    pub fn times(&self) -> Vec<f64> {
        match &self.pde {
            Pde::Burgers1d { output_times, .. } => output_times.clone(),
            Pde::Heat1d { horizon, steps, .. } | Pde::Wave2d { horizon, steps, .. } => {
                (1..=*steps).map(|i| i as f64 * horizon / *steps as f64).collect()
            }
        }
    }

    /// Outputs carry a separate time axis unless there is a single time.
    pub fn time_axis(&self) -> bool {
        !matches!(&self.pde, Pde::Burgers1d { output_times, .. } if output_times.len() == 1)
    }

    /// Boundary conditions the stored inputs and outputs satisfy, if any.
    pub fn boundary_conditions(&self) -> Option<Vec<BoundaryCondition>> {
        match &self.pde {
            Pde::Burgers1d { bc, .. } => Some(vec![*bc]),
            Pde::Heat1d { .. } => None,
            Pde::Wave2d { .. } => Some(vec![BoundaryCondition::Neumann; 2]),
        }
    }
}

/// One stored split.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub task: TaskSpec,
    pub split: String,
    pub grid: Vec<usize>,
    pub times: Vec<f64>,
    pub time_axis: bool,
    pub boundary_conditions: Option<Vec<BoundaryCondition>>,
    /// `[S, grid..., 1]`.
    pub input: Tensor,
    /// `[S, grid..., 1]`, or `[S, M, grid..., 1]` with a time axis.
    pub output: Tensor,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format: String,
    version: u32,
    task: TaskSpec,
    split: String,
    grid: Vec<usize>,
    times: Vec<f64>,
    time_axis: bool,
    boundary_conditions: Option<Vec<BoundaryCondition>>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.input.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let header = Header {
            format: "spfno-dataset".into(),
            version: DATASET_VERSION,
            task: self.task.clone(),
            split: self.split.clone(),
            grid: self.grid.clone(),
            times: self.times.clone(),
            time_axis: self.time_axis,
            boundary_conditions: self.boundary_conditions.clone(),
        };
        container::write(
            path,
            DATASET_MAGIC,
            serde_json::to_value(header)?,
            &[("input", &self.input), ("output", &self.output)],
        )
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (header, arrays) = container::read(path, DATASET_MAGIC)?;
        let corrupt = |reason: String| Error::CorruptFile {
            path: path.to_path_buf(),
            reason,
        };
        let version = header.get("version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
        if version != DATASET_VERSION {
            return Err(Error::VersionMismatch {
                found: version,
                expected: DATASET_VERSION,
            });
        }
        let h: Header = serde_json::from_value(header).map_err(|e| corrupt(format!("dataset header: {e}")))?;
        let mut input = None;
        let mut output = None;
        for (name, t) in arrays {
            match name.as_str() {
                "input" => input = Some(t),
                "output" => output = Some(t),
                other => return Err(corrupt(format!("unexpected array '{other}'"))),
            }
        }
        let (input, output) = match (input, output) {
            (Some(i), Some(o)) => (i, o),
            _ => return Err(corrupt("arrays 'input' and 'output' are required".into())),
        };
        let d = h.grid.len();
        let expect_out = if h.time_axis { d + 3 } else { d + 2 };
        if input.ndim() != d + 2 || output.ndim() != expect_out || input.shape()[1..=d] != h.grid[..] {
            return Err(corrupt(format!(
                "array shapes {:?} / {:?} do not match grid {:?}",
                input.shape(),
                output.shape(),
                h.grid
            )));
        }
        Ok(Self {
            task: h.task,
            split: h.split,
            grid: h.grid,
            times: h.times,
            time_axis: h.time_axis,
            boundary_conditions: h.boundary_conditions,
            input,
            output,
        })
    }

    /// Outputs as `[S, grid..., C]`, with one channel per output time.
    pub fn channels_last_output(&self) -> Tensor {
        if !self.time_axis {
            return self.output.clone();
        }
        let s = self.output.shape()[0];
        let m = self.output.shape()[1];
        let points: usize = self.grid.iter().product();
        let src = self.output.data();
        let mut data = vec![0.0; s * m * points];
        for a in 0..s {
            for t in 0..m {
                for p in 0..points {
                    data[(a * points + p) * m + t] = src[(a * m + t) * points + p];
                }
            }
        }
        let mut shape = vec![s];
        shape.extend_from_slice(&self.grid);
        shape.push(m);
        Tensor::new(shape, data).expect("consistent shape")
    }

    pub fn samples(&self) -> Result<Samples> {
        Samples::new(self.input.clone(), self.channels_last_output())
    }

    /// Largest boundary violation over inputs and over outputs, when the
    /// task declares boundary conditions.
    pub fn bc_scan(&self) -> Result<Option<(f64, f64)>> {
        let Some(bcs) = &self.boundary_conditions else {
            return Ok(None);
        };
        Ok(Some((bc_linf(&self.input, bcs)?, bc_linf(&self.channels_last_output(), bcs)?)))
    }
}

/// Per-sample fields at each requested resolution: `(input, outputs per time)`.
type SampleFields = Vec<(Vec<f64>, Vec<Vec<f64>>)>;

fn burgers_sample(task: &TaskSpec, seed: u64, resolutions: &[usize]) -> Result<SampleFields> {
    let Pde::Burgers1d {
        nu,
        bc,
        grf,
        output_times,
        dt,
        fine_factor,
    } = &task.pde
    else {
        unreachable!()
    };
    let basis = bc.basis();
    let grf = grf.unwrap_or_else(|| GrfSpec::burgers(basis));
    let n_fine = fine_factor * (task.resolution - 1) + 1;
    let mut a0 = grf.sample_coeffs(task.resolution, seed)?.into_data();
    a0.resize(basis.modes(n_fine), 0.0);
    let mut solver = BurgersSolver::new(basis, *nu, n_fine)?;
    let dt = dt.unwrap_or_else(|| solver.default_dt(&a0));
    let snaps = solver.solve(&a0, output_times, dt)?;
    let wrap = |coeffs: Vec<f64>| SpectralCoeffs {
        basis,
        coeffs,
        source_n: n_fine,
    };
    let initial = wrap(a0);
    let finals: Vec<SpectralCoeffs> = snaps.into_iter().map(wrap).collect();
    resolutions
        .iter()
        .map(|&n| {
            let input = restrict(&initial, n)?;
            let outputs = finals.iter().map(|c| restrict(c, n)).collect::<Result<_>>()?;
            Ok((input, outputs))
        })
        .collect()
}

fn heat_sample(task: &TaskSpec, seed: u64, resolutions: &[usize]) -> Result<SampleFields> {
    let Pde::Heat1d {
        diffusivity,
        flux_amplitude,
        omega,
        horizon,
        steps,
        dt,
        fine_factor,
    } = &task.pde
    else {
        unreachable!()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = if omega[0] == omega[1] {
        omega[0]
    } else {
        rng.gen_range(omega[0]..omega[1])
    };
    let m_fine = fine_factor * (task.resolution - 1);
    let fine = Grid1D::new(m_fine + 1)?;
    let u0: Vec<f64> = fine.nodes().iter().map(|x| (w * std::f64::consts::PI * x).cos()).collect();
    let traj = solve_heat_1d_timedep(&u0, *diffusivity, *flux_amplitude, *horizon, *steps, *dt)?;
    resolutions
        .iter()
        .map(|&n| {
            let stride = m_fine / (n - 1);
            let sub = |f: &[f64]| (0..n).map(|j| f[j * stride]).collect::<Vec<f64>>();
            Ok((sub(&u0), traj.iter().map(|f| sub(f)).collect()))
        })
        .collect()
}

fn wave_sample(task: &TaskSpec, seed: u64, resolutions: &[usize]) -> Result<SampleFields> {
    let Pde::Wave2d { c, amplitude, .. } = &task.pde else {
        unreachable!()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = if amplitude[0] == amplitude[1] {
        amplitude[0]
    } else {
        rng.gen_range(amplitude[0]..amplitude[1])
    };
    let times = task.times();
    resolutions
        .iter()
        .map(|&n| {
            let grid = Grid2D::new(n, n)?;
            let input = wave2d_exact(k, *c, 0.0, &grid)?.into_data();
            let outputs = times
                .iter()
                .map(|&t| wave2d_exact(k, *c, t, &grid).map(Tensor::into_data))
                .collect::<Result<_>>()?;
            Ok((input, outputs))
        })
        .collect()
}

fn assemble(task: &TaskSpec, split: &str, n: usize, fields: Vec<(Vec<f64>, Vec<Vec<f64>>)>) -> Result<Dataset> {
    let dims = task.dims();
    let grid = vec![n; dims];
    let s = fields.len();
    let times = task.times();
    let time_axis = task.time_axis();
    let mut input = Vec::new();
    let mut output = Vec::new();
    for (i, o) in fields {
        input.extend(i);
        for f in o {
            output.extend(f);
        }
    }
    let mut in_shape = vec![s];
    in_shape.extend_from_slice(&grid);
    in_shape.push(1);
    let mut out_shape = vec![s];
    if time_axis {
        out_shape.push(times.len());
    }
    out_shape.extend_from_slice(&grid);
    out_shape.push(1);
    Ok(Dataset {
        task: task.clone(),
        split: split.to_string(),
        grid,
        times,
        time_axis,
        boundary_conditions: task.boundary_conditions(),
        input: Tensor::new(in_shape, input)?,
        output: Tensor::new(out_shape, output)?,
    })
}

/// Generates every non-empty split in memory: `train`, `test`, then the
/// test split at each extra resolution (named `test_n{N}`).
pub fn generate(task: &TaskSpec, exec: Exec) -> Result<Vec<Dataset>> {
    task.validate()?;
    let mut test_res = vec![task.resolution];
    test_res.extend(task.extra_test_resolutions.iter().copied());
    let sample = |index: usize, resolutions: &[usize]| {
        let seed = derive_seed(task.seed, index as u64);
        match task.pde {
            Pde::Burgers1d { .. } => burgers_sample(task, seed, resolutions),
            Pde::Heat1d { .. } => heat_sample(task, seed, resolutions),
            Pde::Wave2d { .. } => wave_sample(task, seed, resolutions),
        }
    };
    let train = exec.try_map(task.train_samples, |i| sample(i, &[task.resolution]))?;
    let test = exec.try_map(task.test_samples, |i| sample(task.train_samples + i, &test_res))?;

    let mut out = Vec::new();
    if task.train_samples > 0 {
        let fields = train.into_iter().map(|mut f| f.remove(0)).collect();
        out.push(assemble(task, "train", task.resolution, fields)?);
    }
    if task.test_samples == 0 {
        return Ok(out);
    }
    let mut per_res: Vec<Vec<_>> = vec![Vec::with_capacity(task.test_samples); test_res.len()];
    for fields in test {
        for (r, f) in fields.into_iter().enumerate() {
            per_res[r].push(f);
        }
    }
    for (r, fields) in per_res.into_iter().enumerate() {
        let name = if r == 0 {
            "test".to_string()
        } else {
            format!("test_n{}", test_res[r])
        };
        out.push(assemble(task, &name, test_res[r], fields)?);
    }
    Ok(out)
}

/// Summary line for one written split.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SplitSummary {
    pub split: String,
    pub path: PathBuf,
    pub samples: usize,
    pub resolution: usize,
    pub input_bc_error: Option<f64>,
    pub output_bc_error: Option<f64>,
}

/// Generates and writes every split as `<split>.spfd` under `out_dir`.
pub fn make_dataset(task: &TaskSpec, out_dir: &Path, exec: Exec) -> Result<Vec<SplitSummary>> {
    let sets = generate(task, exec)?;
    std::fs::create_dir_all(out_dir)?;
    sets.iter()
        .map(|d| {
            let path = out_dir.join(format!("{}.spfd", d.split));
            d.save(&path)?;
            let scan = d.bc_scan()?;
            Ok(SplitSummary {
                split: d.split.clone(),
                path,
                samples: d.len(),
                resolution: d.grid[0],
                input_bc_error: scan.map(|s| s.0),
                output_bc_error: scan.map(|s| s.1),
            })
        })
        .collect()
}

/// Basis matching the boundary conditions a task declares, per dimension.
pub fn task_bases(task: &TaskSpec) -> Option<Vec<BasisKind>> {
    task.boundary_conditions()
        .map(|bcs| bcs.into_iter().map(BoundaryCondition::basis).collect())
}
