use std::path::{Path, PathBuf};

use serde::Serialize;
use spfno_core::model::Checkpoint;
use spfno_core::oracle::Dataset;
use spfno_core::par::Exec;
use spfno_core::trainer::evaluate;

use super::train::check_channels;
use crate::error::{CliError, Result};
use crate::run::{write_text, Run, MANIFEST_FILE};

#[derive(Debug, Serialize)]
struct EvalReport {
    checkpoint: PathBuf,
    dataset: PathBuf,
    split: String,
    resolution: Vec<usize>,
    samples: usize,
    projection_filter: bool,
    mean_rel_l2: f64,
    worst_rel_l2: f64,
    bc_linf: f64,
}

/// A dataset file, or the test split of a dataset directory at `resolution`.
fn resolve_dataset(path: &Path, resolution: Option<usize>) -> Result<PathBuf> {
    if !path.is_dir() {
        return Ok(path.to_path_buf());
    }
    if let Some(n) = resolution {
        let candidate = path.join(format!("test_n{n}.spfd"));
        if candidate.exists() {
            return Ok(candidate);
        }
    }
    Ok(path.join("test.spfd"))
}

pub fn run(
    run: &Run,
    checkpoint: &Path,
    dataset: &Path,
    resolution: Option<usize>,
    no_projection_filter: bool,
) -> Result<()> {
    let ck = Checkpoint::load(checkpoint)?;
    let mut model = ck.model;
    if no_projection_filter {
        model.set_projection_filter(false);
    }
    let data_path = resolve_dataset(dataset, resolution)?;
    let ds = Dataset::load(&data_path)?;
    if let Some(n) = resolution {
        if ds.grid.iter().any(|&g| g != n) {
            return Err(CliError::Config(format!(
                "--resolution {n} requested but {} holds a {:?} grid",
                data_path.display(),
                ds.grid
            )));
        }
    }
    model.check_grid(&ds.grid).map_err(|e| {
        CliError::Config(format!(
            "cannot evaluate at grid {:?}: {e}",
            ds.grid
        ))
    })?;
    let samples = ds.samples()?;
    check_channels(model.config(), &samples, "evaluation")?;

    let bcs = model.config().boundary_conditions();
    let metrics = evaluate(&model, &samples, &bcs, Exec::default())?;
    let report = EvalReport {
        checkpoint: checkpoint.to_path_buf(),
        dataset: data_path.clone(),
        split: ds.split.clone(),
        resolution: ds.grid.clone(),
        samples: ds.len(),
        projection_filter: model.config().use_projection_filter,
        mean_rel_l2: metrics.mean_rel_l2,
        worst_rel_l2: metrics.worst_rel_l2,
        bc_linf: metrics.bc_linf,
    };
    let text = serde_json::to_string_pretty(&report).expect("report serializes");
    println!("{text}");

    if let Some(out) = run.prepare_out()? {
        let path = out.join("metrics.json");
        write_text(&path, &(text + "\n"))?;
        run.write_manifest(
            serde_json::json!({
                "resolution": resolution,
                "no_projection_filter": no_projection_filter,
            }),
            ck.meta.seed,
            vec![checkpoint.to_path_buf(), data_path],
            vec![path, out.join(MANIFEST_FILE)],
        )?;
    }
    Ok(())
}
