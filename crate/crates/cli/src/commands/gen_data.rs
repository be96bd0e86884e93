use std::path::Path;

use spfno_core::oracle::{make_dataset, TaskSpec};
use spfno_core::par::Exec;

use crate::error::{CliError, Result};
use crate::run::{read_json, Run, MANIFEST_FILE};

/// Largest boundary violation tolerated in a stored field.
const BC_TOLERANCE: f64 = 1e-10;

fn fmt_err(e: Option<f64>) -> String {
    e.map_or_else(|| "n/a".to_string(), |v| format!("{v:.3e}"))
}

pub fn run(run: &Run, config: &Path) -> Result<()> {
    let mut task: TaskSpec = read_json(config)?;
    if let Some(seed) = run.seed {
        task.seed = seed;
    }
    task.validate()?;
    run.require_out()?;
    let out = run.prepare_out()?.expect("checked above");

    let summary = make_dataset(&task, out, Exec::default())?;
    let mut worst: f64 = 0.0;
    for s in &summary {
        println!(
            "{}: {} samples at N = {}, input BC error {}, output BC error {}",
            s.split,
            s.samples,
            s.resolution,
            fmt_err(s.input_bc_error),
            fmt_err(s.output_bc_error)
        );
        worst = worst.max(s.input_bc_error.unwrap_or(0.0)).max(s.output_bc_error.unwrap_or(0.0));
    }

    let mut artifacts: Vec<_> = summary.iter().map(|s| s.path.clone()).collect();
    artifacts.push(out.join(MANIFEST_FILE));
    run.write_manifest(
        serde_json::to_value(&task).expect("task serializes"),
        task.seed,
        vec![config.to_path_buf()],
        artifacts,
    )?;
    if worst > BC_TOLERANCE {
        return Err(CliError::Threshold(format!(
            "stored fields violate their boundary conditions by {worst:.3e} (tolerance {BC_TOLERANCE:e})"
        )));
    }
    Ok(())
}
