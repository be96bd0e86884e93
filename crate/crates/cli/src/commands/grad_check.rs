use std::path::Path;

use serde::{Deserialize, Serialize};
use spfno_core::autodiff::{inject_adjoint_fault, GradCheckConfig};
use spfno_core::model::{grad_check_model, SpfnoConfig};
use spfno_core::transforms::BasisKind;

use crate::error::{CliError, Result};
use crate::run::{check_version, read_json, write_text, Run, MANIFEST_FILE};

pub const GRAD_CHECK_CONFIG_VERSION: u32 = 1;

fn default_probes() -> usize {
    200
}

fn default_tolerance() -> f64 {
    1e-5
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GradCheckRunConfig {
    pub version: u32,
    pub model: SpfnoConfig,
    pub grid: Vec<usize>,
    #[serde(default = "default_probes")]
    pub probes: usize,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
}

impl Default for GradCheckRunConfig {
    /// N = 17, k_max = 5, W = 4, b = 2, L = 2 with the projection filter on.
    fn default() -> Self {
        Self {
            version: GRAD_CHECK_CONFIG_VERSION,
            model: SpfnoConfig {
                k_max: vec![5],
                layers: 2,
                width: 4,
                bandwidth: vec![2],
                bases: vec![BasisKind::Sine],
                in_channels: 1,
                out_channels: 1,
                append_coords: true,
                activation: Default::default(),
                use_projection_filter: true,
                head_width: 128,
                skip_hidden: None,
            },
            grid: vec![17],
            probes: default_probes(),
            tolerance: default_tolerance(),
        }
    }
}

pub fn run(run: &Run, config: Option<&Path>, eps: f64, inject_fault: bool) -> Result<()> {
    let cfg: GradCheckRunConfig = match config {
        Some(path) => read_json(path)?,
        None => GradCheckRunConfig::default(),
    };
    check_version(cfg.version, GRAD_CHECK_CONFIG_VERSION)?;
    if !(eps > 0.0) {
        return Err(CliError::Config(format!("--eps must be positive, got {eps}")));
    }
    let seed = run.seed.unwrap_or(0);
    let gc = GradCheckConfig {
        probes: cfg.probes,
        eps,
        seed,
        check_nodes: true,
    };
    inject_adjoint_fault(inject_fault);
    let report = grad_check_model(cfg.model.clone(), &cfg.grid, &gc);
    inject_adjoint_fault(false);
    let report = report?;

    println!(
        "probes {}, node checks {}, eps {eps:e}, max relative error {:.3e} (tolerance {:e})",
        report.probes.len(),
        report.nodes.len(),
        report.max_rel_error,
        cfg.tolerance
    );
    let worst_probe = report.worst_probe().map(|p| {
        format!(
            "{}{:?}: analytic {:.6e}, numeric {:.6e}, relative error {:.3e}",
            p.parameter, p.index, p.analytic, p.numeric, p.rel_error
        )
    });
    let worst_node = report
        .worst_node()
        .map(|n| format!("node {} ({}), input {}: relative error {:.3e}", n.node, n.op, n.input, n.rel_error));
    if let Some(p) = &worst_probe {
        println!("worst coordinate: {p}");
    }
    if let Some(n) = &worst_node {
        println!("worst node: {n}");
    }

    if let Some(out) = run.prepare_out()? {
        let path = out.join("grad_check.json");
        let body = serde_json::json!({
            "max_rel_error": report.max_rel_error,
            "tolerance": cfg.tolerance,
            "passed": report.passed(cfg.tolerance),
            "worst_coordinate": worst_probe,
            "worst_node": worst_node,
        });
        write_text(&path, &(serde_json::to_string_pretty(&body).expect("serializes") + "\n"))?;
        run.write_manifest(
            serde_json::json!({ "config": cfg, "eps": eps, "inject_fault": inject_fault }),
            seed,
            config.map(|p| vec![p.to_path_buf()]).unwrap_or_default(),
            vec![path, out.join(MANIFEST_FILE)],
        )?;
    }

    if !report.passed(cfg.tolerance) {
        let mut ops: Vec<&str> = report.failing_nodes(cfg.tolerance).iter().map(|n| n.op).collect();
        ops.dedup();
        let nodes = if ops.is_empty() {
            String::new()
        } else {
            format!("; failing nodes: {}", ops.join(", "))
        };
        return Err(CliError::Threshold(format!(
            "gradient check failed: max relative error {:.3e} > {:e}; worst coordinate {}{nodes}",
            report.max_rel_error,
            cfg.tolerance,
            worst_probe.unwrap_or_default()
        )));
    }
    Ok(())
}
