use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use spfno_core::model::{Checkpoint, Spfno, SpfnoConfig};
use spfno_core::oracle::Dataset;
use spfno_core::trainer::{RunPaths, Samples, TrainConfig, Trainer, METRICS_HEADER};

use crate::error::{CliError, Result};
use crate::run::{check_version, read_json, write_text, Run, MANIFEST_FILE};

pub const TRAIN_CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainRunConfig {
    pub version: u32,
    pub model: SpfnoConfig,
    pub train: TrainConfig,
}

pub fn load_split(dir: &Path, split: &str) -> Result<(PathBuf, Dataset)> {
    let path = dir.join(format!("{split}.spfd"));
    let ds = Dataset::load(&path)?;
    Ok((path, ds))
}

/// Errors unless the model consumes and produces the dataset's channels.
pub fn check_channels(model: &SpfnoConfig, data: &Samples, what: &str) -> Result<()> {
    let c_in = *data.input.shape().last().expect("non-empty shape");
    let c_out = *data.output.shape().last().expect("non-empty shape");
    if model.in_channels != c_in || model.out_channels != c_out {
        return Err(CliError::Config(format!(
            "model maps {} -> {} channels but the {what} data has {c_in} input and {c_out} output channels",
            model.in_channels, model.out_channels
        )));
    }
    Ok(())
}

/// Keeps the header and rows up to `epoch` of a previous metrics log.
fn carry_metrics(from: &Path, to: &Path, epoch: usize) -> Result<()> {
    let text = fs::read_to_string(from).map_err(|e| CliError::io(from, e))?;
    let mut kept = vec![METRICS_HEADER.to_string()];
    for line in text.lines().skip(1) {
        let row_epoch = line.split(',').next().and_then(|v| v.parse::<usize>().ok());
        if row_epoch.is_some_and(|e| e <= epoch) {
            kept.push(line.to_string());
        }
    }
    write_text(to, &(kept.join("\n") + "\n"))
}

pub fn run(run: &Run, config: &Path, data_dir: &Path, resume: Option<&Path>) -> Result<()> {
    let mut cfg: TrainRunConfig = read_json(config)?;
    check_version(cfg.version, TRAIN_CONFIG_VERSION)?;
    if let Some(seed) = run.seed {
        cfg.train.seed = seed;
    }
    cfg.model.validate()?;
    cfg.train.validate()?;
    run.require_out()?;

    let (train_path, train_set) = load_split(data_dir, "train")?;
    let (test_path, test_set) = load_split(data_dir, "test")?;
    let train = train_set.samples()?;
    let test = test_set.samples()?;
    check_channels(&cfg.model, &train, "training")?;

    let mut inputs = vec![config.to_path_buf(), train_path, test_path];
    let trainer = match resume {
        Some(ck_path) => {
            let ck = Checkpoint::load(ck_path)?;
            if *ck.model.config() != cfg.model {
                return Err(CliError::Config(format!(
                    "checkpoint {} was trained with a different model config",
                    ck_path.display()
                )));
            }
            inputs.push(ck_path.to_path_buf());
            Trainer::resume(ck, cfg.train.clone())?
        }
        None => Trainer::new(Spfno::build(cfg.model.clone(), cfg.train.seed)?, cfg.train.clone())?,
    };
    trainer.model().check_grid(train.grid())?;
    trainer.model().check_grid(test.grid())?;

    let out = run.prepare_out()?.expect("checked above");
    let paths = RunPaths::in_dir(out);
    if let Some(ck_path) = resume {
        let previous = ck_path.parent().unwrap_or(Path::new(".")).join("metrics.csv");
        let same = fs::canonicalize(&previous).ok() == fs::canonicalize(&paths.metrics).ok();
        if previous.exists() && !same {
            carry_metrics(&previous, &paths.metrics, trainer.epoch())?;
        }
    }

    let mut trainer = trainer;
    let start_epoch = trainer.epoch();
    if start_epoch >= cfg.train.epochs {
        println!("checkpoint already at epoch {start_epoch} of {}; nothing to train", cfg.train.epochs);
    }
    let records = trainer.run(&train, &test, Some(&paths))?;
    if let Some(last) = records.last() {
        println!(
            "epoch {}: train_loss {:.6e}, test_rel_l2 {:.6e}, test_worst_l2 {:.6e}, test_bc_linf {:.3e}",
            last.epoch, last.train_loss, last.test.mean_rel_l2, last.test.worst_rel_l2, last.test.bc_linf
        );
    }

    if !paths.last.exists() {
        trainer.checkpoint().save(&paths.last)?;
    }
    let mut artifacts = vec![paths.metrics.clone(), paths.last.clone()];
    if paths.best.exists() {
        artifacts.push(paths.best.clone());
    }
    artifacts.push(out.join(MANIFEST_FILE));
    run.write_manifest(
        serde_json::to_value(&cfg).expect("config serializes"),
        cfg.train.seed,
        inputs,
        artifacts,
    )
}
