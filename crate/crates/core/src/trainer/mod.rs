//! Deterministic training and evaluation.

mod optim;

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

pub use optim::{adam_step, schedule_lr, AdamState, Scheduler, SchedulerConfig, ADAM_EPS, BETA1, BETA2};

use crate::autodiff::{relative_errors, Tape};
use crate::error::{Error, Result};
use crate::model::{Checkpoint, CheckpointMeta, Spfno};
use crate::par::Exec;
use crate::tensor::Tensor;
use crate::transforms::{bc_error, BoundaryCondition};

pub const METRICS_HEADER: &str = "epoch,train_loss,test_rel_l2,test_worst_l2,test_bc_linf,lr,seconds";

fn default_lr() -> f64 {
    1e-3
}

fn default_one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default)]
    pub weight_decay: f64,
    #[serde(default)]
    pub scheduler: SchedulerConfig,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_one")]
    pub eval_every: usize,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("epochs: must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size: must be at least 1"));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::config("learning_rate: must be positive"));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::config("weight_decay: must be non-negative"));
        }
        if self.eval_every == 0 {
            return Err(Error::config("eval_every: must be at least 1"));
        }
        Scheduler::new(&self.scheduler, self.learning_rate, self.epochs).map(|_| ())
    }
}

/// Paired fields in channels-last layout `[S, grid..., C]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Samples {
    pub input: Tensor,
    pub output: Tensor,
}

impl Samples {
    pub fn new(input: Tensor, output: Tensor) -> Result<Self> {
        if input.shape()[0] != output.shape()[0] || input.ndim() != output.ndim() {
            return Err(Error::shape(format!(
                "input {:?} and output {:?} do not pair up",
                input.shape(),
                output.shape()
            )));
        }
        let d = input.ndim() - 1;
        if input.shape()[1..d] != output.shape()[1..d] {
            return Err(Error::shape("input and output grids differ"));
        }
        Ok(Self { input, output })
    }

    pub fn len(&self) -> usize {
        self.input.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn grid(&self) -> &[usize] {
        &self.input.shape()[1..self.input.ndim() - 1]
    }

    fn sample(t: &Tensor, i: usize) -> Tensor {
        let mut shape = t.shape().to_vec();
        shape[0] = 1;
        t.index_leading(i).reshape(shape).expect("same size")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub mean_rel_l2: f64,
    pub worst_rel_l2: f64,
    pub bc_linf: f64,
}

/// Mean and worst relative L2 plus the largest boundary violation over
/// every channel of every prediction. Never mutates the model.
pub fn evaluate(model: &Spfno, data: &Samples, bcs: &[BoundaryCondition], exec: Exec) -> Result<EvalMetrics> {
    let pred = model.predict(&data.input, exec)?;
    let (errs, _) = relative_errors(&pred, &data.output)?;
    let mean = errs.iter().sum::<f64>() / errs.len() as f64;
    let worst = errs.iter().fold(0.0f64, |m, &e| m.max(e));
    let bc = bc_linf(&pred, bcs)?;
    Ok(EvalMetrics {
        mean_rel_l2: mean,
        worst_rel_l2: worst,
        bc_linf: bc,
    })
}

/// Largest [`bc_error`] over samples and channels of `[S, grid..., C]`.
pub fn bc_linf(fields: &Tensor, bcs: &[BoundaryCondition]) -> Result<f64> {
    let d = fields.ndim() - 2;
    if bcs.len() != d {
        return Err(Error::shape("one boundary condition per grid dimension is required"));
    }
    let grid = &fields.shape()[1..=d];
    let channels = fields.shape()[d + 1];
    let points: usize = grid.iter().product();
    let mut worst: f64 = 0.0;
    for s in 0..fields.shape()[0] {
        let base = s * points * channels;
        for c in 0..channels {
            let data = (0..points)
                .map(|p| fields.data()[base + p * channels + c])
                .collect();
            let field = Tensor::new(grid.to_vec(), data)?;
            worst = worst.max(bc_error(&field, bcs)?);
        }
    }
    Ok(worst)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub test: EvalMetrics,
    pub lr: f64,
    pub seconds: f64,
}

impl MetricsRecord {
    /// CSV row; floats use the shortest representation that round-trips.
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.epoch,
            self.train_loss,
            self.test.mean_rel_l2,
            self.test.worst_rel_l2,
            self.test.bc_linf,
            self.lr,
            self.seconds
        )
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
struct TrainerState {
    train_config: TrainConfig,
    scheduler: Scheduler,
    best_test_rel_l2: Option<f64>,
}

/// Output locations of a training run.
#[derive(Debug, Clone)]
pub struct RunPaths {
    pub metrics: PathBuf,
    pub best: PathBuf,
    pub last: PathBuf,
    pub fault: PathBuf,
}

impl RunPaths {
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            metrics: dir.join("metrics.csv"),
            best: dir.join("best.spfck"),
            last: dir.join("last.spfck"),
            fault: dir.join("fault.spfck"),
        }
    }
}

pub struct Trainer {
    model: Spfno,
    cfg: TrainConfig,
    adam: AdamState,
    scheduler: Scheduler,
    epoch: usize,
    history: Vec<f64>,
    best: Option<f64>,
    exec: Exec,
}

impl Trainer {
    pub fn new(model: Spfno, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let scheduler = Scheduler::new(&cfg.scheduler, cfg.learning_rate, cfg.epochs)?;
        Ok(Self {
            adam: AdamState::new(model.params()),
            model,
            cfg,
            scheduler,
            epoch: 0,
            history: Vec::new(),
            best: None,
            exec: Exec::default(),
        })
    }

    /// Continues from a checkpoint; the epoch counter, optimizer moments and
    /// scheduler pick up where they stopped. `cfg.epochs` is the new total.
    pub fn resume(ck: Checkpoint, cfg: TrainConfig) -> Result<Self> {
        let mut trainer = Self::new(ck.model, cfg)?;
        if let Some(adam) = ck.optimizer {
            trainer.adam = adam;
        }
        if let Ok(state) = serde_json::from_value::<TrainerState>(ck.meta.trainer.clone()) {
            trainer.scheduler = state.scheduler;
            trainer.best = state.best_test_rel_l2;
        }
        trainer.epoch = ck.meta.epoch;
        trainer.history = ck.meta.loss_history;
        Ok(trainer)
    }

    pub fn with_exec(mut self, exec: Exec) -> Self {
        self.exec = exec;
        self
    }

    pub fn model(&self) -> &Spfno {
        &self.model
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn checkpoint(&self) -> Checkpoint {
        let state = TrainerState {
            train_config: self.cfg.clone(),
            scheduler: self.scheduler.clone(),
            best_test_rel_l2: self.best,
        };
        Checkpoint {
            model: self.model.clone(),
            optimizer: Some(self.adam.clone()),
            meta: CheckpointMeta {
                epoch: self.epoch,
                seed: self.cfg.seed,
                loss_history: self.history.clone(),
                trainer: serde_json::to_value(state).unwrap_or(json!(null)),
            },
        }
    }

    fn batch_gradients(&self, inputs: &[Tensor], outputs: &[Tensor], batch: &[usize]) -> Result<(f64, Vec<Tensor>)> {
        let scale = 1.0 / batch.len() as f64;
        let model = &self.model;
        let per_sample = self.exec.try_map(batch.len(), |i| -> Result<(f64, Vec<Tensor>)> {
            let s = batch[i];
            let mut tape = Tape::new();
            let p = model.attach(&mut tape)?;
            let pred = model.graph(&mut tape, &p, &inputs[s])?;
            let loss = tape.relative_l2_loss(pred, &outputs[s])?;
            let scaled = tape.scale(loss, scale)?;
            let mut grads = tape.backward(scaled)?;
            let value = tape.value(loss).data()[0];
            let g = p
                .iter()
                .map(|v| grads.take(*v).expect("parameters require gradients"))
                .collect();
            Ok((value, g))
        })?;
        let mut iter = per_sample.into_iter();
        let (mut loss_sum, mut total) = iter.next().expect("non-empty batch");
        for (loss, grads) in iter {
            loss_sum += loss;
            for (acc, g) in total.iter_mut().zip(grads) {
                for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                    *a += b;
                }
            }
        }
        Ok((loss_sum, total))
    }

    /// One pass over `train` in the (seed, epoch)-keyed order; returns the
    /// mean per-sample loss seen during the pass.
    pub fn train_epoch(&mut self, train: &Samples) -> Result<f64> {
        let inputs: Vec<Tensor> = (0..train.len()).map(|i| Samples::sample(&train.input, i)).collect();
        let outputs: Vec<Tensor> = (0..train.len()).map(|i| Samples::sample(&train.output, i)).collect();
        self.train_epoch_split(&inputs, &outputs)
    }

    fn train_epoch_split(&mut self, inputs: &[Tensor], outputs: &[Tensor]) -> Result<f64> {
        let mut order: Vec<usize> = (0..inputs.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        rng.set_stream(self.epoch as u64);
        order.shuffle(&mut rng);
        let lr = self.scheduler.lr(self.epoch);
        let mut loss_sum = 0.0;
        for batch in order.chunks(self.cfg.batch_size) {
            let (loss, grads) = self.batch_gradients(inputs, outputs, batch)?;
            loss_sum += loss;
            adam_step(self.model.params_mut(), &grads, &mut self.adam, lr, self.cfg.weight_decay)?;
        }
        self.epoch += 1;
        let mean = loss_sum / inputs.len() as f64;
        self.history.push(mean);
        Ok(mean)
    }

    /// Trains until `cfg.epochs` epochs are complete, evaluating on `test`
    /// every `eval_every` epochs and after the last one.
    pub fn run(&mut self, train: &Samples, test: &Samples, paths: Option<&RunPaths>) -> Result<Vec<MetricsRecord>> {
        self.model.check_grid(train.grid())?;
        self.model.check_grid(test.grid())?;
        let bcs = self.model.config().boundary_conditions();
        let inputs: Vec<Tensor> = (0..train.len()).map(|i| Samples::sample(&train.input, i)).collect();
        let outputs: Vec<Tensor> = (0..train.len()).map(|i| Samples::sample(&train.output, i)).collect();

        let mut csv = match paths {
            Some(p) => {
                let fresh = self.epoch == 0 || !p.metrics.exists();
                let file = if fresh {
                    File::create(&p.metrics)?
                } else {
                    OpenOptions::new().append(true).open(&p.metrics)?
                };
                let mut w = BufWriter::new(file);
                if fresh {
                    writeln!(w, "{METRICS_HEADER}")?;
                    w.flush()?;
                }
                Some(w)
            }
            None => None,
        };

        let start = Instant::now();
        let mut records = Vec::new();
        while self.epoch < self.cfg.epochs {
            let lr = self.scheduler.lr(self.epoch);
            let train_loss = match self.train_epoch_split(&inputs, &outputs) {
                Ok(l) => l,
                Err(e) => {
                    if let (Error::NumericFault { .. }, Some(p)) = (&e, paths) {
                        self.checkpoint().save(&p.fault)?;
                    }
                    return Err(e);
                }
            };
            if self.epoch % self.cfg.eval_every != 0 && self.epoch != self.cfg.epochs {
                continue;
            }
            let test_metrics = evaluate(&self.model, test, &bcs, self.exec)?;
            self.scheduler.observe(test_metrics.mean_rel_l2);
            let record = MetricsRecord {
                epoch: self.epoch,
                train_loss,
                test: test_metrics,
                lr,
                seconds: start.elapsed().as_secs_f64(),
            };
            let improved = self.best.is_none_or(|b| test_metrics.mean_rel_l2 < b);
            if improved {
                self.best = Some(test_metrics.mean_rel_l2);
            }
            if let Some(p) = paths {
                if improved {
                    self.checkpoint().save(&p.best)?;
                }
                self.checkpoint().save(&p.last)?;
            }
            if let Some(w) = csv.as_mut() {
                writeln!(w, "{}", record.csv_row())?;
                w.flush()?;
            }
            records.push(record);
        }
        Ok(records)
    }
}
