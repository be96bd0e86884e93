use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// First and second moment estimates, aligned with the parameter list.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(params: &[(String, Tensor)]) -> Self {
        Self {
            step: 0,
            m: params.iter().map(|(_, t)| Tensor::zeros(t.shape())).collect(),
            v: params.iter().map(|(_, t)| Tensor::zeros(t.shape())).collect(),
        }
    }
}

/// Decoupled weight decay followed by a bias-corrected Adam update.
pub fn adam_step(
    params: &mut [(String, Tensor)],
    grads: &[Tensor],
    state: &mut AdamState,
    lr: f64,
    weight_decay: f64,
) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(Error::shape("optimizer state does not match the parameter list"));
    }
    for ((name, p), g) in params.iter().zip(grads) {
        if p.shape() != g.shape() {
            return Err(Error::shape(format!("gradient for '{name}' has the wrong shape")));
        }
        if !g.is_finite() {
            return Err(Error::NumericFault {
                context: format!("gradient of parameter '{name}'"),
            });
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - BETA1.powi(t);
    let c2 = 1.0 - BETA2.powi(t);
    for (i, (_, p)) in params.iter_mut().enumerate() {
        let g = grads[i].data();
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        for (j, pj) in p.data_mut().iter_mut().enumerate() {
            *pj -= lr * weight_decay * *pj;
            m[j] = BETA1 * m[j] + (1.0 - BETA1) * g[j];
            v[j] = BETA2 * v[j] + (1.0 - BETA2) * g[j] * g[j];
            let m_hat = m[j] / c1;
            let v_hat = v[j] / c2;
            *pj -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum SchedulerConfig {
    /// `lr0 * gamma^floor(epoch / step)`; `step` defaults to a tenth of the epochs.
    StepLr {
        #[serde(default)]
        step: Option<usize>,
        #[serde(default = "half")]
        gamma: f64,
    },
    /// Multiplies by `factor` after more than `patience` evaluations without
    /// a relative improvement of `1e-4`, never below `min_lr`.
    Plateau {
        #[serde(default = "half")]
        factor: f64,
        #[serde(default = "twenty")]
        patience: usize,
        #[serde(default = "min_lr")]
        min_lr: f64,
    },
}

fn half() -> f64 {
    0.5
}

fn twenty() -> usize {
    20
}

fn min_lr() -> f64 {
    1e-6
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        SchedulerConfig::StepLr {
            step: None,
            gamma: 0.5,
        }
    }
}

const PLATEAU_THRESHOLD: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheduler {
    StepLr {
        base_lr: f64,
        step: usize,
        gamma: f64,
    },
    Plateau {
        lr: f64,
        factor: f64,
        patience: usize,
        min_lr: f64,
        best: Option<f64>,
        bad_evals: usize,
    },
}

impl Scheduler {
    pub fn new(cfg: &SchedulerConfig, base_lr: f64, epochs: usize) -> Result<Self> {
        match *cfg {
            SchedulerConfig::StepLr { step, gamma } => {
                if !(gamma > 0.0 && gamma < 1.0) {
                    return Err(Error::config("scheduler.step_lr.gamma: must lie in (0, 1)"));
                }
                let step = step.unwrap_or((epochs / 10).max(1));
                if step == 0 {
                    return Err(Error::config("scheduler.step_lr.step: must be at least 1"));
                }
                Ok(Scheduler::StepLr { base_lr, step, gamma })
            }
            SchedulerConfig::Plateau {
                factor,
                patience,
                min_lr,
            } => {
                if !(factor > 0.0 && factor < 1.0) {
                    return Err(Error::config("scheduler.plateau.factor: must lie in (0, 1)"));
                }
                Ok(Scheduler::Plateau {
                    lr: base_lr,
                    factor,
                    patience,
                    min_lr,
                    best: None,
                    bad_evals: 0,
                })
            }
        }
    }

    /// Learning rate to use during `epoch` (0-based).
    pub fn lr(&self, epoch: usize) -> f64 {
        match *self {
            Scheduler::StepLr { base_lr, step, gamma } => base_lr * gamma.powi((epoch / step) as i32),
            Scheduler::Plateau { lr, .. } => lr,
        }
    }

    /// Feeds one evaluation loss; only the plateau schedule reacts.
    pub fn observe(&mut self, eval_loss: f64) {
        if let Scheduler::Plateau {
            lr,
            factor,
            patience,
            min_lr,
            best,
            bad_evals,
        } = self
        {
            let improved = match *best {
                None => true,
                Some(b) => eval_loss < b * (1.0 - PLATEAU_THRESHOLD),
            };
            if improved {
                *best = Some(eval_loss);
                *bad_evals = 0;
            } else {
                *bad_evals += 1;
                if *bad_evals > *patience {
                    *lr = (*lr * *factor).max(*min_lr);
                    *bad_evals = 0;
                }
            }
        }
    }
}

/// Learning rate for `epoch` after feeding `eval_loss`, when present.
pub fn schedule_lr(scheduler: &mut Scheduler, epoch: usize, eval_loss: Option<f64>) -> f64 {
    if let Some(loss) = eval_loss {
        scheduler.observe(loss);
    }
    scheduler.lr(epoch)
}
