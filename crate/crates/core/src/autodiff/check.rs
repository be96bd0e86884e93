//! Finite-difference verification of recorded gradients.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{Op, Tape, Var};
use crate::error::Result;
use crate::tensor::Tensor;

/// Denominator floor for relative errors, so that gradients that are zero up
/// to rounding do not register as failures.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-5;

fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs()).max(RELATIVE_ERROR_FLOOR);
    (analytic - numeric).abs() / scale
}

#[derive(Debug, Clone)]
pub struct GradCheckConfig {
    /// Number of parameter coordinates probed by central differences.
    pub probes: usize,
    pub eps: f64,
    pub seed: u64,
    /// Also verify the vector-Jacobian product of every recorded node.
    pub check_nodes: bool,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            probes: 200,
            eps: 1e-5,
            seed: 0,
            check_nodes: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ProbeResult {
    pub parameter: String,
    pub index: Vec<usize>,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

/// Directional check `<v, J d>` of one input of one node.
#[derive(Debug, Clone)]
pub struct NodeCheck {
    pub node: usize,
    pub op: &'static str,
    pub input: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, Default)]
pub struct GradCheckReport {
    pub probes: Vec<ProbeResult>,
    pub nodes: Vec<NodeCheck>,
    pub max_rel_error: f64,
}

impl GradCheckReport {
    pub fn worst_probe(&self) -> Option<&ProbeResult> {
        self.probes
            .iter()
            .max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
    }

    pub fn worst_node(&self) -> Option<&NodeCheck> {
        self.nodes
            .iter()
            .max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
    }

    pub fn passed(&self, tolerance: f64) -> bool {
        self.max_rel_error <= tolerance
    }

    pub fn failing_nodes(&self, tolerance: f64) -> Vec<&NodeCheck> {
        self.nodes
            .iter()
            .filter(|n| n.rel_error > tolerance)
            .collect()
    }
}

fn unravel(mut flat: usize, shape: &[usize]) -> Vec<usize> {
    let mut index = vec![0; shape.len()];
    for (slot, &extent) in index.iter_mut().zip(shape).rev() {
        *slot = flat % extent;
        flat /= extent;
    }
    index
}

fn random_like(rng: &mut ChaCha8Rng, t: &Tensor) -> Tensor {
    let data = (0..t.len()).map(|_| rng.sample(StandardNormal)).collect();
    Tensor::new(t.shape().to_vec(), data).expect("same shape")
}

/// Checks every recorded node's vector-Jacobian product against central
/// differences of its forward map along a random direction.
pub fn check_node_vjps(tape: &Tape<'_>, seed: u64, eps: f64) -> Result<Vec<NodeCheck>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut checks = Vec::new();
    for index in 0..tape.len() {
        let (op, inputs) = tape.node_parts(index);
        if matches!(op, Op::Leaf) {
            continue;
        }
        let values: Vec<&Tensor> = inputs.iter().map(|v| tape.value(*v)).collect();
        let out = tape.value(Var(index));
        let v = random_like(&mut rng, out);
        let needs = vec![true; values.len()];
        let grads = op.vjp(&values, out, &v, &needs)?;
        for (j, grad) in grads.iter().enumerate() {
            let Some(grad) = grad else { continue };
            let direction = random_like(&mut rng, values[j]);
            let analytic = grad.dot(&direction);
            let shifted = |sign: f64| -> Result<Tensor> {
                let data = values[j]
                    .data()
                    .iter()
                    .zip(direction.data())
                    .map(|(x, d)| x + sign * eps * d)
                    .collect();
                let moved = Tensor::new(values[j].shape().to_vec(), data)?;
                let mut args = values.clone();
                args[j] = &moved;
                op.eval(&args)
            };
            let plus = shifted(1.0)?;
            let minus = shifted(-1.0)?;
            let numeric = (v.dot(&plus) - v.dot(&minus)) / (2.0 * eps);
            checks.push(NodeCheck {
                node: index,
                op: op.name(),
                input: j,
                analytic,
                numeric,
                rel_error: relative_error(analytic, numeric),
            });
        }
    }
    Ok(checks)
}

/// Compares reverse-mode gradients of `loss` with central differences.
///
/// `loss` builds the scalar objective from leaves created for `params`, in
/// order. Every parameter gets at least one probe; the rest are drawn
/// uniformly over all coordinates from `cfg.seed`.
pub fn grad_check<F>(params: &[(String, Tensor)], loss: F, cfg: &GradCheckConfig) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<'_>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars = params
        .iter()
        .map(|(_, t)| tape.param(t))
        .collect::<Result<Vec<_>>>()?;
    let out = loss(&mut tape, &vars)?;
    let grads = tape.backward(out)?;

    let nodes = if cfg.check_nodes {
        check_node_vjps(&tape, cfg.seed ^ 0x9e37_79b9_7f4a_7c15, cfg.eps)?
    } else {
        Vec::new()
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let total: usize = params.iter().map(|(_, t)| t.len()).sum();
    let mut picks: Vec<(usize, usize)> = Vec::new();
    for (p, (_, t)) in params.iter().enumerate() {
        if picks.len() < cfg.probes {
            picks.push((p, rng.gen_range(0..t.len())));
        }
    }
    while picks.len() < cfg.probes.min(total) {
        let mut flat = rng.gen_range(0..total);
        let mut p = 0;
        while flat >= params[p].1.len() {
            flat -= params[p].1.len();
            p += 1;
        }
        picks.push((p, flat));
    }

    let mut work: Vec<Tensor> = params.iter().map(|(_, t)| t.clone()).collect();
    let evaluate = |work: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars = work
            .iter()
            .map(|t| tape.param(t))
            .collect::<Result<Vec<_>>>()?;
        let out = loss(&mut tape, &vars)?;
        Ok(tape.value(out).data()[0])
    };
    let mut probes = Vec::with_capacity(picks.len());
    for (p, flat) in picks {
        let original = work[p].data()[flat];
        work[p].data_mut()[flat] = original + cfg.eps;
        let plus = evaluate(&work)?;
        work[p].data_mut()[flat] = original - cfg.eps;
        let minus = evaluate(&work)?;
        work[p].data_mut()[flat] = original;
        let numeric = (plus - minus) / (2.0 * cfg.eps);
        let analytic = grads.get(vars[p]).map_or(0.0, |g| g.data()[flat]);
        probes.push(ProbeResult {
            parameter: params[p].0.clone(),
            index: unravel(flat, params[p].1.shape()),
            analytic,
            numeric,
            rel_error: relative_error(analytic, numeric),
        });
    }

    let max_rel_error = probes
        .iter()
        .map(|p| p.rel_error)
        .chain(nodes.iter().map(|n| n.rel_error))
        .fold(0.0, f64::max);
    Ok(GradCheckReport {
        probes,
        nodes,
        max_rel_error,
    })
}
