//! First-order ascent on a target density: plain SGD with momentum and Adam,
//! plus the MAP optimization loop.

use ndarray::Array1;
use serde::{Deserialize, Serialize};

use super::TargetDensity;
use crate::error::{CoreError, Result};
use crate::nn::ParamVector;

/// Update rule applied to ascent directions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    Sgd { momentum: f64 },
    Adam { beta1: f64, beta2: f64, epsilon: f64 },
}

impl Optimizer {
    /// Adam with the usual moment decay rates.
    pub fn adam_default() -> Self {
        Optimizer::Adam {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Optimizer::Sgd { momentum } => {
                if !(momentum.is_finite() && (0.0..1.0).contains(&momentum)) {
                    return Err(CoreError::InvalidConfig(format!(
                        "sgd momentum must lie in [0, 1), got {momentum}"
                    )));
                }
            }
            Optimizer::Adam {
                beta1,
                beta2,
                epsilon,
            } => {
                for (name, b) in [("beta1", beta1), ("beta2", beta2)] {
                    if !(b.is_finite() && (0.0..1.0).contains(&b)) {
                        return Err(CoreError::InvalidConfig(format!(
                            "adam {name} must lie in [0, 1), got {b}"
                        )));
                    }
                }
                if !(epsilon.is_finite() && epsilon > 0.0) {
                    return Err(CoreError::InvalidConfig(format!(
                        "adam epsilon must be positive, got {epsilon}"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Optimizer, step size, and step budget for one ascent run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptConfig {
    pub optimizer: Optimizer,
    pub step_size: f64,
    pub num_steps: usize,
}

impl OptConfig {
    pub fn validate(&self) -> Result<()> {
        self.optimizer.validate()?;
        if !(self.step_size.is_finite() && self.step_size >= 0.0) {
            return Err(CoreError::InvalidConfig(format!(
                "step size must be finite and non-negative, got {}",
                self.step_size
            )));
        }
        Ok(())
    }
}

/// Reusable ascent state: call [`GradientAscent::step`] with successive
/// gradients of the objective being maximized.
#[derive(Clone, Debug)]
pub struct GradientAscent {
    optimizer: Optimizer,
    step_size: f64,
    t: usize,
    m: Array1<f64>,
    v: Array1<f64>,
}

impl GradientAscent {
    pub fn new(optimizer: Optimizer, step_size: f64, dim: usize) -> Self {
        let second = match optimizer {
            Optimizer::Adam { .. } => dim,
            Optimizer::Sgd { .. } => 0,
        };
        GradientAscent {
            optimizer,
            step_size,
            t: 0,
            m: Array1::zeros(dim),
            v: Array1::zeros(second),
        }
    }

    /// One in-place ascent step. Returns `false` when any updated coordinate
    /// is non-finite, so callers can report divergence at the exact step.
    pub fn step(&mut self, theta: &mut Array1<f64>, grad: &Array1<f64>) -> bool {
        let lr = self.step_size;
        let mut finite = true;
        match self.optimizer {
            Optimizer::Sgd { momentum } => {
                for ((t, g), m) in theta.iter_mut().zip(grad.iter()).zip(self.m.iter_mut()) {
                    *m = momentum * *m + g;
                    *t += lr * *m;
                    finite &= t.is_finite();
                }
            }
            Optimizer::Adam {
                beta1,
                beta2,
                epsilon,
            } => {
                self.t += 1;
                let bc1 = 1.0 - beta1.powi(self.t as i32);
                let bc2 = 1.0 - beta2.powi(self.t as i32);
                for (((t, g), m), v) in theta
                    .iter_mut()
                    .zip(grad.iter())
                    .zip(self.m.iter_mut())
                    .zip(self.v.iter_mut())
                {
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    let m_hat = *m / bc1;
                    let v_hat = *v / bc2;
                    *t += lr * m_hat / (v_hat.sqrt() + epsilon);
                    finite &= t.is_finite();
                }
            }
        }
        finite
    }
}

/// Deterministic ascent to a (local) posterior mode. Divergence (non-finite
/// parameters) is reported with the step at which it happened.
pub fn map_optimize(
    target: &TargetDensity,
    init: &ParamVector,
    cfg: &OptConfig,
) -> Result<ParamVector> {
    target.validate()?;
    cfg.validate()?;
    let dim = target.arch.param_count();
    if init.len() != dim {
        return Err(CoreError::DimensionMismatch(format!(
            "init has {} parameters, architecture needs {dim}",
            init.len()
        )));
    }
    let mut theta = init.clone();
    let mut grad = ParamVector::zeros(dim);
    let mut scratch = ParamVector::zeros(dim);
    let mut ascent = GradientAscent::new(cfg.optimizer, cfg.step_size, dim);
    for step in 0..cfg.num_steps {
        target.grad_log_unnorm_into(&theta, &mut grad, &mut scratch)?;
        if !ascent.step(&mut theta.values, &grad.values) {
            return Err(CoreError::Diverged {
                step,
                context: "map ascent produced non-finite parameters".into(),
            });
        }
    }
    Ok(theta)
}
