//! Gradient descent and Adam on flat parameter vectors.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};

/// Learning rates swept for the toy problem.
pub const LR_GRID: [f64; 6] = [1e-5, 1e-4, 1e-3, 1e-2, 1e-1, 1.0];

fn check(params: &[f64], grad: &[f64], lr: f64) -> Result<()> {
    if params.len() != grad.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} parameters, {} gradient entries",
            params.len(),
            grad.len()
        )));
    }
    if !(lr > 0.0) || !lr.is_finite() {
        return Err(Error::InvalidArgument(format!("learning rate must be > 0, got {lr}")));
    }
    ensure_finite(grad, "gradient")
}

/// `params ← params − lr·grad`.
pub fn gd_step(params: &mut [f64], grad: &[f64], lr: f64) -> Result<()> {
    check(params, grad, lr)?;
    for (p, g) in params.iter_mut().zip(grad) {
        *p -= lr * g;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step_count: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(len: usize, lr: f64) -> Result<Self> {
        if !(lr > 0.0) || !lr.is_finite() {
            return Err(Error::InvalidArgument(format!("learning rate must be > 0, got {lr}")));
        }
        Ok(Self {
            step_count: 0,
            m: vec![0.0; len],
            v: vec![0.0; len],
            lr,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        })
    }
}

/// One bias-corrected Adam update.
pub fn adam_step(state: &mut AdamState, params: &mut [f64], grad: &[f64]) -> Result<()> {
    check(params, grad, state.lr)?;
    if state.m.len() != params.len() {
        return Err(Error::DimensionMismatch(format!(
            "optimizer state for {} parameters, got {}",
            state.m.len(),
            params.len()
        )));
    }
    state.step_count += 1;
    let t = state.step_count as i32;
    let c1 = 1.0 - state.beta1.powi(t);
    let c2 = 1.0 - state.beta2.powi(t);
    for i in 0..params.len() {
        let g = grad[i];
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g;
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] -= state.lr * m_hat / (v_hat.sqrt() + state.epsilon);
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Gd,
    Adam,
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptimizerKind::Gd => "gd",
            OptimizerKind::Adam => "adam",
        })
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gd" => Ok(OptimizerKind::Gd),
            "adam" => Ok(OptimizerKind::Adam),
            other => Err(Error::InvalidArgument(format!("unknown optimizer {other:?}"))),
        }
    }
}

/// Either optimizer behind one interface.
#[derive(Debug, Clone, PartialEq)]
pub enum Optimizer {
    Gd { lr: f64 },
    Adam(AdamState),
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, len: usize, lr: f64) -> Result<Self> {
        match kind {
            OptimizerKind::Gd => {
                if !(lr > 0.0) || !lr.is_finite() {
                    return Err(Error::InvalidArgument(format!(
                        "learning rate must be > 0, got {lr}"
                    )));
                }
                Ok(Optimizer::Gd { lr })
            }
            OptimizerKind::Adam => Ok(Optimizer::Adam(AdamState::new(len, lr)?)),
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) -> Result<()> {
        match self {
            Optimizer::Gd { lr } => gd_step(params, grad, *lr),
            Optimizer::Adam(state) => adam_step(state, params, grad),
        }
    }
}
