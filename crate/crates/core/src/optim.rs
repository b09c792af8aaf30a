//! Adadelta (Zeiler, 2012) and plain SGD.
//!
//! ```text
//! E[g²]  ← ρ·E[g²] + (1-ρ)·g²
//! Δx     = -(√(E[Δx²]+ε) / √(E[g²]+ε))·g
//! E[Δx²] ← ρ·E[Δx²] + (1-ρ)·Δx²
//! x      ← x + lr·Δx
//! ```

use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::linalg::Scalar;
use crate::model::ModelParams;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OptimizerMethod {
    Adadelta,
    Sgd,
}

impl OptimizerMethod {
    pub fn name(self) -> &'static str {
        match self {
            OptimizerMethod::Adadelta => "adadelta",
            OptimizerMethod::Sgd => "sgd",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "adadelta" => Some(OptimizerMethod::Adadelta),
            "sgd" => Some(OptimizerMethod::Sgd),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OptimizerConfig {
    pub method: OptimizerMethod,
    pub learning_rate: f64,
    pub rho: f64,
    pub epsilon: f64,
    /// Rescale the whole gradient when its global L2 norm exceeds this.
    pub clip_norm: Option<f64>,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            method: OptimizerMethod::Adadelta,
            learning_rate: 1.0,
            rho: 0.95,
            epsilon: 1e-6,
            clip_norm: None,
        }
    }
}

impl OptimizerConfig {
    /// A zero learning rate is accepted and freezes the parameters.
    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return Err(Error::InvalidConfig("rho must lie in (0, 1)".into()));
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return Err(Error::InvalidConfig("epsilon must be positive".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(
                "learning rate must be finite and non-negative".into(),
            ));
        }
        if let Some(c) = self.clip_norm {
            if c.is_nan() || c <= 0.0 {
                return Err(Error::InvalidConfig("clip norm must be positive".into()));
            }
        }
        Ok(())
    }
}

/// Running averages, one pair of buffers per parameter block.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState<F> {
    pub mean_sq_grad: Vec<Vec<F>>,
    pub mean_sq_update: Vec<Vec<F>>,
}

impl<F: Scalar> OptimizerState<F> {
    pub fn new(params: &ModelParams<F>) -> Self {
        let zeros: Vec<Vec<F>> = params
            .blocks()
            .iter()
            .map(|(_, b)| alloc::vec![F::zero(); b.len()])
            .collect();
        OptimizerState {
            mean_sq_update: zeros.clone(),
            mean_sq_grad: zeros,
        }
    }
}

/// Update a single block in place.
pub fn adadelta_block<F: Scalar>(
    x: &mut [F],
    g: &[F],
    eg2: &mut [F],
    edx2: &mut [F],
    cfg: &OptimizerConfig,
) {
    let rho = F::from_f64(cfg.rho);
    let one_minus = F::from_f64(1.0 - cfg.rho);
    let eps = F::from_f64(cfg.epsilon);
    let lr = F::from_f64(cfg.learning_rate);
    for i in 0..x.len() {
        let gi = g[i];
        eg2[i] = rho * eg2[i] + one_minus * gi * gi;
        let dx = -((edx2[i] + eps).sqrt() / (eg2[i] + eps).sqrt()) * gi;
        edx2[i] = rho * edx2[i] + one_minus * dx * dx;
        x[i] = x[i] + lr * dx;
    }
}

/// Apply one optimizer step. Non-finite gradients abort before any
/// parameter changes.
pub fn apply_step<F: Scalar>(
    params: &mut ModelParams<F>,
    grads: &ModelParams<F>,
    state: &mut OptimizerState<F>,
    cfg: &OptimizerConfig,
) -> Result<()> {
    let blocks = grads.blocks();
    if let Some((name, _)) = blocks
        .iter()
        .find(|(_, b)| b.iter().any(|v| !v.is_finite()))
    {
        return Err(Error::NonFiniteGradient {
            block: String::from(name.as_str()),
        });
    }
    let scale = match cfg.clip_norm {
        Some(max) => {
            let sum_sq: f64 = blocks
                .iter()
                .flat_map(|(_, b)| b.iter())
                .map(|v| v.as_f64() * v.as_f64())
                .sum();
            let norm = num_traits::Float::sqrt(sum_sq);
            if norm > max {
                F::from_f64(max / norm)
            } else {
                F::one()
            }
        }
        None => F::one(),
    };
    let scaled: Vec<Vec<F>> = blocks
        .iter()
        .map(|(_, b)| b.iter().map(|&v| v * scale).collect())
        .collect();
    for (k, (_, x)) in params.blocks_mut().into_iter().enumerate() {
        match cfg.method {
            OptimizerMethod::Adadelta => adadelta_block(
                x,
                &scaled[k],
                &mut state.mean_sq_grad[k],
                &mut state.mean_sq_update[k],
                cfg,
            ),
            OptimizerMethod::Sgd => {
                let lr = F::from_f64(cfg.learning_rate);
                for (xi, &gi) in x.iter_mut().zip(&scaled[k]) {
                    *xi = *xi - lr * gi;
                }
            }
        }
    }
    Ok(())
}
