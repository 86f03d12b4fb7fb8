//! SGD with momentum, Adam, and the sharpness-aware (SAM) two-step wrapper.

use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};
use crate::nncore::model::DifferentiableLoss;

/// Gradient norm below which SAM skips the ascent perturbation.
pub const SAM_MIN_GRAD_NORM: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaseOptimizer {
    SgdMomentum,
    Adam,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    SgdMomentum,
    Adam,
    SamWrapped(BaseOptimizer),
}

impl OptimizerKind {
    pub fn base(self) -> BaseOptimizer {
        match self {
            OptimizerKind::SgdMomentum => BaseOptimizer::SgdMomentum,
            OptimizerKind::Adam => BaseOptimizer::Adam,
            OptimizerKind::SamWrapped(inner) => inner,
        }
    }

    pub fn is_sam(self) -> bool {
        matches!(self, OptimizerKind::SamWrapped(_))
    }

    /// Gradient evaluations per update.
    pub fn gradient_evaluations(self) -> u64 {
        if self.is_sam() {
            2
        } else {
            1
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub learning_rate: f64,
    pub momentum: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// SAM neighbourhood radius; only read when `kind` is SAM-wrapped.
    pub rho: f64,
    pub weight_decay: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            kind: OptimizerKind::Adam,
            learning_rate: 1e-3,
            momentum: 0.9,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            rho: 0.05,
            weight_decay: 0.0,
        }
    }
}

impl OptimizerConfig {
    pub fn sgd(learning_rate: f64, momentum: f64) -> Self {
        Self { kind: OptimizerKind::SgdMomentum, learning_rate, momentum, ..Self::default() }
    }

    pub fn adam(learning_rate: f64) -> Self {
        Self { kind: OptimizerKind::Adam, learning_rate, ..Self::default() }
    }

    /// Same hyperparameters with the update wrapped in SAM.
    pub fn with_sam(self, rho: f64) -> Self {
        Self { kind: OptimizerKind::SamWrapped(self.kind.base()), rho, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return contract(format!("learning_rate must be > 0, got {}", self.learning_rate));
        }
        if self.kind.is_sam() && !(self.rho > 0.0 && self.rho.is_finite()) {
            return contract(format!("rho must be > 0 for SAM, got {}", self.rho));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return contract(format!("weight_decay must be >= 0, got {}", self.weight_decay));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return contract(format!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return contract(format!("Adam betas must lie in [0, 1), got ({}, {})", self.beta1, self.beta2));
        }
        if !(self.eps > 0.0) {
            return contract(format!("eps must be > 0, got {}", self.eps));
        }
        Ok(())
    }
}

/// Moment buffers shared by both base optimizers.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    /// Momentum buffer (SGD) or first moment (Adam).
    pub first: Vec<f64>,
    /// Second moment (Adam only).
    pub second: Vec<f64>,
}

impl OptimizerState {
    pub fn new(dim: usize) -> Self {
        Self { step: 0, first: vec![0.0; dim], second: vec![0.0; dim] }
    }

    fn ensure(&mut self, dim: usize) -> Result<()> {
        if self.first.is_empty() && self.second.is_empty() && self.step == 0 {
            *self = Self::new(dim);
        }
        if self.first.len() != dim || self.second.len() != dim {
            return contract(format!("optimizer state has dimension {}, parameters {dim}", self.first.len()));
        }
        Ok(())
    }
}

/// `buf = momentum * buf + g` (`buf = g` on the first step); `theta -= lr * buf`.
pub fn sgd_momentum_step(state: &mut OptimizerState, params: &mut [f64], grad: &[f64], config: &OptimizerConfig) -> Result<()> {
    state.ensure(params.len())?;
    if grad.len() != params.len() {
        return contract("gradient does not match parameters");
    }
    let (lr, mu) = (config.learning_rate, config.momentum);
    let first_step = state.step == 0;
    for ((p, g), b) in params.iter_mut().zip(grad).zip(state.first.iter_mut()) {
        *b = if first_step { *g } else { mu * *b + g };
        *p -= lr * *b;
    }
    state.step += 1;
    Ok(())
}

/// Adam with bias correction.
pub fn adam_step(state: &mut OptimizerState, params: &mut [f64], grad: &[f64], config: &OptimizerConfig) -> Result<()> {
    state.ensure(params.len())?;
    if grad.len() != params.len() {
        return contract("gradient does not match parameters");
    }
    state.step += 1;
    let (b1, b2) = (config.beta1, config.beta2);
    let t = state.step as i32;
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let lr = config.learning_rate;
    for (((p, g), m), v) in params.iter_mut().zip(grad).zip(state.first.iter_mut()).zip(state.second.iter_mut()) {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= lr * m_hat / (v_hat.sqrt() + config.eps);
    }
    Ok(())
}

/// Applies the base optimizer of `config` (SAM wrapping ignored).
pub fn inner_step(state: &mut OptimizerState, params: &mut [f64], grad: &[f64], config: &OptimizerConfig) -> Result<()> {
    match config.kind.base() {
        BaseOptimizer::SgdMomentum => sgd_momentum_step(state, params, grad, config),
        BaseOptimizer::Adam => adam_step(state, params, grad, config),
    }
}

/// Scratch buffers for [`sam_step`].
#[derive(Clone, Debug, Default)]
pub struct SamScratch {
    grad: Vec<f64>,
    perturbed: Vec<f64>,
    perturbed_grad: Vec<f64>,
}

/// Outcome of one SAM update.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SamOutcome {
    /// Loss at the unperturbed parameters.
    pub loss: f64,
    /// Whether the ascent step was skipped for a vanishing gradient.
    pub skipped_perturbation: bool,
}

/// One sharpness-aware update: `eps = rho * g / |g|` with `g` the gradient at
/// `params`, then the inner optimizer steps from `params` using the gradient
/// at `params + eps`.
pub fn sam_step<M: DifferentiableLoss + ?Sized>(
    model: &mut M,
    state: &mut OptimizerState,
    params: &mut [f64],
    config: &OptimizerConfig,
    scratch: &mut SamScratch,
) -> Result<SamOutcome> {
    let dim = params.len();
    let mut grad = std::mem::take(&mut scratch.grad);
    grad.resize(dim, 0.0);
    let loss = model.loss_and_gradient(params, &mut grad);
    let out = loss.and_then(|loss| {
        let skipped = sam_update(model, state, params, &grad, config, scratch)?;
        Ok(SamOutcome { loss, skipped_perturbation: skipped })
    });
    scratch.grad = grad;
    out
}

/// Second half of [`sam_step`] for a caller that already holds the gradient
/// `grad` at `params`. Returns whether the perturbation was skipped.
pub fn sam_update<M: DifferentiableLoss + ?Sized>(
    model: &mut M,
    state: &mut OptimizerState,
    params: &mut [f64],
    grad: &[f64],
    config: &OptimizerConfig,
    scratch: &mut SamScratch,
) -> Result<bool> {
    if !(config.rho > 0.0) {
        return contract(format!("rho must be > 0 for SAM, got {}", config.rho));
    }
    let dim = params.len();
    scratch.perturbed.resize(dim, 0.0);
    scratch.perturbed_grad.resize(dim, 0.0);
    let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
    let skipped = norm < SAM_MIN_GRAD_NORM;
    if skipped {
        scratch.perturbed.copy_from_slice(params);
    } else {
        let scale = config.rho / norm;
        for ((q, p), g) in scratch.perturbed.iter_mut().zip(params.iter()).zip(grad) {
            *q = p + scale * g;
        }
    }
    model.loss_and_gradient(&scratch.perturbed, &mut scratch.perturbed_grad)?;
    inner_step(state, params, &scratch.perturbed_grad, config)?;
    Ok(skipped)
}
