use crate::error::{contract, Result};
use crate::nncore::network::{Evaluator, LossKind, LossValue, NetworkParams};

/// A scalar loss over a flat parameter vector with a gradient.
///
/// Optimizers and sharpness metrics are written against this trait so they
/// apply equally to the network and to small closed-form models.
pub trait DifferentiableLoss {
    fn dim(&self) -> usize;

    fn loss(&mut self, theta: &[f64]) -> Result<f64>;

    /// Writes the gradient into `grad` and returns the loss.
    fn loss_and_gradient(&mut self, theta: &[f64], grad: &mut [f64]) -> Result<f64>;
}

/// Full-batch empirical loss of a network on a fixed dataset.
#[derive(Clone, Debug)]
pub struct NetworkLoss<'a> {
    evaluator: Evaluator,
    inputs: &'a [f64],
    targets: &'a [f64],
    kind: LossKind,
    weight_decay: f64,
    last: Option<LossValue>,
}

impl<'a> NetworkLoss<'a> {
    /// `inputs` is row-major `N x widths[0]`.
    pub fn new(widths: &[usize], inputs: &'a [f64], targets: &'a [f64], kind: LossKind, weight_decay: f64) -> Result<Self> {
        if weight_decay < 0.0 || !weight_decay.is_finite() {
            return contract(format!("weight decay must be finite and >= 0, got {weight_decay}"));
        }
        let n = inputs.len() / widths.first().copied().unwrap_or(1).max(1);
        Ok(Self { evaluator: Evaluator::new(widths, n)?, inputs, targets, kind, weight_decay, last: None })
    }

    pub fn for_params(params: &NetworkParams, inputs: &'a [f64], targets: &'a [f64], kind: LossKind) -> Result<Self> {
        Self::new(params.widths(), inputs, targets, kind, 0.0)
    }

    pub fn kind(&self) -> LossKind {
        self.kind
    }

    pub fn weight_decay(&self) -> f64 {
        self.weight_decay
    }

    pub fn inputs(&self) -> &'a [f64] {
        self.inputs
    }

    pub fn targets(&self) -> &'a [f64] {
        self.targets
    }

    pub fn evaluator_mut(&mut self) -> &mut Evaluator {
        &mut self.evaluator
    }

    /// Loss split from the most recent gradient evaluation.
    pub fn last_value(&self) -> Option<LossValue> {
        self.last
    }

    /// Data loss without the weight-decay term.
    pub fn data_loss(&mut self, theta: &[f64]) -> Result<f64> {
        self.evaluator.data_loss(theta, self.inputs, self.targets, self.kind)
    }
}

impl DifferentiableLoss for NetworkLoss<'_> {
    fn dim(&self) -> usize {
        NetworkParams::parameter_count(self.evaluator.widths())
    }

    fn loss(&mut self, theta: &[f64]) -> Result<f64> {
        let data = self.data_loss(theta)?;
        if self.weight_decay == 0.0 {
            return Ok(data);
        }
        let sq: f64 = theta.iter().map(|t| t * t).sum();
        Ok(data + 0.5 * self.weight_decay * sq)
    }

    fn loss_and_gradient(&mut self, theta: &[f64], grad: &mut [f64]) -> Result<f64> {
        let v = self
            .evaluator
            .loss_and_gradient(theta, self.inputs, self.targets, self.kind, self.weight_decay, grad)?;
        self.last = Some(v);
        Ok(v.total)
    }
}
