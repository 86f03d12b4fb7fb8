use crate::error::Result;
use crate::nncore::model::{DifferentiableLoss, NetworkLoss};
use crate::nncore::network::{LossKind, NetworkParams};
use crate::nncore::optim::{inner_step, sam_update, OptimizerConfig, OptimizerState, SamScratch};

/// Full-batch training loop state for one network on one dataset.
///
/// One call to [`Trainer::step`] is one epoch: the loss and gradient are
/// evaluated on the whole training set and a single update is applied.
#[derive(Clone, Debug)]
pub struct Trainer<'a> {
    model: NetworkLoss<'a>,
    params: NetworkParams,
    config: OptimizerConfig,
    state: OptimizerState,
    grad: Vec<f64>,
    sam: SamScratch,
    epoch: u64,
    grad_evals: u64,
}

impl<'a> Trainer<'a> {
    pub fn new(
        params: NetworkParams,
        inputs: &'a [f64],
        targets: &'a [f64],
        loss: LossKind,
        config: OptimizerConfig,
    ) -> Result<Self> {
        config.validate()?;
        let model = NetworkLoss::new(params.widths(), inputs, targets, loss, config.weight_decay)?;
        let dim = params.len();
        Ok(Self {
            model,
            params,
            config,
            state: OptimizerState::new(dim),
            grad: vec![0.0; dim],
            sam: SamScratch::default(),
            epoch: 0,
            grad_evals: 0,
        })
    }

    /// Evaluates the training loss at the current parameters, applies one
    /// update and returns the data loss (without weight decay) measured
    /// before the update.
    pub fn step(&mut self) -> Result<f64> {
        Ok(self.step_unless(|_| false)?.0)
    }

    /// Like [`Trainer::step`], but skips the update when `stop` returns true
    /// for the data loss at the current parameters. Returns the loss and
    /// whether the update was skipped.
    pub fn step_unless(&mut self, stop: impl FnOnce(f64) -> bool) -> Result<(f64, bool)> {
        let total = self.model.loss_and_gradient(self.params.as_slice(), &mut self.grad)?;
        let data = self.model.last_value().map_or(total, |v| v.data);
        if stop(data) {
            return Ok((data, true));
        }
        if self.config.kind.is_sam() {
            sam_update(&mut self.model, &mut self.state, self.params.as_mut_slice(), &self.grad, &self.config, &mut self.sam)?;
            self.grad_evals += 2;
        } else {
            inner_step(&mut self.state, self.params.as_mut_slice(), &self.grad, &self.config)?;
            self.grad_evals += 1;
        }
        self.epoch += 1;
        Ok((data, false))
    }

    /// Data loss at the current parameters.
    pub fn current_loss(&mut self) -> Result<f64> {
        self.model.data_loss(self.params.as_slice())
    }

    pub fn params(&self) -> &NetworkParams {
        &self.params
    }

    pub fn into_params(self) -> NetworkParams {
        self.params
    }

    /// Updates applied so far.
    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn gradient_evaluations(&self) -> u64 {
        self.grad_evals
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }
}
