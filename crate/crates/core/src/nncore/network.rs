//! Fully connected ReLU network with reverse-mode gradients.
//!
//! Parameters live in one flat buffer. Layer `k` occupies a row-major
//! `out_k x in_k` weight block followed by its `out_k` biases. Hidden layers
//! use ReLU with subgradient 0 at 0; the output layer is affine.

use rand::distributions::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};
use crate::rng::{self, Purpose};

/// 2 -> 64 -> 64 -> 1.
pub const TOY_WIDTHS: [usize; 4] = [2, 64, 64, 1];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Mean over the batch of the per-example mean squared output error.
    Mse,
    /// Softmax cross-entropy; targets hold class indices.
    CrossEntropy,
}

impl LossKind {
    pub fn name(self) -> &'static str {
        match self {
            LossKind::Mse => "mse",
            LossKind::CrossEntropy => "cross_entropy",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkParams {
    widths: Vec<usize>,
    values: Vec<f64>,
}

/// Borrowed view of one affine layer.
#[derive(Clone, Copy, Debug)]
pub struct LayerView<'a> {
    pub inputs: usize,
    pub outputs: usize,
    /// Row-major `outputs x inputs`.
    pub weights: &'a [f64],
    pub bias: &'a [f64],
}

impl NetworkParams {
    pub fn parameter_count(widths: &[usize]) -> usize {
        widths.windows(2).map(|w| w[1] * w[0] + w[1]).sum()
    }

    pub fn zeros(widths: &[usize]) -> Result<Self> {
        validate_widths(widths)?;
        Ok(Self { widths: widths.to_vec(), values: vec![0.0; Self::parameter_count(widths)] })
    }

    pub fn from_flat(widths: &[usize], values: Vec<f64>) -> Result<Self> {
        validate_widths(widths)?;
        let expected = Self::parameter_count(widths);
        if values.len() != expected {
            return contract(format!("expected {expected} parameters, got {}", values.len()));
        }
        Ok(Self { widths: widths.to_vec(), values })
    }

    /// Kaiming-uniform fan-in weights (`U(-sqrt(6/fan_in), sqrt(6/fan_in))`)
    /// and zero biases.
    pub fn kaiming_uniform(widths: &[usize], seed: u64) -> Result<Self> {
        let mut params = Self::zeros(widths)?;
        let mut rng = rng::stream(seed, Purpose::Init, 0);
        for (k, &fan_in) in widths[..widths.len() - 1].iter().enumerate() {
            let bound = (6.0 / fan_in as f64).sqrt();
            let dist = Uniform::new_inclusive(-bound, bound);
            let (w, _) = params.layer_range(k);
            for v in &mut params.values[w] {
                *v = dist.sample(&mut rng);
            }
        }
        Ok(params)
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn layer_count(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Ranges of layer `k`'s weights and biases within the flat buffer.
    pub fn layer_range(&self, k: usize) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        layer_ranges(&self.widths, k)
    }

    pub fn layer(&self, k: usize) -> LayerView<'_> {
        let (w, b) = self.layer_range(k);
        LayerView {
            inputs: self.widths[k],
            outputs: self.widths[k + 1],
            weights: &self.values[w],
            bias: &self.values[b],
        }
    }

    /// A zero-filled buffer with the same shape.
    pub fn zeros_like(&self) -> Self {
        Self { widths: self.widths.clone(), values: vec![0.0; self.values.len()] }
    }
}

pub(crate) fn layer_ranges(widths: &[usize], k: usize) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
    let start: usize = widths[..k + 1].windows(2).map(|w| w[1] * w[0] + w[1]).sum();
    let (i, o) = (widths[k], widths[k + 1]);
    (start..start + o * i, start + o * i..start + o * i + o)
}

fn validate_widths(widths: &[usize]) -> Result<()> {
    if widths.len() < 2 {
        return contract("a network needs at least an input and an output width");
    }
    if widths.contains(&0) {
        return contract(format!("layer widths must be positive: {widths:?}"));
    }
    Ok(())
}

/// `c = a * b` (`beta = 0`) or `c += a * b` (`beta = 1`) for strided
/// row/column layouts.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
    (rsc, csc): (usize, usize),
) {
    if m == 0 || n == 0 {
        return;
    }
    debug_assert!(m == 0 || k == 0 || a.len() > (m - 1) * rsa + (k - 1) * csa);
    debug_assert!(k == 0 || b.len() > (k - 1) * rsb + (n - 1) * csb);
    debug_assert!(c.len() > (m - 1) * rsc + (n - 1) * csc);
    // SAFETY: the debug assertions above spell out the bounds every caller
    // satisfies; all strides index within the provided slices.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

/// Loss value split into its data and regularization parts.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossValue {
    /// `data + weight_decay * 0.5 * |theta|^2`.
    pub total: f64,
    pub data: f64,
}

/// Reusable buffers for forward and backward passes over a fixed batch size.
#[derive(Clone, Debug)]
pub struct Evaluator {
    widths: Vec<usize>,
    batch: usize,
    /// Layer outputs; `acts[k]` is the output of layer `k`
    /// (post-ReLU for hidden layers, logits for the last).
    acts: Vec<Vec<f64>>,
    delta: Vec<f64>,
    delta_prev: Vec<f64>,
}

impl Evaluator {
    pub fn new(widths: &[usize], batch: usize) -> Result<Self> {
        validate_widths(widths)?;
        let max_width = widths.iter().copied().max().unwrap_or(0);
        Ok(Self {
            widths: widths.to_vec(),
            batch,
            acts: widths[1..].iter().map(|&w| vec![0.0; w * batch]).collect(),
            delta: vec![0.0; max_width * batch],
            delta_prev: vec![0.0; max_width * batch],
        })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    fn check_shapes(&self, theta: &[f64], inputs: &[f64]) -> Result<()> {
        let expected = NetworkParams::parameter_count(&self.widths);
        if theta.len() != expected {
            return contract(format!("parameter vector has {} entries, expected {expected}", theta.len()));
        }
        if inputs.len() != self.batch * self.widths[0] {
            return contract(format!(
                "batch has {} values, expected {} x {}",
                inputs.len(),
                self.batch,
                self.widths[0]
            ));
        }
        if !inputs.iter().all(|v| v.is_finite()) {
            return Err(Error::Domain("batch contains non-finite inputs".into()));
        }
        Ok(())
    }

    /// Runs the network and returns the `batch x out` outputs.
    pub fn forward(&mut self, theta: &[f64], inputs: &[f64]) -> Result<&[f64]> {
        self.check_shapes(theta, inputs)?;
        let n = self.batch;
        let layers = self.widths.len() - 1;
        for k in 0..layers {
            let (i, o) = (self.widths[k], self.widths[k + 1]);
            let (wr, br) = layer_ranges(&self.widths, k);
            let (w, b) = (&theta[wr], &theta[br]);
            let (prev, rest) = self.acts.split_at_mut(k);
            let x: &[f64] = if k == 0 { inputs } else { &prev[k - 1] };
            let z = &mut rest[0];
            for row in z.chunks_exact_mut(o) {
                row.copy_from_slice(b);
            }
            // z (n x o) += x (n x i) * w^T (i x o)
            gemm(n, i, o, x, (i, 1), w, (1, i), 1.0, z, (o, 1));
            if !z.iter().all(|v| v.is_finite()) {
                return Err(Error::Numeric { layer: k, detail: "non-finite pre-activation".into() });
            }
            if k + 1 < layers {
                for v in z.iter_mut() {
                    if *v <= 0.0 {
                        *v = 0.0;
                    }
                }
            }
        }
        Ok(&self.acts[layers - 1])
    }

    /// Output of the last hidden layer from the most recent forward pass
    /// (`batch x widths[L-1]`), or the inputs when there is no hidden layer.
    pub(crate) fn penultimate<'a>(&'a self, inputs: &'a [f64]) -> &'a [f64] {
        let layers = self.widths.len() - 1;
        if layers >= 2 {
            &self.acts[layers - 2]
        } else {
            inputs
        }
    }

    /// Mean data loss, no regularization.
    pub fn data_loss(&mut self, theta: &[f64], inputs: &[f64], targets: &[f64], loss: LossKind) -> Result<f64> {
        self.check_targets(targets, loss)?;
        self.forward(theta, inputs)?;
        let out = self.acts.last().expect("at least one layer");
        let value = batch_loss(out, targets, *self.widths.last().unwrap(), loss, None);
        finite_loss(value, self.widths.len() - 2)
    }

    fn check_targets(&self, targets: &[f64], loss: LossKind) -> Result<()> {
        if self.batch == 0 {
            return contract("loss over an empty batch");
        }
        let out = *self.widths.last().unwrap();
        let expected = match loss {
            LossKind::Mse => self.batch * out,
            LossKind::CrossEntropy => self.batch,
        };
        if targets.len() != expected {
            return contract(format!("expected {expected} targets, got {}", targets.len()));
        }
        if loss == LossKind::CrossEntropy {
            for &t in targets {
                if t.fract() != 0.0 || t < 0.0 || t >= out as f64 {
                    return contract(format!("class target {t} outside 0..{out}"));
                }
            }
        }
        Ok(())
    }

    /// Loss and its gradient with respect to every parameter, written into
    /// `grad`. The loss is the mean per-example loss plus
    /// `weight_decay * 0.5 * |theta|^2`.
    pub fn loss_and_gradient(
        &mut self,
        theta: &[f64],
        inputs: &[f64],
        targets: &[f64],
        loss: LossKind,
        weight_decay: f64,
        grad: &mut [f64],
    ) -> Result<LossValue> {
        self.check_targets(targets, loss)?;
        if grad.len() != theta.len() {
            return contract("gradient buffer does not match parameter count");
        }
        self.forward(theta, inputs)?;
        let n = self.batch;
        let layers = self.widths.len() - 1;
        let out_w = self.widths[layers];

        let data = {
            let out = &self.acts[layers - 1];
            let delta = &mut self.delta[..n * out_w];
            finite_loss(batch_loss(out, targets, out_w, loss, Some(delta)), layers - 1)?
        };

        for k in (0..layers).rev() {
            let (i, o) = (self.widths[k], self.widths[k + 1]);
            let (wr, br) = layer_ranges(&self.widths, k);
            let x: &[f64] = if k == 0 { inputs } else { &self.acts[k - 1] };
            let delta = &self.delta[..n * o];
            // dW (o x i) = delta^T (o x n) * x (n x i)
            gemm(o, n, i, delta, (1, o), x, (i, 1), 0.0, &mut grad[wr.clone()], (i, 1));
            let db = &mut grad[br];
            db.iter_mut().for_each(|v| *v = 0.0);
            for row in delta.chunks_exact(o) {
                for (g, d) in db.iter_mut().zip(row) {
                    *g += d;
                }
            }
            if k > 0 {
                let w = &theta[wr];
                let prev = &mut self.delta_prev[..n * i];
                // d_prev (n x i) = delta (n x o) * w (o x i)
                gemm(n, o, i, delta, (o, 1), w, (i, 1), 0.0, prev, (i, 1));
                for (d, a) in prev.iter_mut().zip(&self.acts[k - 1]) {
                    if *a <= 0.0 {
                        *d = 0.0;
                    }
                }
                if !prev.iter().all(|v| v.is_finite()) {
                    return Err(Error::Numeric { layer: k - 1, detail: "non-finite backpropagated gradient".into() });
                }
                std::mem::swap(&mut self.delta, &mut self.delta_prev);
            }
        }

        let mut total = data;
        if weight_decay != 0.0 {
            let mut sq = 0.0;
            for (g, t) in grad.iter_mut().zip(theta) {
                *g += weight_decay * t;
                sq += t * t;
            }
            total += 0.5 * weight_decay * sq;
        }
        Ok(LossValue { total, data })
    }
}

fn finite_loss(value: f64, layer: usize) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::Numeric { layer, detail: format!("loss evaluated to {value}") })
    }
}

/// Mean loss over the batch; writes `d loss / d logits` into `delta` when given.
pub(crate) fn batch_loss(out: &[f64], targets: &[f64], width: usize, loss: LossKind, delta: Option<&mut [f64]>) -> f64 {
    let n = out.len() / width;
    let mut terms = Vec::with_capacity(out.len());
    match loss {
        LossKind::Mse => {
            let scale = 1.0 / (n * width) as f64;
            match delta {
                Some(d) => {
                    for ((y, t), d) in out.iter().zip(targets).zip(d.iter_mut()) {
                        let r = y - t;
                        terms.push(r * r);
                        *d = 2.0 * r * scale;
                    }
                }
                None => terms.extend(out.iter().zip(targets).map(|(y, t)| (y - t) * (y - t))),
            }
            order_free_sum(&mut terms) * scale
        }
        LossKind::CrossEntropy => {
            let scale = 1.0 / n as f64;
            let mut delta = delta;
            for (idx, (row, t)) in out.chunks_exact(width).zip(targets).enumerate() {
                let class = *t as usize;
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let norm: f64 = row.iter().map(|z| (z - max).exp()).sum();
                let lse = max + norm.ln();
                terms.push(lse - row[class]);
                if let Some(d) = delta.as_deref_mut() {
                    let drow = &mut d[idx * width..(idx + 1) * width];
                    for (j, (dv, z)) in drow.iter_mut().zip(row).enumerate() {
                        let p = (z - lse).exp();
                        *dv = (p - if j == class { 1.0 } else { 0.0 }) * scale;
                    }
                }
            }
            order_free_sum(&mut terms) * scale
        }
    }
}

/// Sums per-example terms in sorted order so the mean loss does not depend on
/// the order of examples in the batch.
fn order_free_sum(terms: &mut [f64]) -> f64 {
    terms.sort_unstable_by(f64::total_cmp);
    terms.iter().sum()
}

/// Convenience wrapper around [`Evaluator::forward`].
pub fn forward(params: &NetworkParams, inputs: &[f64]) -> Result<Vec<f64>> {
    let n = inputs.len() / params.widths()[0];
    let mut ev = Evaluator::new(params.widths(), n)?;
    Ok(ev.forward(params.as_slice(), inputs)?.to_vec())
}

/// Convenience wrapper around [`Evaluator::loss_and_gradient`]; returns the
/// total loss and a parameter-shaped gradient.
pub fn loss_and_gradient(
    params: &NetworkParams,
    inputs: &[f64],
    targets: &[f64],
    loss: LossKind,
    weight_decay: f64,
) -> Result<(f64, NetworkParams)> {
    let n = inputs.len() / params.widths()[0];
    let mut ev = Evaluator::new(params.widths(), n)?;
    let mut grad = params.zeros_like();
    let value = ev.loss_and_gradient(params.as_slice(), inputs, targets, loss, weight_decay, grad.as_mut_slice())?;
    Ok((value.total, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn toy_parameter_count() {
        assert_eq!(NetworkParams::parameter_count(&TOY_WIDTHS), 4417);
        let p = NetworkParams::kaiming_uniform(&TOY_WIDTHS, 0).unwrap();
        assert_eq!(p.len(), 4417);
        assert!(p.layer(2).bias.iter().all(|&b| b == 0.0));
        let bound = (6.0f64 / 64.0).sqrt();
        assert!(p.layer(1).weights.iter().all(|w| w.abs() <= bound));
    }

    #[test]
    fn zero_params_give_zero_outputs() {
        let p = NetworkParams::zeros(&TOY_WIDTHS).unwrap();
        let out = forward(&p, &[0.3, -1.2, 2.0, 3.0]).unwrap();
        assert_eq!(out, vec![0.0, 0.0]);
        assert!(forward(&p, &[]).unwrap().is_empty());
    }

    #[test]
    fn hand_evaluated_micro_net() {
        // 2 -> 2 -> 1: h = relu([[1,0],[1,-1]] x + [0, 0.5]); y = [2, -1] h + 0.25
        let p = NetworkParams::from_flat(&[2, 2, 1], vec![1.0, 0.0, 1.0, -1.0, 0.0, 0.5, 2.0, -1.0, 0.25]).unwrap();
        // x = (1, 3): h = relu(1, -1.5) = (1, 0) -> y = 2.25
        // x = (-2, 1): h = relu(-2, -2.5) = (0, 0) -> y = 0.25
        // x = (2, 0.5): h = (2, 2) -> y = 4 - 2 + 0.25 = 2.25
        let out = forward(&p, &[1.0, 3.0, -2.0, 1.0, 2.0, 0.5]).unwrap();
        assert_eq!(out, vec![2.25, 0.25, 2.25]);
    }

    #[test]
    fn shape_mismatch_is_contract_error() {
        let p = NetworkParams::zeros(&[2, 3, 1]).unwrap();
        let mut ev = Evaluator::new(&[2, 3, 1], 2).unwrap();
        assert!(matches!(ev.forward(p.as_slice(), &[1.0, 2.0, 3.0]), Err(Error::Contract(_))));
        assert!(matches!(ev.forward(&[0.0; 3], &[1.0; 4]), Err(Error::Contract(_))));
        let mut g = vec![0.0; p.len()];
        assert!(matches!(
            ev.loss_and_gradient(p.as_slice(), &[1.0; 4], &[1.0], LossKind::Mse, 0.0, &mut g),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn overflow_reports_layer() {
        let mut p = NetworkParams::zeros(&[2, 2, 1]).unwrap();
        p.as_mut_slice().iter_mut().for_each(|v| *v = 1e200);
        let mut ev = Evaluator::new(&[2, 2, 1], 1).unwrap();
        let err = ev.forward(p.as_slice(), &[1e200, 1e200]).unwrap_err();
        assert!(matches!(err, Error::Numeric { layer: 0, .. }), "{err}");
    }

    #[test]
    fn perfect_predictions_have_zero_loss() {
        let p = NetworkParams::from_flat(&[2, 2, 1], vec![1.0, 0.0, 1.0, -1.0, 0.0, 0.5, 2.0, -1.0, 0.25]).unwrap();
        let inputs = [1.0, 3.0, 2.0, 0.5];
        let targets = forward(&p, &inputs).unwrap();
        let (loss, grad) = loss_and_gradient(&p, &inputs, &targets, LossKind::Mse, 0.0).unwrap();
        assert_eq!(loss, 0.0);
        let (w, b) = p.layer_range(1);
        assert!(grad.as_slice()[w].iter().chain(&grad.as_slice()[b]).all(|&g| g == 0.0));
    }

    #[test]
    fn single_linear_neuron() {
        // y = w x with x = 1, t = 0: loss w^2, dL/dw = 2w (bias held at 0).
        let w = 0.7;
        let p = NetworkParams::from_flat(&[1, 1], vec![w, 0.0]).unwrap();
        let (loss, grad) = loss_and_gradient(&p, &[1.0], &[0.0], LossKind::Mse, 0.0).unwrap();
        assert_eq!(loss, w * w);
        assert_eq!(grad.as_slice()[0], 2.0 * w);
    }

    #[test]
    fn weight_decay_gradient_is_exact() {
        let p = NetworkParams::kaiming_uniform(&[2, 5, 1], 3).unwrap();
        let inputs = [0.5, -1.0, 2.0, 1.5, -0.3, 0.8];
        let targets = [1.0, -2.0, 0.5];
        let (l0, g0) = loss_and_gradient(&p, &inputs, &targets, LossKind::Mse, 0.0).unwrap();
        let wd = 0.01;
        let (l1, g1) = loss_and_gradient(&p, &inputs, &targets, LossKind::Mse, wd).unwrap();
        for ((a, b), t) in g1.as_slice().iter().zip(g0.as_slice()).zip(p.as_slice()) {
            assert_eq!(*a, b + wd * t);
        }
        let sq: f64 = p.as_slice().iter().map(|t| t * t).sum();
        assert!((l1 - l0 - 0.5 * wd * sq).abs() < 1e-15);
    }

    #[test]
    fn cross_entropy_gradient_matches_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let widths = [2, 4, 3];
        let mut p = NetworkParams::kaiming_uniform(&widths, 9).unwrap();
        for v in p.as_mut_slice() {
            *v += rng.gen_range(-0.1..0.1);
        }
        let inputs: Vec<f64> = (0..8).map(|_| rng.gen_range(-2.0..2.0)).collect();
        let targets = [0.0, 2.0, 1.0, 2.0];
        let (_, grad) = loss_and_gradient(&p, &inputs, &targets, LossKind::CrossEntropy, 0.0).unwrap();
        let h = 1e-6;
        for j in 0..p.len() {
            let mut plus = p.clone();
            plus.as_mut_slice()[j] += h;
            let mut minus = p.clone();
            minus.as_mut_slice()[j] -= h;
            let lp = loss_and_gradient(&plus, &inputs, &targets, LossKind::CrossEntropy, 0.0).unwrap().0;
            let lm = loss_and_gradient(&minus, &inputs, &targets, LossKind::CrossEntropy, 0.0).unwrap().0;
            let fd = (lp - lm) / (2.0 * h);
            assert!((fd - grad.as_slice()[j]).abs() < 1e-7, "param {j}: {fd} vs {}", grad.as_slice()[j]);
        }
        assert!(loss_and_gradient(&p, &inputs, &[0.0, 3.0, 1.0, 2.0], LossKind::CrossEntropy, 0.0).is_err());
    }
}
