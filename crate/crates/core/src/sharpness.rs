//! Sharpness metrics: average-case SAM sharpness, the Fisher-Rao norm, and
//! relative flatness.

use log::debug;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::RegressionDataset;
use crate::error::{contract, Result};
use crate::nncore::checkpoint;
use crate::nncore::model::{DifferentiableLoss, NetworkLoss};
use crate::nncore::network::{Evaluator, LossKind, NetworkParams};
use crate::rng::{self, Purpose};

/// Perturbation radius used when measuring SAM sharpness.
pub const DEFAULT_RHO: f64 = 0.005;
/// Number of random perturbations averaged by SAM sharpness.
pub const DEFAULT_PERTURBATIONS: usize = 100;

/// Direction `k` of the SAM-sharpness estimator: a standard normal vector
/// scaled to length `rho`, drawn from its own stream so that the estimate
/// does not depend on evaluation order.
pub fn sphere_perturbation(dim: usize, rho: f64, seed: u64, k: u32) -> Vec<f64> {
    let mut rng = rng::stream(seed, Purpose::SharpnessPerturbation, k);
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            return v.into_iter().map(|x| rho * x / norm).collect();
        }
    }
}

/// `S = (1/K) sum_k |L(theta + d_k) - L(theta)| / rho` for explicit
/// perturbations `d_k`.
pub fn sam_sharpness_with<M, I>(model: &mut M, theta: &[f64], rho: f64, perturbations: I) -> Result<f64>
where
    M: DifferentiableLoss + ?Sized,
    I: IntoIterator<Item = Vec<f64>>,
{
    if !(rho > 0.0) {
        return contract(format!("rho must be > 0, got {rho}"));
    }
    let base = model.loss(theta)?;
    let mut shifted = vec![0.0; theta.len()];
    let mut sum = 0.0;
    let mut count = 0usize;
    for d in perturbations {
        if d.len() != theta.len() {
            return contract("perturbation does not match parameter dimension");
        }
        for ((s, t), e) in shifted.iter_mut().zip(theta).zip(&d) {
            *s = t + e;
        }
        sum += ((model.loss(&shifted)? - base) / rho).abs();
        count += 1;
    }
    if count == 0 {
        return contract("at least one perturbation is required");
    }
    Ok(sum / count as f64)
}

/// Average-case SAM sharpness over `k` perturbations drawn uniformly from the
/// sphere of radius `rho` around `theta`.
pub fn sam_sharpness<M: DifferentiableLoss + ?Sized>(
    model: &mut M,
    theta: &[f64],
    rho: f64,
    k: usize,
    seed: u64,
) -> Result<f64> {
    if k == 0 {
        return contract("K must be at least 1");
    }
    let dim = theta.len();
    sam_sharpness_with(model, theta, rho, (0..k as u32).map(|i| sphere_perturbation(dim, rho, seed, i)))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FisherRao {
    /// `(L + 1) * sqrt(max(m, 0))`.
    pub value: f64,
    /// `m = (1/N) sum_i <d l_i / d theta, theta>`.
    pub mean_inner_product: f64,
    /// Set when `m < 0` and the value was clamped to 0.
    pub clamped: bool,
}

/// Fisher-Rao norm `sqrt((L+1)^2 * (1/N) sum_i <grad l_i, theta>)`.
///
/// The per-example inner products are averaged through the gradient of the
/// mean loss, which is the same quantity by linearity. `model` must not
/// include a regularization term.
pub fn fisher_rao_norm<M: DifferentiableLoss + ?Sized>(model: &mut M, theta: &[f64], layers: usize) -> Result<FisherRao> {
    let mut grad = vec![0.0; theta.len()];
    model.loss_and_gradient(theta, &mut grad)?;
    let m: f64 = grad.iter().zip(theta).map(|(g, t)| g * t).sum();
    let clamped = m < 0.0;
    if clamped {
        debug!("Fisher-Rao inner product is negative ({m:e}); clamping to 0");
    }
    Ok(FisherRao { value: (layers as f64 + 1.0) * m.max(0.0).sqrt(), mean_inner_product: m, clamped })
}

/// Curvature of the empirical loss with respect to the final-layer weights,
/// with the features of the last hidden layer held fixed.
///
/// The Hessian entry for weights `(s, j)` and `(s', j')` is
/// `(1/N) sum_i D_i[s, s'] * phi_ij * phi_ij'`, where `D_i` is the Hessian of
/// example `i`'s loss with respect to the network outputs.
#[derive(Clone, Debug)]
pub struct FinalLayerCurvature {
    features: Vec<f64>,
    feature_width: usize,
    outputs: usize,
    batch: usize,
    /// Per-example output Hessians (`batch x outputs x outputs`); a single
    /// shared block for MSE.
    output_hessians: Vec<f64>,
    shared: bool,
}

impl FinalLayerCurvature {
    pub fn new(params: &NetworkParams, inputs: &[f64], targets: &[f64], loss: LossKind) -> Result<Self> {
        let widths = params.widths();
        let batch = inputs.len() / widths[0];
        if batch == 0 {
            return contract("curvature over an empty dataset");
        }
        let mut ev = Evaluator::new(widths, batch)?;
        // Validates targets as a side effect.
        ev.data_loss(params.as_slice(), inputs, targets, loss)?;
        let outputs = *widths.last().unwrap();
        let feature_width = widths[widths.len() - 2];
        let features = ev.penultimate(inputs).to_vec();
        let (output_hessians, shared) = match loss {
            LossKind::Mse => {
                let mut d = vec![0.0; outputs * outputs];
                for s in 0..outputs {
                    d[s * outputs + s] = 2.0 / outputs as f64;
                }
                (d, true)
            }
            LossKind::CrossEntropy => {
                let logits = ev.forward(params.as_slice(), inputs)?;
                let mut d = vec![0.0; batch * outputs * outputs];
                for (i, row) in logits.chunks_exact(outputs).enumerate() {
                    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let z: f64 = row.iter().map(|v| (v - max).exp()).sum();
                    let p: Vec<f64> = row.iter().map(|v| (v - max).exp() / z).collect();
                    let block = &mut d[i * outputs * outputs..(i + 1) * outputs * outputs];
                    for s in 0..outputs {
                        for t in 0..outputs {
                            block[s * outputs + t] = if s == t { p[s] } else { 0.0 } - p[s] * p[t];
                        }
                    }
                }
                (d, false)
            }
        };
        Ok(Self { features, feature_width, outputs, batch, output_hessians, shared })
    }

    /// Number of final-layer weights.
    pub fn dim(&self) -> usize {
        self.outputs * self.feature_width
    }

    /// Exact Hessian-vector product for a direction `v` over the final-layer
    /// weights (row-major `outputs x feature_width`).
    pub fn hvp(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.dim() {
            return contract("direction does not match final-layer weight count");
        }
        let (o, h) = (self.outputs, self.feature_width);
        let mut out = vec![0.0; o * h];
        let mut vphi = vec![0.0; o];
        let mut dv = vec![0.0; o];
        for i in 0..self.batch {
            let phi = &self.features[i * h..(i + 1) * h];
            for (s, acc) in vphi.iter_mut().enumerate() {
                *acc = v[s * h..(s + 1) * h].iter().zip(phi).map(|(a, b)| a * b).sum();
            }
            let d = if self.shared {
                &self.output_hessians[..]
            } else {
                &self.output_hessians[i * o * o..(i + 1) * o * o]
            };
            for (s, acc) in dv.iter_mut().enumerate() {
                *acc = (0..o).map(|t| d[s * o + t] * vphi[t]).sum();
            }
            for s in 0..o {
                if dv[s] != 0.0 {
                    for (r, p) in out[s * h..(s + 1) * h].iter_mut().zip(phi) {
                        *r += dv[s] * p;
                    }
                }
            }
        }
        let scale = 1.0 / self.batch as f64;
        out.iter_mut().for_each(|x| *x *= scale);
        Ok(out)
    }

    /// `Tr(H_{s,s'})` for every pair of output rows, built from Hessian-vector
    /// products against coordinate directions. Row-major `outputs x outputs`.
    pub fn block_traces(&self) -> Result<Vec<f64>> {
        let (o, h) = (self.outputs, self.feature_width);
        let mut traces = vec![0.0; o * o];
        let mut e = vec![0.0; o * h];
        for sp in 0..o {
            for j in 0..h {
                e[sp * h + j] = 1.0;
                let col = self.hvp(&e)?;
                e[sp * h + j] = 0.0;
                for s in 0..o {
                    traces[s * o + sp] += col[s * h + j];
                }
            }
        }
        Ok(traces)
    }
}

/// Relative flatness `sum_{s,s'} <w_s, w_s'> * Tr(H_{s,s'})` of the final
/// affine layer, where `w_s` are the rows of its weight matrix.
pub fn relative_flatness(params: &NetworkParams, inputs: &[f64], targets: &[f64], loss: LossKind) -> Result<f64> {
    let curvature = FinalLayerCurvature::new(params, inputs, targets, loss)?;
    let traces = curvature.block_traces()?;
    let last = params.layer(params.layer_count() - 1);
    let (o, h) = (last.outputs, last.inputs);
    let row = |s: usize| &last.weights[s * h..(s + 1) * h];
    let mut kappa = 0.0;
    for s in 0..o {
        for sp in 0..o {
            let inner: f64 = row(s).iter().zip(row(sp)).map(|(a, b)| a * b).sum();
            kappa += inner * traces[s * o + sp];
        }
    }
    Ok(kappa)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SharpnessConfig {
    pub rho: f64,
    #[serde(rename = "K")]
    pub perturbations: usize,
    /// Layer count for the Fisher-Rao norm; defaults to the number of
    /// affine layers.
    #[serde(rename = "L")]
    pub layers: Option<usize>,
}

impl Default for SharpnessConfig {
    fn default() -> Self {
        Self { rho: DEFAULT_RHO, perturbations: DEFAULT_PERTURBATIONS, layers: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SharpnessReport {
    pub sam_sharpness: f64,
    pub fisher_rao_norm: f64,
    pub fr_clamped: bool,
    /// Names the loss the Fisher-Rao expression was evaluated with,
    /// e.g. `fr_norm(mse)`.
    pub fr_label: String,
    pub fr_mean_inner_product: f64,
    pub relative_flatness: f64,
    pub rho: f64,
    #[serde(rename = "K")]
    pub perturbations: usize,
    #[serde(rename = "L")]
    pub layers: usize,
    pub seed: u64,
    pub loss_kind: LossKind,
    pub checkpoint_hash: String,
    pub dataset_id: String,
}

/// All three metrics for `params` on a regression dataset.
pub fn measure(
    params: &NetworkParams,
    dataset: &RegressionDataset,
    loss: LossKind,
    config: &SharpnessConfig,
    seed: u64,
) -> Result<SharpnessReport> {
    measure_raw(params, dataset.flat_inputs(), &dataset.targets, loss, config, seed, dataset.id())
}

/// Like [`measure`] for arbitrary flattened inputs and targets.
pub fn measure_raw(
    params: &NetworkParams,
    inputs: &[f64],
    targets: &[f64],
    loss: LossKind,
    config: &SharpnessConfig,
    seed: u64,
    dataset_id: String,
) -> Result<SharpnessReport> {
    let layers = config.layers.unwrap_or(params.layer_count());
    let mut model = NetworkLoss::for_params(params, inputs, targets, loss)?;
    let theta = params.as_slice();
    let sam = sam_sharpness(&mut model, theta, config.rho, config.perturbations, seed)?;
    let fr = fisher_rao_norm(&mut model, theta, layers)?;
    let rf = relative_flatness(params, inputs, targets, loss)?;
    Ok(SharpnessReport {
        sam_sharpness: sam,
        fisher_rao_norm: fr.value,
        fr_clamped: fr.clamped,
        fr_label: format!("fr_norm({})", loss.name()),
        fr_mean_inner_product: fr.mean_inner_product,
        relative_flatness: rf,
        rho: config.rho,
        perturbations: config.perturbations,
        layers,
        seed,
        loss_kind: loss,
        checkpoint_hash: checkpoint::content_hash(params),
        dataset_id,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_dataset, Split};
    use crate::nncore::network::loss_and_gradient;
    use crate::objectives::Objective;

    /// mean_i (theta - c_i)^2 over scalar centres.
    struct Scalar {
        centres: Vec<f64>,
    }

    impl DifferentiableLoss for Scalar {
        fn dim(&self) -> usize {
            1
        }
        fn loss(&mut self, t: &[f64]) -> Result<f64> {
            Ok(self.centres.iter().map(|c| (t[0] - c).powi(2)).sum::<f64>() / self.centres.len() as f64)
        }
        fn loss_and_gradient(&mut self, t: &[f64], g: &mut [f64]) -> Result<f64> {
            g[0] = self.centres.iter().map(|c| 2.0 * (t[0] - c)).sum::<f64>() / self.centres.len() as f64;
            self.loss(t)
        }
    }

    #[test]
    fn sam_sharpness_of_parabola_is_rho() {
        let mut m = Scalar { centres: vec![0.0] };
        let rho = 0.005;
        let s = sam_sharpness_with(&mut m, &[0.0], rho, [vec![rho], vec![-rho]]).unwrap();
        assert_eq!(s, rho);
        // Random unit directions in one dimension are +-1 up to rounding.
        let s = sam_sharpness(&mut m, &[0.0], rho, 100, 7).unwrap();
        assert!((s - rho).abs() < 1e-17, "{s}");
    }

    #[test]
    fn flat_surface_has_zero_sharpness() {
        let p = NetworkParams::zeros(&[2, 4, 1]).unwrap();
        let inputs = [1.0, 2.0, -1.0, 0.5];
        let targets = [0.0, 0.0];
        let mut m = NetworkLoss::for_params(&p, &inputs, &targets, LossKind::Mse).unwrap();
        // Perturbations of size rho around zero weights change the loss only
        // at second order in the product of two layers' weights.
        let s = sam_sharpness(&mut m, p.as_slice(), 0.005, 20, 1).unwrap();
        assert!(s < 1e-3, "{s}");
    }

    #[test]
    fn perturbations_have_radius_rho() {
        for k in 0..5 {
            let d = sphere_perturbation(4417, 0.005, 3, k);
            let n = d.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((n - 0.005).abs() < 1e-15);
        }
        assert_eq!(sphere_perturbation(10, 1.0, 3, 2), sphere_perturbation(10, 1.0, 3, 2));
        assert_ne!(sphere_perturbation(10, 1.0, 3, 2), sphere_perturbation(10, 1.0, 3, 3));
    }

    #[test]
    fn fisher_rao_examples() {
        let mut m = Scalar { centres: vec![0.0] };
        let fr = fisher_rao_norm(&mut m, &[2.0], 1).unwrap();
        assert_eq!(fr.value, 32f64.sqrt());
        assert!(!fr.clamped);
        let fr = fisher_rao_norm(&mut m, &[0.0], 1).unwrap();
        assert_eq!(fr.value, 0.0);
        // Stationary for every example: all centres equal theta.
        let mut m = Scalar { centres: vec![1.5, 1.5, 1.5] };
        assert_eq!(fisher_rao_norm(&mut m, &[1.5], 3).unwrap().value, 0.0);
        // Negative inner product: theta on the far side of the centre from 0.
        let mut m = Scalar { centres: vec![2.0] };
        let fr = fisher_rao_norm(&mut m, &[1.0], 1).unwrap();
        assert!(fr.clamped && fr.value == 0.0 && fr.mean_inner_product < 0.0);
    }

    #[test]
    fn relative_flatness_of_fixed_feature_linear_model() {
        // Single affine layer: features are the raw inputs.
        let inputs = [0.5, -1.0, 2.0, 0.25, -1.5, 3.0, 0.0, 1.0];
        let targets = [1.0, -1.0, 0.5, 2.0];
        let w = [0.7, -0.4];
        let p = NetworkParams::from_flat(&[2, 1], vec![w[0], w[1], 0.1]).unwrap();
        let n = 4.0;
        let trace = 2.0 / n * inputs.chunks(2).map(|r| r[0] * r[0] + r[1] * r[1]).sum::<f64>();
        let expected = (w[0] * w[0] + w[1] * w[1]) * trace;
        let got = relative_flatness(&p, &inputs, &targets, LossKind::Mse).unwrap();
        assert!(((got - expected) / expected).abs() < 1e-12);

        let zero = NetworkParams::from_flat(&[2, 1], vec![0.0, 0.0, 0.3]).unwrap();
        assert_eq!(relative_flatness(&zero, &inputs, &targets, LossKind::Mse).unwrap(), 0.0);
    }

    /// Finite differences of the backprop gradient w.r.t. final-layer weights.
    fn fd_final_layer_hessian(p: &NetworkParams, inputs: &[f64], targets: &[f64], loss: LossKind) -> Vec<Vec<f64>> {
        let (wr, _) = p.layer_range(p.layer_count() - 1);
        let h = 1e-5;
        wr.clone()
            .map(|j| {
                let mut plus = p.clone();
                plus.as_mut_slice()[j] += h;
                let mut minus = p.clone();
                minus.as_mut_slice()[j] -= h;
                let gp = loss_and_gradient(&plus, inputs, targets, loss, 0.0).unwrap().1;
                let gm = loss_and_gradient(&minus, inputs, targets, loss, 0.0).unwrap().1;
                wr.clone().map(|i| (gp.as_slice()[i] - gm.as_slice()[i]) / (2.0 * h)).collect()
            })
            .collect()
    }

    #[test]
    fn hvp_matches_gradient_differences() {
        for (widths, loss, targets) in [
            (vec![2, 5, 1], LossKind::Mse, vec![0.3, -1.0, 2.0, 0.7, 1.1, -0.2]),
            (vec![2, 4, 3], LossKind::CrossEntropy, vec![0.0, 2.0, 1.0, 1.0, 0.0, 2.0]),
        ] {
            let p = NetworkParams::kaiming_uniform(&widths, 21).unwrap();
            let inputs = [0.4, -1.2, 1.0, 0.9, -0.7, 0.3, 2.0, 1.5, -1.1, -0.8, 0.2, 0.6];
            let curv = FinalLayerCurvature::new(&p, &inputs, &targets, loss).unwrap();
            let fd = fd_final_layer_hessian(&p, &inputs, &targets, loss);
            let dim = curv.dim();
            let scale = fd.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
            for j in 0..dim {
                let mut e = vec![0.0; dim];
                e[j] = 1.0;
                let col = curv.hvp(&e).unwrap();
                for i in 0..dim {
                    assert!((col[i] - fd[j][i]).abs() <= 1e-4 * scale, "{loss:?} ({i},{j}): {} vs {}", col[i], fd[j][i]);
                }
            }
        }
    }

    #[test]
    fn relative_flatness_is_invariant_to_layer_rescaling() {
        let widths = [2, 6, 1];
        let p = NetworkParams::kaiming_uniform(&widths, 4).unwrap();
        let d = generate_dataset(Objective::Booth, 64, 2, Split::Train).unwrap();
        let base = relative_flatness(&p, d.flat_inputs(), &d.targets, LossKind::Mse).unwrap();
        for alpha in [0.5, 2.0] {
            let mut q = p.clone();
            let (w0, b0) = q.layer_range(0);
            let (w1, _) = q.layer_range(1);
            let v = q.as_mut_slice();
            v[w0].iter_mut().for_each(|x| *x /= alpha);
            v[b0].iter_mut().for_each(|x| *x /= alpha);
            v[w1].iter_mut().for_each(|x| *x *= alpha);
            let scaled = relative_flatness(&q, d.flat_inputs(), &d.targets, LossKind::Mse).unwrap();
            assert!(((scaled - base) / base).abs() < 1e-12, "alpha={alpha}: {scaled} vs {base}");
        }
    }

    #[test]
    fn sam_sharpness_ignores_dataset_order() {
        let p = NetworkParams::kaiming_uniform(&[2, 8, 1], 5).unwrap();
        let d = generate_dataset(Objective::Himmelblau, 64, 1, Split::Train).unwrap();
        let order: Vec<usize> = (0..64).map(|i| (i * 37 + 5) % 64).collect();
        let shuffled = d.permuted(&order);
        let cfg = SharpnessConfig { perturbations: 10, ..SharpnessConfig::default() };
        let a = measure(&p, &d, LossKind::Mse, &cfg, 3).unwrap();
        let b = measure(&p, &shuffled, LossKind::Mse, &cfg, 3).unwrap();
        assert_eq!(a.sam_sharpness, b.sam_sharpness);
        assert_eq!(a.checkpoint_hash, b.checkpoint_hash);
    }

    #[test]
    fn report_serializes_expected_keys() {
        let p = NetworkParams::kaiming_uniform(&[2, 3, 1], 5).unwrap();
        let d = generate_dataset(Objective::Sphere, 16, 1, Split::Train).unwrap();
        let r = measure(&p, &d, LossKind::Mse, &SharpnessConfig { perturbations: 3, ..Default::default() }, 1).unwrap();
        let v = serde_json::to_value(&r).unwrap();
        for key in [
            "sam_sharpness",
            "fisher_rao_norm",
            "fr_clamped",
            "relative_flatness",
            "rho",
            "K",
            "L",
            "seed",
            "checkpoint_hash",
            "dataset_id",
        ] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
        assert_eq!(r.layers, 2);
        assert_eq!(r.fr_label, "fr_norm(mse)");
    }
}
