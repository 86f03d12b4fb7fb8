//! Two-dimensional loss surfaces along random directions.

use std::fmt;
use std::fs;
use std::path::Path;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{contract, Error, Result};
use crate::nncore::model::DifferentiableLoss;
use crate::nncore::network::NetworkParams;
use crate::objectives::Objective;
use crate::rng::{self, Purpose};

pub const DEFAULT_RESOLUTION: usize = 51;
pub const DEFAULT_EXTENT: f64 = 1.0;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// Raw standard normal directions.
    None,
    /// Each neuron's slice (its incoming weights and bias) is rescaled to the
    /// norm of the same slice of the parameters.
    #[default]
    PerNeuron,
}

impl Normalization {
    pub fn name(self) -> &'static str {
        match self {
            Normalization::None => "none",
            Normalization::PerNeuron => "per_neuron",
        }
    }
}

impl fmt::Display for Normalization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Normalization {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "none" => Ok(Normalization::None),
            "per_neuron" | "filter" => Ok(Normalization::PerNeuron),
            other => Err(Error::Validation(format!("unknown normalization {other:?}"))),
        }
    }
}

/// Index sets of every neuron slice of a network: weight row `j` of layer
/// `k` together with bias `j`.
fn neuron_slices(params: &NetworkParams) -> Vec<Vec<usize>> {
    let mut slices = Vec::new();
    for k in 0..params.layer_count() {
        let (w, b) = params.layer_range(k);
        let fan_in = params.widths()[k];
        for j in 0..params.widths()[k + 1] {
            let mut idx: Vec<usize> = (w.start + j * fan_in..w.start + (j + 1) * fan_in).collect();
            idx.push(b.start + j);
            slices.push(idx);
        }
    }
    slices
}

fn gaussian(dim: usize, seed: u64, index: u32) -> Vec<f64> {
    let mut rng = rng::stream(seed, Purpose::LandscapeDirection, index);
    (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect()
}

/// Rescales each slice of `direction` to the norm of the same slice of
/// `reference`; slices where `reference` vanishes become zero.
pub fn normalize_slices(direction: &mut [f64], reference: &[f64], slices: &[Vec<usize>]) {
    for slice in slices {
        let target = slice.iter().map(|&i| reference[i] * reference[i]).sum::<f64>().sqrt();
        let norm = slice.iter().map(|&i| direction[i] * direction[i]).sum::<f64>().sqrt();
        let scale = if target == 0.0 || norm == 0.0 { 0.0 } else { target / norm };
        for &i in slice {
            direction[i] *= scale;
        }
    }
}

/// Two independent Gaussian directions shaped like `params`.
pub fn random_directions(
    params: &NetworkParams,
    seed: u64,
    normalization: Normalization,
) -> Result<(NetworkParams, NetworkParams)> {
    let slices = neuron_slices(params);
    let make = |index| {
        let mut d = gaussian(params.len(), seed, index);
        if normalization == Normalization::PerNeuron {
            normalize_slices(&mut d, params.as_slice(), &slices);
        }
        NetworkParams::from_flat(params.widths(), d)
    };
    Ok((make(0)?, make(1)?))
}

/// Directions for a point of a two-input objective. The point is a single
/// slice under per-neuron normalization.
pub fn point_directions(point: [f64; 2], seed: u64, normalization: Normalization) -> ([f64; 2], [f64; 2]) {
    let slices = [vec![0, 1]];
    let make = |index| {
        let mut d = gaussian(2, seed, index);
        if normalization == Normalization::PerNeuron {
            normalize_slices(&mut d, &point, &slices);
        }
        [d[0], d[1]]
    };
    (make(0), make(1))
}

/// An analytic objective viewed as a loss over its two inputs.
#[derive(Clone, Copy, Debug)]
pub struct ObjectiveLoss(pub Objective);

impl DifferentiableLoss for ObjectiveLoss {
    fn dim(&self) -> usize {
        2
    }

    fn loss(&mut self, theta: &[f64]) -> Result<f64> {
        self.0.evaluate([theta[0], theta[1]])
    }

    fn loss_and_gradient(&mut self, theta: &[f64], grad: &mut [f64]) -> Result<f64> {
        let g = self.0.gradient([theta[0], theta[1]])?;
        grad.copy_from_slice(&g);
        self.loss(theta)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridMetadata {
    pub resolution: usize,
    pub extent: f64,
    pub direction_seed: Option<u64>,
    pub normalization: Option<Normalization>,
    pub center_value: f64,
    /// Cells whose loss was not finite; stored as NaN.
    pub flagged_cells: usize,
}

#[derive(Clone, Debug)]
pub struct LandscapeGrid {
    pub alphas: Vec<f64>,
    pub betas: Vec<f64>,
    /// Row-major: `values[i * betas.len() + j]` is the loss at
    /// `(alphas[i], betas[j])`.
    pub values: Vec<f64>,
    pub meta: GridMetadata,
}

impl PartialEq for LandscapeGrid {
    /// NaN cells compare equal to each other.
    fn eq(&self, other: &Self) -> bool {
        let same = |a: &[f64], b: &[f64]| {
            a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x == y || (x.is_nan() && y.is_nan()))
        };
        same(&self.alphas, &other.alphas) && same(&self.betas, &other.betas) && same(&self.values, &other.values)
    }
}

impl LandscapeGrid {
    pub fn resolution(&self) -> usize {
        self.alphas.len()
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.betas.len() + j]
    }

    pub fn center(&self) -> f64 {
        let c = self.resolution() / 2;
        self.at(c, c)
    }

    /// Whether the centre is no larger than its four axis neighbours.
    pub fn center_is_local_min(&self) -> bool {
        let c = self.resolution() / 2;
        let v = self.center();
        [self.at(c - 1, c), self.at(c + 1, c), self.at(c, c - 1), self.at(c, c + 1)]
            .iter()
            .all(|&n| v <= n)
    }
}

/// `extent * (i - c) / c` for `i` in `0..resolution`, `c = resolution / 2`.
pub fn axis(resolution: usize, extent: f64) -> Vec<f64> {
    let c = (resolution / 2) as f64;
    (0..resolution).map(|i| extent * (i as f64 - c) / c).collect()
}

/// Loss at `theta + alpha * d1 + beta * d2` over a square grid. Cells where
/// the loss is not finite are stored as NaN and counted in the metadata.
pub fn loss_grid<M: DifferentiableLoss + ?Sized>(
    model: &mut M,
    theta: &[f64],
    d1: &[f64],
    d2: &[f64],
    resolution: usize,
    extent: f64,
) -> Result<LandscapeGrid> {
    if resolution < 3 || resolution.is_multiple_of(2) {
        return contract(format!("resolution must be odd and at least 3, got {resolution}"));
    }
    if !(extent > 0.0 && extent.is_finite()) {
        return contract(format!("extent must be > 0, got {extent}"));
    }
    if d1.len() != theta.len() || d2.len() != theta.len() {
        return contract("directions do not match the parameter dimension");
    }
    let alphas = axis(resolution, extent);
    let betas = alphas.clone();
    let mut values = Vec::with_capacity(resolution * resolution);
    let mut point = vec![0.0; theta.len()];
    let mut flagged = 0;
    for &a in &alphas {
        for &b in &betas {
            for (((p, t), x), y) in point.iter_mut().zip(theta).zip(d1).zip(d2) {
                *p = t + (a * x + b * y);
            }
            let v = match model.loss(&point) {
                Ok(v) if v.is_finite() => v,
                Ok(_) | Err(Error::Numeric { .. }) | Err(Error::Domain(_)) => {
                    flagged += 1;
                    f64::NAN
                }
                Err(e) => return Err(e),
            };
            values.push(v);
        }
    }
    let c = resolution / 2;
    let center_value = values[c * resolution + c];
    Ok(LandscapeGrid {
        alphas,
        betas,
        values,
        meta: GridMetadata {
            resolution,
            extent,
            direction_seed: None,
            normalization: None,
            center_value,
            flagged_cells: flagged,
        },
    })
}

/// Grid around a point of an analytic objective along seeded directions.
pub fn objective_grid(
    objective: Objective,
    point: [f64; 2],
    seed: u64,
    normalization: Normalization,
    resolution: usize,
    extent: f64,
) -> Result<LandscapeGrid> {
    let (d1, d2) = point_directions(point, seed, normalization);
    let mut grid = loss_grid(&mut ObjectiveLoss(objective), &point, &d1, &d2, resolution, extent)?;
    grid.meta.direction_seed = Some(seed);
    grid.meta.normalization = Some(normalization);
    Ok(grid)
}

/// Grid around trained parameters along seeded directions.
pub fn network_grid<M: DifferentiableLoss + ?Sized>(
    model: &mut M,
    params: &NetworkParams,
    seed: u64,
    normalization: Normalization,
    resolution: usize,
    extent: f64,
) -> Result<LandscapeGrid> {
    let (d1, d2) = random_directions(params, seed, normalization)?;
    let mut grid = loss_grid(model, params.as_slice(), d1.as_slice(), d2.as_slice(), resolution, extent)?;
    grid.meta.direction_seed = Some(seed);
    grid.meta.normalization = Some(normalization);
    Ok(grid)
}

fn cell(v: f64) -> String {
    if v.is_nan() {
        "nan".to_string()
    } else {
        format!("{v}")
    }
}

/// Writes the grid as a `(res + 1) x (res + 1)` CSV matrix: the first row
/// holds the beta axis, the first column the alpha axis.
pub fn export_grid(grid: &LandscapeGrid, path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["alpha\\beta".to_string()];
    header.extend(grid.betas.iter().map(|&b| cell(b)));
    w.write_record(&header)?;
    for (i, &a) in grid.alphas.iter().enumerate() {
        let mut row = vec![cell(a)];
        row.extend((0..grid.betas.len()).map(|j| cell(grid.at(i, j))));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn parse_cell(s: &str, line: u64) -> Result<f64> {
    let s = s.trim();
    if s.eq_ignore_ascii_case("nan") {
        return Ok(f64::NAN);
    }
    s.parse::<f64>().map_err(|e| Error::Parse { line, message: format!("{s:?}: {e}") })
}

/// Reads a grid written by [`export_grid`]. Metadata is recomputed from the
/// values; direction seed and normalization live in the companion JSON.
pub fn import_grid(path: impl AsRef<Path>) -> Result<LandscapeGrid> {
    let mut r = csv::ReaderBuilder::new().has_headers(false).from_path(path)?;
    let mut rows = r.records();
    let header = rows.next().ok_or(Error::Parse { line: 1, message: "empty grid file".into() })??;
    let betas = header.iter().skip(1).map(|s| parse_cell(s, 1)).collect::<Result<Vec<_>>>()?;
    let mut alphas = Vec::new();
    let mut values = Vec::new();
    for (k, row) in rows.enumerate() {
        let line = k as u64 + 2;
        let row = row?;
        if row.len() != betas.len() + 1 {
            return Err(Error::Parse { line, message: format!("expected {} cells, got {}", betas.len() + 1, row.len()) });
        }
        alphas.push(parse_cell(&row[0], line)?);
        for s in row.iter().skip(1) {
            values.push(parse_cell(s, line)?);
        }
    }
    let resolution = alphas.len();
    if resolution == 0 || resolution != betas.len() || resolution.is_multiple_of(2) {
        return Err(Error::Parse { line: 1, message: format!("grid must be square with odd size, got {resolution}x{}", betas.len()) });
    }
    let c = resolution / 2;
    Ok(LandscapeGrid {
        meta: GridMetadata {
            resolution,
            extent: alphas[resolution - 1],
            direction_seed: None,
            normalization: None,
            center_value: values[c * resolution + c],
            flagged_cells: values.iter().filter(|v| v.is_nan()).count(),
        },
        alphas,
        betas,
        values,
    })
}

pub fn write_metadata(grid: &LandscapeGrid, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(&grid.meta)? + "\n")?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    /// |theta|^2.
    struct Norm2;

    impl DifferentiableLoss for Norm2 {
        fn dim(&self) -> usize {
            0
        }
        fn loss(&mut self, t: &[f64]) -> Result<f64> {
            Ok(t.iter().map(|x| x * x).sum())
        }
        fn loss_and_gradient(&mut self, t: &[f64], g: &mut [f64]) -> Result<f64> {
            g.iter_mut().zip(t).for_each(|(g, x)| *g = 2.0 * x);
            self.loss(t)
        }
    }

    #[test]
    fn zero_params_give_zero_normalized_directions() {
        let p = NetworkParams::zeros(&[2, 4, 1]).unwrap();
        let (d1, d2) = random_directions(&p, 1, Normalization::PerNeuron).unwrap();
        assert!(d1.as_slice().iter().chain(d2.as_slice()).all(|&v| v == 0.0));
        let (r1, _) = random_directions(&p, 1, Normalization::None).unwrap();
        assert!(r1.as_slice().iter().any(|&v| v != 0.0));
    }

    #[test]
    fn per_neuron_slices_match_parameter_norms() {
        let p = NetworkParams::kaiming_uniform(&[2, 6, 5, 1], 3).unwrap();
        let (d1, d2) = random_directions(&p, 9, Normalization::PerNeuron).unwrap();
        for slice in neuron_slices(&p) {
            let norm = |v: &[f64]| slice.iter().map(|&i| v[i] * v[i]).sum::<f64>().sqrt();
            let want = norm(p.as_slice());
            for d in [&d1, &d2] {
                assert!((norm(d.as_slice()) - want).abs() <= 1e-14 * want.max(1.0));
            }
        }
        assert_eq!(random_directions(&p, 9, Normalization::PerNeuron).unwrap(), (d1.clone(), d2));
        assert_ne!(random_directions(&p, 10, Normalization::PerNeuron).unwrap().0, d1);
    }

    #[test]
    fn paraboloid_grid_is_closed_form() {
        let theta = [0.5, -1.0, 2.0];
        let d1 = [1.0, 0.0, 0.0];
        let d2 = [0.0, 1.0, 0.0];
        let g = loss_grid(&mut Norm2, &theta, &d1, &d2, 11, 2.0).unwrap();
        for (i, a) in g.alphas.iter().enumerate() {
            for (j, b) in g.betas.iter().enumerate() {
                let want = (0.5 + a).powi(2) + (-1.0 + b).powi(2) + 4.0;
                assert!((g.at(i, j) - want).abs() < 1e-12);
            }
        }
        assert_eq!(g.center(), 5.25);
        assert_eq!(g.alphas[0], -2.0);
        assert_eq!(g.alphas[10], 2.0);
    }

    #[test]
    fn quadratic_grid_is_point_symmetric() {
        let theta = [0.0; 4];
        let d1 = [0.3, -1.1, 0.7, 0.2];
        let d2 = [-0.4, 0.9, 0.05, 1.3];
        let g = loss_grid(&mut Norm2, &theta, &d1, &d2, 51, 1.0).unwrap();
        let r = 51;
        for i in 0..r {
            for j in 0..r {
                assert_eq!(g.at(i, j), g.at(r - 1 - i, r - 1 - j));
            }
        }
        assert_eq!(g.center(), 0.0);
    }

    #[test]
    fn resolution_must_be_odd() {
        assert!(loss_grid(&mut Norm2, &[0.0], &[1.0], &[1.0], 4, 1.0).is_err());
        assert!(loss_grid(&mut Norm2, &[0.0], &[1.0], &[1.0], 1, 1.0).is_err());
    }

    #[test]
    fn export_import_roundtrip_with_nan() {
        let mut g = objective_grid(Objective::Himmelblau, [3.0, 2.0], 4, Normalization::None, 51, 1.0).unwrap();
        assert_eq!(g.center(), 0.0);
        assert!(g.center_is_local_min());
        g.values[7] = f64::NAN;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("grid.csv");
        export_grid(&g, &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 52);
        assert!(lines.iter().all(|l| l.split(',').count() == 52));
        assert!(text.contains("nan"));
        let back = import_grid(&path).unwrap();
        assert_eq!(back, g);
        assert_eq!(back.meta.flagged_cells, 1);
    }

    #[test]
    fn overflowing_cells_are_flagged() {
        let g = objective_grid(Objective::Rosenbrock, [1.0, 1.0], 2, Normalization::None, 5, 1e80).unwrap();
        assert!(g.meta.flagged_cells > 0);
        assert_eq!(g.center(), 0.0);
    }
}
