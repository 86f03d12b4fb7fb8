//! Local curvature statistics of 2x2 Hessians at catalogued minima.

use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};
use crate::objectives::{Mat2, Objective, Point};

/// Below this eigenvalue magnitude the condition number is reported as +inf.
pub const SINGULAR_EPS: f64 = 1e-12;

/// Maximum tolerated `|H01 - H10|` for a matrix to count as symmetric.
pub const SYMMETRY_TOL: f64 = 1e-9;

/// Default step for the finite-difference Hessian.
pub const DEFAULT_FD_STEP: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HessianStats {
    /// `max|λ| / min|λ|`; `+inf` when the Hessian is singular.
    pub condition_number: f64,
    pub trace: f64,
    pub determinant: f64,
    pub max_eigenvalue: f64,
    pub min_eigenvalue: f64,
    /// Set when `|λ_min| < SINGULAR_EPS`.
    pub singular: bool,
}

/// Eigenvalues `(λ_max, λ_min)` of a symmetric 2x2 matrix.
pub fn eigen_2x2(h: &Mat2) -> Result<(f64, f64)> {
    if !h.iter().flatten().all(|v| v.is_finite()) {
        return contract("Hessian has non-finite entries");
    }
    if (h[0][1] - h[1][0]).abs() > SYMMETRY_TOL {
        return contract(format!("Hessian is not symmetric: H01={} H10={}", h[0][1], h[1][0]));
    }
    let (a, b, c) = (h[0][0], 0.5 * (h[0][1] + h[1][0]), h[1][1]);
    let mean = 0.5 * (a + c);
    let radius = (0.5 * (a - c)).hypot(b);
    let det = a * c - b * b;
    // When the spread is comparable to the mean, the smaller-magnitude root
    // is taken from the determinant to avoid cancellation.
    let (max, min) = if radius <= 0.5 * mean.abs() || radius == 0.0 {
        (mean + radius, mean - radius)
    } else if mean >= 0.0 {
        let hi = mean + radius;
        (hi, det / hi)
    } else {
        let lo = mean - radius;
        (det / lo, lo)
    };
    Ok((max.max(min), min.min(max)))
}

pub fn hessian_stats(h: &Mat2) -> Result<HessianStats> {
    let (max, min) = eigen_2x2(h)?;
    let (big, small) = if max.abs() >= min.abs() {
        (max.abs(), min.abs())
    } else {
        (min.abs(), max.abs())
    };
    let singular = small < SINGULAR_EPS;
    Ok(HessianStats {
        condition_number: if singular { f64::INFINITY } else { big / small },
        trace: h[0][0] + h[1][1],
        determinant: h[0][0] * h[1][1] - h[0][1] * h[1][0],
        max_eigenvalue: max,
        min_eigenvalue: min,
        singular,
    })
}

/// Hessian from central second differences of the function value,
/// symmetrized.
pub fn fd_hessian_oracle(objective: Objective, point: Point, step: f64) -> Result<Mat2> {
    if !(step > 0.0 && step.is_finite()) {
        return contract(format!("finite-difference step must be positive, got {step}"));
    }
    let f = |dx: f64, dy: f64| objective.evaluate([point[0] + dx, point[1] + dy]);
    let h = step;
    let f0 = f(0.0, 0.0)?;
    let hxx = (f(h, 0.0)? - 2.0 * f0 + f(-h, 0.0)?) / (h * h);
    let hyy = (f(0.0, h)? - 2.0 * f0 + f(0.0, -h)?) / (h * h);
    let hxy = (f(h, h)? - f(h, -h)? - f(-h, h)? + f(-h, -h)?) / (4.0 * h * h);
    // Both off-diagonal estimates are the same stencil, so the result is
    // symmetric by construction.
    Ok([[hxx, hxy], [hxy, hyy]])
}

/// One row of a minima table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MinimumRow {
    pub function: Objective,
    pub point: Point,
    pub stats: HessianStats,
}

pub fn minima_table(objective: Objective) -> Result<Vec<MinimumRow>> {
    objective
        .global_minima()
        .into_iter()
        .map(|point| {
            let stats = hessian_stats(&objective.hessian(point)?)?;
            Ok(MinimumRow { function: objective, point, stats })
        })
        .collect()
}

/// CSV header for minima tables.
pub const TABLE_HEADER: &str =
    "function,min_x,min_y,condition_number,hessian_trace,hessian_determinant,max_eigenvalue";

pub fn write_table_csv<W: std::io::Write>(rows: &[MinimumRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TABLE_HEADER.split(','))?;
    for r in rows {
        w.write_record([
            r.function.name().to_string(),
            r.point[0].to_string(),
            r.point[1].to_string(),
            r.stats.condition_number.to_string(),
            r.stats.trace.to_string(),
            r.stats.determinant.to_string(),
            r.stats.max_eigenvalue.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Reference statistics for one minimum, as printed (rounded).
#[derive(Clone, Copy, Debug)]
pub struct GoldenRow {
    pub function: Objective,
    /// Index into `function.global_minima()`.
    pub minimum: usize,
    pub condition_number: f64,
    pub trace: f64,
    pub determinant: f64,
    pub max_eigenvalue: f64,
}

const fn golden(
    function: Objective,
    minimum: usize,
    condition_number: f64,
    trace: f64,
    determinant: f64,
    max_eigenvalue: f64,
) -> GoldenRow {
    GoldenRow { function, minimum, condition_number, trace, determinant, max_eigenvalue }
}

/// The four Himmelblau minima.
pub const GOLDEN_HIMMELBLAU: [GoldenRow; 4] = [
    golden(Objective::Himmelblau, 0, 3.200, 108.000, 2116.000, 82.284),
    golden(Objective::Himmelblau, 1, 1.242, 145.39, 5222.890, 80.550),
    golden(Objective::Himmelblau, 2, 1.892, 204.500, 9460.560, 133.786),
    golden(Objective::Himmelblau, 3, 3.674, 134.110, 3024.540, 105.419),
];

/// The six single-minimum functions.
pub const GOLDEN_SINGLE: [GoldenRow; 6] = [
    golden(Objective::Sphere, 0, 1.000, 4.000, 4.000, 2.000),
    golden(Objective::Rosenbrock, 0, 2508.010, 1002.000, 400.000, 1001.600),
    golden(Objective::Rastrigin, 0, 1.000, 793.568, 157438.000, 396.784),
    golden(Objective::Beale, 0, 162.473, 49.281, 14.766, 48.980),
    golden(Objective::Booth, 0, 9.000, 20.000, 36.000, 18.000),
    golden(Objective::ThreeHumpCamel, 0, 2.784, 6.000, 7.000, 4.414),
];

/// Absolute tolerance for printed values below 100.
pub const GOLDEN_ABS_TOL: f64 = 1e-3;
/// Relative tolerance for printed values of 100 and above.
pub const GOLDEN_REL_TOL: f64 = 5e-4;

/// Whether `computed` agrees with the printed `expected` to its rounding.
pub fn golden_matches(expected: f64, computed: f64) -> bool {
    if expected.abs() < 100.0 {
        (computed - expected).abs() <= GOLDEN_ABS_TOL
    } else {
        ((computed - expected) / expected).abs() <= GOLDEN_REL_TOL
    }
}

/// Outcome of comparing one statistic to its reference value.
#[derive(Clone, Debug, Serialize)]
pub struct GoldenCheck {
    pub function: Objective,
    pub point: Point,
    pub statistic: &'static str,
    pub expected: f64,
    pub computed: f64,
    pub pass: bool,
}

/// Compare every reference cell against freshly computed statistics.
pub fn check_golden() -> Result<Vec<GoldenCheck>> {
    let mut checks = Vec::new();
    for g in GOLDEN_HIMMELBLAU.iter().chain(GOLDEN_SINGLE.iter()) {
        let point = g.function.global_minima()[g.minimum];
        let s = hessian_stats(&g.function.hessian(point)?)?;
        for (statistic, expected, computed) in [
            ("condition_number", g.condition_number, s.condition_number),
            ("hessian_trace", g.trace, s.trace),
            ("hessian_determinant", g.determinant, s.determinant),
            ("max_eigenvalue", g.max_eigenvalue, s.max_eigenvalue),
        ] {
            checks.push(GoldenCheck {
                function: g.function,
                point,
                statistic,
                expected,
                computed,
                pass: golden_matches(expected, computed),
            });
        }
    }
    Ok(checks)
}
