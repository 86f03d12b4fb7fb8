//! Two-input benchmark objectives with closed-form value, gradient and Hessian.
//!
//! All seven functions have global minima of value 0. Booth is the standard
//! form `(x + 2y - 7)^2 + (2x + y - 5)^2` with its minimum at `(1, 3)`.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A point in the plane.
pub type Point = [f64; 2];

/// A 2x2 matrix, row-major.
pub type Mat2 = [[f64; 2]; 2];

const ROSENBROCK_A: f64 = 1.0;
const ROSENBROCK_B: f64 = 100.0;
const RASTRIGIN_A: f64 = 10.0;
const BEALE_C: [f64; 3] = [1.5, 2.25, 2.625];

/// Himmelblau minima as printed to six decimals; refined by Newton's method.
const HIMMELBLAU_SEEDS: [Point; 4] = [
    [3.0, 2.0],
    [-2.805118, 3.131312],
    [-3.77931, -3.283186],
    [3.584428, -1.848126],
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    Sphere,
    Rosenbrock,
    Rastrigin,
    Beale,
    Booth,
    ThreeHumpCamel,
    Himmelblau,
}

impl Objective {
    pub const ALL: [Objective; 7] = [
        Objective::Sphere,
        Objective::Rosenbrock,
        Objective::Rastrigin,
        Objective::Beale,
        Objective::Booth,
        Objective::ThreeHumpCamel,
        Objective::Himmelblau,
    ];

    /// Machine name, used in file names and CSV columns.
    pub fn name(self) -> &'static str {
        match self {
            Objective::Sphere => "sphere",
            Objective::Rosenbrock => "rosenbrock",
            Objective::Rastrigin => "rastrigin",
            Objective::Beale => "beale",
            Objective::Booth => "booth",
            Objective::ThreeHumpCamel => "three_hump_camel",
            Objective::Himmelblau => "himmelblau",
        }
    }

    /// Function value. Panics are impossible; non-finite input simply
    /// propagates. Use [`Objective::evaluate`] for checked evaluation.
    pub fn value(self, [x, y]: Point) -> f64 {
        match self {
            Objective::Sphere => x * x + y * y,
            Objective::Rosenbrock => {
                let u = ROSENBROCK_A - x;
                let v = y - x * x;
                u * u + ROSENBROCK_B * v * v
            }
            Objective::Rastrigin => {
                let a = RASTRIGIN_A;
                2.0 * a + x * x - a * (2.0 * PI * x).cos() + y * y - a * (2.0 * PI * y).cos()
            }
            Objective::Beale => beale_residuals(x, y).iter().map(|r| r * r).sum(),
            Objective::Booth => {
                let r1 = x + 2.0 * y - 7.0;
                let r2 = 2.0 * x + y - 5.0;
                r1 * r1 + r2 * r2
            }
            Objective::ThreeHumpCamel => {
                let x2 = x * x;
                2.0 * x2 - 1.05 * x2 * x2 + x2 * x2 * x2 / 6.0 + x * y + y * y
            }
            Objective::Himmelblau => {
                let r1 = x * x + y - 11.0;
                let r2 = x + y * y - 7.0;
                r1 * r1 + r2 * r2
            }
        }
    }

    pub fn evaluate(self, point: Point) -> Result<f64> {
        check_finite(point)?;
        Ok(self.value(point))
    }

    pub fn gradient(self, point: Point) -> Result<Point> {
        check_finite(point)?;
        let [x, y] = point;
        Ok(match self {
            Objective::Sphere => [2.0 * x, 2.0 * y],
            Objective::Rosenbrock => {
                let v = y - x * x;
                [
                    -2.0 * (ROSENBROCK_A - x) - 4.0 * ROSENBROCK_B * x * v,
                    2.0 * ROSENBROCK_B * v,
                ]
            }
            Objective::Rastrigin => {
                let w = 2.0 * PI;
                let a = RASTRIGIN_A;
                [2.0 * x + a * w * (w * x).sin(), 2.0 * y + a * w * (w * y).sin()]
            }
            Objective::Beale => {
                let r = beale_residuals(x, y);
                let mut g = [0.0; 2];
                for (i, ri) in r.iter().enumerate() {
                    let [dx, dy] = beale_residual_grad(i, x, y);
                    g[0] += 2.0 * ri * dx;
                    g[1] += 2.0 * ri * dy;
                }
                g
            }
            Objective::Booth => {
                let r1 = x + 2.0 * y - 7.0;
                let r2 = 2.0 * x + y - 5.0;
                [2.0 * r1 + 4.0 * r2, 4.0 * r1 + 2.0 * r2]
            }
            Objective::ThreeHumpCamel => {
                let x2 = x * x;
                [4.0 * x - 4.2 * x2 * x + x2 * x2 * x + y, x + 2.0 * y]
            }
            Objective::Himmelblau => {
                let r1 = x * x + y - 11.0;
                let r2 = x + y * y - 7.0;
                [4.0 * x * r1 + 2.0 * r2, 2.0 * r1 + 4.0 * y * r2]
            }
        })
    }

    pub fn hessian(self, point: Point) -> Result<Mat2> {
        check_finite(point)?;
        let [x, y] = point;
        let (hxx, hxy, hyy) = match self {
            Objective::Sphere => (2.0, 0.0, 2.0),
            Objective::Rosenbrock => {
                let b = ROSENBROCK_B;
                (2.0 - 4.0 * b * y + 12.0 * b * x * x, -4.0 * b * x, 2.0 * b)
            }
            Objective::Rastrigin => {
                let w = 2.0 * PI;
                let a = RASTRIGIN_A;
                (2.0 + a * w * w * (w * x).cos(), 0.0, 2.0 + a * w * w * (w * y).cos())
            }
            Objective::Beale => {
                // Gauss-Newton part plus residual-weighted second derivatives.
                let r = beale_residuals(x, y);
                let (mut hxx, mut hxy, mut hyy) = (0.0, 0.0, 0.0);
                for (i, ri) in r.iter().enumerate() {
                    let p = (i + 1) as i32;
                    let [dx, dy] = beale_residual_grad(i, x, y);
                    let dxy = p as f64 * y.powi(p - 1);
                    let dyy = if p >= 2 {
                        (p * (p - 1)) as f64 * x * y.powi(p - 2)
                    } else {
                        0.0
                    };
                    hxx += 2.0 * dx * dx;
                    hxy += 2.0 * (dx * dy + ri * dxy);
                    hyy += 2.0 * (dy * dy + ri * dyy);
                }
                (hxx, hxy, hyy)
            }
            Objective::Booth => (10.0, 8.0, 10.0),
            Objective::ThreeHumpCamel => {
                let x2 = x * x;
                (4.0 - 12.6 * x2 + 5.0 * x2 * x2, 1.0, 2.0)
            }
            Objective::Himmelblau => {
                let r1 = x * x + y - 11.0;
                let r2 = x + y * y - 7.0;
                (4.0 * r1 + 8.0 * x * x + 2.0, 4.0 * x + 4.0 * y, 2.0 + 4.0 * r2 + 8.0 * y * y)
            }
        };
        Ok([[hxx, hxy], [hxy, hyy]])
    }

    /// Catalogued global minima, all of value 0.
    pub fn global_minima(self) -> Vec<Point> {
        match self {
            Objective::Sphere | Objective::Rastrigin | Objective::ThreeHumpCamel => vec![[0.0, 0.0]],
            Objective::Rosenbrock => vec![[ROSENBROCK_A, ROSENBROCK_A * ROSENBROCK_A]],
            Objective::Beale => vec![[3.0, 0.5]],
            Objective::Booth => vec![[1.0, 3.0]],
            Objective::Himmelblau => himmelblau_minima().to_vec(),
        }
    }
}

fn himmelblau_minima() -> &'static [Point; 4] {
    static MINIMA: OnceLock<[Point; 4]> = OnceLock::new();
    MINIMA.get_or_init(|| HIMMELBLAU_SEEDS.map(|seed| newton_refine(Objective::Himmelblau, seed, 10)))
}

/// Newton iterations on the gradient, starting from `start`.
pub fn newton_refine(objective: Objective, start: Point, steps: usize) -> Point {
    let mut p = start;
    for _ in 0..steps {
        let g = objective.gradient(p).expect("finite iterate");
        let h = objective.hessian(p).expect("finite iterate");
        let det = h[0][0] * h[1][1] - h[0][1] * h[1][0];
        if det == 0.0 || !det.is_finite() {
            break;
        }
        let dx = (h[1][1] * g[0] - h[0][1] * g[1]) / det;
        let dy = (h[0][0] * g[1] - h[1][0] * g[0]) / det;
        let next = [p[0] - dx, p[1] - dy];
        if next == p {
            break;
        }
        p = next;
    }
    p
}

fn beale_residuals(x: f64, y: f64) -> [f64; 3] {
    [
        BEALE_C[0] - x + x * y,
        BEALE_C[1] - x + x * y * y,
        BEALE_C[2] - x + x * y * y * y,
    ]
}

/// Gradient of the `i`-th Beale residual `c_i - x + x*y^(i+1)`.
fn beale_residual_grad(i: usize, x: f64, y: f64) -> Point {
    let p = (i + 1) as i32;
    [y.powi(p) - 1.0, p as f64 * x * y.powi(p - 1)]
}

fn check_finite(point: Point) -> Result<()> {
    if point.iter().all(|c| c.is_finite()) {
        Ok(())
    } else {
        Err(Error::Domain(format!("non-finite point ({}, {})", point[0], point[1])))
    }
}

impl fmt::Display for Objective {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Objective {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .map(|c| c.to_ascii_lowercase())
            .collect();
        Ok(match key.as_str() {
            "sphere" => Objective::Sphere,
            "rosenbrock" => Objective::Rosenbrock,
            "rastrigin" => Objective::Rastrigin,
            "beale" => Objective::Beale,
            "booth" => Objective::Booth,
            "threehumpcamel" | "camel" => Objective::ThreeHumpCamel,
            "himmelblau" | "himmelblaus" => Objective::Himmelblau,
            _ => return Err(Error::Validation(format!("unknown objective '{s}'"))),
        })
    }
}
