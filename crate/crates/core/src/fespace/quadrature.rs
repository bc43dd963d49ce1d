//! Quadrature on reference simplices, stored in barycentric coordinates.
//! Weights are positive and sum to the reference measure (1 for the unit
//! interval, 1/2 for the triangle, 1/6 for the tetrahedron). Low degrees use
//! classic symmetric rules; higher degrees fall back to tensor Gauss rules
//! pushed through the collapsed-coordinate map, which keeps all weights
//! positive at the cost of a few extra points.

use crate::error::{Error, Result};

pub const MAX_DEGREE: usize = 10;

/// Quadrature rule on the reference simplex of the given dimension.
#[derive(Debug, Clone)]
pub struct QuadratureRule {
    /// Barycentric coordinates, `dim + 1` entries per point.
    pub points: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    /// Total polynomial degree integrated exactly.
    pub degree: usize,
    pub dim: usize,
}

impl QuadratureRule {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Reference simplex measure: 1/dim!.
    pub fn reference_measure(dim: usize) -> f64 {
        match dim {
            1 => 1.0,
            2 => 0.5,
            3 => 1.0 / 6.0,
            _ => panic!("unsupported simplex dimension {dim}"),
        }
    }
}

/// Rule exact for total degree `degree` on the reference simplex.
pub fn quadrature_for(degree: usize, dim: usize) -> Result<QuadratureRule> {
    if degree > MAX_DEGREE || degree == 0 {
        return Err(Error::UnsupportedQuadrature { degree, dim });
    }
    match dim {
        1 => Ok(gauss_interval(degree)),
        2 => Ok(triangle_rule(degree)),
        3 => Ok(tetrahedron_rule(degree)),
        _ => Err(Error::UnsupportedQuadrature { degree, dim }),
    }
}

/// Gauss-Legendre nodes and weights on [0, 1], computed by Newton iteration
/// on the Legendre recurrence.
fn gauss_01(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = Vec::with_capacity(n);
    let mut weights = Vec::with_capacity(n);
    for i in 0..n {
        // Chebyshev initial guess, refined by Newton
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..64 {
            let (p, dp) = legendre(n, x);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let (_, dp) = legendre(n, x);
        nodes.push(0.5 * (1.0 - x)); // reversed order ascends on [0, 1]
        weights.push(1.0 / ((1.0 - x * x) * dp * dp));
    }
    (nodes, weights)
}

/// Legendre polynomial P_n and its derivative at x.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

fn gauss_interval(degree: usize) -> QuadratureRule {
    let n = degree / 2 + 1; // 2n - 1 >= degree
    let (nodes, weights) = gauss_01(n);
    let points = nodes.iter().map(|&t| vec![1.0 - t, t]).collect();
    QuadratureRule {
        points,
        weights,
        degree: 2 * n - 1,
        dim: 1,
    }
}

fn triangle_rule(degree: usize) -> QuadratureRule {
    match degree {
        1 => QuadratureRule {
            points: vec![vec![1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]],
            weights: vec![0.5],
            degree: 1,
            dim: 2,
        },
        2 => {
            let a = 2.0 / 3.0;
            let b = 1.0 / 6.0;
            QuadratureRule {
                points: vec![vec![a, b, b], vec![b, a, b], vec![b, b, a]],
                weights: vec![1.0 / 6.0; 3],
                degree: 2,
                dim: 2,
            }
        }
        3 | 4 => {
            // 6-point symmetric rule, degree 4, positive weights
            let a = 0.445948490915965;
            let b = 0.091576213509771;
            let wa = 0.223381589678011 * 0.5;
            let wb = 0.109951743655322 * 0.5;
            let mut points = Vec::new();
            let mut weights = Vec::new();
            for &(c, w) in &[(a, wa), (b, wb)] {
                let o = 1.0 - 2.0 * c;
                points.push(vec![o, c, c]);
                points.push(vec![c, o, c]);
                points.push(vec![c, c, o]);
                weights.extend_from_slice(&[w, w, w]);
            }
            QuadratureRule {
                points,
                weights,
                degree: 4,
                dim: 2,
            }
        }
        5 => {
            // 7-point symmetric rule, degree 5, positive weights
            let mut points = vec![vec![1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]];
            let mut weights = vec![0.225 * 0.5];
            let a = 0.470142064105115;
            let b = 0.101286507323456;
            let wa = 0.132394152788506 * 0.5;
            let wb = 0.125939180544827 * 0.5;
            for &(c, w) in &[(a, wa), (b, wb)] {
                let o = 1.0 - 2.0 * c;
                points.push(vec![o, c, c]);
                points.push(vec![c, o, c]);
                points.push(vec![c, c, o]);
                weights.extend_from_slice(&[w, w, w]);
            }
            QuadratureRule {
                points,
                weights,
                degree: 5,
                dim: 2,
            }
        }
        d => collapsed_rule(d, 2),
    }
}

fn tetrahedron_rule(degree: usize) -> QuadratureRule {
    match degree {
        1 => QuadratureRule {
            points: vec![vec![0.25; 4]],
            weights: vec![1.0 / 6.0],
            degree: 1,
            dim: 3,
        },
        2 => {
            let a = 0.5854101966249685;
            let b = 0.1381966011250105;
            QuadratureRule {
                points: vec![
                    vec![a, b, b, b],
                    vec![b, a, b, b],
                    vec![b, b, a, b],
                    vec![b, b, b, a],
                ],
                weights: vec![1.0 / 24.0; 4],
                degree: 2,
                dim: 3,
            }
        }
        d => collapsed_rule(d, 3),
    }
}

/// Tensor Gauss rule mapped onto the simplex through the collapsed
/// coordinates x = u, y = v(1-u) [, z = w(1-u)(1-v)]. The Jacobian raises
/// the per-axis degree by dim - axis - 1 at most, so `n` Gauss points per
/// axis integrate total degree `2n - 1 - (dim - 1)` exactly.
fn collapsed_rule(degree: usize, dim: usize) -> QuadratureRule {
    let n = (degree + dim).div_ceil(2); // 2n - 1 >= degree + dim - 1
    let (nodes, weights) = gauss_01(n);
    let mut points = Vec::new();
    let mut wts = Vec::new();
    match dim {
        2 => {
            for (i, &u) in nodes.iter().enumerate() {
                for (j, &v) in nodes.iter().enumerate() {
                    let x = u;
                    let y = v * (1.0 - u);
                    points.push(vec![1.0 - x - y, x, y]);
                    wts.push(weights[i] * weights[j] * (1.0 - u));
                }
            }
        }
        _ => {
            for (i, &u) in nodes.iter().enumerate() {
                for (j, &v) in nodes.iter().enumerate() {
                    for (k, &w) in nodes.iter().enumerate() {
                        let x = u;
                        let y = v * (1.0 - u);
                        let z = w * (1.0 - u) * (1.0 - v);
                        points.push(vec![1.0 - x - y - z, x, y, z]);
                        wts.push(
                            weights[i] * weights[j] * weights[k] * (1.0 - u).powi(2) * (1.0 - v),
                        );
                    }
                }
            }
        }
    }
    QuadratureRule {
        points,
        weights: wts,
        degree,
        dim,
    }
}
