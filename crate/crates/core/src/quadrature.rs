//! Tensor quadrature on the unit cell `Q = (-1/2, 1/2)^N`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QuadratureScheme {
    MidpointTensor,
    GaussLegendreTensor,
}

/// Tensor-product rule on `Q`. Weights always sum to one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureRule {
    pub nodes_per_axis: usize,
    pub scheme: QuadratureScheme,
}

impl Default for QuadratureRule {
    fn default() -> Self {
        Self { nodes_per_axis: 16, scheme: QuadratureScheme::GaussLegendreTensor }
    }
}

impl QuadratureRule {
    pub fn midpoint(nodes_per_axis: usize) -> Self {
        Self { nodes_per_axis, scheme: QuadratureScheme::MidpointTensor }
    }

    pub fn gauss(nodes_per_axis: usize) -> Self {
        Self { nodes_per_axis, scheme: QuadratureScheme::GaussLegendreTensor }
    }

    /// Nodes and weights of the one-dimensional rule on `(-1/2, 1/2)`.
    pub fn axis_rule(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        let n = self.nodes_per_axis;
        if n < 2 {
            return Err(Error::InvalidArgument(format!("quadrature needs at least 2 nodes per axis, got {n}")));
        }
        Ok(match self.scheme {
            QuadratureScheme::MidpointTensor => {
                let w = 1.0 / n as f64;
                let nodes = (0..n).map(|i| -0.5 + (i as f64 + 0.5) * w).collect();
                (nodes, vec![w; n])
            }
            QuadratureScheme::GaussLegendreTensor => {
                let (x, w) = gauss_legendre(n);
                (x.iter().map(|v| 0.5 * v).collect(), w.iter().map(|v| 0.5 * v).collect())
            }
        })
    }

    /// Full tensor rule in dimension `dim`: flat node coordinates (`dim` per node) and weights.
    pub fn tensor_rule(&self, dim: usize) -> Result<(Vec<f64>, Vec<f64>)> {
        let (x, w) = self.axis_rule()?;
        let n = x.len();
        let total = n.pow(dim as u32);
        let mut nodes = Vec::with_capacity(total * dim);
        let mut weights = Vec::with_capacity(total);
        let mut idx = vec![0usize; dim];
        for _ in 0..total {
            let mut weight = 1.0;
            for &i in &idx {
                nodes.push(x[i]);
                weight *= w[i];
            }
            weights.push(weight);
            for d in (0..dim).rev() {
                idx[d] += 1;
                if idx[d] < n {
                    break;
                }
                idx[d] = 0;
            }
        }
        Ok((nodes, weights))
    }
}

/// Gauss-Legendre nodes and weights on `[-1, 1]` by Newton iteration on `P_n`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
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

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weights_sum_to_one() {
        for dim in 1..=3 {
            for rule in [QuadratureRule::midpoint(5), QuadratureRule::gauss(7)] {
                let (_, w) = rule.tensor_rule(dim).unwrap();
                let s: f64 = w.iter().sum();
                assert!((s - 1.0).abs() < 1e-13, "{rule:?} dim {dim}: {s}");
            }
        }
    }

    #[test]
    fn gauss_integrates_polynomials_exactly() {
        // degree 2n-1 exactness: int_{-1/2}^{1/2} y^6 dy = 2 * (1/2)^7 / 7
        let (x, w) = QuadratureRule::gauss(4).axis_rule().unwrap();
        let approx: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(6)).sum();
        assert!((approx - 2.0 * 0.5f64.powi(7) / 7.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_single_node() {
        assert!(QuadratureRule::gauss(1).axis_rule().is_err());
    }
}
