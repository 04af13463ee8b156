//! Gauss–Hermite rules for integrating against the standard normal density.

use alloc::vec::Vec;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Discretization of the N(0,1) prior: `∫ f(θ) φ(θ) dθ ≈ Σ_g w_g f(θ_g)`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl QuadratureRule {
    /// Gauss–Hermite rule with `points` nodes for the probabilists' weight
    /// `φ(θ)`, built with the Golub–Welsch eigenvalue method. Weights sum to 1.
    pub fn gauss_hermite(points: usize) -> Result<Self> {
        if points < 2 {
            return Err(Error::InvalidInput("quadrature needs at least 2 points".into()));
        }
        // Jacobi matrix of the monic probabilists' Hermite recurrence.
        let mut jacobi = DMatrix::<f64>::zeros(points, points);
        for i in 1..points {
            let b = libm::sqrt(i as f64);
            jacobi[(i, i - 1)] = b;
            jacobi[(i - 1, i)] = b;
        }
        let eig = jacobi.symmetric_eigen();
        let mut nodes: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        nodes.sort_by(f64::total_cmp);
        // Polish each node with Newton steps on the orthonormal recurrence and
        // take Christoffel weights 1 / Σ_k p_k(x)², which keeps full relative
        // accuracy in the tails.
        let mut weights = Vec::with_capacity(points);
        for x in nodes.iter_mut() {
            for _ in 0..3 {
                let (pn, pn1, _) = orthonormal_hermite(points, *x);
                let deriv = libm::sqrt(points as f64) * pn1;
                if deriv != 0.0 {
                    *x -= pn / deriv;
                }
            }
            let (_, _, sum_sq) = orthonormal_hermite(points, *x);
            weights.push(1.0 / sum_sq);
        }
        for i in 0..points / 2 {
            let j = points - 1 - i;
            let x = 0.5 * (nodes[j] - nodes[i]);
            let w = 0.5 * (weights[i] + weights[j]);
            nodes[i] = -x;
            nodes[j] = x;
            weights[i] = w;
            weights[j] = w;
        }
        if points % 2 == 1 {
            nodes[points / 2] = 0.0;
        }
        let total: f64 = weights.iter().sum();
        let weights = weights.into_iter().map(|w| w / total).collect();
        Ok(Self { nodes, weights })
    }

    /// A rule from explicit nodes and weights; weights are normalized to sum to 1.
    pub fn from_parts(nodes: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if nodes.len() != weights.len() || nodes.len() < 2 {
            return Err(Error::InvalidInput("quadrature needs matching nodes and weights, G >= 2".into()));
        }
        if weights.iter().any(|&w| !w.is_finite() || w <= 0.0) {
            return Err(Error::InvalidInput("quadrature weights must be positive".into()));
        }
        let total: f64 = weights.iter().sum();
        Ok(Self {
            nodes,
            weights: weights.into_iter().map(|w| w / total).collect(),
        })
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn log_weights(&self) -> Vec<f64> {
        self.weights.iter().map(|&w| libm::log(w)).collect()
    }

    pub fn integrate<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&x, &w)| w * f(x)).sum()
    }
}

/// Returns `(p_n(x), p_{n-1}(x), Σ_{k<n} p_k(x)²)` for the orthonormal
/// probabilists' Hermite polynomials.
fn orthonormal_hermite(n: usize, x: f64) -> (f64, f64, f64) {
    let mut prev = 0.0;
    let mut cur = 1.0;
    let mut sum_sq = 0.0;
    for k in 0..n {
        sum_sq += cur * cur;
        let next = (x * cur - libm::sqrt(k as f64) * prev) / libm::sqrt((k + 1) as f64);
        prev = cur;
        cur = next;
    }
    (cur, prev, sum_sq)
}
