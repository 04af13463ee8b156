//! Binary logistic regression by iteratively reweighted least squares, with
//! an optional Firth (Jeffreys-prior) penalty for separated data.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::math::{log_logistic, logistic};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IrlsConfig {
    /// Convergence threshold on the largest absolute coefficient change.
    pub tol: f64,
    pub max_iter: usize,
    pub firth: bool,
}

impl Default for IrlsConfig {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 100,
            firth: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogisticFit {
    pub coefficients: Vec<f64>,
    /// Log-likelihood (penalized when Firth is on).
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Fits `P(y=1|x) = logistic(x·β)`. Rows of `design` must already contain an
/// intercept column when one is wanted. `response` values lie in `[0, 1]`.
pub fn fit_logistic(
    design: &[Vec<f64>],
    response: &[f64],
    weights: Option<&[f64]>,
    start: Option<&[f64]>,
    config: &IrlsConfig,
) -> Result<LogisticFit> {
    let n = design.len();
    if n == 0 || response.len() != n || weights.is_some_and(|w| w.len() != n) {
        return Err(Error::InvalidInput("logistic regression input lengths differ".into()));
    }
    let p = design[0].len();
    if p == 0 || design.iter().any(|r| r.len() != p) {
        return Err(Error::InvalidInput("ragged logistic design".into()));
    }
    let x = DMatrix::from_fn(n, p, |i, j| design[i][j]);
    let y = DVector::from_column_slice(response);
    let w = match weights {
        Some(w) => DVector::from_column_slice(w),
        None => DVector::from_element(n, 1.0),
    };
    let mut beta = match start {
        Some(s) if s.len() == p => DVector::from_column_slice(s),
        _ => DVector::zeros(p),
    };

    let mut obj = objective(&x, &y, &w, &beta, config.firth);
    let mut converged = false;
    let mut iterations = 0;
    for it in 0..config.max_iter {
        iterations = it + 1;
        let eta = &x * &beta;
        let mu = eta.map(logistic);
        let var = DVector::from_fn(n, |i, _| w[i] * mu[i] * (1.0 - mu[i]));
        let info = weighted_gram(&x, &var);
        let Some(chol) = info.clone().cholesky() else {
            break;
        };
        let mut resid = DVector::from_fn(n, |i, _| y[i] - mu[i]);
        if config.firth {
            let inv = chol.inverse();
            for i in 0..n {
                let xi = x.row(i);
                let h = var[i] * (xi * &inv * xi.transpose())[(0, 0)];
                resid[i] += h * (0.5 - mu[i]) / w[i].max(f64::MIN_POSITIVE);
            }
        }
        let score = x.transpose() * resid.component_mul(&w);
        let step = chol.solve(&score);

        // Step halving keeps the objective monotone.
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let trial = &beta + &step * scale;
            let trial_obj = objective(&x, &y, &w, &trial, config.firth);
            if trial_obj.is_finite() && trial_obj >= obj - 1e-12 * (1.0 + obj.abs()) {
                beta = trial;
                obj = trial_obj;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        let change = step.amax() * scale;
        if !accepted || change < config.tol {
            converged = accepted || change < config.tol;
            break;
        }
    }
    if beta.iter().any(|b| !b.is_finite()) {
        return Err(Error::LogisticDiverged { iterations });
    }
    Ok(LogisticFit {
        coefficients: beta.iter().copied().collect(),
        objective: obj,
        iterations,
        converged,
    })
}

fn weighted_gram(x: &DMatrix<f64>, w: &DVector<f64>) -> DMatrix<f64> {
    let p = x.ncols();
    let mut g = DMatrix::zeros(p, p);
    for i in 0..x.nrows() {
        let xi = x.row(i);
        for a in 0..p {
            let wa = w[i] * xi[a];
            for b in 0..=a {
                g[(a, b)] += wa * xi[b];
            }
        }
    }
    for a in 0..p {
        for b in 0..a {
            g[(b, a)] = g[(a, b)];
        }
    }
    g
}

fn objective(x: &DMatrix<f64>, y: &DVector<f64>, w: &DVector<f64>, beta: &DVector<f64>, firth: bool) -> f64 {
    let eta = x * beta;
    let mut ll = 0.0;
    for i in 0..x.nrows() {
        ll += w[i] * (y[i] * log_logistic(eta[i]) + (1.0 - y[i]) * log_logistic(-eta[i]));
    }
    if firth {
        let var = DVector::from_fn(x.nrows(), |i, _| {
            let m = logistic(eta[i]);
            w[i] * m * (1.0 - m)
        });
        match weighted_gram(x, &var).cholesky() {
            Some(c) => {
                let logdet: f64 = c.l().diagonal().iter().map(|d| 2.0 * libm::log(*d)).sum();
                ll += 0.5 * logdet;
            }
            None => return f64::NEG_INFINITY,
        }
    }
    ll
}

/// True when a single covariate completely or quasi-completely separates the
/// two response classes, so the unpenalized MLE does not exist.
pub fn separated_1d(x: &[f64], y: &[bool]) -> bool {
    let (mut min1, mut max1, mut min0, mut max0) =
        (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for (&v, &r) in x.iter().zip(y) {
        if r {
            min1 = min1.min(v);
            max1 = max1.max(v);
        } else {
            min0 = min0.min(v);
            max0 = max0.max(v);
        }
    }
    max0 <= min1 || max1 <= min0
}

/// Builds `[1, x_1, ..., x_p]` rows from covariate columns.
pub fn design_with_intercept(columns: &[&[f64]]) -> Vec<Vec<f64>> {
    let n = columns.first().map_or(0, |c| c.len());
    (0..n)
        .map(|i| {
            let mut row = vec![1.0];
            row.extend(columns.iter().map(|c| c[i]));
            row
        })
        .collect()
}
