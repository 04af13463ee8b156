//! Two-parameter logistic latent trait model fitted by marginal maximum
//! likelihood (Bock–Aitkin EM over a Gauss–Hermite discretization of the
//! N(0,1) prior), with empirical Bayes scoring of the latent variable.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::data::{ItemResponseMatrix, MIN_ITEMS};
use crate::error::{Error, Result};
use crate::math::{log_logistic, log_sum_exp, logistic, logit};
use crate::quadrature::QuadratureRule;

/// How per-unit latent scores are computed from the fitted item parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Scoring {
    /// Posterior mode.
    #[default]
    Mode,
    /// Posterior mean (expected a posteriori).
    Mean,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LatentModel {
    #[default]
    TwoPl,
    /// Common slope across items.
    Rasch,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitConfig {
    pub quadrature_points: usize,
    /// Stop when the absolute change in marginal log-likelihood falls below this.
    pub tol: f64,
    pub max_iter: usize,
    pub scoring: Scoring,
    pub model: LatentModel,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            quadrature_points: 21,
            tol: 1e-5,
            max_iter: 500,
            scoring: Scoring::Mode,
            model: LatentModel::TwoPl,
        }
    }
}

/// Item intercepts `β_l0` and slopes `β_l1`.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoPlParams {
    pub intercepts: Vec<f64>,
    pub slopes: Vec<f64>,
}

impl TwoPlParams {
    pub fn new(intercepts: Vec<f64>, slopes: Vec<f64>) -> Result<Self> {
        if intercepts.len() != slopes.len() || intercepts.is_empty() {
            return Err(Error::InvalidInput("intercepts and slopes must have equal, nonzero length".into()));
        }
        if intercepts.iter().chain(&slopes).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("item parameters must be finite".into()));
        }
        Ok(Self { intercepts, slopes })
    }

    pub fn n_items(&self) -> usize {
        self.intercepts.len()
    }

    /// `q_l(θ)`.
    pub fn prob(&self, item: usize, theta: f64) -> f64 {
        item_response_prob(self.intercepts[item], self.slopes[item], theta)
    }

    /// `log g(x | θ, β)` under conditional independence.
    pub fn pattern_log_likelihood(&self, pattern: &[u8], theta: f64) -> f64 {
        pattern
            .iter()
            .enumerate()
            .map(|(l, &x)| {
                let eta = self.intercepts[l] + self.slopes[l] * theta;
                if x == 1 {
                    log_logistic(eta)
                } else {
                    log_logistic(-eta)
                }
            })
            .sum()
    }

    /// Items whose slope is not strictly positive.
    pub fn nonpositive_slopes(&self) -> Vec<usize> {
        (0..self.n_items()).filter(|&l| self.slopes[l] <= 0.0).collect()
    }
}

/// Probability that a unit with latent score `theta` answers the item.
pub fn item_response_prob(intercept: f64, slope: f64, theta: f64) -> f64 {
    logistic(intercept + slope * theta)
}

/// Result of a marginal maximum likelihood fit.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentFit {
    pub params: TwoPlParams,
    /// Empirical Bayes score per row of the fitted matrix.
    pub theta: Vec<f64>,
    pub loglik: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Marginal log-likelihood after every E-step, in order.
    pub loglik_trace: Vec<f64>,
    pub quadrature: QuadratureRule,
    pub scoring: Scoring,
}

impl LatentFit {
    /// Scores an arbitrary response pattern with the fitted parameters.
    pub fn score(&self, pattern: &[u8]) -> f64 {
        score_pattern(&self.params, pattern, &self.quadrature, self.scoring)
    }

    pub fn nonpositive_slopes(&self) -> Vec<usize> {
        self.params.nonpositive_slopes()
    }
}

/// Unique response patterns and their multiplicities.
struct PatternTable {
    patterns: Vec<Vec<u8>>,
    counts: Vec<f64>,
    row_pattern: Vec<usize>,
    first_row: Vec<usize>,
}

impl PatternTable {
    fn new(matrix: &ItemResponseMatrix) -> Self {
        let mut index: BTreeMap<&[u8], usize> = BTreeMap::new();
        let mut patterns = Vec::new();
        let mut counts = Vec::new();
        let mut first_row = Vec::new();
        let mut row_pattern = Vec::with_capacity(matrix.n_rows());
        for (k, row) in matrix.rows().enumerate() {
            let id = *index.entry(row).or_insert_with(|| {
                patterns.push(row.to_vec());
                counts.push(0.0);
                first_row.push(k);
                patterns.len() - 1
            });
            counts[id] += 1.0;
            row_pattern.push(id);
        }
        Self {
            patterns,
            counts,
            row_pattern,
            first_row,
        }
    }
}

/// Marginal log-likelihood `Σ_k log ∫ g(x_k|θ,β) φ(θ) dθ` by quadrature.
pub fn marginal_loglik(params: &TwoPlParams, matrix: &ItemResponseMatrix, quad: &QuadratureRule) -> Result<f64> {
    if params.n_items() != matrix.n_items() {
        return Err(Error::InvalidInput("parameter and matrix item counts differ".into()));
    }
    let table = PatternTable::new(matrix);
    let logw = quad.log_weights();
    let mut total = 0.0;
    let mut terms = vec![0.0; quad.len()];
    for (p, pattern) in table.patterns.iter().enumerate() {
        for (g, &theta) in quad.nodes().iter().enumerate() {
            terms[g] = logw[g] + params.pattern_log_likelihood(pattern, theta);
        }
        let value = log_sum_exp(&terms);
        if !value.is_finite() {
            return Err(Error::NumericFailure {
                unit: table.first_row[p],
            });
        }
        total += table.counts[p] * value;
    }
    Ok(total)
}

/// Expected counts at the quadrature nodes produced by an E-step.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeCounts {
    /// `n_g`: expected number of units at node `g`.
    pub expected: Vec<f64>,
    /// `r_lg`: expected number of units at node `g` answering item `l`.
    pub positive: Vec<Vec<f64>>,
}

fn e_step(params: &TwoPlParams, table: &PatternTable, quad: &QuadratureRule, logw: &[f64]) -> (f64, NodeCounts) {
    let m = params.n_items();
    let g_len = quad.len();
    // log σ(±η) per item and node.
    let mut log_pos = vec![0.0; m * g_len];
    let mut log_neg = vec![0.0; m * g_len];
    for l in 0..m {
        for (g, &theta) in quad.nodes().iter().enumerate() {
            let eta = params.intercepts[l] + params.slopes[l] * theta;
            log_pos[l * g_len + g] = log_logistic(eta);
            log_neg[l * g_len + g] = log_logistic(-eta);
        }
    }
    let mut expected = vec![0.0; g_len];
    let mut positive = vec![vec![0.0; g_len]; m];
    let mut terms = vec![0.0; g_len];
    let mut loglik = 0.0;
    for (pattern, &count) in table.patterns.iter().zip(&table.counts) {
        for g in 0..g_len {
            let mut acc = logw[g];
            for (l, &x) in pattern.iter().enumerate() {
                acc += if x == 1 { log_pos[l * g_len + g] } else { log_neg[l * g_len + g] };
            }
            terms[g] = acc;
        }
        let lse = log_sum_exp(&terms);
        loglik += count * lse;
        for g in 0..g_len {
            let post = count * libm::exp(terms[g] - lse);
            expected[g] += post;
            for (l, &x) in pattern.iter().enumerate() {
                if x == 1 {
                    positive[l][g] += post;
                }
            }
        }
    }
    (loglik, NodeCounts { expected, positive })
}

/// Expected complete-data log-likelihood of one item at the nodes:
/// `Σ_g r_g log σ(η_g) + (n_g − r_g) log σ(−η_g)`.
pub fn item_expected_loglik(intercept: f64, slope: f64, nodes: &[f64], positive: &[f64], expected: &[f64]) -> f64 {
    nodes
        .iter()
        .zip(positive.iter().zip(expected))
        .map(|(&t, (&r, &n))| {
            let eta = intercept + slope * t;
            r * log_logistic(eta) + (n - r) * log_logistic(-eta)
        })
        .sum()
}

/// Gradient of [`item_expected_loglik`] with respect to (intercept, slope).
pub fn item_expected_score(intercept: f64, slope: f64, nodes: &[f64], positive: &[f64], expected: &[f64]) -> [f64; 2] {
    let mut s = [0.0; 2];
    for (&t, (&r, &n)) in nodes.iter().zip(positive.iter().zip(expected)) {
        let resid = r - n * logistic(intercept + slope * t);
        s[0] += resid;
        s[1] += resid * t;
    }
    s
}

/// Newton maximization of one item's weighted logistic regression on the nodes.
fn m_step_item(b0: &mut f64, b1: &mut f64, nodes: &[f64], positive: &[f64], expected: &[f64]) {
    let mut obj = item_expected_loglik(*b0, *b1, nodes, positive, expected);
    for _ in 0..100 {
        let s = item_expected_score(*b0, *b1, nodes, positive, expected);
        let (mut h00, mut h01, mut h11) = (0.0, 0.0, 0.0);
        for (&t, &n) in nodes.iter().zip(expected) {
            let q = logistic(*b0 + *b1 * t);
            let v = n * q * (1.0 - q);
            h00 += v;
            h01 += v * t;
            h11 += v * t * t;
        }
        let det = h00 * h11 - h01 * h01;
        if det.is_nan() || det <= 0.0 {
            break;
        }
        let d0 = (h11 * s[0] - h01 * s[1]) / det;
        let d1 = (h00 * s[1] - h01 * s[0]) / det;
        let mut scale = 1.0;
        let mut moved = false;
        for _ in 0..40 {
            let (c0, c1) = (*b0 + scale * d0, *b1 + scale * d1);
            let trial = item_expected_loglik(c0, c1, nodes, positive, expected);
            if trial >= obj {
                *b0 = c0;
                *b1 = c1;
                obj = trial;
                moved = true;
                break;
            }
            scale *= 0.5;
        }
        if !moved || (scale * d0).abs().max((scale * d1).abs()) < 1e-11 {
            break;
        }
    }
}

/// Joint Newton maximization for item intercepts with a shared slope.
fn m_step_rasch(params: &mut TwoPlParams, nodes: &[f64], counts: &NodeCounts) {
    let m = params.n_items();
    let objective = |p: &TwoPlParams| -> f64 {
        (0..m)
            .map(|l| item_expected_loglik(p.intercepts[l], p.slopes[l], nodes, &counts.positive[l], &counts.expected))
            .sum()
    };
    let mut obj = objective(params);
    for _ in 0..100 {
        let slope = params.slopes[0];
        let mut grad = DVector::<f64>::zeros(m + 1);
        let mut info = DMatrix::<f64>::zeros(m + 1, m + 1);
        for l in 0..m {
            for (g, &t) in nodes.iter().enumerate() {
                let n = counts.expected[g];
                let q = logistic(params.intercepts[l] + slope * t);
                let resid = counts.positive[l][g] - n * q;
                let v = n * q * (1.0 - q);
                grad[l] += resid;
                grad[m] += resid * t;
                info[(l, l)] += v;
                info[(l, m)] += v * t;
                info[(m, m)] += v * t * t;
            }
            info[(m, l)] = info[(l, m)];
        }
        let Some(chol) = info.cholesky() else {
            break;
        };
        let step = chol.solve(&grad);
        let mut scale = 1.0;
        let mut moved = false;
        for _ in 0..40 {
            let mut trial = params.clone();
            for l in 0..m {
                trial.intercepts[l] += scale * step[l];
            }
            let s = slope + scale * step[m];
            trial.slopes.iter_mut().for_each(|b| *b = s);
            let trial_obj = objective(&trial);
            if trial_obj >= obj {
                *params = trial;
                obj = trial_obj;
                moved = true;
                break;
            }
            scale *= 0.5;
        }
        if !moved || scale * step.amax() < 1e-11 {
            break;
        }
    }
}

fn check_fit_input(matrix: &ItemResponseMatrix) -> Result<()> {
    if matrix.n_items() < MIN_ITEMS {
        return Err(Error::TooFewItems {
            required: MIN_ITEMS,
            found: matrix.n_items(),
        });
    }
    if matrix.n_rows() == 0 {
        return Err(Error::InvalidInput("empty response matrix".into()));
    }
    for l in 0..matrix.n_items() {
        let first = matrix.get(0, l);
        if matrix.rows().all(|r| r[l] == first) {
            return Err(Error::DegenerateItem { item: l });
        }
    }
    Ok(())
}

fn fit_em(matrix: &ItemResponseMatrix, config: &FitConfig, model: LatentModel) -> Result<LatentFit> {
    check_fit_input(matrix)?;
    let quad = QuadratureRule::gauss_hermite(config.quadrature_points)?;
    let logw = quad.log_weights();
    let table = PatternTable::new(matrix);
    let m = matrix.n_items();
    let n = matrix.n_rows() as f64;

    // Start from the marginal logits, inflated for a unit slope under N(0,1).
    let inflate = libm::sqrt(1.0 + core::f64::consts::PI / 8.0);
    let intercepts = (0..m)
        .map(|l| {
            let mean = matrix.rows().filter(|r| r[l] == 1).count() as f64 / n;
            logit(mean.clamp(0.02, 0.98)) * inflate
        })
        .collect();
    let mut params = TwoPlParams {
        intercepts,
        slopes: vec![1.0; m],
    };

    let mut trace: Vec<f64> = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let mut loglik;
    loop {
        let (ll, counts) = e_step(&params, &table, &quad, &logw);
        loglik = ll;
        if !ll.is_finite() {
            return Err(Error::NumericFailure { unit: 0 });
        }
        if let Some(&prev) = trace.last() {
            if (ll - prev).abs() < config.tol {
                trace.push(ll);
                converged = true;
                break;
            }
        }
        trace.push(ll);
        if iterations >= config.max_iter {
            break;
        }
        match model {
            LatentModel::TwoPl => {
                for l in 0..m {
                    let (mut b0, mut b1) = (params.intercepts[l], params.slopes[l]);
                    m_step_item(&mut b0, &mut b1, quad.nodes(), &counts.positive[l], &counts.expected);
                    params.intercepts[l] = b0;
                    params.slopes[l] = b1;
                }
            }
            LatentModel::Rasch => m_step_rasch(&mut params, quad.nodes(), &counts),
        }
        iterations += 1;
    }

    let pattern_scores: Vec<f64> = table
        .patterns
        .iter()
        .map(|p| score_pattern(&params, p, &quad, config.scoring))
        .collect();
    let theta = table.row_pattern.iter().map(|&p| pattern_scores[p]).collect();
    Ok(LatentFit {
        params,
        theta,
        loglik,
        iterations,
        converged,
        loglik_trace: trace,
        quadrature: quad,
        scoring: config.scoring,
    })
}

/// Fits the 2PL model (or the Rasch model when `config.model` says so).
pub fn fit_2pl_em(matrix: &ItemResponseMatrix, config: &FitConfig) -> Result<LatentFit> {
    fit_em(matrix, config, config.model)
}

/// Fits the Rasch model: all slopes constrained to one shared value.
pub fn fit_rasch(matrix: &ItemResponseMatrix, config: &FitConfig) -> Result<LatentFit> {
    fit_em(matrix, config, LatentModel::Rasch)
}

pub fn score_pattern(params: &TwoPlParams, pattern: &[u8], quad: &QuadratureRule, scoring: Scoring) -> f64 {
    match scoring {
        Scoring::Mode => posterior_theta(params, pattern, quad),
        Scoring::Mean => posterior_mean(params, pattern, quad),
    }
}

fn log_posterior(params: &TwoPlParams, pattern: &[u8], theta: f64) -> f64 {
    params.pattern_log_likelihood(pattern, theta) - 0.5 * theta * theta
}

/// Posterior mode of θ given a response pattern under the N(0,1) prior.
///
/// The log-posterior is strictly concave, so damped Newton from the best
/// quadrature node converges; golden-section search over a bracket that must
/// contain the root is the fallback.
pub fn posterior_theta(params: &TwoPlParams, pattern: &[u8], quad: &QuadratureRule) -> f64 {
    let mut theta = quad
        .nodes()
        .iter()
        .copied()
        .max_by(|a, b| log_posterior(params, pattern, *a).total_cmp(&log_posterior(params, pattern, *b)))
        .unwrap_or(0.0);
    let mut value = log_posterior(params, pattern, theta);
    let mut ok = value.is_finite();
    for _ in 0..100 {
        if !ok {
            break;
        }
        let (mut grad, mut curv) = (-theta, -1.0);
        for (l, &x) in pattern.iter().enumerate() {
            let q = params.prob(l, theta);
            grad += params.slopes[l] * (f64::from(x) - q);
            curv -= params.slopes[l] * params.slopes[l] * q * (1.0 - q);
        }
        let step = -grad / curv;
        if !step.is_finite() {
            ok = false;
            break;
        }
        let mut scale = 1.0;
        let mut moved = false;
        for _ in 0..50 {
            let trial = theta + scale * step;
            let v = log_posterior(params, pattern, trial);
            if v >= value {
                theta = trial;
                value = v;
                moved = true;
                break;
            }
            scale *= 0.5;
        }
        if !moved || (scale * step).abs() < 1e-12 {
            break;
        }
    }
    if ok && theta.is_finite() {
        return theta;
    }
    // The root of the score lies within ±Σ|β_l1|.
    let bound = params.slopes.iter().map(|b| b.abs()).sum::<f64>() + 1.0;
    golden_section_max(|t| log_posterior(params, pattern, t), -bound, bound, 1e-10)
}

/// Posterior mean of θ by quadrature.
pub fn posterior_mean(params: &TwoPlParams, pattern: &[u8], quad: &QuadratureRule) -> f64 {
    let terms: Vec<f64> = quad
        .nodes()
        .iter()
        .zip(quad.weights())
        .map(|(&t, &w)| libm::log(w) + params.pattern_log_likelihood(pattern, t))
        .collect();
    let lse = log_sum_exp(&terms);
    quad.nodes()
        .iter()
        .zip(&terms)
        .map(|(&t, &a)| t * libm::exp(a - lse))
        .sum()
}

fn golden_section_max<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    let ratio = (libm::sqrt(5.0) - 1.0) / 2.0;
    let mut c = hi - ratio * (hi - lo);
    let mut d = lo + ratio * (hi - lo);
    let (mut fc, mut fd) = (f(c), f(d));
    while hi - lo > tol {
        if fc > fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - ratio * (hi - lo);
            fc = f(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + ratio * (hi - lo);
            fd = f(d);
        }
    }
    0.5 * (lo + hi)
}
