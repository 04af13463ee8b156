//! Point estimators of an item total.

use alloc::vec::Vec;

use crate::data::SurveySample;
use crate::error::{Error, Result};
use crate::math::compensated_sum;

/// Design, unit-response and item-response weights.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightSet {
    /// `1/π_k`
    pub w1: Vec<f64>,
    /// `1/(π_k p_k)`
    pub w2: Vec<f64>,
    /// `1/(π_k p_k q_kj)`
    pub w3: Vec<f64>,
}

fn check_prob(unit: usize, value: f64) -> Result<()> {
    if value > 0.0 && value <= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidProbability { unit, value })
    }
}

pub fn build_weights(pi: &[f64], p: &[f64], q: &[f64]) -> Result<WeightSet> {
    if p.len() != pi.len() || q.len() != pi.len() {
        return Err(Error::InvalidInput("weight inputs have different lengths".into()));
    }
    let mut out = WeightSet {
        w1: Vec::with_capacity(pi.len()),
        w2: Vec::with_capacity(pi.len()),
        w3: Vec::with_capacity(pi.len()),
    };
    for k in 0..pi.len() {
        check_prob(k, pi[k])?;
        check_prob(k, p[k])?;
        check_prob(k, q[k])?;
        let w1 = 1.0 / pi[k];
        let w2 = w1 / p[k];
        out.w1.push(w1);
        out.w2.push(w2);
        out.w3.push(w2 / q[k]);
    }
    Ok(out)
}

/// Horvitz–Thompson total `Σ_s y_kj / π_k`. Every sampled value must be present.
pub fn ht_estimator(sample: &SurveySample, item: usize) -> Result<f64> {
    sample.check_item(item)?;
    let mut terms = Vec::with_capacity(sample.len());
    for k in 0..sample.len() {
        let y = sample
            .value(k, item)
            .ok_or_else(|| Error::InvalidInput("Horvitz–Thompson needs the full sample".into()))?;
        terms.push(y / sample.pi()[k]);
    }
    Ok(compensated_sum(terms))
}

/// Item respondents' design-weighted mean scaled to the population size.
pub fn naive_estimator(sample: &SurveySample, item: usize) -> Result<f64> {
    sample.check_item(item)?;
    let (mut num, mut den) = (Vec::new(), Vec::new());
    for k in 0..sample.len() {
        if let Some(y) = sample.value(k, item) {
            if sample.is_respondent(k) {
                num.push(y / sample.pi()[k]);
                den.push(1.0 / sample.pi()[k]);
            }
        }
    }
    if den.is_empty() {
        return Err(Error::EmptyItemRespondents { item });
    }
    Ok(sample.population_size() as f64 * compensated_sum(num) / compensated_sum(den))
}

/// `Σ_{r_j} y_kj / (π_k p_k q_kj)`. `p` and `q_item` are indexed by sample
/// position; only item respondents' entries are read.
pub fn three_phase_estimator(sample: &SurveySample, item: usize, p: &[f64], q_item: &[f64]) -> Result<f64> {
    sample.check_item(item)?;
    if p.len() != sample.len() || q_item.len() != sample.len() {
        return Err(Error::InvalidInput("probability vectors must match the sample".into()));
    }
    let mut terms = Vec::new();
    for k in 0..sample.len() {
        if let Some(y) = sample.value(k, item) {
            if sample.is_respondent(k) {
                check_prob(k, p[k])?;
                check_prob(k, q_item[k])?;
                terms.push(y / (sample.pi()[k] * p[k] * q_item[k]));
            }
        }
    }
    if terms.is_empty() {
        return Err(Error::EmptyItemRespondents { item });
    }
    Ok(compensated_sum(terms))
}
