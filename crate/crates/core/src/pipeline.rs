//! The full adjustment: indicators, latent scores, unit and item propensities,
//! point estimates and jackknife variance for one sample.

use alloc::vec;
use alloc::vec::Vec;

use crate::data::{derive_indicators, ItemResponseMatrix, SurveySample};
use crate::error::Result;
use crate::estimators::{naive_estimator, three_phase_estimator};
use crate::irt::FitConfig;
use crate::logistic::{design_with_intercept, fit_logistic, separated_1d, IrlsConfig};
use crate::math::logistic;
use crate::propensity::{estimate_thetas_stage1, fit_response_logistic, PropensityConfig, PropensityModel, StageOne};
use crate::variance::{
    confidence_interval, jackknife_replicates, replicate_variance, JackknifeInput, JackknifeOptions, ReplicateWeights,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PipelineConfig {
    pub fit: FitConfig,
    pub propensity: PropensityConfig,
    /// Floor on fitted item-response probabilities.
    pub q_min: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            fit: FitConfig::default(),
            propensity: PropensityConfig::default(),
            q_min: 0.01,
        }
    }
}

/// Fitted propensities for every sampled unit.
#[derive(Debug, Clone, PartialEq)]
pub struct Adjustment {
    /// Latent score per unit as used by the unit-response model; 0 when no
    /// latent model was needed.
    pub theta: Vec<f64>,
    /// `None` when the sample has neither unit nor item nonresponse.
    pub stage_one: Option<StageOne>,
    /// `None` when every sampled unit responded.
    pub propensity: Option<PropensityModel>,
    /// `p̂_k` (1 when there is no unit nonresponse).
    pub unit_probs: Vec<f64>,
    /// `q̂_kl` per unit and item (1 for items every respondent answered).
    pub item_probs: Vec<Vec<f64>>,
    pub indicators: ItemResponseMatrix,
}

impl Adjustment {
    /// `q̂_kj` for one item, in sample order.
    pub fn item_column(&self, item: usize) -> Vec<f64> {
        self.item_probs.iter().map(|row| row[item]).collect()
    }

    pub fn unit_start(&self) -> [f64; 2] {
        self.propensity.as_ref().map_or([0.0, 0.0], PropensityModel::coefficients)
    }

    /// Logistic regression of the item's response indicator on the latent
    /// score over unit respondents; `None` when it has no finite solution.
    pub fn item_logistic(&self, sample: &SurveySample, item: usize) -> Option<[f64; 2]> {
        let stage = self.stage_one.as_ref()?;
        let resp = &stage.respondent_rows;
        let theta: Vec<f64> = resp.iter().map(|&k| self.theta[k]).collect();
        let answered: Vec<bool> = resp.iter().map(|&k| sample.value(k, item).is_some()).collect();
        if separated_1d(&theta, &answered) {
            return None;
        }
        let y: Vec<f64> = answered.iter().map(|&a| f64::from(u8::from(a))).collect();
        let fit = fit_logistic(&design_with_intercept(&[&theta]), &y, None, None, &IrlsConfig::default()).ok()?;
        fit.converged.then(|| [fit.coefficients[0], fit.coefficients[1]])
    }
}

/// Runs Stage I and Stage II and evaluates `p̂` and `q̂` for every unit.
pub fn adjust(sample: &SurveySample, config: &PipelineConfig) -> Result<Adjustment> {
    let n = sample.len();
    let m = sample.n_items();
    let indicators = derive_indicators(sample)?;
    let partition = sample.partition();
    if partition.respondents.is_empty() {
        return Err(crate::error::Error::NoRespondents);
    }
    let unit_nonresponse = partition.respondents.len() < n;
    let item_complete: Vec<bool> = partition
        .item_respondents
        .iter()
        .map(|r| r.len() == partition.respondents.len())
        .collect();
    let any_item_nonresponse = item_complete.iter().any(|c| !c);

    let stage_one = if unit_nonresponse || any_item_nonresponse {
        Some(estimate_thetas_stage1(sample, &indicators, &config.fit)?)
    } else {
        None
    };
    let theta = stage_one.as_ref().map_or_else(|| vec![0.0; n], |s| s.theta.clone());

    let (propensity, unit_probs, theta) = if unit_nonresponse {
        let model = fit_response_logistic(&theta, sample.respondent(), None, None, &config.propensity)?;
        let probs = model.fitted.clone();
        let used = model.covariate.clone();
        (Some(model), probs, used)
    } else {
        (None, vec![1.0; n], theta)
    };

    let item_probs = (0..n)
        .map(|k| {
            (0..m)
                .map(|l| match &stage_one {
                    Some(s) if !item_complete[l] => s.item_prob(k, l, config.q_min),
                    _ => 1.0,
                })
                .collect()
        })
        .collect();
    Ok(Adjustment {
        theta,
        stage_one,
        propensity,
        unit_probs,
        item_probs,
        indicators,
    })
}

/// Point estimates of one item total.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimates {
    /// Only available when every sampled unit reported the item.
    pub ht: Option<f64>,
    pub naive: f64,
    pub three_phase: f64,
}

pub fn estimate(sample: &SurveySample, adjustment: &Adjustment, item: usize) -> Result<Estimates> {
    let ht = crate::estimators::ht_estimator(sample, item).ok();
    Ok(Estimates {
        ht,
        naive: naive_estimator(sample, item)?,
        three_phase: three_phase_estimator(sample, item, &adjustment.unit_probs, &adjustment.item_column(item))?,
    })
}

/// Jackknife variance of the three-phase estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct VarianceEstimate {
    /// Three-phase estimate with the fitted propensities.
    pub estimate: f64,
    /// Same total with full-sample calibrated weights; the replicates are
    /// centred here.
    pub calibrated_estimate: f64,
    pub variance: f64,
    pub interval: (f64, f64),
    pub replicates: ReplicateWeights,
}

pub fn jackknife_variance(
    sample: &SurveySample,
    adjustment: &Adjustment,
    item: usize,
    level: f64,
    options: &JackknifeOptions,
) -> Result<VarianceEstimate> {
    let item_probs = adjustment.item_column(item);
    let estimate = three_phase_estimator(sample, item, &adjustment.unit_probs, &item_probs)?;
    // The replicates re-derive both propensities from logistic score
    // equations, so the calibration variables use the unclamped unit model
    // and a logistic item model on the same scores.
    let n = sample.len();
    let model_unit: Vec<f64> = match &adjustment.propensity {
        Some(model) => adjustment
            .theta
            .iter()
            .map(|&t| logistic(model.alpha0 + model.alpha1 * t))
            .collect(),
        None => vec![1.0; n],
    };
    let item_fit = adjustment.item_logistic(sample, item);
    let model_item: Vec<f64> = match item_fit {
        Some([b0, b1]) if item_probs.iter().any(|&q| q < 1.0) => {
            adjustment.theta.iter().map(|&t| logistic(b0 + b1 * t)).collect()
        }
        _ => item_probs.clone(),
    };
    let item_start = item_fit.unwrap_or_else(|| {
        adjustment
            .stage_one
            .as_ref()
            .map_or([0.0, 0.0], |s| [s.fit.params.intercepts[item], s.fit.params.slopes[item]])
    });
    let input = JackknifeInput {
        sample,
        item,
        theta: &adjustment.theta,
        unit_probs: &model_unit,
        item_probs: &model_item,
        point_unit_probs: &adjustment.unit_probs,
        point_item_probs: &item_probs,
        unit_start: adjustment.unit_start(),
        item_start,
    };
    let replicates = jackknife_replicates(&input, options)?;
    let y = sample.item_values(item);
    let centre = replicates.full_estimate(&y);
    let variance = replicate_variance(&replicates, &y, centre);
    let interval = confidence_interval(estimate, variance, level)?;
    Ok(VarianceEstimate {
        estimate,
        calibrated_estimate: centre,
        variance,
        interval,
        replicates,
    })
}
