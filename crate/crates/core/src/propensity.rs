//! Response propensities from the latent trait.
//!
//! Stage I fits the latent trait model on the unit respondents plus one
//! all-zero "phantom" row and gives every unit nonrespondent the phantom's
//! score. Stage II regresses the unit-response indicator on those scores.

use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::data::{ItemResponseMatrix, SurveySample, MIN_ITEMS};
use crate::error::{Error, Result};
use crate::irt::{fit_2pl_em, FitConfig, LatentFit, TwoPlParams};
use crate::logistic::{design_with_intercept, fit_logistic, separated_1d, IrlsConfig};
use crate::math::logistic;

/// Reserved unit id of the phantom respondent.
pub const PHANTOM_ID: u64 = u64::MAX;

/// Iteration budget multiplier for Firth-penalized fits.
pub const FIRTH_ITERATION_FACTOR: usize = 10;

/// Largest probability handed to reweighting; keeps `1 − p` representable.
pub const MAX_PROB: f64 = 1.0 - f64::EPSILON;

/// Appends the all-zero phantom row.
pub fn augment_phantom(matrix: &ItemResponseMatrix) -> Result<ItemResponseMatrix> {
    if matrix.unit_ids().contains(&PHANTOM_ID) {
        return Err(Error::PhantomPresent);
    }
    let mut out = matrix.clone();
    out.push_row(PHANTOM_ID, &alloc::vec![0; matrix.n_items()]);
    Ok(out)
}

/// Stage I output.
#[derive(Debug, Clone, PartialEq)]
pub struct StageOne {
    /// `θ̂_k` for every sampled unit, in sample order.
    pub theta: Vec<f64>,
    pub phantom_theta: f64,
    /// Fit on the respondents followed by the phantom row.
    pub fit: LatentFit,
    /// Sample positions of the fitted respondent rows (phantom excluded).
    pub respondent_rows: Vec<usize>,
}

impl StageOne {
    /// `q̂_kj` for sample unit `k`.
    pub fn item_prob(&self, k: usize, item: usize, q_min: f64) -> f64 {
        item_response_prob_hat(&self.fit.params, self.theta[k], item, q_min)
    }
}

/// Scores every sampled unit. `matrix` holds the indicators of the whole
/// sample, aligned with `sample`.
pub fn estimate_thetas_stage1(sample: &SurveySample, matrix: &ItemResponseMatrix, config: &FitConfig) -> Result<StageOne> {
    if matrix.n_rows() != sample.len() || matrix.n_items() != sample.n_items() {
        return Err(Error::InvalidInput("indicator matrix does not match the sample".into()));
    }
    if matrix.n_items() < MIN_ITEMS {
        return Err(Error::TooFewItems {
            required: MIN_ITEMS,
            found: matrix.n_items(),
        });
    }
    let respondent_rows: Vec<usize> = (0..sample.len()).filter(|&k| sample.is_respondent(k)).collect();
    if respondent_rows.is_empty() {
        return Err(Error::NoRespondents);
    }
    let augmented = augment_phantom(&matrix.select_rows(&respondent_rows))?;
    let fit = fit_2pl_em(&augmented, config)?;
    let phantom_theta = *fit.theta.last().expect("augmented fit has rows");
    let mut theta = alloc::vec![phantom_theta; sample.len()];
    for (i, &k) in respondent_rows.iter().enumerate() {
        theta[k] = fit.theta[i];
    }
    Ok(StageOne {
        theta,
        phantom_theta,
        fit,
        respondent_rows,
    })
}

/// What to do when the response classes are separated by the covariates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SeparationRemedy {
    /// Add seeded N(0, sd²) noise to the nonrespondents' scores.
    Jitter { sd: f64 },
    /// Firth-penalized likelihood.
    Firth,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PropensityConfig {
    pub remedy: SeparationRemedy,
    /// Seed for the jitter remedy.
    pub seed: u64,
    /// Floor on fitted unit-response probabilities.
    pub p_min: f64,
    pub tol: f64,
    pub max_iter: usize,
    /// Weight the likelihood by design weights `1/π_k` (off by default).
    pub design_weighted: bool,
    /// Switch to the Firth penalty when jitter leaves the classes separated.
    pub firth_fallback: bool,
}

impl Default for PropensityConfig {
    fn default() -> Self {
        Self {
            remedy: SeparationRemedy::Jitter { sd: 0.1 },
            seed: 0,
            p_min: 0.01,
            tol: 1e-8,
            max_iter: 100,
            design_weighted: false,
            firth_fallback: true,
        }
    }
}

/// Logistic unit-response model `p_k = logistic(α0 + α1 θ̂_k + z_k'γ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PropensityModel {
    pub alpha0: f64,
    pub alpha1: f64,
    pub gamma: Vec<f64>,
    /// `p̂_k` per unit, floored at `p_min`.
    pub fitted: Vec<f64>,
    /// Latent scores the model was fitted on (jittered where the remedy applied).
    pub covariate: Vec<f64>,
    pub separation_handled: bool,
    pub p_min: f64,
    pub iterations: usize,
}

impl PropensityModel {
    pub fn coefficients(&self) -> [f64; 2] {
        [self.alpha0, self.alpha1]
    }
}

/// Fits the unit-response logistic regression by IRLS.
pub fn fit_response_logistic(
    theta: &[f64],
    responded: &[bool],
    covariates: Option<&[Vec<f64>]>,
    design_weights: Option<&[f64]>,
    config: &PropensityConfig,
) -> Result<PropensityModel> {
    let n = theta.len();
    if responded.len() != n || covariates.is_some_and(|c| c.len() != n) || design_weights.is_some_and(|w| w.len() != n) {
        return Err(Error::InvalidInput("propensity inputs have different lengths".into()));
    }
    if theta.iter().any(|t| !t.is_finite()) {
        return Err(Error::InvalidInput("latent scores must be finite".into()));
    }
    let ones = responded.iter().filter(|&&r| r).count();
    if ones == 0 || ones == n {
        return Err(Error::SingleClass);
    }
    let weights = if config.design_weighted { design_weights } else { None };
    let response: Vec<f64> = responded.iter().map(|&r| f64::from(u8::from(r))).collect();
    let irls = IrlsConfig {
        tol: config.tol,
        max_iter: config.max_iter,
        firth: false,
    };
    let design_for = |t: &[f64]| -> Vec<Vec<f64>> {
        let mut rows = design_with_intercept(&[t]);
        if let Some(cov) = covariates {
            for (row, z) in rows.iter_mut().zip(cov) {
                row.extend_from_slice(z);
            }
        }
        rows
    };
    let is_separated = |t: &[f64]| -> Result<bool> {
        if covariates.is_none() {
            return Ok(separated_1d(t, responded));
        }
        let fit = fit_logistic(&design_for(t), &response, weights, None, &irls)?;
        Ok(!fit.converged || fit.coefficients.iter().any(|c| c.abs() > 30.0))
    };

    let mut covariate = theta.to_vec();
    let mut separation_handled = false;
    let mut cfg = irls;
    if is_separated(&covariate)? {
        separation_handled = true;
        match config.remedy {
            SeparationRemedy::Jitter { sd } => {
                let normal = Normal::new(0.0, sd).map_err(|_| Error::InvalidInput("jitter sd must be positive".into()))?;
                let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
                for (t, &r) in covariate.iter_mut().zip(responded) {
                    if !r {
                        *t += normal.sample(&mut rng);
                    }
                }
                if is_separated(&covariate)? {
                    if !config.firth_fallback {
                        return Err(Error::SeparationUnresolved);
                    }
                    covariate.copy_from_slice(theta);
                    cfg.firth = true;
                }
            }
            SeparationRemedy::Firth => cfg.firth = true,
        }
    }
    if cfg.firth {
        // The penalized modified-score iteration converges only linearly when
        // the classes are separated.
        cfg.max_iter = config.max_iter.saturating_mul(FIRTH_ITERATION_FACTOR);
    }
    let fit = fit_logistic(&design_for(&covariate), &response, weights, None, &cfg)?;
    if !fit.converged {
        return Err(Error::LogisticDiverged {
            iterations: fit.iterations,
        });
    }
    let alpha0 = fit.coefficients[0];
    let alpha1 = fit.coefficients[1];
    let gamma = fit.coefficients[2..].to_vec();
    let mut model = PropensityModel {
        alpha0,
        alpha1,
        gamma,
        fitted: Vec::new(),
        covariate,
        separation_handled,
        p_min: config.p_min,
        iterations: fit.iterations,
    };
    model.fitted = (0..n)
        .map(|k| {
            let z = covariates.map_or(&[][..], |c| &c[k][..]);
            unit_response_prob(&model, model.covariate[k], z)
        })
        .collect();
    Ok(model)
}

/// `p̂ = logistic(α0 + α1 θ + z'γ)`, clamped to `[p_min, 1)`.
pub fn unit_response_prob(model: &PropensityModel, theta: f64, covariates: &[f64]) -> f64 {
    let eta = model.alpha0
        + model.alpha1 * theta
        + model.gamma.iter().zip(covariates).map(|(g, z)| g * z).sum::<f64>();
    logistic(eta).clamp(model.p_min, MAX_PROB)
}

/// `q̂_kj = logistic(β̂_j0 + β̂_j1 θ̂_k)`, clamped to `[q_min, 1)`.
pub fn item_response_prob_hat(params: &TwoPlParams, theta: f64, item: usize, q_min: f64) -> f64 {
    params.prob(item, theta).clamp(q_min, MAX_PROB)
}
