//! Delete-one jackknife variance for the three-phase estimator.
//!
//! Each replicate re-derives the unit-response and item-response adjustments
//! by generalized calibration with the logistic distance
//! `F(u) = 1 + exp(−u)`, so the replicate weights carry the variability of the
//! estimated propensities.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::data::SurveySample;
use crate::error::{Error, Result};
use crate::math::{compensated_sum, normal_quantile};

/// `F(u) = 1 + exp(−u)`, the inverse of the logistic function.
pub fn logistic_distance(u: f64) -> f64 {
    1.0 + libm::exp(-u)
}

/// Calibration problem `Σ_k d_k F(x_k·α) z_k = target`.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationSpec {
    pub base_weights: Vec<f64>,
    /// Rows `x_k` entering the distance function.
    pub covariates: Vec<Vec<f64>>,
    /// Calibration variables `z_k`.
    pub z: Vec<Vec<f64>>,
    pub target: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationOptions {
    /// Convergence threshold on the Euclidean norm of the residual.
    pub tol: f64,
    pub max_iter: usize,
    /// Reciprocal condition number below which the Jacobian counts as singular.
    pub min_rcond: f64,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 200,
            min_rcond: 1e-13,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub coefficients: Vec<f64>,
    /// `d_k F(x_k·α)`.
    pub weights: Vec<f64>,
    pub residual_norm: f64,
    pub iterations: usize,
}

impl CalibrationSpec {
    fn validate(&self) -> Result<usize> {
        let n = self.base_weights.len();
        let dim = self.target.len();
        if self.covariates.len() != n || self.z.len() != n {
            return Err(Error::InvalidInput("calibration inputs have different lengths".into()));
        }
        if dim == 0 || self.covariates.iter().chain(&self.z).any(|r| r.len() != dim) {
            return Err(Error::InvalidInput("calibration vectors must match the target dimension".into()));
        }
        Ok(dim)
    }

    fn weights_at(&self, alpha: &[f64]) -> Vec<f64> {
        self.base_weights
            .iter()
            .zip(&self.covariates)
            .map(|(&d, x)| d * logistic_distance(dot(x, alpha)))
            .collect()
    }

    fn residual(&self, weights: &[f64]) -> DVector<f64> {
        DVector::from_fn(self.target.len(), |i, _| {
            let terms = weights.iter().zip(&self.z).map(|(w, z)| w * z[i]);
            compensated_sum(terms.chain(core::iter::once(-self.target[i])))
        })
    }

    /// `c_k` with `z_k = c_k x_k` for every unit, when such scalars exist.
    fn proportional_scales(&self) -> Option<Vec<f64>> {
        self.z
            .iter()
            .zip(&self.covariates)
            .map(|(z, x)| {
                let (i, &xi) = x.iter().enumerate().find(|(_, v)| v.abs() > 0.0)?;
                let c = z[i] / xi;
                let close = z.iter().zip(x).all(|(zv, xv)| (zv - c * xv).abs() <= 1e-12 * (zv.abs() + 1.0));
                close.then_some(c)
            })
            .collect()
    }

    /// Concave potential whose gradient is the residual when `z_k = c_k x_k`:
    /// `Σ_k d_k c_k (x_k·α − exp(−x_k·α)) − target·α`.
    fn potential(&self, scales: &[f64], alpha: &[f64]) -> f64 {
        let terms = self
            .base_weights
            .iter()
            .zip(&self.covariates)
            .zip(scales)
            .map(|((&d, x), &c)| {
                let u = dot(x, alpha);
                d * c * (u - libm::exp(-u))
            });
        compensated_sum(terms.chain(core::iter::once(-dot(&self.target, alpha))))
    }

    fn jacobian(&self, alpha: &[f64]) -> DMatrix<f64> {
        let dim = self.target.len();
        let mut jac = DMatrix::zeros(dim, dim);
        for ((&d, x), z) in self.base_weights.iter().zip(&self.covariates).zip(&self.z) {
            let dfu = -d * libm::exp(-dot(x, alpha));
            for i in 0..dim {
                for j in 0..dim {
                    jac[(i, j)] += dfu * z[i] * x[j];
                }
            }
        }
        jac
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(v: &DVector<f64>) -> f64 {
    let n = v.norm();
    if n.is_finite() {
        n
    } else {
        f64::INFINITY
    }
}

/// Solves the calibration equations by damped Newton iteration from `start`.
pub fn gencalib_solve(spec: &CalibrationSpec, start: &[f64], options: &CalibrationOptions) -> Result<Calibration> {
    let dim = spec.validate()?;
    if start.len() != dim {
        return Err(Error::InvalidInput("calibration start has the wrong dimension".into()));
    }
    let scales = spec.proportional_scales().filter(|c| c.iter().all(|&v| v > 0.0));
    let mut alpha = start.to_vec();
    let mut weights = spec.weights_at(&alpha);
    let mut resid = spec.residual(&weights);
    let mut rnorm = norm(&resid);
    for iteration in 0..options.max_iter {
        if rnorm < options.tol {
            return Ok(Calibration {
                coefficients: alpha,
                weights,
                residual_norm: rnorm,
                iterations: iteration,
            });
        }
        let jac = spec.jacobian(&alpha);
        let sv = jac.clone().singular_values();
        let smax = sv.max();
        let smin = sv.min();
        if !(smax.is_finite() && smin > options.min_rcond * smax) {
            let condition = if smin > 0.0 { smax / smin } else { f64::INFINITY };
            // A singular start is a structural problem; later on it means the
            // iterate ran off towards an infeasible solution.
            if iteration == 0 {
                return Err(Error::SingularJacobian { condition });
            }
            return Err(Error::CalibrationDiverged {
                iterations: iteration,
                residual: rnorm,
            });
        }
        let Some(step) = jac.lu().solve(&(-&resid)) else {
            return Err(Error::SingularJacobian {
                condition: f64::INFINITY,
            });
        };
        // With proportional calibration variables the equations are the
        // stationarity conditions of a concave potential, which gives a merit
        // function that cannot stall short of a solution that exists.
        let merit_now = match &scales {
            Some(c) => -spec.potential(c, &alpha),
            None => rnorm,
        };
        // Decrease rate of the potential merit along the Newton direction.
        let slope: f64 = resid.iter().zip(step.iter()).map(|(r, d)| r * d).sum();
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let trial: Vec<f64> = alpha.iter().zip(step.iter()).map(|(a, s)| a + scale * s).collect();
            let trial_w = spec.weights_at(&trial);
            let trial_r = spec.residual(&trial_w);
            let trial_norm = norm(&trial_r);
            let improved = match &scales {
                Some(c) => {
                    let m = -spec.potential(c, &trial);
                    // Near the root the potential is flat to rounding, so a
                    // smaller residual is accepted as well.
                    trial_norm.is_finite() && (m <= merit_now - 1e-4 * scale * slope.max(0.0) || trial_norm < rnorm)
                }
                None => trial_norm < rnorm,
            };
            if improved {
                alpha = trial;
                weights = trial_w;
                resid = trial_r;
                rnorm = trial_norm;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if !accepted {
            return Err(Error::CalibrationDiverged {
                iterations: iteration + 1,
                residual: rnorm,
            });
        }
    }
    if rnorm < options.tol {
        return Ok(Calibration {
            coefficients: alpha,
            weights,
            residual_norm: rnorm,
            iterations: options.max_iter,
        });
    }
    Err(Error::CalibrationDiverged {
        iterations: options.max_iter,
        residual: rnorm,
    })
}

/// Everything the replicates need about the fitted adjustment for one item.
#[derive(Debug, Clone, Copy)]
pub struct JackknifeInput<'a> {
    pub sample: &'a SurveySample,
    pub item: usize,
    /// Latent score per unit used in both calibration steps.
    pub theta: &'a [f64],
    /// Unit-response model probabilities entering `z_1k` (all 1 when there is
    /// no unit nonresponse).
    pub unit_probs: &'a [f64],
    /// Item-response model probabilities entering `z_2k` (all 1 when every
    /// respondent answered the item).
    pub item_probs: &'a [f64],
    /// `p̂_k` used by the point estimate; applied unchanged when the unit
    /// phase cannot be recalibrated.
    pub point_unit_probs: &'a [f64],
    /// `q̂_kj` used by the point estimate; applied unchanged when the item
    /// phase cannot be recalibrated.
    pub point_item_probs: &'a [f64],
    /// Unit-response coefficients used as Newton start.
    pub unit_start: [f64; 2],
    /// Item-response coefficients used as Newton start.
    pub item_start: [f64; 2],
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JackknifeOptions {
    pub calibration: CalibrationOptions,
    /// Largest tolerated fraction of failed replicates.
    pub max_failure_rate: f64,
    /// When a phase's full-sample calibration has no solution (separated
    /// response classes), hold its fitted probabilities fixed across
    /// replicates instead of failing.
    pub fix_infeasible_phases: bool,
}

impl Default for JackknifeOptions {
    fn default() -> Self {
        Self {
            calibration: CalibrationOptions::default(),
            max_failure_rate: 0.05,
            fix_infeasible_phases: true,
        }
    }
}

/// How a response phase is reproduced in the replicates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhaseTreatment {
    /// No nonresponse in this phase.
    Unadjusted,
    /// Recalibrated in every replicate.
    Calibrated,
    /// Fitted probabilities held fixed because calibration was infeasible.
    Fixed,
}

/// Replicate weights for the successful delete-one replicates.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateWeights {
    /// Sample position deleted by each successful replicate.
    pub deleted: Vec<usize>,
    /// Variance factor `c_l`, inflated by `L / L_ok` when replicates failed.
    pub factors: Vec<f64>,
    /// Final weights `w3^(l)` for every sample unit (zero outside `r_j`).
    pub weights: Vec<Vec<f64>>,
    /// Sample positions of the failed replicates.
    pub failed: Vec<usize>,
    /// Why each failed replicate failed.
    pub failures: Vec<Error>,
    /// Largest calibration residual norm over the full-sample and the
    /// successful replicate calibrations.
    pub max_residual: f64,
    /// Full-sample calibrated weights; their estimate centres the replicates.
    pub full_weights: Vec<f64>,
    pub unit_phase: PhaseTreatment,
    pub item_phase: PhaseTreatment,
}

impl ReplicateWeights {
    /// `Σ_k w3_k y_k` with the full-sample calibrated weights.
    pub fn full_estimate(&self, y: &[Option<f64>]) -> f64 {
        compensated_sum(self.full_weights.iter().zip(y).map(|(w, v)| w * v.unwrap_or(0.0)))
    }
}

/// Builds delete-one replicate weights, recalibrating both response phases
/// in each replicate. A phase with no nonresponse is left unadjusted.
pub fn jackknife_replicates(input: &JackknifeInput<'_>, options: &JackknifeOptions) -> Result<ReplicateWeights> {
    let sample = input.sample;
    let n = sample.len();
    sample.check_item(input.item)?;
    let lengths = [
        input.theta.len(),
        input.unit_probs.len(),
        input.item_probs.len(),
        input.point_unit_probs.len(),
        input.point_item_probs.len(),
    ];
    if lengths.iter().any(|&len| len != n) {
        return Err(Error::InvalidInput("jackknife inputs must match the sample".into()));
    }
    if n < 2 {
        return Err(Error::InvalidInput("jackknife needs at least two units".into()));
    }
    let resp: Vec<usize> = (0..n).filter(|&k| sample.is_respondent(k)).collect();
    let item_resp: Vec<usize> = resp
        .iter()
        .copied()
        .filter(|&k| sample.value(k, input.item).is_some())
        .collect();
    if item_resp.is_empty() {
        return Err(Error::EmptyItemRespondents { item: input.item });
    }
    let treatment = |adjusted: bool| {
        if adjusted {
            PhaseTreatment::Calibrated
        } else {
            PhaseTreatment::Unadjusted
        }
    };
    let mut phases = Phases {
        n,
        resp: &resp,
        item_resp: &item_resp,
        unit_mode: treatment(resp.len() < n),
        item_mode: treatment(item_resp.len() < resp.len()),
        x: input.theta.iter().map(|&t| [1.0, t]).collect(),
        z1: (0..n)
            .map(|k| {
                let s = sample.pi()[k] * input.unit_probs[k];
                [s, s * input.theta[k]]
            })
            .collect(),
        z2: (0..n)
            .map(|k| {
                let s = sample.pi()[k] * input.unit_probs[k] * input.item_probs[k];
                [s, s * input.theta[k]]
            })
            .collect(),
        point_unit: input.point_unit_probs,
        point_item: input.point_item_probs,
        options: &options.calibration,
    };
    let nf = n as f64;

    // The full-sample calibration fixes the centre of the replicates and
    // gives every replicate a starting point one unit away from its solution.
    let full_w1: Vec<f64> = sample.pi().iter().map(|p| 1.0 / p).collect();
    let unit = match phases.unit(&full_w1, input.unit_start) {
        Err(_) if options.fix_infeasible_phases => {
            phases.unit_mode = PhaseTreatment::Fixed;
            phases.unit(&full_w1, input.unit_start)?
        }
        other => other?,
    };
    let item = match phases.item(&unit.weights, input.item_start) {
        Err(_) if options.fix_infeasible_phases => {
            phases.item_mode = PhaseTreatment::Fixed;
            phases.item(&unit.weights, input.item_start)?
        }
        other => other?,
    };

    let mut out = ReplicateWeights {
        deleted: Vec::new(),
        factors: Vec::new(),
        weights: Vec::new(),
        failed: Vec::new(),
        failures: Vec::new(),
        max_residual: unit.residual.max(item.residual),
        full_weights: item.weights,
        unit_phase: phases.unit_mode,
        item_phase: phases.item_mode,
    };
    for l in 0..n {
        let w1: Vec<f64> = (0..n)
            .map(|k| if k == l { 0.0 } else { nf / ((nf - 1.0) * sample.pi()[k]) })
            .collect();
        let replicate = phases
            .unit(&w1, unit.coef)
            .and_then(|u| phases.item(&u.weights, item.coef).map(|i| (i.weights, u.residual.max(i.residual))));
        match replicate {
            Ok((w3, residual)) => {
                out.max_residual = out.max_residual.max(residual);
                out.deleted.push(l);
                out.weights.push(w3);
            }
            Err(e) => {
                out.failed.push(l);
                out.failures.push(e);
            }
        }
    }
    if out.failed.len() as f64 > options.max_failure_rate * nf {
        return Err(Error::TooManyFailures {
            failed: out.failed.len(),
            total: n,
        });
    }
    let ok = out.deleted.len();
    let c = (nf - 1.0) / nf * nf / ok as f64;
    out.factors = vec![c; ok];
    Ok(out)
}

struct Phases<'a> {
    n: usize,
    resp: &'a [usize],
    item_resp: &'a [usize],
    unit_mode: PhaseTreatment,
    item_mode: PhaseTreatment,
    x: Vec<[f64; 2]>,
    z1: Vec<[f64; 2]>,
    z2: Vec<[f64; 2]>,
    point_unit: &'a [f64],
    point_item: &'a [f64],
    options: &'a CalibrationOptions,
}

struct PhaseSolution {
    weights: Vec<f64>,
    residual: f64,
    coef: [f64; 2],
}

impl Phases<'_> {
    fn calibrate(
        &self,
        subset: &[usize],
        base: &[f64],
        z: &[[f64; 2]],
        target: Vec<f64>,
        start: [f64; 2],
    ) -> Result<PhaseSolution> {
        let spec = CalibrationSpec {
            base_weights: subset.iter().map(|&k| base[k]).collect(),
            covariates: subset.iter().map(|&k| self.x[k].to_vec()).collect(),
            z: subset.iter().map(|&k| z[k].to_vec()).collect(),
            target,
        };
        let cal = gencalib_solve(&spec, &start, self.options)?;
        let mut weights = vec![0.0; self.n];
        for (&k, &w) in subset.iter().zip(&cal.weights) {
            weights[k] = w;
        }
        Ok(PhaseSolution {
            weights,
            residual: cal.residual_norm,
            coef: [cal.coefficients[0], cal.coefficients[1]],
        })
    }

    fn passthrough(&self, subset: &[usize], base: &[f64], probs: Option<&[f64]>, start: [f64; 2]) -> PhaseSolution {
        let mut weights = vec![0.0; self.n];
        for &k in subset {
            weights[k] = probs.map_or(base[k], |p| base[k] / p[k]);
        }
        PhaseSolution {
            weights,
            residual: 0.0,
            coef: start,
        }
    }

    /// Phase-two weights from first-phase weights `w1`.
    fn unit(&self, w1: &[f64], start: [f64; 2]) -> Result<PhaseSolution> {
        match self.unit_mode {
            PhaseTreatment::Unadjusted => Ok(self.passthrough(self.resp, w1, None, start)),
            PhaseTreatment::Fixed => Ok(self.passthrough(self.resp, w1, Some(self.point_unit), start)),
            PhaseTreatment::Calibrated => {
                let target = (0..2)
                    .map(|i| compensated_sum((0..self.n).map(|k| w1[k] * self.z1[k][i])))
                    .collect();
                self.calibrate(self.resp, w1, &self.z1, target, start)
            }
        }
    }

    /// Phase-three weights from phase-two weights `w2`.
    fn item(&self, w2: &[f64], start: [f64; 2]) -> Result<PhaseSolution> {
        match self.item_mode {
            PhaseTreatment::Unadjusted => Ok(self.passthrough(self.item_resp, w2, None, start)),
            PhaseTreatment::Fixed => Ok(self.passthrough(self.item_resp, w2, Some(self.point_item), start)),
            PhaseTreatment::Calibrated => {
                let target = (0..2)
                    .map(|i| compensated_sum(self.resp.iter().map(|&k| w2[k] * self.z2[k][i])))
                    .collect();
                self.calibrate(self.item_resp, w2, &self.z2, target, start)
            }
        }
    }
}

/// `Ŷ^(l) = Σ_k w3_k^(l) y_k` for each replicate; missing values count as 0
/// and only carry zero weight anyway.
pub fn replicate_estimates(replicates: &ReplicateWeights, y: &[Option<f64>]) -> Vec<f64> {
    replicates
        .weights
        .iter()
        .map(|w| compensated_sum(w.iter().zip(y).map(|(wk, yk)| wk * yk.unwrap_or(0.0))))
        .collect()
}

/// `V̂ = Σ_l c_l (Ŷ^(l) − Ŷ)²`.
pub fn replicate_variance(replicates: &ReplicateWeights, y: &[Option<f64>], estimate: f64) -> f64 {
    let est = replicate_estimates(replicates, y);
    compensated_sum(
        est.iter()
            .zip(&replicates.factors)
            .map(|(e, c)| c * (e - estimate) * (e - estimate)),
    )
}

/// Normal-theory interval `Ŷ ± z·√V̂` at confidence `level`.
pub fn confidence_interval(estimate: f64, variance: f64, level: f64) -> Result<(f64, f64)> {
    if level.is_nan() || level <= 0.0 || level >= 1.0 || variance.is_nan() || variance < 0.0 {
        return Err(Error::InvalidInput("confidence level must lie in (0,1) and variance be nonnegative".into()));
    }
    let half = normal_quantile(0.5 + level / 2.0) * libm::sqrt(variance);
    Ok((estimate - half, estimate + half))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn distance_inverts_logistic() {
        for u in [-3.0, 0.0, 2.5] {
            assert!((logistic_distance(u) * crate::math::logistic(u) - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn solves_a_small_system() {
        let theta = [-1.0, -0.2, 0.4, 1.3];
        let spec = CalibrationSpec {
            base_weights: vec![1.0; 4],
            covariates: theta.iter().map(|&t| vec![1.0, t]).collect(),
            z: theta.iter().map(|&t| vec![1.0, t]).collect(),
            target: vec![7.0, 1.5],
        };
        let cal = gencalib_solve(&spec, &[0.0, 0.0], &CalibrationOptions::default()).unwrap();
        assert!(cal.residual_norm < 1e-8);
        let total: f64 = cal.weights.iter().sum();
        assert!((total - 7.0).abs() < 1e-8);
    }

    #[test]
    fn infeasible_target_does_not_converge() {
        // F > 1, so the weights can never total less than the base weights.
        let spec = CalibrationSpec {
            base_weights: vec![1.0; 3],
            covariates: vec![vec![1.0, 0.0], vec![1.0, 1.0], vec![1.0, 2.0]],
            z: vec![vec![1.0, 0.0], vec![1.0, 1.0], vec![1.0, 2.0]],
            target: vec![2.0, 2.0],
        };
        let err = gencalib_solve(&spec, &[0.0, 0.0], &CalibrationOptions::default()).unwrap_err();
        assert!(matches!(err, Error::CalibrationDiverged { .. }), "{err:?}");
    }

    #[test]
    fn collinear_calibration_is_singular() {
        let spec = CalibrationSpec {
            base_weights: vec![1.0; 3],
            covariates: vec![vec![1.0, 1.0]; 3],
            z: vec![vec![1.0, 1.0]; 3],
            target: vec![4.0, 4.0],
        };
        let err = gencalib_solve(&spec, &[0.0, 0.0], &CalibrationOptions::default()).unwrap_err();
        assert!(matches!(err, Error::SingularJacobian { .. }));
    }

    #[test]
    fn interval_uses_normal_quantile() {
        let (lo, hi) = confidence_interval(10.0, 4.0, 0.95).unwrap();
        assert!((hi - 10.0 - 1.96 * 2.0).abs() < 1e-3);
        assert!((10.0 - lo - (hi - 10.0)).abs() < 1e-12);
    }
}
