//! Finite populations with a known nonignorable response mechanism and a
//! Monte Carlo driver measuring the estimators against the true total.

use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;
use rand::seq::index;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::data::{ItemResponseMatrix, SurveySample};
use crate::error::{Error, Result};
use crate::estimators::{naive_estimator, three_phase_estimator};
use crate::irt::{fit_2pl_em, FitConfig};
use crate::math::{compensated_sum, logistic};
use crate::pipeline::{adjust, jackknife_variance, PipelineConfig};
use crate::variance::JackknifeOptions;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Setting {
    /// Real binary items; the response mechanism is built on their 2PL scores.
    Abortion,
    /// Correlated normal items and latent trait.
    Synthetic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PopulationSpec {
    pub setting: Setting,
    /// Population size (synthetic only; the abortion population is the data).
    pub population_size: usize,
    pub n_items: usize,
    /// `corr(y_l, θ)` for every item (synthetic).
    pub rho: f64,
    /// `corr(y_l, y_l')` (synthetic).
    pub item_correlation: f64,
    /// Item-response intercepts `a_l`.
    pub item_intercepts: Vec<f64>,
    /// Item-response slopes `b_l`.
    pub item_slopes: Vec<f64>,
    /// Target range of unit-response probabilities (synthetic rescaling).
    pub unit_bounds: (f64, f64),
    /// Target range of item-response probabilities (synthetic rescaling).
    pub item_bounds: (f64, f64),
    /// Item whose total is estimated.
    pub target_item: usize,
    pub seed: u64,
}

impl PopulationSpec {
    pub fn abortion(seed: u64) -> Self {
        Self {
            setting: Setting::Abortion,
            population_size: 379,
            n_items: 4,
            rho: 0.0,
            item_correlation: 0.0,
            item_intercepts: vec![1.0, 0.0, -0.5, 1.0],
            item_slopes: vec![3.0; 4],
            unit_bounds: (0.0, 1.0),
            item_bounds: (0.0, 1.0),
            target_item: 1,
            seed,
        }
    }

    pub fn synthetic(rho: f64, seed: u64) -> Self {
        Self {
            setting: Setting::Synthetic,
            population_size: 2000,
            n_items: 6,
            rho,
            item_correlation: 0.8,
            item_intercepts: vec![1.0, 0.0, -0.5, 1.0, 0.0, -0.5],
            item_slopes: vec![1.0, 1.0, 1.0, 1.5, 1.5, 1.5],
            unit_bounds: (0.1, 0.9),
            item_bounds: (0.1, 0.95),
            target_item: 5,
            seed,
        }
    }
}

/// A finite population with its true response probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct Population {
    /// `y_kl`, one row per unit.
    pub y: Vec<Vec<f64>>,
    pub theta: Vec<f64>,
    /// True `p_k`.
    pub unit_probs: Vec<f64>,
    /// True `q_kl`.
    pub item_probs: Vec<Vec<f64>>,
    pub target_item: usize,
}

impl Population {
    pub fn from_parts(
        y: Vec<Vec<f64>>,
        theta: Vec<f64>,
        unit_probs: Vec<f64>,
        item_probs: Vec<Vec<f64>>,
        target_item: usize,
    ) -> Result<Self> {
        let n = y.len();
        let m = y.first().map_or(0, Vec::len);
        if n == 0 || theta.len() != n || unit_probs.len() != n || item_probs.len() != n {
            return Err(Error::InvalidInput("population columns have different lengths".into()));
        }
        if target_item >= m || y.iter().chain(&item_probs).any(|r| r.len() != m) {
            return Err(Error::InvalidInput("population item dimensions are inconsistent".into()));
        }
        let bad = |p: f64| !(0.0..=1.0).contains(&p);
        if unit_probs.iter().chain(item_probs.iter().flatten()).any(|&p| bad(p)) {
            return Err(Error::InvalidInput("population probabilities must lie in [0,1]".into()));
        }
        Ok(Self {
            y,
            theta,
            unit_probs,
            item_probs,
            target_item,
        })
    }

    pub fn size(&self) -> usize {
        self.y.len()
    }

    pub fn n_items(&self) -> usize {
        self.y[0].len()
    }

    pub fn total(&self, item: usize) -> f64 {
        compensated_sum(self.y.iter().map(|r| r[item]))
    }

    pub fn target_total(&self) -> f64 {
        self.total(self.target_item)
    }

    pub fn mean_unit_prob(&self) -> f64 {
        compensated_sum(self.unit_probs.iter().copied()) / self.size() as f64
    }

    /// `1 − mean_k q_kl` per item.
    pub fn nominal_item_nonresponse(&self) -> Vec<f64> {
        (0..self.n_items())
            .map(|l| 1.0 - compensated_sum(self.item_probs.iter().map(|q| q[l])) / self.size() as f64)
            .collect()
    }

    /// Draws `x_kl ~ Bernoulli(q_kl)` for every population unit.
    pub fn draw_indicators(&self, seed: u64) -> Result<ItemResponseMatrix> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<u8>> = self
            .item_probs
            .iter()
            .map(|q| q.iter().map(|&p| u8::from(rng.random::<f64>() < p)).collect())
            .collect();
        ItemResponseMatrix::from_rows((0..self.size() as u64).collect(), &rows)
    }
}

fn population_rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent generator for replicate `index`: same seed, its own stream.
pub fn replicate_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index.wrapping_add(1));
    rng
}

/// Builds the population from binary item data: `θ_k` is the unit's 2PL
/// score, `p_k = logistic(0.7 + y_k,target + θ_k + 0.2 ε_k)` with
/// `ε_k ~ U(0,1)`, and `q_kl = logistic(b_l θ_k + a_l + y_kl)`.
pub fn build_population_abortion(y: &[Vec<u8>], spec: &PopulationSpec, fit: &FitConfig) -> Result<Population> {
    let m = spec.n_items;
    if y.is_empty() || y.iter().any(|r| r.len() != m) {
        return Err(Error::InvalidInput("expected one column per item".to_string()));
    }
    if spec.item_intercepts.len() != m || spec.item_slopes.len() != m {
        return Err(Error::InvalidInput("item response coefficients must match the item count".into()));
    }
    let matrix = ItemResponseMatrix::from_rows((0..y.len() as u64).collect(), y)?;
    let latent = fit_2pl_em(&matrix, fit)?;
    let theta = latent.theta.clone();
    let mut rng = population_rng(spec.seed);
    let target = spec.target_item;
    let unit_probs = y
        .iter()
        .zip(&theta)
        .map(|(row, &t)| {
            let eps: f64 = rng.random();
            logistic(0.7 + f64::from(row[target]) + t + 0.2 * eps)
        })
        .collect();
    let item_probs = y
        .iter()
        .zip(&theta)
        .map(|(row, &t)| {
            (0..m)
                .map(|l| logistic(spec.item_slopes[l] * t + spec.item_intercepts[l] + f64::from(row[l])))
                .collect()
        })
        .collect();
    let y = y.iter().map(|r| r.iter().map(|&v| f64::from(v)).collect()).collect();
    Population::from_parts(y, theta, unit_probs, item_probs, target)
}

fn rescale(values: &mut [f64], (lo, hi): (f64, f64)) {
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = max - min;
    for v in values.iter_mut() {
        *v = if span > 0.0 { lo + (hi - lo) * (*v - min) / span } else { 0.5 * (lo + hi) };
    }
}

/// Draws `(y_1..y_m, θ)` jointly normal with mean 1 and unit variances,
/// standardizes `θ`, and builds rescaled response probabilities
/// `p° = logistic(0.5 + y_1 + θ)` and `q°_l = logistic(b_l θ + a_l + y_l)`.
pub fn gen_population_synthetic(spec: &PopulationSpec) -> Result<Population> {
    let m = spec.n_items;
    let size = spec.population_size;
    if size < 2 || m == 0 || spec.target_item >= m {
        return Err(Error::InvalidInput("synthetic population needs N >= 2 and a valid target item".into()));
    }
    if spec.item_intercepts.len() != m || spec.item_slopes.len() != m {
        return Err(Error::InvalidInput("item response coefficients must match the item count".into()));
    }
    let dim = m + 1;
    let corr = DMatrix::from_fn(dim, dim, |i, j| {
        if i == j {
            1.0
        } else if i == m || j == m {
            spec.rho
        } else {
            spec.item_correlation
        }
    });
    let chol = corr.cholesky().ok_or(Error::NotPositiveDefinite)?;
    let factor = chol.l();
    let mut rng = population_rng(spec.seed);
    let mut y = Vec::with_capacity(size);
    let mut theta = Vec::with_capacity(size);
    let mut z = vec![0.0; dim];
    for _ in 0..size {
        for v in z.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        let draw: Vec<f64> = (0..dim)
            .map(|i| 1.0 + (0..=i).map(|j| factor[(i, j)] * z[j]).sum::<f64>())
            .collect();
        theta.push(draw[m]);
        y.push(draw[..m].to_vec());
    }
    let mean = compensated_sum(theta.iter().copied()) / size as f64;
    let var = compensated_sum(theta.iter().map(|t| (t - mean) * (t - mean))) / (size - 1) as f64;
    let sd = libm::sqrt(var);
    for t in theta.iter_mut() {
        *t = (*t - mean) / sd;
    }
    let mut unit_probs: Vec<f64> = y.iter().zip(&theta).map(|(row, &t)| logistic(0.5 + row[0] + t)).collect();
    rescale(&mut unit_probs, spec.unit_bounds);
    let mut columns: Vec<Vec<f64>> = (0..m)
        .map(|l| {
            y.iter()
                .zip(&theta)
                .map(|(row, &t)| logistic(spec.item_slopes[l] * t + spec.item_intercepts[l] + row[l]))
                .collect()
        })
        .collect();
    for col in columns.iter_mut() {
        rescale(col, spec.item_bounds);
    }
    let item_probs = (0..size).map(|k| columns.iter().map(|c| c[k]).collect()).collect();
    Population::from_parts(y, theta, unit_probs, item_probs, spec.target_item)
}

/// Uniform `n`-subset of `0..population`, in increasing order.
pub fn srswor<R: Rng + ?Sized>(population: usize, n: usize, rng: &mut R) -> Result<Vec<usize>> {
    if n == 0 || n > population {
        return Err(Error::InvalidInput("sample size must lie in 1..=N".into()));
    }
    let mut idx = index::sample(rng, population, n).into_vec();
    idx.sort_unstable();
    Ok(idx)
}

/// Independent Bernoulli draws.
pub fn poisson_response<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> Vec<bool> {
    probs.iter().map(|&p| rng.random::<f64>() < p).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonteCarloOptions {
    pub pipeline: PipelineConfig,
    /// Compute jackknife intervals for the three-phase estimator.
    pub coverage: bool,
    pub level: f64,
    pub jackknife: JackknifeOptions,
    /// Largest tolerated fraction of failed replicates.
    pub max_failure_rate: f64,
}

impl Default for MonteCarloOptions {
    fn default() -> Self {
        Self {
            pipeline: PipelineConfig::default(),
            coverage: false,
            level: 0.95,
            jackknife: JackknifeOptions::default(),
            max_failure_rate: 0.02,
        }
    }
}

/// Estimates from one simulated sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateOutcome {
    pub ht: f64,
    pub naive: f64,
    pub three_phase: f64,
    pub three_phase_true: f64,
    /// `√V̂` and the interval, when coverage was requested.
    pub sqrt_variance: Option<f64>,
    pub interval: Option<(f64, f64)>,
    /// Why the jackknife failed, when coverage was requested and it did.
    pub variance_error: Option<Error>,
    pub unit_response_rate: f64,
    /// Item nonresponse rate among unit respondents, per item.
    pub item_nonresponse: Vec<f64>,
}

/// Draws sample `index`, simulates response, and computes all estimators.
pub fn run_replicate(
    population: &Population,
    n: usize,
    seed: u64,
    index: u64,
    options: &MonteCarloOptions,
) -> Result<ReplicateOutcome> {
    let mut rng = replicate_rng(seed, index);
    let size = population.size();
    let m = population.n_items();
    let j = population.target_item;
    let units = srswor(size, n, &mut rng)?;
    let p_true: Vec<f64> = units.iter().map(|&k| population.unit_probs[k]).collect();
    let responded = poisson_response(&p_true, &mut rng);
    let rows: Vec<Vec<Option<f64>>> = units
        .iter()
        .zip(&responded)
        .map(|(&k, &r)| {
            (0..m)
                .map(|l| (r && rng.random::<f64>() < population.item_probs[k][l]).then_some(population.y[k][l]))
                .collect()
        })
        .collect();
    let pi = n as f64 / size as f64;
    let ht = compensated_sum(units.iter().map(|&k| population.y[k][j] / pi));
    let sample = SurveySample::new(
        units.iter().map(|&k| k as u64).collect(),
        vec![pi; n],
        rows,
        Some(responded.clone()),
        size,
    )?;
    let naive = naive_estimator(&sample, j)?;
    let q_true: Vec<f64> = units.iter().map(|&k| population.item_probs[k][j]).collect();
    let three_phase_true = three_phase_estimator(&sample, j, &p_true, &q_true)?;

    let mut config = options.pipeline;
    config.propensity.seed = rng.next_u64();
    let adjustment = adjust(&sample, &config)?;
    let three_phase = three_phase_estimator(&sample, j, &adjustment.unit_probs, &adjustment.item_column(j))?;
    let (mut sqrt_variance, mut interval, mut variance_error) = (None, None, None);
    if options.coverage {
        match jackknife_variance(&sample, &adjustment, j, options.level, &options.jackknife) {
            Ok(v) => {
                sqrt_variance = Some(libm::sqrt(v.variance));
                interval = Some(v.interval);
            }
            Err(e) => variance_error = Some(e),
        }
    }

    let partition = sample.partition();
    let r = partition.respondents.len();
    let item_nonresponse = partition
        .item_respondents
        .iter()
        .map(|rj| if r == 0 { 0.0 } else { 1.0 - rj.len() as f64 / r as f64 })
        .collect();
    Ok(ReplicateOutcome {
        ht,
        naive,
        three_phase,
        three_phase_true,
        sqrt_variance,
        interval,
        variance_error,
        unit_response_rate: r as f64 / n as f64,
        item_nonresponse,
    })
}

/// Monte Carlo performance of one estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorSummary {
    pub name: &'static str,
    pub bias: f64,
    /// Bias relative to the true total.
    pub relative_bias: f64,
    pub sqrt_var: f64,
    pub mse: f64,
    /// Share of intervals covering the true total.
    pub coverage: Option<f64>,
    pub mean_sqrt_variance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationResult {
    pub estimators: Vec<EstimatorSummary>,
    pub total: f64,
    /// Replicates requested.
    pub replicates: usize,
    /// Replicates that produced estimates.
    pub completed: usize,
    pub failed: usize,
    /// Completed replicates whose jackknife failed; they carry no interval.
    pub variance_failures: usize,
    pub n: usize,
    pub seed: u64,
    pub mean_unit_response: f64,
    pub mean_item_nonresponse: Vec<f64>,
}

impl SimulationResult {
    pub fn estimator(&self, name: &str) -> Option<&EstimatorSummary> {
        self.estimators.iter().find(|e| e.name == name)
    }
}

pub const ESTIMATOR_NAMES: [&str; 4] = ["HT", "naive", "pq", "pq_true"];

fn summarize_one(name: &'static str, values: &[f64], total: f64) -> EstimatorSummary {
    let m = values.len() as f64;
    let mean = compensated_sum(values.iter().copied()) / m;
    let var = if values.len() > 1 {
        compensated_sum(values.iter().map(|v| (v - mean) * (v - mean))) / (m - 1.0)
    } else {
        0.0
    };
    let bias = mean - total;
    EstimatorSummary {
        name,
        bias,
        relative_bias: bias / total,
        sqrt_var: libm::sqrt(var),
        mse: bias * bias + var,
        coverage: None,
        mean_sqrt_variance: None,
    }
}

/// Aggregates replicate outcomes (in replicate order) into performance
/// metrics. Failed replicates are counted and excluded.
pub fn summarize(
    outcomes: &[Result<ReplicateOutcome>],
    total: f64,
    n: usize,
    seed: u64,
    max_failure_rate: f64,
) -> Result<SimulationResult> {
    let ok: Vec<&ReplicateOutcome> = outcomes.iter().filter_map(|o| o.as_ref().ok()).collect();
    let failed = outcomes.len() - ok.len();
    if ok.is_empty() || failed as f64 > max_failure_rate * outcomes.len() as f64 {
        return Err(Error::TooManyFailures {
            failed,
            total: outcomes.len(),
        });
    }
    let column = |f: fn(&ReplicateOutcome) -> f64| -> Vec<f64> { ok.iter().map(|o| f(o)).collect() };
    let mut estimators = vec![
        summarize_one(ESTIMATOR_NAMES[0], &column(|o| o.ht), total),
        summarize_one(ESTIMATOR_NAMES[1], &column(|o| o.naive), total),
        summarize_one(ESTIMATOR_NAMES[2], &column(|o| o.three_phase), total),
        summarize_one(ESTIMATOR_NAMES[3], &column(|o| o.three_phase_true), total),
    ];
    let intervals: Vec<(f64, f64)> = ok.iter().filter_map(|o| o.interval).collect();
    if !intervals.is_empty() {
        let covered = intervals.iter().filter(|(lo, hi)| *lo <= total && total <= *hi).count();
        estimators[2].coverage = Some(covered as f64 / intervals.len() as f64);
        let sds: Vec<f64> = ok.iter().filter_map(|o| o.sqrt_variance).collect();
        estimators[2].mean_sqrt_variance = Some(compensated_sum(sds.iter().copied()) / sds.len() as f64);
    }
    let items = ok[0].item_nonresponse.len();
    let mean_item_nonresponse = (0..items)
        .map(|l| compensated_sum(ok.iter().map(|o| o.item_nonresponse[l])) / ok.len() as f64)
        .collect();
    Ok(SimulationResult {
        estimators,
        total,
        replicates: outcomes.len(),
        completed: ok.len(),
        failed,
        variance_failures: ok.iter().filter(|o| o.variance_error.is_some()).count(),
        n,
        seed,
        mean_unit_response: compensated_sum(ok.iter().map(|o| o.unit_response_rate)) / ok.len() as f64,
        mean_item_nonresponse,
    })
}

/// Runs `replicates` Monte Carlo replicates sequentially.
pub fn run_monte_carlo(
    population: &Population,
    n: usize,
    replicates: usize,
    seed: u64,
    options: &MonteCarloOptions,
) -> Result<SimulationResult> {
    let outcomes: Vec<Result<ReplicateOutcome>> = (0..replicates as u64)
        .map(|i| run_replicate(population, n, seed, i, options))
        .collect();
    summarize(&outcomes, population.target_total(), n, seed, options.max_failure_rate)
}
