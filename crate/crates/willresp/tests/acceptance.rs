//! Acceptance criteria, one test per criterion. Each prints a single
//! `PASS`/`FAIL` line with the measured values.
//!
//! Criteria 2 and 3 need the 379×4 attitude-survey item file, read from the
//! path in `ABORTION_CSV`. Without it they print `NOT EVALUATED`; set
//! `REQUIRE_ABORTION=1` to turn that into a failure.
//!
//! Runs without the libtest harness so the summary lines always reach stdout;
//! the process exits nonzero if any criterion fails.

use std::path::PathBuf;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use willresp::io::load_binary_matrix;
use willresp::montecarlo::run_parallel;
use willresp_core::diagnostics::cronbach_alpha;
use willresp_core::math::{logistic, pearson};
use willresp_core::pipeline::{adjust, jackknife_variance, PipelineConfig};
use willresp_core::propensity::{fit_response_logistic, PropensityConfig};
use willresp_core::simulation::{
    build_population_abortion, gen_population_synthetic, MonteCarloOptions, PopulationSpec, SimulationResult,
};
use willresp_core::variance::JackknifeOptions;
use willresp_core::{
    fit_2pl_em, marginal_loglik, posterior_theta, FitConfig, ItemResponseMatrix, QuadratureRule, SurveySample,
    TwoPlParams,
};

const POPULATION_SEED: u64 = 20240601;
const MONTE_CARLO_SEED: u64 = 7;

#[derive(Clone, Copy, PartialEq)]
enum Outcome {
    Pass,
    Fail,
    NotEvaluated,
}

struct Report {
    criterion: u8,
    checks: Vec<(String, bool)>,
}

impl Report {
    fn new(criterion: u8) -> Self {
        Self {
            criterion,
            checks: Vec::new(),
        }
    }

    fn check(&mut self, label: impl Into<String>, ok: bool) {
        self.checks.push((label.into(), ok));
    }

    fn within(&mut self, name: &str, value: f64, centre: f64, half_width: f64) {
        let ok = (value - centre).abs() <= half_width;
        self.check(format!("{name} {value:.4} in {centre}±{half_width}"), ok);
    }

    fn finish(self) -> Outcome {
        let ok = self.checks.iter().all(|c| c.1);
        let detail: Vec<String> = self
            .checks
            .iter()
            .map(|(l, p)| format!("{}{l}", if *p { "" } else { "✗ " }))
            .collect();
        println!(
            "{} criterion {}: {}",
            if ok { "PASS" } else { "FAIL" },
            self.criterion,
            detail.join("; ")
        );
        if ok {
            Outcome::Pass
        } else {
            Outcome::Fail
        }
    }
}

fn relative_bias_pct(result: &SimulationResult, name: &str) -> f64 {
    100.0 * result.estimator(name).unwrap().relative_bias
}

/// The item file, or the outcome to report when it is absent.
fn abortion_rows(criterion: u8) -> Result<Vec<Vec<u8>>, Outcome> {
    match std::env::var_os("ABORTION_CSV") {
        Some(path) => Ok(load_binary_matrix(&PathBuf::from(path)).expect("reading ABORTION_CSV")),
        None if std::env::var_os("REQUIRE_ABORTION").is_some() => {
            println!("FAIL criterion {criterion}: ABORTION_CSV is not set and REQUIRE_ABORTION is");
            Err(Outcome::Fail)
        }
        None => {
            println!("NOT EVALUATED criterion {criterion}: set ABORTION_CSV to the 379×4 item file");
            Err(Outcome::NotEvaluated)
        }
    }
}

fn criterion_1_synthetic_setting() -> Outcome {
    let mut report = Report::new(1);
    let start = Instant::now();
    let options = MonteCarloOptions::default();
    for rho in [0.3, 0.5, 0.8] {
        let pop = gen_population_synthetic(&PopulationSpec::synthetic(rho, POPULATION_SEED)).unwrap();
        let result = run_parallel(&pop, 200, 1000, MONTE_CARLO_SEED, &options, None).unwrap();
        let naive = result.estimator("naive").unwrap().bias;
        let pq = result.estimator("pq").unwrap().bias;
        report.check(format!("rho {rho}: naive B {naive:.1} > 0"), naive > 0.0);
        report.check(format!("rho {rho}: |B pq| {:.1} < |B naive|", pq.abs()), pq.abs() < naive.abs());
        if rho == 0.5 {
            report.within("naive RB%", relative_bias_pct(&result, "naive"), 50.7, 6.0);
            report.within("pq RB%", relative_bias_pct(&result, "pq"), -9.4, 5.0);
            report.within("pq_true RB%", relative_bias_pct(&result, "pq_true"), 3.9, 4.0);
        }
    }
    let elapsed = start.elapsed();
    report.check(format!("runtime {elapsed:.1?} < 10 min"), elapsed < Duration::from_secs(600));
    report.finish()
}

fn criterion_2_attitude_survey_setting() -> Outcome {
    let rows = match abortion_rows(2) {
        Ok(rows) => rows,
        Err(outcome) => return outcome,
    };
    let mut report = Report::new(2);
    let pop = build_population_abortion(&rows, &PopulationSpec::abortion(POPULATION_SEED), &FitConfig::default()).unwrap();
    let total = pop.target_total();
    report.check(format!("Y_2 = {total}"), total == 225.0);
    report.within("mean p", pop.mean_unit_prob(), 0.74, 0.02);
    let indicators = pop.draw_indicators(POPULATION_SEED).unwrap();
    report.within("cronbach alpha", cronbach_alpha(&indicators).unwrap(), 0.83, 0.03);
    let fit = fit_2pl_em(&indicators, &FitConfig::default()).unwrap();
    let y2: Vec<f64> = pop.y.iter().map(|r| r[1]).collect();
    report.within("corr(theta, y_2)", pearson(&fit.theta, &y2).unwrap(), 0.76, 0.05);

    let result = run_parallel(&pop, 50, 1000, MONTE_CARLO_SEED, &MonteCarloOptions::default(), None).unwrap();
    report.within("naive RB%", relative_bias_pct(&result, "naive"), -56.2, 5.0);
    report.within("pq RB%", relative_bias_pct(&result, "pq"), 9.1, 5.0);
    let rb_true = relative_bias_pct(&result, "pq_true");
    report.check(format!("|pq_true RB%| {:.3} < 2", rb_true.abs()), rb_true.abs() < 2.0);
    report.finish()
}

fn criterion_3_jackknife_coverage() -> Outcome {
    let rows = match abortion_rows(3) {
        Ok(rows) => rows,
        Err(outcome) => return outcome,
    };
    let mut report = Report::new(3);
    let pop = build_population_abortion(&rows, &PopulationSpec::abortion(POPULATION_SEED), &FitConfig::default()).unwrap();
    let options = MonteCarloOptions {
        coverage: true,
        ..MonteCarloOptions::default()
    };
    let result = run_parallel(&pop, 50, 500, MONTE_CARLO_SEED, &options, None).unwrap();
    let pq = result.estimator("pq").unwrap();
    let coverage = pq.coverage.unwrap();
    report.check(
        format!(
            "coverage {:.1}% in [91, 98] ({} of {} replicates without a variance estimate)",
            100.0 * coverage,
            result.variance_failures,
            result.completed
        ),
        (0.91..=0.98).contains(&coverage),
    );
    report.finish()
}

fn pattern_loglik(params: &TwoPlParams, pattern: &[u8], t: f64) -> f64 {
    pattern
        .iter()
        .enumerate()
        .map(|(l, &x)| {
            let p = logistic(params.intercepts[l] + params.slopes[l] * t);
            if x == 1 {
                p.ln()
            } else {
                (1.0 - p).ln()
            }
        })
        .sum()
}

fn criterion_4_numerical_oracles() -> Outcome {
    let mut report = Report::new(4);
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let params = TwoPlParams::new(
        (0..3).map(|_| rng.random_range(-1.0..1.0)).collect(),
        (0..3).map(|_| rng.random_range(0.5..2.0)).collect(),
    )
    .unwrap();
    let rows: Vec<Vec<u8>> = (0..20).map(|_| (0..3).map(|_| u8::from(rng.random_bool(0.5))).collect()).collect();
    let matrix = ItemResponseMatrix::from_rows((0..20).collect(), &rows).unwrap();

    let (points, lo, hi) = (10_001, -8.0, 8.0);
    let h = (hi - lo) / (points - 1) as f64;
    let oracle: f64 = rows
        .iter()
        .map(|row| {
            let s: f64 = (0..points)
                .map(|i| {
                    let t = lo + h * i as f64;
                    let w = if i == 0 || i == points - 1 { 0.5 } else { 1.0 };
                    w * (pattern_loglik(&params, row, t) - 0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt()
                })
                .sum();
            (s * h).ln()
        })
        .sum();
    let fine = QuadratureRule::gauss_hermite(61).unwrap();
    let delta = (marginal_loglik(&params, &matrix, &fine).unwrap() - oracle).abs();
    report.check(format!("marginal loglik (61 nodes) |Δ| {delta:.2e} < 1e-6"), delta < 1e-6);

    let quad = QuadratureRule::gauss_hermite(21).unwrap();
    let mut worst: f64 = 0.0;
    for bits in 0..8u8 {
        let pattern = [bits & 1, (bits >> 1) & 1, (bits >> 2) & 1];
        let step = 12.0 / 20_000.0;
        let grid = (0..20_001)
            .map(|i| -6.0 + step * i as f64)
            .map(|t| (t, pattern_loglik(&params, &pattern, t) - 0.5 * t * t))
            .fold((0.0, f64::NEG_INFINITY), |b, c| if c.1 > b.1 { c } else { b })
            .0;
        worst = worst.max((posterior_theta(&params, &pattern, &quad) - grid).abs());
    }
    report.check(format!("posterior mode vs grid max |Δ| {worst:.2e} < 1e-3"), worst < 1e-3);
    report.finish()
}

fn simulate_2pl(params: &TwoPlParams, n: usize, rng: &mut ChaCha8Rng) -> ItemResponseMatrix {
    let rows: Vec<Vec<u8>> = (0..n)
        .map(|_| {
            let t: f64 = StandardNormal.sample(rng);
            (0..params.n_items()).map(|l| u8::from(rng.random::<f64>() < params.prob(l, t))).collect()
        })
        .collect();
    ItemResponseMatrix::from_rows((0..n as u64).collect(), &rows).unwrap()
}

fn criterion_5_property_suites() -> Outcome {
    let mut report = Report::new(5);

    let mut monotone = true;
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(500 + seed);
        let m = rng.random_range(3..7);
        let params = TwoPlParams::new(
            (0..m).map(|_| rng.random_range(-1.5..1.5)).collect(),
            (0..m).map(|_| rng.random_range(0.5..2.5)).collect(),
        )
        .unwrap();
        let n = rng.random_range(100..600);
        let fit = fit_2pl_em(&simulate_2pl(&params, n, &mut rng), &FitConfig::default()).unwrap();
        monotone &= fit.loglik_trace.windows(2).all(|w| w[1] >= w[0] - 1e-10);
    }
    report.check("EM loglik nondecreasing on 20 instances", monotone);

    // Replicate benchmarks on a simulated sample with unit and item nonresponse.
    let pop = gen_population_synthetic(&PopulationSpec::synthetic(0.5, POPULATION_SEED)).unwrap();
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for i in 0..20u64 {
        let mut rng = willresp_core::simulation::replicate_rng(99, i);
        let units = willresp_core::simulation::srswor(pop.size(), 200, &mut rng).unwrap();
        let rows: Vec<Vec<Option<f64>>> = units
            .iter()
            .map(|&k| {
                let responds = rng.random::<f64>() < pop.unit_probs[k];
                (0..pop.n_items())
                    .map(|l| (responds && rng.random::<f64>() < pop.item_probs[k][l]).then_some(pop.y[k][l]))
                    .collect()
            })
            .collect();
        let Ok(sample) = SurveySample::new(units.iter().map(|&k| k as u64).collect(), vec![0.1; 200], rows, None, 2000)
        else {
            continue;
        };
        let config = PipelineConfig {
            propensity: PropensityConfig {
                seed: i,
                ..PropensityConfig::default()
            },
            ..PipelineConfig::default()
        };
        let adj = adjust(&sample, &config).unwrap();
        if let Ok(v) = jackknife_variance(&sample, &adj, 5, 0.95, &JackknifeOptions::default()) {
            worst = worst.max(v.replicates.max_residual);
            checked += 1;
        }
    }
    report.check(
        format!("replicate calibration residual max {worst:.1e} < 1e-8 over {checked} samples"),
        checked > 0 && worst < 1e-8,
    );

    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (n, big_n) = (50usize, 500usize);
    let y: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..20.0)).collect();
    let sample = SurveySample::new(
        (0..n as u64).collect(),
        vec![n as f64 / big_n as f64; n],
        y.iter().map(|&v| vec![Some(v), Some(1.0), Some(2.0)]).collect(),
        None,
        big_n,
    )
    .unwrap();
    let adj = adjust(&sample, &PipelineConfig::default()).unwrap();
    let v = jackknife_variance(&sample, &adj, 0, 0.95, &JackknifeOptions::default()).unwrap();
    let mean = y.iter().sum::<f64>() / n as f64;
    let s2 = y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
    let textbook = (big_n * big_n) as f64 * s2 / n as f64;
    let rel = ((v.variance - textbook) / textbook).abs();
    report.check(format!("degenerate-phase jackknife relative error {rel:.1e} < 1e-10"), rel < 1e-10);

    let mut identity = true;
    for rho in [0.3, 0.8] {
        let pop = gen_population_synthetic(&PopulationSpec::synthetic(rho, 1)).unwrap();
        let r = run_parallel(&pop, 200, 50, 3, &MonteCarloOptions::default(), None).unwrap();
        identity &= r
            .estimators
            .iter()
            .all(|e| (e.mse - (e.bias * e.bias + e.sqrt_var * e.sqrt_var)).abs() <= 1e-9 * e.mse);
    }
    report.check("MSE = B² + VAR on every simulation output", identity);
    report.finish()
}

fn criterion_6_parameter_recovery() -> Outcome {
    let mut report = Report::new(6);
    let truth = TwoPlParams::new(vec![-1.0, -0.5, 0.0, 0.3, 0.8, 1.2], vec![1.0, 1.1, 1.2, 1.3, 1.4, 1.5]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (mut total, mut count) = (0.0, 0.0);
    for _ in 0..50 {
        let fit = fit_2pl_em(&simulate_2pl(&truth, 2000, &mut rng), &FitConfig::default()).unwrap();
        for l in 0..6 {
            total += (fit.params.intercepts[l] - truth.intercepts[l]).abs()
                + (fit.params.slopes[l] - truth.slopes[l]).abs();
            count += 2.0;
        }
    }
    let mae = total / count;
    report.check(format!("2PL mean absolute error {mae:.4} < 0.15"), mae < 0.15);

    let theta: Vec<f64> = (0..10_000).map(|_| StandardNormal.sample(&mut rng)).collect();
    let responded: Vec<bool> = theta.iter().map(|&t| rng.random::<f64>() < logistic(0.7 + t)).collect();
    let model = fit_response_logistic(&theta, &responded, None, None, &PropensityConfig::default()).unwrap();
    report.within("alpha0", model.alpha0, 0.7, 0.15);
    report.within("alpha1", model.alpha1, 1.0, 0.15);
    report.finish()
}

fn main() {
    let criteria: [(u8, fn() -> Outcome); 6] = [
        (1, criterion_1_synthetic_setting),
        (2, criterion_2_attitude_survey_setting),
        (3, criterion_3_jackknife_coverage),
        (4, criterion_4_numerical_oracles),
        (5, criterion_5_property_suites),
        (6, criterion_6_parameter_recovery),
    ];
    let outcomes: Vec<Outcome> = criteria
        .iter()
        .map(|&(id, run)| {
            std::panic::catch_unwind(run).unwrap_or_else(|_| {
                println!("FAIL criterion {id}: panicked");
                Outcome::Fail
            })
        })
        .collect();
    let count = |o: Outcome| outcomes.iter().filter(|&&x| x == o).count();
    println!(
        "acceptance: {} passed, {} failed, {} not evaluated",
        count(Outcome::Pass),
        count(Outcome::Fail),
        count(Outcome::NotEvaluated)
    );
    if count(Outcome::Fail) > 0 {
        std::process::exit(1);
    }
}
