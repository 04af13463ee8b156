//! EM behaviour and parameter recovery for the latent trait model.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use willresp_core::{fit_2pl_em, FitConfig, ItemResponseMatrix, TwoPlParams};

fn simulate(params: &TwoPlParams, n: usize, seed: u64) -> ItemResponseMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows: Vec<Vec<u8>> = (0..n)
        .map(|_| {
            let theta: f64 = StandardNormal.sample(&mut rng);
            (0..params.n_items())
                .map(|l| u8::from(rng.random::<f64>() < params.prob(l, theta)))
                .collect()
        })
        .collect();
    ItemResponseMatrix::from_rows((0..n as u64).collect(), &rows).unwrap()
}

#[test]
fn em_loglik_never_decreases() {
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let m = rng.random_range(3..7);
        let params = TwoPlParams::new(
            (0..m).map(|_| rng.random_range(-1.5..1.5)).collect(),
            (0..m).map(|_| rng.random_range(0.5..2.5)).collect(),
        )
        .unwrap();
        let matrix = simulate(&params, rng.random_range(100..600), seed);
        let fit = fit_2pl_em(&matrix, &FitConfig::default()).unwrap();
        for pair in fit.loglik_trace.windows(2) {
            assert!(pair[1] >= pair[0] - 1e-10, "seed {seed}: {} then {}", pair[0], pair[1]);
        }
    }
}

fn loglik_at(matrix: &ItemResponseMatrix, points: usize) -> f64 {
    let fit = fit_2pl_em(
        matrix,
        &FitConfig {
            quadrature_points: points,
            tol: 1e-10,
            max_iter: 20_000,
            ..FitConfig::default()
        },
    )
    .unwrap();
    assert!(fit.converged);
    fit.loglik
}

#[test]
fn quadrature_refinement_barely_moves_a_moderate_fit() {
    let params = TwoPlParams::new(vec![1.2, -0.3, -0.6, 0.9], vec![1.0, 1.5, 0.8, 1.2]).unwrap();
    let matrix = simulate(&params, 379, 7);
    let (coarse, fine) = (loglik_at(&matrix, 21), loglik_at(&matrix, 61));
    // About 1e-5 per unit at 21 nodes.
    assert!((coarse - fine).abs() < 1e-2, "{coarse} vs {fine}");
}

#[test]
#[ignore = "21 Gauss-Hermite nodes under-resolve slopes near 4; the fitted loglik moves by about 1 at 61 nodes"]
fn quadrature_refinement_with_steep_items() {
    let params = TwoPlParams::new(vec![-0.7, 1.0, 1.7, 1.3], vec![3.9, 4.4, 4.8, 4.5]).unwrap();
    let matrix = simulate(&params, 379, 7);
    let (coarse, fine) = (loglik_at(&matrix, 21), loglik_at(&matrix, 61));
    assert!((coarse - fine).abs() < 1e-4, "{coarse} vs {fine}");
}

#[test]
fn recovers_known_item_parameters() {
    let truth = TwoPlParams::new(vec![-1.0, -0.5, 0.0, 0.3, 0.8, 1.2], vec![0.8, 1.0, 1.2, 1.5, 1.0, 0.7]).unwrap();
    let mut total = 0.0;
    let mut count = 0.0;
    for seed in 0..50 {
        let fit = fit_2pl_em(&simulate(&truth, 2000, 500 + seed), &FitConfig::default()).unwrap();
        for l in 0..6 {
            total += (fit.params.intercepts[l] - truth.intercepts[l]).abs();
            total += (fit.params.slopes[l] - truth.slopes[l]).abs();
            count += 2.0;
        }
    }
    let mae = total / count;
    assert!(mae < 0.15, "mean absolute error {mae}");
}

#[test]
fn item_score_matches_finite_differences() {
    use willresp_core::irt::{item_expected_loglik, item_expected_score};
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let nodes: Vec<f64> = (0..21).map(|g| -4.0 + 0.4 * g as f64).collect();
    let expected: Vec<f64> = (0..21).map(|_| rng.random_range(1.0..30.0)).collect();
    let positive: Vec<f64> = expected.iter().map(|&n| n * rng.random::<f64>()).collect();
    let h = 1e-5;
    for &(b0, b1) in &[(0.3, 1.2), (-1.0, 0.4), (1.5, 2.5)] {
        let f = |a: f64, b: f64| item_expected_loglik(a, b, &nodes, &positive, &expected);
        let fd = [(f(b0 + h, b1) - f(b0 - h, b1)) / (2.0 * h), (f(b0, b1 + h) - f(b0, b1 - h)) / (2.0 * h)];
        let analytic = item_expected_score(b0, b1, &nodes, &positive, &expected);
        for i in 0..2 {
            assert!((fd[i] - analytic[i]).abs() <= 1e-5 * analytic[i].abs().max(1.0), "{fd:?} vs {analytic:?}");
        }
    }
}

#[test]
fn likelihood_factorizes_over_items() {
    use willresp_core::marginal_loglik;
    use willresp_core::QuadratureRule;
    let params = TwoPlParams::new(vec![0.5, -0.2, 1.0], vec![1.1, 0.7, 1.8]).unwrap();
    let quad = QuadratureRule::gauss_hermite(21).unwrap();
    for bits in 0..8u8 {
        let pattern: Vec<u8> = (0..3).map(|i| (bits >> i) & 1).collect();
        let matrix = ItemResponseMatrix::from_rows(vec![0], std::slice::from_ref(&pattern)).unwrap();
        let oracle: f64 = quad
            .nodes()
            .iter()
            .zip(quad.weights())
            .map(|(&t, &w)| {
                let p0 = params.prob(0, t);
                let p1 = params.prob(1, t);
                let p2 = params.prob(2, t);
                let f = |p: f64, x: u8| if x == 1 { p } else { 1.0 - p };
                w * f(p0, pattern[0]) * f(p1, pattern[1]) * f(p2, pattern[2])
            })
            .sum::<f64>()
            .ln();
        let ours = marginal_loglik(&params, &matrix, &quad).unwrap();
        assert!((ours - oracle).abs() < 1e-12, "{pattern:?}: {ours} vs {oracle}");
    }
}

#[test]
fn rasch_is_nested_in_the_two_parameter_model() {
    use willresp_core::fit_rasch;
    let truth = TwoPlParams::new(vec![-0.8, 0.0, 0.4, 1.0, -0.3], vec![1.3; 5]).unwrap();
    let matrix = simulate(&truth, 1500, 21);
    let free = fit_2pl_em(&matrix, &FitConfig::default()).unwrap();
    let rasch = fit_rasch(&matrix, &FitConfig::default()).unwrap();
    assert!(rasch.loglik <= free.loglik + 1e-6);
    assert!(free.loglik - rasch.loglik < 2.0 * 5.0);
    assert!(rasch.params.slopes.windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn symmetric_items_get_equal_intercepts() {
    let truth = TwoPlParams::new(vec![0.3; 3], vec![1.2; 3]).unwrap();
    // Each row is used with its three cyclic rotations so the items are exactly exchangeable.
    let base = simulate(&truth, 600, 31);
    let rows: Vec<Vec<u8>> = base
        .rows()
        .flat_map(|r| (0..3).map(move |s| (0..3).map(|l| r[(l + s) % 3]).collect::<Vec<u8>>()))
        .collect();
    let matrix = ItemResponseMatrix::from_rows((0..rows.len() as u64).collect(), &rows).unwrap();
    let fit = fit_2pl_em(&matrix, &FitConfig::default()).unwrap();
    let b = &fit.params.intercepts;
    assert!((b[0] - b[1]).abs() < 1e-2 && (b[1] - b[2]).abs() < 1e-2, "{b:?}");
}

#[test]
fn phantom_scores_below_every_respondent() {
    use willresp_core::propensity::estimate_thetas_stage1;
    use willresp_core::{derive_indicators, SurveySample};
    let truth = TwoPlParams::new(vec![0.5, 0.0, -0.4, 0.8], vec![1.5, 1.0, 2.0, 1.2]).unwrap();
    let x = simulate(&truth, 300, 41);
    let rows = x
        .rows()
        .map(|r| r.iter().map(|&v| (v == 1).then_some(1.0)).collect())
        .collect();
    let sample = SurveySample::new((0..300).collect(), vec![0.5; 300], rows, None, 600).unwrap();
    let indicators = derive_indicators(&sample).unwrap();
    let stage = estimate_thetas_stage1(&sample, &indicators, &FitConfig::default()).unwrap();
    assert!(stage.fit.params.slopes.iter().all(|&s| s > 0.0));
    let min_resp = stage.respondent_rows.iter().map(|&k| stage.theta[k]).fold(f64::INFINITY, f64::min);
    assert!(stage.phantom_theta <= min_resp);
    for k in 0..sample.len() {
        if !sample.is_respondent(k) {
            assert_eq!(stage.theta[k], stage.phantom_theta);
        }
    }
}
