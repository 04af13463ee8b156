//! Sampling designs, Monte Carlo metrics and reproducibility.

use willresp_core::simulation::{
    gen_population_synthetic, poisson_response, replicate_rng, run_monte_carlo, srswor, MonteCarloOptions,
    PopulationSpec,
};

#[test]
fn srswor_includes_every_unit_with_probability_n_over_n() {
    let (big_n, n, draws) = (20usize, 5usize, 40_000u64);
    let mut counts = vec![0u32; big_n];
    for i in 0..draws {
        let mut rng = replicate_rng(17, i);
        let s = srswor(big_n, n, &mut rng).unwrap();
        assert_eq!(s.len(), n);
        assert!(s.windows(2).all(|w| w[0] < w[1]));
        for k in s {
            counts[k] += 1;
        }
    }
    let p = n as f64 / big_n as f64;
    let se = (p * (1.0 - p) / draws as f64).sqrt();
    for c in counts {
        assert!((c as f64 / draws as f64 - p).abs() < 5.0 * se);
    }
}

#[test]
fn poisson_response_matches_its_probabilities() {
    let probs = [0.1, 0.5, 0.9, 0.33];
    let draws = 40_000;
    let mut counts = [0u32; 4];
    let mut rng = replicate_rng(3, 0);
    for _ in 0..draws {
        for (c, r) in counts.iter_mut().zip(poisson_response(&probs, &mut rng)) {
            *c += u32::from(r);
        }
    }
    for (c, p) in counts.iter().zip(probs) {
        let se = (p * (1.0 - p) / draws as f64).sqrt();
        assert!((*c as f64 / draws as f64 - p).abs() < 5.0 * se);
    }
}

#[test]
fn summaries_satisfy_the_mse_identity_and_are_reproducible() {
    let pop = gen_population_synthetic(&PopulationSpec::synthetic(0.5, 4)).unwrap();
    let options = MonteCarloOptions::default();
    let a = run_monte_carlo(&pop, 200, 40, 9, &options).unwrap();
    let b = run_monte_carlo(&pop, 200, 40, 9, &options).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.completed + a.failed, 40);
    for e in &a.estimators {
        let identity = e.bias * e.bias + e.sqrt_var * e.sqrt_var;
        assert!((e.mse - identity).abs() <= 1e-9 * e.mse.abs(), "{}", e.name);
        assert!((e.relative_bias * a.total - e.bias).abs() <= 1e-9 * e.bias.abs().max(1.0));
    }
}
