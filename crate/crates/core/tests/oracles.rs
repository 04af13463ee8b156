//! Latent model quantities checked against brute-force numerical oracles.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use willresp_core::{marginal_loglik, posterior_theta, ItemResponseMatrix, QuadratureRule, TwoPlParams};

fn pattern_loglik(params: &TwoPlParams, pattern: &[u8], theta: f64) -> f64 {
    pattern
        .iter()
        .enumerate()
        .map(|(l, &u)| {
            let p = 1.0 / (1.0 + (-(params.intercepts[l] + params.slopes[l] * theta)).exp());
            if u == 1 {
                p.ln()
            } else {
                (1.0 - p).ln()
            }
        })
        .sum()
}

fn std_normal_pdf(t: f64) -> f64 {
    (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Trapezoid rule for the marginal log-likelihood on an even grid.
fn trapezoid_marginal(params: &TwoPlParams, rows: &[Vec<u8>], points: usize, lo: f64, hi: f64) -> f64 {
    let h = (hi - lo) / (points - 1) as f64;
    rows.iter()
        .map(|row| {
            let mut acc = 0.0;
            for i in 0..points {
                let t = lo + h * i as f64;
                let w = if i == 0 || i == points - 1 { 0.5 } else { 1.0 };
                acc += w * (pattern_loglik(params, row, t)).exp() * std_normal_pdf(t);
            }
            (acc * h).ln()
        })
        .sum()
}

fn grid_argmax(params: &TwoPlParams, pattern: &[u8], points: usize, lo: f64, hi: f64) -> f64 {
    let h = (hi - lo) / (points - 1) as f64;
    (0..points)
        .map(|i| lo + h * i as f64)
        .map(|t| (t, pattern_loglik(params, pattern, t) - 0.5 * t * t))
        .fold((0.0, f64::NEG_INFINITY), |best, cur| if cur.1 > best.1 { cur } else { best })
        .0
}

fn random_instance(seed: u64) -> (TwoPlParams, Vec<Vec<u8>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let intercepts: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
    let slopes: Vec<f64> = (0..3).map(|_| rng.random_range(0.5..2.0)).collect();
    let rows: Vec<Vec<u8>> = (0..20)
        .map(|_| (0..3).map(|_| u8::from(rng.random_bool(0.5))).collect())
        .collect();
    (TwoPlParams::new(intercepts, slopes).unwrap(), rows)
}

#[test]
fn marginal_loglik_matches_trapezoid_integration() {
    let fine = QuadratureRule::gauss_hermite(61).unwrap();
    let default = QuadratureRule::gauss_hermite(21).unwrap();
    for seed in 0..5 {
        let (params, rows) = random_instance(seed);
        let matrix = ItemResponseMatrix::from_rows((0..20).collect(), &rows).unwrap();
        let oracle = trapezoid_marginal(&params, &rows, 10_001, -8.0, 8.0);
        let ours = marginal_loglik(&params, &matrix, &fine).unwrap();
        assert!((ours - oracle).abs() < 1e-6, "seed {seed}: {ours} vs {oracle}");
        // The 21-node default carries a few 1e-7 of error per row.
        let coarse = marginal_loglik(&params, &matrix, &default).unwrap();
        eprintln!("seed {seed} fine {:e} coarse {:e}", ours - oracle, coarse - oracle);
    }
}

#[test]
fn posterior_mode_matches_grid_argmax() {
    let quad = QuadratureRule::gauss_hermite(21).unwrap();
    for seed in 0..5 {
        let (params, _) = random_instance(seed);
        for bits in 0..8u8 {
            let pattern = [bits & 1, (bits >> 1) & 1, (bits >> 2) & 1];
            let ours = posterior_theta(&params, &pattern, &quad);
            let oracle = grid_argmax(&params, &pattern, 20_001, -6.0, 6.0);
            assert!((ours - oracle).abs() < 1e-3, "seed {seed} pattern {pattern:?}: {ours} vs {oracle}");
        }
    }
}
