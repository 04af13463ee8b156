//! Goodness-of-fit checks for the latent trait model.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;

use crate::data::ItemResponseMatrix;
use crate::error::{Error, Result};
use crate::irt::{LatentFit, TwoPlParams};
use crate::math::{log_sum_exp, pearson};
use crate::quadrature::QuadratureRule;

/// Acceptable band for infit and outfit mean-squares.
pub const FIT_BAND: (f64, f64) = (0.5, 1.5);
/// Residual-PCA first eigenvalue below which unidimensionality is supported.
pub const UNIDIMENSIONAL_EIGENVALUE: f64 = 2.0;
/// Clamp applied to fitted probabilities before standardizing residuals.
pub const PROB_CLAMP: f64 = 1e-10;
/// Margin cells with smaller expected counts are skipped.
pub const MIN_EXPECTED: f64 = 1e-12;

/// Cronbach's alpha over the item columns.
pub fn cronbach_alpha(matrix: &ItemResponseMatrix) -> Result<f64> {
    let m = matrix.n_items();
    let n = matrix.n_rows();
    if m < 2 || n < 2 {
        return Err(Error::InvalidInput("alpha needs at least 2 items and 2 rows".into()));
    }
    let sample_var = |v: &[f64]| {
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (v.len() - 1) as f64
    };
    let item_var: f64 = (0..m).map(|l| sample_var(&matrix.column(l))).sum();
    let totals: Vec<f64> = matrix.rows().map(|r| r.iter().map(|&x| f64::from(x)).sum()).collect();
    let total_var = sample_var(&totals);
    if total_var <= 0.0 {
        return Err(Error::Undefined("Cronbach alpha (zero total-score variance)"));
    }
    Ok(m as f64 / (m as f64 - 1.0) * (1.0 - item_var / total_var))
}

/// One cell of a two- or three-way margin table.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginCell {
    pub items: Vec<usize>,
    pub pattern: Vec<u8>,
    pub observed: f64,
    pub expected: f64,
    /// `(O − E)² / E`; `None` when the cell was skipped for a tiny `E`.
    pub residual: Option<f64>,
}

/// Observed versus model-expected counts for every cell of every `order`-way
/// margin (order 2 or 3). Expected counts integrate the fitted pattern
/// probabilities against the N(0,1) prior.
pub fn margin_residuals(
    matrix: &ItemResponseMatrix,
    params: &TwoPlParams,
    quad: &QuadratureRule,
    order: usize,
) -> Result<Vec<MarginCell>> {
    if !(2..=3).contains(&order) {
        return Err(Error::InvalidInput("margin order must be 2 or 3".into()));
    }
    let m = matrix.n_items();
    if params.n_items() != m || m < order {
        return Err(Error::InvalidInput("fit does not cover the matrix items".into()));
    }
    let n = matrix.n_rows() as f64;
    let logw = quad.log_weights();
    let mut sets = Vec::new();
    for a in 0..m {
        for b in a + 1..m {
            if order == 2 {
                sets.push(vec![a, b]);
            } else {
                for c in b + 1..m {
                    sets.push(vec![a, b, c]);
                }
            }
        }
    }
    let mut cells = Vec::with_capacity(sets.len() << order);
    let mut terms = vec![0.0; quad.len()];
    for items in sets {
        for code in 0..(1u32 << order) {
            let pattern: Vec<u8> = (0..order).map(|i| ((code >> (order - 1 - i)) & 1) as u8).collect();
            let observed = matrix
                .rows()
                .filter(|r| items.iter().zip(&pattern).all(|(&l, &x)| r[l] == x))
                .count() as f64;
            for (g, &t) in quad.nodes().iter().enumerate() {
                let mut acc = logw[g];
                for (&l, &x) in items.iter().zip(&pattern) {
                    let q = params.prob(l, t);
                    acc += libm::log(if x == 1 { q } else { 1.0 - q });
                }
                terms[g] = acc;
            }
            let expected = n * libm::exp(log_sum_exp(&terms));
            let residual = (expected >= MIN_EXPECTED).then(|| (observed - expected) * (observed - expected) / expected);
            cells.push(MarginCell {
                items: items.clone(),
                pattern,
                observed,
                expected,
                residual,
            });
        }
    }
    Ok(cells)
}

/// Infit and outfit mean-squares for one item.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ItemFit {
    pub infit: f64,
    pub outfit: f64,
}

impl ItemFit {
    pub fn within_band(&self) -> bool {
        let (lo, hi) = FIT_BAND;
        (lo..=hi).contains(&self.infit) && (lo..=hi).contains(&self.outfit)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ItemFitStats {
    pub items: Vec<ItemFit>,
    /// Number of fitted probabilities that had to be clamped away from 0/1.
    pub clamped: usize,
}

fn fitted_probability(params: &TwoPlParams, item: usize, theta: f64, clamped: &mut usize) -> f64 {
    let q = params.prob(item, theta);
    if !(PROB_CLAMP..=1.0 - PROB_CLAMP).contains(&q) {
        *clamped += 1;
        q.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
    } else {
        q
    }
}

/// Outfit is the mean squared standardized residual; infit weights squared
/// residuals by the binomial variance.
pub fn infit_outfit(matrix: &ItemResponseMatrix, params: &TwoPlParams, theta: &[f64]) -> Result<ItemFitStats> {
    check_scores(matrix, params, theta)?;
    let mut clamped = 0;
    let items = (0..matrix.n_items())
        .map(|l| {
            let (mut z2, mut sq, mut var) = (0.0, 0.0, 0.0);
            for (row, &t) in matrix.rows().zip(theta) {
                let q = fitted_probability(params, l, t, &mut clamped);
                let r = f64::from(row[l]) - q;
                let v = q * (1.0 - q);
                z2 += r * r / v;
                sq += r * r;
                var += v;
            }
            ItemFit {
                infit: sq / var,
                outfit: z2 / matrix.n_rows() as f64,
            }
        })
        .collect();
    Ok(ItemFitStats { items, clamped })
}

fn check_scores(matrix: &ItemResponseMatrix, params: &TwoPlParams, theta: &[f64]) -> Result<()> {
    if theta.len() != matrix.n_rows() || params.n_items() != matrix.n_items() {
        return Err(Error::InvalidInput("scores or parameters do not match the matrix".into()));
    }
    Ok(())
}

/// Pearson correlation of an item column with the latent scores.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointMeasure {
    /// `None` when the column (or the score vector) is constant.
    pub correlation: Option<f64>,
    /// Nonpositive or undefined correlation: candidate for removal.
    pub flagged: bool,
}

pub fn point_measure_correlation(matrix: &ItemResponseMatrix, theta: &[f64]) -> Result<Vec<PointMeasure>> {
    if theta.len() != matrix.n_rows() {
        return Err(Error::InvalidInput("scores do not match the matrix".into()));
    }
    Ok((0..matrix.n_items())
        .map(|l| {
            let correlation = pearson(&matrix.column(l), theta);
            PointMeasure {
                correlation,
                flagged: correlation.is_none_or(|c| c <= 0.0),
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualPca {
    pub first_eigenvalue: f64,
    /// Fewer rows than items: the correlation matrix is rank deficient.
    pub rank_warning: bool,
}

impl ResidualPca {
    pub fn supports_unidimensionality(&self) -> bool {
        self.first_eigenvalue < UNIDIMENSIONAL_EIGENVALUE
    }
}

/// Largest eigenvalue of the item-by-item correlation matrix of standardized
/// residuals.
pub fn residual_pca_first_eigenvalue(
    matrix: &ItemResponseMatrix,
    params: &TwoPlParams,
    theta: &[f64],
) -> Result<ResidualPca> {
    check_scores(matrix, params, theta)?;
    let m = matrix.n_items();
    let n = matrix.n_rows();
    let mut clamped = 0;
    let z = DMatrix::from_fn(n, m, |k, l| {
        let q = fitted_probability(params, l, theta[k], &mut clamped);
        (f64::from(matrix.get(k, l)) - q) / libm::sqrt(q * (1.0 - q))
    });
    let columns: Vec<Vec<f64>> = (0..m).map(|l| z.column(l).iter().copied().collect()).collect();
    let corr = DMatrix::from_fn(m, m, |a, b| {
        if a == b {
            1.0
        } else {
            pearson(&columns[a], &columns[b]).unwrap_or(0.0)
        }
    });
    let eig = corr.symmetric_eigenvalues();
    Ok(ResidualPca {
        first_eigenvalue: eig.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        rank_warning: n < m,
    })
}

/// Per-item summary combining the fit statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct ItemDiagnostics {
    pub infit: f64,
    pub outfit: f64,
    pub point_measure: Option<f64>,
    pub outside_fit_band: bool,
    pub point_measure_flagged: bool,
}

/// The whole battery for one fitted matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ItemFitReport {
    pub cronbach_alpha: Option<f64>,
    pub items: Vec<ItemDiagnostics>,
    pub two_way: Vec<MarginCell>,
    pub three_way: Vec<MarginCell>,
    pub residual_pca: ResidualPca,
    pub clamped_probabilities: usize,
}

/// Runs every diagnostic on `matrix`, whose rows align with `fit.theta`.
pub fn item_fit_report(matrix: &ItemResponseMatrix, fit: &LatentFit) -> Result<ItemFitReport> {
    item_fit_report_with_scores(matrix, fit, &fit.theta)
}

/// As [`item_fit_report`] with externally supplied scores (for example the
/// respondent rows of a phantom-augmented fit).
pub fn item_fit_report_with_scores(matrix: &ItemResponseMatrix, fit: &LatentFit, theta: &[f64]) -> Result<ItemFitReport> {
    let fits = infit_outfit(matrix, &fit.params, theta)?;
    let pm = point_measure_correlation(matrix, theta)?;
    let items = fits
        .items
        .iter()
        .zip(&pm)
        .map(|(f, p)| ItemDiagnostics {
            infit: f.infit,
            outfit: f.outfit,
            point_measure: p.correlation,
            outside_fit_band: !f.within_band(),
            point_measure_flagged: p.flagged,
        })
        .collect();
    let three_way = if matrix.n_items() >= 3 {
        margin_residuals(matrix, &fit.params, &fit.quadrature, 3)?
    } else {
        Vec::new()
    };
    Ok(ItemFitReport {
        cronbach_alpha: cronbach_alpha(matrix).ok(),
        items,
        two_way: margin_residuals(matrix, &fit.params, &fit.quadrature, 2)?,
        three_way,
        residual_pca: residual_pca_first_eigenvalue(matrix, &fit.params, theta)?,
        clamped_probabilities: fits.clamped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ItemResponseMatrix;

    fn matrix(rows: Vec<Vec<u8>>) -> ItemResponseMatrix {
        ItemResponseMatrix::from_rows((0..rows.len() as u64).collect(), &rows).unwrap()
    }

    #[test]
    fn duplicated_columns_have_unit_alpha() {
        let m = matrix(vec![vec![1, 1], vec![0, 0], vec![1, 1], vec![0, 0], vec![1, 1]]);
        assert!((cronbach_alpha(&m).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_totals_have_undefined_alpha() {
        let m = matrix(vec![vec![1, 0], vec![0, 1]]);
        assert!(matches!(cronbach_alpha(&m), Err(Error::Undefined(_))));
    }

    #[test]
    fn infit_equals_outfit_under_equal_variances() {
        // Zero slopes and equal scores give identical q(1-q) for every unit.
        let params = TwoPlParams::new(vec![0.3, -0.2, 0.0], vec![0.0; 3]).unwrap();
        let m = matrix(vec![vec![1, 0, 1], vec![0, 0, 1], vec![1, 1, 0], vec![0, 1, 1]]);
        let stats = infit_outfit(&m, &params, &[0.0; 4]).unwrap();
        for f in stats.items {
            assert!((f.infit - f.outfit).abs() < 1e-12);
        }
    }

    #[test]
    fn rounded_expectations_are_underdispersed() {
        let params = TwoPlParams::new(vec![0.0; 3], vec![4.0; 3]).unwrap();
        let theta = [-2.0, -1.5, -1.0, 1.0, 1.5, 2.0];
        let rows: Vec<Vec<u8>> = theta
            .iter()
            .map(|&t| (0..3).map(|l| u8::from(params.prob(l, t) > 0.5)).collect())
            .collect();
        let stats = infit_outfit(&matrix(rows), &params, &theta).unwrap();
        assert!(stats.items.iter().all(|f| f.outfit < 1.0));
    }

    #[test]
    fn reversed_item_is_flagged() {
        let theta: Vec<f64> = (0..20).map(|i| f64::from(i) - 9.5).collect();
        let rows: Vec<Vec<u8>> = theta.iter().map(|&t| vec![u8::from(t > 0.0), u8::from(t < 0.0), 1]).collect();
        let pm = point_measure_correlation(&matrix(rows), &theta).unwrap();
        assert!(pm[0].correlation.unwrap() > 0.7 && !pm[0].flagged);
        assert!(pm[1].correlation.unwrap() < 0.0 && pm[1].flagged);
        assert!(pm[2].correlation.is_none() && pm[2].flagged);
    }

    #[test]
    fn residuals_are_nonnegative_and_expected_counts_sum_to_n() {
        let params = TwoPlParams::new(vec![0.5, -0.5, 0.0, 1.0], vec![1.0, 2.0, 0.5, 1.5]).unwrap();
        let quad = QuadratureRule::gauss_hermite(21).unwrap();
        let m = matrix(vec![
            vec![1, 1, 0, 1],
            vec![0, 0, 0, 1],
            vec![1, 0, 1, 1],
            vec![0, 1, 1, 0],
            vec![1, 1, 1, 1],
        ]);
        for order in [2, 3] {
            let cells = margin_residuals(&m, &params, &quad, order).unwrap();
            for table in cells.chunks(1 << order) {
                let total: f64 = table.iter().map(|c| c.expected).sum();
                assert!((total - 5.0).abs() < 1e-9);
                let observed: f64 = table.iter().map(|c| c.observed).sum();
                assert_eq!(observed, 5.0);
            }
            assert!(cells.iter().all(|c| c.residual.unwrap() >= 0.0));
        }
    }

    #[test]
    fn uncorrelated_residuals_give_unit_eigenvalue() {
        // q = 1/2 everywhere, so residuals are ±1 and these columns are orthogonal.
        let params = TwoPlParams::new(vec![0.0; 3], vec![0.0; 3]).unwrap();
        let m = matrix(vec![vec![1, 1, 1], vec![1, 0, 0], vec![0, 1, 0], vec![0, 0, 1]]);
        let pca = residual_pca_first_eigenvalue(&m, &params, &[0.0; 4]).unwrap();
        assert!((pca.first_eigenvalue - 1.0).abs() < 1e-12);
        assert!(pca.supports_unidimensionality());
    }

    #[test]
    fn residual_pca_flags_rank_deficiency() {
        let params = TwoPlParams::new(vec![0.0; 3], vec![1.0; 3]).unwrap();
        let m = matrix(vec![vec![1, 0, 1], vec![0, 1, 1]]);
        let pca = residual_pca_first_eigenvalue(&m, &params, &[0.0, 0.1]).unwrap();
        assert!(pca.rank_warning);
    }
}
