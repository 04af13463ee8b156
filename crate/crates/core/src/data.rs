//! Sampling-framework data model: the drawn sample with its inclusion
//! probabilities, item values with missingness, and the derived binary
//! item-response indicators.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Minimum number of items for the latent trait model to be identifiable.
pub const MIN_ITEMS: usize = 3;

/// A drawn sample `s` with per-unit inclusion probabilities, item values
/// (possibly missing) and unit-response flags.
#[derive(Debug, Clone, PartialEq)]
pub struct SurveySample {
    unit_ids: Vec<u64>,
    pi: Vec<f64>,
    values: Vec<Option<f64>>,
    respondent: Vec<bool>,
    n_items: usize,
    population_size: usize,
}

impl SurveySample {
    /// Builds a validated sample.
    ///
    /// `rows` holds one vector of `m` item values per unit. When
    /// `respondent` is `None`, a unit is a respondent iff at least one of
    /// its item values is present.
    pub fn new(
        unit_ids: Vec<u64>,
        pi: Vec<f64>,
        rows: Vec<Vec<Option<f64>>>,
        respondent: Option<Vec<bool>>,
        population_size: usize,
    ) -> Result<Self> {
        let n = unit_ids.len();
        if pi.len() != n || rows.len() != n {
            return Err(Error::InvalidInput(format!(
                "length mismatch: {} ids, {} inclusion probabilities, {} rows",
                n,
                pi.len(),
                rows.len()
            )));
        }
        if n == 0 {
            return Err(Error::InvalidInput("empty sample".into()));
        }
        let n_items = rows[0].len();
        if n_items == 0 {
            return Err(Error::InvalidInput("no item columns".into()));
        }
        if population_size < n {
            return Err(Error::InvalidInput(format!(
                "population size {population_size} is smaller than sample size {n}"
            )));
        }
        for (k, &p) in pi.iter().enumerate() {
            if !(p > 0.0 && p <= 1.0) {
                return Err(Error::InvalidProbability { unit: k, value: p });
            }
        }
        let mut values = Vec::with_capacity(n * n_items);
        for (k, row) in rows.into_iter().enumerate() {
            if row.len() != n_items {
                return Err(Error::InvalidInput(format!(
                    "unit {k} has {} item values, expected {n_items}",
                    row.len()
                )));
            }
            if row.iter().flatten().any(|v| !v.is_finite()) {
                return Err(Error::InvalidInput(format!("unit {k} has a non-finite value")));
            }
            values.extend(row);
        }
        let respondent = match respondent {
            Some(flags) => {
                if flags.len() != n {
                    return Err(Error::InvalidInput("respondent flag length mismatch".into()));
                }
                for (k, &r) in flags.iter().enumerate() {
                    let row = &values[k * n_items..(k + 1) * n_items];
                    if !r && row.iter().any(Option::is_some) {
                        return Err(Error::InvalidInput(format!(
                            "unit {k} is flagged as a nonrespondent but has observed items"
                        )));
                    }
                }
                flags
            }
            None => values
                .chunks(n_items)
                .map(|row| row.iter().any(Option::is_some))
                .collect(),
        };
        Ok(Self {
            unit_ids,
            pi,
            values,
            respondent,
            n_items,
            population_size,
        })
    }

    /// Sample size `n`.
    pub fn len(&self) -> usize {
        self.unit_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.unit_ids.is_empty()
    }

    /// Number of items `m`.
    pub fn n_items(&self) -> usize {
        self.n_items
    }

    /// Population size `N`.
    pub fn population_size(&self) -> usize {
        self.population_size
    }

    pub fn unit_ids(&self) -> &[u64] {
        &self.unit_ids
    }

    pub fn pi(&self) -> &[f64] {
        &self.pi
    }

    pub fn respondent(&self) -> &[bool] {
        &self.respondent
    }

    pub fn is_respondent(&self, k: usize) -> bool {
        self.respondent[k]
    }

    pub fn value(&self, k: usize, item: usize) -> Option<f64> {
        self.values[k * self.n_items + item]
    }

    pub fn row(&self, k: usize) -> &[Option<f64>] {
        &self.values[k * self.n_items..(k + 1) * self.n_items]
    }

    /// Column of item `item` across all units.
    pub fn item_values(&self, item: usize) -> Vec<Option<f64>> {
        (0..self.len()).map(|k| self.value(k, item)).collect()
    }

    pub fn check_item(&self, item: usize) -> Result<()> {
        if item >= self.n_items {
            return Err(Error::InvalidInput(format!(
                "item index {item} out of range for {} items",
                self.n_items
            )));
        }
        Ok(())
    }

    /// Splits the sample into respondents, nonrespondents and per-item
    /// respondent sets.
    pub fn partition(&self) -> RespondentPartition {
        let respondents: Vec<usize> = (0..self.len()).filter(|&k| self.respondent[k]).collect();
        let nonrespondents = (0..self.len()).filter(|&k| !self.respondent[k]).collect();
        let item_respondents = (0..self.n_items)
            .map(|j| {
                respondents
                    .iter()
                    .copied()
                    .filter(|&k| self.value(k, j).is_some())
                    .collect()
            })
            .collect();
        RespondentPartition {
            respondents,
            nonrespondents,
            item_respondents,
        }
    }
}

/// Index sets `r`, `r̄` and `r_j` (positions into the sample).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RespondentPartition {
    pub respondents: Vec<usize>,
    pub nonrespondents: Vec<usize>,
    pub item_respondents: Vec<Vec<usize>>,
}

/// Binary item-response indicators `x_kl`, one row per unit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ItemResponseMatrix {
    unit_ids: Vec<u64>,
    n_items: usize,
    cells: Vec<u8>,
}

impl ItemResponseMatrix {
    /// Builds a matrix from explicit 0/1 rows.
    pub fn from_rows(unit_ids: Vec<u64>, rows: &[Vec<u8>]) -> Result<Self> {
        if unit_ids.len() != rows.len() {
            return Err(Error::InvalidInput("id/row count mismatch".into()));
        }
        let n_items = rows.first().map_or(0, Vec::len);
        if n_items == 0 {
            return Err(Error::InvalidInput("matrix has no items".into()));
        }
        let mut cells = Vec::with_capacity(rows.len() * n_items);
        for (k, row) in rows.iter().enumerate() {
            if row.len() != n_items {
                return Err(Error::InvalidInput(format!("row {k} has wrong length")));
            }
            if row.iter().any(|&x| x > 1) {
                return Err(Error::InvalidInput(format!("row {k} is not binary")));
            }
            cells.extend_from_slice(row);
        }
        Ok(Self {
            unit_ids,
            n_items,
            cells,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.unit_ids.len()
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn unit_ids(&self) -> &[u64] {
        &self.unit_ids
    }

    pub fn row(&self, k: usize) -> &[u8] {
        &self.cells[k * self.n_items..(k + 1) * self.n_items]
    }

    pub fn get(&self, k: usize, item: usize) -> u8 {
        self.cells[k * self.n_items + item]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[u8]> {
        self.cells.chunks(self.n_items)
    }

    pub fn column(&self, item: usize) -> Vec<f64> {
        self.rows().map(|r| f64::from(r[item])).collect()
    }

    /// Sub-matrix with the given rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let mut cells = Vec::with_capacity(rows.len() * self.n_items);
        for &k in rows {
            cells.extend_from_slice(self.row(k));
        }
        Self {
            unit_ids: rows.iter().map(|&k| self.unit_ids[k]).collect(),
            n_items: self.n_items,
            cells,
        }
    }

    /// Appends a row; used for the phantom respondent.
    pub(crate) fn push_row(&mut self, id: u64, row: &[u8]) {
        debug_assert_eq!(row.len(), self.n_items);
        self.unit_ids.push(id);
        self.cells.extend_from_slice(row);
    }

    pub fn is_all_ones(&self) -> bool {
        self.cells.iter().all(|&x| x == 1)
    }
}

/// Derives `x_kl = 1` iff `y_kl` is observed. Nonrespondent rows are all-zero.
pub fn derive_indicators(sample: &SurveySample) -> Result<ItemResponseMatrix> {
    if sample.n_items() < MIN_ITEMS {
        return Err(Error::TooFewItems {
            required: MIN_ITEMS,
            found: sample.n_items(),
        });
    }
    let cells = (0..sample.len())
        .flat_map(|k| sample.row(k).iter().map(|v| u8::from(v.is_some())))
        .collect();
    Ok(ItemResponseMatrix {
        unit_ids: sample.unit_ids().to_vec(),
        n_items: sample.n_items(),
        cells,
    })
}

/// Raw scores `S_k = Σ_l x_kl`.
pub fn raw_scores(matrix: &ItemResponseMatrix) -> Vec<usize> {
    matrix
        .rows()
        .map(|r| r.iter().map(|&x| usize::from(x)).sum())
        .collect()
}
