//! CSV survey files, binary item matrices and result tables.

use std::io::{Read, Write};
use std::path::Path;

use thiserror::Error;
use willresp_core::data::MIN_ITEMS;
use willresp_core::simulation::SimulationResult;
use willresp_core::SurveySample;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot open {path}")]
    Open { path: String, source: std::io::Error },
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("schema: {0}")]
    Schema(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Model(#[from] willresp_core::Error),
}

/// Which columns of a survey file hold what.
#[derive(Debug, Clone, PartialEq)]
pub struct SurveySchema {
    pub id_column: String,
    /// Inclusion probabilities; when absent every unit gets `n/N`.
    pub pi_column: Option<String>,
    /// Explicit unit-response flags (`1/0`, `true/false`).
    pub respondent_column: Option<String>,
    /// Item columns in order; empty means every column not named above or
    /// in `ignore_columns`.
    pub item_columns: Vec<String>,
    pub ignore_columns: Vec<String>,
    /// Cell values that mean "missing".
    pub missing: Vec<String>,
    /// `N`. Required without a pi column; otherwise defaults to `Σ 1/π`.
    pub population_size: Option<usize>,
}

impl Default for SurveySchema {
    fn default() -> Self {
        Self {
            id_column: "unit_id".into(),
            pi_column: Some("pi".into()),
            respondent_column: None,
            item_columns: Vec::new(),
            ignore_columns: Vec::new(),
            missing: vec![String::new(), "NA".into()],
            population_size: None,
        }
    }
}

fn open(path: &Path) -> Result<std::fs::File, DataError> {
    std::fs::File::open(path).map_err(|source| DataError::Open {
        path: path.display().to_string(),
        source,
    })
}

fn line_of(record: &csv::StringRecord) -> u64 {
    record.position().map_or(0, csv::Position::line)
}

fn parse_flag(cell: &str, line: u64) -> Result<bool, DataError> {
    match cell.trim().to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" => Ok(true),
        "0" | "false" | "no" => Ok(false),
        other => Err(DataError::Parse {
            line,
            message: format!("respondent flag {other:?} is not 1/0 or true/false"),
        }),
    }
}

pub fn load_survey_csv(path: &Path, schema: &SurveySchema) -> Result<SurveySample, DataError> {
    read_survey(open(path)?, schema)
}

/// Parses a survey table with a header row.
pub fn read_survey<R: Read>(reader: R, schema: &SurveySchema) -> Result<SurveySample, DataError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header = rdr.headers()?.clone();
    let find = |name: &str| header.iter().position(|h| h == name);
    let id_idx = find(&schema.id_column)
        .ok_or_else(|| DataError::Schema(format!("missing id column {:?}", schema.id_column)))?;
    let pi_idx = schema.pi_column.as_deref().and_then(find);
    let resp_idx = match &schema.respondent_column {
        Some(name) => Some(find(name).ok_or_else(|| DataError::Schema(format!("missing respondent column {name:?}")))?),
        None => None,
    };
    let item_idx: Vec<usize> = if schema.item_columns.is_empty() {
        (0..header.len())
            .filter(|&i| i != id_idx && Some(i) != pi_idx && Some(i) != resp_idx)
            .filter(|&i| !schema.ignore_columns.iter().any(|c| c == &header[i]))
            .collect()
    } else {
        schema
            .item_columns
            .iter()
            .map(|name| find(name).ok_or_else(|| DataError::Schema(format!("missing item column {name:?}"))))
            .collect::<Result<_, _>>()?
    };
    if item_idx.len() < MIN_ITEMS {
        return Err(DataError::Schema(format!(
            "{} item columns; at least {MIN_ITEMS} are required",
            item_idx.len()
        )));
    }

    let (mut ids, mut pis, mut rows, mut flags) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for record in rdr.records() {
        let record = record?;
        let line = line_of(&record);
        let cell = |i: usize| record.get(i).unwrap_or("");
        let parse_err = |what: &str, v: &str| DataError::Parse {
            line,
            message: format!("{what} {v:?} is not a number"),
        };
        ids.push(cell(id_idx).parse::<u64>().map_err(|_| parse_err("unit id", cell(id_idx)))?);
        if let Some(i) = pi_idx {
            let p: f64 = cell(i).parse().map_err(|_| parse_err("inclusion probability", cell(i)))?;
            if !(p > 0.0 && p <= 1.0) {
                return Err(DataError::Parse {
                    line,
                    message: format!("inclusion probability {p} is not in (0, 1]"),
                });
            }
            pis.push(p);
        }
        if let Some(i) = resp_idx {
            flags.push(parse_flag(cell(i), line)?);
        }
        let row = item_idx
            .iter()
            .map(|&i| {
                let v = cell(i);
                if schema.missing.iter().any(|m| m == v) {
                    Ok(None)
                } else {
                    v.parse::<f64>().map(Some).map_err(|_| parse_err("item value", v))
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        rows.push(row);
    }
    let n = ids.len();
    if n == 0 {
        return Err(DataError::Schema("no data rows".into()));
    }
    let population_size = match (schema.population_size, pi_idx) {
        (Some(size), _) => size,
        (None, Some(_)) => (pis.iter().map(|p| 1.0 / p).sum::<f64>().round() as usize).max(n),
        (None, None) => {
            return Err(DataError::Schema(
                "without a pi column the population size must be given".into(),
            ))
        }
    };
    if pi_idx.is_none() {
        pis = vec![n as f64 / population_size as f64; n];
    }
    let respondent = resp_idx.map(|_| flags);
    Ok(SurveySample::new(ids, pis, rows, respondent, population_size)?)
}

/// Reads one numeric column by name, in row order.
pub fn load_column(path: &Path, name: &str) -> Result<Vec<f64>, DataError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(open(path)?);
    let idx = rdr
        .headers()?
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| DataError::Schema(format!("missing column {name:?}")))?;
    rdr.records()
        .map(|record| {
            let record = record?;
            let v = record.get(idx).unwrap_or("");
            v.parse().map_err(|_| DataError::Parse {
                line: line_of(&record),
                message: format!("{name} value {v:?} is not a number"),
            })
        })
        .collect()
}

/// Reads a 0/1 item matrix with a header row. A leading column is taken as
/// a row label and dropped when its header is empty or `id`/`unit_id`.
pub fn load_binary_matrix(path: &Path) -> Result<Vec<Vec<u8>>, DataError> {
    read_binary_matrix(open(path)?)
}

pub fn read_binary_matrix<R: Read>(reader: R) -> Result<Vec<Vec<u8>>, DataError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header = rdr.headers()?.clone();
    let skip = usize::from(matches!(
        header.get(0).map(str::to_ascii_lowercase).as_deref(),
        Some("" | "id" | "unit_id")
    ));
    let m = header.len() - skip;
    if m < MIN_ITEMS {
        return Err(DataError::Schema(format!("{m} item columns; at least {MIN_ITEMS} are required")));
    }
    let mut rows = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let line = line_of(&record);
        let row = record
            .iter()
            .skip(skip)
            .map(|v| match v.parse::<f64>() {
                Ok(0.0) => Ok(0),
                Ok(1.0) => Ok(1),
                _ => Err(DataError::Parse {
                    line,
                    message: format!("item value {v:?} is not 0 or 1"),
                }),
            })
            .collect::<Result<Vec<u8>, _>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(DataError::Schema("no data rows".into()));
    }
    Ok(rows)
}

/// Writes the per-estimator simulation summary with relative bias as a fraction.
pub fn write_simulation_csv<W: Write>(writer: W, result: &SimulationResult) -> Result<(), DataError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["estimator", "B", "RB", "sqrt_var", "MSE", "coverage"])?;
    for e in &result.estimators {
        w.write_record([
            e.name.to_string(),
            e.bias.to_string(),
            e.relative_bias.to_string(),
            e.sqrt_var.to_string(),
            e.mse.to_string(),
            e.coverage.map_or_else(String::new, |c| c.to_string()),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}
