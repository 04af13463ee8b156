//! Run settings read from a TOML file; command-line flags override them.

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::Deserialize;
use willresp_core::pipeline::PipelineConfig;
use willresp_core::propensity::{PropensityConfig, SeparationRemedy};
use willresp_core::variance::JackknifeOptions;
use willresp_core::{FitConfig, LatentModel, Scoring};

use crate::io::SurveySchema;

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitSection {
    pub quadrature_points: usize,
    pub tol: f64,
    pub max_iter: usize,
    /// `mode` or `mean`.
    pub scoring: String,
    /// `2pl` or `rasch`.
    pub model: String,
}

impl Default for FitSection {
    fn default() -> Self {
        let d = FitConfig::default();
        Self {
            quadrature_points: d.quadrature_points,
            tol: d.tol,
            max_iter: d.max_iter,
            scoring: "mode".into(),
            model: "2pl".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PropensitySection {
    /// `jitter` or `firth`.
    pub remedy: String,
    pub jitter_sd: f64,
    pub firth_fallback: bool,
    pub design_weighted: bool,
    pub p_min: f64,
    pub q_min: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for PropensitySection {
    fn default() -> Self {
        let d = PropensityConfig::default();
        Self {
            remedy: "jitter".into(),
            jitter_sd: 0.1,
            firth_fallback: d.firth_fallback,
            design_weighted: d.design_weighted,
            p_min: d.p_min,
            q_min: PipelineConfig::default().q_min,
            tol: d.tol,
            max_iter: d.max_iter,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub id_column: String,
    pub pi_column: Option<String>,
    pub respondent_column: Option<String>,
    pub item_columns: Vec<String>,
    pub missing: Vec<String>,
    pub population_size: Option<usize>,
}

impl Default for DataSection {
    fn default() -> Self {
        let d = SurveySchema::default();
        Self {
            id_column: d.id_column,
            pi_column: d.pi_column,
            respondent_column: d.respondent_column,
            item_columns: d.item_columns,
            missing: d.missing,
            population_size: d.population_size,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JackknifeSection {
    pub level: f64,
    pub max_failure_rate: f64,
    pub fix_infeasible_phases: bool,
}

impl Default for JackknifeSection {
    fn default() -> Self {
        let d = JackknifeOptions::default();
        Self {
            level: 0.95,
            max_failure_rate: d.max_failure_rate,
            fix_infeasible_phases: d.fix_infeasible_phases,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub fit: FitSection,
    pub propensity: PropensitySection,
    pub data: DataSection,
    pub jackknife: JackknifeSection,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn validate(&self) -> Result<()> {
        self.fit_config()?;
        self.propensity_config()?;
        for (name, v) in [("p_min", self.propensity.p_min), ("q_min", self.propensity.q_min)] {
            if !(v > 0.0 && v < 1.0) {
                bail!("{name} must lie in (0, 1), got {v}");
            }
        }
        if !(self.jackknife.level > 0.0 && self.jackknife.level < 1.0) {
            bail!("confidence level must lie in (0, 1)");
        }
        if self.fit.quadrature_points < 2 {
            bail!("at least two quadrature points are required");
        }
        Ok(())
    }

    pub fn fit_config(&self) -> Result<FitConfig> {
        let scoring = match self.fit.scoring.as_str() {
            "mode" => Scoring::Mode,
            "mean" => Scoring::Mean,
            other => bail!("unknown scoring {other:?}; expected mode or mean"),
        };
        let model = match self.fit.model.to_ascii_lowercase().as_str() {
            "2pl" => LatentModel::TwoPl,
            "rasch" => LatentModel::Rasch,
            other => bail!("unknown model {other:?}; expected 2pl or rasch"),
        };
        Ok(FitConfig {
            quadrature_points: self.fit.quadrature_points,
            tol: self.fit.tol,
            max_iter: self.fit.max_iter,
            scoring,
            model,
        })
    }

    pub fn propensity_config(&self) -> Result<PropensityConfig> {
        let p = &self.propensity;
        let remedy = match p.remedy.as_str() {
            "jitter" => SeparationRemedy::Jitter { sd: p.jitter_sd },
            "firth" => SeparationRemedy::Firth,
            other => bail!("unknown separation remedy {other:?}; expected jitter or firth"),
        };
        Ok(PropensityConfig {
            remedy,
            seed: self.seed,
            p_min: p.p_min,
            tol: p.tol,
            max_iter: p.max_iter,
            design_weighted: p.design_weighted,
            firth_fallback: p.firth_fallback,
        })
    }

    pub fn pipeline_config(&self) -> Result<PipelineConfig> {
        Ok(PipelineConfig {
            fit: self.fit_config()?,
            propensity: self.propensity_config()?,
            q_min: self.propensity.q_min,
        })
    }

    pub fn jackknife_options(&self) -> JackknifeOptions {
        JackknifeOptions {
            max_failure_rate: self.jackknife.max_failure_rate,
            fix_infeasible_phases: self.jackknife.fix_infeasible_phases,
            ..JackknifeOptions::default()
        }
    }

    pub fn schema(&self) -> SurveySchema {
        let d = &self.data;
        SurveySchema {
            id_column: d.id_column.clone(),
            pi_column: d.pi_column.clone(),
            respondent_column: d.respondent_column.clone(),
            item_columns: d.item_columns.clone(),
            ignore_columns: Vec::new(),
            missing: d.missing.clone(),
            population_size: d.population_size,
        }
    }
}
