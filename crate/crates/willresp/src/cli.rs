//! Subcommand front end.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{ArgAction, Args, Parser, Subcommand, ValueEnum};
use willresp_core::propensity::augment_phantom;
use willresp_core::diagnostics::{cronbach_alpha, item_fit_report, item_fit_report_with_scores, ItemFitReport};
use willresp_core::estimators::three_phase_estimator;
use willresp_core::pipeline::{adjust, estimate, jackknife_variance, Adjustment};
use willresp_core::simulation::{
    build_population_abortion, gen_population_synthetic, MonteCarloOptions, Population, PopulationSpec,
    SimulationResult,
};
use willresp_core::{derive_indicators, fit_2pl_em, fit_rasch, ItemResponseMatrix, LatentFit, LatentModel, SurveySample};

use crate::config::RunConfig;
use crate::io::{load_binary_matrix, load_column, load_survey_csv, write_simulation_csv};
use crate::montecarlo::run_parallel;

#[derive(Debug, Parser)]
#[command(name = "willresp", version, about = "Latent-trait nonresponse weighting for survey totals")]
pub struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for every random draw.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for the Monte Carlo driver.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Log more to standard error (repeatable).
    #[arg(short, long, action = ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct SurveyArgs {
    /// Survey CSV with a header row.
    #[arg(long)]
    pub data: PathBuf,
    /// Population size N; required when the file has no pi column.
    #[arg(long)]
    pub population_size: Option<usize>,
    /// Column with explicit unit-response flags.
    #[arg(long)]
    pub respondent_column: Option<String>,
}

#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
pub struct MatrixSource {
    /// Survey CSV; the model is fitted to the respondents' response indicators.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// CSV of 0/1 item responses, fitted as is.
    #[arg(long)]
    pub matrix: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModelArg {
    #[value(name = "2pl")]
    TwoPl,
    Rasch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SettingArg {
    Abortion,
    Synthetic,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit the latent trait model and report item parameters.
    #[command(name = "fit-2pl")]
    Fit2pl {
        #[command(flatten)]
        source: MatrixSource,
        /// Population size N; required when a survey file has no pi column.
        #[arg(long)]
        population_size: Option<usize>,
        #[arg(long, value_enum)]
        model: Option<ModelArg>,
        /// CSV of item parameters.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Item fit diagnostics for the fitted latent model.
    Diagnose {
        #[command(flatten)]
        source: MatrixSource,
        /// Population size N; required when a survey file has no pi column.
        #[arg(long)]
        population_size: Option<usize>,
        /// Fit with the all-zero phantom row appended; statistics still cover the observed rows.
        #[arg(long)]
        with_phantom: bool,
        /// CSV of per-item statistics.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-unit latent scores, propensities and final weights.
    Weights {
        #[command(flatten)]
        survey: SurveyArgs,
        /// Per-unit CSV of scores, propensities and weights.
        #[arg(long)]
        out: PathBuf,
    },
    /// Point estimates of one item total.
    Estimate {
        #[command(flatten)]
        survey: SurveyArgs,
        /// Item number, counting from 1.
        #[arg(long)]
        item: usize,
        /// Column of known unit-response probabilities (default 1).
        #[arg(long)]
        p_column: Option<String>,
        /// Column of known item-response probabilities (default 1).
        #[arg(long)]
        q_column: Option<String>,
    },
    /// Jackknife variance and interval for the three-phase estimate.
    Variance {
        #[command(flatten)]
        survey: SurveyArgs,
        /// Item number, counting from 1.
        #[arg(long)]
        item: usize,
        /// Interval coverage level (default 0.95).
        #[arg(long)]
        level: Option<f64>,
        /// CSV of replicate weights, one column per successful replicate.
        #[arg(long)]
        replicates_out: Option<PathBuf>,
    },
    /// Monte Carlo study of the estimators.
    Simulate {
        #[arg(long, value_enum)]
        setting: SettingArg,
        /// Sample size.
        #[arg(long)]
        n: usize,
        /// Number of Monte Carlo replicates.
        #[arg(long = "M")]
        replicates: usize,
        /// Correlation between the target item and the latent score (synthetic).
        #[arg(long, default_value_t = 0.5)]
        rho: f64,
        /// Seed for the population draw; defaults to the run seed.
        #[arg(long)]
        population_seed: Option<u64>,
        /// Also compute jackknife interval coverage.
        #[arg(long)]
        coverage: bool,
        /// Binary item data for the abortion setting.
        #[arg(long)]
        data: Option<PathBuf>,
        /// CSV of per-estimator bias, variance, MSE and coverage.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

pub fn run(cli: Cli) -> Result<()> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    match cli.command {
        Command::Fit2pl {
            source,
            population_size,
            model,
            out,
        } => {
            if let Some(m) = model {
                config.fit.model = match m {
                    ModelArg::TwoPl => "2pl".into(),
                    ModelArg::Rasch => "rasch".into(),
                };
            }
            let matrix = load_matrix(&source, population_size, &config)?;
            let fit = fit_matrix(&matrix, &config)?;
            print_fit(&matrix, &fit);
            if let Some(path) = out {
                write_params(&path, &fit)?;
            }
        }
        Command::Diagnose {
            source,
            population_size,
            with_phantom,
            out,
        } => {
            let matrix = load_matrix(&source, population_size, &config)?;
            let report = if with_phantom {
                let fit = fit_matrix(&augment_phantom(&matrix)?, &config)?;
                item_fit_report_with_scores(&matrix, &fit, &fit.theta[..matrix.n_rows()])?
            } else {
                item_fit_report(&matrix, &fit_matrix(&matrix, &config)?)?
            };
            print_report(&report);
            if let Some(path) = out {
                write_report(&path, &report)?;
            }
        }
        Command::Weights { survey, out } => {
            let sample = load_sample(&survey, &config, &[])?;
            let adj = adjust(&sample, &config.pipeline_config()?)?;
            write_weights(&out, &sample, &adj)?;
            log::info!("wrote weights for {} units to {}", sample.len(), out.display());
        }
        Command::Estimate {
            survey,
            item,
            p_column,
            q_column,
        } => {
            let extra: Vec<String> = p_column.iter().chain(&q_column).cloned().collect();
            let sample = load_sample(&survey, &config, &extra)?;
            let j = item_index(&sample, item)?;
            let adj = adjust(&sample, &config.pipeline_config()?)?;
            let est = estimate(&sample, &adj, j)?;
            let known = |col: &Option<String>| -> Result<Vec<f64>> {
                match col {
                    Some(name) => Ok(load_column(&survey.data, name)?),
                    None => Ok(vec![1.0; sample.len()]),
                }
            };
            let given = three_phase_estimator(&sample, j, &known(&p_column)?, &known(&q_column)?)?;
            println!("item {item}: total estimates");
            println!("{:<10}{:>16}", "estimator", "estimate");
            match est.ht {
                Some(v) => println!("{:<10}{v:>16.4}", "HT"),
                None => println!("{:<10}{:>16}", "HT", "NA"),
            }
            println!("{:<10}{:>16.4}", "naive", est.naive);
            println!("{:<10}{:>16.4}", "pq", est.three_phase);
            println!("{:<10}{given:>16.4}", "pq_true");
        }
        Command::Variance {
            survey,
            item,
            level,
            replicates_out,
        } => {
            let sample = load_sample(&survey, &config, &[])?;
            let j = item_index(&sample, item)?;
            let level = level.unwrap_or(config.jackknife.level);
            let adj = adjust(&sample, &config.pipeline_config()?)?;
            let v = jackknife_variance(&sample, &adj, j, level, &config.jackknife_options())?;
            for (l, e) in v.replicates.failed.iter().zip(&v.replicates.failures) {
                log::warn!("replicate deleting unit {} excluded: {e}", sample.unit_ids()[*l]);
            }
            println!("item {item}");
            println!("estimate         {:.4}", v.estimate);
            println!("sqrt_variance    {:.4}", v.variance.sqrt());
            println!("interval ({:.0}%)  [{:.4}, {:.4}]", 100.0 * level, v.interval.0, v.interval.1);
            println!(
                "replicates       {} used, {} failed",
                v.replicates.deleted.len(),
                v.replicates.failed.len()
            );
            println!(
                "phases           unit {:?}, item {:?}",
                v.replicates.unit_phase, v.replicates.item_phase
            );
            if let Some(path) = replicates_out {
                write_replicates(&path, &sample, &v.replicates)?;
            }
        }
        Command::Simulate {
            setting,
            n,
            replicates,
            rho,
            population_seed,
            coverage,
            data,
            out,
        } => {
            let pop_seed = population_seed.unwrap_or(config.seed);
            let population = build_population(setting, rho, pop_seed, data.as_deref(), &config)?;
            let options = MonteCarloOptions {
                pipeline: config.pipeline_config()?,
                coverage,
                level: config.jackknife.level,
                jackknife: config.jackknife_options(),
                ..MonteCarloOptions::default()
            };
            let start = Instant::now();
            let result = run_parallel(&population, n, replicates, config.seed, &options, cli.threads)?;
            log::info!("{replicates} replicates in {:.1?}", start.elapsed());
            print_simulation(&result);
            if let Some(path) = out {
                let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
                write_simulation_csv(BufWriter::new(file), &result)?;
            }
        }
    }
    Ok(())
}

fn load_sample(survey: &SurveyArgs, config: &RunConfig, extra: &[String]) -> Result<SurveySample> {
    let mut schema = config.schema();
    if survey.population_size.is_some() {
        schema.population_size = survey.population_size;
    }
    if survey.respondent_column.is_some() {
        schema.respondent_column = survey.respondent_column.clone();
    }
    schema.ignore_columns.extend(extra.iter().cloned());
    load_survey_csv(&survey.data, &schema).with_context(|| format!("loading {}", survey.data.display()))
}

fn load_matrix(source: &MatrixSource, population_size: Option<usize>, config: &RunConfig) -> Result<ItemResponseMatrix> {
    if let Some(path) = &source.matrix {
        let rows = load_binary_matrix(path).with_context(|| format!("loading {}", path.display()))?;
        return Ok(ItemResponseMatrix::from_rows((1..=rows.len() as u64).collect(), &rows)?);
    }
    let path = source.data.as_ref().expect("clap enforces one source");
    let survey = SurveyArgs {
        data: path.clone(),
        population_size,
        respondent_column: None,
    };
    let sample = load_sample(&survey, config, &[])?;
    let indicators = derive_indicators(&sample)?;
    let respondents = sample.partition().respondents;
    Ok(indicators.select_rows(&respondents))
}

fn fit_matrix(matrix: &ItemResponseMatrix, config: &RunConfig) -> Result<LatentFit> {
    let fit_config = config.fit_config()?;
    let fit = match fit_config.model {
        LatentModel::TwoPl => fit_2pl_em(matrix, &fit_config)?,
        LatentModel::Rasch => fit_rasch(matrix, &fit_config)?,
    };
    if !fit.converged {
        log::warn!("EM stopped after {} iterations without converging", fit.iterations);
    }
    for l in fit.nonpositive_slopes() {
        log::warn!("item {} has a nonpositive slope", l + 1);
    }
    Ok(fit)
}

fn item_index(sample: &SurveySample, item: usize) -> Result<usize> {
    if item == 0 || item > sample.n_items() {
        bail!("item must be between 1 and {}", sample.n_items());
    }
    Ok(item - 1)
}

fn build_population(
    setting: SettingArg,
    rho: f64,
    seed: u64,
    data: Option<&Path>,
    config: &RunConfig,
) -> Result<Population> {
    match setting {
        SettingArg::Synthetic => Ok(gen_population_synthetic(&PopulationSpec::synthetic(rho, seed))?),
        SettingArg::Abortion => {
            let Some(path) = data else {
                bail!("the abortion setting needs --data with the 379×4 binary item file");
            };
            let rows = load_binary_matrix(path).with_context(|| format!("loading {}", path.display()))?;
            Ok(build_population_abortion(&rows, &PopulationSpec::abortion(seed), &config.fit_config()?)?)
        }
    }
}

fn create(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    let file = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(csv::Writer::from_writer(BufWriter::new(file)))
}

fn print_fit(matrix: &ItemResponseMatrix, fit: &LatentFit) {
    println!("units {}  items {}", matrix.n_rows(), matrix.n_items());
    println!(
        "loglik {:.6}  iterations {}  converged {}",
        fit.loglik, fit.iterations, fit.converged
    );
    match cronbach_alpha(matrix) {
        Ok(a) => println!("cronbach_alpha {a:.4}"),
        Err(e) => println!("cronbach_alpha NA ({e})"),
    }
    println!("{:<6}{:>12}{:>12}", "item", "intercept", "slope");
    for l in 0..fit.params.n_items() {
        println!("{:<6}{:>12.4}{:>12.4}", l + 1, fit.params.intercepts[l], fit.params.slopes[l]);
    }
}

fn write_params(path: &Path, fit: &LatentFit) -> Result<()> {
    let mut w = create(path)?;
    w.write_record(["item", "intercept", "slope"])?;
    for l in 0..fit.params.n_items() {
        w.write_record([
            (l + 1).to_string(),
            fit.params.intercepts[l].to_string(),
            fit.params.slopes[l].to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn print_report(report: &ItemFitReport) {
    match report.cronbach_alpha {
        Some(a) => println!("cronbach_alpha {a:.4}"),
        None => println!("cronbach_alpha NA"),
    }
    println!(
        "{:<6}{:>10}{:>10}{:>14}  flags",
        "item", "infit", "outfit", "point_measure"
    );
    for (l, d) in report.items.iter().enumerate() {
        let mut flags = Vec::new();
        if d.outside_fit_band {
            flags.push("fit");
        }
        if d.point_measure_flagged {
            flags.push("point-measure");
        }
        let pm = d.point_measure.map_or_else(|| "NA".to_string(), |c| format!("{c:.4}"));
        println!("{:<6}{:>10.4}{:>10.4}{:>14}  {}", l + 1, d.infit, d.outfit, pm, flags.join(","));
    }
    let range = |cells: &[willresp_core::diagnostics::MarginCell]| {
        let r: Vec<f64> = cells.iter().filter_map(|c| c.residual).collect();
        let lo = r.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        (lo, hi)
    };
    let (lo2, hi2) = range(&report.two_way);
    println!("two-way margin residuals in [{lo2:.3}, {hi2:.3}]");
    if !report.three_way.is_empty() {
        let (lo3, hi3) = range(&report.three_way);
        println!("three-way margin residuals in [{lo3:.3}, {hi3:.3}]");
    }
    println!(
        "residual PCA first eigenvalue {:.4}{}",
        report.residual_pca.first_eigenvalue,
        if report.residual_pca.supports_unidimensionality() {
            ""
        } else {
            "  (above 2: more than one dimension)"
        }
    );
    if report.clamped_probabilities > 0 {
        println!("clamped probabilities {}", report.clamped_probabilities);
    }
}

fn write_report(path: &Path, report: &ItemFitReport) -> Result<()> {
    let mut w = create(path)?;
    w.write_record(["item", "infit", "outfit", "point_measure", "outside_fit_band", "point_measure_flagged"])?;
    for (l, d) in report.items.iter().enumerate() {
        w.write_record([
            (l + 1).to_string(),
            d.infit.to_string(),
            d.outfit.to_string(),
            d.point_measure.map_or_else(String::new, |c| c.to_string()),
            d.outside_fit_band.to_string(),
            d.point_measure_flagged.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn write_weights(path: &Path, sample: &SurveySample, adj: &Adjustment) -> Result<()> {
    let m = sample.n_items();
    let mut w = create(path)?;
    let mut header = vec!["unit_id".to_string(), "theta_hat".into(), "p_hat".into()];
    header.extend((1..=m).map(|l| format!("q_hat_{l}")));
    header.extend((1..=m).map(|l| format!("w3_{l}")));
    w.write_record(&header)?;
    let theta = adj.stage_one.as_ref().map_or(&adj.theta, |s| &s.theta);
    for (k, t) in theta.iter().enumerate() {
        let mut row = vec![
            sample.unit_ids()[k].to_string(),
            t.to_string(),
            adj.unit_probs[k].to_string(),
        ];
        row.extend(adj.item_probs[k].iter().map(f64::to_string));
        row.extend((0..m).map(|l| {
            if sample.is_respondent(k) && sample.value(k, l).is_some() {
                (1.0 / (sample.pi()[k] * adj.unit_probs[k] * adj.item_probs[k][l])).to_string()
            } else {
                String::new()
            }
        }));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn write_replicates(
    path: &Path,
    sample: &SurveySample,
    reps: &willresp_core::variance::ReplicateWeights,
) -> Result<()> {
    let mut w = create(path)?;
    let mut header = vec!["unit_id".to_string(), "full".into()];
    header.extend(reps.deleted.iter().map(|&l| format!("drop_{}", sample.unit_ids()[l])));
    w.write_record(&header)?;
    for k in 0..sample.len() {
        let mut row = vec![sample.unit_ids()[k].to_string(), reps.full_weights[k].to_string()];
        row.extend(reps.weights.iter().map(|r| r[k].to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn print_simulation(result: &SimulationResult) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(
        out,
        "n {}  replicates {} ({} completed, {} failed)  seed {}  total {:.3}",
        result.n, result.replicates, result.completed, result.failed, result.seed, result.total
    );
    let _ = writeln!(
        out,
        "{:<9}{:>12}{:>10}{:>12}{:>14}{:>10}",
        "estimator", "B", "RB(%)", "sqrt_var", "MSE", "coverage"
    );
    for e in &result.estimators {
        let cov = e.coverage.map_or_else(String::new, |c| format!("{:.3}", c));
        let _ = writeln!(
            out,
            "{:<9}{:>12.3}{:>10.2}{:>12.3}{:>14.2}{:>10}",
            e.name,
            e.bias,
            100.0 * e.relative_bias,
            e.sqrt_var,
            e.mse,
            cov
        );
    }
    if let Some(s) = result.estimator("pq").and_then(|e| e.mean_sqrt_variance) {
        let _ = writeln!(
            out,
            "mean jackknife sqrt_variance {s:.3} ({} replicates without a variance estimate)",
            result.variance_failures
        );
    }
}
