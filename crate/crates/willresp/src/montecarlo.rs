//! Parallel Monte Carlo driver. Replicate `i` always uses substream `i`, so
//! results do not depend on the thread count.

use anyhow::{Context, Result};
use rayon::prelude::*;
use willresp_core::simulation::{run_replicate, summarize, MonteCarloOptions, Population, SimulationResult};

pub fn run_parallel(
    population: &Population,
    n: usize,
    replicates: usize,
    seed: u64,
    options: &MonteCarloOptions,
    threads: Option<usize>,
) -> Result<SimulationResult> {
    let work = || {
        (0..replicates as u64)
            .into_par_iter()
            .map(|i| run_replicate(population, n, seed, i, options))
            .collect::<Vec<_>>()
    };
    let outcomes = match threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .context("building the worker pool")?
            .install(work),
        None => work(),
    };
    for (i, o) in outcomes.iter().enumerate() {
        match o {
            Err(e) => log::warn!("replicate {i} failed: {e}"),
            Ok(r) => {
                if let Some(e) = &r.variance_error {
                    log::debug!("replicate {i}: no variance estimate: {e}");
                }
            }
        }
    }
    Ok(summarize(&outcomes, population.target_total(), n, seed, options.max_failure_rate)?)
}
