//! Seeded, parallel experiment sweeps and their reporting.

pub mod bootstrap;
pub mod config;
pub mod garnet;
pub mod output;
pub mod policy_iteration;
pub mod training;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng::{derive_seed, stream};
use bootstrap::{bootstrap_ci, ConfidenceInterval};
use output::ExperimentRecord;

pub use config::{AlgorithmSpec, ModelInit, ModelLoss, PiConfig, SweepConfig, TrainingConfig};
pub use garnet::{run_garnet_cell, run_sweep, GarnetCell};
pub use output::{emit_results, read_results, ResultRow};
pub use policy_iteration::{run_pi_sweep, run_policy_iteration, PiCell};

/// Maps `run` over `tasks` on a dedicated pool of `jobs` threads and returns
/// the results in task order.
pub(crate) fn run_parallel<T, F>(jobs: usize, tasks: &[T], run: F) -> Result<Vec<ExperimentRecord>>
where
    T: Sync,
    F: Fn(&T) -> Result<ExperimentRecord> + Sync,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?;
    pool.install(|| tasks.par_iter().map(&run).collect())
}

/// Mean and bootstrap interval of one metric for one cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellSummary {
    pub tau: f64,
    pub rank: usize,
    pub algorithm: String,
    pub n: usize,
    pub failed: usize,
    pub interval: Option<ConfidenceInterval>,
}

/// Groups records by (τ, rank, algorithm) in first-appearance order and
/// bootstraps the final value of `metric` over problems. Failed records are
/// counted and left out of the interval.
pub fn summarize(records: &[ExperimentRecord], metric: &str, n_resamples: usize, seed: u64) -> Vec<CellSummary> {
    let mut cells: Vec<(CellSummary, Vec<f64>)> = Vec::new();
    for record in records {
        let position = cells.iter().position(|(c, _)| {
            c.tau.to_bits() == record.tau.to_bits() && c.rank == record.rank && c.algorithm == record.algorithm
        });
        let idx = position.unwrap_or_else(|| {
            cells.push((
                CellSummary {
                    tau: record.tau,
                    rank: record.rank,
                    algorithm: record.algorithm.clone(),
                    n: 0,
                    failed: 0,
                    interval: None,
                },
                Vec::new(),
            ));
            cells.len() - 1
        });
        let (summary, values) = &mut cells[idx];
        summary.n += 1;
        match record.final_metric(metric) {
            Some(v) if record.failure.is_none() && v.is_finite() => values.push(v),
            _ => summary.failed += 1,
        }
    }
    cells
        .into_iter()
        .enumerate()
        .map(|(i, (mut summary, values))| {
            let mut rng = stream(derive_seed(seed, &[i as u64]));
            summary.interval = bootstrap_ci(&values, 0.95, n_resamples, &mut rng).ok();
            summary
        })
        .collect()
}

/// One line per cell plus a failure count line.
pub fn format_summary(summaries: &[CellSummary], metric: &str) -> String {
    let mut out = String::new();
    for s in summaries {
        let stats = match &s.interval {
            Some(ci) => format!("mean {:.6e} ci95 [{:.6e}, {:.6e}]", ci.mean, ci.lower, ci.upper),
            None => "no interval".to_string(),
        };
        out.push_str(&format!(
            "tau={} rank={} algorithm={} n={} {metric}: {stats}\n",
            s.tau, s.rank, s.algorithm, s.n
        ));
    }
    let failed: usize = summaries.iter().map(|s| s.failed).sum();
    out.push_str(&format!("failed records: {failed}\n"));
    out
}
