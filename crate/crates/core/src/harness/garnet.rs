//! Value-estimation sweeps on random Garnet problems.

use std::time::Instant;

use log::{debug, warn};

use super::config::{AlgorithmSpec, ModelInit, SweepConfig, TrainingConfig};
use super::output::ExperimentRecord;
use super::training::{Learner, TrainingProblem};
use super::run_parallel;
use crate::envs::{generate_garnet, GarnetSpec};
use crate::error::Result;
use crate::mdp::{exact_value, FiniteMdp};
use crate::model::LowRankModel;
use crate::rng::{derive_seed, stream};

const GARNET_LABEL: u64 = 1;
const MODEL_LABEL: u64 = 2;

/// One cell of the sweep grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GarnetCell {
    pub temperature: f64,
    pub rank: usize,
    pub algorithm: AlgorithmSpec,
}

/// Seed of problem `problem_index`; shared by every temperature, rank and
/// algorithm so that cells compare the same problems.
pub fn problem_seed(master_seed: u64, problem_index: usize) -> u64 {
    derive_seed(master_seed, &[GARNET_LABEL, problem_index as u64])
}

fn model_seed(master_seed: u64, problem_index: usize, rank: usize) -> u64 {
    derive_seed(master_seed, &[MODEL_LABEL, problem_index as u64, rank as u64])
}

pub fn garnet_for(config: &SweepConfig, temperature: f64, problem_index: usize) -> Result<FiniteMdp> {
    generate_garnet(&GarnetSpec {
        n_states: config.garnet.n_states,
        n_successors: config.garnet.n_successors,
        temperature,
        discount: config.garnet.discount,
        seed: problem_seed(config.master_seed, problem_index),
    })
}

/// Initial model for a run. Random initializations depend only on the problem
/// index and rank, so every algorithm starts from the same parameters.
pub fn initial_model(
    training: &TrainingConfig,
    mdp: &FiniteMdp,
    rank: usize,
    seed: u64,
) -> Result<LowRankModel> {
    let n = mdp.n_states();
    match training.model_init {
        ModelInit::Random => LowRankModel::init(n, n, rank, training.init_scale, &mut stream(seed)),
        ModelInit::Sharpened => {
            let targets: Vec<usize> = (0..n)
                .map(|x| {
                    let row = mdp.row(x);
                    (0..n).fold(0, |best, y| if row[y] > row[best] { y } else { best })
                })
                .collect();
            LowRankModel::sharpened(n, &targets, rank, training.sharpen_scale)
        }
    }
}

/// Trains one algorithm on one problem and reports the value error.
pub fn run_garnet_cell(config: &SweepConfig, cell: &GarnetCell, problem_index: usize) -> Result<ExperimentRecord> {
    let started = Instant::now();
    let mdp = garnet_for(config, cell.temperature, problem_index)?;
    let exact = exact_value(&mdp)?;
    let model = initial_model(
        &config.training,
        &mdp,
        cell.rank,
        model_seed(config.master_seed, problem_index, cell.rank),
    )?;
    let mut learner = Learner::new(model, &config.training);
    let problem = TrainingProblem::evaluation(mdp);
    let outcome = learner.train(&problem, &cell.algorithm, &config.training);

    let (value_mse, failure) = match outcome {
        Ok(()) => {
            let mse = learner
                .values
                .values
                .iter()
                .zip(&exact)
                .map(|(v, e)| (v - e).powi(2))
                .sum::<f64>()
                / exact.len() as f64;
            (mse, None)
        }
        Err(err) => {
            warn!(
                "{} diverged on problem {problem_index} (tau {}, rank {}): {err}",
                cell.algorithm.label, cell.temperature, cell.rank
            );
            (f64::NAN, Some(err.to_string()))
        }
    };
    debug!(
        "problem {problem_index} tau {} rank {} {}: mse {value_mse}",
        cell.temperature, cell.rank, cell.algorithm.label
    );
    Ok(ExperimentRecord {
        problem_seed: problem_seed(config.master_seed, problem_index),
        tau: cell.temperature,
        rank: cell.rank,
        algorithm: cell.algorithm.label.clone(),
        metrics: vec![("value_mse".into(), value_mse, learner.steps_taken() as u64)],
        wall_time_secs: started.elapsed().as_secs_f64(),
        failure,
    })
}

/// Cells in output order: temperature, then rank, then algorithm.
pub fn garnet_cells(config: &SweepConfig) -> Vec<GarnetCell> {
    let mut cells = Vec::new();
    for &temperature in &config.temperature_grid {
        for &rank in &config.rank_grid {
            for algorithm in &config.algorithms {
                cells.push(GarnetCell {
                    temperature,
                    rank,
                    algorithm: algorithm.clone(),
                });
            }
        }
    }
    cells
}

/// Runs every (cell, problem) pair on `jobs` worker threads. Records come back
/// in task order regardless of scheduling.
pub fn run_sweep(config: &SweepConfig, jobs: usize) -> Result<Vec<ExperimentRecord>> {
    config.validate()?;
    let cells = garnet_cells(config);
    let tasks: Vec<(usize, usize)> = (0..cells.len())
        .flat_map(|c| (0..config.n_problems).map(move |p| (c, p)))
        .collect();
    run_parallel(jobs, &tasks, |&(c, p)| run_garnet_cell(config, &cells[c], p))
}
