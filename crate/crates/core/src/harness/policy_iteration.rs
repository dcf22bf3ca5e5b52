//! Approximate policy iteration on the slippery cliffwalk.
//!
//! Each round trains an action-conditioned model (one context per
//! state-action pair, all pairs weighted equally) together with the value of
//! the current policy, then acts greedily on the learned one-step lookahead
//! `r(x) + γ Σ_y p̂(y | x, a) V̂(y)`. The policy is scored by its exact value
//! at the start state in the true MDP.

use std::time::Instant;

use log::warn;
use nalgebra::DMatrix;

use super::config::{AlgorithmSpec, PiConfig};
use super::output::ExperimentRecord;
use super::run_parallel;
use super::training::{Learner, TrainingProblem};
use crate::envs::{generate_cliffwalk, CliffwalkSpec, CLIFF_START};
use crate::error::Result;
use crate::mdp::{deterministic_policy, exact_value, greedy_actions, induce_policy_kernel, uniform_policy, ControlMdp};
use crate::model::LowRankModel;
use crate::rng::{derive_seed, stream};

const PI_LABEL: u64 = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct PiCell {
    pub move_prob: f64,
    pub rank: usize,
    pub algorithm: AlgorithmSpec,
}

pub fn pi_problem_seed(master_seed: u64, problem_index: usize) -> u64 {
    derive_seed(master_seed, &[PI_LABEL, problem_index as u64])
}

/// `(n · A) × n` matrix whose row `x · A + a` is `P(· | x, a)`.
pub fn state_action_rows(cmdp: &ControlMdp) -> DMatrix<f64> {
    let n = cmdp.n_states();
    let actions = cmdp.n_actions();
    DMatrix::from_fn(n * actions, n, |context, y| cmdp.transition(context % actions)[(context / actions, y)])
}

/// Greedy actions under the learned model's one-step lookahead.
pub fn greedy_model_actions(cmdp: &ControlMdp, model: &LowRankModel, values: &[f64]) -> Vec<usize> {
    let probs = model.column_probs();
    let actions = cmdp.n_actions();
    let q: Vec<Vec<f64>> = (0..cmdp.n_states())
        .map(|x| {
            (0..actions)
                .map(|a| {
                    let pv: f64 = probs.column(x * actions + a).iter().zip(values).map(|(p, v)| p * v).sum();
                    cmdp.reward()[x] + cmdp.discount() * pv
                })
                .collect()
        })
        .collect();
    greedy_actions(&q)
}

/// Per-round returns of approximate policy iteration; entry 0 is the uniform
/// starting policy.
pub fn run_policy_iteration(config: &PiConfig, cell: &PiCell, problem_index: usize) -> Result<ExperimentRecord> {
    let started = Instant::now();
    let seed = pi_problem_seed(config.master_seed, problem_index);
    let cmdp = generate_cliffwalk(&CliffwalkSpec {
        move_prob: cell.move_prob,
        discount: config.cliffwalk.discount,
    })?;
    let n = cmdp.n_states();
    let actions = cmdp.n_actions();
    let true_rows = state_action_rows(&cmdp);
    let model_seed = derive_seed(seed, &[cell.rank as u64]);
    let model = LowRankModel::init(n, n * actions, cell.rank, config.training.init_scale, &mut stream(model_seed))?;
    let mut learner = Learner::new(model, &config.training);

    let mut policy = uniform_policy(n, actions);
    let mut metrics = Vec::with_capacity(config.n_iterations + 1);
    let mut failure = None;
    for iteration in 0..=config.n_iterations {
        let induced = induce_policy_kernel(&cmdp, &policy)?;
        metrics.push(("return".to_string(), exact_value(&induced)?[CLIFF_START], iteration as u64));
        if iteration == config.n_iterations {
            break;
        }
        let problem = TrainingProblem {
            mdp: induced,
            policy: policy.clone(),
            true_rows: true_rows.clone(),
        };
        if let Err(err) = learner.train(&problem, &cell.algorithm, &config.training) {
            warn!(
                "{} diverged in round {iteration} (move_prob {}, rank {}): {err}",
                cell.algorithm.label, cell.move_prob, cell.rank
            );
            for later in iteration + 1..=config.n_iterations {
                metrics.push(("return".to_string(), f64::NAN, later as u64));
            }
            failure = Some(err.to_string());
            break;
        }
        let improved = greedy_model_actions(&cmdp, &learner.model, &learner.values.values);
        policy = deterministic_policy(&improved, actions);
    }

    Ok(ExperimentRecord {
        problem_seed: seed,
        tau: cell.move_prob,
        rank: cell.rank,
        algorithm: cell.algorithm.label.clone(),
        metrics,
        wall_time_secs: started.elapsed().as_secs_f64(),
        failure,
    })
}

pub fn pi_cells(config: &PiConfig) -> Vec<PiCell> {
    let mut cells = Vec::new();
    for &move_prob in &config.move_prob_grid {
        for &rank in &config.rank_grid {
            for algorithm in &config.algorithms {
                cells.push(PiCell {
                    move_prob,
                    rank,
                    algorithm: algorithm.clone(),
                });
            }
        }
    }
    cells
}

pub fn run_pi_sweep(config: &PiConfig, jobs: usize) -> Result<Vec<ExperimentRecord>> {
    config.validate()?;
    let cells = pi_cells(config);
    let tasks: Vec<(usize, usize)> = (0..cells.len())
        .flat_map(|c| (0..config.n_problems).map(move |p| (c, p)))
        .collect();
    run_parallel(jobs, &tasks, |&(c, p)| run_policy_iteration(config, &cells[c], p))
}
