//! The shared model and value training loop.
//!
//! A [`TrainingProblem`] describes the model's contexts: one per
//! state-action pair, with a single action for policy-evaluation problems.
//! Context `x · A + a` predicts the successor of `x` under action `a`.

use nalgebra::DMatrix;

use super::config::{AlgorithmSpec, ModelLoss, TrainingConfig};
use crate::error::{Error, Result};
use crate::losses::expected::{expected_vaml_loss_with_probs, kl_loss_batch_with_probs, TargetMoments};
use crate::losses::{expected_td_loss, ValueUpdate};
use crate::mdp::{FiniteMdp, ValueTable};
use crate::model::{Adam, LowRankModel, OptimizerState};

#[derive(Debug, Clone)]
pub struct TrainingProblem {
    /// Policy-induced chain used for rewards, discount and bootstrapped
    /// targets.
    pub mdp: FiniteMdp,
    /// `n × A` policy.
    pub policy: DMatrix<f64>,
    /// True successor distribution per context.
    pub true_rows: DMatrix<f64>,
}

impl TrainingProblem {
    /// A policy-evaluation problem whose contexts are the states.
    pub fn evaluation(mdp: FiniteMdp) -> Self {
        let n = mdp.n_states();
        Self {
            true_rows: mdp.transition().clone(),
            policy: DMatrix::from_element(n, 1, 1.0),
            mdp,
        }
    }

    pub fn n_actions(&self) -> usize {
        self.policy.ncols()
    }

    /// Environment distribution of `x^(m)` per context.
    fn env_rows(&self, m: usize) -> DMatrix<f64> {
        let mut rows = self.true_rows.clone();
        for _ in 1..m {
            rows = &rows * self.mdp.transition();
        }
        rows
    }

    /// `r(x) + γ Σ_a π(a|x) Σ_y p̂(y | x, a) v(y)`.
    pub fn model_backup(&self, model: &LowRankModel, v: &[f64]) -> Vec<f64> {
        self.backup_with_probs(&model.column_probs(), v)
    }

    fn backup_with_probs(&self, probs: &DMatrix<f64>, v: &[f64]) -> Vec<f64> {
        let actions = self.n_actions();
        let gamma = self.mdp.discount();
        (0..self.mdp.n_states())
            .map(|x| {
                let expected: f64 = (0..actions)
                    .map(|a| {
                        let context = x * actions + a;
                        let pv: f64 = probs.column(context).iter().zip(v).map(|(p, v)| p * v).sum();
                        self.policy[(x, a)] * pv
                    })
                    .sum();
                self.mdp.reward()[x] + gamma * expected
            })
            .collect()
    }
}

/// Model, value table and both optimizers for one run.
#[derive(Debug, Clone)]
pub struct Learner {
    pub model: LowRankModel,
    pub values: ValueTable,
    model_optimizer: OptimizerState,
    value_optimizer: Adam,
    steps_taken: usize,
}

impl Learner {
    pub fn new(model: LowRankModel, training: &TrainingConfig) -> Self {
        let n = model.n_states();
        Self {
            model_optimizer: OptimizerState::new(&model, training.model_optimizer),
            value_optimizer: Adam::new(n, training.value_optimizer),
            values: ValueTable::zeros(n),
            model,
            steps_taken: 0,
        }
    }

    pub fn steps_taken(&self) -> usize {
        self.steps_taken
    }

    /// Runs `training.steps` joint updates. Returns an error as soon as a loss
    /// or gradient becomes non-finite.
    pub fn train(&mut self, problem: &TrainingProblem, algorithm: &AlgorithmSpec, training: &TrainingConfig) -> Result<()> {
        let spec = algorithm.loss_spec();
        let n = self.model.n_states();
        if problem.true_rows.nrows() != self.model.n_contexts() || problem.true_rows.ncols() != n {
            return Err(Error::Dimension("model contexts do not match the problem".into()));
        }
        let env_cols = problem.env_rows(spec.m.max(1)).transpose();
        let true_cols = problem.true_rows.transpose();
        let mut bootstrapped: Option<TargetMoments> = None;

        for step in 0..training.steps {
            if step % training.target_period == 0 {
                self.values.sync_target();
                bootstrapped = None;
            }
            let probs = self.model.column_probs();
            let (model_loss, model_grads, joint_grads) = match algorithm.model_loss {
                ModelLoss::Kl => {
                    let (loss, grads) = kl_loss_batch_with_probs(&self.model, &probs, &true_cols)?;
                    (loss, Some(grads), None)
                }
                ModelLoss::Vaml => {
                    let fixed;
                    let targets = if spec.b == 0 {
                        fixed = TargetMoments::fixed(&self.values.values);
                        &fixed
                    } else {
                        if bootstrapped.is_none() {
                            bootstrapped = Some(TargetMoments::bootstrapped(
                                &problem.mdp,
                                &self.values.target_values,
                                spec.b,
                            )?);
                        }
                        bootstrapped.as_ref().expect("filled above")
                    };
                    let report = expected_vaml_loss_with_probs(
                        &self.model,
                        &probs,
                        &env_cols,
                        &self.values.values,
                        targets,
                        &spec,
                    )?;
                    (report.loss_value, report.model_grads, report.value_grads)
                }
            };
            if !model_loss.is_finite() {
                return Err(Error::NonFinite(format!("model loss at step {step}")));
            }

            let value_grads = match spec.value_update {
                ValueUpdate::TdModelBased => {
                    let targets = problem.backup_with_probs(&probs, &self.values.target_values);
                    let (loss, grads) = expected_td_loss(&self.values.values, &targets)?;
                    if !loss.is_finite() {
                        return Err(Error::NonFinite(format!("value loss at step {step}")));
                    }
                    Some(grads)
                }
                ValueUpdate::MuzeroJoint => joint_grads,
                ValueUpdate::None => None,
            };

            if let Some(grads) = model_grads {
                self.model_optimizer.step(&mut self.model, &grads)?;
            }
            if let Some(grads) = value_grads {
                self.value_optimizer.update(&mut self.values.values, &grads)?;
            }
            if !self.model.is_finite() || !self.values.is_finite() {
                return Err(Error::NonFinite(format!("parameters at step {step}")));
            }
            self.steps_taken += 1;
        }
        Ok(())
    }
}
