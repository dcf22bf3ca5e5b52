//! Losses computed from concrete model and environment samples.
//!
//! Model gradients use the score-function estimator
//! `L · Σ_i ∇ log p̂(path_i)`, which is unbiased for the gradient of the
//! expected loss because the loss depends on the model only through the
//! sampled paths.

use nalgebra::DMatrix;
use rand::Rng;

use super::{itervaml_sampled, sampled_loss_value_grad, variance_estimate, LossReport, LossSpec, ValueUpdate};
use crate::error::{Error, Result};
use crate::mdp::{FiniteMdp, Trajectory};
use crate::model::{sample_model, LowRankModel};

/// MuZero-style `(m, b)` loss from one environment rollout and `k` model
/// rollouts. Requires `m >= 1` and `b >= 1`.
pub fn muzero_loss<R: Rng + ?Sized>(
    model: &LowRankModel,
    mdp: &FiniteMdp,
    values: &[f64],
    target_values: &[f64],
    spec: &LossSpec,
    trajectory: &Trajectory,
    rng: &mut R,
) -> Result<LossReport> {
    if spec.m == 0 || spec.b == 0 {
        return Err(Error::InvalidParameter(format!(
            "the MuZero loss needs m >= 1 and b >= 1, got m={} b={}",
            spec.m, spec.b
        )));
    }
    sampled_vaml_loss(model, mdp, values, target_values, spec, trajectory, rng)
}

/// Any `(m, b)` member with `m >= 1` evaluated on samples. With `b = 0` the
/// target is `V_tar(x^(m))`.
pub fn sampled_vaml_loss<R: Rng + ?Sized>(
    model: &LowRankModel,
    mdp: &FiniteMdp,
    values: &[f64],
    target_values: &[f64],
    spec: &LossSpec,
    trajectory: &Trajectory,
    rng: &mut R,
) -> Result<LossReport> {
    spec.validate()?;
    if spec.m == 0 {
        return Err(Error::InvalidParameter("m must be at least 1".into()));
    }
    let n = mdp.n_states();
    if model.n_states() != n || values.len() != n || target_values.len() != n {
        return Err(Error::Dimension("model, mdp and value tables disagree on n".into()));
    }
    let horizon = spec.m + spec.b;
    if trajectory.len() < horizon {
        return Err(Error::TrajectoryTooShort {
            needed: horizon,
            got: trajectory.len(),
        });
    }

    let gamma = mdp.discount();
    let mut target = 0.0;
    let mut scale = 1.0;
    for step in 0..spec.b {
        target += scale * trajectory.rewards[spec.m + step];
        scale *= gamma;
    }
    target += scale * target_values[trajectory.states[horizon]];

    let context = trajectory.states[0];
    let paths = sample_model(model, context, spec.m, spec.k, rng)?;
    let model_values: Vec<f64> = paths.iter().map(|p| values[p[spec.m - 1]]).collect();
    let model_loss = if spec.calibrated {
        super::cvaml_sampled(&model_values, target)?
    } else {
        itervaml_sampled(&model_values, target)?
    };

    let probs = model.column_probs();
    let mut d_logits = DMatrix::<f64>::zeros(n, model.n_contexts());
    for path in &paths {
        let mut from = context;
        for &to in path {
            for i in 0..n {
                d_logits[(i, from)] -= model_loss * probs[(i, from)];
            }
            d_logits[(to, from)] += model_loss;
            from = to;
        }
    }

    let joint = spec.value_update == ValueUpdate::MuzeroJoint;
    let real_state = trajectory.states[spec.m];
    let mut loss_value = model_loss;
    let value_grads = if joint {
        let mut grads = vec![0.0; n];
        for (path, g) in paths
            .iter()
            .zip(sampled_loss_value_grad(&model_values, target, spec.calibrated)?)
        {
            grads[path[spec.m - 1]] += g;
        }
        if spec.update_real_state {
            let error = values[real_state] - target;
            loss_value += error * error;
            grads[real_state] += 2.0 * error;
        }
        Some(grads)
    } else {
        None
    };

    let diagnostics = vec![if spec.k >= 2 { variance_estimate(&model_values)? } else { 0.0 }];
    Ok(LossReport {
        loss_value,
        model_grads: Some(model.backprop_logits(&d_logits)),
        value_grads,
        diagnostics,
    })
}
