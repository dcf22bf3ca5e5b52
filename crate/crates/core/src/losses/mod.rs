//! The (m, b) value-aware loss family and its baselines.
//!
//! A member of the family compares the value of the state reached after `m`
//! model steps with a `b`-step bootstrapped target computed in the real
//! environment. `b = 0` gives the iterated value-aware loss used to train the
//! model only; `b >= 1` gives the MuZero-style loss that can also train the
//! value table. With `k` model samples the squared error picks up a
//! `Var_model[V] / k` term; the calibrated variant subtracts an unbiased
//! estimate of it.
//!
//! [`expected`] evaluates losses and gradients in closed form over the
//! model's successor distribution (the training path). [`sampled`] works
//! from concrete model and environment samples.

pub mod expected;
pub mod sampled;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{dot, vec_mat, FiniteMdp};
use crate::model::{Gradients, LowRankModel};

pub use expected::{expected_td_loss, expected_vaml_loss, kl_loss_batch, model_m_step_row};
pub use sampled::{muzero_loss, sampled_vaml_loss};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueUpdate {
    /// The value table is left alone by this loss.
    None,
    /// Value trained separately with `(V̂(x) − r(x) − γ E_model V_tar)²`.
    TdModelBased,
    /// Value trained jointly through the loss itself.
    MuzeroJoint,
}

/// Selects one member of the loss family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossSpec {
    /// Model rollout steps.
    pub m: usize,
    /// Bootstrap steps in the environment target.
    pub b: usize,
    /// Model samples per state.
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default)]
    pub calibrated: bool,
    #[serde(default = "default_value_update")]
    pub value_update: ValueUpdate,
    /// Under joint updates, also regress `V̂(x^(m))` onto the target.
    #[serde(default = "default_true")]
    pub update_real_state: bool,
}

fn default_k() -> usize {
    2
}
fn default_value_update() -> ValueUpdate {
    ValueUpdate::None
}
fn default_true() -> bool {
    true
}

impl LossSpec {
    pub fn new(m: usize, b: usize, k: usize, calibrated: bool, value_update: ValueUpdate) -> Result<Self> {
        let spec = Self {
            m,
            b,
            k,
            calibrated,
            value_update,
            update_real_state: true,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidParameter("k must be at least 1".into()));
        }
        if self.calibrated && self.k < 2 {
            return Err(Error::TooFewSamples { needed: 2, got: self.k });
        }
        if self.b == 0 && self.value_update == ValueUpdate::MuzeroJoint {
            return Err(Error::InvalidParameter(
                "a loss with b = 0 cannot train the value function".into(),
            ));
        }
        if self.m == 0 && self.value_update == ValueUpdate::MuzeroJoint {
            return Err(Error::InvalidParameter(
                "joint value updates need at least one model step".into(),
            ));
        }
        Ok(())
    }

    /// Whether the loss produces model gradients at all.
    pub fn trains_model(&self) -> bool {
        self.m >= 1
    }
}

/// Loss value with optional model and value gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct LossReport {
    pub loss_value: f64,
    pub model_grads: Option<Gradients>,
    pub value_grads: Option<Vec<f64>>,
    /// Model-side variance of the value, one entry per context.
    pub diagnostics: Vec<f64>,
}

/// `(E_model[V(x̂^(m))] − E_env[V(x^(m))])²` from `state`, both sides exact.
pub fn itervaml_expectation(
    model: &LowRankModel,
    mdp: &FiniteMdp,
    v: &[f64],
    m: usize,
    state: usize,
) -> Result<f64> {
    if m == 0 {
        return Err(Error::InvalidParameter("m must be at least 1".into()));
    }
    check_len(v, mdp.n_states(), "value")?;
    if model.n_states() != mdp.n_states() {
        return Err(Error::Dimension("model and mdp state counts differ".into()));
    }
    let model_rows = model.transition_matrix();
    let model_side = dot(&model_m_step_row(&model_rows, state, m)?, v);
    let env_side = dot(&mdp.m_step_row(state, m), v);
    Ok((model_side - env_side).powi(2))
}

/// `(mean(model_values) − env_value)²`.
pub fn itervaml_sampled(model_values: &[f64], env_value: f64) -> Result<f64> {
    if model_values.is_empty() {
        return Err(Error::TooFewSamples { needed: 1, got: 0 });
    }
    Ok((mean(model_values) - env_value).powi(2))
}

/// Biased sample variance `(1/k) Σ (v_i − mean)²`.
pub fn variance_estimate(model_values: &[f64]) -> Result<f64> {
    if model_values.len() < 2 {
        return Err(Error::TooFewSamples {
            needed: 2,
            got: model_values.len(),
        });
    }
    let mu = mean(model_values);
    Ok(model_values.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / model_values.len() as f64)
}

/// Calibrated k-sample loss `itervaml_sampled − variance_estimate / (k − 1)`.
///
/// The `1/k`-normalized variance estimate has expectation
/// `(k − 1)/k · Var_model`, so dividing by `k − 1` makes the correction
/// unbiased for the `Var_model / k` term of the uncorrected loss at every
/// `k`. At `k = 2` this is exactly `itervaml_sampled − variance_estimate`.
pub fn cvaml_sampled(model_values: &[f64], env_value: f64) -> Result<f64> {
    let correction = variance_estimate(model_values)? / (model_values.len() - 1) as f64;
    Ok(itervaml_sampled(model_values, env_value)? - correction)
}

/// Derivative of the k-sample loss with respect to each model value.
pub fn sampled_loss_value_grad(model_values: &[f64], env_value: f64, calibrated: bool) -> Result<Vec<f64>> {
    let k = model_values.len();
    if k == 0 || (calibrated && k < 2) {
        return Err(Error::TooFewSamples {
            needed: if calibrated { 2 } else { 1 },
            got: k,
        });
    }
    let mu = mean(model_values);
    let kf = k as f64;
    Ok(model_values
        .iter()
        .map(|v| {
            let mut g = 2.0 * (mu - env_value) / kf;
            if calibrated {
                g -= 2.0 * (v - mu) / (kf * (kf - 1.0));
            }
            g
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TdLoss {
    pub loss: f64,
    /// `∂loss/∂V̂(x)`; the gradient is zero at every other state.
    pub grad: f64,
}

/// Squared TD error `(V̂(x) − r − γ V_tar(x'))²` with a frozen target.
pub fn td_loss(
    values: &[f64],
    target_values: &[f64],
    state: usize,
    next_state: usize,
    reward: f64,
    discount: f64,
) -> Result<TdLoss> {
    if state >= values.len() || next_state >= target_values.len() {
        return Err(Error::Dimension("state index out of range".into()));
    }
    let error = values[state] - (reward + discount * target_values[next_state]);
    Ok(TdLoss {
        loss: error * error,
        grad: 2.0 * error,
    })
}

/// `KL(p ‖ p̂)` at one context and its logit gradient `p̂ − p`.
pub fn kl_loss(model: &LowRankModel, mdp: &FiniteMdp, state: usize) -> Result<(f64, Gradients)> {
    let target = mdp.row(state);
    let predicted = model.predict_row(state);
    let loss = kl_divergence(&target, &predicted)?;
    let mut d_logits = DMatrix::zeros(model.n_states(), model.n_contexts());
    for i in 0..model.n_states() {
        d_logits[(i, state)] = predicted[i] - target[i];
    }
    Ok((loss, model.backprop_logits(&d_logits)))
}

/// `Σ p log(p / q)` with `0 log 0 = 0`.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    let mut total = 0.0;
    for (&pi, &qi) in p.iter().zip(q) {
        if pi > 0.0 {
            if qi <= 0.0 {
                return Err(Error::InvalidDistribution(
                    "model assigns zero probability to a reachable successor".into(),
                ));
            }
            total += pi * (pi / qi).ln();
        }
    }
    Ok(total)
}

pub(crate) fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Variance of `values` under the distribution `dist`.
#[cfg(test)]
pub(crate) fn weighted_variance(dist: &[f64], values: &[f64]) -> f64 {
    let mu = dot(dist, values);
    dist.iter().zip(values).map(|(p, v)| p * (v - mu).powi(2)).sum()
}

pub(crate) fn check_len(v: &[f64], n: usize, what: &str) -> Result<()> {
    if v.len() != n {
        return Err(Error::Dimension(format!("{what} has length {}, expected {n}", v.len())));
    }
    Ok(())
}

/// `T_model v = r + γ P̂ v` for a state-conditioned model.
pub fn model_bellman(model: &LowRankModel, mdp: &FiniteMdp, v: &[f64]) -> Vec<f64> {
    let probs = model.column_probs();
    let pv = vec_mat(v, &probs);
    mdp.reward()
        .iter()
        .zip(pv)
        .map(|(r, x)| r + mdp.discount() * x)
        .collect()
}
