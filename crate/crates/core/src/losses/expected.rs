//! Losses evaluated in closed form over model and environment outcomes.
//!
//! For context `c` let `q` be the model's distribution of `x̂^(m)`, `ρ` the
//! environment's distribution of `x^(m)`, and `Y` the bootstrapped target with
//! conditional moments `t1 = E[Y | x^(m)]` and `t2 = E[Y² | x^(m)]`. With `k`
//! independent model samples
//!
//! ```text
//! E[(mean_i V̂(x̂_i) − Y)²] = (q·V̂ − ρ·t1)² + Var[Y] + Var_q[V̂] / k
//! ```
//!
//! and the calibrated loss drops the last term. Gradients are exact; the model
//! gradient is pulled back through the `m`-step rollout and the softmax.

use nalgebra::DMatrix;

use super::{check_len, LossReport, LossSpec, ValueUpdate};
use crate::error::{Error, Result};
use crate::mdp::{bootstrap_moments, vec_mat, FiniteMdp};
use crate::model::{Gradients, LowRankModel};

/// Conditional moments of the bootstrapped target at each state.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetMoments {
    pub first: Vec<f64>,
    pub second: Vec<f64>,
}

impl TargetMoments {
    /// Moments of `Σ_{n<b} γⁿ r(x_n) + γᵇ V_tar(x_b)` under the environment.
    pub fn bootstrapped(mdp: &FiniteMdp, target_values: &[f64], b: usize) -> Result<Self> {
        check_len(target_values, mdp.n_states(), "target values")?;
        let (first, second) = bootstrap_moments(mdp, target_values, b);
        Ok(Self { first, second })
    }

    /// A deterministic target `V(x^(m))`, the `b = 0` case.
    pub fn fixed(values: &[f64]) -> Self {
        Self {
            first: values.to_vec(),
            second: values.iter().map(|v| v * v).collect(),
        }
    }
}

/// Row `context` of `P̂^m` where the first step leaves `context` and later
/// steps use the state-indexed rows of `model_rows`.
pub fn model_m_step_row(model_rows: &DMatrix<f64>, context: usize, m: usize) -> Result<Vec<f64>> {
    Ok(rollout_dists(model_rows, context, m)?.pop().expect("m >= 1"))
}

/// Distributions of `x̂^(1..=m)`.
fn rollout_dists(model_rows: &DMatrix<f64>, context: usize, m: usize) -> Result<Vec<Vec<f64>>> {
    if m == 0 {
        return Err(Error::InvalidParameter("m must be at least 1".into()));
    }
    if m > 1 && model_rows.nrows() != model_rows.ncols() {
        return Err(Error::InvalidParameter(
            "multi-step rollouts need a state-conditioned model".into(),
        ));
    }
    let mut dists = Vec::with_capacity(m);
    dists.push(model_rows.row(context).iter().copied().collect::<Vec<_>>());
    for t in 1..m {
        let next = vec_mat(&dists[t - 1], model_rows);
        dists.push(next);
    }
    Ok(dists)
}

/// Mean over contexts of the expected k-sample loss.
///
/// `env_rows` holds one row per model context: the environment distribution
/// of `x^(m)` from that context. `values` is `V̂`, evaluated at the model's
/// states; `targets` describes `Y`. Value gradients are returned for
/// [`ValueUpdate::MuzeroJoint`] specs.
pub fn expected_vaml_loss(
    model: &LowRankModel,
    env_rows: &DMatrix<f64>,
    values: &[f64],
    targets: &TargetMoments,
    spec: &LossSpec,
) -> Result<LossReport> {
    let probs = model.column_probs();
    expected_vaml_loss_with_probs(model, &probs, &env_rows.transpose(), values, targets, spec)
}

/// [`expected_vaml_loss`] with precomputed `model.column_probs()` and the
/// environment distributions stored as columns (`n × contexts`).
pub(crate) fn expected_vaml_loss_with_probs(
    model: &LowRankModel,
    probs: &DMatrix<f64>,
    env_cols: &DMatrix<f64>,
    values: &[f64],
    targets: &TargetMoments,
    spec: &LossSpec,
) -> Result<LossReport> {
    spec.validate()?;
    let n = model.n_states();
    let contexts = model.n_contexts();
    if env_cols.ncols() != contexts || env_cols.nrows() != n {
        return Err(Error::Dimension(format!(
            "env rows are {}x{}, model is {}x{}",
            env_cols.ncols(),
            env_cols.nrows(),
            contexts,
            n
        )));
    }
    if spec.m == 0 {
        return Err(Error::InvalidParameter("m must be at least 1".into()));
    }
    if spec.m > 1 && contexts != n {
        return Err(Error::InvalidParameter(
            "multi-step rollouts need a state-conditioned model".into(),
        ));
    }
    check_len(values, n, "values")?;
    check_len(&targets.first, n, "target mean")?;
    check_len(&targets.second, n, "target second moment")?;

    let joint = spec.value_update == ValueUpdate::MuzeroJoint;
    let real_state = joint && spec.update_real_state;
    let penalty = if spec.calibrated { 0.0 } else { 1.0 / spec.k as f64 };
    let weight = 1.0 / contexts as f64;

    let prob_data = probs.as_slice();
    let env_data = env_cols.as_slice();

    // per-state terms shared by every context
    let values_sq: Vec<f64> = values.iter().map(|v| v * v).collect();
    let real_terms: Vec<f64> = if real_state {
        (0..n)
            .map(|s| (values[s] - targets.first[s]).powi(2) + targets.second[s] - targets.first[s].powi(2))
            .collect()
    } else {
        Vec::new()
    };

    let mut d_probs = DMatrix::<f64>::zeros(n, contexts);
    let mut value_grads = vec![0.0; n];
    let mut diagnostics = Vec::with_capacity(contexts);
    let mut total = 0.0;
    let mut dists: Vec<Vec<f64>> = Vec::new();
    let mut d_q = vec![0.0; n];

    for c in 0..contexts {
        let first = &prob_data[c * n..(c + 1) * n];
        if spec.m > 1 {
            dists.clear();
            dists.push(first.to_vec());
            for t in 1..spec.m {
                let next = (probs * nalgebra::DVector::from_column_slice(&dists[t - 1])).as_slice().to_vec();
                dists.push(next);
            }
        }
        let q: &[f64] = if spec.m > 1 { dists.last().expect("m >= 1") } else { first };
        let rho = &env_data[c * n..(c + 1) * n];

        let mut model_mean = 0.0;
        let mut model_second = 0.0;
        let mut target_mean = 0.0;
        let mut target_second = 0.0;
        for z in 0..n {
            model_mean += q[z] * values[z];
            model_second += q[z] * values_sq[z];
            target_mean += rho[z] * targets.first[z];
            target_second += rho[z] * targets.second[z];
        }
        let model_var = (model_second - model_mean * model_mean).max(0.0);
        let target_var = target_second - target_mean * target_mean;
        let gap = model_mean - target_mean;

        let mut loss = gap * gap + target_var + penalty * model_var;
        if real_state {
            loss += rho.iter().zip(&real_terms).map(|(r, t)| r * t).sum::<f64>();
        }
        total += weight * loss;
        diagnostics.push(model_var);

        for z in 0..n {
            let v = values[z];
            d_q[z] = weight * (2.0 * gap * v + penalty * (values_sq[z] - 2.0 * model_mean * v));
        }
        if spec.m == 1 {
            let mut col = d_probs.column_mut(c);
            for z in 0..n {
                col[z] += d_q[z];
            }
        } else {
            accumulate_rollout_grad(probs, &dists, c, &d_q, &mut d_probs);
        }

        if joint {
            for z in 0..n {
                let mut g = 2.0 * gap * q[z] + penalty * 2.0 * q[z] * (values[z] - model_mean);
                if real_state {
                    g += 2.0 * rho[z] * (values[z] - targets.first[z]);
                }
                value_grads[z] += weight * g;
            }
        }
    }

    let model_grads = spec.trains_model().then(|| probs_grad_to_params(model, probs, &d_probs));
    Ok(LossReport {
        loss_value: total,
        model_grads,
        value_grads: joint.then_some(value_grads),
        diagnostics,
    })
}

/// Adds `∂L/∂p̂` for `q = e_c P̂^m` given `∂L/∂q`. `probs` and `d_probs` hold
/// one column per context.
///
/// `∂L/∂P̂[i, j] = Σ_t (e_c P̂^t)[i] (P̂^{m−1−t} g)[j]`.
fn accumulate_rollout_grad(
    probs: &DMatrix<f64>,
    dists: &[Vec<f64>],
    context: usize,
    d_q: &[f64],
    d_probs: &mut DMatrix<f64>,
) {
    let m = dists.len();
    let n = d_q.len();
    let mut back = d_q.to_vec();
    // back = P̂^s g pairs with the state distribution at step m - 1 - s
    for s in 0..m {
        let t = m - 1 - s;
        if t == 0 {
            let mut col = d_probs.column_mut(context);
            for j in 0..n {
                col[j] += back[j];
            }
        } else {
            for (i, &di) in dists[t - 1].iter().enumerate() {
                if di != 0.0 {
                    let mut col = d_probs.column_mut(i);
                    for j in 0..n {
                        col[j] += di * back[j];
                    }
                }
            }
        }
        if s + 1 < m {
            back = (0..n).map(|i| probs.column(i).dot(&nalgebra::DVectorView::from_slice(&back, n))).collect();
        }
    }
}

/// Pulls `∂L/∂p̂` (one column per context) back to the factor matrices.
pub(crate) fn probs_grad_to_params(model: &LowRankModel, probs: &DMatrix<f64>, d_probs: &DMatrix<f64>) -> Gradients {
    let n = model.n_states();
    let mut d_logits = DMatrix::<f64>::zeros(n, model.n_contexts());
    for c in 0..model.n_contexts() {
        let p = probs.column(c);
        let g = d_probs.column(c);
        let mean = p.dot(&g);
        let mut out = d_logits.column_mut(c);
        for j in 0..n {
            out[j] = p[j] * (g[j] - mean);
        }
    }
    model.backprop_logits(&d_logits)
}

/// Mean KL divergence from the true rows to the model rows, with gradients.
pub fn kl_loss_batch(model: &LowRankModel, true_rows: &DMatrix<f64>) -> Result<(f64, Gradients)> {
    if true_rows.nrows() != model.n_contexts() || true_rows.ncols() != model.n_states() {
        return Err(Error::Dimension("true rows do not match the model".into()));
    }
    kl_loss_batch_with_probs(model, &model.column_probs(), &true_rows.transpose())
}

/// [`kl_loss_batch`] with precomputed `model.column_probs()` and the true
/// distributions stored as columns.
pub(crate) fn kl_loss_batch_with_probs(
    model: &LowRankModel,
    probs: &DMatrix<f64>,
    true_cols: &DMatrix<f64>,
) -> Result<(f64, Gradients)> {
    let n = model.n_states();
    let contexts = model.n_contexts();
    let weight = 1.0 / contexts as f64;
    let mut total = 0.0;
    for c in 0..contexts {
        let p = &true_cols.as_slice()[c * n..(c + 1) * n];
        let q = &probs.as_slice()[c * n..(c + 1) * n];
        total += weight * super::kl_divergence(p, q)?;
    }
    let d_logits = (probs - true_cols) * weight;
    Ok((total, model.backprop_logits(&d_logits)))
}

/// Mean of `(V̂(x) − target(x))²` over states and its gradient.
pub fn expected_td_loss(values: &[f64], targets: &[f64]) -> Result<(f64, Vec<f64>)> {
    check_len(targets, values.len(), "targets")?;
    let weight = 1.0 / values.len() as f64;
    let mut loss = 0.0;
    let grads = values
        .iter()
        .zip(targets)
        .map(|(v, t)| {
            loss += weight * (v - t).powi(2);
            weight * 2.0 * (v - t)
        })
        .collect();
    Ok((loss, grads))
}
