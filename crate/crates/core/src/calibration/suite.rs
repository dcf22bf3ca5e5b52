//! Self-check suite run by `vaml verify`.
//!
//! Every check compares a closed-form quantity from the library with an
//! independent route: exhaustive enumeration of sample tuples, grid search,
//! finite differences, value iteration or brute-force path search.

use nalgebra::DMatrix;
use rand::Rng;

use super::{
    brute_force_g_min, brute_force_min, calibrated_objective, g_objective, lemma_a4_descent,
    lemma_a4_objective, log_log_slope, prop21_witness, prop23_objective, prop23_value_bias,
    DiscreteInstance, SimplexGrid,
};
use crate::envs::{generate_cliffwalk, generate_garnet, CliffwalkSpec, GarnetSpec, Move, CLIFF_GOAL, CLIFF_START};
use crate::error::Result;
use crate::losses::expected::TargetMoments;
use crate::losses::{
    cvaml_sampled, expected_td_loss, expected_vaml_loss, itervaml_expectation, itervaml_sampled,
    kl_loss_batch, model_m_step_row, LossSpec, ValueUpdate,
};
use crate::mdp::{bellman_operator, dot, exact_value, policy_iteration, FiniteMdp};
use crate::model::LowRankModel;
use crate::rng::{derive_seed, stream};

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckOutcome {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        Self {
            name: name.to_string(),
            passed,
            detail,
        }
    }
}

const SUITE_SEED: u64 = 0x5EED_CA11;

/// Runs every check and returns one outcome per check, in a fixed order.
pub fn run_suite() -> Result<Vec<CheckOutcome>> {
    Ok(vec![
        check_decomposition()?,
        check_calibration()?,
        check_witness()?,
        check_value_bias()?,
        check_gradients()?,
        check_solvers()?,
    ])
}

/// A random small policy-evaluation problem and a model over its states.
pub fn random_instance(seed: u64) -> Result<(FiniteMdp, LowRankModel, Vec<f64>)> {
    let mut rng = stream(seed);
    let n = rng.random_range(2..=6);
    let mdp = generate_garnet(&GarnetSpec {
        n_states: n,
        n_successors: rng.random_range(1..=n),
        temperature: 1.0,
        discount: 0.9,
        seed: rng.random(),
    })?;
    let rank = rng.random_range(1..=n.min(4));
    let model = LowRankModel::init(n, n, rank, 1.0, &mut rng)?;
    let values = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
    Ok((mdp, model, values))
}

/// Calls `visit` with every `k`-tuple of indices in `0..n`.
pub fn for_each_tuple(n: usize, k: usize, mut visit: impl FnMut(&[usize])) {
    let mut tuple = vec![0usize; k];
    loop {
        visit(&tuple);
        let mut pos = 0;
        loop {
            if pos == k {
                return;
            }
            tuple[pos] += 1;
            if tuple[pos] < n {
                break;
            }
            tuple[pos] = 0;
            pos += 1;
        }
    }
}

/// `E[loss(model values, env value)]` over `k` i.i.d. model draws from `q`
/// and, when `env` is given, one environment draw.
pub fn enumerate_expected_loss(
    q: &[f64],
    env: EnvSide<'_>,
    values: &[f64],
    k: usize,
    loss: impl Fn(&[f64], f64) -> f64,
) -> f64 {
    let n = q.len();
    let mut total = 0.0;
    let mut sample = vec![0.0; k];
    for_each_tuple(n, k, |tuple| {
        let weight: f64 = tuple.iter().map(|&i| q[i]).product();
        if weight == 0.0 {
            return;
        }
        for (s, &i) in sample.iter_mut().zip(tuple) {
            *s = values[i];
        }
        match env {
            EnvSide::Fixed(target) => total += weight * loss(&sample, target),
            EnvSide::Sampled(rho) => {
                for (j, &r) in rho.iter().enumerate() {
                    if r > 0.0 {
                        total += weight * r * loss(&sample, values[j]);
                    }
                }
            }
        }
    });
    total
}

#[derive(Debug, Clone, Copy)]
pub enum EnvSide<'a> {
    /// The environment value is replaced by its expectation.
    Fixed(f64),
    /// The environment successor is drawn from this distribution.
    Sampled(&'a [f64]),
}

fn variance(p: &[f64], v: &[f64]) -> f64 {
    super::variance(p, v)
}

fn check_decomposition() -> Result<CheckOutcome> {
    let mut worst = 0.0f64;
    for i in 0..50 {
        let (mdp, model, v) = random_instance(derive_seed(SUITE_SEED, &[1, i]))?;
        let rows = model.transition_matrix();
        for m in [1, 2] {
            for x in 0..mdp.n_states() {
                let q = model_m_step_row(&rows, x, m)?;
                let rho = mdp.m_step_row(x, m);
                let base = itervaml_expectation(&model, &mdp, &v, m, x)?;
                for k in [1, 2, 4] {
                    let enumerated = enumerate_expected_loss(&q, EnvSide::Sampled(&rho), &v, k, |s, e| {
                        itervaml_sampled(s, e).expect("k >= 1")
                    });
                    let predicted = base + variance(&q, &v) / k as f64 + variance(&rho, &v);
                    worst = worst.max((enumerated - predicted).abs());
                }
            }
        }
    }
    Ok(CheckOutcome::new(
        "k-sample loss decomposition",
        worst <= 1e-10,
        format!("max abs error {worst:.3e} (tol 1e-10)"),
    ))
}

fn check_calibration() -> Result<CheckOutcome> {
    let mut worst = 0.0f64;
    let mut grid_ok = true;
    for i in 0..50 {
        let (mdp, model, v) = random_instance(derive_seed(SUITE_SEED, &[1, i]))?;
        let rows = model.transition_matrix();
        for x in 0..mdp.n_states() {
            let q = model_m_step_row(&rows, x, 1)?;
            let env_mean = dot(&mdp.row(x), &v);
            let base = itervaml_expectation(&model, &mdp, &v, 1, x)?;
            for k in [2, 4] {
                let enumerated = enumerate_expected_loss(&q, EnvSide::Fixed(env_mean), &v, k, |s, e| {
                    cvaml_sampled(s, e).expect("k >= 2")
                });
                worst = worst.max((enumerated - base).abs());
            }
        }
        let instance = DiscreteInstance::new(v.clone(), mdp.row(0), 2)?;
        let grid = SimplexGrid::default_for(instance.support_size())?;
        let min = brute_force_min(&instance, &grid, |inst, q| {
            calibrated_objective(inst, q).expect("grid points are distributions")
        })?;
        grid_ok &= min.matches_true_mean;
    }
    Ok(CheckOutcome::new(
        "calibrated loss is unbiased",
        worst <= 1e-10 && grid_ok,
        format!("max abs error {worst:.3e} (tol 1e-10), grid minimizers mean-matched: {grid_ok}"),
    ))
}

/// Gaps of the closed-form uncalibrated minimizer on the two-point instance.
pub fn witness_gaps(ks: &[usize]) -> Result<Vec<f64>> {
    let mdp = FiniteMdp::from_rows(&[vec![0.4, 0.6], vec![0.4, 0.6]], vec![0.0, 0.0], 0.5)?;
    ks.iter()
        .map(|&k| Ok(prop21_witness(&mdp, &[0.0, 1.0], k)?.gap))
        .collect()
}

fn check_witness() -> Result<CheckOutcome> {
    let instance = DiscreteInstance::new(vec![0.0, 1.0], vec![0.4, 0.6], 1)?;
    let at_point = g_objective(&instance, &[0.0, 1.0])?;
    let at_truth = g_objective(&instance, &[0.4, 0.6])?;
    let values_ok = (at_point - 0.40).abs() < 1e-12 && (at_truth - 0.48).abs() < 1e-12 && at_point < at_truth;
    let min = brute_force_g_min(&instance, &SimplexGrid::default_for(2)?)?;
    let ks = [1usize, 2, 4, 8];
    let gaps = witness_gaps(&ks)?;
    let slope = log_log_slope(&ks.map(|k| k as f64), &gaps);
    let slope_ok = (slope + 1.0).abs() <= 0.15;
    Ok(CheckOutcome::new(
        "uncalibrated minimizer is biased",
        values_ok && !min.matches_true_mean && slope_ok,
        format!(
            "g(point)={at_point:.4} g(p)={at_truth:.4} grid mean={:.4} gaps={gaps:.4?} slope={slope:.3} (target -1 ± 0.15)",
            min.mean
        ),
    ))
}

/// The fixed three-state stochastic instance used for the value-bias check.
pub fn value_bias_instance() -> Result<(FiniteMdp, Vec<f64>)> {
    let mdp = FiniteMdp::from_rows(
        &[vec![0.5, 0.5, 0.0], vec![0.0, 0.3, 0.7], vec![0.6, 0.0, 0.4]],
        vec![1.0, 0.0, -1.0],
        0.9,
    )?;
    Ok((mdp, vec![2.0, -1.0, 0.5]))
}

/// Coordinate-wise grid minimization of the enumerated value loss; the loss
/// is separable across table entries so one sweep per coordinate suffices.
pub fn value_bias_grid_oracle(mdp: &FiniteMdp, v_tar: &[f64], step: f64) -> Result<Vec<f64>> {
    let n = mdp.n_states();
    let targets = bellman_operator(mdp, v_tar, 1)?;
    let lo = targets.iter().copied().fold(f64::INFINITY, f64::min) - 1.0;
    let hi = targets.iter().copied().fold(f64::NEG_INFINITY, f64::max) + 1.0;
    let mut values = targets.clone();
    for z in 0..n {
        let mut best = (f64::INFINITY, values[z]);
        let mut candidate = lo;
        while candidate <= hi {
            values[z] = candidate;
            let loss = prop23_objective(mdp, v_tar, &values)?;
            if loss < best.0 {
                best = (loss, candidate);
            }
            candidate += step;
        }
        values[z] = best.1;
    }
    Ok(values)
}

fn check_value_bias() -> Result<CheckOutcome> {
    let mut rng = stream(derive_seed(SUITE_SEED, &[4]));
    let mut worst_fd = 0.0f64;
    for _ in 0..100 {
        let n = rng.random_range(2..=6);
        let g: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let raw: Vec<f64> = (0..n).map(|_| rng.random_range(0.05..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let mu: Vec<f64> = raw.iter().map(|r| r / total).collect();
        let analytic = lemma_a4_descent(&g, &mu)?;
        let h = 1e-5;
        let shifted = |eps: f64| -> Vec<f64> { g.iter().map(|x| x - eps * x).collect() };
        let fd = (lemma_a4_objective(&shifted(h), &g, &mu) - lemma_a4_objective(&shifted(-h), &g, &mu)) / (2.0 * h);
        worst_fd = worst_fd.max((analytic - fd).abs());
    }

    let det = FiniteMdp::from_rows(
        &[vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0], vec![1.0, 0.0, 0.0]],
        vec![1.0, -0.5, 2.0],
        0.9,
    )?;
    let det_bias = prop23_value_bias(&det, &[0.3, -2.0, 1.0])?.bias_norm;
    let (mdp, v_tar) = value_bias_instance()?;
    let flat = FiniteMdp::new(mdp.transition().clone(), vec![0.25; 3], mdp.discount())?;
    let const_bias = prop23_value_bias(&flat, &[1.5; 3])?.bias_norm;
    let report = prop23_value_bias(&mdp, &v_tar)?;
    let oracle = value_bias_grid_oracle(&mdp, &v_tar, 1e-4)?;
    let oracle_gap = report
        .surrogate_minimizer
        .iter()
        .zip(&oracle)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let passed = worst_fd <= 1e-6 && det_bias <= 1e-10 && const_bias <= 1e-10 && report.bias_norm > 1e-3 && oracle_gap <= 1e-3;
    Ok(CheckOutcome::new(
        "joint value loss is biased",
        passed,
        format!(
            "descent fd err {worst_fd:.2e}, bias det={det_bias:.1e} const={const_bias:.1e} stochastic={:.4}, grid gap {oracle_gap:.1e}",
            report.bias_norm
        ),
    ))
}

/// Relative error between an analytic gradient and central differences.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic.iter().zip(numeric).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let scale = norm(analytic).max(norm(numeric)).max(1e-8);
    diff / scale
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Central differences of `f` at `x` with step `h`.
pub fn central_differences(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut point = x.to_vec();
    (0..x.len())
        .map(|i| {
            point[i] = x[i] + h;
            let up = f(&point);
            point[i] = x[i] - h;
            let down = f(&point);
            point[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

fn check_gradients() -> Result<CheckOutcome> {
    let mut worst = 0.0f64;
    for i in 0..20 {
        let (mdp, model, v) = random_instance(derive_seed(SUITE_SEED, &[5, i]))?;
        let n = mdp.n_states();
        let true_rows = mdp.transition().clone();
        let params = model.params();

        let (_, kl_grads) = kl_loss_batch(&model, &true_rows)?;
        let fd = central_differences(&params, 1e-5, |p| {
            let mut probe = model.clone();
            probe.set_params(p);
            kl_loss_batch(&probe, &true_rows).expect("valid model").0
        });
        worst = worst.max(relative_error(&kl_grads.flatten(), &fd));

        for (m, b, calibrated, update) in [
            (1, 0, false, ValueUpdate::None),
            (1, 0, true, ValueUpdate::None),
            (2, 0, true, ValueUpdate::None),
            (1, 1, false, ValueUpdate::MuzeroJoint),
            (2, 2, true, ValueUpdate::MuzeroJoint),
        ] {
            let spec = LossSpec::new(m, b, 2, calibrated, update)?;
            let env = DMatrix::from_fn(n, n, |c, j| mdp.m_step_row(c, m)[j]);
            let v_tar: Vec<f64> = v.iter().map(|x| 0.5 * x + 0.1).collect();
            let targets = if b == 0 {
                TargetMoments::fixed(&v)
            } else {
                TargetMoments::bootstrapped(&mdp, &v_tar, b)?
            };
            let report = expected_vaml_loss(&model, &env, &v, &targets, &spec)?;
            let fd = central_differences(&params, 1e-5, |p| {
                let mut probe = model.clone();
                probe.set_params(p);
                expected_vaml_loss(&probe, &env, &v, &targets, &spec).expect("valid").loss_value
            });
            worst = worst.max(relative_error(&report.model_grads.expect("m >= 1").flatten(), &fd));
            if let Some(value_grads) = report.value_grads {
                let fd = central_differences(&v, 1e-5, |values| {
                    expected_vaml_loss(&model, &env, values, &targets, &spec).expect("valid").loss_value
                });
                worst = worst.max(relative_error(&value_grads, &fd));
            }
        }

        let targets = bellman_operator(&mdp, &v, 1)?;
        let (_, td_grads) = expected_td_loss(&v, &targets)?;
        let fd = central_differences(&v, 1e-5, |values| expected_td_loss(values, &targets).expect("valid").0);
        worst = worst.max(relative_error(&td_grads, &fd));
    }
    Ok(CheckOutcome::new(
        "analytic gradients",
        worst <= 1e-4,
        format!("max relative error {worst:.2e} (tol 1e-4)"),
    ))
}

/// Best discounted return from the cliffwalk start over all deterministic
/// action sequences of length `depth`, for `move_prob = 1`.
pub fn cliffwalk_brute_force_return(discount: f64, depth: usize) -> Result<f64> {
    let cmdp = generate_cliffwalk(&CliffwalkSpec { move_prob: 1.0, discount })?;
    let next = |x: usize, a: usize| -> usize {
        (0..cmdp.n_states())
            .find(|&y| cmdp.transition(a)[(x, y)] == 1.0)
            .expect("deterministic rows")
    };
    fn search(
        x: usize,
        depth: usize,
        scale: f64,
        acc: f64,
        reward: &[f64],
        discount: f64,
        next: &dyn Fn(usize, usize) -> usize,
        best: &mut f64,
    ) {
        if x == CLIFF_GOAL {
            *best = best.max(acc);
            return;
        }
        if depth == 0 {
            return;
        }
        let acc = acc + scale * reward[x];
        for a in Move::ALL {
            search(next(x, a as usize), depth - 1, scale * discount, acc, reward, discount, next, best);
        }
    }
    let mut best = f64::NEG_INFINITY;
    search(CLIFF_START, depth, 1.0, 0.0, cmdp.reward(), discount, &next, &mut best);
    Ok(best)
}

fn check_solvers() -> Result<CheckOutcome> {
    let mut worst = 0.0f64;
    for i in 0..100 {
        let mdp = generate_garnet(&GarnetSpec {
            n_states: 20,
            n_successors: 5,
            temperature: 0.5,
            discount: 0.95,
            seed: derive_seed(SUITE_SEED, &[6, i]),
        })?;
        let v = exact_value(&mdp)?;
        let tv = bellman_operator(&mdp, &v, 1)?;
        worst = worst.max(v.iter().zip(&tv).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max));
    }
    let discount = 0.95;
    let cmdp = generate_cliffwalk(&CliffwalkSpec { move_prob: 1.0, discount })?;
    let pi = policy_iteration(&cmdp, 100)?;
    let brute = cliffwalk_brute_force_return(discount, 10)?;
    let pi_gap = (pi.values[CLIFF_START] - brute).abs();
    Ok(CheckOutcome::new(
        "exact solvers",
        worst <= 1e-10 && pi_gap <= 1e-10,
        format!("max Bellman residual {worst:.2e}, policy iteration vs brute force {pi_gap:.1e}"),
    ))
}
