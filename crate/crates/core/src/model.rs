//! Learnable transition models.
//!
//! [`LowRankModel`] holds two factor matrices `φ ∈ R^{j×n}` and
//! `ψ ∈ R^{j×c}`; the logit of successor `i` from context `l` is
//! `φ_iᵀ ψ_l` and the predicted distribution is the softmax over `i`.
//! A context is a state for policy-conditioned models and a state-action
//! pair for action-conditioned ones. With `j = n` the factorization can
//! represent any logit matrix, so the full-rank tabular softmax model is the
//! `rank == n_states` special case.
//!
//! Losses hand gradients back as `∂L/∂logits` (an `n × c` matrix laid out like
//! the logits); [`LowRankModel::backprop_logits`] maps them onto the factors.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::sample_categorical;

#[derive(Debug, Clone, PartialEq)]
pub struct LowRankModel {
    phi: DMatrix<f64>,
    psi: DMatrix<f64>,
}

/// Gradients with respect to the two factor matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub d_phi: DMatrix<f64>,
    pub d_psi: DMatrix<f64>,
}

impl Gradients {
    pub fn zeros_like(model: &LowRankModel) -> Self {
        Self {
            d_phi: DMatrix::zeros(model.phi.nrows(), model.phi.ncols()),
            d_psi: DMatrix::zeros(model.psi.nrows(), model.psi.ncols()),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.d_phi.iter().chain(self.d_psi.iter()).all(|g| g.is_finite())
    }

    pub fn scale(&mut self, factor: f64) {
        self.d_phi *= factor;
        self.d_psi *= factor;
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        self.d_phi += &other.d_phi;
        self.d_psi += &other.d_psi;
    }

    /// φ entries followed by ψ entries, in the same order as
    /// [`LowRankModel::params`].
    pub fn flatten(&self) -> Vec<f64> {
        self.d_phi.iter().chain(self.d_psi.iter()).copied().collect()
    }
}

impl LowRankModel {
    pub fn new(phi: DMatrix<f64>, psi: DMatrix<f64>) -> Result<Self> {
        if phi.nrows() == 0 || phi.nrows() != psi.nrows() {
            return Err(Error::Dimension(format!(
                "factor ranks differ or are zero: phi has {} rows, psi has {}",
                phi.nrows(),
                psi.nrows()
            )));
        }
        if phi.nrows() > phi.ncols() {
            return Err(Error::InvalidParameter(format!(
                "rank {} exceeds the number of states {}",
                phi.nrows(),
                phi.ncols()
            )));
        }
        if phi.iter().chain(psi.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("model parameters".into()));
        }
        Ok(Self { phi, psi })
    }

    /// Draws both factors i.i.d. from `N(0, init_scale²)`.
    pub fn init<R: Rng + ?Sized>(
        n_states: usize,
        n_contexts: usize,
        rank: usize,
        init_scale: f64,
        rng: &mut R,
    ) -> Result<Self> {
        if rank == 0 || rank > n_states {
            return Err(Error::InvalidParameter(format!(
                "rank must satisfy 1 <= j <= n, got j={rank} n={n_states}"
            )));
        }
        if !(init_scale > 0.0 && init_scale.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "init_scale must be positive, got {init_scale}"
            )));
        }
        let normal = Normal::new(0.0, init_scale)
            .map_err(|e| Error::InvalidParameter(e.to_string()))?;
        let phi = DMatrix::from_fn(rank, n_states, |_, _| normal.sample(rng));
        let psi = DMatrix::from_fn(rank, n_contexts, |_, _| normal.sample(rng));
        Self::new(phi, psi)
    }

    /// A model whose prediction for context `c` is (numerically exactly) a
    /// point mass on `targets[c]`.
    ///
    /// States are placed on a circle of radius `scale` in the first two latent
    /// dimensions, so any rank `j >= 2` works; the logit margin is
    /// `scale · (1 − cos(2π/n))`.
    pub fn sharpened(n_states: usize, targets: &[usize], rank: usize, scale: f64) -> Result<Self> {
        if rank < 2 || rank > n_states {
            return Err(Error::InvalidParameter(format!(
                "sharpened models need 2 <= rank <= n, got {rank}"
            )));
        }
        if targets.iter().any(|&t| t >= n_states) {
            return Err(Error::InvalidParameter("target state out of range".into()));
        }
        let angle = |s: usize| 2.0 * std::f64::consts::PI * s as f64 / n_states as f64;
        let mut phi = DMatrix::zeros(rank, n_states);
        for s in 0..n_states {
            phi[(0, s)] = scale * angle(s).cos();
            phi[(1, s)] = scale * angle(s).sin();
        }
        let mut psi = DMatrix::zeros(rank, targets.len());
        for (c, &t) in targets.iter().enumerate() {
            psi[(0, c)] = angle(t).cos();
            psi[(1, c)] = angle(t).sin();
        }
        Self::new(phi, psi)
    }

    pub fn rank(&self) -> usize {
        self.phi.nrows()
    }

    pub fn n_states(&self) -> usize {
        self.phi.ncols()
    }

    pub fn n_contexts(&self) -> usize {
        self.psi.ncols()
    }

    pub fn phi(&self) -> &DMatrix<f64> {
        &self.phi
    }

    pub fn psi(&self) -> &DMatrix<f64> {
        &self.psi
    }

    /// `n_states × n_contexts` logit matrix `φᵀψ`.
    pub fn logits(&self) -> DMatrix<f64> {
        self.phi.transpose() * &self.psi
    }

    /// Predicted distributions as columns: entry `(i, c)` is `p̂(i | c)`.
    pub fn column_probs(&self) -> DMatrix<f64> {
        let mut probs = self.logits();
        for mut col in probs.column_iter_mut() {
            let max = col.max();
            col.apply(|v| *v = (*v - max).exp());
            let total = col.sum();
            col /= total;
        }
        probs
    }

    /// Row-stochastic `n_contexts × n_states` transition matrix.
    pub fn transition_matrix(&self) -> DMatrix<f64> {
        self.column_probs().transpose()
    }

    /// `p̂(· | context)` with max-subtraction.
    pub fn predict_row(&self, context: usize) -> Vec<f64> {
        let logits: Vec<f64> = (0..self.n_states())
            .map(|i| self.phi.column(i).dot(&self.psi.column(context)))
            .collect();
        crate::envs::softmax(&logits)
    }

    /// Maps `∂L/∂logits` onto `(∂L/∂φ, ∂L/∂ψ)`.
    pub fn backprop_logits(&self, d_logits: &DMatrix<f64>) -> Gradients {
        Gradients {
            d_phi: &self.psi * d_logits.transpose(),
            d_psi: &self.phi * d_logits,
        }
    }

    pub fn params(&self) -> Vec<f64> {
        self.phi.iter().chain(self.psi.iter()).copied().collect()
    }

    pub fn set_params(&mut self, params: &[f64]) {
        let split = self.phi.len();
        self.phi.as_mut_slice().copy_from_slice(&params[..split]);
        self.psi.as_mut_slice().copy_from_slice(&params[split..]);
    }

    pub fn is_finite(&self) -> bool {
        self.phi.iter().chain(self.psi.iter()).all(|v| v.is_finite())
    }
}

/// Pulls `∂L/∂p` back through a softmax: `∂L/∂ω_i = p_i (g_i − Σ_j p_j g_j)`.
pub fn softmax_backward(probs: &[f64], d_probs: &[f64]) -> Vec<f64> {
    let mean: f64 = probs.iter().zip(d_probs).map(|(p, g)| p * g).sum();
    probs.iter().zip(d_probs).map(|(p, g)| p * (g - mean)).collect()
}

/// Draws `k` independent model rollouts of `m` steps from `context`.
///
/// The first step uses the context's prediction; later steps treat the
/// current state as the context, which requires a state-conditioned model.
pub fn sample_model<R: Rng + ?Sized>(
    model: &LowRankModel,
    context: usize,
    m: usize,
    k: usize,
    rng: &mut R,
) -> Result<Vec<Vec<usize>>> {
    if m == 0 || k == 0 {
        return Err(Error::InvalidParameter(format!(
            "sample_model needs m >= 1 and k >= 1, got m={m} k={k}"
        )));
    }
    if m > 1 && model.n_contexts() != model.n_states() {
        return Err(Error::InvalidParameter(
            "multi-step rollouts need a state-conditioned model".into(),
        ));
    }
    let probs = model.column_probs();
    Ok((0..k)
        .map(|_| {
            let mut current = context;
            (0..m)
                .map(|_| {
                    current = sample_categorical(probs.column(current).iter().copied(), rng);
                    current
                })
                .collect()
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
}

fn default_lr() -> f64 {
    1e-2
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: default_lr(),
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
        }
    }
}

/// Adam moments for one flat parameter block.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    config: AdamConfig,
    step: u64,
    first: Vec<f64>,
    second: Vec<f64>,
}

impl Adam {
    pub fn new(len: usize, config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            first: vec![0.0; len],
            second: vec![0.0; len],
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn update(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.first.len() || grads.len() != self.first.len() {
            return Err(Error::Dimension(format!(
                "optimizer holds {} moments but got {} params and {} grads",
                self.first.len(),
                params.len(),
                grads.len()
            )));
        }
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("gradient".into()));
        }
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        self.step += 1;
        let bias1 = 1.0 - beta1.powi(self.step as i32);
        let bias2 = 1.0 - beta2.powi(self.step as i32);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.first.iter_mut().zip(self.second.iter_mut()))
        {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / bias1;
            let v_hat = *v / bias2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }
}

/// Adam state for both factors of a [`LowRankModel`].
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    phi: Adam,
    psi: Adam,
}

impl OptimizerState {
    pub fn new(model: &LowRankModel, config: AdamConfig) -> Self {
        Self {
            phi: Adam::new(model.phi.len(), config),
            psi: Adam::new(model.psi.len(), config),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.phi.step_count()
    }

    /// Applies one Adam step. Non-finite gradients leave the model untouched
    /// and return an error.
    pub fn step(&mut self, model: &mut LowRankModel, grads: &Gradients) -> Result<()> {
        if grads.d_phi.shape() != model.phi.shape() || grads.d_psi.shape() != model.psi.shape() {
            return Err(Error::Dimension("gradient shapes do not match the model".into()));
        }
        if !grads.is_finite() {
            return Err(Error::NonFinite("model gradient".into()));
        }
        self.phi.update(model.phi.as_mut_slice(), grads.d_phi.as_slice())?;
        self.psi.update(model.psi.as_mut_slice(), grads.d_psi.as_slice())?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn small_init_is_near_uniform() {
        let model = LowRankModel::init(50, 50, 5, 1e-3, &mut stream(1)).unwrap();
        let probs = model.column_probs();
        for p in probs.iter() {
            assert!((p - 0.02).abs() <= 1e-3);
        }
    }

    #[test]
    fn init_is_seeded() {
        let a = LowRankModel::init(6, 6, 3, 0.1, &mut stream(4)).unwrap();
        let b = LowRankModel::init(6, 6, 3, 0.1, &mut stream(4)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn large_full_rank_logits_stay_stochastic() {
        let model = LowRankModel::init(8, 8, 8, 30.0, &mut stream(2)).unwrap();
        for c in 0..8 {
            let row = model.predict_row(c);
            assert!(row.iter().all(|&p| p >= 0.0));
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn zero_phi_predicts_uniform() {
        let model = LowRankModel::new(DMatrix::zeros(2, 4), DMatrix::from_element(2, 4, 3.0)).unwrap();
        for p in model.predict_row(1) {
            assert!((p - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn identical_psi_columns_predict_identical_rows() {
        let phi = DMatrix::from_row_slice(2, 3, &[0.3, -1.0, 2.0, 0.5, 0.1, -0.7]);
        let psi = DMatrix::from_row_slice(2, 3, &[1.0, 1.0, -2.0, 0.4, 0.4, 0.9]);
        let model = LowRankModel::new(phi, psi).unwrap();
        assert_eq!(model.predict_row(0), model.predict_row(1));
    }

    #[test]
    fn stable_softmax_matches_naive_formula() {
        let model = LowRankModel::init(5, 5, 3, 0.5, &mut stream(8)).unwrap();
        let logits = model.logits();
        for c in 0..5 {
            let naive: Vec<f64> = {
                let e: Vec<f64> = logits.column(c).iter().map(|l| l.exp()).collect();
                let z: f64 = e.iter().sum();
                e.iter().map(|v| v / z).collect()
            };
            for (a, b) in model.predict_row(c).iter().zip(&naive) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sharpened_model_is_exactly_one_hot() {
        let targets = [3, 0, 49, 17];
        let model = LowRankModel::sharpened(50, &targets, 2, 1e5).unwrap();
        for (c, &t) in targets.iter().enumerate() {
            let row = model.predict_row(c);
            assert_eq!(row[t], 1.0);
            assert_eq!(row.iter().filter(|&&p| p > 0.0).count(), 1);
        }
    }

    #[test]
    fn point_mass_model_samples_are_identical() {
        let model = LowRankModel::sharpened(4, &[2, 3, 0, 1], 2, 1e4).unwrap();
        let samples = sample_model(&model, 0, 3, 20, &mut stream(5)).unwrap();
        assert!(samples.iter().all(|s| s == &vec![2, 0, 2]));
    }

    #[test]
    fn adam_zero_gradient_is_a_no_op() {
        let mut model = LowRankModel::init(4, 4, 2, 0.1, &mut stream(3)).unwrap();
        let before = model.clone();
        let mut opt = OptimizerState::new(&model, AdamConfig::default());
        let zeros = Gradients::zeros_like(&model);
        opt.step(&mut model, &zeros).unwrap();
        assert_eq!(model, before);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let config = AdamConfig::default();
        let mut params = vec![1.0, -2.0];
        let mut adam = Adam::new(2, config);
        adam.update(&mut params, &[0.5, -3.0]).unwrap();
        // m̂ = g and v̂ = g² after bias correction, so the step is lr·g/(|g|+ε).
        let expected = [1.0 - 0.01 * 0.5 / (0.5 + 1e-8), -2.0 + 0.01 * 3.0 / (3.0 + 1e-8)];
        for (p, e) in params.iter().zip(expected) {
            assert!((p - e).abs() < 1e-15);
        }
    }

    #[test]
    fn adam_rejects_non_finite() {
        let mut model = LowRankModel::init(3, 3, 1, 0.1, &mut stream(3)).unwrap();
        let before = model.clone();
        let mut opt = OptimizerState::new(&model, AdamConfig::default());
        let mut grads = Gradients::zeros_like(&model);
        grads.d_psi[(0, 1)] = f64::NAN;
        assert!(matches!(opt.step(&mut model, &grads), Err(Error::NonFinite(_))));
        assert_eq!(model, before);
    }

    #[test]
    fn adam_runs_are_bitwise_reproducible() {
        let run = || {
            let mut model = LowRankModel::init(5, 5, 2, 0.1, &mut stream(12)).unwrap();
            let mut opt = OptimizerState::new(&model, AdamConfig::default());
            for step in 0..50 {
                let mut d_logits = model.logits();
                d_logits.apply(|v| *v = (*v * step as f64).sin());
                let grads = model.backprop_logits(&d_logits);
                opt.step(&mut model, &grads).unwrap();
            }
            model
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn rank_bounds_are_checked() {
        assert!(LowRankModel::init(4, 4, 0, 0.1, &mut stream(0)).is_err());
        assert!(LowRankModel::init(4, 4, 5, 0.1, &mut stream(0)).is_err());
        assert!(LowRankModel::init(4, 4, 2, 0.0, &mut stream(0)).is_err());
    }
}
