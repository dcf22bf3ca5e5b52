//! Calibration analysis on small discrete problems.
//!
//! The central object is the expected k-sample loss of a model distribution
//! `q` against a true distribution `p` for a fixed function `f`:
//!
//! ```text
//! g(q) = Var_p[f] + (E_q f − E_p f)² + Var_q[f] / k
//! ```
//!
//! Its minimizers need not match the true mean when `k` is finite. This
//! module evaluates `g` exactly, minimizes it by exhaustive grid search and in
//! closed form, and analyses the analogous bias of the MuZero-style value
//! loss.

pub mod suite;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::mdp::{bellman_operator, dot, FiniteMdp};

/// Tolerance for deciding that some support point sits exactly at the mean.
pub const MEAN_MATCH_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteInstance {
    f_values: Vec<f64>,
    p: Vec<f64>,
    k: usize,
}

impl DiscreteInstance {
    pub fn new(f_values: Vec<f64>, p: Vec<f64>, k: usize) -> Result<Self> {
        if f_values.is_empty() || f_values.len() != p.len() {
            return Err(Error::Dimension(format!(
                "{} function values for {} probabilities",
                f_values.len(),
                p.len()
            )));
        }
        check_distribution(&p)?;
        if k == 0 {
            return Err(Error::InvalidParameter("k must be at least 1".into()));
        }
        if f_values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("function values".into()));
        }
        Ok(Self { f_values, p, k })
    }

    pub fn support_size(&self) -> usize {
        self.f_values.len()
    }

    pub fn f_values(&self) -> &[f64] {
        &self.f_values
    }

    pub fn p(&self) -> &[f64] {
        &self.p
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn with_k(&self, k: usize) -> Result<Self> {
        Self::new(self.f_values.clone(), self.p.clone(), k)
    }

    pub fn true_mean(&self) -> f64 {
        dot(&self.p, &self.f_values)
    }

    pub fn true_variance(&self) -> f64 {
        variance(&self.p, &self.f_values)
    }

    /// True when no support point has `f(x) = E_p f`; otherwise a point mass
    /// there attains the lower bound `Var_p f` and no bias can be shown.
    pub fn no_point_at_mean(&self) -> bool {
        let mu = self.true_mean();
        self.f_values.iter().all(|f| (f - mu).abs() > MEAN_MATCH_TOL)
    }

    fn check_candidate(&self, q: &[f64]) -> Result<()> {
        if q.len() != self.support_size() {
            return Err(Error::Dimension(format!(
                "candidate has {} entries for a support of {}",
                q.len(),
                self.support_size()
            )));
        }
        check_distribution(q)
    }
}

/// `Var_p f + (E_q f − E_p f)² + Var_q f / k`.
pub fn g_objective(instance: &DiscreteInstance, q: &[f64]) -> Result<f64> {
    instance.check_candidate(q)?;
    Ok(g_unchecked(instance, q))
}

fn g_unchecked(instance: &DiscreteInstance, q: &[f64]) -> f64 {
    let gap = dot(q, &instance.f_values) - instance.true_mean();
    instance.true_variance() + gap * gap + variance(q, &instance.f_values) / instance.k as f64
}

/// Expected calibrated loss: `g` without the model-variance term.
pub fn calibrated_objective(instance: &DiscreteInstance, q: &[f64]) -> Result<f64> {
    instance.check_candidate(q)?;
    let gap = dot(q, &instance.f_values) - instance.true_mean();
    Ok(instance.true_variance() + gap * gap)
}

/// All distributions over `support_size` points whose entries are multiples
/// of `1 / resolution`, in lexicographic order of the integer counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimplexGrid {
    support_size: usize,
    resolution: usize,
}

impl SimplexGrid {
    pub fn new(support_size: usize, resolution: usize) -> Result<Self> {
        if support_size == 0 || resolution == 0 {
            return Err(Error::InvalidParameter(
                "grid needs a non-empty support and positive resolution".into(),
            ));
        }
        Ok(Self {
            support_size,
            resolution,
        })
    }

    /// Resolution 1000 for two points and 60 for four, scaled so that larger
    /// supports stay around 10⁴ to 10⁵ grid points.
    pub fn default_for(support_size: usize) -> Result<Self> {
        let resolution = match support_size {
            0..=2 => 1000,
            3 => 200,
            4 => 60,
            5 => 30,
            _ => 20,
        };
        Self::new(support_size, resolution)
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn support_size(&self) -> usize {
        self.support_size
    }

    pub fn points(&self) -> Vec<Vec<f64>> {
        let mut out = Vec::new();
        let mut counts = vec![0usize; self.support_size];
        self.fill(0, self.resolution, &mut counts, &mut out);
        out
    }

    fn fill(&self, idx: usize, remaining: usize, counts: &mut Vec<usize>, out: &mut Vec<Vec<f64>>) {
        if idx + 1 == self.support_size {
            counts[idx] = remaining;
            let r = self.resolution as f64;
            out.push(counts.iter().map(|&c| c as f64 / r).collect());
            return;
        }
        for c in 0..=remaining {
            counts[idx] = c;
            self.fill(idx + 1, remaining - c, counts, out);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridMinimum {
    pub q: Vec<f64>,
    pub value: f64,
    pub mean: f64,
    /// `|E_q f − E_p f|` is at most one grid step in mean space.
    pub matches_true_mean: bool,
}

/// Exhaustive minimization of `objective` over `grid`; ties go to the lowest
/// grid index.
pub fn brute_force_min<F>(instance: &DiscreteInstance, grid: &SimplexGrid, objective: F) -> Result<GridMinimum>
where
    F: Fn(&DiscreteInstance, &[f64]) -> f64 + Sync,
{
    if grid.support_size() != instance.support_size() {
        return Err(Error::Dimension("grid and instance supports differ".into()));
    }
    let points = grid.points();
    let (index, value) = points
        .par_iter()
        .enumerate()
        .map(|(i, q)| (i, objective(instance, q)))
        .reduce(
            || (usize::MAX, f64::INFINITY),
            |a, b| match a.1.total_cmp(&b.1) {
                std::cmp::Ordering::Less => a,
                std::cmp::Ordering::Greater => b,
                std::cmp::Ordering::Equal => {
                    if a.0 <= b.0 {
                        a
                    } else {
                        b
                    }
                }
            },
        );
    let q = points[index].clone();
    let mean = dot(&q, instance.f_values());
    Ok(GridMinimum {
        matches_true_mean: (mean - instance.true_mean()).abs() <= mean_grid_step(instance, grid),
        q,
        value,
        mean,
    })
}

/// Largest change in `E_q f` from moving one unit of mass on the grid.
pub fn mean_grid_step(instance: &DiscreteInstance, grid: &SimplexGrid) -> f64 {
    let (lo, hi) = min_max(instance.f_values());
    (hi - lo) / grid.resolution() as f64 + MEAN_MATCH_TOL
}

pub fn brute_force_g_min(instance: &DiscreteInstance, grid: &SimplexGrid) -> Result<GridMinimum> {
    brute_force_min(instance, grid, g_unchecked)
}

/// Minimum of `g` over all distributions on the support, in closed form.
///
/// For `k = 1`, `g` is linear in `q` and is minimized by a point mass on the
/// support point closest to the true mean. For `k > 1`, the smallest variance
/// with a given mean `t` mixes the two support values bracketing `t`, giving
/// `Var = (t − a)(b − t)`; `g` restricted to each such segment is a convex
/// quadratic in `t` with minimizer `(2kμ − a − b) / (2(k − 1))` clamped to
/// `[a, b]`.
pub fn exact_g_min_mean(instance: &DiscreteInstance) -> f64 {
    let mu = instance.true_mean();
    let mut values = instance.f_values.clone();
    values.sort_by(f64::total_cmp);
    values.dedup();
    let k = instance.k as f64;
    let objective = |t: f64, a: f64, b: f64| (t - mu).powi(2) + (t - a) * (b - t) / k;

    let mut best = (f64::INFINITY, values[0]);
    let mut consider = |value: f64, t: f64| {
        if value < best.0 {
            best = (value, t);
        }
    };
    for &v in &values {
        consider((v - mu).powi(2), v);
    }
    if instance.k > 1 {
        for pair in values.windows(2) {
            let (a, b) = (pair[0], pair[1]);
            let t = ((2.0 * k * mu - a - b) / (2.0 * (k - 1.0))).clamp(a, b);
            consider(objective(t, a, b), t);
        }
    }
    best.1
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WitnessRow {
    pub state: usize,
    pub uncalibrated_min_mean: f64,
    pub true_mean: f64,
    pub gap: f64,
    pub no_point_at_mean: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prop21Report {
    pub rows: Vec<WitnessRow>,
    /// Largest gap over states.
    pub gap: f64,
}

/// Minimizes the expected one-step `k`-sample loss over each model row of
/// `mdp` in closed form and reports how far the minimizer's predicted value
/// lies from the true expected value.
pub fn prop21_witness(mdp: &FiniteMdp, v: &[f64], k: usize) -> Result<Prop21Report> {
    if v.len() != mdp.n_states() {
        return Err(Error::Dimension("value length does not match the mdp".into()));
    }
    let rows = (0..mdp.n_states())
        .map(|x| {
            let instance = DiscreteInstance::new(v.to_vec(), mdp.row(x), k)?;
            let min_mean = exact_g_min_mean(&instance);
            let true_mean = instance.true_mean();
            Ok(WitnessRow {
                state: x,
                uncalibrated_min_mean: min_mean,
                true_mean,
                gap: (min_mean - true_mean).abs(),
                no_point_at_mean: instance.no_point_at_mean(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let gap = rows.iter().map(|r| r.gap).fold(0.0, f64::max);
    Ok(Prop21Report { rows, gap })
}

/// `L(f) = E_μ[(f − g)²] + E_μ[f g] − E_μ[f] E_μ[g]`.
pub fn lemma_a4_objective(f: &[f64], g: &[f64], mu: &[f64]) -> f64 {
    let sq: f64 = (0..mu.len()).map(|i| mu[i] * (f[i] - g[i]).powi(2)).sum();
    let cross: f64 = (0..mu.len()).map(|i| mu[i] * f[i] * g[i]).sum();
    sq + cross - dot(mu, f) * dot(mu, g)
}

/// `d/dε L(g − ε g)` at `ε = 0`, which equals `E_μ[g]² − E_μ[g²] = −Var_μ[g]`.
pub fn lemma_a4_descent(g_values: &[f64], mu: &[f64]) -> Result<f64> {
    if g_values.len() != mu.len() {
        return Err(Error::Dimension("g and μ lengths differ".into()));
    }
    check_distribution(mu)?;
    let mean = dot(mu, g_values);
    let second: f64 = mu.iter().zip(g_values).map(|(m, g)| m * g * g).sum();
    Ok(mean * mean - second)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prop23Report {
    /// `T V_tar`, the minimizer of the Bellman residual.
    pub brm_minimizer: Vec<f64>,
    /// Minimizer of the expected one-sample `(1, 1)` loss with a perfect model.
    pub surrogate_minimizer: Vec<f64>,
    /// Max-norm distance between the two over states the model can reach.
    pub bias_norm: f64,
}

/// Closed-form minimizer of `E[(V̂(x̂) − r(x') − γ V_tar(x''))²]` over tabular
/// `V̂`, where `x` is uniform, `x̂` and `x'` are independent successors of `x`
/// and `x''` follows `x'`.
///
/// Setting the derivative in `V̂(z)` to zero gives
/// `V̂(z) = Σ_x P(x,z) (P T V_tar)(x) / Σ_x P(x,z)`. States with no
/// predecessor do not enter the loss; they are reported at `T V_tar`.
pub fn prop23_value_bias(mdp: &FiniteMdp, v_tar: &[f64]) -> Result<Prop23Report> {
    let brm = bellman_operator(mdp, v_tar, 1)?;
    let expected_target = mdp.apply(&brm);
    let n = mdp.n_states();
    let p = mdp.transition();
    let mut surrogate = brm.clone();
    let mut bias = 0.0f64;
    for z in 0..n {
        let mass: f64 = (0..n).map(|x| p[(x, z)]).sum();
        if mass > 0.0 {
            surrogate[z] = (0..n).map(|x| p[(x, z)] * expected_target[x]).sum::<f64>() / mass;
            bias = bias.max((surrogate[z] - brm[z]).abs());
        }
    }
    Ok(Prop23Report {
        brm_minimizer: brm,
        surrogate_minimizer: surrogate,
        bias_norm: bias,
    })
}

/// Expected loss minimized by [`prop23_value_bias`], evaluated in closed form
/// for a given `V̂`.
pub fn prop23_objective(mdp: &FiniteMdp, v_tar: &[f64], values: &[f64]) -> Result<f64> {
    let (first, second) = crate::mdp::bootstrap_moments(mdp, v_tar, 1);
    let n = mdp.n_states();
    let mut total = 0.0;
    for x in 0..n {
        let row = mdp.row(x);
        let target_mean = dot(&row, &first);
        let target_second = dot(&row, &second);
        let model_mean = dot(&row, values);
        let model_second: f64 = row.iter().zip(values).map(|(p, v)| p * v * v).sum();
        total += model_second - 2.0 * model_mean * target_mean + target_second;
    }
    Ok(total / n as f64)
}

pub(crate) fn variance(p: &[f64], f: &[f64]) -> f64 {
    let mu = dot(p, f);
    p.iter().zip(f).map(|(pi, fi)| pi * (fi - mu).powi(2)).sum()
}

fn min_max(values: &[f64]) -> (f64, f64) {
    values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
}

fn check_distribution(p: &[f64]) -> Result<()> {
    if p.iter().any(|&x| !x.is_finite() || x < 0.0) {
        return Err(Error::InvalidDistribution("negative or non-finite probability".into()));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidDistribution(format!("probabilities sum to {sum}")));
    }
    Ok(())
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn log_log_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let cov: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let var: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    cov / var
}
