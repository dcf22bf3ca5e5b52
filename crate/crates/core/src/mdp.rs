//! Finite MDPs, Bellman operators and exact solvers.
//!
//! This is the ground-truth layer every experiment and oracle is measured
//! against, so everything here is computed exactly (dense linear algebra,
//! repeated matrix application) rather than by sampling.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::sample_categorical;

/// Tolerance on row sums of stochastic matrices.
pub const ROW_SUM_TOL: f64 = 1e-12;

pub(crate) fn check_row_stochastic(matrix: &DMatrix<f64>, what: &str) -> Result<()> {
    for (x, row) in matrix.row_iter().enumerate() {
        let mut sum = 0.0;
        for &p in row.iter() {
            if !p.is_finite() || p < 0.0 {
                return Err(Error::InvalidDistribution(format!(
                    "{what}: row {x} has entry {p}"
                )));
            }
            sum += p;
        }
        if (sum - 1.0).abs() > ROW_SUM_TOL {
            return Err(Error::InvalidDistribution(format!(
                "{what}: row {x} sums to {sum}"
            )));
        }
    }
    Ok(())
}

fn check_discount(discount: f64) -> Result<()> {
    if !(0.0..1.0).contains(&discount) {
        return Err(Error::InvalidParameter(format!(
            "discount must lie in [0, 1), got {discount}"
        )));
    }
    Ok(())
}

/// A policy-conditioned Markov reward process: `P^π`, `r(x)` and `γ`.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteMdp {
    transition: DMatrix<f64>,
    reward: Vec<f64>,
    discount: f64,
}

impl FiniteMdp {
    pub fn new(transition: DMatrix<f64>, reward: Vec<f64>, discount: f64) -> Result<Self> {
        let n = transition.nrows();
        if n == 0 || transition.ncols() != n {
            return Err(Error::Dimension(format!(
                "transition must be square and non-empty, got {}x{}",
                transition.nrows(),
                transition.ncols()
            )));
        }
        if reward.len() != n {
            return Err(Error::Dimension(format!(
                "reward has length {} for {n} states",
                reward.len()
            )));
        }
        if reward.iter().any(|r| !r.is_finite()) {
            return Err(Error::NonFinite("reward".into()));
        }
        check_discount(discount)?;
        check_row_stochastic(&transition, "transition")?;
        Ok(Self {
            transition,
            reward,
            discount,
        })
    }

    /// Builds an MDP from nested rows, convenient for tests and bindings.
    pub fn from_rows(rows: &[Vec<f64>], reward: Vec<f64>, discount: f64) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::Dimension("transition rows must all have length n".into()));
        }
        let transition = DMatrix::from_fn(n, n, |i, j| rows[i][j]);
        Self::new(transition, reward, discount)
    }

    pub fn n_states(&self) -> usize {
        self.reward.len()
    }

    pub fn transition(&self) -> &DMatrix<f64> {
        &self.transition
    }

    pub fn reward(&self) -> &[f64] {
        &self.reward
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    /// `P(x'|x)` for a single state.
    pub fn row(&self, state: usize) -> Vec<f64> {
        self.transition.row(state).iter().copied().collect()
    }

    /// True when every transition row is a point mass.
    pub fn is_deterministic(&self) -> bool {
        self.transition
            .row_iter()
            .all(|row| row.iter().filter(|&&p| p > 0.0).count() == 1)
    }

    /// `P v` as a plain vector.
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        mat_vec(&self.transition, v)
    }

    /// Distribution of `x^(m)` when starting in `state`, i.e. row `state` of `P^m`.
    pub fn m_step_row(&self, state: usize, m: usize) -> Vec<f64> {
        let n = self.n_states();
        let mut dist = vec![0.0; n];
        dist[state] = 1.0;
        for _ in 0..m {
            dist = vec_mat(&dist, &self.transition);
        }
        dist
    }
}

pub(crate) fn mat_vec(m: &DMatrix<f64>, v: &[f64]) -> Vec<f64> {
    (m * DVector::from_column_slice(v)).as_slice().to_vec()
}

/// Row vector times matrix.
pub(crate) fn vec_mat(v: &[f64], m: &DMatrix<f64>) -> Vec<f64> {
    (0..m.ncols())
        .map(|j| m.column(j).iter().zip(v).map(|(a, b)| a * b).sum())
        .collect()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// An MDP with explicit actions: one row-stochastic matrix per action and a
/// state-only reward.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlMdp {
    transitions: Vec<DMatrix<f64>>,
    reward: Vec<f64>,
    discount: f64,
}

impl ControlMdp {
    pub fn new(transitions: Vec<DMatrix<f64>>, reward: Vec<f64>, discount: f64) -> Result<Self> {
        let n = reward.len();
        if n == 0 || transitions.is_empty() {
            return Err(Error::Dimension("need at least one state and one action".into()));
        }
        for (a, p) in transitions.iter().enumerate() {
            if p.nrows() != n || p.ncols() != n {
                return Err(Error::Dimension(format!(
                    "action {a} matrix is {}x{}, expected {n}x{n}",
                    p.nrows(),
                    p.ncols()
                )));
            }
            check_row_stochastic(p, &format!("action {a}"))?;
        }
        check_discount(discount)?;
        Ok(Self {
            transitions,
            reward,
            discount,
        })
    }

    pub fn n_states(&self) -> usize {
        self.reward.len()
    }

    pub fn n_actions(&self) -> usize {
        self.transitions.len()
    }

    pub fn transition(&self, action: usize) -> &DMatrix<f64> {
        &self.transitions[action]
    }

    pub fn reward(&self) -> &[f64] {
        &self.reward
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    /// `Q(x, a) = r(x) + γ Σ_x' P(x'|x,a) v(x')`, indexed `[x][a]`.
    pub fn q_values(&self, v: &[f64]) -> Vec<Vec<f64>> {
        let next: Vec<Vec<f64>> = self.transitions.iter().map(|p| mat_vec(p, v)).collect();
        (0..self.n_states())
            .map(|x| {
                (0..self.n_actions())
                    .map(|a| self.reward[x] + self.discount * next[a][x])
                    .collect()
            })
            .collect()
    }
}

/// Tabular value estimate together with its frozen target copy.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueTable {
    pub values: Vec<f64>,
    pub target_values: Vec<f64>,
}

impl ValueTable {
    pub fn zeros(n: usize) -> Self {
        Self {
            values: vec![0.0; n],
            target_values: vec![0.0; n],
        }
    }

    pub fn from_values(values: Vec<f64>) -> Self {
        Self {
            target_values: values.clone(),
            values,
        }
    }

    /// Copies the live values into the target table.
    pub fn sync_target(&mut self) {
        self.target_values.copy_from_slice(&self.values);
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.values
            .iter()
            .chain(&self.target_values)
            .all(|v| v.is_finite())
    }
}

/// An environment rollout `x^(0..=L)` with rewards `r^(0..L)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub states: Vec<usize>,
    pub rewards: Vec<f64>,
}

impl Trajectory {
    /// Number of transitions `L`.
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }
}

/// Solves `(I − γP) V = r` with a dense LU factorization.
pub fn exact_value(mdp: &FiniteMdp) -> Result<Vec<f64>> {
    let n = mdp.n_states();
    let system = DMatrix::<f64>::identity(n, n) - mdp.transition() * mdp.discount();
    let rhs = DVector::from_column_slice(mdp.reward());
    let lu = system.clone().lu();
    let mut solution = lu
        .solve(&rhs)
        .ok_or_else(|| Error::Singular("I - γP is singular".into()))?;
    // One round of iterative refinement keeps the Bellman residual at the
    // roundoff floor for discounts close to one.
    let residual = &rhs - &system * &solution;
    if let Some(correction) = lu.solve(&residual) {
        solution += correction;
    }
    if solution.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("exact value solution".into()));
    }
    Ok(solution.as_slice().to_vec())
}

/// The `b`-step Bellman operator `T^b v`; `b = 0` returns `v` unchanged.
pub fn bellman_operator(mdp: &FiniteMdp, v: &[f64], b: usize) -> Result<Vec<f64>> {
    if v.len() != mdp.n_states() {
        return Err(Error::Dimension(format!(
            "value has length {} for {} states",
            v.len(),
            mdp.n_states()
        )));
    }
    let mut out = v.to_vec();
    for _ in 0..b {
        let next = mdp.apply(&out);
        out = mdp
            .reward()
            .iter()
            .zip(next)
            .map(|(r, pv)| r + mdp.discount() * pv)
            .collect();
    }
    Ok(out)
}

/// Conditional first and second moments of the bootstrapped return
/// `G = Σ_{n<b} γⁿ r(x_n) + γᵇ v(x_b)` given `x_0 = s`, for every state `s`.
///
/// The first moment is `T^b v`.
pub fn bootstrap_moments(mdp: &FiniteMdp, v: &[f64], b: usize) -> (Vec<f64>, Vec<f64>) {
    let gamma = mdp.discount();
    let mut first = v.to_vec();
    let mut second: Vec<f64> = v.iter().map(|x| x * x).collect();
    for _ in 0..b {
        let p_first = mdp.apply(&first);
        let p_second = mdp.apply(&second);
        let r = mdp.reward();
        second = (0..r.len())
            .map(|s| r[s] * r[s] + 2.0 * gamma * r[s] * p_first[s] + gamma * gamma * p_second[s])
            .collect();
        first = (0..r.len()).map(|s| r[s] + gamma * p_first[s]).collect();
    }
    (first, second)
}

/// Samples an `length`-step rollout starting at `start`.
pub fn sample_trajectory<R: Rng + ?Sized>(
    mdp: &FiniteMdp,
    start: usize,
    length: usize,
    rng: &mut R,
) -> Result<Trajectory> {
    if start >= mdp.n_states() {
        return Err(Error::InvalidParameter(format!(
            "start state {start} out of range for {} states",
            mdp.n_states()
        )));
    }
    let mut states = Vec::with_capacity(length + 1);
    let mut rewards = Vec::with_capacity(length);
    states.push(start);
    let mut x = start;
    for _ in 0..length {
        rewards.push(mdp.reward()[x]);
        x = sample_categorical(mdp.transition().row(x).iter().copied(), rng);
        states.push(x);
    }
    Ok(Trajectory { states, rewards })
}

/// `P^π(x'|x) = Σ_a π(a|x) P(x'|x,a)` for a policy given as an
/// `n × n_actions` row-stochastic matrix.
pub fn induce_policy_kernel(cmdp: &ControlMdp, policy: &DMatrix<f64>) -> Result<FiniteMdp> {
    let n = cmdp.n_states();
    if policy.nrows() != n || policy.ncols() != cmdp.n_actions() {
        return Err(Error::Dimension(format!(
            "policy is {}x{}, expected {n}x{}",
            policy.nrows(),
            policy.ncols(),
            cmdp.n_actions()
        )));
    }
    check_row_stochastic(policy, "policy")?;
    let mut transition = DMatrix::<f64>::zeros(n, n);
    for x in 0..n {
        for a in 0..cmdp.n_actions() {
            let weight = policy[(x, a)];
            if weight == 0.0 {
                continue;
            }
            let p = cmdp.transition(a);
            for y in 0..n {
                transition[(x, y)] += weight * p[(x, y)];
            }
        }
    }
    FiniteMdp::new(transition, cmdp.reward().to_vec(), cmdp.discount())
}

/// One-hot policy matrix from a per-state action choice.
pub fn deterministic_policy(actions: &[usize], n_actions: usize) -> DMatrix<f64> {
    DMatrix::from_fn(actions.len(), n_actions, |x, a| {
        if actions[x] == a {
            1.0
        } else {
            0.0
        }
    })
}

pub fn uniform_policy(n_states: usize, n_actions: usize) -> DMatrix<f64> {
    DMatrix::from_element(n_states, n_actions, 1.0 / n_actions as f64)
}

/// Greedy action per state; ties (within `1e-12`) go to the lowest index.
pub fn greedy_actions(q: &[Vec<f64>]) -> Vec<usize> {
    q.iter()
        .map(|row| {
            let best = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            row.iter().position(|&v| v >= best - 1e-12).unwrap_or(0)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyIterationResult {
    pub actions: Vec<usize>,
    pub values: Vec<f64>,
    /// Number of improvement steps until the policy stopped changing.
    pub iterations: usize,
    /// Evaluated value of each successive policy, starting with the initial one.
    pub value_history: Vec<Vec<f64>>,
}

/// Exact policy iteration from the uniform random policy.
pub fn policy_iteration(cmdp: &ControlMdp, max_iterations: usize) -> Result<PolicyIterationResult> {
    let mut policy = uniform_policy(cmdp.n_states(), cmdp.n_actions());
    let mut actions: Option<Vec<usize>> = None;
    let mut history = Vec::new();
    for iteration in 0..=max_iterations {
        let values = exact_value(&induce_policy_kernel(cmdp, &policy)?)?;
        history.push(values.clone());
        let improved = greedy_actions(&cmdp.q_values(&values));
        if actions.as_ref() == Some(&improved) || iteration == max_iterations {
            return Ok(PolicyIterationResult {
                actions: improved,
                values,
                iterations: iteration,
                value_history: history,
            });
        }
        policy = deterministic_policy(&improved, cmdp.n_actions());
        actions = Some(improved);
    }
    unreachable!("loop returns on the final iteration")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn swap_chain() -> FiniteMdp {
        FiniteMdp::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]], vec![1.0, 0.0], 0.5).unwrap()
    }

    fn value_iteration(mdp: &FiniteMdp) -> Vec<f64> {
        let mut v = vec![0.0; mdp.n_states()];
        loop {
            let next: Vec<f64> = (0..mdp.n_states())
                .map(|x| {
                    mdp.reward()[x]
                        + mdp.discount()
                            * (0..mdp.n_states())
                                .map(|y| mdp.transition()[(x, y)] * v[y])
                                .sum::<f64>()
                })
                .collect();
            let delta = next.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            v = next;
            if delta < 1e-14 {
                return v;
            }
        }
    }

    #[test]
    fn single_state_geometric_series() {
        let mdp = FiniteMdp::from_rows(&[vec![1.0]], vec![1.0], 0.9).unwrap();
        let v = exact_value(&mdp).unwrap();
        assert!((v[0] - 10.0).abs() < 1e-12);
    }

    #[test]
    fn zero_discount_value_is_reward() {
        let mdp = FiniteMdp::from_rows(
            &[vec![0.5, 0.5, 0.0], vec![0.0, 0.0, 1.0], vec![1.0, 0.0, 0.0]],
            vec![1.5, -2.0, 0.25],
            0.0,
        )
        .unwrap();
        assert_eq!(exact_value(&mdp).unwrap(), vec![1.5, -2.0, 0.25]);
    }

    #[test]
    fn swap_chain_matches_value_iteration() {
        let mdp = swap_chain();
        let oracle = value_iteration(&mdp);
        let v = exact_value(&mdp).unwrap();
        for (a, b) in v.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((v[0] - 4.0 / 3.0).abs() < 1e-12);
        assert!((v[1] - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn bellman_zero_steps_is_identity() {
        let mdp = swap_chain();
        let v = vec![3.0, -1.0];
        assert_eq!(bellman_operator(&mdp, &v, 0).unwrap(), v);
    }

    #[test]
    fn bellman_on_zero_and_constant() {
        let mdp = FiniteMdp::from_rows(
            &[vec![0.2, 0.8], vec![0.6, 0.4]],
            vec![1.0, -3.0],
            0.7,
        )
        .unwrap();
        assert_eq!(bellman_operator(&mdp, &[0.0, 0.0], 1).unwrap(), vec![1.0, -3.0]);
        let out = bellman_operator(&mdp, &[2.0, 2.0], 1).unwrap();
        assert!((out[0] - (1.0 + 1.4)).abs() < 1e-15);
        assert!((out[1] - (-3.0 + 1.4)).abs() < 1e-15);
    }

    #[test]
    fn bellman_rejects_wrong_length() {
        assert!(matches!(
            bellman_operator(&swap_chain(), &[1.0], 1),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn invalid_mdps_are_rejected() {
        assert!(FiniteMdp::from_rows(&[vec![0.5, 0.4], vec![0.0, 1.0]], vec![0.0, 0.0], 0.5).is_err());
        assert!(FiniteMdp::from_rows(&[vec![1.0]], vec![0.0], 1.0).is_err());
        assert!(FiniteMdp::from_rows(&[vec![1.5, -0.5], vec![0.0, 1.0]], vec![0.0, 0.0], 0.5).is_err());
    }

    #[test]
    fn bootstrap_moments_match_enumeration() {
        let mdp = FiniteMdp::from_rows(
            &[vec![0.2, 0.8], vec![0.6, 0.4]],
            vec![1.0, -3.0],
            0.7,
        )
        .unwrap();
        let v = [0.5, 2.0];
        let (first, second) = bootstrap_moments(&mdp, &v, 2);
        for s in 0..2 {
            let (mut m1, mut m2) = (0.0, 0.0);
            for a in 0..2 {
                for b in 0..2 {
                    let p = mdp.transition()[(s, a)] * mdp.transition()[(a, b)];
                    let g = mdp.reward()[s] + 0.7 * mdp.reward()[a] + 0.49 * v[b];
                    m1 += p * g;
                    m2 += p * g * g;
                }
            }
            assert!((first[s] - m1).abs() < 1e-12);
            assert!((second[s] - m2).abs() < 1e-12);
        }
    }

    #[test]
    fn deterministic_chain_rollout() {
        let mdp = FiniteMdp::from_rows(
            &[vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0], vec![0.0, 0.0, 1.0]],
            vec![1.0, 2.0, 3.0],
            0.9,
        )
        .unwrap();
        let mut rng = stream(0);
        let t = sample_trajectory(&mdp, 0, 2, &mut rng).unwrap();
        assert_eq!(t.states, vec![0, 1, 2]);
        assert_eq!(t.rewards, vec![1.0, 2.0]);
        let t = sample_trajectory(&mdp, 1, 0, &mut rng).unwrap();
        assert_eq!(t.states, vec![1]);
        assert!(t.rewards.is_empty());
    }

    #[test]
    fn uniform_successor_frequency() {
        let mdp = FiniteMdp::from_rows(&[vec![0.5, 0.5], vec![0.5, 0.5]], vec![0.0, 0.0], 0.9).unwrap();
        let mut rng = stream(11);
        let t = sample_trajectory(&mdp, 0, 100_000, &mut rng).unwrap();
        let (mut from_zero, mut to_zero) = (0usize, 0usize);
        for w in t.states.windows(2) {
            if w[0] == 0 {
                from_zero += 1;
                if w[1] == 0 {
                    to_zero += 1;
                }
            }
        }
        let freq = to_zero as f64 / from_zero as f64;
        assert!((freq - 0.5).abs() < 0.01, "{freq}");
    }

    #[test]
    fn induced_kernel_cases() {
        let p0 = DMatrix::from_row_slice(2, 2, &[0.9, 0.1, 0.3, 0.7]);
        let p1 = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.5, 0.5]);
        let cmdp = ControlMdp::new(vec![p0.clone(), p1.clone()], vec![0.0, 1.0], 0.9).unwrap();

        let det = induce_policy_kernel(&cmdp, &deterministic_policy(&[1, 0], 2)).unwrap();
        assert_eq!(det.transition().row(0), p1.row(0));
        assert_eq!(det.transition().row(1), p0.row(1));

        let uniform = induce_policy_kernel(&cmdp, &uniform_policy(2, 2)).unwrap();
        for x in 0..2 {
            for y in 0..2 {
                let brute = 0.5 * p0[(x, y)] + 0.5 * p1[(x, y)];
                assert!((uniform.transition()[(x, y)] - brute).abs() < 1e-15);
            }
        }

        let same = ControlMdp::new(vec![p0.clone(), p0.clone()], vec![0.0, 1.0], 0.9).unwrap();
        let induced = induce_policy_kernel(&same, &uniform_policy(2, 2)).unwrap();
        assert_eq!(induced.transition(), &p0);
    }

    #[test]
    fn greedy_tie_break_is_lowest_index() {
        assert_eq!(greedy_actions(&[vec![1.0, 1.0, 0.0], vec![0.0, 2.0, 2.0]]), vec![0, 1]);
    }
}
