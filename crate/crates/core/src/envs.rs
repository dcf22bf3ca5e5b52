//! Benchmark problem generators: random Garnet MDPs and a slippery 5×5
//! cliffwalk.

use nalgebra::DMatrix;
use rand::seq::index;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{ControlMdp, FiniteMdp};
use crate::rng::stream;

/// Logit assigned to non-successor states. It is used as-is, never divided by
/// the temperature, so `exp(sentinel - max)` underflows to exactly zero
/// instead of producing `-inf - -inf`.
const NON_SUCCESSOR_LOGIT: f64 = -1e30;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GarnetSpec {
    #[serde(default = "default_garnet_states")]
    pub n_states: usize,
    #[serde(default = "default_garnet_successors")]
    pub n_successors: usize,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_garnet_discount")]
    pub discount: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_garnet_states() -> usize {
    50
}
fn default_garnet_successors() -> usize {
    10
}
fn default_temperature() -> f64 {
    1.0
}
fn default_garnet_discount() -> f64 {
    0.9
}

impl Default for GarnetSpec {
    fn default() -> Self {
        Self {
            n_states: default_garnet_states(),
            n_successors: default_garnet_successors(),
            temperature: default_temperature(),
            discount: default_garnet_discount(),
            seed: 0,
        }
    }
}

impl GarnetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_states == 0 || self.n_successors == 0 || self.n_successors > self.n_states {
            return Err(Error::InvalidParameter(format!(
                "need 1 <= n_successors <= n_states, got k={} n={}",
                self.n_successors, self.n_states
            )));
        }
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "temperature must be finite and positive, got {}",
                self.temperature
            )));
        }
        Ok(())
    }
}

/// Samples a Garnet problem under a fixed policy.
///
/// For every state `k` distinct successors are drawn without replacement and
/// given weights `ω ~ N(0, 1)`; the transition row is `softmax(ω / τ)` over
/// the successors. Rewards are i.i.d. standard normal. The random stream is
/// consumed state by state (successors, then weights) followed by the rewards,
/// so the successor structure and weights do not depend on the temperature.
pub fn generate_garnet(spec: &GarnetSpec) -> Result<FiniteMdp> {
    spec.validate()?;
    let n = spec.n_states;
    let mut rng = stream(spec.seed);
    let mut transition = DMatrix::<f64>::zeros(n, n);
    let mut logits = vec![NON_SUCCESSOR_LOGIT; n];
    for x in 0..n {
        logits.fill(NON_SUCCESSOR_LOGIT);
        for successor in index::sample(&mut rng, n, spec.n_successors) {
            let weight: f64 = rng.sample(StandardNormal);
            logits[successor] = weight / spec.temperature;
        }
        let row = softmax(&logits);
        for (y, p) in row.into_iter().enumerate() {
            transition[(x, y)] = p;
        }
    }
    let reward: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    FiniteMdp::new(transition, reward, spec.discount)
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= total);
    out
}

pub const CLIFF_SIDE: usize = 5;
pub const CLIFF_STATES: usize = CLIFF_SIDE * CLIFF_SIDE;
pub const CLIFF_START: usize = (CLIFF_SIDE - 1) * CLIFF_SIDE;
pub const CLIFF_GOAL: usize = CLIFF_STATES - 1;
pub const CLIFF_STEP_REWARD: f64 = -1.0;
pub const CLIFF_FALL_REWARD: f64 = -100.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Move {
    Up = 0,
    Down = 1,
    Left = 2,
    Right = 3,
}

impl Move {
    pub const ALL: [Move; 4] = [Move::Up, Move::Down, Move::Left, Move::Right];
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CliffwalkSpec {
    /// Probability of moving in the intended direction.
    pub move_prob: f64,
    #[serde(default = "default_cliff_discount")]
    pub discount: f64,
}

fn default_cliff_discount() -> f64 {
    0.95
}

impl Default for CliffwalkSpec {
    fn default() -> Self {
        Self {
            move_prob: 0.99,
            discount: default_cliff_discount(),
        }
    }
}

pub fn is_cliff(state: usize) -> bool {
    state > CLIFF_START && state < CLIFF_GOAL
}

fn step_cell(state: usize, mv: Move) -> usize {
    let (row, col) = (state / CLIFF_SIDE, state % CLIFF_SIDE);
    let (row, col) = match mv {
        Move::Up => (row.saturating_sub(1), col),
        Move::Down => ((row + 1).min(CLIFF_SIDE - 1), col),
        Move::Left => (row, col.saturating_sub(1)),
        Move::Right => (row, (col + 1).min(CLIFF_SIDE - 1)),
    };
    row * CLIFF_SIDE + col
}

/// Builds the 5×5 cliffwalk: start bottom-left, goal bottom-right, the three
/// cells between them are the cliff.
///
/// Rewards are attached to states: `-1` per step, `-100` on a cliff cell
/// (which returns to the start under every action), `0` at the absorbing
/// goal. The intended move happens with probability `move_prob`; each other
/// direction gets `(1 - move_prob) / 3`. Moves off the grid stay in place.
pub fn generate_cliffwalk(spec: &CliffwalkSpec) -> Result<ControlMdp> {
    if !(spec.move_prob > 0.0 && spec.move_prob <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "move_prob must lie in (0, 1], got {}",
            spec.move_prob
        )));
    }
    let slip = (1.0 - spec.move_prob) / 3.0;
    let transitions = Move::ALL
        .iter()
        .map(|&intended| {
            let mut p = DMatrix::<f64>::zeros(CLIFF_STATES, CLIFF_STATES);
            for x in 0..CLIFF_STATES {
                if x == CLIFF_GOAL {
                    p[(x, x)] = 1.0;
                } else if is_cliff(x) {
                    p[(x, CLIFF_START)] = 1.0;
                } else {
                    for &mv in &Move::ALL {
                        let prob = if mv == intended { spec.move_prob } else { slip };
                        p[(x, step_cell(x, mv))] += prob;
                    }
                }
            }
            p
        })
        .collect();
    let reward = (0..CLIFF_STATES)
        .map(|x| {
            if x == CLIFF_GOAL {
                0.0
            } else if is_cliff(x) {
                CLIFF_FALL_REWARD
            } else {
                CLIFF_STEP_REWARD
            }
        })
        .collect();
    ControlMdp::new(transitions, reward, spec.discount)
}
