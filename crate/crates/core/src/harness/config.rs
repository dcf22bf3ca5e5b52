//! TOML configuration for sweeps. Unknown keys are rejected everywhere.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::{LossSpec, ValueUpdate};
use crate::model::AdamConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelLoss {
    /// Maximum likelihood against the true transition rows.
    Kl,
    /// A member of the value-aware family selected by the algorithm's `m`, `b`,
    /// `k` and `calibrated` fields.
    Vaml,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgorithmSpec {
    pub label: String,
    pub model_loss: ModelLoss,
    #[serde(default = "one")]
    pub m: usize,
    #[serde(default)]
    pub b: usize,
    #[serde(default = "two")]
    pub k: usize,
    #[serde(default)]
    pub calibrated: bool,
    pub value_update: ValueUpdate,
    #[serde(default = "yes")]
    pub update_real_state: bool,
}

fn one() -> usize {
    1
}
fn two() -> usize {
    2
}
fn yes() -> bool {
    true
}

impl AlgorithmSpec {
    pub fn loss_spec(&self) -> LossSpec {
        LossSpec {
            m: self.m,
            b: self.b,
            k: self.k,
            calibrated: self.calibrated,
            value_update: self.value_update,
            update_real_state: self.update_real_state,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.label.is_empty() || self.label.contains([',', '"', '\n', '\r']) {
            return Err(Error::Config(format!(
                "algorithm label {:?} must be non-empty and free of commas, quotes and newlines",
                self.label
            )));
        }
        if self.value_update == ValueUpdate::None {
            return Err(Error::Config(format!(
                "algorithm {} never trains the value function",
                self.label
            )));
        }
        if self.model_loss == ModelLoss::Kl && self.value_update == ValueUpdate::MuzeroJoint {
            return Err(Error::Config(format!(
                "algorithm {}: the KL model loss cannot train values jointly",
                self.label
            )));
        }
        if self.model_loss == ModelLoss::Vaml && self.m == 0 {
            return Err(Error::Config(format!("algorithm {}: m must be at least 1", self.label)));
        }
        self.loss_spec().validate()
    }

    fn vaml(label: &str, m: usize, b: usize, calibrated: bool, value_update: ValueUpdate) -> Self {
        Self {
            label: label.to_string(),
            model_loss: ModelLoss::Vaml,
            m,
            b,
            k: 2,
            calibrated,
            value_update,
            update_real_state: true,
        }
    }

    /// The five-algorithm comparison: a KL baseline and the uncalibrated and
    /// calibrated `(1,0)` and `(1,1)` losses.
    pub fn roster() -> Vec<Self> {
        vec![
            Self {
                label: "kl+td".into(),
                model_loss: ModelLoss::Kl,
                m: 1,
                b: 0,
                k: 2,
                calibrated: false,
                value_update: ValueUpdate::TdModelBased,
                update_real_state: true,
            },
            Self::vaml("vaml10+td", 1, 0, false, ValueUpdate::TdModelBased),
            Self::vaml("cvaml10+td", 1, 0, true, ValueUpdate::TdModelBased),
            Self::vaml("vaml11", 1, 1, false, ValueUpdate::MuzeroJoint),
            Self::vaml("cvaml11", 1, 1, true, ValueUpdate::MuzeroJoint),
        ]
    }

    pub fn by_label(label: &str) -> Option<Self> {
        Self::roster().into_iter().find(|a| a.label == label)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelInit {
    /// Small i.i.d. normal factors (near-uniform predictions).
    Random,
    /// One-hot predictions on each state's most likely true successor.
    Sharpened,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfig {
    #[serde(default = "default_steps")]
    pub steps: usize,
    /// Optimizer steps between copies of the value table into the target.
    #[serde(default = "default_target_period")]
    pub target_period: usize,
    #[serde(default = "default_init_scale")]
    pub init_scale: f64,
    #[serde(default = "default_init")]
    pub model_init: ModelInit,
    #[serde(default = "default_sharpen_scale")]
    pub sharpen_scale: f64,
    #[serde(default)]
    pub model_optimizer: AdamConfig,
    #[serde(default)]
    pub value_optimizer: AdamConfig,
}

fn default_steps() -> usize {
    5000
}
fn default_target_period() -> usize {
    100
}
fn default_init_scale() -> f64 {
    1e-3
}
fn default_init() -> ModelInit {
    ModelInit::Random
}
fn default_sharpen_scale() -> f64 {
    1e5
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            steps: default_steps(),
            target_period: default_target_period(),
            init_scale: default_init_scale(),
            model_init: default_init(),
            sharpen_scale: default_sharpen_scale(),
            model_optimizer: AdamConfig::default(),
            value_optimizer: AdamConfig::default(),
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.target_period == 0 {
            return Err(Error::Config("target_period must be positive".into()));
        }
        if !(self.init_scale > 0.0 && self.init_scale.is_finite()) {
            return Err(Error::Config("init_scale must be positive".into()));
        }
        for (name, opt) in [("model_optimizer", &self.model_optimizer), ("value_optimizer", &self.value_optimizer)] {
            if !(opt.lr > 0.0 && (0.0..1.0).contains(&opt.beta1) && (0.0..1.0).contains(&opt.beta2) && opt.eps > 0.0) {
                return Err(Error::Config(format!("{name} has invalid settings")));
            }
        }
        Ok(())
    }
}

/// Garnet parameters shared by every problem of a sweep; the temperature and
/// seed are set per cell and problem.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GarnetTemplate {
    #[serde(default = "default_states")]
    pub n_states: usize,
    #[serde(default = "default_successors")]
    pub n_successors: usize,
    #[serde(default = "default_garnet_discount")]
    pub discount: f64,
}

fn default_states() -> usize {
    50
}
fn default_successors() -> usize {
    10
}
fn default_garnet_discount() -> f64 {
    0.9
}

impl Default for GarnetTemplate {
    fn default() -> Self {
        Self {
            n_states: default_states(),
            n_successors: default_successors(),
            discount: default_garnet_discount(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "default_problems")]
    pub n_problems: usize,
    pub temperature_grid: Vec<f64>,
    pub rank_grid: Vec<usize>,
    #[serde(default)]
    pub garnet: GarnetTemplate,
    #[serde(default)]
    pub training: TrainingConfig,
    #[serde(default = "AlgorithmSpec::roster")]
    pub algorithms: Vec<AlgorithmSpec>,
}

fn default_problems() -> usize {
    100
}

impl SweepConfig {
    /// 100 problems on a logarithmic temperature grid over `[1e-3, 10]`.
    pub fn desk_scale() -> Self {
        Self {
            master_seed: 0,
            n_problems: default_problems(),
            temperature_grid: vec![1e-3, 1e-2, 1e-1, 1.0, 10.0],
            rank_grid: vec![5, 10, 25],
            garnet: GarnetTemplate::default(),
            training: TrainingConfig::default(),
            algorithms: AlgorithmSpec::roster(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_grids(self.n_problems, self.temperature_grid.len(), self.rank_grid.len(), &self.algorithms)?;
        if self.temperature_grid.iter().any(|t| !(t.is_finite() && *t > 0.0)) {
            return Err(Error::Config("temperatures must be finite and positive".into()));
        }
        let n = self.garnet.n_states;
        if self.rank_grid.iter().any(|&j| j == 0 || j > n) {
            return Err(Error::Config(format!("ranks must lie in 1..={n}")));
        }
        if self.training.model_init == ModelInit::Sharpened && self.rank_grid.iter().any(|&j| j < 2) {
            return Err(Error::Config("sharpened models need rank >= 2".into()));
        }
        self.training.validate()
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&read_config(path)?)
    }
}

/// Cliffwalk parameters shared by every cell; the move probability is set
/// per cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CliffwalkTemplate {
    #[serde(default = "default_cliff_discount")]
    pub discount: f64,
}

fn default_cliff_discount() -> f64 {
    0.95
}

impl Default for CliffwalkTemplate {
    fn default() -> Self {
        Self {
            discount: default_cliff_discount(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PiConfig {
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "default_problems")]
    pub n_problems: usize,
    pub move_prob_grid: Vec<f64>,
    pub rank_grid: Vec<usize>,
    /// Policy improvement rounds after the initial uniform policy.
    #[serde(default = "default_iterations")]
    pub n_iterations: usize,
    #[serde(default)]
    pub cliffwalk: CliffwalkTemplate,
    /// Training budget per improvement round.
    #[serde(default)]
    pub training: TrainingConfig,
    #[serde(default = "AlgorithmSpec::roster")]
    pub algorithms: Vec<AlgorithmSpec>,
}

fn default_iterations() -> usize {
    10
}

impl PiConfig {
    pub fn desk_scale() -> Self {
        Self {
            master_seed: 0,
            n_problems: default_problems(),
            move_prob_grid: vec![0.33, 0.66, 0.99],
            rank_grid: vec![2, 5, 10, 25],
            n_iterations: default_iterations(),
            cliffwalk: CliffwalkTemplate::default(),
            training: TrainingConfig {
                steps: 1000,
                ..TrainingConfig::default()
            },
            algorithms: AlgorithmSpec::roster(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_grids(self.n_problems, self.move_prob_grid.len(), self.rank_grid.len(), &self.algorithms)?;
        if self.move_prob_grid.iter().any(|p| !(*p > 0.0 && *p <= 1.0)) {
            return Err(Error::Config("move probabilities must lie in (0, 1]".into()));
        }
        let n = crate::envs::CLIFF_STATES;
        if self.rank_grid.iter().any(|&j| j == 0 || j > n) {
            return Err(Error::Config(format!("ranks must lie in 1..={n}")));
        }
        if self.algorithms.iter().any(|a| a.model_loss == ModelLoss::Vaml && a.m != 1) {
            return Err(Error::Config(
                "action-conditioned models support single-step losses only (m = 1)".into(),
            ));
        }
        if self.training.model_init == ModelInit::Sharpened {
            return Err(Error::Config("sharpened initialization is only defined for Garnet sweeps".into()));
        }
        self.training.validate()
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&read_config(path)?)
    }
}

fn check_grids(n_problems: usize, first: usize, ranks: usize, algorithms: &[AlgorithmSpec]) -> Result<()> {
    if n_problems < 2 {
        return Err(Error::Config("n_problems must be at least 2".into()));
    }
    if first == 0 || ranks == 0 || algorithms.is_empty() {
        return Err(Error::Config("grids and the algorithm list must be non-empty".into()));
    }
    for algorithm in algorithms {
        algorithm.validate()?;
    }
    let mut labels: Vec<&str> = algorithms.iter().map(|a| a.label.as_str()).collect();
    labels.sort_unstable();
    if labels.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::Config("algorithm labels must be unique".into()));
    }
    Ok(())
}

fn read_config(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
temperature_grid = [0.1, 1.0]
rank_grid = [10]
"#;

    #[test]
    fn minimal_config_uses_defaults() {
        let config = SweepConfig::from_toml_str(MINIMAL).unwrap();
        assert_eq!(config.n_problems, 100);
        assert_eq!(config.garnet, GarnetTemplate::default());
        assert_eq!(config.training.steps, 5000);
        let labels: Vec<_> = config.algorithms.iter().map(|a| a.label.as_str()).collect();
        assert_eq!(labels, ["kl+td", "vaml10+td", "cvaml10+td", "vaml11", "cvaml11"]);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let typo = format!("{MINIMAL}n_problem = 3\n");
        assert!(matches!(SweepConfig::from_toml_str(&typo), Err(Error::Config(_))));
        let nested = format!("{MINIMAL}[training]\nstep = 10\n");
        assert!(SweepConfig::from_toml_str(&nested).is_err());
        let garnet = format!("{MINIMAL}[garnet]\ntemperature = 1.0\n");
        assert!(SweepConfig::from_toml_str(&garnet).is_err());
    }

    #[test]
    fn invalid_values_are_rejected() {
        assert!(SweepConfig::from_toml_str("temperature_grid = []\nrank_grid = [2]").is_err());
        assert!(SweepConfig::from_toml_str("temperature_grid = [1.0]\nrank_grid = [51]").is_err());
        assert!(SweepConfig::from_toml_str(&format!("{MINIMAL}n_problems = 1\n")).is_err());
        let calibrated_k1 = format!(
            "{MINIMAL}[[algorithms]]\nlabel = \"x\"\nmodel_loss = \"vaml\"\nk = 1\ncalibrated = true\nvalue_update = \"td_model_based\"\n"
        );
        assert!(SweepConfig::from_toml_str(&calibrated_k1).is_err());
    }

    #[test]
    fn algorithm_tables_parse() {
        let text = format!(
            "{MINIMAL}[[algorithms]]\nlabel = \"cvaml21\"\nmodel_loss = \"vaml\"\nm = 2\nb = 1\nk = 3\ncalibrated = true\nvalue_update = \"muzero_joint\"\n"
        );
        let config = SweepConfig::from_toml_str(&text).unwrap();
        assert_eq!(config.algorithms.len(), 1);
        let spec = config.algorithms[0].loss_spec();
        assert_eq!((spec.m, spec.b, spec.k, spec.calibrated), (2, 1, 3, true));
    }

    #[test]
    fn pi_config_defaults() {
        let config = PiConfig::from_toml_str("move_prob_grid = [0.99]\nrank_grid = [2, 25]").unwrap();
        assert_eq!(config.cliffwalk.discount, 0.95);
        assert!(PiConfig::from_toml_str("move_prob_grid = [0.0]\nrank_grid = [2]").is_err());
        assert!(PiConfig::desk_scale().validate().is_ok());
        assert!(SweepConfig::desk_scale().validate().is_ok());
    }
}
