//! Experiment configuration files.
//!
//! One TOML document with sections `env`, `kernel`, `gp`, `data`, `fvi`,
//! `active`, `eval` and `verify`. Unknown keys are rejected everywhere.
//! Every command writes the fully resolved document next to its outputs.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::active::{ActiveConfig, CandidatePool, Strategy};
use crate::dataset::{PruneMode, Region, StartMode};
use crate::env::{ChainMdp, EnvModel, LipschitzRandomMdp, Maze2d};
use crate::error::{Error, Result};
use crate::kernel::KernelSpec;
use crate::valuelearn::FviConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub env: EnvModel,
    pub kernel: KernelSpec,
    pub gp: GpSection,
    #[serde(default)]
    pub data: DataSection,
    #[serde(default)]
    pub fvi: FviSection,
    #[serde(default)]
    pub active: ActiveSection,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub verify: VerifySection,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GpSection {
    pub noise_variance: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BehaviorKind {
    #[default]
    UniformRandom,
    NoisyOracle,
}

/// Offline collection and pruning.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub episodes: usize,
    pub behavior: BehaviorKind,
    /// Random-action rate of the noisy oracle.
    pub behavior_epsilon: f64,
    pub start: StartMode,
    /// Boxes `[xmin, xmax, ymin, ymax]` (or `[lo, hi]` in one dimension) to prune.
    pub regions: Vec<Vec<f64>>,
    pub prune_mode: PruneMode,
    /// Fraction of episodes kept after pruning.
    pub fraction: f64,
}

impl Default for DataSection {
    fn default() -> Self {
        DataSection {
            episodes: 20,
            behavior: BehaviorKind::UniformRandom,
            behavior_epsilon: 0.5,
            start: StartMode::Rho,
            regions: Vec::new(),
            prune_mode: PruneMode::Truncate,
            fraction: 1.0,
        }
    }
}

impl DataSection {
    pub fn regions(&self) -> Result<Vec<Region>> {
        self.regions.iter().map(|r| Region::from_bounds(r)).collect()
    }
}

/// Discount and reward bound come from the environment, noise from `gp`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FviSection {
    pub iterations: usize,
    pub refit_full: bool,
}

impl Default for FviSection {
    fn default() -> Self {
        FviSection {
            iterations: 100,
            refit_full: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ActiveSection {
    pub budget_m: usize,
    pub epsilon: f64,
    pub n_action_candidates: usize,
    pub candidate_spread: f64,
    pub small_update_interval: usize,
    pub large_update_interval: usize,
    pub refresh_iterations: usize,
    pub candidate_pool: CandidatePool,
    pub strategy: Strategy,
    pub inject_noise: bool,
    pub eval_interval: usize,
}

impl Default for ActiveSection {
    fn default() -> Self {
        let d = ActiveConfig::default();
        ActiveSection {
            budget_m: d.budget_m,
            epsilon: d.epsilon,
            n_action_candidates: d.n_action_candidates,
            candidate_spread: d.candidate_spread,
            small_update_interval: d.small_update_interval,
            large_update_interval: d.large_update_interval,
            refresh_iterations: d.refresh_iterations,
            candidate_pool: d.candidate_pool,
            strategy: d.strategy,
            inject_noise: d.inject_noise,
            eval_interval: d.eval_interval,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    /// Oracle grid nodes per axis (chains always use one node per state).
    pub oracle_resolution: usize,
    /// σ evaluation grid cells per axis.
    pub eval_grid_per_dim: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            oracle_resolution: 101,
            eval_grid_per_dim: 12,
        }
    }
}

/// Settings of the `verify-bounds` command.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifySection {
    pub delta: f64,
    /// Noise variance of the concentration check; `None` uses `gp.noise_variance`.
    pub concentration_noise_variance: Option<f64>,
    pub trials: usize,
    pub horizon: usize,
    pub dim: usize,
    pub n_anchors: usize,
    pub grid_per_dim: usize,
    /// Query sequences per rule in the variance-sum check.
    pub sequences: usize,
    pub sequence_length: usize,
    pub budgets: Vec<usize>,
    pub rate_seeds: usize,
    pub bootstrap: usize,
    /// Universal constant of the gap bound; `None` calibrates it on the first budget.
    pub c: Option<f64>,
}

impl Default for VerifySection {
    fn default() -> Self {
        VerifySection {
            delta: 0.05,
            concentration_noise_variance: None,
            trials: 100,
            horizon: 50,
            dim: 1,
            n_anchors: 8,
            grid_per_dim: 41,
            sequences: 50,
            sequence_length: 200,
            budgets: vec![25, 50, 100, 200, 400, 800],
            rate_seeds: 10,
            bootstrap: 1000,
            c: None,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// The fully resolved document, defaults included.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_toml()).map_err(|e| Error::io(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate().map_err(as_config)?;
        self.kernel.validate().map_err(as_config)?;
        self.fvi_config().validate()?;
        self.active_config(self.seed).validate()?;
        if self.data.episodes == 0 {
            return Err(Error::Config("data.episodes must be at least 1".into()));
        }
        if !(self.data.fraction > 0.0 && self.data.fraction <= 1.0) {
            return Err(Error::Config("data.fraction must lie in (0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.data.behavior_epsilon) {
            return Err(Error::Config("data.behavior_epsilon must lie in [0, 1]".into()));
        }
        self.data.regions().map_err(as_config)?;
        if self.eval.oracle_resolution < 2 || self.eval.eval_grid_per_dim == 0 {
            return Err(Error::Config("eval grids are too small".into()));
        }
        let v = &self.verify;
        if !(v.delta > 0.0 && v.delta < 1.0) {
            return Err(Error::Config("verify.delta must lie in (0, 1)".into()));
        }
        if v.budgets.len() < 2 || v.budgets.windows(2).any(|w| w[0] >= w[1]) || v.budgets[0] == 0 {
            return Err(Error::Config("verify.budgets must be at least two increasing positive values".into()));
        }
        if v.concentration_noise_variance.is_some_and(|n| !(n > 0.0)) {
            return Err(Error::Config("verify.concentration_noise_variance must be positive".into()));
        }
        if v.trials == 0 || v.horizon == 0 || v.dim == 0 || v.rate_seeds == 0 || v.sequences == 0 {
            return Err(Error::Config("verify counts must be positive".into()));
        }
        Ok(())
    }

    pub fn fvi_config(&self) -> FviConfig {
        FviConfig {
            iterations: self.fvi.iterations,
            gamma: self.env.gamma(),
            refit_full: self.fvi.refit_full,
            target_noise: self.gp.noise_variance,
            r_max: self.env.r_max(),
        }
    }

    pub fn active_config(&self, seed: u64) -> ActiveConfig {
        let a = &self.active;
        ActiveConfig {
            budget_m: a.budget_m,
            epsilon: a.epsilon,
            n_action_candidates: a.n_action_candidates,
            candidate_spread: a.candidate_spread,
            small_update_interval: a.small_update_interval,
            large_update_interval: a.large_update_interval,
            refresh_iterations: a.refresh_iterations,
            candidate_pool: a.candidate_pool,
            strategy: a.strategy,
            inject_noise: a.inject_noise,
            eval_interval: a.eval_interval,
            seed,
            checkpoint_on_error: None,
        }
    }

    /// Replace the environment by the named built-in one, unless it already matches.
    pub fn override_env(&mut self, name: &str) -> Result<()> {
        if self.env.name() == name {
            return Ok(());
        }
        self.env = default_env(name)?;
        self.validate()
    }
}

fn as_config(e: Error) -> Error {
    match e {
        Error::Input(m) => Error::Config(m),
        other => other,
    }
}

/// Built-in environment by name.
pub fn default_env(name: &str) -> Result<EnvModel> {
    match name {
        "chain" => Ok(EnvModel::Chain(ChainMdp::new(5, 0.99))),
        "maze2d" => Ok(EnvModel::Maze2d(Maze2d::default())),
        "lipschitz" => Ok(EnvModel::Lipschitz(LipschitzRandomMdp::default())),
        other => Err(Error::Config(format!(
            "unknown environment `{other}` (expected chain, maze2d or lipschitz)"
        ))),
    }
}
