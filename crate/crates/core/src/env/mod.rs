//! Simulated environments behind a common reset/step interface.
//!
//! Actions are always normalized to `[-1, 1]` per dimension; each
//! environment maps them to its own physical ranges. `step` returns the raw
//! reward components; the task decides how they combine into a reward.

pub mod gaze;
pub mod racer;
pub mod socialnav;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tasks::TaskSpec;

pub use gaze::{GazeConfig, GazeEnv};
pub use racer::{RacerConfig, RacerEnv, RacerTask};
pub use socialnav::{NavConfig, SocialNavEnv};

#[derive(Clone, Debug, PartialEq)]
pub struct Step {
    pub obs: Vec<f64>,
    pub components: Vec<f64>,
}

pub trait Environment: Send {
    fn obs_dim(&self) -> usize;
    fn act_dim(&self) -> usize;
    fn n_components(&self) -> usize;
    fn reset(&mut self, seed: u64) -> Vec<f64>;
    fn step(&mut self, action: &[f64]) -> Result<Step>;

    /// Installs task-specific dynamics or reward parameters. Most
    /// environments are task-agnostic and accept any task.
    fn set_task(&mut self, _task: &TaskSpec) -> Result<()> {
        Ok(())
    }
}

/// Clamps a normalized action to `[-1, 1]`, warning when it had to.
pub(crate) fn clamp_action(action: &[f64], expected: usize, env: &str) -> Result<Vec<f64>> {
    if action.len() != expected {
        return Err(Error::shape(format!("{env} action"), expected, action.len()));
    }
    if action.iter().any(|a| !a.is_finite()) {
        return Err(Error::Environment(format!("{env}: non-finite action {action:?}")));
    }
    if action.iter().any(|a| a.abs() > 1.0) {
        log::warn!("{env}: action {action:?} outside [-1, 1], clamping");
    }
    Ok(action.iter().map(|a| a.clamp(-1.0, 1.0)).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    GazeLinear,
    GazeNonlinear,
    Socialnav,
    Racer,
    /// Constant per-step reward; used to check evaluation protocols.
    Constant,
}

impl EnvKind {
    pub fn key(self) -> &'static str {
        match self {
            EnvKind::GazeLinear => "gaze_linear",
            EnvKind::GazeNonlinear => "gaze_nonlinear",
            EnvKind::Socialnav => "socialnav",
            EnvKind::Racer => "racer",
            EnvKind::Constant => "constant",
        }
    }
}

/// Every environment's settings; only the one matching `kind` is used.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvConfig {
    pub gaze: GazeConfig,
    pub socialnav: NavConfig,
    pub racer: RacerConfig,
    pub constant: ConstantConfig,
}

impl EnvConfig {
    pub fn build(&self, kind: EnvKind) -> Result<Box<dyn Environment>> {
        Ok(match kind {
            EnvKind::GazeLinear | EnvKind::GazeNonlinear => Box::new(GazeEnv::new(self.gaze.clone())?),
            EnvKind::Socialnav => Box::new(SocialNavEnv::new(self.socialnav.clone())?),
            EnvKind::Racer => Box::new(RacerEnv::new(self.racer.clone())?),
            EnvKind::Constant => Box::new(ConstantEnv::new(self.constant.clone())?),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConstantConfig {
    pub reward: f64,
    pub obs_dim: usize,
    pub act_dim: usize,
}

impl Default for ConstantConfig {
    fn default() -> Self {
        ConstantConfig {
            reward: 1.0,
            obs_dim: 2,
            act_dim: 1,
        }
    }
}

/// Emits the same reward every step. The observation is a fixed function of
/// the reset seed and the step count, so policies see something to condition
/// on without it affecting the reward.
#[derive(Clone, Debug)]
pub struct ConstantEnv {
    config: ConstantConfig,
    seed: u64,
    t: u64,
}

impl ConstantEnv {
    pub fn new(config: ConstantConfig) -> Result<Self> {
        if config.obs_dim == 0 || config.act_dim == 0 || !config.reward.is_finite() {
            return Err(Error::Config("constant environment needs positive sizes and a finite reward".into()));
        }
        Ok(ConstantEnv { config, seed: 0, t: 0 })
    }

    fn observe(&self) -> Vec<f64> {
        (0..self.config.obs_dim)
            .map(|i| ((self.seed % 97) as f64 * 0.01 + self.t as f64 * 0.005 + i as f64 * 0.1).sin())
            .collect()
    }
}

impl Environment for ConstantEnv {
    fn obs_dim(&self) -> usize {
        self.config.obs_dim
    }

    fn act_dim(&self) -> usize {
        self.config.act_dim
    }

    fn n_components(&self) -> usize {
        1
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        self.seed = seed;
        self.t = 0;
        self.observe()
    }

    fn step(&mut self, action: &[f64]) -> Result<Step> {
        clamp_action(action, self.config.act_dim, "constant")?;
        self.t += 1;
        Ok(Step {
            obs: self.observe(),
            components: vec![self.config.reward],
        })
    }
}
