//! Constant-speed car on the unit torus with three fixed markers.
//!
//! Observation layout (120 floats): 100 position RBFs on a 10x10 grid,
//! index `10 * ix + iy` for the center `((ix + 0.5) / 10, (iy + 0.5) / 10)`,
//! followed by 20 orientation RBFs centered at `2 pi j / 20`.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{clamp_action, Environment, Step};
use crate::error::{Error, Result};
use crate::tasks::{TaskKind, TaskSpec};

pub const N_MARKERS: usize = 3;
pub const EPISODE_LENGTH: usize = 200;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RacerConfig {
    pub markers: [[f64; 2]; N_MARKERS],
    pub speed: f64,
    pub omega_max: f64,
    pub grid: usize,
    pub orientation_rbfs: usize,
}

impl Default for RacerConfig {
    fn default() -> Self {
        RacerConfig {
            markers: [[0.2, 0.2], [0.8, 0.3], [0.5, 0.8]],
            speed: 0.02,
            omega_max: 0.3,
            grid: 10,
            orientation_rbfs: 20,
        }
    }
}

impl RacerConfig {
    pub fn obs_dim(&self) -> usize {
        self.grid * self.grid + self.orientation_rbfs
    }

    fn validate(&self) -> Result<()> {
        if self.grid == 0 || self.orientation_rbfs == 0 {
            return Err(Error::Config("racer RBF counts must be positive".into()));
        }
        if !(self.speed.is_finite() && self.omega_max.is_finite()) {
            return Err(Error::Config("racer speed and turn rate must be finite".into()));
        }
        if self.markers.iter().flatten().any(|m| !(0.0..1.0).contains(m)) {
            return Err(Error::Config("racer markers must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// One Gaussian bump of a marker's reward profile.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bump {
    pub mu: f64,
    pub sigma: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RacerTask {
    pub markers: Vec<Vec<Bump>>,
}

impl RacerTask {
    pub const MU_RANGE: (f64, f64) = (0.0, 0.7);
    pub const SIGMA_RANGE: (f64, f64) = (0.001, 0.01);

    pub fn sample<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let markers = (0..N_MARKERS)
            .map(|_| {
                let n = rng.random_range(1..=2);
                (0..n)
                    .map(|_| Bump {
                        mu: rng.random_range(Self::MU_RANGE.0..=Self::MU_RANGE.1),
                        sigma: rng.random_range(Self::SIGMA_RANGE.0..=Self::SIGMA_RANGE.1),
                    })
                    .collect()
            })
            .collect();
        RacerTask { markers }
    }

    pub fn from_seed(seed: u64) -> Self {
        Self::sample(&mut ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn validate(&self) -> Result<()> {
        if self.markers.len() != N_MARKERS || self.markers.iter().any(Vec::is_empty) {
            return Err(Error::Config("racer task needs at least one bump for each of 3 markers".into()));
        }
        if self.markers.iter().flatten().any(|b| !(b.sigma > 0.0 && b.mu.is_finite())) {
            return Err(Error::Config("racer bumps need finite mu and positive sigma".into()));
        }
        Ok(())
    }

    /// Reward component of marker `k` at torus distance `d`.
    pub fn component(&self, k: usize, d: f64) -> f64 {
        reward_component(&self.markers[k], d)
    }
}

/// `max_j exp(-(d - mu_j)^2 / sigma_j)`, with `sigma` used unsquared.
pub fn reward_component(bumps: &[Bump], d: f64) -> f64 {
    bumps
        .iter()
        .map(|b| (-(d - b.mu).powi(2) / b.sigma).exp())
        .fold(f64::NEG_INFINITY, f64::max)
}

pub fn total_reward(components: &[f64]) -> f64 {
    components.iter().sum::<f64>() / components.len() as f64
}

/// Wraps into `[0, 1)`.
pub fn wrap_unit(x: f64) -> f64 {
    let w = x.rem_euclid(1.0);
    if w >= 1.0 {
        0.0
    } else {
        w
    }
}

pub fn wrap_angle(theta: f64) -> f64 {
    let w = theta.rem_euclid(2.0 * PI);
    if w >= 2.0 * PI {
        0.0
    } else {
        w
    }
}

/// Per-axis shortest separation on the unit circle, in `[0, 0.5]`.
pub fn torus_delta(a: f64, b: f64) -> f64 {
    let d = (a - b).abs().rem_euclid(1.0);
    d.min(1.0 - d)
}

pub fn torus_distance(a: [f64; 2], b: [f64; 2]) -> f64 {
    torus_delta(a[0], b[0]).hypot(torus_delta(a[1], b[1]))
}

fn angle_delta(a: f64, b: f64) -> f64 {
    let d = (a - b).abs().rem_euclid(2.0 * PI);
    d.min(2.0 * PI - d)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RacerState {
    pub position: [f64; 2],
    pub orientation: f64,
}

#[derive(Clone, Debug)]
pub struct RacerEnv {
    config: RacerConfig,
    task: Option<RacerTask>,
    state: RacerState,
}

impl RacerEnv {
    pub fn new(config: RacerConfig) -> Result<Self> {
        config.validate()?;
        Ok(RacerEnv {
            config,
            task: None,
            state: RacerState {
                position: [0.0, 0.0],
                orientation: 0.0,
            },
        })
    }

    pub fn with_task(config: RacerConfig, task: RacerTask) -> Result<Self> {
        task.validate()?;
        let mut env = Self::new(config)?;
        env.task = Some(task);
        Ok(env)
    }

    pub fn state(&self) -> RacerState {
        self.state
    }

    pub fn set_state(&mut self, state: RacerState) {
        self.state = RacerState {
            position: [wrap_unit(state.position[0]), wrap_unit(state.position[1])],
            orientation: wrap_angle(state.orientation),
        };
    }

    pub fn config(&self) -> &RacerConfig {
        &self.config
    }

    /// Torus distance from the car to each marker.
    pub fn marker_distances(&self) -> [f64; N_MARKERS] {
        std::array::from_fn(|k| torus_distance(self.state.position, self.config.markers[k]))
    }

    pub fn encode(&self) -> Vec<f64> {
        encode_state(&self.config, &self.state)
    }

    fn components(&self) -> Result<Vec<f64>> {
        let task = self
            .task
            .as_ref()
            .ok_or_else(|| Error::NotReady("racer has no task installed".into()))?;
        Ok(self
            .marker_distances()
            .iter()
            .enumerate()
            .map(|(k, &d)| task.component(k, d))
            .collect())
    }
}

pub fn encode_state(config: &RacerConfig, state: &RacerState) -> Vec<f64> {
    let g = config.grid;
    let spacing = 1.0 / g as f64;
    let sigma = 0.5 * spacing;
    let mut out = Vec::with_capacity(config.obs_dim());
    for ix in 0..g {
        for iy in 0..g {
            let c = [(ix as f64 + 0.5) * spacing, (iy as f64 + 0.5) * spacing];
            let d2 = torus_delta(state.position[0], c[0]).powi(2) + torus_delta(state.position[1], c[1]).powi(2);
            out.push((-d2 / (2.0 * sigma * sigma)).exp());
        }
    }
    let n = config.orientation_rbfs;
    let ang_spacing = 2.0 * PI / n as f64;
    let ang_sigma = 0.5 * ang_spacing;
    for j in 0..n {
        let d = angle_delta(state.orientation, j as f64 * ang_spacing);
        out.push((-d * d / (2.0 * ang_sigma * ang_sigma)).exp());
    }
    out
}

impl Environment for RacerEnv {
    fn obs_dim(&self) -> usize {
        self.config.obs_dim()
    }

    fn act_dim(&self) -> usize {
        1
    }

    fn n_components(&self) -> usize {
        N_MARKERS
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.state = RacerState {
            position: [rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)],
            orientation: rng.random_range(0.0..2.0 * PI),
        };
        self.encode()
    }

    fn step(&mut self, action: &[f64]) -> Result<Step> {
        let a = clamp_action(action, 1, "racer")?[0];
        let theta = wrap_angle(self.state.orientation + a * self.config.omega_max);
        let [x, y] = self.state.position;
        self.state = RacerState {
            position: [
                wrap_unit(x + self.config.speed * theta.cos()),
                wrap_unit(y + self.config.speed * theta.sin()),
            ],
            orientation: theta,
        };
        Ok(Step {
            obs: self.encode(),
            components: self.components()?,
        })
    }

    fn set_task(&mut self, task: &TaskSpec) -> Result<()> {
        match &task.kind {
            TaskKind::Racer { task } => {
                task.validate()?;
                self.task = Some(task.clone());
                Ok(())
            }
            _ => Err(Error::Environment("racer needs a racer task".into())),
        }
    }
}
