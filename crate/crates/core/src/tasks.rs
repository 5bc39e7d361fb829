//! Task distributions: convex reward weightings, random reward networks and
//! racer marker profiles. A task is identified by a 64-bit seed.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::env::{EnvKind, RacerTask};
use crate::error::{Error, Result};

pub const TEST_SEED_BASE: u64 = 1000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvexWeights {
    w: Vec<f64>,
}

impl ConvexWeights {
    pub fn new(w: Vec<f64>) -> Result<Self> {
        if w.is_empty() {
            return Err(Error::Config("convex weights need at least one component".into()));
        }
        if w.iter().any(|&x| !(0.0..=1.0).contains(&x)) || (w.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return Err(Error::Config(format!("{w:?} is not a point of the simplex")));
        }
        Ok(ConvexWeights { w })
    }

    /// Uniform sample from the simplex using the gaps between sorted uniforms.
    pub fn sample<R: Rng + ?Sized>(m: usize, rng: &mut R) -> Result<Self> {
        if m == 0 {
            return Err(Error::Config("convex weights need at least one component".into()));
        }
        let mut cuts: Vec<f64> = (0..m - 1).map(|_| rng.random::<f64>()).collect();
        cuts.sort_by(f64::total_cmp);
        let mut w = Vec::with_capacity(m);
        let mut prev = 0.0;
        for c in cuts {
            w.push(c - prev);
            prev = c;
        }
        let head: f64 = w.iter().sum();
        w.push((1.0 - head).max(0.0));
        Ok(ConvexWeights { w })
    }

    pub fn weights(&self) -> &[f64] {
        &self.w
    }

    /// Index of the largest weight; ties go to the lowest index.
    pub fn dominant(&self) -> usize {
        let mut best = 0;
        for (i, &x) in self.w.iter().enumerate() {
            if x > self.w[best] {
                best = i;
            }
        }
        best
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardActivation {
    None,
    Sigmoid,
}

/// A small random network mapping reward components to a scalar reward.
/// Hidden layers use `activation`; the scalar output layer is linear.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardNetSpec {
    pub input_dim: usize,
    pub hidden_widths: Vec<usize>,
    pub activation: RewardActivation,
    /// Row-major `[in, out]` weight matrices, one per layer including output.
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl RewardNetSpec {
    pub const SIGMOID_PROB: f64 = 0.75;

    pub fn sample<R: Rng + ?Sized>(input_dim: usize, rng: &mut R) -> Self {
        let depth = rng.random_range(1..=3);
        let hidden_widths: Vec<usize> = (0..depth).map(|_| rng.random_range(4..=6)).collect();
        let activation = if rng.random::<f64>() < Self::SIGMOID_PROB {
            RewardActivation::Sigmoid
        } else {
            RewardActivation::None
        };
        let mut widths = vec![input_dim];
        widths.extend(&hidden_widths);
        widths.push(1);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for p in widths.windows(2) {
            weights.push((0..p[0] * p[1]).map(|_| rng.random_range(-1.0..=1.0)).collect());
            biases.push((0..p[1]).map(|_| rng.random_range(-1.0..=1.0)).collect());
        }
        RewardNetSpec {
            input_dim,
            hidden_widths,
            activation,
            weights,
            biases,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=3).contains(&self.hidden_widths.len()) || self.hidden_widths.iter().any(|w| !(4..=6).contains(w)) {
            return Err(Error::Config(format!("reward net widths {:?} outside 1-3 layers of 4-6", self.hidden_widths)));
        }
        let mut widths = vec![self.input_dim];
        widths.extend(&self.hidden_widths);
        widths.push(1);
        if self.weights.len() != widths.len() - 1 || self.biases.len() != widths.len() - 1 {
            return Err(Error::Config("reward net layer count mismatch".into()));
        }
        for (l, p) in widths.windows(2).enumerate() {
            if self.weights[l].len() != p[0] * p[1] || self.biases[l].len() != p[1] {
                return Err(Error::Config(format!("reward net layer {l} has the wrong size")));
            }
        }
        Ok(())
    }

    pub fn evaluate(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.input_dim {
            return Err(Error::shape("reward net input", self.input_dim, x.len()));
        }
        let n = self.weights.len();
        let mut h = x.to_vec();
        for (l, (w, b)) in self.weights.iter().zip(&self.biases).enumerate() {
            let out = b.len();
            let mut next = b.clone();
            for (i, hi) in h.iter().enumerate() {
                for (j, nj) in next.iter_mut().enumerate() {
                    *nj += hi * w[i * out + j];
                }
            }
            if l + 1 < n && self.activation == RewardActivation::Sigmoid {
                for v in &mut next {
                    *v = 1.0 / (1.0 + (-*v).exp());
                }
            }
            h = next;
        }
        Ok(h[0])
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum TaskKind {
    Convex { weights: ConvexWeights },
    RewardNet { net: RewardNetSpec },
    Racer { task: RacerTask },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub seed: u64,
    #[serde(flatten)]
    pub kind: TaskKind,
}

impl TaskSpec {
    pub fn convex(seed: u64, weights: ConvexWeights) -> Self {
        TaskSpec {
            seed,
            kind: TaskKind::Convex { weights },
        }
    }

    /// Samples the task with the given seed for an environment.
    pub fn sample(env: EnvKind, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let kind = match env {
            EnvKind::GazeLinear => TaskKind::Convex {
                weights: ConvexWeights::sample(3, &mut rng)?,
            },
            EnvKind::GazeNonlinear => TaskKind::RewardNet {
                net: RewardNetSpec::sample(3, &mut rng),
            },
            EnvKind::Socialnav => TaskKind::Convex {
                weights: ConvexWeights::sample(5, &mut rng)?,
            },
            EnvKind::Racer => TaskKind::Racer {
                task: RacerTask::sample(&mut rng),
            },
            EnvKind::Constant => TaskKind::Convex {
                weights: ConvexWeights::new(vec![1.0])?,
            },
        };
        Ok(TaskSpec { seed, kind })
    }

    pub fn n_components(&self) -> usize {
        match &self.kind {
            TaskKind::Convex { weights } => weights.weights().len(),
            TaskKind::RewardNet { net } => net.input_dim,
            TaskKind::Racer { task } => task.markers.len(),
        }
    }

    /// Label used to color latent scatter plots: the dominant convex
    /// component, the racer marker with the widest reach, or 0.
    pub fn label(&self) -> usize {
        match &self.kind {
            TaskKind::Convex { weights } => weights.dominant(),
            TaskKind::RewardNet { .. } => 0,
            TaskKind::Racer { task } => {
                let reach = |k: usize| task.markers[k].iter().map(|b| b.mu).fold(0.0, f64::max);
                (0..task.markers.len()).fold(0, |best, k| if reach(k) > reach(best) { k } else { best })
            }
        }
    }
}

/// Combines raw reward components into the task's scalar reward.
pub fn evaluate_task_reward(task: &TaskSpec, components: &[f64]) -> Result<f64> {
    if components.len() != task.n_components() {
        return Err(Error::shape("reward components", task.n_components(), components.len()));
    }
    match &task.kind {
        TaskKind::Convex { weights } => Ok(weights.weights().iter().zip(components).map(|(w, c)| w * c).sum()),
        TaskKind::RewardNet { net } => net.evaluate(components),
        TaskKind::Racer { .. } => Ok(crate::env::racer::total_reward(components)),
    }
}

/// Training and test tasks drawn from disjoint seed ranges.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSet {
    pub env: EnvKind,
    pub train: Vec<TaskSpec>,
    pub test: Vec<TaskSpec>,
}

impl TaskSet {
    pub fn new(env: EnvKind, n_train: usize, n_test: usize) -> Result<Self> {
        if n_train as u64 > TEST_SEED_BASE {
            return Err(Error::Config(format!("at most {TEST_SEED_BASE} training tasks keep seeds disjoint")));
        }
        let train = (0..n_train as u64).map(|s| TaskSpec::sample(env, s)).collect::<Result<Vec<_>>>()?;
        let test = (0..n_test as u64)
            .map(|s| TaskSpec::sample(env, TEST_SEED_BASE + s))
            .collect::<Result<Vec<_>>>()?;
        let set = TaskSet { env, train, test };
        set.check_disjoint()?;
        Ok(set)
    }

    pub fn check_disjoint(&self) -> Result<()> {
        let train: std::collections::HashSet<u64> = self.train.iter().map(|t| t.seed).collect();
        match self.test.iter().find(|t| train.contains(&t.seed)) {
            Some(t) => Err(Error::Config(format!("task seed {} is in both train and test sets", t.seed))),
            None => Ok(()),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Checkpoint(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let set: TaskSet = serde_json::from_str(text).map_err(|e| Error::Checkpoint(format!("task manifest: {e}")))?;
        set.check_disjoint()?;
        Ok(set)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
