//! Meta-training driver with checkpointing and a per-iteration metrics log.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{collect_for_task, derive_seed, meta_test, meta_train_step, AdaptationResult, LossRecord, MetaRunConfig, PearlAgent, PearlOptimizers, TaskBuffer};
use crate::diagnostics::{probe_task_indices, record_collapse_metrics, CollapseRecord};
use crate::env::{EnvConfig, EnvKind};
use crate::error::{Error, Result};
use crate::tasks::{TaskSet, TaskSpec};

pub const METRICS_SCHEMA: &str = "# metrics v1";
const CHECKPOINT_MAGIC: &str = "rbf-pearl-checkpoint-v1";

/// Stream tags mixed into derived seeds.
const STREAM_COLLECT: u64 = 1;
const STREAM_EVAL: u64 = 2;
const STREAM_PROBE: u64 = 3;

/// Everything that determines the numerics of a training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSetup {
    pub env: EnvKind,
    pub env_config: EnvConfig,
    pub meta: MetaRunConfig,
    pub seed: u64,
}

impl TrainSetup {
    /// SHA-256 over the canonical JSON of the setup. The step budget is left
    /// out so a finished run can be extended.
    pub fn hash(&self) -> Result<String> {
        let mut copy = self.clone();
        copy.meta.total_env_steps = 0;
        let json = serde_json::to_vec(&copy).map_err(|e| Error::Config(e.to_string()))?;
        Ok(Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IterationMetrics {
    pub iteration: u64,
    pub env_steps: u64,
    pub mean_test_return: f64,
    pub std_test_return: f64,
    pub mean_exploration_return: f64,
    pub per_dim_kl: Vec<f64>,
    pub per_dim_var: Vec<f64>,
    pub losses: LossRecord,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trainer {
    magic: String,
    pub setup: TrainSetup,
    pub setup_hash: String,
    pub tasks: TaskSet,
    pub agent: PearlAgent,
    pub opts: PearlOptimizers,
    pub buffers: Vec<TaskBuffer>,
    rng: ChaCha8Rng,
    pub iteration: u64,
    pub env_steps: u64,
    pub history: Vec<IterationMetrics>,
    pub collapse: Vec<CollapseRecord>,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    (m, v.sqrt())
}

impl Trainer {
    pub fn new(setup: TrainSetup) -> Result<Self> {
        setup.meta.validate()?;
        let setup_hash = setup.hash()?;
        let tasks = TaskSet::new(setup.env, setup.meta.n_train_tasks, setup.meta.n_test_tasks)?;
        let probe = setup.env_config.build(setup.env)?;
        let mut rng = ChaCha8Rng::seed_from_u64(setup.seed);
        let agent = PearlAgent::new(probe.obs_dim(), probe.act_dim(), &setup.meta, &mut rng)?;
        let opts = PearlOptimizers::new(&agent, &setup.meta.sac);
        let buffers = tasks
            .train
            .iter()
            .map(|t| TaskBuffer::new(t.seed, setup.meta.buffer_capacity, setup.meta.recent_window))
            .collect::<Result<_>>()?;
        log::info!(
            "{} on {}: {} parameters, {} train / {} test tasks",
            setup.meta.variant.label(),
            setup.env.key(),
            super::parameter_count(&agent),
            tasks.train.len(),
            tasks.test.len()
        );
        Ok(Trainer {
            magic: CHECKPOINT_MAGIC.into(),
            setup,
            setup_hash,
            tasks,
            agent,
            opts,
            buffers,
            rng,
            iteration: 0,
            env_steps: 0,
            history: Vec::new(),
            collapse: Vec::new(),
        })
    }

    pub fn config(&self) -> &MetaRunConfig {
        &self.setup.meta
    }

    pub fn is_done(&self) -> bool {
        self.env_steps >= self.setup.meta.total_env_steps
    }

    /// Collection on the chosen tasks, then updates, then (on evaluation
    /// iterations) test-task adaptation and collapse probes.
    pub fn run_iteration(&mut self) -> Result<()> {
        let cfg = self.setup.meta.clone();
        let n_train = self.buffers.len();
        let mut selected = vec![self.iteration == 0; n_train];
        if self.iteration > 0 {
            for i in rand::seq::index::sample(&mut self.rng, n_train, cfg.tasks_per_collection.min(n_train)) {
                selected[i] = true;
            }
        }
        let (seed, it) = (self.setup.seed, self.iteration);
        let env_config = &self.setup.env_config;
        let env_kind = self.setup.env;
        let agent = &self.agent;
        let tasks = &self.tasks.train;
        let appended: Vec<usize> = self
            .buffers
            .par_iter_mut()
            .enumerate()
            .filter(|(i, _)| selected[*i])
            .map(|(i, buf)| {
                let mut env = env_config.build(env_kind)?;
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[seed, STREAM_COLLECT, it, i as u64]));
                collect_for_task(&tasks[i], buf, agent, env.as_mut(), &cfg, &mut rng)
            })
            .collect::<Result<_>>()?;
        self.env_steps += appended.iter().sum::<usize>() as u64;

        let mut records = Vec::with_capacity(cfg.updates_per_iter);
        for _ in 0..cfg.updates_per_iter {
            records.push(meta_train_step(&mut self.agent, &mut self.opts, &self.buffers, &cfg, &mut self.rng)?);
        }
        let losses = average_losses(&records);

        self.iteration += 1;
        if self.iteration % cfg.eval_interval as u64 == 0 || self.is_done() {
            let results = self.evaluate(&self.tasks.test, derive_seed(&[seed, STREAM_EVAL, self.iteration]))?;
            let adapted: Vec<f64> = results.iter().map(|r| r.adapted_return).collect();
            let explored: Vec<f64> = results.iter().map(|r| r.exploration_return).collect();
            let (mean, std) = mean_std(&adapted);
            let probe_idx = probe_task_indices(n_train);
            let probes: Vec<&TaskBuffer> = probe_idx.iter().map(|&i| &self.buffers[i]).collect();
            let mut prng = ChaCha8Rng::seed_from_u64(derive_seed(&[seed, STREAM_PROBE, self.iteration]));
            let rec = record_collapse_metrics(&self.agent.encoder, &probes, cfg.context_size, self.iteration, self.env_steps, &mut prng)?;
            log::info!(
                "iter {} steps {}: test return {mean:.2} ± {std:.2}, critic {:.4}, kl {:.4}",
                self.iteration,
                self.env_steps,
                losses.critic,
                losses.kl
            );
            self.history.push(IterationMetrics {
                iteration: self.iteration,
                env_steps: self.env_steps,
                mean_test_return: mean,
                std_test_return: std,
                mean_exploration_return: mean_std(&explored).0,
                per_dim_kl: rec.per_dim_kl.clone(),
                per_dim_var: rec.per_dim_posterior_var.clone(),
                losses,
            });
            self.collapse.push(rec);
        }
        Ok(())
    }

    /// Meta-test on every task of `tasks`, each with its own derived stream.
    pub fn evaluate(&self, tasks: &[TaskSpec], seed: u64) -> Result<Vec<AdaptationResult>> {
        let cfg = &self.setup.meta;
        tasks
            .par_iter()
            .enumerate()
            .map(|(j, task)| {
                let mut env = self.setup.env_config.build(self.setup.env)?;
                let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[seed, j as u64]));
                meta_test(task, &self.agent, env.as_mut(), cfg, &mut rng)
            })
            .collect()
    }

    /// Runs iterations until the step budget is spent, calling `on_eval`
    /// after each evaluation iteration (used for checkpointing).
    pub fn train<F>(&mut self, mut on_eval: F) -> Result<()>
    where
        F: FnMut(&Trainer) -> Result<()>,
    {
        while !self.is_done() {
            let before = self.history.len();
            self.run_iteration()?;
            if self.history.len() > before {
                on_eval(self)?;
            }
        }
        Ok(())
    }

    /// Draws a value from the trainer's stream; exposed for tests of the
    /// checkpointed generator state.
    pub fn next_u64(&mut self) -> u64 {
        self.rng.random()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        ciborium::into_writer(self, &mut out).map_err(|e| Error::Checkpoint(e.to_string()))?;
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let t: Trainer = ciborium::from_reader(bytes).map_err(|e| Error::Checkpoint(e.to_string()))?;
        if t.magic != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint(format!("unrecognized checkpoint format `{}`", t.magic)));
        }
        Ok(t)
    }

    /// Atomic write via a sibling temporary file.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, self.to_bytes()?)?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    /// Loads a checkpoint and checks that it was produced by `setup`. The
    /// budget of `setup` replaces the stored one.
    pub fn resume(path: &Path, setup: &TrainSetup) -> Result<Self> {
        let mut t = Self::load(path)?;
        let expected = setup.hash()?;
        if t.setup_hash != expected {
            return Err(Error::Checkpoint(format!(
                "checkpoint was written by a different configuration (hash {} vs {})",
                &t.setup_hash[..12],
                &expected[..12]
            )));
        }
        t.setup.meta.total_env_steps = setup.meta.total_env_steps;
        Ok(t)
    }

    pub fn metrics_csv(&self) -> String {
        metrics_csv(&self.history, self.agent.latent_dim())
    }
}

fn average_losses(records: &[LossRecord]) -> LossRecord {
    let Some(first) = records.first() else {
        return LossRecord::default();
    };
    let n = records.len() as f64;
    let avg = |f: &dyn Fn(&LossRecord) -> f64| records.iter().map(f).sum::<f64>() / n;
    let avg_vec = |f: &dyn Fn(&LossRecord) -> &Vec<f64>| {
        (0..f(first).len())
            .map(|i| records.iter().map(|r| f(r)[i]).sum::<f64>() / n)
            .collect()
    };
    LossRecord {
        critic: avg(&|r| r.critic),
        actor: avg(&|r| r.actor),
        kl: avg(&|r| r.kl),
        encoder: avg(&|r| r.encoder),
        per_dim_kl: avg_vec(&|r| &r.per_dim_kl),
        per_dim_var: avg_vec(&|r| &r.per_dim_var),
    }
}

pub fn metrics_header(d: usize) -> String {
    let mut h = String::from("iter,env_steps,mean_test_return,std_test_return,mean_exploration_return");
    for i in 0..d {
        let _ = write!(h, ",kl_{}", i + 1);
    }
    for i in 0..d {
        let _ = write!(h, ",var_{}", i + 1);
    }
    h.push_str(",critic_loss,actor_loss,kl_loss,encoder_loss");
    h
}

/// Metrics CSV with a schema comment line and a header row. Values are
/// written with full round-trip precision.
pub fn metrics_csv(history: &[IterationMetrics], d: usize) -> String {
    let mut out = format!("{METRICS_SCHEMA}\n{}\n", metrics_header(d));
    for m in history {
        let _ = write!(
            out,
            "{},{},{},{},{}",
            m.iteration, m.env_steps, m.mean_test_return, m.std_test_return, m.mean_exploration_return
        );
        for v in m.per_dim_kl.iter().chain(&m.per_dim_var) {
            let _ = write!(out, ",{v}");
        }
        let _ = writeln!(out, ",{},{},{},{}", m.losses.critic, m.losses.actor, m.losses.kl, m.losses.encoder);
    }
    out
}

/// One parsed metrics row: iteration, env steps and the named columns.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl MetricsTable {
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let first = lines.next().ok_or_else(|| Error::Config("empty metrics file".into()))?;
        if first != METRICS_SCHEMA {
            return Err(Error::Config(format!("unsupported metrics schema line `{first}`")));
        }
        let header = lines.next().ok_or_else(|| Error::Config("metrics file lacks a header".into()))?;
        let columns: Vec<String> = header.split(',').map(str::to_owned).collect();
        let mut rows = Vec::new();
        for (n, line) in lines.enumerate() {
            let row = line
                .split(',')
                .map(|v| v.parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::Config(format!("metrics row {}: {e}", n + 1)))?;
            if row.len() != columns.len() {
                return Err(Error::Config(format!("metrics row {} has {} fields, expected {}", n + 1, row.len(), columns.len())));
            }
            rows.push(row);
        }
        Ok(MetricsTable { columns, rows })
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let i = self.columns.iter().position(|c| c == name)?;
        Some(self.rows.iter().map(|r| r[i]).collect())
    }

    pub fn latent_dim(&self) -> usize {
        self.columns.iter().filter(|c| c.starts_with("kl_") && c[3..].parse::<usize>().is_ok()).count()
    }
}
