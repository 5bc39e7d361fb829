//! Off-policy meta-training with a probabilistic task encoder, the
//! meta-test adaptation protocol, and the per-task SAC baseline.

mod buffer;
pub mod trainer;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

pub use buffer::{TaskBuffer, TaskSample};

use crate::autodiff::{bind, collect_grads, Adam, Graph, Parameters, Tensor};
use crate::encoder::{kl_to_prior_graph, product_of_gaussians_graph, sample_latent, sample_latent_graph, TaskEncoder, Transition};
use crate::env::Environment;
use crate::error::{Error, Result};
use crate::sac::{
    actor_loss, critic_loss, encoder_loss, sac_update, PolicyNoise, SacBatch, SacConfig, SacNetworks, SacOptimizers,
    TaskCodeHead, Variant,
};
use crate::tasks::{evaluate_task_reward, TaskSpec};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetaRunConfig {
    pub variant: Variant,
    pub n_train_tasks: usize,
    pub n_test_tasks: usize,
    pub adaptation_steps: usize,
    pub episode_length: usize,
    /// Trajectories collected per task in each collection round.
    pub trajectories_per_task: usize,
    /// Training tasks visited per collection round after the first, which
    /// visits every task.
    pub tasks_per_collection: usize,
    pub context_size: usize,
    pub meta_batch: usize,
    pub updates_per_iter: usize,
    pub total_env_steps: u64,
    pub seeds: usize,
    pub latent_dim: usize,
    pub rbf_k: usize,
    pub rbf_interval: [f64; 2],
    pub kl_weight: f64,
    pub buffer_capacity: usize,
    pub recent_window: usize,
    pub encoder_hidden: usize,
    pub encoder_depth: usize,
    /// Iterations between test evaluations and checkpoints.
    pub eval_interval: usize,
    pub gradient_steps_per_obs: usize,
    pub baseline_observations: usize,
    pub sac: SacConfig,
}

impl Default for MetaRunConfig {
    fn default() -> Self {
        MetaRunConfig {
            variant: Variant::RbfPearl,
            n_train_tasks: 100,
            n_test_tasks: 20,
            adaptation_steps: 200,
            episode_length: 200,
            trajectories_per_task: 2,
            tasks_per_collection: 5,
            context_size: 64,
            meta_batch: 8,
            updates_per_iter: 500,
            total_env_steps: 1_600_000,
            seeds: 5,
            latent_dim: 3,
            rbf_k: 9,
            rbf_interval: [-5.0, 5.0],
            kl_weight: 0.1,
            buffer_capacity: 100_000,
            recent_window: 400,
            encoder_hidden: 200,
            encoder_depth: 3,
            eval_interval: 1,
            gradient_steps_per_obs: 25,
            baseline_observations: 200,
            sac: SacConfig::default(),
        }
    }
}

impl MetaRunConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("n_train_tasks", self.n_train_tasks),
            ("n_test_tasks", self.n_test_tasks),
            ("adaptation_steps", self.adaptation_steps),
            ("episode_length", self.episode_length),
            ("trajectories_per_task", self.trajectories_per_task),
            ("tasks_per_collection", self.tasks_per_collection),
            ("context_size", self.context_size),
            ("meta_batch", self.meta_batch),
            ("seeds", self.seeds),
            ("latent_dim", self.latent_dim),
            ("rbf_k", self.rbf_k),
            ("buffer_capacity", self.buffer_capacity),
            ("recent_window", self.recent_window),
            ("encoder_hidden", self.encoder_hidden),
            ("encoder_depth", self.encoder_depth),
            ("eval_interval", self.eval_interval),
            ("baseline_observations", self.baseline_observations),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if self.recent_window < self.context_size {
            return Err(Error::Config("recent_window must hold at least context_size transitions".into()));
        }
        if !(self.kl_weight >= 0.0 && self.kl_weight.is_finite()) {
            return Err(Error::Config("kl_weight must be non-negative".into()));
        }
        if !(self.rbf_interval[0] < self.rbf_interval[1]) {
            return Err(Error::Config("rbf_interval must be increasing".into()));
        }
        self.sac.validate()
    }
}

/// Mixes integers into one seed (SplitMix64 finalizer over a running hash).
pub fn derive_seed(parts: &[u64]) -> u64 {
    let mut h: u64 = 0x9E37_79B9_7F4A_7C15;
    for &p in parts {
        h ^= p;
        h = h.wrapping_add(0x9E37_79B9_7F4A_7C15);
        h = (h ^ (h >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        h = (h ^ (h >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        h ^= h >> 31;
    }
    h
}

fn standard_normals<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// Task encoder plus task-conditioned actor and critics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PearlAgent {
    pub variant: Variant,
    pub encoder: TaskEncoder,
    pub nets: SacNetworks,
}

impl PearlAgent {
    pub fn new<R: Rng + ?Sized>(obs_dim: usize, act_dim: usize, config: &MetaRunConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let d = config.latent_dim;
        let encoder = TaskEncoder::new(obs_dim, act_dim, d, config.encoder_hidden, config.encoder_depth, rng)?;
        let interval = (config.rbf_interval[0], config.rbf_interval[1]);
        let head = TaskCodeHead::for_variant(config.variant, d, config.rbf_k, interval, rng)?;
        let nets = SacNetworks::new(obs_dim, act_dim, Some(head), &config.sac, rng)?;
        Ok(PearlAgent {
            variant: config.variant,
            encoder,
            nets,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.encoder.latent_dim()
    }

    /// Posterior sample given a context, or a prior sample when it is empty.
    pub fn sample_z<R: Rng + ?Sized>(&self, context: &[&Transition], rng: &mut R) -> Result<Vec<f64>> {
        let noise = standard_normals(self.latent_dim(), rng);
        if context.is_empty() {
            return Ok(noise);
        }
        let owned: Vec<Transition> = context.iter().map(|t| (*t).clone()).collect();
        let post = self.encoder.posterior(&owned)?;
        Ok(sample_latent(&post, &noise))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PearlOptimizers {
    pub encoder: Adam,
    pub sac: SacOptimizers,
}

impl PearlOptimizers {
    pub fn new(agent: &PearlAgent, config: &SacConfig) -> Self {
        PearlOptimizers {
            encoder: Adam::new(config.optimizer, &agent.encoder),
            sac: SacOptimizers::new(&agent.nets, config.optimizer),
        }
    }
}

/// Transitions and return of one rollout. A fault from the environment ends
/// the rollout early and is kept alongside the partial data.
#[derive(Debug)]
pub struct Rollout {
    pub transitions: Vec<Transition>,
    pub ret: f64,
    pub fault: Option<Error>,
}

/// Runs `steps` environment steps conditioned on a fixed task code. The
/// environment is reset with `reset_seed` first and again every
/// `episode_length` steps with derived seeds. With `noise_rng` the policy
/// samples actions; without it the policy acts with its mean.
#[allow(clippy::too_many_arguments)]
pub fn rollout<R: Rng + ?Sized>(
    env: &mut dyn Environment,
    task: &TaskSpec,
    nets: &SacNetworks,
    code: &[f64],
    steps: usize,
    episode_length: usize,
    reset_seed: u64,
    mut noise_rng: Option<&mut R>,
) -> Rollout {
    let mut transitions = Vec::with_capacity(steps);
    let mut ret = 0.0;
    let mut obs = env.reset(reset_seed);
    for t in 0..steps {
        if t > 0 && t % episode_length == 0 {
            obs = env.reset(derive_seed(&[reset_seed, (t / episode_length) as u64]));
        }
        let noise = noise_rng.as_deref_mut().map(|r| standard_normals(nets.act_dim(), r));
        let step = nets
            .act(&obs, code, noise.as_deref())
            .and_then(|a| env.step(&a).map(|s| (a, s)))
            .and_then(|(a, s)| evaluate_task_reward(task, &s.components).map(|r| (a, s, r)));
        let (a, s, r) = match step {
            Ok(v) => v,
            Err(e) => {
                return Rollout {
                    transitions,
                    ret,
                    fault: Some(e),
                }
            }
        };
        ret += r;
        transitions.push(Transition {
            s: std::mem::replace(&mut obs, s.obs.clone()),
            a,
            r,
            s_next: s.obs,
        });
    }
    Rollout {
        transitions,
        ret,
        fault: None,
    }
}

/// Collects the configured number of trajectories for one task. Each
/// trajectory is conditioned on a latent sampled from the posterior of a
/// context drawn from the task's buffer, or from the prior while the buffer
/// is empty. Returns the number of transitions appended.
pub fn collect_for_task<R: Rng + ?Sized>(
    task: &TaskSpec,
    buffer: &mut TaskBuffer,
    agent: &PearlAgent,
    env: &mut dyn Environment,
    config: &MetaRunConfig,
    rng: &mut R,
) -> Result<usize> {
    if buffer.task_id() != task.seed {
        return Err(Error::Usage(format!("buffer of task {} used for task {}", buffer.task_id(), task.seed)));
    }
    env.set_task(task)?;
    buffer.begin_round();
    let mut appended = 0;
    for _ in 0..config.trajectories_per_task {
        let z = {
            let context = buffer.sample_context(config.context_size, rng);
            agent.sample_z(&context.transitions, rng)?
        };
        let code = agent.nets.task_code(&z)?;
        let reset_seed = rng.random();
        let out = rollout(
            env,
            task,
            &agent.nets,
            &code,
            config.episode_length,
            config.episode_length,
            reset_seed,
            Some(&mut *rng),
        );
        if let Some(e) = &out.fault {
            log::warn!("task {}: trajectory aborted after {} steps: {e}", task.seed, out.transitions.len());
        }
        appended += out.transitions.len();
        for t in out.transitions {
            buffer.push(t);
        }
    }
    Ok(appended)
}

/// Scalars from one meta-training update.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub critic: f64,
    pub actor: f64,
    /// Mean over tasks of the summed per-dimension KL.
    pub kl: f64,
    /// `critic + kl_weight * kl`.
    pub encoder: f64,
    pub per_dim_kl: Vec<f64>,
    pub per_dim_var: Vec<f64>,
}

/// The tensors a meta-training update consumes, sampled from the buffers.
#[derive(Clone, Debug, PartialEq)]
pub struct MetaBatch {
    pub task_ids: Vec<u64>,
    pub contexts: Tensor,
    pub batch: SacBatch,
    pub latent_noise: Tensor,
    pub policy_noise: PolicyNoise,
}

impl MetaBatch {
    pub fn sample<R: Rng + ?Sized>(buffers: &[TaskBuffer], agent: &PearlAgent, config: &MetaRunConfig, rng: &mut R) -> Result<Self> {
        if buffers.is_empty() {
            return Err(Error::NotReady("no task buffers".into()));
        }
        if let Some(b) = buffers.iter().find(|b| b.recent_len() < config.context_size) {
            return Err(Error::NotReady(format!(
                "task {} has {} recent transitions, {} needed",
                b.task_id(),
                b.recent_len(),
                config.context_size
            )));
        }
        let n_tasks = config.meta_batch.min(buffers.len());
        let chosen = rand::seq::index::sample(rng, buffers.len(), n_tasks).into_vec();
        let mut task_ids = Vec::with_capacity(n_tasks);
        let mut context_rows = Vec::new();
        let mut batch_rows = Vec::new();
        for &i in &chosen {
            let buf = &buffers[i];
            let ctx = buf.sample_recent(config.context_size, rng)?;
            let batch = buf.sample_all(config.sac.batch_size, rng)?;
            assert!(ctx.task_id == buf.task_id() && batch.task_id == buf.task_id());
            task_ids.push(buf.task_id());
            context_rows.extend(ctx.transitions.iter().map(|t| t.to_input()));
            batch_rows.extend(batch.transitions);
        }
        let d = agent.latent_dim();
        let latent_noise = Tensor::from_vec(n_tasks, d, standard_normals(n_tasks * d, rng))?;
        let policy_noise = PolicyNoise::sample(batch_rows.len(), agent.nets.act_dim(), rng);
        Ok(MetaBatch {
            task_ids,
            contexts: Tensor::from_rows(&context_rows)?,
            batch: SacBatch::from_transitions(batch_rows)?,
            latent_noise,
            policy_noise,
        })
    }
}

/// Loss terms recorded on a graph, before any parameter update.
pub struct MetaLosses {
    pub critic: crate::autodiff::Var,
    pub actor: crate::autodiff::Var,
    pub kl: crate::autodiff::Var,
    pub encoder: crate::autodiff::Var,
    pub total: crate::autodiff::Var,
    pub per_dim_kl: crate::autodiff::Var,
    pub post_var: crate::autodiff::Var,
}

/// Records every loss for a meta-batch. The latent enters the critic loss
/// attached (so the encoder learns from it) and the actor loss detached.
pub fn meta_losses(
    g: &mut Graph,
    agent: &PearlAgent,
    encoder_params: &[crate::autodiff::Var],
    bound: &crate::sac::BoundSac,
    mb: &MetaBatch,
    config: &MetaRunConfig,
) -> Result<MetaLosses> {
    let n_tasks = mb.task_ids.len();
    let rows_per_task = mb.batch.len() / n_tasks;
    let ctx = g.constant(mb.contexts.clone());
    let (means, vars) = agent.encoder.factors_graph(g, encoder_params, ctx)?;
    let (post_mean, post_var) = product_of_gaussians_graph(g, means, vars, config.context_size)?;
    let z = sample_latent_graph(g, post_mean, post_var, &mb.latent_noise)?;
    let per_dim_kl = kl_to_prior_graph(g, post_mean, post_var)?;
    let kl_sum = g.sum(per_dim_kl);
    let kl = g.scale(kl_sum, 1.0 / n_tasks as f64);
    let rows: Vec<usize> = (0..n_tasks).flat_map(|i| std::iter::repeat_n(i, rows_per_task)).collect();
    let z_rows = g.gather_rows(z, &rows)?;
    let vars_b = mb.batch.bind(g);
    let critic = critic_loss(g, &agent.nets, bound, &vars_b, Some(z_rows), &mb.policy_noise.next, &config.sac)?;
    let actor = actor_loss(g, &agent.nets, bound, vars_b.obs, Some(z_rows), &mb.policy_noise.current, &config.sac)?;
    let encoder = encoder_loss(g, critic, kl, config.kl_weight)?;
    let total = g.add(encoder, actor)?;
    Ok(MetaLosses {
        critic,
        actor,
        kl,
        encoder,
        total,
        per_dim_kl,
        post_var,
    })
}

fn column_means(t: &Tensor) -> Vec<f64> {
    (0..t.cols())
        .map(|j| (0..t.rows()).map(|i| t.get(i, j)).sum::<f64>() / t.rows() as f64)
        .collect()
}

/// One meta-training update on a meta-batch sampled from `buffers`:
/// encoder, critics, actor and task-code head are stepped together, then
/// the targets move.
pub fn meta_train_step<R: Rng + ?Sized>(
    agent: &mut PearlAgent,
    opts: &mut PearlOptimizers,
    buffers: &[TaskBuffer],
    config: &MetaRunConfig,
    rng: &mut R,
) -> Result<LossRecord> {
    let mb = MetaBatch::sample(buffers, agent, config, rng)?;
    meta_train_on(agent, opts, &mb, config)
}

/// The update of [`meta_train_step`] on an explicit meta-batch.
pub fn meta_train_on(agent: &mut PearlAgent, opts: &mut PearlOptimizers, mb: &MetaBatch, config: &MetaRunConfig) -> Result<LossRecord> {
    let mut g = Graph::new();
    let enc_params = bind(&mut g, &agent.encoder, true);
    let bound = agent.nets.bind(&mut g);
    let losses = meta_losses(&mut g, agent, &enc_params, &bound, mb, config)?;
    g.backward(losses.total)?;
    let record = LossRecord {
        critic: g.value(losses.critic).item(),
        actor: g.value(losses.actor).item(),
        kl: g.value(losses.kl).item(),
        encoder: g.value(losses.encoder).item(),
        per_dim_kl: column_means(g.value(losses.per_dim_kl)),
        per_dim_var: column_means(g.value(losses.post_var)),
    };
    let enc_grads = collect_grads(&g, &enc_params);
    opts.encoder.check(&agent.encoder, &enc_grads)?;
    opts.sac.step(&mut agent.nets, &g, &bound)?;
    opts.encoder.step(&mut agent.encoder, &enc_grads)?;
    agent.nets.soft_update_targets(config.sac.tau);
    Ok(record)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdaptationResult {
    pub exploration_return: f64,
    pub adapted_return: f64,
    pub z_hat: Vec<f64>,
    pub context_len: usize,
}

/// Meta-test protocol: explore for `adaptation_steps` steps with a latent
/// drawn from the prior, estimate the task latent from that context, then
/// run one episode conditioned on the estimate. Both phases start from the
/// same reset seed and act with the policy mean.
pub fn meta_test<R: Rng + ?Sized>(
    task: &TaskSpec,
    agent: &PearlAgent,
    env: &mut dyn Environment,
    config: &MetaRunConfig,
    rng: &mut R,
) -> Result<AdaptationResult> {
    env.set_task(task)?;
    let reset_seed: u64 = rng.random();
    let z_e = standard_normals(agent.latent_dim(), rng);
    let code = agent.nets.task_code(&z_e)?;
    let explore = rollout::<R>(
        env,
        task,
        &agent.nets,
        &code,
        config.adaptation_steps,
        config.episode_length,
        reset_seed,
        None,
    );
    if let Some(e) = explore.fault {
        return Err(e);
    }
    let z_hat = agent.encoder.posterior_mean_estimate(&explore.transitions)?;
    let code = agent.nets.task_code(&z_hat)?;
    let adapted = rollout::<R>(
        env,
        task,
        &agent.nets,
        &code,
        config.episode_length,
        config.episode_length,
        reset_seed,
        None,
    );
    if let Some(e) = adapted.fault {
        return Err(e);
    }
    Ok(AdaptationResult {
        exploration_return: explore.ret,
        adapted_return: adapted.ret,
        z_hat,
        context_len: explore.transitions.len(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineResult {
    pub ret: f64,
    pub transitions_used: usize,
    pub updates: usize,
}

/// Per-task SAC trained only on `baseline_observations` transitions with
/// `gradient_steps_per_obs` updates after each one, then evaluated for one
/// episode with the policy mean.
pub fn run_sac200_baseline<R: Rng + ?Sized>(
    task: &TaskSpec,
    env: &mut dyn Environment,
    config: &MetaRunConfig,
    rng: &mut R,
) -> Result<BaselineResult> {
    env.set_task(task)?;
    let mut nets = SacNetworks::new(env.obs_dim(), env.act_dim(), None, &config.sac, rng)?;
    let mut opts = SacOptimizers::new(&nets, config.sac.optimizer);
    let cap = config.baseline_observations;
    let mut buffer: Vec<Transition> = Vec::with_capacity(cap);
    let mut updates = 0;
    let reset_seed: u64 = rng.random();
    let mut obs = env.reset(reset_seed);
    let mut t = 0;
    while buffer.len() < cap {
        if t > 0 && t % config.episode_length == 0 {
            obs = env.reset(derive_seed(&[reset_seed, (t / config.episode_length) as u64]));
        }
        let noise = standard_normals(nets.act_dim(), rng);
        let a = nets.act(&obs, &[], Some(&noise))?;
        let s = env.step(&a)?;
        let r = evaluate_task_reward(task, &s.components)?;
        buffer.push(Transition {
            s: std::mem::replace(&mut obs, s.obs.clone()),
            a,
            r,
            s_next: s.obs,
        });
        assert!(buffer.len() <= cap);
        t += 1;
        for _ in 0..config.gradient_steps_per_obs {
            let batch = SacBatch::from_transitions((0..config.sac.batch_size).map(|_| &buffer[rng.random_range(0..buffer.len())]))?;
            sac_update(&mut nets, &mut opts, &batch, &config.sac, rng)?;
            updates += 1;
        }
    }
    let eval_seed: u64 = rng.random();
    let out = rollout::<R>(env, task, &nets, &[], config.episode_length, config.episode_length, eval_seed, None);
    if let Some(e) = out.fault {
        return Err(e);
    }
    Ok(BaselineResult {
        ret: out.ret,
        transitions_used: buffer.len(),
        updates,
    })
}

/// Settings of a plain single-task SAC run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SacRunConfig {
    pub total_steps: usize,
    /// Uniform random actions before the policy takes over.
    pub random_steps: usize,
    pub updates_per_step: usize,
    pub eval_interval: usize,
    pub eval_episodes: usize,
    pub episode_length: usize,
    pub sac: SacConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SacRun {
    /// `(environment steps, mean deterministic evaluation return)`.
    pub curve: Vec<(usize, f64)>,
    pub env_steps: usize,
}

/// Mean return of uniformly random actions over `episodes` episodes.
pub fn random_policy_return<R: Rng + ?Sized>(
    task: &TaskSpec,
    env: &mut dyn Environment,
    episodes: usize,
    episode_length: usize,
    rng: &mut R,
) -> Result<f64> {
    env.set_task(task)?;
    let mut total = 0.0;
    for _ in 0..episodes {
        env.reset(rng.random());
        for _ in 0..episode_length {
            let a: Vec<f64> = (0..env.act_dim()).map(|_| rng.random_range(-1.0..=1.0)).collect();
            total += evaluate_task_reward(task, &env.step(&a)?.components)?;
        }
    }
    Ok(total / episodes as f64)
}

/// Plain SAC on one task with a replay buffer of every transition. After
/// each evaluation `stop` sees the curve so far and may end the run early.
pub fn train_sac_on_task<R, F>(
    task: &TaskSpec,
    env: &mut dyn Environment,
    config: &SacRunConfig,
    rng: &mut R,
    mut stop: F,
) -> Result<SacRun>
where
    R: Rng + ?Sized,
    F: FnMut(&[(usize, f64)]) -> bool,
{
    env.set_task(task)?;
    let mut nets = SacNetworks::new(env.obs_dim(), env.act_dim(), None, &config.sac, rng)?;
    let mut opts = SacOptimizers::new(&nets, config.sac.optimizer);
    let mut eval_env_seed: u64 = rng.random();
    let mut buffer: Vec<Transition> = Vec::with_capacity(config.total_steps);
    let mut curve = Vec::new();
    let mut obs = env.reset(rng.random());
    for t in 1..=config.total_steps {
        let a: Vec<f64> = if t <= config.random_steps {
            (0..env.act_dim()).map(|_| rng.random_range(-1.0..=1.0)).collect()
        } else {
            let noise = standard_normals(nets.act_dim(), rng);
            nets.act(&obs, &[], Some(&noise))?
        };
        let s = env.step(&a)?;
        let r = evaluate_task_reward(task, &s.components)?;
        buffer.push(Transition {
            s: std::mem::replace(&mut obs, s.obs.clone()),
            a,
            r,
            s_next: s.obs,
        });
        if t % config.episode_length == 0 {
            obs = env.reset(rng.random());
        }
        if buffer.len() >= config.sac.batch_size {
            for _ in 0..config.updates_per_step {
                let batch = SacBatch::from_transitions((0..config.sac.batch_size).map(|_| &buffer[rng.random_range(0..buffer.len())]))?;
                sac_update(&mut nets, &mut opts, &batch, &config.sac, rng)?;
            }
        }
        if t % config.eval_interval == 0 {
            let mut total = 0.0;
            for _ in 0..config.eval_episodes {
                eval_env_seed = derive_seed(&[eval_env_seed]);
                let out = rollout::<R>(env, task, &nets, &[], config.episode_length, config.episode_length, eval_env_seed, None);
                if let Some(e) = out.fault {
                    return Err(e);
                }
                total += out.ret;
            }
            curve.push((t, total / config.eval_episodes as f64));
            obs = env.reset(rng.random());
            if stop(&curve) {
                return Ok(SacRun { curve, env_steps: t });
            }
        }
    }
    Ok(SacRun {
        curve,
        env_steps: config.total_steps,
    })
}

/// Encoder-only parameter count plus SAC networks; used in logs.
pub fn parameter_count(agent: &PearlAgent) -> usize {
    agent.encoder.num_params()
        + agent.nets.actor.num_params()
        + agent.nets.critics.iter().map(|c| c.num_params()).sum::<usize>()
        + agent.nets.head.as_ref().map_or(0, |h| h.num_params())
}
